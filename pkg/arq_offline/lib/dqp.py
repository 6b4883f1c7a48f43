# -*- coding: UTF-8 -*-
"""
Direct Q-penalization on tabular MDPs.

A penalty p(s, a) >= 0 induces the policy pi_p = softmax(-p). Two exact
iteration schemes are implemented side by side:

* policy iteration with a KL(pi || pi_p) regularizer, and
* soft policy iteration on the penalized value Q - p with the entropy bonus
  and the log-normalizer Z(s) = ln sum_a exp(-p(s, a)).

They produce the same (Q, pi) sequence, which ``run_theorem1`` checks
numerically. Infinite penalties are ``INF`` and mean probability exactly 0;
every expectation treats 0 * inf as 0.
"""
from dataclasses import dataclass, field

import numpy as np
import ujson
from scipy.spatial.distance import cdist
from scipy.special import entr, logsumexp, rel_entr, softmax
from vlab_api_common import get_logger

from arq_offline.lib import const
from arq_offline.lib.errors import ContractViolation

logger = get_logger(__name__, loglevel=const.ARQ_LOG_LEVEL)

INF = float('inf')
PENALTY_KINDS = ('support_set', 'brac_kl', 'mmd2')
STOCHASTIC_TOL = 1e-12


@dataclass(frozen=True, eq=False)
class TabularMDP:
    transitions: np.ndarray
    rewards: np.ndarray
    gamma: float
    initial: np.ndarray

    def __post_init__(self):
        n_states, n_actions = self.rewards.shape
        if self.transitions.shape != (n_states, n_actions, n_states):
            raise ContractViolation('transition tensor must be (S, A, S), got {}'.format(self.transitions.shape))
        if np.any(self.transitions < 0) or np.max(np.abs(self.transitions.sum(axis=2) - 1.0)) > STOCHASTIC_TOL:
            raise ContractViolation('transition rows must be probability vectors')
        if not 0.0 <= self.gamma < 1.0:
            raise ContractViolation('gamma must lie in [0, 1), got {}'.format(self.gamma))
        if self.initial.shape != (n_states,) or abs(self.initial.sum() - 1.0) > STOCHASTIC_TOL:
            raise ContractViolation('initial distribution must sum to 1')

    @property
    def n_states(self):
        return self.rewards.shape[0]

    @property
    def n_actions(self):
        return self.rewards.shape[1]

    def backup(self, values, gamma=None):
        """r + gamma * E_{s'}[values(s')]"""
        gamma = self.gamma if gamma is None else gamma
        return self.rewards + gamma * (self.transitions @ values)


@dataclass(frozen=True, eq=False)
class PenaltySpec:
    kind: str
    table: np.ndarray
    params: dict = field(default_factory=dict)

    def __post_init__(self):
        if self.kind not in PENALTY_KINDS:
            raise ContractViolation('unknown penalty kind {!r}'.format(self.kind))
        if np.any(np.isnan(self.table)) or np.any(self.table == -INF):
            raise ContractViolation('penalties must be numbers or +inf')
        if np.any(self.table < 0):
            raise ContractViolation('penalties must be non-negative, got min {}'.format(np.min(self.table)))


@dataclass(frozen=True)
class Theorem1Report:
    q_gaps: tuple
    policy_gaps: tuple
    identity_residuals: tuple

    @property
    def max_residuals(self):
        return tuple(max(vals) for vals in zip(self.q_gaps, self.policy_gaps, self.identity_residuals))

    @property
    def max_residual(self):
        return max(self.max_residuals)


def support_penalty(log_beta, epsilon):
    """0 where beta(a|s) >= epsilon, INF otherwise

    :Returns: Float (or numpy.ndarray for array input)

    :param log_beta: ln beta(a|s)
    :type log_beta: Float or numpy.ndarray

    :param epsilon: Support threshold, must be positive
    :type epsilon: Float
    """
    if not epsilon > 0:
        raise ContractViolation('epsilon must be positive, got {}'.format(epsilon))
    inside = np.asarray(log_beta) >= np.log(epsilon)
    if np.ndim(inside) == 0:
        return 0.0 if inside else INF
    return np.where(inside, 0.0, INF)


def brac_kl_penalty(log_beta):
    """-ln beta(a|s)"""
    if np.ndim(log_beta) == 0:
        return -float(log_beta)
    return -np.asarray(log_beta, dtype=np.float64)


def mmd2_penalty(policy_samples, behavior_samples, bandwidth=const.DQP_MMD_BANDWIDTH):
    """Biased (V-statistic) squared MMD with a Gaussian kernel

    :Returns: Float

    :param policy_samples: ``(n, d)`` or ``(n,)`` draws from the policy
    :type policy_samples: numpy.ndarray

    :param behavior_samples: ``(m, d)`` or ``(m,)`` draws from the behavior policy
    :type behavior_samples: numpy.ndarray

    :param bandwidth: Kernel width sigma in ``exp(-|x - y|^2 / (2 sigma^2))``
    :type bandwidth: Float
    """
    x = np.asarray(policy_samples, dtype=np.float64)
    y = np.asarray(behavior_samples, dtype=np.float64)
    x = x.reshape(len(x), -1) if x.ndim < 2 else x
    y = y.reshape(len(y), -1) if y.ndim < 2 else y
    if not len(x) or not len(y):
        raise ContractViolation('MMD needs non-empty sample sets')
    if not bandwidth > 0:
        raise ContractViolation('bandwidth must be positive, got {}'.format(bandwidth))

    def _kernel_mean(a, b):
        return float(np.mean(np.exp(-cdist(a, b, 'sqeuclidean') / (2.0 * bandwidth ** 2))))

    return max(0.0, _kernel_mean(x, x) + _kernel_mean(y, y) - 2.0 * _kernel_mean(x, y))


def _check_rows(p):
    p = np.asarray(p, dtype=np.float64)
    finite_rows = np.any(np.isfinite(p), axis=-1)
    if not np.all(finite_rows):
        raise ContractViolation('every state needs at least one action with a finite penalty')
    return p


def induced_policy(p):
    """pi_p = softmax(-p) along the last axis; INF entries get probability exactly 0

    :Returns: numpy.ndarray shaped like ``p``

    :param p: Penalties for one state ``(A,)`` or a table ``(S, A)``
    :type p: numpy.ndarray
    """
    return softmax(-_check_rows(p), axis=-1)


def log_normalizer(p):
    """Z(s) = ln sum_a exp(-p(s, a))"""
    return logsumexp(-_check_rows(p), axis=-1)


def _expect(pi, values):
    """<pi, values> along the last axis with 0 * inf = 0"""
    with np.errstate(invalid='ignore'):
        terms = np.where(pi > 0, pi * values, 0.0)
    return terms.sum(axis=-1)


def kl_divergence(pi, pi_p):
    """KL(pi || pi_p) per state; mass where pi_p is 0 is a contract violation"""
    pi = np.asarray(pi, dtype=np.float64)
    if np.any((pi > 0) & (np.asarray(pi_p) == 0)):
        raise ContractViolation('policy puts mass on an action the induced policy excludes')
    return rel_entr(pi, pi_p).sum(axis=-1)


def entropy(pi):
    return entr(np.asarray(pi, dtype=np.float64)).sum(axis=-1)


def _check_policy(pi, shape):
    pi = np.asarray(pi, dtype=np.float64)
    if pi.shape != shape:
        raise ContractViolation('policy table must be {}, got {}'.format(shape, pi.shape))
    if np.any(pi < 0) or np.max(np.abs(pi.sum(axis=-1) - 1.0)) > 1e-9:
        raise ContractViolation('policy rows must be probability vectors')
    return pi


def kl_regularized_step(mdp, q, pi, pi_p, gamma=None):
    """One step of policy iteration regularized by KL(pi || pi_p)

    Q'(s,a) = r + gamma E_{s'}[<pi, Q>(s') - KL(pi(s') || pi_p(s'))] and
    pi'(s) proportional to pi_p(s) exp(Q'(s)).

    :Returns: Tuple (Q', pi')

    :param mdp: The MDP
    :type mdp: TabularMDP

    :param q: Current Q table ``(S, A)``
    :type q: numpy.ndarray

    :param pi: Current policy table
    :type pi: numpy.ndarray

    :param pi_p: Induced policy table
    :type pi_p: numpy.ndarray

    :param gamma: Overrides ``mdp.gamma``
    :type gamma: Float
    """
    shape = (mdp.n_states, mdp.n_actions)
    pi = _check_policy(pi, shape)
    pi_p = _check_policy(pi_p, shape)
    values = _expect(pi, q) - kl_divergence(pi, pi_p)
    new_q = mdp.backup(values, gamma)
    with np.errstate(divide='ignore'):
        new_pi = softmax(np.log(pi_p) + new_q, axis=-1)
    return new_q, new_pi


def penalized_soft_step(mdp, q, pi, p, gamma=None):
    """One step of soft policy iteration on Q - p

    Q'(s,a) = r + gamma E_{s'}[<pi, Q - p>(s') - Z(s') + H(pi(s'))] and
    pi'(s) proportional to exp(Q'(s) - p(s)).

    :Returns: Tuple (Q', pi')
    """
    shape = (mdp.n_states, mdp.n_actions)
    pi = _check_policy(pi, shape)
    p = _check_rows(p)
    values = _expect(pi, q - p) - log_normalizer(p) + entropy(pi)
    new_q = mdp.backup(values, gamma)
    return new_q, softmax(new_q - p, axis=-1)


def theorem1_sides(pi, q, p):
    """Both sides of <pi, Q> - KL(pi || pi_p) = <pi, Q - p> - Z + H(pi), per state

    :Returns: Tuple (lhs, rhs)
    """
    pi = np.asarray(pi, dtype=np.float64)
    q = np.asarray(q, dtype=np.float64)
    p = _check_rows(p)
    lhs = _expect(pi, q) - kl_divergence(pi, induced_policy(p))
    rhs = _expect(pi, q - p) - log_normalizer(p) + entropy(pi)
    return lhs, rhs


def theorem1_identity_check(pi, q, p):
    """Largest |lhs - rhs| over states

    :Returns: Float
    """
    lhs, rhs = theorem1_sides(pi, q, p)
    return float(np.max(np.abs(np.asarray(lhs) - np.asarray(rhs))))


def run_theorem1(mdp, p, iters, gamma=None):
    """Iterate both schemes from Q0 = 0, pi0 = pi_p and record how far apart they drift

    :Returns: Theorem1Report

    :param mdp: The MDP
    :type mdp: TabularMDP

    :param p: Penalty table ``(S, A)``
    :type p: numpy.ndarray

    :param iters: Number of iterations
    :type iters: Integer
    """
    if iters < 1:
        raise ContractViolation('iters must be at least 1')
    pi_p = induced_policy(p)
    q_kl = np.zeros((mdp.n_states, mdp.n_actions))
    q_soft = q_kl.copy()
    pi_kl, pi_soft = pi_p, pi_p.copy()
    q_gaps, policy_gaps, residuals = [], [], []
    for idx in range(iters):
        q_kl, pi_kl = kl_regularized_step(mdp, q_kl, pi_kl, pi_p, gamma)
        q_soft, pi_soft = penalized_soft_step(mdp, q_soft, pi_soft, p, gamma)
        q_gaps.append(float(np.max(np.abs(q_kl - q_soft))))
        policy_gaps.append(float(np.max(np.abs(pi_kl - pi_soft))))
        residuals.append(theorem1_identity_check(pi_kl, q_kl, p))
        logger.debug('iteration {}: |dQ| {:.3e} |dpi| {:.3e} identity {:.3e}'.format(
                     idx + 1, q_gaps[-1], policy_gaps[-1], residuals[-1]))
    return Theorem1Report(tuple(q_gaps), tuple(policy_gaps), tuple(residuals))


def soft_value_iteration(mdp, iters=10000, tol=1e-12, gamma=None):
    """Soft-optimal Q for the unpenalized problem (KL to the uniform policy)

    Q(s,a) = r + gamma E_{s'}[logsumexp Q(s') - ln |A|]
    """
    q = np.zeros((mdp.n_states, mdp.n_actions))
    for _ in range(iters):
        new_q = mdp.backup(logsumexp(q, axis=1) - np.log(mdp.n_actions), gamma)
        if np.max(np.abs(new_q - q)) < tol:
            return new_q
        q = new_q
    return q


def random_mdp(n_states, n_actions, seed, gamma=0.9):
    """Dense random MDP with uniform [0, 1] rewards

    :Returns: TabularMDP
    """
    if n_states < 1 or n_actions < 1:
        raise ContractViolation('need at least one state and one action')
    rng = np.random.default_rng(seed)
    transitions = rng.dirichlet(np.ones(n_states), size=(n_states, n_actions))
    transitions /= transitions.sum(axis=2, keepdims=True)
    rewards = rng.uniform(0.0, 1.0, size=(n_states, n_actions))
    initial = rng.dirichlet(np.ones(n_states))
    initial /= initial.sum()
    return TabularMDP(transitions, rewards, float(gamma), initial)


def random_penalty(n_states, n_actions, seed, scale=2.0):
    rng = np.random.default_rng(seed)
    return rng.uniform(0.0, scale, size=(n_states, n_actions))


def random_behavior(n_states, n_actions, seed, drop=0.3):
    """Random behavior table beta[s, a] with some actions never taken

    Each non-greedy action is dropped with probability ``drop``; the most
    likely action of every state always survives.
    """
    rng = np.random.default_rng(seed)
    beta = rng.dirichlet(np.ones(n_actions), size=n_states)
    keep = rng.uniform(size=beta.shape) >= drop
    keep[np.arange(n_states), np.argmax(beta, axis=1)] = True
    beta = np.where(keep, beta, 0.0)
    return beta / beta.sum(axis=1, keepdims=True)


def tabular_penalty(kind, n_states, n_actions, seed, log_epsilon=const.CACHE_LOG_EPSILON,
                    n_samples=const.DQP_MMD_SAMPLES, bandwidth=const.DQP_MMD_BANDWIDTH):
    """Penalty table of one ``kind`` for a random behavior policy

    ``random`` is uniform noise with no behavior policy behind it; the
    other kinds are built from ``random_behavior``, with ``mmd2`` comparing
    the uniform policy against it.

    :Returns: numpy.ndarray

    :param kind: ``random`` or one of ``PENALTY_KINDS``
    :type kind: String

    :param log_epsilon: Support threshold for ``support_set``
    :type log_epsilon: Float

    :param n_samples: Draws per state and side for ``mmd2``
    :type n_samples: Integer

    :param bandwidth: Gaussian kernel bandwidth for ``mmd2``
    :type bandwidth: Float
    """
    if kind == 'random':
        return random_penalty(n_states, n_actions, seed)
    if kind not in PENALTY_KINDS:
        raise ContractViolation('unknown penalty kind {!r}'.format(kind))
    beta = random_behavior(n_states, n_actions, seed)
    with np.errstate(divide='ignore'):
        log_beta = np.log(beta)
    if kind == 'support_set':
        spec = support_set_spec(log_beta, np.exp(log_epsilon))
    elif kind == 'brac_kl':
        spec = brac_kl_spec(log_beta)
    else:
        uniform = np.full((n_states, n_actions), 1.0 / n_actions)
        spec = mmd2_spec(uniform, beta, seed, n_samples=n_samples, bandwidth=bandwidth)
    logger.debug('{} penalty, {} infinite entries'.format(kind, int(np.sum(np.isinf(spec.table)))))
    return spec.table


def support_set_spec(log_beta, epsilon):
    return PenaltySpec('support_set', support_penalty(np.asarray(log_beta, dtype=np.float64), epsilon),
                       {'epsilon': float(epsilon)})


def brac_kl_spec(log_beta):
    return PenaltySpec('brac_kl', brac_kl_penalty(np.asarray(log_beta, dtype=np.float64)))


def mmd2_spec(pi, beta_table, seed, n_samples=const.DQP_MMD_SAMPLES, bandwidth=const.DQP_MMD_BANDWIDTH):
    """Per-state MMD^2 between one-hot action samples of pi and beta

    The penalty is a state-level quantity, so it is constant across actions.
    """
    rng = np.random.default_rng(seed)
    pi = np.asarray(pi, dtype=np.float64)
    beta_table = np.asarray(beta_table, dtype=np.float64)
    n_states, n_actions = pi.shape
    eye = np.eye(n_actions)
    table = np.zeros((n_states, n_actions))
    for state in range(n_states):
        from_pi = eye[rng.choice(n_actions, size=n_samples, p=pi[state])]
        from_beta = eye[rng.choice(n_actions, size=n_samples, p=beta_table[state])]
        table[state, :] = mmd2_penalty(from_pi, from_beta, bandwidth)
    return PenaltySpec('mmd2', table, {'n_samples': n_samples, 'bandwidth': bandwidth})


def save_mdp(mdp, path):
    with open(path, 'w') as the_file:
        the_file.write(ujson.dumps({'n_states': mdp.n_states,
                                    'n_actions': mdp.n_actions,
                                    'T': mdp.transitions.tolist(),
                                    'r': mdp.rewards.tolist(),
                                    'gamma': mdp.gamma,
                                    'd0': mdp.initial.tolist()}))


def load_mdp(path):
    with open(path) as the_file:
        try:
            raw = ujson.loads(the_file.read())
            mdp = TabularMDP(np.array(raw['T'], dtype=np.float64),
                             np.array(raw['r'], dtype=np.float64),
                             float(raw['gamma']),
                             np.array(raw['d0'], dtype=np.float64))
        except (KeyError, TypeError) as doh:
            raise ContractViolation('malformed MDP file {}: {}'.format(path, doh))
    if (mdp.n_states, mdp.n_actions) != (raw['n_states'], raw['n_actions']):
        raise ContractViolation('MDP file dimensions do not match its arrays')
    return mdp
