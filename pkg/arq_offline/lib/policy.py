# -*- coding: UTF-8 -*-
"""
Policy extraction from a trained critic, and rollout evaluation.

``ImplicitPolicy`` draws from a softmax over in-support candidate actions
(cached for dataset states, sampled from the score model elsewhere).
``AwrPolicy`` is an explicit tanh-squashed network fitted by
advantage-weighted regression. Anything with ``act(state, rng)`` returning
an env-space action can be evaluated.
"""
import hashlib
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field

import numpy as np
from scipy.special import softmax
from vlab_api_common import get_logger

from arq_offline.lib import const
from arq_offline.lib.dataset import ActionNormalizer
from arq_offline.lib.errors import ContractViolation, EnvStepError, NumericalFailure
from arq_offline.lib.nn import (adam_init, adam_step, load_checkpoint, mlp_backward, mlp_forward, policy_net,
                                quantize, save_checkpoint)
from arq_offline.lib.sampling import SamplerConfig, log_likelihood, pc_sample

logger = get_logger(__name__, loglevel=const.ARQ_LOG_LEVEL)

LOGIT_MODES = ('q_logits', 'advantage_logits')
HEADS = ('gaussian', 'deterministic')
LOG_STD_BOUNDS = (-5.0, 2.0)


def advantage(ensemble, state, candidates):
    """A(s, a) = Q(s, a) minus the mean Q over the candidates

    :Returns: numpy.ndarray, one value per candidate

    :param ensemble: The critic
    :type ensemble: arq_offline.lib.arq.QEnsemble

    :param state: The state
    :type state: numpy.ndarray

    :param candidates: ``(n, action_dim)`` model-space actions
    :type candidates: numpy.ndarray
    """
    candidates = np.atleast_2d(np.asarray(candidates, dtype=np.float64))
    if not candidates.shape[0]:
        raise ContractViolation('advantage needs at least one candidate')
    q_values = ensemble.q_values(state, candidates)
    return q_values - np.mean(q_values)


def _state_seed(seed, state):
    digest = hashlib.sha256(np.ascontiguousarray(state, dtype=np.float64).tobytes()).digest()
    return [int(seed), 5, int.from_bytes(digest[:8], 'little')]


@dataclass(eq=False)
class ImplicitPolicy:
    """Softmax over in-support candidates with temperature ``alpha``

    Candidates for a state that appears in ``dataset`` come from ``cache``;
    any other state is sampled with the score model and filtered at
    ``log_epsilon``. On-the-fly candidates depend only on (seed, state) and
    are memoized.
    """
    ensemble: object
    alpha: float = const.POLICY_ALPHA
    mode: str = const.POLICY_LOGITS
    score_model: object = None
    cache: object = None
    dataset: object = None
    sampler: SamplerConfig = field(default_factory=lambda: SamplerConfig(n_steps=const.POLICY_ROLLOUT_PC_STEPS))
    n_samples: int = const.CACHE_N_SAMPLES
    log_epsilon: float = const.CACHE_LOG_EPSILON
    seed: int = const.ARQ_DEFAULT_SEED
    _memo: dict = field(default_factory=dict, init=False, repr=False)
    _index: dict = field(default_factory=dict, init=False, repr=False)

    def __post_init__(self):
        if self.alpha < 0:
            raise ContractViolation('alpha must not be negative, got {}'.format(self.alpha))
        if self.mode not in LOGIT_MODES:
            raise ContractViolation('mode must be one of {}'.format(', '.join(LOGIT_MODES)))
        if self.cache is not None and self.dataset is not None:
            for row in range(len(self.dataset)):
                self._index.setdefault(self.dataset.states[row].tobytes(), (row, 's'))
            for row in range(len(self.dataset)):
                self._index.setdefault(self.dataset.next_states[row].tobytes(), (row, 's2'))

    @property
    def normalizer(self):
        if self.score_model is not None:
            return self.score_model.normalizer
        if self.ensemble.normalizer is not None:
            return self.ensemble.normalizer
        return ActionNormalizer.identity(self.ensemble.action_dim)

    def candidates(self, state):
        """Model-space candidate actions for ``state``"""
        state = np.asarray(state, dtype=np.float64)
        key = state.tobytes()
        if key in self._index:
            return self.cache.entry(*self._index[key]).actions
        if key not in self._memo:
            self._memo[key] = self._sample_candidates(state)
        return self._memo[key]

    def _sample_candidates(self, state):
        if self.score_model is None:
            raise ContractViolation('state {} is not cached and no score model is attached'.format(state.tolist()))
        rng = np.random.default_rng(_state_seed(self.seed, state))
        samples = np.clip(pc_sample(self.score_model, state, self.n_samples, self.sampler, rng), -1.0, 1.0)
        logp = log_likelihood(self.score_model, state, samples)
        keep = logp >= self.log_epsilon
        if np.any(keep):
            return samples[keep]
        return samples[[int(np.argmax(logp))]]

    def logits(self, state, candidates):
        q_values = self.ensemble.q_values(state, candidates)
        if self.mode == 'advantage_logits':
            return q_values - np.mean(q_values)
        return q_values

    def probabilities(self, state):
        """:Returns: Tuple (candidates, probabilities)"""
        candidates = self.candidates(state)
        return candidates, softmax(self.alpha * self.logits(state, candidates))

    def sample(self, state, rng):
        candidates, probs = self.probabilities(state)
        return candidates[rng.choice(len(probs), p=probs)]

    def act(self, state, rng):
        return self.normalizer.denormalize(self.sample(state, rng))


def implicit_sample(policy, state, rng):
    """One model-space action drawn with probability proportional to exp(alpha * logit)"""
    return policy.sample(state, rng)


@dataclass(frozen=True)
class AwrConfig:
    head: str = const.POLICY_HEAD
    width: int = const.POLICY_WIDTH
    lr: float = const.POLICY_LR
    steps: int = const.POLICY_STEPS
    batch_size: int = const.POLICY_BATCH_SIZE
    weight_clip: float = const.POLICY_WEIGHT_CLIP
    log_every: int = const.ARQ_LOG_EVERY

    def __post_init__(self):
        if self.head not in HEADS:
            raise ContractViolation('head must be one of {}'.format(', '.join(HEADS)))
        if self.steps < 1 or self.batch_size < 1:
            raise ContractViolation('steps and batch_size must be positive')


@dataclass(frozen=True, eq=False)
class AwrPolicy:
    net: object
    log_std: np.ndarray
    head: str
    normalizer: ActionNormalizer

    def mean(self, states):
        out, _ = mlp_forward(self.net, states)
        return np.tanh(out)

    def sample(self, state, rng):
        mean = self.mean(np.asarray(state, dtype=np.float64))
        if self.head == 'deterministic':
            return mean
        return np.clip(mean + np.exp(self.log_std) * rng.standard_normal(mean.shape), -1.0, 1.0)

    def act(self, state, rng):
        """Env-space action at the policy mean"""
        return self.normalizer.denormalize(self.mean(np.asarray(state, dtype=np.float64)))


def awr_weights(advantages, alpha, clip=const.POLICY_WEIGHT_CLIP):
    """min(exp(alpha * A), clip)"""
    with np.errstate(over='ignore'):
        weights = np.minimum(np.exp(alpha * np.asarray(advantages, dtype=np.float64)), clip)
    if not np.all(np.isfinite(weights)):
        raise NumericalFailure('advantage weights are not finite')
    return weights


def dataset_advantages(dataset, ensemble, cache):
    """A(s_i, a_i) for every row, with the cached candidates of s_i as the baseline"""
    if cache.n_rows != len(dataset):
        raise ContractViolation('support cache has {} rows, dataset has {}'.format(cache.n_rows, len(dataset)))
    candidates, mask = cache.padded('s')
    n_rows, width, dim = candidates.shape
    flat_states = np.repeat(dataset.states, width, axis=0)
    baseline = ensemble.q_values(flat_states, candidates.reshape(n_rows * width, dim)).reshape(n_rows, width)
    baseline = np.sum(np.where(mask, baseline, 0.0), axis=1) / mask.sum(axis=1)
    return ensemble.q_values(dataset.states, dataset.normalized_actions()) - baseline


def awr_train(dataset, ensemble, cache, alpha, cfg, seed):
    """Advantage-weighted regression onto the dataset actions

    :Returns: AwrPolicy

    :param dataset: Transitions
    :type dataset: arq_offline.lib.dataset.OfflineDataset

    :param ensemble: Trained critic
    :type ensemble: arq_offline.lib.arq.QEnsemble

    :param cache: Support cache covering every s row
    :type cache: arq_offline.lib.sampling.SupportCache

    :param alpha: Temperature of the exponential weights
    :type alpha: Float

    :param cfg: Head and optimizer settings
    :type cfg: AwrConfig

    :param seed: Controls init and minibatches
    :type seed: Integer
    """
    n_rows = len(dataset)
    if n_rows == 0:
        raise ContractViolation('cannot train a policy on an empty dataset')
    weights = awr_weights(dataset_advantages(dataset, ensemble, cache), alpha, cfg.weight_clip)
    logger.info('AWR weights: mean {:.3f} max {:.3f}'.format(np.mean(weights), np.max(weights)))
    targets = dataset.normalized_actions()
    action_dim = dataset.header.action_dim
    net = policy_net(dataset.header.state_dim, action_dim, cfg.width, seed=[seed, 6])
    log_std = np.zeros(action_dim)
    net_adam, std_adam = adam_init(net), adam_init(log_std)
    rng = np.random.default_rng([seed, 7])
    for step in range(1, cfg.steps + 1):
        idx = rng.integers(0, n_rows, size=cfg.batch_size)
        out, tape = mlp_forward(net, dataset.states[idx])
        mean = np.tanh(out)
        diff = mean - targets[idx]
        weight = weights[idx][:, None]
        if cfg.head == 'gaussian':
            var = np.exp(2.0 * log_std)
            nll = 0.5 * diff ** 2 / var + log_std + 0.5 * np.log(2.0 * np.pi)
            loss = float(np.mean(weight[:, 0] * nll.sum(axis=1)))
            mean_grad = weight * diff / var / cfg.batch_size
            std_grad = np.sum(weight * (1.0 - diff ** 2 / var), axis=0) / cfg.batch_size
        else:
            loss = float(np.mean(weight[:, 0] * np.sum(diff ** 2, axis=1)))
            mean_grad = 2.0 * weight * diff / cfg.batch_size
            std_grad = None
        if not np.isfinite(loss):
            raise NumericalFailure('policy loss went non-finite', step=step)
        grads, _ = mlp_backward(net, tape, mean_grad * (1.0 - mean ** 2))
        net_adam, net = adam_step(net_adam, net, grads, cfg.lr)
        if std_grad is not None:
            std_adam, log_std = adam_step(std_adam, log_std, std_grad, cfg.lr)
            log_std = np.clip(log_std, *LOG_STD_BOUNDS)
        if step % cfg.log_every == 0:
            logger.info('policy step {}/{} loss {:.5f}'.format(step, cfg.steps, loss))
    log_std = log_std.astype(np.float32).astype(np.float64)
    return AwrPolicy(quantize(net), log_std, cfg.head, dataset.normalizer)


def save_awr_policy(policy, path):
    meta = {'kind': 'awr', 'head': policy.head, 'normalizer': policy.normalizer.to_meta()}
    save_checkpoint(path, {'policy': policy.net}, meta=meta, arrays={'log_std': policy.log_std})


def load_awr_policy(path):
    checkpoint = load_checkpoint(path)
    meta = checkpoint.meta
    if meta.get('kind') != 'awr':
        raise ContractViolation('{} is not an AWR policy checkpoint'.format(path))
    return AwrPolicy(checkpoint.networks['policy'], checkpoint.arrays['log_std'], meta['head'],
                     ActionNormalizer.from_meta(meta['normalizer']))


@dataclass(eq=False)
class BehaviorPolicy:
    """Acts by drawing one action from the score model (behavior cloning)"""
    score_model: object
    sampler: SamplerConfig = field(default_factory=lambda: SamplerConfig(n_steps=const.POLICY_ROLLOUT_PC_STEPS))

    def act(self, state, rng):
        action = pc_sample(self.score_model, np.asarray(state, dtype=np.float64), 1, self.sampler, rng)[0]
        return self.score_model.normalizer.denormalize(np.clip(action, -1.0, 1.0))


@dataclass(frozen=True)
class EvalReport:
    policy: str
    env: str
    episodes: int
    mean_return: float
    std_return: float
    mean_discounted: float

    def to_dict(self):
        return {'policy': self.policy, 'env': self.env, 'episodes': self.episodes,
                'mean_return': self.mean_return, 'std_return': self.std_return,
                'mean_discounted': self.mean_discounted}


def run_episode(env, policy, gamma, seed, episode):
    """:Returns: Tuple (undiscounted return, discounted return)"""
    rng = np.random.default_rng([int(seed), int(episode)])
    state = env.reset(rng)
    total, discounted = 0.0, 0.0
    for step in range(env.descriptor.horizon):
        # policy errors keep their own type; only the env's are wrapped
        action = policy.act(state, rng)
        try:
            state, reward, done, _ = env.step(state, action, rng)
        except (ValueError, ArithmeticError) as doh:
            raise EnvStepError(str(doh), episode, step)
        if not np.isfinite(reward):
            raise EnvStepError('reward is not finite', episode, step)
        total += reward
        discounted += gamma ** step * reward
        if done:
            break
    return total, discounted


def evaluate_policy(env, policy, n_episodes, gamma, seed, workers=1, name='policy'):
    """Average return of ``policy`` over fresh episodes

    Episode i draws from its own generator seeded with (seed, i), so the
    numbers do not depend on ``workers``.

    :Returns: EvalReport

    :param env: The environment
    :type env: arq_offline.lib.envs.ToyEnv

    :param policy: Anything with ``act(state, rng)``
    :type policy: Object

    :param n_episodes: Number of episodes
    :type n_episodes: Integer

    :param gamma: Discount for the discounted return
    :type gamma: Float

    :param seed: Root of the per-episode generators
    :type seed: Integer

    :param workers: Threads for running episodes
    :type workers: Integer
    """
    if n_episodes < 1:
        raise ContractViolation('n_episodes must be at least 1')

    def _run(episode):
        return run_episode(env, policy, gamma, seed, episode)

    if workers > 1:
        with ThreadPoolExecutor(max_workers=workers) as pool:
            results = list(pool.map(_run, range(n_episodes)))
    else:
        results = [_run(episode) for episode in range(n_episodes)]
    returns = np.array([total for total, _ in results])
    discounted = np.array([disc for _, disc in results])
    return EvalReport(policy=name, env=env.name, episodes=n_episodes,
                      mean_return=float(np.mean(returns)), std_return=float(np.std(returns)),
                      mean_discounted=float(np.mean(discounted)))
