# -*- coding: UTF-8 -*-
"""
Stand-ins shared by the test suites
"""
import numpy as np

from arq_offline.lib.arq import QEnsemble
from arq_offline.lib.dataset import ActionNormalizer, Transition, build_dataset
from arq_offline.lib.nn import q_net
from arq_offline.lib.sde import SdeConfig, vpsde_marginal


class GaussianScore:
    """Exact score of N(mu, sigma^2) data pushed through the VPSDE

    The perturbed marginal at time t is N(m mu, m^2 sigma^2 + std^2), so the
    score is closed-form and ignores the state.
    """
    def __init__(self, mu=0.0, sigma=1.0, state_dim=1, sde=None, normalizer=None):
        self.mu = np.atleast_1d(np.asarray(mu, dtype=np.float64))
        self.sigma = float(sigma)
        self.state_dim = state_dim
        self.action_dim = self.mu.size
        self.sde = sde or SdeConfig()
        self.normalizer = normalizer or ActionNormalizer.identity(self.action_dim)

    def marginal(self, t):
        mean_coef, std = vpsde_marginal(t, self.sde)
        return mean_coef * self.mu, mean_coef ** 2 * self.sigma ** 2 + std ** 2

    def score(self, states, actions, t):
        actions = np.atleast_2d(np.asarray(actions, dtype=np.float64))
        mean, var = self.marginal(float(t))
        return -(actions - mean) / var

    def exact_logpdf(self, actions, t=None):
        """log density of the perturbed marginal at t (default t_min), summed over dims"""
        mean, var = self.marginal(self.sde.t_min if t is None else t)
        actions = np.atleast_2d(np.asarray(actions, dtype=np.float64))
        return np.sum(-0.5 * np.log(2 * np.pi * var) - 0.5 * (actions - mean) ** 2 / var, axis=1)


class ConstantScore:
    """Returns the same score vector everywhere"""
    def __init__(self, value, state_dim=1):
        self.value = np.atleast_1d(np.asarray(value, dtype=np.float64))
        self.state_dim = state_dim
        self.action_dim = self.value.size
        self.sde = SdeConfig()
        self.normalizer = ActionNormalizer.identity(self.action_dim)

    def score(self, states, actions, t):
        actions = np.atleast_2d(np.asarray(actions, dtype=np.float64))
        return np.broadcast_to(self.value, actions.shape).copy()


class NanScore(ConstantScore):
    def __init__(self):
        super().__init__([np.nan])


def bandit_dataset(states, actions, rewards, env_name='testbandit'):
    """One-step episodes, s2 = s, done everywhere"""
    rows = [Transition(np.array([s], dtype=np.float64), np.array([a], dtype=np.float64), float(r),
                       np.array([s], dtype=np.float64), True, r > 0)
            for s, a, r in zip(states, actions, rewards)]
    return build_dataset(rows, env_name, seed=0)


def constant_net(value, state_dim=1, action_dim=1):
    """A Q net that returns ``value`` everywhere"""
    template = q_net(state_dim, action_dim, 4, seed=0)
    tensors = template.zeros_like().tensors()
    tensors[-1] = np.array([value], dtype=np.float64)
    return template.with_tensors(tensors)


def action_net():
    """A Q net computing max(a, 0) for 1-d states and actions"""
    template = q_net(1, 1, 4, seed=0)
    tensors = template.zeros_like().tensors()
    tensors[0][0, 1] = 1.0
    tensors[2][0, 0] = 1.0
    tensors[4][0, 0] = 1.0
    return template.with_tensors(tensors)


def ensemble_of(online, target=None, normalizer=None):
    return QEnsemble(tuple(online), tuple(target or online), 0.995, 1, 1, normalizer)
