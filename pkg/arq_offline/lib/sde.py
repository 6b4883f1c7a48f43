# -*- coding: UTF-8 -*-
"""
Variance-preserving SDE: linear beta schedule, closed-form perturbation
kernel, and the drift/diffusion pair used by the samplers.
"""
from dataclasses import dataclass, asdict

import numpy as np

from arq_offline.lib import const
from arq_offline.lib.errors import ContractViolation


@dataclass(frozen=True)
class SdeConfig:
    beta_min: float = const.SDE_BETA_MIN
    beta_max: float = const.SDE_BETA_MAX
    t_min: float = const.SDE_T_MIN
    t_max: float = const.SDE_T_MAX
    n_discretization: int = const.SDE_N_DISCRETIZATION

    def __post_init__(self):
        if not 0 < self.beta_min < self.beta_max:
            raise ContractViolation('need 0 < beta_min < beta_max, got {} and {}'.format(
                                    self.beta_min, self.beta_max))
        if not 0 < self.t_min < self.t_max <= 1:
            raise ContractViolation('need 0 < t_min < t_max <= 1, got {} and {}'.format(
                                    self.t_min, self.t_max))
        if self.n_discretization < 2:
            raise ContractViolation('n_discretization must be at least 2')

    def to_meta(self):
        return asdict(self)

    @classmethod
    def from_meta(cls, meta):
        return cls(**meta)


def beta(t, sde):
    return sde.beta_min + t * (sde.beta_max - sde.beta_min)


def integrated_beta(t, sde):
    return sde.beta_min * t + 0.5 * t * t * (sde.beta_max - sde.beta_min)


def vpsde_marginal(t, sde):
    """Mean coefficient and std of the perturbation kernel a_t | a_0

    :Returns: Tuple (mean_coef, std)

    :param t: Diffusion time(s) in [0, t_max]
    :type t: Float or numpy.ndarray

    :param sde: The SDE
    :type sde: SdeConfig
    """
    t_arr = np.asarray(t, dtype=np.float64)
    if np.any(t_arr < 0) or np.any(t_arr > sde.t_max) or not np.all(np.isfinite(t_arr)):
        raise ContractViolation('t must lie in [0, {}], got {}'.format(sde.t_max, t))
    integral = integrated_beta(t_arr, sde)
    mean_coef = np.exp(-0.5 * integral)
    std = np.sqrt(-np.expm1(-integral))
    if np.ndim(t) == 0:
        return float(mean_coef), float(std)
    return mean_coef, std


def perturb(a0, t, noise, sde):
    """a_t = mean_coef(t) * a0 + std(t) * noise

    ``a0`` and ``noise`` are ``(d,)`` or ``(batch, d)``; ``t`` is a scalar or
    one time per row.
    """
    a0 = np.asarray(a0, dtype=np.float64)
    noise = np.asarray(noise, dtype=np.float64)
    if a0.shape != noise.shape:
        raise ContractViolation('noise shape {} does not match action shape {}'.format(noise.shape, a0.shape))
    mean_coef, std = vpsde_marginal(t, sde)
    if np.ndim(t):
        mean_coef = np.asarray(mean_coef)[:, None]
        std = np.asarray(std)[:, None]
    return mean_coef * a0 + std * noise


def time_grid(sde):
    """The ``n_discretization`` training times, evenly spaced over [t_min, t_max]"""
    return np.linspace(sde.t_min, sde.t_max, sde.n_discretization)


def drift(x, t, sde):
    """Forward drift f(x, t) = -beta(t) x / 2"""
    return -0.5 * beta(t, sde) * x


def diffusion(t, sde):
    """Forward diffusion coefficient g(t) = sqrt(beta(t))"""
    return np.sqrt(beta(t, sde))


def time_embedding(t, n_frequencies=const.SCORE_TIME_FREQUENCIES):
    """Sinusoidal features of t at geometrically spaced frequencies

    :Returns: numpy.ndarray of shape ``(batch, 2 * n_frequencies)``
    """
    t = np.atleast_1d(np.asarray(t, dtype=np.float64))
    freqs = np.geomspace(1.0, 64.0, n_frequencies)
    angles = t[:, None] * freqs[None, :]
    return np.concatenate([np.sin(angles), np.cos(angles)], axis=1)
