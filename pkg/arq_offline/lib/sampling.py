# -*- coding: UTF-8 -*-
"""
Predictor-corrector sampling from the reverse-time VPSDE, exact
log-likelihoods through the probability-flow ODE, and the prepopulated
cache of in-support actions used by Q-learning.

Anything with ``score(states, actions, t)``, ``sde``, ``state_dim`` and
``action_dim`` can be sampled from.
"""
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass

import numpy as np
import ujson
from scipy.integrate import solve_ivp
from vlab_api_common import get_logger

from arq_offline.lib import const
from arq_offline.lib.errors import ContractViolation, DatasetFormatError, IntegratorFailure, NumericalFailure
from arq_offline.lib.sde import beta

logger = get_logger(__name__, loglevel=const.ARQ_LOG_LEVEL)

WHICH = ('s', 's2')
CHUNK_STATES = 16


@dataclass(frozen=True)
class SamplerConfig:
    n_steps: int = const.SAMPLER_N_STEPS
    snr: float = const.SAMPLER_SNR
    corrector_steps: int = const.SAMPLER_CORRECTOR_STEPS

    def __post_init__(self):
        if self.n_steps < 2:
            raise ContractViolation('n_steps must be at least 2')
        if self.snr < 0:
            raise ContractViolation('snr must not be negative')
        if self.corrector_steps < 0:
            raise ContractViolation('corrector_steps must not be negative')


@dataclass(frozen=True, eq=False)
class CacheEntry:
    actions: np.ndarray
    logp: np.ndarray
    fallback: bool = False


@dataclass(frozen=True, eq=False)
class SupportCache:
    n_samples: int
    log_epsilon: float
    seed: int
    n_rows: int
    entries: dict

    def entry(self, row, which='s2'):
        try:
            return self.entries[(row, which)]
        except KeyError:
            raise ContractViolation('support cache has no entry for row {} ({})'.format(row, which))

    @property
    def fallback_count(self):
        return sum(1 for entry in self.entries.values() if entry.fallback)

    def covers(self, which):
        return all((row, which) in self.entries for row in range(self.n_rows))

    def padded(self, which='s2'):
        """Cached actions as ``(n_rows, width, action_dim)`` plus a validity mask

        Unused slots repeat the row's first cached action.
        """
        if not self.covers(which):
            raise ContractViolation('support cache does not cover every {} row'.format(which))
        entries = [self.entries[(row, which)] for row in range(self.n_rows)]
        width = max(len(entry.logp) for entry in entries)
        action_dim = entries[0].actions.shape[1]
        actions = np.zeros((self.n_rows, width, action_dim))
        mask = np.zeros((self.n_rows, width), dtype=bool)
        for row, entry in enumerate(entries):
            count = len(entry.logp)
            actions[row, :count] = entry.actions
            actions[row, count:] = entry.actions[0]
            mask[row, :count] = True
        return actions, mask


def _score_groups(model, states, x, t):
    """Score for ``x`` shaped ``(groups, n, d)``; ``states`` is ``(groups, state_dim)``"""
    groups, n_items, dim = x.shape
    flat_states = np.repeat(states, n_items, axis=0)
    return model.score(flat_states, x.reshape(groups * n_items, dim), t).reshape(groups, n_items, dim)


def _langevin_groups(model, states, x, t, snr, noise):
    if snr == 0:
        return x
    score = _score_groups(model, states, x, t)
    grad_norm = np.linalg.norm(score, axis=2).mean(axis=1)
    noise_norm = np.linalg.norm(noise, axis=2).mean(axis=1)
    safe = np.where(grad_norm > 0, grad_norm, 1.0)
    # a zero score norm skips the step for that group
    step = np.where(grad_norm > 0, 2.0 * (snr * noise_norm / safe) ** 2, 0.0)[:, None, None]
    return x + step * score + np.sqrt(2.0 * step) * noise


def langevin_correct(model, state, x, t, snr, rng):
    """One Langevin corrector step at time t for samples of a single state

    Step size is ``2 * (snr * |z| / |score|)^2`` with norms averaged over
    the samples.

    :Returns: numpy.ndarray shaped like ``x``

    :param model: Score model
    :type model: arq_offline.lib.score.ScoreModel

    :param state: The conditioning state
    :type state: numpy.ndarray

    :param x: ``(n, action_dim)`` samples
    :type x: numpy.ndarray

    :param t: Diffusion time
    :type t: Float

    :param snr: Target score-to-noise ratio
    :type snr: Float

    :param rng: Source of the injected noise
    :type rng: numpy.random.Generator
    """
    if not 0 <= t <= model.sde.t_max:
        raise ContractViolation('t must lie in [0, {}]'.format(model.sde.t_max))
    x = np.atleast_2d(np.asarray(x, dtype=np.float64))
    noise = rng.standard_normal(x.shape)
    states = np.asarray(state, dtype=np.float64).reshape(1, model.state_dim)
    return _langevin_groups(model, states, x[None], t, snr, noise[None])[0]


def pc_sample_groups(model, states, n, cfg, rngs):
    """Predictor-corrector sampling for several states at once

    Each state draws all of its noise from its own generator, so the result
    for one state does not depend on which other states share the batch.

    :Returns: numpy.ndarray ``(len(states), n, action_dim)``
    """
    if n < 1:
        raise ContractViolation('need at least one sample per state')
    states = np.asarray(states, dtype=np.float64).reshape(-1, model.state_dim)
    if len(rngs) != states.shape[0]:
        raise ContractViolation('need one generator per state')
    dim = model.action_dim
    sde = model.sde

    def _noise():
        return np.stack([rng.standard_normal((n, dim)) for rng in rngs])

    x = _noise()
    x_mean = x
    grid = np.linspace(sde.t_max, sde.t_min, cfg.n_steps + 1)
    for idx in range(cfg.n_steps):
        t, dt = grid[idx], grid[idx] - grid[idx + 1]
        for _ in range(cfg.corrector_steps):
            x = _langevin_groups(model, states, x, t, cfg.snr, _noise())
        b = beta(t, sde)
        score = _score_groups(model, states, x, t)
        x_mean = x + (0.5 * b * x + b * score) * dt
        x = x_mean + np.sqrt(b * dt) * _noise()
        if not (np.all(np.isfinite(x)) and np.all(np.isfinite(x_mean))):
            raise NumericalFailure('sampler produced a non-finite value', step=idx)
    # no noise on the last step
    return x_mean


def pc_sample(model, state, n, cfg, rng):
    """Draw ``n`` actions for one state by integrating the reverse SDE from t_max to t_min

    :Returns: numpy.ndarray ``(n, action_dim)``

    :param model: Score model
    :type model: arq_offline.lib.score.ScoreModel

    :param state: The conditioning state
    :type state: numpy.ndarray

    :param n: Number of samples
    :type n: Integer

    :param cfg: Step count, SNR, and corrector steps
    :type cfg: SamplerConfig

    :param rng: Noise source
    :type rng: numpy.random.Generator
    """
    return pc_sample_groups(model, np.asarray(state)[None], n, cfg, [rng])[0]


def log_likelihood(model, state, actions, tol=const.LIKELIHOOD_TOL, check_bounds=True, h=const.DIVERGENCE_STEP):
    """Exact log-density of actions under the model via the probability-flow ODE

    The divergence of the ODE drift is computed dimension by dimension with
    central differences of step ``h``.

    :Returns: Float for one action, numpy.ndarray for a batch

    :param model: Score model
    :type model: arq_offline.lib.score.ScoreModel

    :param state: The conditioning state
    :type state: numpy.ndarray

    :param actions: One action ``(d,)`` or a batch ``(n, d)`` for this state
    :type actions: numpy.ndarray

    :param tol: rtol and atol of the RK45 integrator
    :type tol: Float

    :param check_bounds: Reject actions outside the normalized box
    :type check_bounds: Boolean
    """
    actions = np.asarray(actions, dtype=np.float64)
    single = actions.ndim == 1
    actions = np.atleast_2d(actions)
    n_items, dim = actions.shape
    if dim != model.action_dim:
        raise ContractViolation('actions have {} dims, model expects {}'.format(dim, model.action_dim))
    if check_bounds and np.any(np.abs(actions) > 1.0 + 1e-9):
        raise ContractViolation('actions must lie within the normalized bounds [-1, 1]')
    sde = model.sde
    state = np.asarray(state, dtype=np.float64)
    offsets = np.concatenate([np.zeros((1, dim)), h * np.eye(dim), -h * np.eye(dim)])

    def _rhs(t, y):
        x = y[:n_items * dim].reshape(n_items, dim)
        shifted = (x[None, :, :] + offsets[:, None, :]).reshape(-1, dim)
        scores = model.score(state, shifted, t).reshape(2 * dim + 1, n_items, dim)
        trace = np.zeros(n_items)
        for i in range(dim):
            trace += (scores[1 + i, :, i] - scores[1 + dim + i, :, i]) / (2.0 * h)
        b = beta(t, sde)
        dx = -0.5 * b * (x + scores[0])
        dlogp = -0.5 * b * (dim + trace)
        return np.concatenate([dx.reshape(-1), dlogp])

    init = np.concatenate([actions.reshape(-1), np.zeros(n_items)])
    solution = solve_ivp(_rhs, (sde.t_min, sde.t_max), init, method='RK45', rtol=tol, atol=tol)
    if not solution.success:
        raise IntegratorFailure('probability-flow ODE failed: {}'.format(solution.message),
                                t_reached=float(solution.t[-1]))
    final = solution.y[:, -1]
    latent = final[:n_items * dim].reshape(n_items, dim)
    delta = final[n_items * dim:]
    prior = -0.5 * dim * np.log(2.0 * np.pi) - 0.5 * np.sum(latent ** 2, axis=1)
    logp = prior + delta
    return float(logp[0]) if single else logp


def _state_for(dataset, row, which):
    return dataset.states[row] if which == 's' else dataset.next_states[row]


def _fallback_action(dataset, row, which):
    """The dataset action taken at this state (next row's action for s2 when the trajectory continues)"""
    normalized = dataset.normalized_actions()
    if which == 's2' and row + 1 < len(dataset) and np.array_equal(dataset.states[row + 1], dataset.next_states[row]):
        return normalized[row + 1]
    return normalized[row]


def substream(seed, row, which):
    return np.random.default_rng([int(seed), int(row), WHICH.index(which)])


def build_support_cache(model, dataset, n_samples, log_epsilon, cfg, seed, workers=1, tol=const.LIKELIHOOD_TOL):
    """Sample candidate actions for every s and s2 and keep those with log p >= ln(epsilon)

    :Returns: SupportCache

    :param model: Trained score model
    :type model: arq_offline.lib.score.ScoreModel

    :param dataset: Rows whose states get cached
    :type dataset: arq_offline.lib.dataset.OfflineDataset

    :param n_samples: Samples drawn per state (N)
    :type n_samples: Integer

    :param log_epsilon: ln of the likelihood threshold
    :type log_epsilon: Float

    :param cfg: Sampler settings
    :type cfg: SamplerConfig

    :param seed: Root of the per-state generator substreams
    :type seed: Integer

    :param workers: Threads used for sampling and likelihoods
    :type workers: Integer
    """
    if n_samples < 1:
        raise ContractViolation('n_samples must be at least 1')
    if not np.isfinite(log_epsilon) and log_epsilon != -np.inf:
        raise ContractViolation('log_epsilon must be finite or -inf')
    keys = [(row, which) for row in range(len(dataset)) for which in WHICH]
    chunks = [keys[i:i + CHUNK_STATES] for i in range(0, len(keys), CHUNK_STATES)]

    def _build_chunk(chunk):
        states = np.stack([_state_for(dataset, row, which) for row, which in chunk])
        rngs = [substream(seed, row, which) for row, which in chunk]
        samples = np.clip(pc_sample_groups(model, states, n_samples, cfg, rngs), -1.0, 1.0)
        built = []
        for (row, which), state, candidates in zip(chunk, states, samples):
            logp = log_likelihood(model, state, candidates, tol=tol)
            keep = logp >= log_epsilon
            if np.any(keep):
                built.append(CacheEntry(candidates[keep], logp[keep], False))
            else:
                action = _fallback_action(dataset, row, which)
                fallback_logp = log_likelihood(model, state, action[None, :], tol=tol)
                built.append(CacheEntry(action[None, :], fallback_logp, True))
        return built

    if workers > 1:
        with ThreadPoolExecutor(max_workers=workers) as pool:
            results = list(pool.map(_build_chunk, chunks))
    else:
        results = [_build_chunk(chunk) for chunk in chunks]
    entries = {}
    for chunk, built in zip(chunks, results):
        entries.update(zip(chunk, built))
    cache = SupportCache(n_samples=n_samples, log_epsilon=float(log_epsilon), seed=int(seed),
                         n_rows=len(dataset), entries=entries)
    if cache.fallback_count:
        logger.warning('{} of {} states had no in-support sample; stored the dataset action instead'.format(
                       cache.fallback_count, len(keys)))
    return cache


def save_support_cache(cache, path):
    with open(path, 'w') as the_file:
        the_file.write(ujson.dumps({'n_samples': cache.n_samples, 'log_epsilon': cache.log_epsilon,
                                    'seed': cache.seed, 'n_rows': cache.n_rows}))
        the_file.write('\n')
        for row in range(cache.n_rows):
            for which in WHICH:
                if (row, which) not in cache.entries:
                    continue
                entry = cache.entries[(row, which)]
                record = {'row': row, 'which': which, 'actions': entry.actions.tolist(),
                          'logp': entry.logp.tolist(), 'fallback': entry.fallback}
                the_file.write(ujson.dumps(record))
                the_file.write('\n')


def load_support_cache(path):
    with open(path) as the_file:
        lines = [line for line in the_file.read().split('\n') if line]
    if not lines:
        raise DatasetFormatError('empty cache file', line=1)
    try:
        header = ujson.loads(lines[0])
        n_samples, n_rows = int(header['n_samples']), int(header['n_rows'])
        log_epsilon, seed = float(header['log_epsilon']), int(header['seed'])
    except (ValueError, KeyError, TypeError) as doh:
        raise DatasetFormatError('malformed cache header: {}'.format(doh), line=1)
    entries = {}
    for line_no, line in enumerate(lines[1:], start=2):
        try:
            record = ujson.loads(line)
            which = record['which']
            if which not in WHICH:
                raise ValueError('which must be s or s2')
            actions = np.array(record['actions'], dtype=np.float64)
            logp = np.array(record['logp'], dtype=np.float64)
            if actions.ndim != 2 or logp.shape != (actions.shape[0],) or not actions.shape[0]:
                raise ValueError('actions and logp do not line up')
            entries[(int(record['row']), which)] = CacheEntry(actions, logp, bool(record['fallback']))
        except (ValueError, KeyError, TypeError) as doh:
            raise DatasetFormatError('malformed cache record: {}'.format(doh), line=line_no)
    return SupportCache(n_samples=n_samples, log_epsilon=log_epsilon, seed=seed, n_rows=n_rows, entries=entries)
