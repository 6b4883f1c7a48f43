# -*- coding: UTF-8 -*-
"""
Conditional score model s(s, a, t) ~ grad_a log beta_t(a|s), trained with
denoising score matching on the VPSDE.
"""
from dataclasses import dataclass, field, replace

import numpy as np
from vlab_api_common import get_logger

from arq_offline.lib import const
from arq_offline.lib.dataset import ActionNormalizer
from arq_offline.lib.errors import ContractViolation, NumericalFailure
from arq_offline.lib.nn import (EmaParams, adam_init, adam_step, ema_init, ema_update, load_checkpoint,
                                mlp_backward, mlp_forward, quantize, save_checkpoint, score_net)
from arq_offline.lib.sde import SdeConfig, perturb, time_embedding, time_grid, vpsde_marginal

logger = get_logger(__name__, loglevel=const.ARQ_LOG_LEVEL)

WEIGHTINGS = ('unit', 'std2')


@dataclass(frozen=True)
class ScoreConfig:
    sde: SdeConfig = field(default_factory=SdeConfig)
    width: int = const.SCORE_WIDTH
    n_blocks: int = const.SCORE_BLOCKS
    n_frequencies: int = const.SCORE_TIME_FREQUENCIES
    steps: int = const.SCORE_STEPS
    batch_size: int = const.SCORE_BATCH_SIZE
    lr: float = const.SCORE_LR
    ema_decay: float = const.SCORE_EMA_DECAY
    weighting: str = const.SCORE_WEIGHTING
    log_every: int = const.ARQ_LOG_EVERY

    def __post_init__(self):
        if self.weighting not in WEIGHTINGS:
            raise ContractViolation('weighting must be one of {}'.format(', '.join(WEIGHTINGS)))
        if self.steps < 1 or self.batch_size < 1:
            raise ContractViolation('steps and batch_size must be positive')


@dataclass(frozen=True, eq=False)
class ScoreModel:
    net: object
    ema: EmaParams
    sde: SdeConfig
    state_dim: int
    action_dim: int
    normalizer: ActionNormalizer
    n_frequencies: int = const.SCORE_TIME_FREQUENCIES
    losses: tuple = ()

    def inputs(self, states, actions, t):
        actions = np.atleast_2d(np.asarray(actions, dtype=np.float64))
        batch = actions.shape[0]
        states = np.asarray(states, dtype=np.float64)
        if states.ndim == 1:
            states = np.broadcast_to(states, (batch, self.state_dim))
        if states.shape != (batch, self.state_dim) or actions.shape[1] != self.action_dim:
            raise ContractViolation('expected states ({}, {}) and actions ({}, {}), got {} and {}'.format(
                                    batch, self.state_dim, batch, self.action_dim, states.shape, actions.shape))
        t = np.broadcast_to(np.asarray(t, dtype=np.float64), (batch,))
        return np.concatenate([states, actions, time_embedding(t, self.n_frequencies)], axis=1)

    def score(self, states, actions, t, use_ema=True):
        """Batched score evaluation; rows of ``actions`` are independent"""
        params = self.ema.shadow if use_ema else self.net
        out, _ = mlp_forward(params, self.inputs(states, actions, t))
        return out


def new_score_model(state_dim, action_dim, config, seed, normalizer=None):
    net = score_net(state_dim, action_dim, config.n_frequencies, config.width, config.n_blocks, seed=[seed, 1])
    return ScoreModel(net=net,
                      ema=ema_init(net, config.ema_decay),
                      sde=config.sde,
                      state_dim=state_dim,
                      action_dim=action_dim,
                      normalizer=normalizer or ActionNormalizer.identity(action_dim),
                      n_frequencies=config.n_frequencies)


def dsm_loss(model, states, actions, t_draws, noise_draws, weighting='unit'):
    """Denoising score-matching loss on the raw (non-EMA) network

    ``unit`` weighting is E||s + z/std||^2; ``std2`` multiplies each item by std^2.

    :Returns: Tuple (loss, grads)

    :param model: The model being trained
    :type model: ScoreModel

    :param states: ``(batch, state_dim)``
    :type states: numpy.ndarray

    :param actions: Clean actions in model space, ``(batch, action_dim)``
    :type actions: numpy.ndarray

    :param t_draws: One diffusion time per item
    :type t_draws: numpy.ndarray

    :param noise_draws: One standard-normal vector per item
    :type noise_draws: numpy.ndarray
    """
    actions = np.atleast_2d(np.asarray(actions, dtype=np.float64))
    batch = actions.shape[0]
    if batch == 0:
        raise ContractViolation('score matching needs a non-empty batch')
    t_draws = np.asarray(t_draws, dtype=np.float64).reshape(batch)
    noise_draws = np.asarray(noise_draws, dtype=np.float64).reshape(actions.shape)
    _, std = vpsde_marginal(t_draws, model.sde)
    perturbed = perturb(actions, t_draws, noise_draws, model.sde)
    out, tape = mlp_forward(model.net, model.inputs(states, perturbed, t_draws))
    residual = out + noise_draws / std[:, None]
    weight = std ** 2 if weighting == 'std2' else np.ones(batch)
    loss = float(np.mean(weight * np.sum(residual ** 2, axis=1)))
    grads, _ = mlp_backward(model.net, tape, 2.0 * weight[:, None] * residual / batch)
    return loss, grads


def fit_score_model(states, actions, config, seed, normalizer=None):
    """Train on arrays that are already in model space

    :Returns: ScoreModel

    :param states: ``(n, state_dim)``
    :type states: numpy.ndarray

    :param actions: ``(n, action_dim)``, model space
    :type actions: numpy.ndarray

    :param config: Architecture and optimizer settings
    :type config: ScoreConfig

    :param seed: Controls init, minibatches, times and noise
    :type seed: Integer
    """
    states = np.asarray(states, dtype=np.float64)
    actions = np.asarray(actions, dtype=np.float64)
    n_rows = actions.shape[0]
    if n_rows == 0:
        raise ContractViolation('cannot train a score model on an empty dataset')
    model = new_score_model(states.shape[1], actions.shape[1], config, seed, normalizer)
    rng = np.random.default_rng([seed, 2])
    times = time_grid(config.sde)
    adam = adam_init(model.net)
    net, ema = model.net, model.ema
    losses = []
    for step in range(1, config.steps + 1):
        idx = rng.integers(0, n_rows, size=config.batch_size)
        t_draws = times[rng.integers(0, times.size, size=config.batch_size)]
        noise = rng.standard_normal((config.batch_size, actions.shape[1]))
        loss, grads = dsm_loss(replace(model, net=net), states[idx], actions[idx], t_draws, noise,
                               weighting=config.weighting)
        if not np.isfinite(loss):
            raise NumericalFailure('score-matching loss went non-finite', step=step)
        adam, net = adam_step(adam, net, grads, config.lr)
        ema = ema_update(ema, net, decay=min(config.ema_decay, (1.0 + step) / (10.0 + step)))
        losses.append(loss)
        if step % config.log_every == 0:
            logger.info('score step {}/{} loss {:.5f}'.format(step, config.steps, np.mean(losses[-config.log_every:])))
    window = max(1, len(losses) // 10)
    first, last = np.mean(losses[:window]), np.mean(losses[-window:])
    if not last < first:
        logger.warning('score-matching loss did not decrease ({:.5f} -> {:.5f})'.format(first, last))
    return replace(model, net=quantize(net), ema=EmaParams(quantize(ema.shadow), ema.decay), losses=tuple(losses))


def train_score_model(dataset, config, seed):
    """Behavior cloning: fit the score model to the dataset's normalized actions

    :Returns: ScoreModel

    :param dataset: Training data
    :type dataset: arq_offline.lib.dataset.OfflineDataset

    :param config: Architecture and optimizer settings
    :type config: ScoreConfig

    :param seed: Training seed
    :type seed: Integer
    """
    if len(dataset) == 0:
        raise ContractViolation('cannot train a score model on an empty dataset')
    logger.info('Training score model on {} transitions for {} steps'.format(len(dataset), config.steps))
    return fit_score_model(dataset.states, dataset.normalized_actions(), config, seed,
                           normalizer=dataset.normalizer)


def save_score_model(model, path):
    meta = {'kind': 'score',
            'sde': model.sde.to_meta(),
            'state_dim': model.state_dim,
            'action_dim': model.action_dim,
            'n_frequencies': model.n_frequencies,
            'ema_decay': model.ema.decay,
            'normalizer': model.normalizer.to_meta()}
    save_checkpoint(path, {'net': model.net, 'ema': model.ema.shadow}, meta=meta)


def load_score_model(path):
    checkpoint = load_checkpoint(path)
    meta = checkpoint.meta
    if meta.get('kind') != 'score':
        raise ContractViolation('{} is not a score-model checkpoint'.format(path))
    return ScoreModel(net=checkpoint.networks['net'],
                      ema=EmaParams(checkpoint.networks['ema'], meta['ema_decay']),
                      sde=SdeConfig.from_meta(meta['sde']),
                      state_dim=meta['state_dim'],
                      action_dim=meta['action_dim'],
                      normalizer=ActionNormalizer.from_meta(meta['normalizer']),
                      n_frequencies=meta['n_frequencies'])
