# -*- coding: UTF-8 -*-
"""
Action-restricted Q-learning: fitted Q iteration whose bootstrap only
ranges over the cached in-support actions of s', using the K-th largest
value instead of the max, clipped double Q, and polyak-averaged targets.

The ``qbeta`` mode is the behavior-evaluation baseline: one critic, K = 1,
and a single uniformly drawn cached a' per bootstrap.
"""
import csv
from dataclasses import dataclass

import numpy as np
from vlab_api_common import get_logger

from arq_offline.lib import const
from arq_offline.lib.dataset import ActionNormalizer, iter_trajectories
from arq_offline.lib.errors import ContractViolation, NumericalFailure
from arq_offline.lib.nn import (EmaParams, adam_init, adam_step, ema_update, load_checkpoint, mlp_backward,
                                mlp_forward, q_net, quantize, save_checkpoint)

logger = get_logger(__name__, loglevel=const.ARQ_LOG_LEVEL)

LOSSES = ('squared_l2', 'huber')
REWARD_MODES = ('raw', 'normalized', 'minus_one_except_goal')
MODES = ('arq', 'qbeta')
LOG_FIELDS = ('step', 'loss', 'mean_target', 'mean_q')


@dataclass(frozen=True)
class ArqConfig:
    k: int = const.ARQ_K
    gamma: float = const.ARQ_GAMMA
    loss: str = const.ARQ_LOSS
    lr: float = const.ARQ_LR
    steps: int = const.ARQ_STEPS
    batch_size: int = const.ARQ_BATCH_SIZE
    polyak: float = const.ARQ_POLYAK
    width: int = const.ARQ_Q_WIDTH
    reward_mode: str = const.ARQ_REWARD_MODE
    reward_scale: float = const.ARQ_REWARD_SCALE
    mode: str = 'arq'
    log_every: int = const.ARQ_LOG_EVERY

    def __post_init__(self):
        if self.k < 1:
            raise ContractViolation('K must be at least 1, got {}'.format(self.k))
        if not 0.0 <= self.gamma < 1.0:
            raise ContractViolation('gamma must lie in [0, 1), got {}'.format(self.gamma))
        if self.loss not in LOSSES:
            raise ContractViolation('loss must be one of {}'.format(', '.join(LOSSES)))
        if self.reward_mode not in REWARD_MODES:
            raise ContractViolation('reward_mode must be one of {}'.format(', '.join(REWARD_MODES)))
        if self.mode not in MODES:
            raise ContractViolation('mode must be one of {}'.format(', '.join(MODES)))
        if not 0.0 <= self.polyak <= 1.0:
            raise ContractViolation('polyak must lie in [0, 1]')

    @property
    def n_nets(self):
        return 2 if self.mode == 'arq' else 1


@dataclass(frozen=True, eq=False)
class QEnsemble:
    online: tuple
    target: tuple
    polyak: float
    state_dim: int
    action_dim: int
    normalizer: ActionNormalizer = None

    def q_values(self, states, actions):
        """min over the online nets; ``states`` may be one vector shared by every action row"""
        actions = np.atleast_2d(np.asarray(actions, dtype=np.float64))
        states = np.asarray(states, dtype=np.float64)
        if states.ndim == 1:
            states = np.broadcast_to(states, (actions.shape[0], self.state_dim))
        inputs = np.concatenate([states, actions], axis=1)
        return np.min([mlp_forward(net, inputs)[0][:, 0] for net in self.online], axis=0)

    def polyak_update(self):
        """target <- polyak * target + (1 - polyak) * online"""
        target = tuple(ema_update(EmaParams(shadow, self.polyak), net).shadow
                       for shadow, net in zip(self.target, self.online))
        return QEnsemble(self.online, target, self.polyak, self.state_dim, self.action_dim, self.normalizer)


def new_ensemble(state_dim, action_dim, cfg, seed, normalizer=None):
    online = tuple(q_net(state_dim, action_dim, cfg.width, seed=[seed, 4, idx]) for idx in range(cfg.n_nets))
    return QEnsemble(online, online, cfg.polyak, state_dim, action_dim, normalizer)


def kth_max(values, k):
    """K-th largest value; K beyond the number of values gives the minimum

    :Returns: Float

    :param values: Candidate values
    :type values: List or numpy.ndarray

    :param k: 1 is the plain max
    :type k: Integer
    """
    values = np.asarray(values, dtype=np.float64).reshape(-1)
    if not values.size:
        raise ContractViolation('kth_max needs at least one value')
    if k < 1:
        raise ContractViolation('K must be at least 1, got {}'.format(k))
    ordered = np.sort(values)[::-1]
    return float(ordered[min(k, ordered.size) - 1])


def masked_kth_max(values, mask, k):
    """Row-wise ``kth_max`` over the entries where ``mask`` is set"""
    counts = mask.sum(axis=1)
    if np.any(counts == 0):
        raise ContractViolation('every row needs at least one candidate')
    ordered = -np.sort(-np.where(mask, values, -np.inf), axis=1)
    picks = np.minimum(k, counts) - 1
    return ordered[np.arange(values.shape[0]), picks]


def _target_values(ensemble, states, actions):
    """Target-net values ``(B, N)`` for candidate actions ``(B, N, d)``, min over the target nets"""
    batch, width, dim = actions.shape
    flat_states = np.repeat(states, width, axis=0)
    inputs = np.concatenate([flat_states, actions.reshape(batch * width, dim)], axis=1)
    values = np.min([mlp_forward(net, inputs)[0][:, 0] for net in ensemble.target], axis=0)
    return values.reshape(batch, width)


def batch_targets(ensemble, rewards, next_states, dones, candidates, mask, k, gamma):
    """r + gamma * K-th max of the target values over each row's cached candidates (r alone when done)"""
    values = _target_values(ensemble, next_states, candidates)
    bootstrap = masked_kth_max(values, mask, k)
    return np.where(dones, rewards, rewards + gamma * np.where(dones, 0.0, bootstrap))


def arq_target(transition, support_actions, ensemble, cfg):
    """Bootstrap target for one transition

    :Returns: Float

    :param transition: The row
    :type transition: arq_offline.lib.dataset.Transition

    :param support_actions: Cached in-support actions of ``transition.s2``, model space
    :type support_actions: numpy.ndarray

    :param ensemble: Supplies the target nets
    :type ensemble: QEnsemble

    :param cfg: Supplies K and gamma
    :type cfg: ArqConfig
    """
    if transition.done:
        return float(transition.r)
    support_actions = np.atleast_2d(np.asarray(support_actions, dtype=np.float64))
    if not support_actions.shape[0]:
        raise ContractViolation('support set for s2 is empty')
    values = _target_values(ensemble, np.asarray(transition.s2, dtype=np.float64)[None, :], support_actions[None])
    return float(transition.r + cfg.gamma * kth_max(values[0], cfg.k))


def _loss_and_grad(diff, kind):
    batch = diff.shape[0]
    if kind == 'huber':
        small = np.abs(diff) <= 1.0
        loss = np.mean(np.where(small, 0.5 * diff ** 2, np.abs(diff) - 0.5))
        return float(loss), np.clip(diff, -1.0, 1.0) / batch
    return float(np.mean(diff ** 2)), 2.0 * diff / batch


def shape_rewards(dataset, mode, scale=const.ARQ_REWARD_SCALE):
    """Rewrite the rewards of a dataset

    ``raw`` keeps them, ``normalized`` multiplies by scale / (best - worst
    trajectory return), ``minus_one_except_goal`` gives 0 on goal rows and -1
    everywhere else.

    :Returns: arq_offline.lib.dataset.OfflineDataset
    """
    if mode == 'raw':
        return dataset
    if mode == 'minus_one_except_goal':
        return dataset.with_rewards(np.where(dataset.goals, 0.0, -1.0))
    if mode == 'normalized':
        returns = [float(np.sum(dataset.rewards[start:stop])) for start, stop in iter_trajectories(dataset)]
        best, worst = max(returns), min(returns)
        if best == worst:
            raise ContractViolation('cannot normalize rewards: every trajectory returns {}'.format(best))
        return dataset.with_rewards(dataset.rewards * scale / (best - worst))
    raise ContractViolation('reward mode must be one of {}'.format(', '.join(REWARD_MODES)))


def arq_train(dataset, cache, cfg, seed, log_path=None):
    """Fit the critics by regressing onto cache-restricted bootstrap targets

    :Returns: QEnsemble

    :param dataset: Transitions with already-shaped rewards
    :type dataset: arq_offline.lib.dataset.OfflineDataset

    :param cache: Support cache covering every s2 row of ``dataset``
    :type cache: arq_offline.lib.sampling.SupportCache

    :param cfg: Hyperparameters
    :type cfg: ArqConfig

    :param seed: Controls init and minibatches
    :type seed: Integer

    :param log_path: Optional CSV of (step, loss, mean_target, mean_q)
    :type log_path: String
    """
    n_rows = len(dataset)
    if n_rows == 0:
        raise ContractViolation('cannot train on an empty dataset')
    if cache.n_rows != n_rows:
        raise ContractViolation('support cache has {} rows, dataset has {}'.format(cache.n_rows, n_rows))
    candidates, mask = cache.padded('s2')
    states, actions = dataset.states, dataset.normalized_actions()
    inputs_all = np.concatenate([states, actions], axis=1)
    rng = np.random.default_rng([seed, 3])
    ensemble = new_ensemble(dataset.header.state_dim, dataset.header.action_dim, cfg, seed, dataset.normalizer)
    adams = [adam_init(net) for net in ensemble.online]
    k = cfg.k if cfg.mode == 'arq' else 1
    log_rows = []
    logger.info('Training {} critic(s) in {} mode, K={}, for {} steps'.format(cfg.n_nets, cfg.mode, k, cfg.steps))
    for step in range(1, cfg.steps + 1):
        idx = rng.integers(0, n_rows, size=cfg.batch_size)
        if cfg.mode == 'qbeta':
            picks = np.floor(rng.random(cfg.batch_size) * mask[idx].sum(axis=1)).astype(int)
            batch_candidates = candidates[idx, picks][:, None, :]
            batch_mask = np.ones((cfg.batch_size, 1), dtype=bool)
        else:
            batch_candidates, batch_mask = candidates[idx], mask[idx]
        targets = batch_targets(ensemble, dataset.rewards[idx], dataset.next_states[idx], dataset.dones[idx],
                                batch_candidates, batch_mask, k, cfg.gamma)
        online, losses, predictions = [], [], []
        for net_idx, net in enumerate(ensemble.online):
            out, tape = mlp_forward(net, inputs_all[idx])
            loss, grad = _loss_and_grad(out[:, 0] - targets, cfg.loss)
            if not np.isfinite(loss):
                raise NumericalFailure('Q loss went non-finite', step=step)
            grads, _ = mlp_backward(net, tape, grad[:, None])
            adams[net_idx], net = adam_step(adams[net_idx], net, grads, cfg.lr)
            online.append(net)
            losses.append(loss)
            predictions.append(out[:, 0])
        ensemble = QEnsemble(tuple(online), ensemble.target, ensemble.polyak,
                             ensemble.state_dim, ensemble.action_dim, ensemble.normalizer).polyak_update()
        if step % cfg.log_every == 0 or step == cfg.steps:
            row = (step, float(np.mean(losses)), float(np.mean(targets)), float(np.mean(np.min(predictions, axis=0))))
            log_rows.append(row)
            logger.info('q step {}/{} loss {:.5f} target {:.4f} q {:.4f}'.format(*row[:1], cfg.steps, *row[1:]))
    if log_path:
        with open(log_path, 'w', newline='') as the_file:
            writer = csv.writer(the_file)
            writer.writerow(LOG_FIELDS)
            writer.writerows(log_rows)
    return QEnsemble(tuple(quantize(net) for net in ensemble.online),
                     tuple(quantize(net) for net in ensemble.target),
                     ensemble.polyak, ensemble.state_dim, ensemble.action_dim, ensemble.normalizer)


def greedy_candidate(ensemble, state, candidates):
    """The candidate with the highest online Q"""
    candidates = np.atleast_2d(np.asarray(candidates, dtype=np.float64))
    return candidates[int(np.argmax(ensemble.q_values(state, candidates)))]


def save_q_ensemble(ensemble, path, cfg=None):
    networks = {}
    for idx, net in enumerate(ensemble.online):
        networks['online.{}'.format(idx)] = net
    for idx, net in enumerate(ensemble.target):
        networks['target.{}'.format(idx)] = net
    meta = {'kind': 'q',
            'n_nets': len(ensemble.online),
            'polyak': ensemble.polyak,
            'state_dim': ensemble.state_dim,
            'action_dim': ensemble.action_dim,
            'mode': cfg.mode if cfg else None,
            'normalizer': ensemble.normalizer.to_meta() if ensemble.normalizer else None}
    save_checkpoint(path, networks, meta=meta)


def load_q_ensemble(path):
    checkpoint = load_checkpoint(path)
    meta = checkpoint.meta
    if meta.get('kind') != 'q':
        raise ContractViolation('{} is not a Q checkpoint'.format(path))
    n_nets = meta['n_nets']
    normalizer = ActionNormalizer.from_meta(meta['normalizer']) if meta.get('normalizer') else None
    return QEnsemble(tuple(checkpoint.networks['online.{}'.format(idx)] for idx in range(n_nets)),
                     tuple(checkpoint.networks['target.{}'.format(idx)] for idx in range(n_nets)),
                     meta['polyak'], meta['state_dim'], meta['action_dim'], normalizer)
