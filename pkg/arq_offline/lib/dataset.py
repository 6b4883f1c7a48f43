# -*- coding: UTF-8 -*-
"""
Offline datasets: transitions, the normalization header, and the
JSON-lines file format (header on line 1, one transition per line after).
"""
from collections import namedtuple
from dataclasses import dataclass, asdict, replace

import numpy as np
import ujson
from vlab_api_common import get_logger

from arq_offline.lib import const
from arq_offline.lib.errors import ContractViolation, DatasetFormatError

logger = get_logger(__name__, loglevel=const.ARQ_LOG_LEVEL)

Transition = namedtuple('Transition', ['s', 'a', 'r', 's2', 'done', 'goal'])
ROW_KEYS = ('s', 'a', 'r', 's2', 'done', 'goal')


@dataclass(frozen=True)
class ActionNormalizer:
    """Affine map from env actions to [-1, 1] per dimension"""
    low: tuple
    high: tuple

    @property
    def _mid(self):
        return (np.asarray(self.low) + np.asarray(self.high)) / 2.0

    @property
    def _half(self):
        half = (np.asarray(self.high) - np.asarray(self.low)) / 2.0
        # a constant dimension maps to 0
        return np.where(half > 0, half, 1.0)

    def normalize(self, actions):
        return (np.asarray(actions, dtype=np.float64) - self._mid) / self._half

    def denormalize(self, actions):
        return np.asarray(actions, dtype=np.float64) * self._half + self._mid

    def to_meta(self):
        return {'low': list(self.low), 'high': list(self.high)}

    @classmethod
    def from_meta(cls, meta):
        return cls(tuple(meta['low']), tuple(meta['high']))

    @classmethod
    def identity(cls, action_dim):
        return cls((-1.0,) * action_dim, (1.0,) * action_dim)


@dataclass(frozen=True)
class DatasetHeader:
    state_dim: int
    action_dim: int
    action_low: tuple
    action_high: tuple
    env: str
    seed: int
    n_transitions: int


@dataclass(frozen=True, eq=False)
class OfflineDataset:
    header: DatasetHeader
    states: np.ndarray
    actions: np.ndarray
    rewards: np.ndarray
    next_states: np.ndarray
    dones: np.ndarray
    goals: np.ndarray

    def __len__(self):
        return self.rewards.shape[0]

    def __iter__(self):
        for idx in range(len(self)):
            yield self.transition(idx)

    def transition(self, idx):
        return Transition(self.states[idx], self.actions[idx], float(self.rewards[idx]),
                          self.next_states[idx], bool(self.dones[idx]), bool(self.goals[idx]))

    @property
    def normalizer(self):
        return ActionNormalizer(self.header.action_low, self.header.action_high)

    def normalized_actions(self):
        return self.normalizer.normalize(self.actions)

    def with_rewards(self, rewards):
        rewards = np.asarray(rewards, dtype=np.float64)
        if rewards.shape != self.rewards.shape:
            raise ContractViolation('reward vector has the wrong length')
        return replace(self, rewards=rewards)


def build_dataset(transitions, env_name, seed):
    """Pack transitions into an ``OfflineDataset`` and compute the header

    :Returns: OfflineDataset

    :param transitions: The rows, in order
    :type transitions: List of Transition

    :param env_name: Recorded in the header
    :type env_name: String

    :param seed: The generator seed, recorded in the header
    :type seed: Integer
    """
    if not transitions:
        raise ContractViolation('a dataset needs at least one transition')
    states = np.array([np.asarray(t.s, dtype=np.float64) for t in transitions])
    actions = np.array([np.asarray(t.a, dtype=np.float64) for t in transitions])
    next_states = np.array([np.asarray(t.s2, dtype=np.float64) for t in transitions])
    rewards = np.array([float(t.r) for t in transitions])
    if states.ndim != 2 or actions.ndim != 2 or next_states.shape != states.shape:
        raise ContractViolation('transitions have inconsistent dimensions')
    if not np.all(np.isfinite(rewards)):
        raise ContractViolation('rewards must be finite')
    header = DatasetHeader(state_dim=states.shape[1],
                           action_dim=actions.shape[1],
                           action_low=tuple(actions.min(axis=0).tolist()),
                           action_high=tuple(actions.max(axis=0).tolist()),
                           env=env_name,
                           seed=int(seed),
                           n_transitions=len(transitions))
    return OfflineDataset(header, states, actions, rewards, next_states,
                          np.array([bool(t.done) for t in transitions]),
                          np.array([bool(t.goal) for t in transitions]))


def iter_trajectories(dataset):
    """Yield ``(start, stop)`` row ranges, one per trajectory

    A trajectory ends at a done flag, or where the next row does not start
    at this row's s2.
    """
    start = 0
    n_rows = len(dataset)
    for idx in range(n_rows):
        last = idx == n_rows - 1
        if last or dataset.dones[idx] or not np.array_equal(dataset.next_states[idx], dataset.states[idx + 1]):
            yield start, idx + 1
            start = idx + 1


def save_dataset(dataset, path):
    """Write the dataset as JSON lines

    :Returns: None

    :param dataset: What to write
    :type dataset: OfflineDataset

    :param path: Destination file
    :type path: String
    """
    with open(path, 'w') as the_file:
        the_file.write(ujson.dumps(asdict(dataset.header)))
        the_file.write('\n')
        for row in dataset:
            record = {'s': row.s.tolist(), 'a': row.a.tolist(), 'r': row.r,
                      's2': row.s2.tolist(), 'done': row.done, 'goal': row.goal}
            the_file.write(ujson.dumps(record))
            the_file.write('\n')
    logger.debug('Wrote {} transitions to {}'.format(len(dataset), path))


def _vector(record, key, dim, row):
    values = record[key]
    if not isinstance(values, list) or len(values) != dim:
        raise ContractViolation('row {}: {!r} must have {} entries'.format(row, key, dim))
    if any(isinstance(v, bool) or not isinstance(v, (int, float)) for v in values):
        raise ContractViolation('row {}: {!r} must hold numbers, got {!r}'.format(row, key, values))
    return [float(v) for v in values]


def load_dataset(path):
    """Read a dataset written by ``save_dataset``

    :Returns: OfflineDataset

    :param path: Source file
    :type path: String
    """
    with open(path) as the_file:
        lines = the_file.read().split('\n')
    if lines and lines[-1] == '':
        lines.pop()
    if not lines:
        raise DatasetFormatError('empty dataset file', line=1)
    try:
        raw_header = ujson.loads(lines[0])
        header = DatasetHeader(state_dim=int(raw_header['state_dim']),
                               action_dim=int(raw_header['action_dim']),
                               action_low=tuple(float(v) for v in raw_header['action_low']),
                               action_high=tuple(float(v) for v in raw_header['action_high']),
                               env=str(raw_header['env']),
                               seed=int(raw_header['seed']),
                               n_transitions=int(raw_header['n_transitions']))
    except (ValueError, KeyError, TypeError) as doh:
        raise DatasetFormatError('malformed header: {}'.format(doh), line=1)
    if len(header.action_low) != header.action_dim or len(header.action_high) != header.action_dim:
        raise DatasetFormatError('action bounds do not match action_dim', line=1)

    columns = {key: [] for key in ROW_KEYS}
    for offset, line in enumerate(lines[1:]):
        row, line_no = offset, offset + 2
        try:
            record = ujson.loads(line)
            if not isinstance(record, dict) or set(record) != set(ROW_KEYS):
                raise ValueError('expected keys {}'.format(', '.join(ROW_KEYS)))
            reward = record['r']
            if isinstance(reward, bool) or not isinstance(reward, (int, float)):
                raise ValueError('r must be a number')
            done, goal = record['done'], record['goal']
            if not isinstance(done, bool) or not isinstance(goal, bool):
                raise ValueError('done and goal must be booleans')
            state = _vector(record, 's', header.state_dim, row)
            action = _vector(record, 'a', header.action_dim, row)
            next_state = _vector(record, 's2', header.state_dim, row)
        except (ValueError, TypeError) as doh:
            raise DatasetFormatError('malformed transition: {}'.format(doh), line=line_no)
        columns['s'].append(state)
        columns['a'].append(action)
        columns['s2'].append(next_state)
        columns['r'].append(float(reward))
        columns['done'].append(done)
        columns['goal'].append(goal)
    n_rows = len(columns['r'])
    if n_rows != header.n_transitions:
        raise DatasetFormatError('header promises {} transitions, file holds {}'.format(
                                 header.n_transitions, n_rows), line=n_rows + 2)
    actions = np.array(columns['a'], dtype=np.float64).reshape(n_rows, header.action_dim)
    outside = np.any((actions < np.asarray(header.action_low)) | (actions > np.asarray(header.action_high)), axis=1)
    if np.any(outside):
        row = int(np.argmax(outside))
        raise ContractViolation('row {}: action lies outside the declared bounds'.format(row))
    return OfflineDataset(header,
                          np.array(columns['s'], dtype=np.float64).reshape(n_rows, header.state_dim),
                          actions,
                          np.array(columns['r'], dtype=np.float64),
                          np.array(columns['s2'], dtype=np.float64).reshape(n_rows, header.state_dim),
                          np.array(columns['done'], dtype=bool),
                          np.array(columns['goal'], dtype=bool))
