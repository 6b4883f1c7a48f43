# -*- coding: UTF-8 -*-
"""
Toy continuous-action environments with known optima, their behavior
policies, and offline dataset generation.

lineworld
    Contextual bandit. s ~ U[-1, 1]; behavior puts raised-cosine modes of
    half-width 0.1 at a = +/-(0.3 + 0.4|s|) with nothing in between. The
    high-reward mode is the positive one for s >= 0 and the negative one
    for s < 0, and carries weight 0.25. Reward 1 in the high mode, 0.2 in
    the low mode, -1 anywhere else. Optimal return 1.0, behavior return 0.4.

stitchgrid
    A point on an 8-waypoint line (x in k/7) with a clipped y dither axis.
    Start at the origin, goal at x = 1. Reward -1 per step and 0 on the
    step that reaches the goal, horizon 16. Optimal return -6. Behavior
    data only covers origin -> midpoint and midpoint -> goal segments.

cliffbandit
    Constant state. Reward 1 - a^2 for |a| <= 0.8, -10 beyond. Behavior
    covers |a| in [0.2, 0.8] only. Optimal return 1.0 at a = 0; best
    in-support return 0.96 at |a| = 0.2.
"""
from dataclasses import dataclass

import numpy as np
from scipy.stats import cosine
from vlab_api_common import get_logger

from arq_offline.lib import const
from arq_offline.lib.dataset import Transition, build_dataset
from arq_offline.lib.errors import ContractViolation

logger = get_logger(__name__, loglevel=const.ARQ_LOG_LEVEL)


@dataclass(frozen=True)
class EnvDescriptor:
    name: str
    state_dim: int
    action_dim: int
    action_low: tuple
    action_high: tuple
    horizon: int
    reward_low: float
    reward_high: float
    optimal_return: float
    behavior_return: float = None


@dataclass(frozen=True)
class ModeMixture:
    """Mixture of raised-cosine bumps; exact sampler and density"""
    centers: tuple
    weights: tuple
    half_width: float

    def _laws(self):
        return [cosine(loc=center, scale=self.half_width / np.pi) for center in self.centers]

    def pdf(self, actions):
        actions = np.asarray(actions, dtype=np.float64)
        return sum(weight * law.pdf(actions) for weight, law in zip(self.weights, self._laws()))

    def logpdf(self, actions):
        with np.errstate(divide='ignore'):
            return np.log(self.pdf(actions))

    def sample(self, rng, size=None):
        laws = self._laws()
        count = 1 if size is None else int(np.prod(size))
        picks = rng.choice(len(laws), size=count, p=np.asarray(self.weights))
        draws = np.array([laws[pick].rvs(random_state=rng) for pick in picks])
        return float(draws[0]) if size is None else draws.reshape(size)

    def intervals(self):
        return [(center - self.half_width, center + self.half_width) for center in self.centers]


LINEWORLD_HALF_WIDTH = 0.1
LINEWORLD_HIGH_WEIGHT = 0.25


def lineworld_modes(s):
    """Centers of the (high-reward, low-reward) behavior modes at state s"""
    offset = 0.3 + 0.4 * abs(s)
    high = offset if s >= 0 else -offset
    return high, -high


def lineworld_behavior(s):
    """Behavior conditional beta(a|s) of lineworld

    :Returns: ModeMixture

    :param s: The scalar state
    :type s: Float
    """
    s = float(s)
    if not -1.0 <= s <= 1.0:
        raise ContractViolation('lineworld states lie in [-1, 1], got {}'.format(s))
    high, low = lineworld_modes(s)
    return ModeMixture(centers=(high, low),
                       weights=(LINEWORLD_HIGH_WEIGHT, 1.0 - LINEWORLD_HIGH_WEIGHT),
                       half_width=LINEWORLD_HALF_WIDTH)


def _check_action(action, dim):
    action = np.asarray(action, dtype=np.float64).reshape(-1)
    if action.shape != (dim,):
        raise ContractViolation('expected a {}-dim action, got shape {}'.format(dim, action.shape))
    if not np.all(np.isfinite(action)):
        raise ContractViolation('action is not finite: {}'.format(action.tolist()))
    return action


class ToyEnv:
    """Base class; subclasses define ``descriptor``, ``reset``, ``step`` and ``behavior``"""
    descriptor = None

    @property
    def name(self):
        return self.descriptor.name

    def reset(self, rng):
        raise NotImplementedError

    def step(self, state, action, rng):
        """:Returns: Tuple (next_state, reward, done, goal)"""
        raise NotImplementedError

    def behavior(self, state, rng):
        raise NotImplementedError

    def optimal_action(self, state):
        raise NotImplementedError

    def episode(self, behavior, rng, index):
        """Roll the behavior from a fresh start; ``index`` numbers the episodes of a dataset"""
        return self._rollout(self.reset(rng), behavior, rng)

    def arrange(self, episodes):
        return episodes

    def _rollout(self, state, behavior, rng, stop=None):
        transitions = []
        for _ in range(self.descriptor.horizon):
            action = np.asarray(behavior(state, rng), dtype=np.float64)
            next_state, reward, done, goal = self.step(state, action, rng)
            transitions.append(Transition(state, action, reward, next_state, done, goal))
            if done or (stop is not None and stop(next_state)):
                break
            state = next_state
        return transitions


class LineWorld(ToyEnv):
    descriptor = EnvDescriptor(name='lineworld', state_dim=1, action_dim=1,
                               action_low=(-1.0,), action_high=(1.0,), horizon=1,
                               reward_low=-1.0, reward_high=1.0,
                               optimal_return=1.0, behavior_return=0.4)

    def reset(self, rng):
        return np.array([rng.uniform(-1.0, 1.0)])

    def step(self, state, action, rng):
        action = _check_action(action, 1)
        high, low = lineworld_modes(float(state[0]))
        a = float(action[0])
        if abs(a - high) <= LINEWORLD_HALF_WIDTH:
            return np.array(state, dtype=np.float64), 1.0, True, True
        if abs(a - low) <= LINEWORLD_HALF_WIDTH:
            return np.array(state, dtype=np.float64), 0.2, True, False
        return np.array(state, dtype=np.float64), -1.0, True, False

    def behavior(self, state, rng):
        return np.array([lineworld_behavior(state[0]).sample(rng)])

    def optimal_action(self, state):
        return np.array([lineworld_modes(float(state[0]))[0]])


class CliffBandit(ToyEnv):
    descriptor = EnvDescriptor(name='cliffbandit', state_dim=1, action_dim=1,
                               action_low=(-1.0,), action_high=(1.0,), horizon=1,
                               reward_low=-10.0, reward_high=1.0,
                               optimal_return=1.0, behavior_return=0.72)
    cliff = 0.8
    in_support_optimum = 0.96

    def reset(self, rng):
        return np.zeros(1)

    def step(self, state, action, rng):
        a = float(_check_action(action, 1)[0])
        if abs(a) <= self.cliff:
            return np.zeros(1), 1.0 - a * a, True, True
        return np.zeros(1), -10.0, True, False

    def behavior(self, state, rng):
        magnitude = rng.uniform(0.2, self.cliff)
        sign = 1.0 if rng.random() < 0.5 else -1.0
        return np.array([sign * magnitude])

    def optimal_action(self, state):
        return np.zeros(1)


class StitchGrid(ToyEnv):
    descriptor = EnvDescriptor(name='stitchgrid', state_dim=2, action_dim=2,
                               action_low=(-1.0, -1.0), action_high=(1.0, 1.0), horizon=16,
                               reward_low=-1.0, reward_high=0.0,
                               optimal_return=-6.0)
    waypoints = 7
    y_limit = 3
    midpoint = 4.0 / 7.0
    goal_x = 13.0 / 14.0
    noise_std = 0.05

    def reset(self, rng):
        return np.zeros(2)

    def _snap(self, position):
        cells = np.round(position * self.waypoints)
        x = np.clip(cells[0], 0, self.waypoints)
        y = np.clip(cells[1], -self.y_limit, self.y_limit)
        return np.array([x, y]) / self.waypoints

    def step(self, state, action, rng):
        action = np.clip(_check_action(action, 2), -1.0, 1.0)
        next_state = self._snap(np.asarray(state, dtype=np.float64) + action / self.waypoints)
        if next_state[0] >= self.goal_x:
            return next_state, 0.0, True, True
        return next_state, -1.0, False, False

    def behavior(self, state, rng):
        pick = rng.random()
        if pick < 0.5:
            move = np.array([1.0, 0.0])
        elif pick < 0.75:
            move = np.array([0.0, 1.0])
        else:
            move = np.array([0.0, -1.0])
        return np.clip(move + rng.normal(0.0, self.noise_std, size=2), -1.0, 1.0)

    def optimal_action(self, state):
        return np.array([1.0, 0.0])

    def episode(self, behavior, rng, index):
        """Even episodes run origin -> midpoint (truncated there), odd ones midpoint -> goal"""
        if index % 2 == 0:
            return self._rollout(self.reset(rng), behavior, rng,
                                 stop=lambda state: state[0] >= self.midpoint - 1e-12)
        return self._rollout(np.array([self.midpoint, 0.0]), behavior, rng)

    def arrange(self, episodes):
        # second halves first, so no first half is followed by a row starting where it stopped
        late = [episode for episode in episodes if episode[0].s[0] > 0]
        early = [episode for episode in episodes if episode[0].s[0] <= 0]
        return late + early


ENVS = {'lineworld': LineWorld, 'stitchgrid': StitchGrid, 'cliffbandit': CliffBandit}


def make_env(name):
    try:
        return ENVS[name]()
    except KeyError:
        raise ContractViolation('unknown env {!r}; choose from {}'.format(name, ', '.join(sorted(ENVS))))


def generate_dataset(env, behavior, n_transitions, seed):
    """Roll the behavior policy until ``n_transitions`` rows are collected

    :Returns: arq_offline.lib.dataset.OfflineDataset

    :param env: The environment
    :type env: ToyEnv

    :param behavior: ``behavior(state, rng) -> action``; None uses the env's own
    :type behavior: Callable

    :param n_transitions: Rows to collect
    :type n_transitions: Integer

    :param seed: Generator seed, recorded in the header
    :type seed: Integer
    """
    if n_transitions < 1:
        raise ContractViolation('n_transitions must be at least 1, got {}'.format(n_transitions))
    behavior = behavior or env.behavior
    rng = np.random.default_rng(seed)
    episodes = []
    collected = 0
    index = 0
    while collected < n_transitions:
        episode = env.episode(behavior, rng, index)[:n_transitions - collected]
        episodes.append(episode)
        collected += len(episode)
        index += 1
    transitions = [row for episode in env.arrange(episodes) for row in episode]
    logger.debug('Generated {} transitions over {} episodes of {}'.format(len(transitions), index, env.name))
    return build_dataset(transitions, env.name, seed)
