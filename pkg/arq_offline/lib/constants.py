# -*- coding: UTF-8 -*-
"""
All the things can override via Environment variables are keep in this one file.

The numeric defaults are the desk-scale values for every config-exposed
parameter; a RunConfig file overrides them per run.
"""
import math
from os import environ
from collections import namedtuple, OrderedDict


def _seed(value):
    return None if value in (None, '') else int(value)


DEFINED = OrderedDict([
            ('ARQ_LOG_LEVEL', environ.get('ARQ_LOG_LEVEL', 'INFO')),
            ('ARQ_SEED', _seed(environ.get('ARQ_SEED'))),
            ('ARQ_WORKERS', int(environ.get('ARQ_WORKERS', 1))),
            ('ARQ_SLOW_TESTS', environ.get('ARQ_SLOW_TESTS', '').lower() in ('1', 'true', 'yes')),
            ('ARQ_OUTPUT_DIR', environ.get('ARQ_OUTPUT_DIR', 'arq-run')),
            ('ARQ_DEFAULT_SEED', 0),
            # data
            ('DATA_ENV', environ.get('ARQ_ENV', 'lineworld')),
            ('DATA_N_TRANSITIONS', 2000),
            # VPSDE
            ('SDE_BETA_MIN', 0.1),
            ('SDE_BETA_MAX', 20.0),
            ('SDE_T_MIN', 1e-3),
            ('SDE_T_MAX', 1.0),
            ('SDE_N_DISCRETIZATION', 500),
            # score model
            ('SCORE_WIDTH', int(environ.get('ARQ_SCORE_WIDTH', 64))),
            ('SCORE_BLOCKS', 3),
            ('SCORE_TIME_FREQUENCIES', 8),
            ('SCORE_STEPS', int(environ.get('ARQ_SCORE_STEPS', 20000))),
            ('SCORE_BATCH_SIZE', 256),
            ('SCORE_LR', 1e-4),
            ('SCORE_EMA_DECAY', 0.999),
            ('SCORE_WEIGHTING', 'std2'),
            # sampler / cache
            ('SAMPLER_N_STEPS', 500),
            ('SAMPLER_SNR', 0.16),
            ('SAMPLER_CORRECTOR_STEPS', 1),
            ('LIKELIHOOD_TOL', 1e-5),
            ('DIVERGENCE_STEP', 1e-4),
            ('CACHE_N_SAMPLES', 30),
            ('CACHE_LOG_EPSILON', -5.0),
            # ARQ
            ('ARQ_K', 9),
            ('ARQ_GAMMA', 0.99),
            ('ARQ_LOSS', 'huber'),
            ('ARQ_LR', 3e-4),
            ('ARQ_STEPS', int(environ.get('ARQ_Q_STEPS', 50000))),
            ('ARQ_BATCH_SIZE', 256),
            ('ARQ_POLYAK', 0.995),
            ('ARQ_Q_WIDTH', 64),
            ('ARQ_REWARD_MODE', 'raw'),
            ('ARQ_REWARD_SCALE', 1000.0),
            ('ARQ_LOG_EVERY', 1000),
            # policy
            ('POLICY_ALPHA', 1.0),
            ('POLICY_LOGITS', 'advantage_logits'),
            ('POLICY_HEAD', 'gaussian'),
            ('POLICY_WIDTH', 64),
            ('POLICY_LR', 3e-4),
            ('POLICY_STEPS', int(environ.get('ARQ_POLICY_STEPS', 20000))),
            ('POLICY_BATCH_SIZE', 256),
            ('POLICY_WEIGHT_CLIP', 100.0),
            ('POLICY_ROLLOUT_PC_STEPS', 100),
            # dqp
            ('DQP_MMD_SAMPLES', 4),
            ('DQP_MMD_BANDWIDTH', 1.0),
            # eval / grid
            ('EVAL_EPISODES', 100),
            ('EVAL_GAMMA', 0.99),
            ('GRID_S_POINTS', 50),
            ('GRID_A_POINTS', 50),
          ])

Constants = namedtuple('Constants', list(DEFINED.keys()))

# The '*' expands the list, just liked passing a function *args
const = Constants(*list(DEFINED.values()))

LN_EPSILON = const.CACHE_LOG_EPSILON
EPSILON = math.exp(LN_EPSILON)
