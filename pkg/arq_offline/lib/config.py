# -*- coding: UTF-8 -*-
"""
RunConfig: the JSON file every subcommand reads, validated against
``RUN_CONFIG_SCHEMA`` and completed from ``const``.
"""
import copy
import os

import ujson
from jsonschema import validate, ValidationError
from vlab_api_common import get_logger

from arq_offline.lib import const
from arq_offline.lib.errors import ContractViolation

logger = get_logger(__name__, loglevel=const.ARQ_LOG_LEVEL)

CONFIG_NAME = 'config.json'


def _section(properties, description):
    return {"description": description,
            "type": "object",
            "properties": properties,
            "additionalProperties": False}


_INT = {"type": "integer", "minimum": 1}
_NUM = {"type": "number"}
_POS = {"type": "number", "exclusiveMinimum": True, "minimum": 0}

RUN_CONFIG_SCHEMA = {"$schema": "http://json-schema.org/draft-04/schema#",
                     "type": "object",
                     "properties": {
                         "seed": {
                             "description": "Root seed of every stage; ARQ_SEED overrides it",
                             "type": "integer"
                         },
                         "output_dir": {
                             "description": "Where artifacts are written when --out is not given",
                             "type": "string"
                         },
                         "env": _section({"name": {"enum": ["lineworld", "stitchgrid", "cliffbandit"]},
                                          "n_transitions": _INT},
                                         "Toy environment and dataset size"),
                         "sde": _section({"beta_min": _POS, "beta_max": _POS, "t_min": _POS, "t_max": _POS,
                                          "n_discretization": _INT},
                                         "VPSDE schedule"),
                         "score": _section({"width": _INT, "n_blocks": _INT, "n_frequencies": _INT,
                                            "steps": _INT, "batch_size": _INT, "lr": _POS,
                                            "ema_decay": {"type": "number", "minimum": 0, "maximum": 1},
                                            "weighting": {"enum": ["unit", "std2"]},
                                            "log_every": _INT},
                                           "Score model architecture and training"),
                         "sampler": _section({"n_steps": _INT,
                                              "snr": {"type": "number", "minimum": 0},
                                              "corrector_steps": {"type": "integer", "minimum": 0},
                                              "likelihood_tol": _POS},
                                             "Predictor-corrector sampler and likelihood integrator"),
                         "cache": _section({"n_samples": _INT, "log_epsilon": _NUM, "workers": _INT},
                                           "Support cache"),
                         "arq": _section({"k": _INT,
                                          "gamma": {"type": "number", "minimum": 0, "maximum": 1,
                                                    "exclusiveMaximum": True},
                                          "loss": {"enum": ["squared_l2", "huber"]},
                                          "lr": _POS, "steps": _INT, "batch_size": _INT,
                                          "polyak": {"type": "number", "minimum": 0, "maximum": 1},
                                          "width": _INT,
                                          "reward_mode": {"enum": ["raw", "normalized", "minus_one_except_goal"]},
                                          "reward_scale": _POS, "log_every": _INT},
                                         "Critic training"),
                         "policy": _section({"alpha": {"type": "number", "minimum": 0},
                                             "logits": {"enum": ["q_logits", "advantage_logits"]},
                                             "head": {"enum": ["gaussian", "deterministic"]},
                                             "width": _INT, "lr": _POS, "steps": _INT, "batch_size": _INT,
                                             "weight_clip": _POS, "rollout_pc_steps": _INT, "log_every": _INT},
                                            "Policy extraction"),
                         "dqp": _section({"mmd_samples": _INT, "mmd_bandwidth": _POS},
                                         "Tabular penalty settings"),
                         "eval": _section({"episodes": _INT,
                                           "gamma": {"type": "number", "minimum": 0, "maximum": 1},
                                           "workers": _INT},
                                          "Rollout evaluation"),
                         "grid": _section({"s_points": _INT, "a_points": _INT},
                                          "Density grid export"),
                     },
                     "additionalProperties": False
                    }


def defaults():
    """The fully-populated config implied by ``const``"""
    return {'seed': const.ARQ_DEFAULT_SEED,
            'output_dir': const.ARQ_OUTPUT_DIR,
            'env': {'name': const.DATA_ENV, 'n_transitions': const.DATA_N_TRANSITIONS},
            'sde': {'beta_min': const.SDE_BETA_MIN, 'beta_max': const.SDE_BETA_MAX,
                    't_min': const.SDE_T_MIN, 't_max': const.SDE_T_MAX,
                    'n_discretization': const.SDE_N_DISCRETIZATION},
            'score': {'width': const.SCORE_WIDTH, 'n_blocks': const.SCORE_BLOCKS,
                      'n_frequencies': const.SCORE_TIME_FREQUENCIES, 'steps': const.SCORE_STEPS,
                      'batch_size': const.SCORE_BATCH_SIZE, 'lr': const.SCORE_LR,
                      'ema_decay': const.SCORE_EMA_DECAY, 'weighting': const.SCORE_WEIGHTING,
                      'log_every': const.ARQ_LOG_EVERY},
            'sampler': {'n_steps': const.SAMPLER_N_STEPS, 'snr': const.SAMPLER_SNR,
                        'corrector_steps': const.SAMPLER_CORRECTOR_STEPS,
                        'likelihood_tol': const.LIKELIHOOD_TOL},
            'cache': {'n_samples': const.CACHE_N_SAMPLES, 'log_epsilon': const.CACHE_LOG_EPSILON,
                      'workers': const.ARQ_WORKERS},
            'arq': {'k': const.ARQ_K, 'gamma': const.ARQ_GAMMA, 'loss': const.ARQ_LOSS, 'lr': const.ARQ_LR,
                    'steps': const.ARQ_STEPS, 'batch_size': const.ARQ_BATCH_SIZE, 'polyak': const.ARQ_POLYAK,
                    'width': const.ARQ_Q_WIDTH, 'reward_mode': const.ARQ_REWARD_MODE,
                    'reward_scale': const.ARQ_REWARD_SCALE, 'log_every': const.ARQ_LOG_EVERY},
            'policy': {'alpha': const.POLICY_ALPHA, 'logits': const.POLICY_LOGITS, 'head': const.POLICY_HEAD,
                       'width': const.POLICY_WIDTH, 'lr': const.POLICY_LR, 'steps': const.POLICY_STEPS,
                       'batch_size': const.POLICY_BATCH_SIZE, 'weight_clip': const.POLICY_WEIGHT_CLIP,
                       'rollout_pc_steps': const.POLICY_ROLLOUT_PC_STEPS, 'log_every': const.ARQ_LOG_EVERY},
            'dqp': {'mmd_samples': const.DQP_MMD_SAMPLES, 'mmd_bandwidth': const.DQP_MMD_BANDWIDTH},
            'eval': {'episodes': const.EVAL_EPISODES, 'gamma': const.EVAL_GAMMA, 'workers': const.ARQ_WORKERS},
            'grid': {'s_points': const.GRID_S_POINTS, 'a_points': const.GRID_A_POINTS}}


def resolve_config(raw=None, seed_override=const.ARQ_SEED):
    """Validate a user config and fill in everything it leaves out

    :Returns: Dictionary

    :param raw: The parsed config file, or None for all defaults
    :type raw: Dictionary

    :param seed_override: Replaces the seed when not None (ARQ_SEED)
    :type seed_override: Integer
    """
    raw = raw or {}
    try:
        validate(raw, RUN_CONFIG_SCHEMA)
    except ValidationError as doh:
        where = '.'.join(str(part) for part in doh.path) or 'config'
        raise ContractViolation('invalid config at {}: {}'.format(where, doh.message))
    resolved = defaults()
    for key, value in raw.items():
        if isinstance(value, dict):
            resolved[key].update(copy.deepcopy(value))
        else:
            resolved[key] = value
    if seed_override is not None:
        logger.debug('ARQ_SEED overrides the config seed with {}'.format(seed_override))
        resolved['seed'] = int(seed_override)
    return resolved


def load_config(path):
    """Read and resolve a RunConfig file

    :Returns: Dictionary
    """
    try:
        with open(path) as the_file:
            raw = ujson.loads(the_file.read())
    except OSError as doh:
        raise ContractViolation('cannot read config {}: {}'.format(path, doh.strerror))
    except ValueError as doh:
        raise ContractViolation('config {} is not valid JSON: {}'.format(path, doh))
    if not isinstance(raw, dict):
        raise ContractViolation('config {} must hold a JSON object'.format(path))
    return resolve_config(raw)


def write_config(config, out_dir):
    """Echo the resolved config next to the run's artifacts"""
    path = os.path.join(out_dir, CONFIG_NAME)
    with open(path, 'w') as the_file:
        the_file.write(ujson.dumps(config, indent=2, sort_keys=True))
        the_file.write('\n')
    return path
