# -*- coding: UTF-8 -*-
"""
Entry point logic for the pipeline stages
"""
from vlab_api_common import get_task_logger

from arq_offline.lib import const
from arq_offline.lib.errors import exit_code_for
from arq_offline.lib.worker import pipeline


def _run_stage(task_id, txn_id, stage, *args, **kwargs):
    logger = get_task_logger(txn_id=txn_id, task_id=task_id, loglevel=const.ARQ_LOG_LEVEL.upper())
    resp = {'content': {}, 'error': None, 'params': {}}
    try:
        logger.info('Task starting')
        resp['content'] = stage(*args, logger, **kwargs)
    except (ValueError, ArithmeticError, RuntimeError, OSError) as doh:
        logger.error('Task failed: {}'.format(doh))
        resp['error'] = '{}'.format(doh)
        resp['params']['exit_code'] = exit_code_for(doh)
    else:
        logger.info('Task complete')
    return resp


def gen_data(config, out_dir, txn_id):
    """Generate the offline dataset

    :Returns: Dictionary

    :param config: The resolved RunConfig
    :type config: Dictionary

    :param out_dir: Where the artifacts live
    :type out_dir: String

    :param txn_id: Tracks the run through the logs
    :type txn_id: String
    """
    return _run_stage('gen-data', txn_id, pipeline.gen_data, config, out_dir)


def bc_train(config, out_dir, txn_id):
    """Train the behavior score model

    :Returns: Dictionary
    """
    return _run_stage('bc-train', txn_id, pipeline.bc_train, config, out_dir)


def build_cache(config, out_dir, txn_id):
    """Populate the in-support action cache

    :Returns: Dictionary
    """
    return _run_stage('build-cache', txn_id, pipeline.build_cache, config, out_dir)


def q_train(config, out_dir, mode, txn_id):
    """Train the critic

    :Returns: Dictionary

    :param mode: ``arq`` or ``qbeta``
    :type mode: String
    """
    return _run_stage('q-train', txn_id, pipeline.q_train, config, out_dir, mode)


def policy_train(config, out_dir, mode, txn_id):
    """Extract a policy from the critic

    :Returns: Dictionary

    :param mode: ``implicit-eval`` or ``awr``
    :type mode: String
    """
    return _run_stage('policy-train', txn_id, pipeline.policy_train, config, out_dir, mode)


def evaluate(config, out_dir, policy_kind, txn_id):
    """Roll out a policy in its environment

    :Returns: Dictionary

    :param policy_kind: ``implicit``, ``awr`` or ``bc``
    :type policy_kind: String
    """
    return _run_stage('eval', txn_id, pipeline.evaluate, config, out_dir, policy_kind)


def ablation(config, out_dir, txn_id):
    """Compare the score-only, Q^beta and ARQ implicit policies

    :Returns: Dictionary
    """
    return _run_stage('ablation', txn_id, pipeline.ablation, config, out_dir)


def verify_theorem1(n_states, n_actions, iters, seed, txn_id, penalty='random', config=None):
    """Check the two tabular iteration schemes agree on a random MDP

    :Returns: Dictionary

    :param penalty: ``random``, ``support_set``, ``brac_kl`` or ``mmd2``
    :type penalty: String

    :param config: The resolved RunConfig; its cache and dqp sections shape the penalty
    :type config: Dictionary
    """
    return _run_stage('verify-theorem1', txn_id, pipeline.verify_theorem1, n_states, n_actions, iters, seed,
                      penalty=penalty, config=config)


def density_grid(config, out_dir, txn_id):
    """Export the learned behavior density over a (state, action) grid

    :Returns: Dictionary
    """
    return _run_stage('density-grid', txn_id, pipeline.density_grid_stage, config, out_dir)
