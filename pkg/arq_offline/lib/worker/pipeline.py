# -*- coding: UTF-8 -*-
"""
Business logic of every pipeline stage. Each stage reads the previous
stages' artifacts from the output directory and writes its own there.
"""
import csv
import os

import numpy as np
import ujson

from arq_offline.lib import const
from arq_offline.lib.arq import ArqConfig, arq_train, load_q_ensemble, save_q_ensemble, shape_rewards
from arq_offline.lib.config import defaults
from arq_offline.lib.dataset import load_dataset, save_dataset
from arq_offline.lib.dqp import random_mdp, run_theorem1, tabular_penalty
from arq_offline.lib.envs import generate_dataset, make_env
from arq_offline.lib.errors import ContractViolation, NumericalFailure
from arq_offline.lib.nn import load_checkpoint, save_checkpoint
from arq_offline.lib.policy import (AwrConfig, BehaviorPolicy, ImplicitPolicy, awr_train, evaluate_policy,
                                    load_awr_policy, save_awr_policy)
from arq_offline.lib.sampling import (SamplerConfig, build_support_cache, load_support_cache, log_likelihood,
                                      save_support_cache)
from arq_offline.lib.score import ScoreConfig, load_score_model, save_score_model, train_score_model
from arq_offline.lib.sde import SdeConfig

DATASET = 'dataset.jsonl'
SCORE = 'score.json'
CACHE = 'cache.jsonl'
Q = 'q.json'
Q_LOG = 'q_log.csv'
POLICY = 'policy.json'
EVAL = 'eval.json'
GRID_CSV = 'grid.csv'
GRID_PGM = 'grid.pgm'
ABLATION = 'ablation.json'
ABLATION_ARMS = ('score_only', 'qbeta', 'arq')
THEOREM1_TOLERANCE = 1e-8


def _path(out_dir, name):
    return os.path.join(out_dir, name)


def _require(out_dir, name, what):
    path = _path(out_dir, name)
    if not os.path.isfile(path):
        raise ContractViolation('{} missing: {} (run the earlier stage first)'.format(what, path))
    return path


def sde_config(config):
    return SdeConfig(**config['sde'])


def score_config(config):
    return ScoreConfig(sde=sde_config(config), **config['score'])


def sampler_config(config, n_steps=None):
    section = config['sampler']
    return SamplerConfig(n_steps=n_steps or section['n_steps'], snr=section['snr'],
                         corrector_steps=section['corrector_steps'])


def arq_config(config, mode):
    return ArqConfig(mode=mode, **config['arq'])


def awr_config(config):
    section = config['policy']
    return AwrConfig(head=section['head'], width=section['width'], lr=section['lr'], steps=section['steps'],
                     batch_size=section['batch_size'], weight_clip=section['weight_clip'],
                     log_every=section['log_every'])


def gen_data(config, out_dir, logger):
    """Roll the env's behavior policy into ``dataset.jsonl``

    :Returns: Dictionary
    """
    env = make_env(config['env']['name'])
    dataset = generate_dataset(env, None, config['env']['n_transitions'], config['seed'])
    path = _path(out_dir, DATASET)
    save_dataset(dataset, path)
    logger.info('Wrote {} transitions of {} to {}'.format(len(dataset), env.name, path))
    return {'dataset': path, 'env': env.name, 'n_transitions': len(dataset)}


def bc_train(config, out_dir, logger):
    """Fit the score model to the dataset actions"""
    dataset = load_dataset(_require(out_dir, DATASET, 'dataset'))
    model = train_score_model(dataset, score_config(config), config['seed'])
    path = _path(out_dir, SCORE)
    save_score_model(model, path)
    logger.info('Score model saved to {}'.format(path))
    return {'model': path, 'final_loss': float(np.mean(model.losses[-100:]))}


def build_cache(config, out_dir, logger):
    """Sample and filter in-support actions for every s and s2"""
    dataset = load_dataset(_require(out_dir, DATASET, 'dataset'))
    model = load_score_model(_path(out_dir, SCORE))
    cache = build_support_cache(model, dataset, config['cache']['n_samples'], config['cache']['log_epsilon'],
                                sampler_config(config), config['seed'], workers=config['cache']['workers'],
                                tol=config['sampler']['likelihood_tol'])
    path = _path(out_dir, CACHE)
    save_support_cache(cache, path)
    logger.info('Cached {} states ({} fallbacks) in {}'.format(len(cache.entries), cache.fallback_count, path))
    return {'cache': path, 'states': len(cache.entries), 'fallbacks': cache.fallback_count}


def _training_inputs(config, out_dir):
    dataset = load_dataset(_require(out_dir, DATASET, 'dataset'))
    cache = load_support_cache(_require(out_dir, CACHE, 'support cache'))
    section = config['arq']
    return shape_rewards(dataset, section['reward_mode'], section['reward_scale']), cache


def q_train(config, out_dir, mode, logger):
    """Train the critic(s) with cache-restricted bootstrapping"""
    dataset, cache = _training_inputs(config, out_dir)
    cfg = arq_config(config, mode)
    ensemble = arq_train(dataset, cache, cfg, config['seed'], log_path=_path(out_dir, Q_LOG))
    path = _path(out_dir, Q)
    save_q_ensemble(ensemble, path, cfg)
    logger.info('Critic saved to {}'.format(path))
    return {'q': path, 'mode': mode, 'log': _path(out_dir, Q_LOG)}


def policy_train(config, out_dir, mode, logger):
    """``awr`` fits an explicit policy; ``implicit-eval`` records the implicit policy's settings"""
    path = _path(out_dir, POLICY)
    section = config['policy']
    if mode == 'implicit-eval':
        _require(out_dir, Q, 'Q checkpoint')
        save_checkpoint(path, {}, meta={'kind': 'implicit', 'alpha': section['alpha'],
                                        'logits': section['logits'], 'seed': config['seed']})
        return {'policy': path, 'mode': mode}
    if mode != 'awr':
        raise ContractViolation('policy mode must be implicit-eval or awr, got {!r}'.format(mode))
    dataset, cache = _training_inputs(config, out_dir)
    ensemble = load_q_ensemble(_path(out_dir, Q))
    policy = awr_train(dataset, ensemble, cache, section['alpha'], awr_config(config), config['seed'])
    save_awr_policy(policy, path)
    logger.info('AWR policy saved to {}'.format(path))
    return {'policy': path, 'mode': mode}


def _implicit_policy(config, out_dir, ensemble=None, alpha=None):
    section = config['policy']
    stored_alpha, logits, seed = section['alpha'], section['logits'], config['seed']
    if ensemble is None and os.path.isfile(_path(out_dir, POLICY)):
        meta = load_checkpoint(_path(out_dir, POLICY)).meta
        if meta.get('kind') == 'implicit':
            stored_alpha, logits, seed = meta['alpha'], meta['logits'], meta['seed']
    if ensemble is None:
        ensemble = load_q_ensemble(_path(out_dir, Q))
    return ImplicitPolicy(ensemble=ensemble,
                          alpha=stored_alpha if alpha is None else alpha,
                          mode=logits,
                          score_model=load_score_model(_path(out_dir, SCORE)),
                          cache=load_support_cache(_require(out_dir, CACHE, 'support cache')),
                          dataset=load_dataset(_require(out_dir, DATASET, 'dataset')),
                          sampler=sampler_config(config, n_steps=section['rollout_pc_steps']),
                          n_samples=config['cache']['n_samples'],
                          log_epsilon=config['cache']['log_epsilon'],
                          seed=seed)


def evaluate(config, out_dir, policy_kind, logger):
    """Roll out a policy and write ``eval.json``"""
    if policy_kind == 'implicit':
        policy = _implicit_policy(config, out_dir)
    elif policy_kind == 'awr':
        policy = load_awr_policy(_path(out_dir, POLICY))
    elif policy_kind == 'bc':
        policy = BehaviorPolicy(load_score_model(_path(out_dir, SCORE)),
                                sampler_config(config, n_steps=config['policy']['rollout_pc_steps']))
    else:
        raise ContractViolation('policy must be implicit, awr, or bc; got {!r}'.format(policy_kind))
    env = make_env(config['env']['name'])
    report = evaluate_policy(env, policy, config['eval']['episodes'], config['eval']['gamma'], config['seed'],
                             workers=config['eval']['workers'], name=policy_kind)
    path = _path(out_dir, EVAL)
    with open(path, 'w') as the_file:
        the_file.write(ujson.dumps(report.to_dict(), indent=2))
        the_file.write('\n')
    logger.info('{} on {}: mean return {:.4f} +/- {:.4f}'.format(policy_kind, env.name, report.mean_return,
                                                                  report.std_return))
    return report.to_dict()


def ablation(config, out_dir, logger):
    """Compare implicit policies built on the score model alone, on a Q^beta critic and on an ARQ critic

    All three arms share the dataset, score model and support cache already
    in ``out_dir``. ``score_only`` is the implicit policy at alpha = 0, which
    picks uniformly among the in-support candidates. Writes ``ablation.json``;
    ``q.json`` is left alone.

    :Returns: Dictionary
    """
    dataset, cache = _training_inputs(config, out_dir)
    critics = {}
    for mode in ('qbeta', 'arq'):
        critics[mode] = arq_train(dataset, cache, arq_config(config, mode), config['seed'])
        logger.info('Trained the {} critic for the ablation'.format(mode))
    env = make_env(config['env']['name'])
    arms = {}
    for arm in ABLATION_ARMS:
        if arm == 'score_only':
            policy = _implicit_policy(config, out_dir, ensemble=critics['qbeta'], alpha=0.0)
        else:
            policy = _implicit_policy(config, out_dir, ensemble=critics[arm], alpha=config['policy']['alpha'])
        report = evaluate_policy(env, policy, config['eval']['episodes'], config['eval']['gamma'], config['seed'],
                                 workers=config['eval']['workers'], name=arm)
        arms[arm] = report.to_dict()
        logger.info('{} on {}: mean return {:.4f}'.format(arm, env.name, report.mean_return))
    content = {'env': env.name, 'optimal_return': env.descriptor.optimal_return, 'arms': arms}
    with open(_path(out_dir, ABLATION), 'w') as the_file:
        the_file.write(ujson.dumps(content, indent=2))
        the_file.write('\n')
    return content


def verify_theorem1(n_states, n_actions, iters, seed, logger, gamma=0.9, penalty='random', config=None):
    """Run both tabular schemes on a random MDP and fail if they ever disagree

    ``config`` supplies the support threshold and the MMD settings when the
    penalty kind needs them; defaults fill in anything left out.
    """
    config = config or defaults()
    mdp = random_mdp(n_states, n_actions, seed, gamma=gamma)
    table = tabular_penalty(penalty, n_states, n_actions, [seed, 1],
                            log_epsilon=config['cache']['log_epsilon'],
                            n_samples=config['dqp']['mmd_samples'],
                            bandwidth=config['dqp']['mmd_bandwidth'])
    logger.info('Checking {} iterations with a {} penalty'.format(iters, penalty))
    report = run_theorem1(mdp, table, iters)
    residuals = list(report.max_residuals)
    for idx, residual in enumerate(residuals, start=1):
        logger.debug('iteration {} max residual {:.3e}'.format(idx, residual))
    if not report.max_residual < THEOREM1_TOLERANCE:
        raise NumericalFailure('schemes disagree by {:.3e}'.format(report.max_residual),
                               step=int(np.argmax(residuals)) + 1)
    return {'residuals': residuals, 'max_residual': report.max_residual}


def _pgm(values, lo, hi):
    """8-bit grays of ``values`` clipped to [lo, hi]; a flat range maps everything to mid-gray"""
    if not hi > lo:
        return np.full(values.shape, 128, dtype=np.uint8)
    scaled = (np.clip(values, lo, hi) - lo) / (hi - lo)
    return np.round(255.0 * scaled).astype(np.uint8)


def density_grid(model, s_grid, a_grid, csv_path, pgm_path, log_epsilon=const.CACHE_LOG_EPSILON,
                 tol=const.LIKELIHOOD_TOL, logger=None):
    """Write log beta(a|s) over a grid as CSV and as a binary PGM heatmap

    PGM rows are actions in descending order and columns are states in
    ascending order. Grays map log p linearly from [ln(epsilon) - 5, max].
    A cell whose likelihood fails is recorded at that floor.

    :Returns: Dictionary

    :param model: A 1-D state, 1-D action score model
    :type model: arq_offline.lib.score.ScoreModel

    :param s_grid: States, ascending
    :type s_grid: numpy.ndarray

    :param a_grid: Env-space actions, ascending
    :type a_grid: numpy.ndarray
    """
    s_grid = np.asarray(s_grid, dtype=np.float64).reshape(-1)
    a_grid = np.asarray(a_grid, dtype=np.float64).reshape(-1)
    if not s_grid.size or not a_grid.size:
        raise ContractViolation('density grids need at least one state and one action')
    if model.state_dim != 1 or model.action_dim != 1:
        raise ContractViolation('density grids need a 1-D state and a 1-D action')
    normalized = model.normalizer.normalize(a_grid[:, None])
    if np.any(np.abs(normalized) > 1.0 + 1e-9):
        raise ContractViolation('action grid leaves the dataset action bounds')
    floor = log_epsilon - 5.0
    logp = np.full((s_grid.size, a_grid.size), np.nan)
    for col, s in enumerate(s_grid):
        state = np.array([s])
        try:
            logp[col] = log_likelihood(model, state, normalized, tol=tol)
        except NumericalFailure:
            for row in range(a_grid.size):
                try:
                    logp[col, row] = log_likelihood(model, state, normalized[row], tol=tol)
                except NumericalFailure:
                    pass
    bad = ~np.isfinite(logp)
    failures = int(np.sum(bad))
    logp[bad] = floor
    if failures and logger is not None:
        logger.warning('{} grid cells failed and were recorded at {}'.format(failures, floor))
    hi = float(np.max(logp[~bad])) if failures < logp.size else floor
    with open(csv_path, 'w', newline='') as the_file:
        writer = csv.writer(the_file)
        writer.writerow(('s', 'a', 'logp'))
        for col, s in enumerate(s_grid):
            for row, a in enumerate(a_grid):
                writer.writerow((repr(float(s)), repr(float(a)), repr(float(logp[col, row]))))
    grays = _pgm(logp.T[::-1], floor, hi)
    with open(pgm_path, 'wb') as the_file:
        the_file.write('P5\n{} {}\n255\n'.format(s_grid.size, a_grid.size).encode('ascii'))
        the_file.write(grays.tobytes())
    return {'csv': csv_path, 'pgm': pgm_path, 'cells': int(logp.size), 'failures': failures,
            'lo': floor, 'hi': hi}


def density_grid_stage(config, out_dir, logger):
    """``density-grid`` over the dataset's state range and action bounds"""
    model = load_score_model(_path(out_dir, SCORE))
    low, high = model.normalizer.low[0], model.normalizer.high[0]
    s_grid = np.linspace(-1.0, 1.0, config['grid']['s_points'])
    a_grid = np.linspace(low, high, config['grid']['a_points'])
    return density_grid(model, s_grid, a_grid, _path(out_dir, GRID_CSV), _path(out_dir, GRID_PGM),
                        log_epsilon=config['cache']['log_epsilon'], tol=config['sampler']['likelihood_tol'],
                        logger=logger)
