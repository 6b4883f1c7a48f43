# -*- coding: UTF-8 -*-
"""
Command line entry point: one subcommand per pipeline stage
"""
import argparse
import os
import sys

import ujson

from arq_offline.lib.config import load_config, resolve_config, write_config
from arq_offline.lib.errors import ContractViolation
from arq_offline.lib.worker import tasks

DESCRIPTION = 'Offline RL with score-model support constraints and action-restricted Q-learning'


def build_parser():
    parser = argparse.ArgumentParser(prog='arq-offline', description=DESCRIPTION)
    commands = parser.add_subparsers(dest='command', metavar='COMMAND')
    commands.required = True

    def _add(name, help_text):
        sub = commands.add_parser(name, help=help_text, description=help_text)
        sub.add_argument('--config', help='RunConfig JSON file (defaults fill anything left out)')
        sub.add_argument('--out', help='Output directory (default: output_dir from the config)')
        return sub

    _add('gen-data', 'Roll the behavior policy of the configured env into dataset.jsonl')
    _add('bc-train', 'Train the behavior score model on dataset.jsonl')
    _add('build-cache', 'Sample in-support actions for every dataset state')
    q_train = _add('q-train', 'Train the critic with cache-restricted bootstrapping')
    q_train.add_argument('--mode', choices=('arq', 'qbeta'), default='arq')
    policy_train = _add('policy-train', 'Extract a policy from the critic')
    policy_train.add_argument('--mode', choices=('implicit-eval', 'awr'), default='implicit-eval')
    evaluate = _add('eval', 'Roll out a policy and write eval.json')
    evaluate.add_argument('--policy', choices=('implicit', 'awr', 'bc'), default='implicit')
    _add('ablation', 'Compare implicit policies on the score model alone, a Q^beta critic and an ARQ critic')
    theorem1 = _add('verify-theorem1', 'Check the KL-regularized and penalized soft iterations agree')
    theorem1.add_argument('--states', type=int, default=4)
    theorem1.add_argument('--actions', type=int, default=3)
    theorem1.add_argument('--iters', type=int, default=50)
    theorem1.add_argument('--seed', type=int, default=None)
    theorem1.add_argument('--penalty', choices=('random', 'support_set', 'brac_kl', 'mmd2'), default='random',
                          help='Penalty table to iterate with (default: random)')
    _add('density-grid', 'Export log-likelihoods of the score model over a (state, action) grid')
    return parser


def _run(args, config, out_dir):
    txn_id = os.path.basename(os.path.abspath(out_dir))
    if args.command == 'gen-data':
        return tasks.gen_data(config, out_dir, txn_id)
    if args.command == 'bc-train':
        return tasks.bc_train(config, out_dir, txn_id)
    if args.command == 'build-cache':
        return tasks.build_cache(config, out_dir, txn_id)
    if args.command == 'q-train':
        return tasks.q_train(config, out_dir, args.mode, txn_id)
    if args.command == 'policy-train':
        return tasks.policy_train(config, out_dir, args.mode, txn_id)
    if args.command == 'eval':
        return tasks.evaluate(config, out_dir, args.policy, txn_id)
    if args.command == 'ablation':
        return tasks.ablation(config, out_dir, txn_id)
    if args.command == 'verify-theorem1':
        seed = config['seed'] if args.seed is None else args.seed
        return tasks.verify_theorem1(args.states, args.actions, args.iters, seed, txn_id,
                                     penalty=args.penalty, config=config)
    return tasks.density_grid(config, out_dir, txn_id)


def _report(command, content):
    if command == 'verify-theorem1':
        for idx, residual in enumerate(content['residuals'], start=1):
            print('iteration {} max residual {:.3e}'.format(idx, residual))
        print('max residual {:.3e}'.format(content['max_residual']))
    else:
        print(ujson.dumps(content, sort_keys=True))


def main(argv=None):
    """Run one subcommand

    :Returns: Integer exit code (0 ok, 1 validation error, 2 numerical failure)

    :param argv: Arguments, without the program name; defaults to ``sys.argv[1:]``
    :type argv: List
    """
    try:
        args = build_parser().parse_args(argv)
    except SystemExit as doh:
        # argparse exits 2 on usage errors; those are validation errors here
        return 0 if doh.code == 0 else 1
    try:
        config = load_config(args.config) if args.config else resolve_config()
        out_dir = args.out or config['output_dir']
        os.makedirs(out_dir, exist_ok=True)
        write_config(config, out_dir)
    except (ContractViolation, OSError) as doh:
        print('arq-offline {}: {}'.format(args.command, doh), file=sys.stderr)
        return 1
    resp = _run(args, config, out_dir)
    if resp['error']:
        print('arq-offline {}: {}'.format(args.command, resp['error']), file=sys.stderr)
        return resp['params'].get('exit_code', 1)
    _report(args.command, resp['content'])
    return 0


if __name__ == '__main__':
    sys.exit(main())
