# -*- coding: UTF-8 -*-
"""
A suite of tests for the functions in tasks.py
"""
import os
import tempfile
import unittest
from unittest.mock import patch, MagicMock

import vlab_api_common

from arq_offline.lib import arq, config, dataset, dqp, envs, policy, sampling, score
from arq_offline.lib.config import resolve_config
from arq_offline.lib.worker import tasks
from arq_offline.lib.errors import ContractViolation, IntegratorFailure, NumericalFailure


class TestTasks(unittest.TestCase):
    """A set of test cases for tasks.py"""

    @patch.object(tasks, 'get_task_logger')
    @patch.object(tasks, 'pipeline')
    def test_gen_data_ok(self, fake_pipeline, fake_get_task_logger):
        """``gen_data`` returns a dictionary when everything works as expected"""
        fake_pipeline.gen_data.return_value = {'worked': True}

        output = tasks.gen_data(config={}, out_dir='/tmp/run', txn_id='myId')
        expected = {'content' : {'worked': True}, 'error': None, 'params': {}}

        self.assertEqual(output, expected)

    @patch.object(tasks, 'get_task_logger')
    @patch.object(tasks, 'pipeline')
    def test_stage_gets_logger(self, fake_pipeline, fake_get_task_logger):
        """Every stage is handed the task logger as its last argument"""
        tasks.q_train(config={'a': 1}, out_dir='/tmp/run', mode='qbeta', txn_id='myId')

        the_args, _ = fake_pipeline.q_train.call_args
        self.assertEqual(the_args, ({'a': 1}, '/tmp/run', 'qbeta', fake_get_task_logger.return_value))
        fake_get_task_logger.assert_called_with(txn_id='myId', task_id='q-train',
                                                loglevel=tasks.const.ARQ_LOG_LEVEL.upper())

    @patch.object(tasks, 'get_task_logger')
    @patch.object(tasks, 'pipeline')
    def test_contract_violation(self, fake_pipeline, fake_get_task_logger):
        """``bc_train`` reports a ContractViolation with exit code 1"""
        fake_pipeline.bc_train.side_effect = [ContractViolation('testing')]

        output = tasks.bc_train(config={}, out_dir='/tmp/run', txn_id='myId')
        expected = {'content' : {}, 'error': 'testing', 'params': {'exit_code': 1}}

        self.assertEqual(output, expected)

    @patch.object(tasks, 'get_task_logger')
    @patch.object(tasks, 'pipeline')
    def test_numerical_failure(self, fake_pipeline, fake_get_task_logger):
        """``build_cache`` reports a NumericalFailure with exit code 2"""
        fake_pipeline.build_cache.side_effect = [NumericalFailure('testing', step=3)]

        output = tasks.build_cache(config={}, out_dir='/tmp/run', txn_id='myId')

        self.assertEqual(output['params'], {'exit_code': 2})
        self.assertIn('testing', output['error'])

    @patch.object(tasks, 'get_task_logger')
    @patch.object(tasks, 'pipeline')
    def test_integrator_failure(self, fake_pipeline, fake_get_task_logger):
        """``density_grid`` treats an integrator failure as numerical"""
        fake_pipeline.density_grid_stage.side_effect = [IntegratorFailure('testing', t_reached=0.5)]

        output = tasks.density_grid(config={}, out_dir='/tmp/run', txn_id='myId')

        self.assertEqual(output['params'], {'exit_code': 2})

    @patch.object(tasks, 'get_task_logger')
    @patch.object(tasks, 'pipeline')
    def test_missing_file(self, fake_pipeline, fake_get_task_logger):
        """``evaluate`` reports an unreadable artifact as a validation error"""
        fake_pipeline.evaluate.side_effect = [FileNotFoundError(2, 'No such file')]

        output = tasks.evaluate(config={}, out_dir='/tmp/run', policy_kind='awr', txn_id='myId')

        self.assertEqual(output['params'], {'exit_code': 1})

    @patch.object(tasks, 'get_task_logger')
    @patch.object(tasks, 'pipeline')
    def test_error_is_logged(self, fake_pipeline, fake_get_task_logger):
        """A failing stage logs the error"""
        fake_logger = MagicMock()
        fake_get_task_logger.return_value = fake_logger
        fake_pipeline.policy_train.side_effect = [ContractViolation('testing')]

        tasks.policy_train(config={}, out_dir='/tmp/run', mode='awr', txn_id='myId')

        self.assertTrue(fake_logger.error.called)

    @patch.object(tasks, 'get_task_logger')
    @patch.object(tasks, 'pipeline')
    def test_verify_theorem1(self, fake_pipeline, fake_get_task_logger):
        """``verify_theorem1`` passes the MDP size through"""
        fake_pipeline.verify_theorem1.return_value = {'max_residual': 0.0}

        output = tasks.verify_theorem1(4, 3, 50, 1, txn_id='myId')

        self.assertEqual(output['content'], {'max_residual': 0.0})
        the_args, _ = fake_pipeline.verify_theorem1.call_args
        self.assertEqual(the_args[:4], (4, 3, 50, 1))

    @patch.object(tasks, 'get_task_logger')
    @patch.object(tasks, 'pipeline')
    def test_verify_theorem1_penalty(self, fake_pipeline, fake_get_task_logger):
        """``verify_theorem1`` hands the penalty kind and config to the stage"""
        tasks.verify_theorem1(4, 3, 50, 1, txn_id='myId', penalty='mmd2', config={'dqp': {}})

        _, kwargs = fake_pipeline.verify_theorem1.call_args
        self.assertEqual(kwargs, {'penalty': 'mmd2', 'config': {'dqp': {}}})

    @patch.object(tasks, 'get_task_logger')
    @patch.object(tasks, 'pipeline')
    def test_ablation(self, fake_pipeline, fake_get_task_logger):
        """``ablation`` runs the ablation stage on the output directory"""
        fake_pipeline.ablation.return_value = {'arms': {}}

        output = tasks.ablation(config={'a': 1}, out_dir='/tmp/run', txn_id='myId')

        self.assertEqual(output['content'], {'arms': {}})
        the_args, _ = fake_pipeline.ablation.call_args
        self.assertEqual(the_args[:2], ({'a': 1}, '/tmp/run'))

    @patch.object(tasks, 'get_task_logger')
    def test_bad_dataset_row(self, fake_get_task_logger):
        """A null inside a dataset row fails ``bc_train`` with exit code 1 and names the line"""
        with tempfile.TemporaryDirectory() as out_dir:
            with open(os.path.join(out_dir, 'dataset.jsonl'), 'w') as the_file:
                the_file.write('{"state_dim": 1, "action_dim": 1, "action_low": [0.0], "action_high": [1.0], '
                               '"env": "cliffbandit", "seed": 0, "n_transitions": 1}\n')
                the_file.write('{"s": [null], "a": [0.5], "r": 1.0, "s2": [0.0], "done": true, "goal": false}\n')

            output = tasks.bc_train(config=resolve_config(), out_dir=out_dir, txn_id='myId')

        self.assertEqual(output['params'], {'exit_code': 1})
        self.assertIn('line 2', output['error'])


class TestLogging(unittest.TestCase):
    """Loggers come from vlab_api_common"""

    def test_task_logger(self):
        """Stages log through the shared task logger"""
        self.assertIs(tasks.get_task_logger, vlab_api_common.get_task_logger)

    def test_module_loggers(self):
        """Library modules build their loggers with the shared helper"""
        for module in (arq, config, dataset, dqp, envs, policy, sampling, score):
            with self.subTest(module=module.__name__):
                self.assertIs(module.get_logger, vlab_api_common.get_logger)


if __name__ == '__main__':
    unittest.main()
