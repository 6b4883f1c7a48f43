# -*- coding: UTF-8 -*-
"""
A suite of tests for the functions in dataset.py
"""
import os
import tempfile
import unittest

import numpy as np
import ujson

from arq_offline.lib import dataset
from arq_offline.lib.errors import ContractViolation, DatasetFormatError
from tests.fakes import bandit_dataset


def _chain():
    """Two trajectories: 0 -> 1 -> 2 (done), then 5 -> 6 (not done, last row)"""
    rows = [((0.0,), (0.5,), -1.0, (1.0,), False),
            ((1.0,), (-0.5,), -1.0, (2.0,), True),
            ((5.0,), (0.25,), 0.0, (6.0,), False)]
    transitions = [dataset.Transition(np.array(s), np.array(a), r, np.array(s2), done, False)
                   for s, a, r, s2, done in rows]
    return dataset.build_dataset(transitions, 'chain', seed=3)


class TestBuildDataset(unittest.TestCase):
    """``build_dataset`` and ``OfflineDataset``"""

    def test_header(self):
        """The header records dims, action bounds, env and seed"""
        data = _chain()

        self.assertEqual(data.header.state_dim, 1)
        self.assertEqual(data.header.action_dim, 1)
        self.assertEqual(data.header.action_low, (-0.5,))
        self.assertEqual(data.header.action_high, (0.5,))
        self.assertEqual(data.header.n_transitions, 3)
        self.assertEqual(data.header.seed, 3)

    def test_empty(self):
        """An empty transition list is rejected"""
        with self.assertRaises(ContractViolation):
            dataset.build_dataset([], 'chain', seed=0)

    def test_normalized_actions(self):
        """Actions map onto [-1, 1] using the header bounds"""
        data = _chain()

        np.testing.assert_allclose(data.normalized_actions()[:, 0], [1.0, -1.0, 0.5])

    def test_with_rewards(self):
        """``with_rewards`` swaps the reward column and leaves the rest alone"""
        data = _chain()
        shaped = data.with_rewards([1.0, 2.0, 3.0])

        np.testing.assert_array_equal(shaped.rewards, [1.0, 2.0, 3.0])
        self.assertIs(shaped.states, data.states)

    def test_with_rewards_length(self):
        """A reward vector of the wrong length is rejected"""
        with self.assertRaises(ContractViolation):
            _chain().with_rewards([1.0])


class TestNormalizer(unittest.TestCase):
    """``ActionNormalizer``"""

    def test_inverse(self):
        """``denormalize`` undoes ``normalize``"""
        norm = dataset.ActionNormalizer((-2.0, 0.0), (2.0, 1.0))
        actions = np.array([[1.5, 0.25], [-2.0, 1.0]])

        np.testing.assert_allclose(norm.denormalize(norm.normalize(actions)), actions)

    def test_constant_dimension(self):
        """A dimension with low == high maps to 0"""
        norm = dataset.ActionNormalizer((0.3,), (0.3,))

        self.assertEqual(norm.normalize([0.3])[0], 0.0)

    def test_meta(self):
        """``from_meta`` rebuilds the normalizer"""
        norm = dataset.ActionNormalizer((-2.0,), (4.0,))

        self.assertEqual(dataset.ActionNormalizer.from_meta(norm.to_meta()), norm)


class TestIterTrajectories(unittest.TestCase):
    """``iter_trajectories``"""

    def test_splits(self):
        """Trajectories end at a done flag or where s2 does not continue"""
        self.assertEqual(list(dataset.iter_trajectories(_chain())), [(0, 2), (2, 3)])

    def test_broken_chain(self):
        """One-step bandit episodes each form their own trajectory"""
        data = bandit_dataset([0.0, 0.0, 0.0], [0.1, 0.2, 0.3], [1.0, 1.0, 1.0])

        self.assertEqual(list(dataset.iter_trajectories(data)), [(0, 1), (1, 2), (2, 3)])


class TestFileFormat(unittest.TestCase):
    """``save_dataset`` and ``load_dataset``"""

    def setUp(self):
        self.tmp = tempfile.TemporaryDirectory()
        self.path = os.path.join(self.tmp.name, 'dataset.jsonl')

    def tearDown(self):
        self.tmp.cleanup()

    def _lines(self):
        with open(self.path) as the_file:
            return the_file.read().split('\n')

    def _write(self, lines):
        with open(self.path, 'w') as the_file:
            the_file.write('\n'.join(lines))

    def test_round_trip(self):
        """Saving what was loaded gives the same bytes"""
        dataset.save_dataset(_chain(), self.path)
        with open(self.path, 'rb') as the_file:
            first = the_file.read()
        loaded = dataset.load_dataset(self.path)
        dataset.save_dataset(loaded, self.path)
        with open(self.path, 'rb') as the_file:
            second = the_file.read()

        self.assertEqual(first, second)
        self.assertEqual(loaded.header, _chain().header)
        np.testing.assert_array_equal(loaded.dones, [False, True, False])

    def test_header_first(self):
        """Line 1 is the header"""
        dataset.save_dataset(_chain(), self.path)
        header = ujson.loads(self._lines()[0])

        self.assertEqual(header['env'], 'chain')
        self.assertEqual(header['n_transitions'], 3)

    def test_truncated(self):
        """A file with fewer rows than the header promises is a format error"""
        dataset.save_dataset(_chain(), self.path)
        self._write(self._lines()[:3])

        with self.assertRaises(DatasetFormatError):
            dataset.load_dataset(self.path)

    def test_garbled_row(self):
        """A row that is not JSON reports its line number"""
        dataset.save_dataset(_chain(), self.path)
        lines = self._lines()
        lines[2] = '{"s": [1.0'
        self._write(lines)

        with self.assertRaises(DatasetFormatError) as caught:
            dataset.load_dataset(self.path)
        self.assertEqual(caught.exception.line, 3)

    def test_wrong_dimension(self):
        """A row with the wrong state width names the row"""
        dataset.save_dataset(_chain(), self.path)
        lines = self._lines()
        record = ujson.loads(lines[1])
        record['s'] = [0.0, 0.0]
        lines[1] = ujson.dumps(record)
        self._write(lines)

        with self.assertRaises(DatasetFormatError) as caught:
            dataset.load_dataset(self.path)
        self.assertIn('row 0', str(caught.exception))
        self.assertEqual(caught.exception.line, 2)

    def test_null_entry(self):
        """A null inside a state vector is a format error on its line"""
        dataset.save_dataset(_chain(), self.path)
        lines = self._lines()
        record = ujson.loads(lines[1])
        record['s'] = [None]
        lines[1] = ujson.dumps(record)
        self._write(lines)

        with self.assertRaises(DatasetFormatError) as caught:
            dataset.load_dataset(self.path)
        self.assertEqual(caught.exception.line, 2)

    def test_string_entry(self):
        """A string inside an action vector is a format error on its line"""
        dataset.save_dataset(_chain(), self.path)
        lines = self._lines()
        record = ujson.loads(lines[2])
        record['a'] = ['abc']
        lines[2] = ujson.dumps(record)
        self._write(lines)

        with self.assertRaises(DatasetFormatError) as caught:
            dataset.load_dataset(self.path)
        self.assertEqual(caught.exception.line, 3)
        self.assertIn('row 1', str(caught.exception))

    def test_numeric_string_entry(self):
        """Numbers written as strings are rejected too"""
        dataset.save_dataset(_chain(), self.path)
        lines = self._lines()
        record = ujson.loads(lines[3])
        record['s2'] = ['0.5']
        lines[3] = ujson.dumps(record)
        self._write(lines)

        with self.assertRaises(DatasetFormatError) as caught:
            dataset.load_dataset(self.path)
        self.assertEqual(caught.exception.line, 4)

    def test_action_out_of_bounds(self):
        """An action outside the header bounds is rejected"""
        dataset.save_dataset(_chain(), self.path)
        lines = self._lines()
        record = ujson.loads(lines[3])
        record['a'] = [0.75]
        lines[3] = ujson.dumps(record)
        self._write(lines)

        with self.assertRaises(ContractViolation) as caught:
            dataset.load_dataset(self.path)
        self.assertIn('row 2', str(caught.exception))

    def test_empty_file(self):
        """An empty file is a format error on line 1"""
        self._write([])

        with self.assertRaises(DatasetFormatError) as caught:
            dataset.load_dataset(self.path)
        self.assertEqual(caught.exception.line, 1)


if __name__ == '__main__':
    unittest.main()
