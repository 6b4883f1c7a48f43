# -*- coding: UTF-8 -*-
"""
A suite of tests for the RunConfig schema and loaders
"""
import os
import tempfile
import unittest

import ujson
from jsonschema import Draft4Validator, validate, ValidationError

from arq_offline.lib import config, const
from arq_offline.lib.errors import ContractViolation


class TestRunConfigSchema(unittest.TestCase):
    """A set of test cases for ``RUN_CONFIG_SCHEMA``"""

    def test_schema(self):
        """The RunConfig schema is valid"""
        try:
            Draft4Validator.check_schema(config.RUN_CONFIG_SCHEMA)
            schema_valid = True
        except RuntimeError:
            schema_valid = False

        self.assertTrue(schema_valid)

    def test_defaults_validate(self):
        """The fully-populated defaults pass the schema"""
        validate(config.defaults(), config.RUN_CONFIG_SCHEMA)

    def test_unknown_section(self):
        """Unknown top-level keys are rejected"""
        try:
            validate({'tracing': {}}, config.RUN_CONFIG_SCHEMA)
            rejected = False
        except ValidationError:
            rejected = True

        self.assertTrue(rejected)

    def test_gamma_below_one(self):
        """The critic's discount must stay below 1"""
        try:
            validate({'arq': {'gamma': 1.0}}, config.RUN_CONFIG_SCHEMA)
            rejected = False
        except ValidationError:
            rejected = True

        self.assertTrue(rejected)


class TestResolveConfig(unittest.TestCase):
    """A set of test cases for ``resolve_config``"""

    def test_empty(self):
        """No config at all yields the defaults"""
        self.assertEqual(config.resolve_config(None, seed_override=None), config.defaults())

    def test_merge(self):
        """A partial section keeps the defaults it leaves out"""
        resolved = config.resolve_config({'arq': {'k': 4}, 'seed': 9}, seed_override=None)

        self.assertEqual(resolved['arq']['k'], 4)
        self.assertEqual(resolved['arq']['gamma'], const.ARQ_GAMMA)
        self.assertEqual(resolved['seed'], 9)

    def test_seed_override(self):
        """ARQ_SEED beats the config file"""
        resolved = config.resolve_config({'seed': 9}, seed_override=3)

        self.assertEqual(resolved['seed'], 3)

    def test_unknown_key(self):
        """A misspelled key is a ContractViolation naming where it is"""
        with self.assertRaises(ContractViolation) as caught:
            config.resolve_config({'arq': {'kk': 4}}, seed_override=None)

        self.assertIn('arq', str(caught.exception))

    def test_does_not_alias_defaults(self):
        """Resolving never mutates a later call's defaults"""
        config.resolve_config({'env': {'name': 'cliffbandit'}}, seed_override=None)

        self.assertEqual(config.defaults()['env']['name'], const.DATA_ENV)


class TestConfigFiles(unittest.TestCase):
    """A set of test cases for ``load_config`` and ``write_config``"""

    def setUp(self):
        self.tmp = tempfile.TemporaryDirectory()
        self.path = os.path.join(self.tmp.name, 'run.json')

    def tearDown(self):
        self.tmp.cleanup()

    def test_bad_json(self):
        """A file that is not JSON is a ContractViolation"""
        with open(self.path, 'w') as the_file:
            the_file.write('{"seed": ')

        with self.assertRaises(ContractViolation):
            config.load_config(self.path)

    def test_not_an_object(self):
        """The file must hold a JSON object"""
        with open(self.path, 'w') as the_file:
            the_file.write('[1, 2]')

        with self.assertRaises(ContractViolation):
            config.load_config(self.path)

    def test_missing_file(self):
        """An unreadable file is a ContractViolation"""
        with self.assertRaises(ContractViolation):
            config.load_config(os.path.join(self.tmp.name, 'nope.json'))

    def test_write(self):
        """``write_config`` echoes the resolved config as config.json"""
        resolved = config.resolve_config({'env': {'name': 'stitchgrid'}}, seed_override=None)
        path = config.write_config(resolved, self.tmp.name)

        self.assertEqual(os.path.basename(path), 'config.json')
        with open(path) as the_file:
            self.assertEqual(ujson.loads(the_file.read()), resolved)


if __name__ == '__main__':
    unittest.main()
