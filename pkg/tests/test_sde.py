# -*- coding: UTF-8 -*-
"""
A suite of tests for the functions in sde.py
"""
import unittest

import numpy as np

from arq_offline.lib import sde
from arq_offline.lib.errors import ContractViolation


class TestSdeConfig(unittest.TestCase):
    """``SdeConfig`` validation"""

    def test_defaults(self):
        """The default schedule runs from 0.1 to 20 over [0.001, 1]"""
        cfg = sde.SdeConfig()

        self.assertEqual((cfg.beta_min, cfg.beta_max, cfg.t_min, cfg.t_max), (0.1, 20.0, 1e-3, 1.0))

    def test_bad_beta(self):
        """beta_min must be below beta_max"""
        with self.assertRaises(ContractViolation):
            sde.SdeConfig(beta_min=5.0, beta_max=1.0)

    def test_bad_times(self):
        """t_min must be positive and below t_max"""
        with self.assertRaises(ContractViolation):
            sde.SdeConfig(t_min=0.0)

    def test_meta_round_trip(self):
        """``from_meta`` rebuilds the config saved by ``to_meta``"""
        cfg = sde.SdeConfig(beta_max=10.0)

        self.assertEqual(sde.SdeConfig.from_meta(cfg.to_meta()), cfg)

    def test_time_grid(self):
        """The training grid holds n_discretization times from t_min to t_max"""
        grid = sde.time_grid(sde.SdeConfig(n_discretization=5))

        self.assertEqual(grid.shape, (5,))
        self.assertEqual(grid[0], 1e-3)
        self.assertEqual(grid[-1], 1.0)
        self.assertTrue(np.all(np.diff(grid) > 0))

    def test_short_grid(self):
        """A grid needs at least two times"""
        with self.assertRaises(ContractViolation):
            sde.SdeConfig(n_discretization=1)


class TestMarginal(unittest.TestCase):
    """``vpsde_marginal`` and ``perturb``"""

    def setUp(self):
        self.cfg = sde.SdeConfig()

    def test_at_zero(self):
        """At t = 0 the kernel is the identity"""
        mean_coef, std = sde.vpsde_marginal(0.0, self.cfg)

        self.assertEqual(mean_coef, 1.0)
        self.assertEqual(std, 0.0)

    def test_at_one(self):
        """At t = 1 the mean coefficient is exp(-(0.1 + 9.95) / 2)"""
        mean_coef, std = sde.vpsde_marginal(1.0, self.cfg)

        self.assertAlmostEqual(mean_coef, np.exp(-0.5 * 10.05), places=12)
        self.assertAlmostEqual(std, np.sqrt(1 - np.exp(-10.05)), places=12)

    def test_variance_preserving(self):
        """mean_coef^2 + std^2 = 1 everywhere"""
        t = np.linspace(0, 1, 11)
        mean_coef, std = sde.vpsde_marginal(t, self.cfg)

        np.testing.assert_allclose(mean_coef ** 2 + std ** 2, 1.0, atol=1e-12)

    def test_out_of_range(self):
        """Times above t_max are rejected"""
        with self.assertRaises(ContractViolation):
            sde.vpsde_marginal(1.5, self.cfg)

    def test_perturb_per_row_times(self):
        """``perturb`` applies one time per row"""
        a0 = np.ones((2, 1))
        noise = np.zeros((2, 1))
        out = sde.perturb(a0, np.array([0.0, 1.0]), noise, self.cfg)

        self.assertEqual(out[0, 0], 1.0)
        self.assertAlmostEqual(out[1, 0], np.exp(-0.5 * 10.05), places=12)

    def test_perturb_shape_mismatch(self):
        """noise must be shaped like the actions"""
        with self.assertRaises(ContractViolation):
            sde.perturb(np.zeros(2), 0.5, np.zeros(3), self.cfg)


class TestForwardProcess(unittest.TestCase):
    """Sampled behavior of the forward process against ``vpsde_marginal``"""

    def setUp(self):
        self.cfg = sde.SdeConfig()
        self.rng = np.random.default_rng(8)

    def test_perturb_moments(self):
        """``perturb`` with standard normal noise has mean mean_coef * a0 and variance std^2"""
        mean_coef, std = sde.vpsde_marginal(0.3, self.cfg)
        a0 = np.full((50000, 1), 0.7)
        out = sde.perturb(a0, 0.3, self.rng.standard_normal(a0.shape), self.cfg)

        self.assertAlmostEqual(np.mean(out), 0.7 * mean_coef, delta=0.02)
        self.assertAlmostEqual(np.var(out) / std ** 2, 1.0, delta=0.03)

    def test_euler_maruyama(self):
        """Simulating dx = f dt + g dW from a point lands on the closed-form marginal"""
        n_paths, n_steps, t_end, x0 = 20000, 600, 0.3, 1.5
        dt = t_end / n_steps
        x = np.full(n_paths, x0)
        for idx in range(n_steps):
            t = idx * dt
            noise = self.rng.standard_normal(n_paths)
            x = x + sde.drift(x, t, self.cfg) * dt + sde.diffusion(t, self.cfg) * np.sqrt(dt) * noise
        mean_coef, std = sde.vpsde_marginal(t_end, self.cfg)

        self.assertAlmostEqual(np.mean(x), x0 * mean_coef, delta=0.03)
        self.assertAlmostEqual(np.var(x) / std ** 2, 1.0, delta=0.05)


class TestCoefficients(unittest.TestCase):
    """``drift``, ``diffusion`` and ``time_embedding``"""

    def test_drift_and_diffusion(self):
        """f = -beta x / 2 and g = sqrt(beta)"""
        cfg = sde.SdeConfig()
        beta = sde.beta(0.5, cfg)

        self.assertAlmostEqual(beta, 10.05)
        self.assertAlmostEqual(sde.drift(2.0, 0.5, cfg), -beta)
        self.assertAlmostEqual(sde.diffusion(0.5, cfg), np.sqrt(beta))

    def test_time_embedding_shape(self):
        """Two features per frequency, one row per time"""
        features = sde.time_embedding(np.array([0.1, 0.2, 0.3]), n_frequencies=4)

        self.assertEqual(features.shape, (3, 8))
        np.testing.assert_allclose(features[:, :4] ** 2 + features[:, 4:] ** 2, 1.0)


if __name__ == '__main__':
    unittest.main()
