# -*- coding: UTF-8 -*-
"""
A suite of tests for the functions in nn.py
"""
import os
import tempfile
import unittest

import numpy as np

from arq_offline.lib import nn
from arq_offline.lib.errors import ContractViolation, NumericalFailure


def _numeric_grad(func, array, idx, h=1e-6):
    saved = array[idx]
    array[idx] = saved + h
    plus = func()
    array[idx] = saved - h
    minus = func()
    array[idx] = saved
    return (plus - minus) / (2 * h)


class TestForwardBackward(unittest.TestCase):
    """``mlp_forward`` and ``mlp_backward``"""

    def setUp(self):
        self.params = nn.residual_net(3, 5, 2, 2, seed=0)
        self.inputs = np.random.default_rng(1).normal(size=(4, 3))

    def test_vector_matches_batch(self):
        """A single input vector gives the same output as the matching batch row"""
        batch, _ = nn.mlp_forward(self.params, self.inputs)
        single, _ = nn.mlp_forward(self.params, self.inputs[2])

        np.testing.assert_allclose(single, batch[2], rtol=0, atol=1e-12)

    def test_wrong_width(self):
        """``mlp_forward`` rejects inputs with the wrong number of features"""
        with self.assertRaises(ContractViolation):
            nn.mlp_forward(self.params, np.zeros((2, 4)))

    def test_param_grads(self):
        """Parameter gradients of the residual net agree with central differences"""
        weights = np.random.default_rng(2).normal(size=(4, 2))

        def loss_of(params):
            out, _ = nn.mlp_forward(params, self.inputs)
            return float(np.sum(out * weights))

        out, tape = nn.mlp_forward(self.params, self.inputs)
        grads, _ = nn.mlp_backward(self.params, tape, weights)
        tensors = [t.copy() for t in self.params.tensors()]
        for t_idx, g_tensor in enumerate(grads.tensors()):
            idx = tuple(0 for _ in tensors[t_idx].shape)
            numeric = _numeric_grad(lambda: loss_of(self.params.with_tensors(tensors)), tensors[t_idx], idx)
            self.assertAlmostEqual(g_tensor[idx], numeric, places=5)

    def test_input_grad(self):
        """The input gradient agrees with central differences"""
        params = nn.dense_net(3, (6,), 1, seed=3, activation='swish')
        point = self.inputs[:1].copy()
        out, tape = nn.mlp_forward(params, point)
        _, input_grad = nn.mlp_backward(params, tape, np.ones_like(out))
        for col in range(3):
            numeric = _numeric_grad(lambda: float(nn.mlp_forward(params, point)[0][0, 0]), point, (0, col))
            self.assertAlmostEqual(input_grad[0, col], numeric, places=5)

    def test_random_nets(self):
        """Every parameter and input gradient of 50 random nets agrees with central differences"""
        shapes = np.random.default_rng(5)
        for seed in range(50):
            in_dim, width, out_dim = (int(v) for v in shapes.integers(1, 5, size=3))
            if seed % 2:
                params = nn.residual_net(in_dim, width, int(shapes.integers(0, 3)), out_dim, seed=seed)
            else:
                params = nn.dense_net(in_dim, (width, width), out_dim, seed=seed, activation='swish')
            with self.subTest(seed=seed, kind='residual' if seed % 2 else 'dense'):
                self._check_every_component(params, shapes.normal(size=(3, in_dim)),
                                            shapes.normal(size=(3, out_dim)))

    def _check_every_component(self, params, inputs, weights):
        def loss():
            out, _ = nn.mlp_forward(params.with_tensors(tensors), inputs)
            return float(np.sum(out * weights))

        def assert_close(analytic, numeric):
            scale = max(abs(analytic), abs(numeric), 1e-2)
            self.assertLessEqual(abs(analytic - numeric) / scale, 1e-4)

        out, tape = nn.mlp_forward(params, inputs)
        grads, input_grad = nn.mlp_backward(params, tape, weights)
        tensors = [t.copy() for t in params.tensors()]
        for tensor, g_tensor in zip(tensors, grads.tensors()):
            for idx in np.ndindex(*tensor.shape):
                assert_close(g_tensor[idx], _numeric_grad(loss, tensor, idx, h=1e-5))
        for idx in np.ndindex(*inputs.shape):
            assert_close(input_grad[idx], _numeric_grad(loss, inputs, idx, h=1e-5))

    def test_stale_tape(self):
        """``mlp_backward`` refuses a tape recorded with other parameters"""
        _, tape = nn.mlp_forward(self.params, self.inputs)
        other = nn.residual_net(3, 5, 2, 2, seed=9)

        with self.assertRaises(ContractViolation):
            nn.mlp_backward(other, tape, np.zeros((4, 2)))


class TestParams(unittest.TestCase):
    """``MlpParams`` validation and helpers"""

    def test_residual_must_be_square(self):
        """Residual layers need a square weight"""
        layer = nn.Layer(np.zeros((3, 2)), np.zeros(3), 'relu', 'residual')
        with self.assertRaises(ContractViolation):
            nn.MlpParams((layer,))

    def test_chained_dims(self):
        """Consecutive layers must agree on their widths"""
        first = nn.Layer(np.zeros((3, 2)), np.zeros(3))
        second = nn.Layer(np.zeros((1, 4)), np.zeros(1))
        with self.assertRaises(ContractViolation):
            nn.MlpParams((first, second))

    def test_unknown_activation(self):
        """Only relu, swish and identity are supported"""
        with self.assertRaises(ContractViolation):
            nn.MlpParams((nn.Layer(np.zeros((1, 1)), np.zeros(1), 'tanh'),))

    def test_init_is_seeded(self):
        """The same seed gives the same weights"""
        one = nn.q_net(2, 1, 8, seed=[4, 1])
        two = nn.q_net(2, 1, 8, seed=[4, 1])
        for a, b in zip(one.tensors(), two.tensors()):
            np.testing.assert_array_equal(a, b)

    def test_quantize_idempotent(self):
        """Quantized parameters survive a second quantization unchanged"""
        params = nn.quantize(nn.policy_net(2, 2, 4, seed=0))
        again = nn.quantize(params)
        for a, b in zip(params.tensors(), again.tensors()):
            np.testing.assert_array_equal(a, b)


class TestAdam(unittest.TestCase):
    """``adam_step``"""

    def test_first_step_size(self):
        """The first bias-corrected step moves every entry by about lr against its gradient"""
        params = np.array([1.0, -2.0, 3.0])
        grads = np.array([0.5, -4.0, 1e-3])
        state = nn.adam_init(params)
        _, new_params = nn.adam_step(state, params, grads, lr=0.01)

        np.testing.assert_allclose(new_params, params - 0.01 * np.sign(grads), atol=1e-6)

    def test_bad_lr(self):
        """A non-positive learning rate is rejected"""
        params = np.zeros(2)
        with self.assertRaises(ContractViolation):
            nn.adam_step(nn.adam_init(params), params, np.ones(2), lr=0.0)

    def test_nonfinite_gradient(self):
        """A NaN gradient raises a numerical failure naming the step"""
        params = np.zeros(2)
        with self.assertRaises(NumericalFailure) as caught:
            nn.adam_step(nn.adam_init(params), params, np.array([np.nan, 0.0]), lr=0.1)
        self.assertEqual(caught.exception.step, 1)

    def test_mlp_params(self):
        """``adam_step`` returns the same architecture it was given"""
        params = nn.q_net(1, 1, 4, seed=0)
        grads = params.zeros_like()
        state, updated = nn.adam_step(nn.adam_init(params), params, grads, lr=0.1)

        self.assertIsInstance(updated, nn.MlpParams)
        self.assertEqual(state.t, 1)


class TestEma(unittest.TestCase):
    """``ema_update``"""

    def test_convex_update(self):
        """shadow moves (1 - decay) of the way towards the parameters"""
        zeros = nn.q_net(1, 1, 4, seed=0).zeros_like()
        ones = zeros.with_tensors([np.ones_like(t) for t in zeros.tensors()])
        ema = nn.ema_update(nn.ema_init(zeros, 0.9), ones)

        for tensor in ema.shadow.tensors():
            np.testing.assert_allclose(tensor, 0.1)

    def test_decay_range(self):
        """A decay outside [0, 1] is rejected"""
        with self.assertRaises(ContractViolation):
            nn.ema_init(nn.q_net(1, 1, 2, seed=0), 1.5)


class TestCheckpoint(unittest.TestCase):
    """``save_checkpoint`` and ``load_checkpoint``"""

    def setUp(self):
        self.tmp = tempfile.TemporaryDirectory()
        self.path = os.path.join(self.tmp.name, 'model.json')

    def tearDown(self):
        self.tmp.cleanup()

    def _read(self, path):
        with open(path, 'rb') as the_file:
            return the_file.read()

    def test_round_trip(self):
        """Loaded networks and arrays equal the saved ones bit for bit"""
        net = nn.residual_net(4, 6, 1, 2, seed=5)
        nn.save_checkpoint(self.path, {'net': net}, meta={'kind': 'test'}, arrays={'log_std': np.array([-1.0, 0.5])})
        loaded = nn.load_checkpoint(self.path)

        for a, b in zip(net.tensors(), loaded.networks['net'].tensors()):
            np.testing.assert_array_equal(a, b)
        np.testing.assert_array_equal(loaded.arrays['log_std'], [-1.0, 0.5])
        self.assertEqual(loaded.meta, {'kind': 'test'})

    def test_resave_is_identical(self):
        """save, load, save produces identical manifest and binary bytes"""
        net = nn.dense_net(3, (5, 5), 1, seed=6)
        nn.save_checkpoint(self.path, {'net': net})
        first = (self._read(self.path), self._read(self.path.replace('.json', '.bin')))
        nn.save_checkpoint(self.path, nn.load_checkpoint(self.path).networks)
        second = (self._read(self.path), self._read(self.path.replace('.json', '.bin')))

        self.assertEqual(first, second)

    def test_missing(self):
        """Loading a checkpoint that does not exist names the problem"""
        with self.assertRaises(ContractViolation) as caught:
            nn.load_checkpoint(self.path)
        self.assertIn('model checkpoint missing', str(caught.exception))

    def test_missing_binary(self):
        """A manifest without its binary file is rejected"""
        nn.save_checkpoint(self.path, {'net': nn.q_net(1, 1, 2, seed=0)})
        os.remove(self.path.replace('.json', '.bin'))
        with self.assertRaises(ContractViolation):
            nn.load_checkpoint(self.path)


if __name__ == '__main__':
    unittest.main()
