# -*- coding: UTF-8 -*-
"""
A fixed family of small MLPs with hand-written reverse mode, Adam, EMA
shadow weights, and a manifest + raw float32 checkpoint format.

Every network in the package (score model, critics, AWR policy) is an
``MlpParams``. Parameters are immutable; training code produces new
``MlpParams`` objects each step.
"""
import os
from collections import namedtuple
from dataclasses import dataclass

import numpy as np
import ujson
from scipy.special import expit

from arq_offline.lib.errors import ContractViolation, NumericalFailure


ACTIVATIONS = ('relu', 'swish', 'identity')
KINDS = ('dense', 'residual')
CHECKPOINT_FORMAT = 'arq-offline-checkpoint/1'

Checkpoint = namedtuple('Checkpoint', ['networks', 'arrays', 'meta'])


@dataclass(frozen=True, eq=False)
class Layer:
    """One affine map plus activation.

    ``dense`` layers compute ``act(W x + b)``. ``residual`` layers are
    pre-activation blocks computing ``x + W act(x) + b`` and need a square W.
    """
    weight: np.ndarray
    bias: np.ndarray
    activation: str = 'identity'
    kind: str = 'dense'

    @property
    def in_dim(self):
        return self.weight.shape[1]

    @property
    def out_dim(self):
        return self.weight.shape[0]


@dataclass(frozen=True, eq=False)
class MlpParams:
    layers: tuple

    def __post_init__(self):
        if not self.layers:
            raise ContractViolation('an MLP needs at least one layer')
        for idx, layer in enumerate(self.layers):
            if layer.activation not in ACTIVATIONS:
                raise ContractViolation('layer {}: unknown activation {!r}'.format(idx, layer.activation))
            if layer.kind not in KINDS:
                raise ContractViolation('layer {}: unknown kind {!r}'.format(idx, layer.kind))
            if layer.weight.ndim != 2 or layer.bias.shape != (layer.out_dim,):
                raise ContractViolation('layer {}: weight/bias shapes do not agree'.format(idx))
            if layer.kind == 'residual' and layer.in_dim != layer.out_dim:
                raise ContractViolation('layer {}: residual layers must be square'.format(idx))
            if idx and self.layers[idx - 1].out_dim != layer.in_dim:
                raise ContractViolation('layer {} expects {} inputs, previous layer gives {}'.format(
                                        idx, layer.in_dim, self.layers[idx - 1].out_dim))

    @property
    def in_dim(self):
        return self.layers[0].in_dim

    @property
    def out_dim(self):
        return self.layers[-1].out_dim

    def tensors(self):
        """Flat list ``[W0, b0, W1, b1, ...]``"""
        flat = []
        for layer in self.layers:
            flat.append(layer.weight)
            flat.append(layer.bias)
        return flat

    def with_tensors(self, tensors):
        """Same architecture, new values (in ``tensors()`` order)"""
        if len(tensors) != 2 * len(self.layers):
            raise ContractViolation('expected {} tensors, got {}'.format(2 * len(self.layers), len(tensors)))
        layers = []
        for idx, layer in enumerate(self.layers):
            weight = np.asarray(tensors[2 * idx], dtype=np.float64)
            bias = np.asarray(tensors[2 * idx + 1], dtype=np.float64)
            if weight.shape != layer.weight.shape or bias.shape != layer.bias.shape:
                raise ContractViolation('layer {}: tensor shapes changed'.format(idx))
            layers.append(Layer(weight, bias, layer.activation, layer.kind))
        return MlpParams(tuple(layers))

    def zeros_like(self):
        return self.with_tensors([np.zeros_like(t) for t in self.tensors()])

    def is_finite(self):
        return all(np.all(np.isfinite(t)) for t in self.tensors())


@dataclass(frozen=True, eq=False)
class Tape:
    """Activations cached by ``mlp_forward`` for one ``mlp_backward``"""
    params: MlpParams
    inputs: tuple
    preacts: tuple
    batched: bool


@dataclass(frozen=True, eq=False)
class AdamState:
    m: tuple
    v: tuple
    t: int = 0
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8


@dataclass(frozen=True, eq=False)
class EmaParams:
    shadow: MlpParams
    decay: float


def _activate(name, z):
    if name == 'relu':
        return np.maximum(z, 0.0)
    if name == 'swish':
        return z * expit(z)
    return z


def _activate_grad(name, z):
    if name == 'relu':
        return (z > 0).astype(np.float64)
    if name == 'swish':
        sig = expit(z)
        return sig + z * sig * (1.0 - sig)
    return np.ones_like(z)


def mlp_init(layer_specs, seed):
    """Build a network with weights and biases drawn uniformly in ±1/sqrt(fan_in)

    :Returns: MlpParams

    :param layer_specs: One ``(in_dim, out_dim, activation, kind)`` per layer
    :type layer_specs: List

    :param seed: Seed (or SeedSequence entropy) for the initializer
    :type seed: Integer or List
    """
    rng = np.random.default_rng(seed)
    layers = []
    for in_dim, out_dim, activation, kind in layer_specs:
        bound = 1.0 / np.sqrt(in_dim)
        weight = rng.uniform(-bound, bound, size=(out_dim, in_dim))
        bias = rng.uniform(-bound, bound, size=(out_dim,))
        layers.append(Layer(weight, bias, activation, kind))
    return quantize(MlpParams(tuple(layers)))


def dense_net(in_dim, hidden, out_dim, seed, activation='relu'):
    """Plain MLP: ``len(hidden)`` activated layers and a linear read-out"""
    specs = []
    prev = in_dim
    for width in hidden:
        specs.append((prev, width, activation, 'dense'))
        prev = width
    specs.append((prev, out_dim, 'identity', 'dense'))
    return mlp_init(specs, seed)


def residual_net(in_dim, width, n_blocks, out_dim, seed, activation='swish'):
    """Linear embedding, ``n_blocks`` pre-activation residual blocks, linear read-out"""
    specs = [(in_dim, width, 'identity', 'dense')]
    specs.extend((width, width, activation, 'residual') for _ in range(n_blocks))
    specs.append((width, out_dim, 'identity', 'dense'))
    return mlp_init(specs, seed)


def score_net(state_dim, action_dim, n_frequencies, width, n_blocks, seed):
    """(state, action, time features) -> score"""
    return residual_net(state_dim + action_dim + 2 * n_frequencies, width, n_blocks, action_dim, seed)


def q_net(state_dim, action_dim, width, seed):
    """(state, action) -> scalar Q"""
    return dense_net(state_dim + action_dim, (width, width), 1, seed)


def policy_net(state_dim, action_dim, width, seed):
    """state -> pre-squash action mean"""
    return dense_net(state_dim, (width, width), action_dim, seed)


def mlp_forward(params, inputs):
    """Evaluate the network on one input vector or a batch of row vectors

    :Returns: Tuple (output, Tape)

    :param params: The network
    :type params: MlpParams

    :param inputs: Shape ``(in_dim,)`` or ``(batch, in_dim)``
    :type inputs: numpy.ndarray
    """
    x = np.asarray(inputs, dtype=np.float64)
    batched = x.ndim == 2
    if x.ndim == 1:
        x = x[None, :]
    if x.ndim != 2 or x.shape[1] != params.in_dim:
        raise ContractViolation('input has shape {}, network expects {} features'.format(
                                np.shape(inputs), params.in_dim))
    layer_inputs = []
    preacts = []
    for layer in params.layers:
        layer_inputs.append(x)
        if layer.kind == 'residual':
            z = _activate(layer.activation, x) @ layer.weight.T + layer.bias
            preacts.append(x)
            x = x + z
        else:
            z = x @ layer.weight.T + layer.bias
            preacts.append(z)
            x = _activate(layer.activation, z)
    tape = Tape(params, tuple(layer_inputs), tuple(preacts), batched)
    return (x if batched else x[0]), tape


def mlp_backward(params, tape, output_grad):
    """Reverse-mode pass; parameter gradients are summed over the batch

    :Returns: Tuple (param_grads, input_grad)

    :param params: The network the tape was recorded with
    :type params: MlpParams

    :param tape: Returned by the matching ``mlp_forward`` call
    :type tape: Tape

    :param output_grad: d(loss)/d(output), same shape as the forward output
    :type output_grad: numpy.ndarray
    """
    if tape.params is not params:
        raise ContractViolation('tape was recorded with different parameters')
    dy = np.asarray(output_grad, dtype=np.float64)
    if not tape.batched:
        dy = dy[None, :]
    batch = tape.inputs[0].shape[0]
    if dy.shape != (batch, params.out_dim):
        raise ContractViolation('output gradient has shape {}, expected {}'.format(
                                np.shape(output_grad), (batch, params.out_dim)))
    grads = [None] * (2 * len(params.layers))
    for idx in reversed(range(len(params.layers))):
        layer = params.layers[idx]
        x = tape.inputs[idx]
        if layer.kind == 'residual':
            hidden = _activate(layer.activation, x)
            grads[2 * idx] = dy.T @ hidden
            grads[2 * idx + 1] = dy.sum(axis=0)
            dy = dy + (dy @ layer.weight) * _activate_grad(layer.activation, x)
        else:
            dz = dy * _activate_grad(layer.activation, tape.preacts[idx])
            grads[2 * idx] = dz.T @ x
            grads[2 * idx + 1] = dz.sum(axis=0)
            dy = dz @ layer.weight
    input_grad = dy if tape.batched else dy[0]
    return params.with_tensors(grads), input_grad


def _tensors(obj):
    if isinstance(obj, MlpParams):
        return obj.tensors()
    if isinstance(obj, np.ndarray):
        return [obj]
    return list(obj)


def _like(template, tensors):
    if isinstance(template, MlpParams):
        return template.with_tensors(tensors)
    if isinstance(template, np.ndarray):
        return tensors[0]
    return list(tensors)


def adam_init(params, beta1=0.9, beta2=0.999, eps=1e-8):
    zeros = tuple(np.zeros_like(t, dtype=np.float64) for t in _tensors(params))
    return AdamState(m=zeros, v=zeros, t=0, beta1=beta1, beta2=beta2, eps=eps)


def adam_step(state, params, grads, lr):
    """One bias-corrected Adam update

    Works on ``MlpParams``, a single array, or a list of arrays.

    :Returns: Tuple (AdamState, params)

    :param state: Moments and step counter
    :type state: AdamState

    :param params: Current parameters
    :type params: MlpParams

    :param grads: Gradients shaped like ``params``
    :type grads: MlpParams

    :param lr: Learning rate, must be positive
    :type lr: Float
    """
    if not lr > 0:
        raise ContractViolation('learning rate must be positive, got {}'.format(lr))
    values = _tensors(params)
    gradients = _tensors(grads)
    if len(values) != len(gradients) or len(values) != len(state.m):
        raise ContractViolation('parameter, gradient, and optimizer state counts differ')
    for value, grad in zip(values, gradients):
        if np.shape(value) != np.shape(grad):
            raise ContractViolation('gradient shape {} does not match parameter shape {}'.format(
                                    np.shape(grad), np.shape(value)))
        if not np.all(np.isfinite(grad)):
            raise NumericalFailure('non-finite gradient rejected', step=state.t + 1)
    t = state.t + 1
    m_hat_scale = 1.0 / (1.0 - state.beta1 ** t)
    v_hat_scale = 1.0 / (1.0 - state.beta2 ** t)
    new_m, new_v, new_values = [], [], []
    for value, grad, m, v in zip(values, gradients, state.m, state.v):
        m = state.beta1 * m + (1.0 - state.beta1) * grad
        v = state.beta2 * v + (1.0 - state.beta2) * grad * grad
        new_values.append(value - lr * (m * m_hat_scale) / (np.sqrt(v * v_hat_scale) + state.eps))
        new_m.append(m)
        new_v.append(v)
    new_state = AdamState(tuple(new_m), tuple(new_v), t, state.beta1, state.beta2, state.eps)
    return new_state, _like(params, new_values)


def ema_init(params, decay):
    if not 0.0 <= decay <= 1.0:
        raise ContractViolation('EMA decay must lie in [0, 1], got {}'.format(decay))
    return EmaParams(shadow=params, decay=decay)


def ema_update(ema, params, decay=None):
    """shadow <- decay * shadow + (1 - decay) * params

    ``decay`` overrides the stored coefficient for this update only (used for
    EMA warm-up).
    """
    rate = ema.decay if decay is None else decay
    shadow = ema.shadow.tensors()
    current = params.tensors()
    if [s.shape for s in shadow] != [p.shape for p in current]:
        raise ContractViolation('EMA shadow and parameters have different shapes')
    mixed = [rate * s + (1.0 - rate) * p for s, p in zip(shadow, current)]
    return EmaParams(shadow=ema.shadow.with_tensors(mixed), decay=ema.decay)


def quantize(params):
    """Round every value to float32 precision (stored back as float64)"""
    return params.with_tensors([t.astype(np.float32).astype(np.float64) for t in params.tensors()])


def _binary_path(path):
    return os.path.splitext(path)[0] + '.bin'


def save_checkpoint(path, networks, meta=None, arrays=None):
    """Write a JSON manifest at ``path`` plus a sibling ``.bin`` of little-endian float32

    :Returns: None

    :param path: Where the manifest goes; the binary file shares its stem
    :type path: String

    :param networks: Name -> network, written in insertion order
    :type networks: Dictionary

    :param meta: JSON-friendly metadata embedded in the manifest
    :type meta: Dictionary

    :param arrays: Name -> loose array (e.g. a log-std vector)
    :type arrays: Dictionary
    """
    chunks = []
    offset = 0
    manifest = {'format': CHECKPOINT_FORMAT,
                'binary': os.path.basename(_binary_path(path)),
                'networks': {},
                'arrays': {},
                'meta': meta or {}}

    def _add(name, values):
        nonlocal offset
        data = np.ascontiguousarray(values, dtype='<f4').tobytes()
        chunks.append(data)
        entry = {'name': name, 'shape': list(np.shape(values)), 'offset': offset, 'nbytes': len(data)}
        offset += len(data)
        return entry

    for net_name, params in networks.items():
        layers = []
        for idx, layer in enumerate(params.layers):
            prefix = '{}.layers.{}'.format(net_name, idx)
            layers.append({'activation': layer.activation,
                           'kind': layer.kind,
                           'weight': _add(prefix + '.weight', layer.weight),
                           'bias': _add(prefix + '.bias', layer.bias)})
        manifest['networks'][net_name] = layers
    for arr_name, values in (arrays or {}).items():
        manifest['arrays'][arr_name] = _add(arr_name, np.asarray(values))
    with open(_binary_path(path), 'wb') as the_file:
        the_file.write(b''.join(chunks))
    with open(path, 'w') as the_file:
        the_file.write(ujson.dumps(manifest, indent=2))
        the_file.write('\n')


def load_checkpoint(path):
    """Read a checkpoint written by ``save_checkpoint``

    :Returns: Checkpoint

    :param path: The manifest path
    :type path: String
    """
    if not os.path.isfile(path):
        raise ContractViolation('model checkpoint missing: {}'.format(path))
    with open(path) as the_file:
        try:
            manifest = ujson.loads(the_file.read())
        except ValueError as doh:
            raise ContractViolation('unreadable checkpoint manifest {}: {}'.format(path, doh))
    if manifest.get('format') != CHECKPOINT_FORMAT:
        raise ContractViolation('unsupported checkpoint format: {}'.format(manifest.get('format')))
    binary = os.path.join(os.path.dirname(path), manifest['binary'])
    if not os.path.isfile(binary):
        raise ContractViolation('model checkpoint missing: {}'.format(binary))
    with open(binary, 'rb') as the_file:
        blob = the_file.read()

    def _read(entry):
        start, nbytes = entry['offset'], entry['nbytes']
        if start + nbytes > len(blob):
            raise ContractViolation('tensor {} runs past the end of {}'.format(entry['name'], binary))
        values = np.frombuffer(blob, dtype='<f4', count=nbytes // 4, offset=start)
        values = values.astype(np.float64).reshape(entry['shape'])
        if not np.all(np.isfinite(values)):
            raise ContractViolation('tensor {} holds non-finite values'.format(entry['name']))
        return values

    networks = {}
    for net_name, layers in manifest['networks'].items():
        built = [Layer(_read(item['weight']), _read(item['bias']), item['activation'], item['kind'])
                 for item in layers]
        networks[net_name] = MlpParams(tuple(built))
    arrays = {name: _read(entry) for name, entry in manifest['arrays'].items()}
    return Checkpoint(networks, arrays, manifest['meta'])
