"""
Feed-forward networks for the actor and the critic.

This module defines:
- `ModelParameters`: flat float64 parameter vector plus its shape manifest.
- `Mlp`: relu hidden layers with a tanh or identity output, forward and reverse-mode backward.
- `AdamState` / `adam_step`: bias-corrected Adam on flat parameter vectors.
- `hard_update` / `soft_update`: target network refresh.
- `write_parameters` / `read_parameters`: the checkpoint file format.

Checkpoint layout: one UTF-8 JSON header line

    {"format": "der-params-1", "nets": [{"name": "actor", "shapes": [[13, 64], [64], ...], "size": 5382}, ...]}

followed by the little-endian float64 values of every net, concatenated in header order.
"""

import dataclasses
import hashlib
import json
import logging
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .exceptions import CheckpointError

logger = logging.getLogger("django.der.logger")

CHECKPOINT_FORMAT = "der-params-1"


@dataclass(frozen=True, eq=False)
class ModelParameters:
    """
    Flat parameter snapshot of one network.

    Fields:
        - `values` (float64[n]): weights and biases, layer by layer (W0, b0, W1, b1, ...).
        - `shapes` (tuple[tuple[int]]): shape of every array packed into `values`.
        - `version` (int): publication counter, 0 for unpublished snapshots.
    """

    values: np.ndarray
    shapes: tuple
    version: int = 0

    def __post_init__(self):
        values = np.array(self.values, dtype=np.float64).reshape(-1)
        shapes = tuple(tuple(int(d) for d in shape) for shape in self.shapes)
        expected = sum(int(np.prod(shape)) for shape in shapes)
        if values.size != expected:
            raise ValueError(f"Parameter vector has {values.size} values, manifest needs {expected}.")
        values.setflags(write=False)
        object.__setattr__(self, 'values', values)
        object.__setattr__(self, 'shapes', shapes)

    @classmethod
    def flatten(cls, arrays, version=0):
        return cls(np.concatenate([np.ravel(a) for a in arrays]), tuple(np.shape(a) for a in arrays), version)

    def unflatten(self):
        arrays, offset = [], 0
        for shape in self.shapes:
            size = int(np.prod(shape))
            arrays.append(self.values[offset:offset + size].reshape(shape).copy())
            offset += size
        return arrays

    @property
    def checksum(self):
        return hashlib.sha256(self.values.tobytes()).hexdigest()

    def __eq__(self, other):
        return (isinstance(other, ModelParameters) and self.shapes == other.shapes
                and np.array_equal(self.values, other.values))


def _check_manifest(target, online):
    if target.shapes != online.shapes:
        raise ValueError(f"Shape manifests differ: {target.shapes} vs {online.shapes}")


def hard_update(target, online):
    """Returns an exact copy of `online` for the target network."""
    _check_manifest(target, online)
    return ModelParameters(online.values.copy(), online.shapes)


def soft_update(target, online, tau):
    """Polyak averaging; tau == 1 is the hard copy."""
    _check_manifest(target, online)
    if tau == 1.0:
        return hard_update(target, online)
    return ModelParameters(tau * online.values + (1.0 - tau) * target.values, online.shapes)


class Mlp:
    """
    Fully connected network.

    Fields:
        - `sizes` (tuple[int]): input, hidden..., output widths.
        - `output_activation` (str): `tanh` for the actor, `identity` for the critic.
        - `weights` / `biases`: one (fan_in, fan_out) matrix and one vector per layer.

    Hidden layers use relu. Weights and biases start uniform in ±1/sqrt(fan_in).
    """

    ACTIVATIONS = ('tanh', 'identity')

    def __init__(self, sizes, output_activation='identity', rng=None):
        if output_activation not in self.ACTIVATIONS:
            raise ValueError(f"Unknown output activation {output_activation!r}")
        if len(sizes) < 2:
            raise ValueError("An Mlp needs at least an input and an output width.")
        self.sizes = tuple(int(s) for s in sizes)
        self.output_activation = output_activation
        rng = rng if rng is not None else np.random.default_rng(0)
        self.weights, self.biases = [], []
        for fan_in, fan_out in zip(self.sizes[:-1], self.sizes[1:]):
            bound = 1.0 / np.sqrt(fan_in)
            self.weights.append(rng.uniform(-bound, bound, size=(fan_in, fan_out)))
            self.biases.append(rng.uniform(-bound, bound, size=fan_out))

    @classmethod
    def zeros(cls, sizes, output_activation='identity'):
        net = cls(sizes, output_activation)
        net.weights = [np.zeros_like(w) for w in net.weights]
        net.biases = [np.zeros_like(b) for b in net.biases]
        return net

    @classmethod
    def from_parameters(cls, params, output_activation='identity'):
        shapes = params.shapes
        sizes = [shapes[0][0]] + [shape[1] for shape in shapes[0::2]]
        net = cls.zeros(sizes, output_activation)
        net.load_parameters(params)
        return net

    def __repr__(self):
        return f"Mlp(sizes={self.sizes}, output={self.output_activation})"

    @property
    def shapes(self):
        shapes = []
        for w, b in zip(self.weights, self.biases):
            shapes.extend([w.shape, b.shape])
        return tuple(shapes)

    def parameters(self, version=0):
        arrays = []
        for w, b in zip(self.weights, self.biases):
            arrays.extend([w, b])
        return ModelParameters.flatten(arrays, version)

    def load_parameters(self, params):
        if params.shapes != self.shapes:
            raise ValueError(f"Parameters for {params.shapes} do not fit {self}")
        arrays = params.unflatten()
        self.weights = arrays[0::2]
        self.biases = arrays[1::2]

    def _check_input(self, x):
        if x.shape[-1] != self.sizes[0]:
            raise ValueError(f"{self} expects inputs of width {self.sizes[0]}, got {x.shape[-1]}")

    def forward(self, x, return_cache=False):
        """Evaluates the network on one vector or on rows of a matrix."""
        x = np.asarray(x, dtype=np.float64)
        single = x.ndim == 1
        h = np.atleast_2d(x)
        self._check_input(h)
        inputs, pre_activations = [], []
        last = len(self.weights) - 1
        for i, (w, b) in enumerate(zip(self.weights, self.biases)):
            inputs.append(h)
            z = h @ w + b
            pre_activations.append(z)
            if i < last:
                h = np.maximum(z, 0.0)
            elif self.output_activation == 'tanh':
                h = np.tanh(z)
            else:
                h = z
        out = h[0] if single else h
        if return_cache:
            return out, (inputs, pre_activations, h)
        return out

    def backward(self, x, upstream, cache=None):
        """
        Gradients of sum(output * upstream) with respect to every parameter and to the input.

        Returns `(parameter_gradient, input_gradient)`; the parameter gradient is flat, in the
        same layout as `parameters().values`.
        """
        x = np.asarray(x, dtype=np.float64)
        single = x.ndim == 1
        if cache is None:
            _, cache = self.forward(x, return_cache=True)
        inputs, pre_activations, out = cache
        g = np.atleast_2d(np.asarray(upstream, dtype=np.float64))
        if g.shape != out.shape:
            raise ValueError(f"Upstream gradient {g.shape} does not match output {out.shape}")

        last = len(self.weights) - 1
        grads = [None] * (2 * len(self.weights))
        for i in range(last, -1, -1):
            if i == last:
                if self.output_activation == 'tanh':
                    g = g * (1.0 - out ** 2)
            else:
                g = g * (pre_activations[i] > 0.0)
            grads[2 * i] = inputs[i].T @ g
            grads[2 * i + 1] = g.sum(axis=0)
            g = g @ self.weights[i].T
        flat = np.concatenate([np.ravel(a) for a in grads])
        return flat, (g[0] if single else g)


@dataclass
class AdamState:
    """
    Adam accumulators for one flat parameter vector.

    Fields:
        - `t` (int): steps taken.
        - `m`, `v` (float64[n]): first and second moment estimates.
        - `skipped` (int): steps rejected because of non-finite gradients.
    """

    size: int
    lr: float = 1e-3
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    t: int = 0
    m: np.ndarray = None
    v: np.ndarray = None
    skipped: int = 0

    def __post_init__(self):
        if self.m is None:
            self.m = np.zeros(self.size)
        if self.v is None:
            self.v = np.zeros(self.size)


def adam_step(params, grads, state):
    """One bias-corrected Adam update; returns the new parameters and a new state."""
    params = np.asarray(params, dtype=np.float64)
    grads = np.asarray(grads, dtype=np.float64)
    if params.shape != grads.shape or params.shape != state.m.shape:
        raise ValueError(f"Adam shapes differ: params {params.shape}, grads {grads.shape}, state {state.m.shape}")
    if not np.all(np.isfinite(grads)):
        logger.warning(f"Adam: non-finite gradient, step {state.t + 1} skipped")
        return params, dataclasses.replace(state, skipped=state.skipped + 1)

    t = state.t + 1
    m = state.beta1 * state.m + (1.0 - state.beta1) * grads
    v = state.beta2 * state.v + (1.0 - state.beta2) * grads ** 2
    m_hat = m / (1.0 - state.beta1 ** t)
    v_hat = v / (1.0 - state.beta2 ** t)
    new_params = params - state.lr * m_hat / (np.sqrt(v_hat) + state.eps)
    return new_params, dataclasses.replace(state, t=t, m=m, v=v)


def write_parameters(path, named):
    """Writes `{name: ModelParameters}` in the checkpoint layout; identical inputs give identical bytes."""
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    header = {
        'format': CHECKPOINT_FORMAT,
        'nets': [{'name': name, 'shapes': [list(s) for s in params.shapes], 'size': int(params.values.size)}
                 for name, params in named.items()],
    }
    with path.open('wb') as handle:
        handle.write((json.dumps(header, sort_keys=True) + '\n').encode('utf-8'))
        for params in named.values():
            handle.write(params.values.astype('<f8').tobytes())
    return path


def read_parameters(path):
    path = Path(path)
    with path.open('rb') as handle:
        try:
            header = json.loads(handle.readline().decode('utf-8'))
        except ValueError as exc:
            raise CheckpointError(f"{path} has no readable header: {exc}") from exc
        if header.get('format') != CHECKPOINT_FORMAT:
            raise CheckpointError(f"{path} is not a {CHECKPOINT_FORMAT} file.")
        named = {}
        for net in header['nets']:
            raw = handle.read(8 * net['size'])
            if len(raw) != 8 * net['size']:
                raise CheckpointError(f"{path} is truncated inside {net['name']}.")
            named[net['name']] = ModelParameters(np.frombuffer(raw, dtype='<f8').astype(np.float64),
                                                 tuple(tuple(s) for s in net['shapes']))
        if handle.read(1):
            raise CheckpointError(f"{path} has trailing bytes after the last net.")
    return named
