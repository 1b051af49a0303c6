"""Small fully connected Q-network: ReLU hidden layers, linear output.

Arithmetic is float64 in memory; weight files store float32.
"""

from __future__ import annotations

import struct
from os import PathLike
from typing import Sequence

import numpy as np

try:
    import numba
except ImportError:  # pragma: no cover
    numba = None

DEFAULT_WIDTHS = (1, 24, 24, 12)
MAGIC = b"MRW1"


class WeightFormatError(ValueError):
    """A weight file could not be decoded."""


class Weights:
    """Network parameters in one flat float64 buffer.

    ``layers`` holds per-layer ``(W, b)`` views into ``params``; ``W`` has
    shape ``(out, in)``. Layers are stored consecutively, weights row-major
    followed by biases.
    """

    def __init__(self, layers: Sequence[tuple[np.ndarray, np.ndarray]]):
        widths = (layers[0][0].shape[1],) + tuple(W.shape[0] for W, _ in layers)
        self.params = np.concatenate(
            [np.concatenate([np.ravel(W), np.ravel(b)]) for W, b in layers]
        ).astype(np.float64)
        self.widths = widths
        self.layers = self._views()

    @classmethod
    def from_flat(cls, params: np.ndarray, widths: Sequence[int]) -> "Weights":
        """Wrap an existing buffer without copying it."""
        w = cls.__new__(cls)
        w.params = params
        w.widths = tuple(widths)
        if params.size != param_count(widths):
            raise ValueError("buffer size does not match widths")
        w.layers = w._views()
        return w

    def _views(self) -> list[tuple[np.ndarray, np.ndarray]]:
        views, off = [], 0
        for n_in, n_out in zip(self.widths[:-1], self.widths[1:]):
            W = self.params[off:off + n_in * n_out].reshape(n_out, n_in)
            off += n_in * n_out
            views.append((W, self.params[off:off + n_out]))
            off += n_out
        return views

    @property
    def n_inputs(self) -> int:
        return self.widths[0]

    @property
    def n_outputs(self) -> int:
        return self.widths[-1]

    def copy(self) -> "Weights":
        return Weights.from_flat(self.params.copy(), self.widths)

    def equal(self, other: "Weights") -> bool:
        """Bitwise equality of every parameter."""
        return self.widths == other.widths and self.params.tobytes() == other.params.tobytes()


def _check_widths(widths: Sequence[int]) -> tuple[int, ...]:
    widths = tuple(int(n) for n in widths)
    if len(widths) < 2 or any(n < 1 for n in widths):
        raise ValueError(f"invalid layer widths {widths}")
    return widths


def param_count(widths: Sequence[int] = DEFAULT_WIDTHS) -> int:
    widths = _check_widths(widths)
    return sum(n_in * n_out + n_out for n_in, n_out in zip(widths[:-1], widths[1:]))


def init_network(widths: Sequence[int] = DEFAULT_WIDTHS, seed: int = 0) -> Weights:
    """Glorot-uniform weights, zero biases."""
    widths = _check_widths(widths)
    rng = np.random.default_rng(seed)
    layers = []
    for n_in, n_out in zip(widths[:-1], widths[1:]):
        bound = np.sqrt(6.0 / (n_in + n_out))
        layers.append((rng.uniform(-bound, bound, size=(n_out, n_in)), np.zeros(n_out)))
    return Weights(layers)


def zero_network(widths: Sequence[int] = DEFAULT_WIDTHS) -> Weights:
    widths = _check_widths(widths)
    return Weights.from_flat(np.zeros(param_count(widths)), widths)


def _as_input(w: Weights, x) -> np.ndarray:
    x = np.asarray(x, dtype=np.float64)
    if x.shape[-1] != w.n_inputs:
        raise ValueError(f"input width {x.shape[-1]} does not match network input width {w.n_inputs}")
    return x


def forward(w: Weights, x) -> np.ndarray:
    """Q-values for one input vector, or for a batch of shape ``(n, in)``."""
    h = _as_input(w, x)
    last = len(w.layers) - 1
    for i, (W, b) in enumerate(w.layers):
        h = h @ W.T + b
        if i < last:
            h = np.maximum(h, 0.0)
    return h


def _activations(w: Weights, x: np.ndarray) -> tuple[list[np.ndarray], list[np.ndarray]]:
    """Layer inputs and pre-activations of a single forward pass."""
    inputs, pre = [], []
    h = x
    last = len(w.layers) - 1
    for i, (W, b) in enumerate(w.layers):
        inputs.append(h)
        z = W @ h + b
        pre.append(z)
        h = np.maximum(z, 0.0) if i < last else z
    return inputs, pre


def pre_activations(w: Weights, x) -> list[np.ndarray]:
    return _activations(w, _as_input(w, x))[1]


def loss(w: Weights, x, action: int, target: float) -> float:
    return float((target - forward(w, x)[action]) ** 2)


def gradients(w: Weights, x, action: int, target: float) -> list[tuple[np.ndarray, np.ndarray]]:
    """Gradient of ``(target - q[action])**2`` for every ``(W, b)``."""
    x = _as_input(w, x)
    inputs, pre = _activations(w, x)
    delta = np.zeros(w.n_outputs)
    delta[action] = -2.0 * (target - pre[-1][action])
    grads = []
    for i in range(len(w.layers) - 1, -1, -1):
        grads.append((np.outer(delta, inputs[i]), delta))
        if i:
            delta = (w.layers[i][0].T @ delta) * (pre[i - 1] > 0.0)
    grads.reverse()
    return grads


def sgd_step(w: Weights, x, action: int, target: float, lr: float) -> Weights:
    """One plain SGD step on ``(target - q[action])**2``; updates ``w`` in place."""
    if not lr > 0:
        raise ValueError("lr must be > 0")
    if not np.isfinite(target) or not np.all(np.isfinite(x)):
        raise ValueError("non-finite target or input")
    for (W, b), (gW, gb) in zip(w.layers, gradients(w, x, action, target)):
        W -= lr * gW
        b -= lr * gb
    return w


def _sgd_batch_kernel(params, widths, X, actions, targets, lr):
    n_layers = widths.shape[0] - 1
    wmax = widths.max()
    acts = np.zeros((n_layers + 1, wmax))
    pre = np.zeros((n_layers, wmax))
    delta = np.zeros(wmax)
    back = np.zeros(wmax)
    offsets = np.zeros(n_layers + 1, dtype=np.int64)
    for l in range(n_layers):
        offsets[l + 1] = offsets[l] + widths[l] * widths[l + 1] + widths[l + 1]
    for s in range(X.shape[0]):
        for i in range(widths[0]):
            acts[0, i] = X[s, i]
        for l in range(n_layers):
            n_in, n_out, off = widths[l], widths[l + 1], offsets[l]
            boff = off + n_in * n_out
            for o in range(n_out):
                z = 0.0
                for i in range(n_in):
                    z += params[off + o * n_in + i] * acts[l, i]
                z += params[boff + o]
                pre[l, o] = z
                acts[l + 1, o] = z if (l == n_layers - 1 or z > 0.0) else 0.0
        n_out = widths[n_layers]
        for o in range(n_out):
            delta[o] = 0.0
        a = actions[s]
        delta[a] = -2.0 * (targets[s] - pre[n_layers - 1, a])
        for l in range(n_layers - 1, -1, -1):
            n_in, n_out, off = widths[l], widths[l + 1], offsets[l]
            boff = off + n_in * n_out
            if l > 0:
                # propagate through the pre-update weights
                for i in range(n_in):
                    g = 0.0
                    for o in range(n_out):
                        g += params[off + o * n_in + i] * delta[o]
                    back[i] = g if pre[l - 1, i] > 0.0 else 0.0
            for o in range(n_out):
                d = delta[o]
                if d != 0.0:
                    for i in range(n_in):
                        params[off + o * n_in + i] -= lr * d * acts[l, i]
                    params[boff + o] -= lr * d
            if l > 0:
                for i in range(n_in):
                    delta[i] = back[i]


if numba is not None:
    _sgd_batch_kernel = numba.njit(cache=True)(_sgd_batch_kernel)


def sgd_batch(w: Weights, X, actions, targets, lr: float) -> Weights:
    """Sequential per-sample SGD over a minibatch, in place.

    Equivalent to calling :func:`sgd_step` once per row of ``X``, in order.
    """
    if not lr > 0:
        raise ValueError("lr must be > 0")
    X = np.ascontiguousarray(_as_input(w, X), dtype=np.float64).reshape(-1, w.n_inputs)
    targets = np.ascontiguousarray(targets, dtype=np.float64)
    actions = np.ascontiguousarray(actions, dtype=np.int64)
    if not (np.all(np.isfinite(X)) and np.all(np.isfinite(targets))):
        raise ValueError("non-finite target or input")
    if actions.size and (actions.min() < 0 or actions.max() >= w.n_outputs):
        raise ValueError("action index out of range")
    _sgd_batch_kernel(w.params, np.asarray(w.widths, dtype=np.int64), X, actions, targets, float(lr))
    return w


def to_bytes(w: Weights) -> bytes:
    parts = [MAGIC, struct.pack("<I", len(w.layers))]
    for W, b in w.layers:
        n_out, n_in = W.shape
        parts.append(struct.pack("<II", n_in, n_out))
        parts.append(W.astype("<f4").tobytes())
        parts.append(b.astype("<f4").tobytes())
    return b"".join(parts)


def from_bytes(data: bytes) -> Weights:
    if len(data) < 8:
        raise WeightFormatError(f"truncated weight file: {len(data)} bytes")
    if data[:4] != MAGIC:
        raise WeightFormatError(f"bad magic {data[:4]!r}, expected {MAGIC!r}")
    (n_layers,) = struct.unpack_from("<I", data, 4)
    if n_layers < 1:
        raise WeightFormatError("weight file declares zero layers")
    offset = 8
    layers = []
    prev_out = None
    for k in range(n_layers):
        if offset + 8 > len(data):
            raise WeightFormatError(f"truncated header of layer {k}")
        n_in, n_out = struct.unpack_from("<II", data, offset)
        offset += 8
        if n_in < 1 or n_out < 1:
            raise WeightFormatError(f"layer {k} has empty shape {n_out}x{n_in}")
        if prev_out is not None and n_in != prev_out:
            raise WeightFormatError(f"layer {k} input width {n_in} != previous output width {prev_out}")
        size = 4 * (n_in * n_out + n_out)
        if offset + size > len(data):
            raise WeightFormatError(f"truncated payload of layer {k}")
        W = np.frombuffer(data, "<f4", n_in * n_out, offset).reshape(n_out, n_in)
        b = np.frombuffer(data, "<f4", n_out, offset + 4 * n_in * n_out)
        if not (np.all(np.isfinite(W)) and np.all(np.isfinite(b))):
            raise WeightFormatError(f"non-finite values in layer {k}")
        layers.append((W.astype(np.float64), b.astype(np.float64)))
        offset += size
        prev_out = n_out
    if offset != len(data):
        raise WeightFormatError(f"{len(data) - offset} trailing bytes after last layer")
    return Weights(layers)


def save_weights(w: Weights, path: str | PathLike) -> None:
    with open(path, "wb") as f:
        f.write(to_bytes(w))


def load_weights(path: str | PathLike) -> Weights:
    with open(path, "rb") as f:
        return from_bytes(f.read())
