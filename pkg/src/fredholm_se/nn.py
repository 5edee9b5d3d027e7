"""Fully connected tanh networks with exact reverse-mode gradients and Adam.

Layer order
-----------
A network with ``depth`` hidden layers has ``depth + 1`` affine layers.
Layer ``k`` maps ``fan_in -> fan_out`` as ``h @ W_k + b_k``; hidden layers
apply ``tanh``, the last one is affine only.  The flat parameter vector
concatenates, for ``k = 0 .. depth``, ``W_k`` in row-major order followed by
``b_k``.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, field

import numpy as np

from .errors import ConfigurationError, InputShapeError, NumericError
from .rng import Rng

ACTIVATIONS = ("tanh",)


@dataclass(frozen=True)
class NetworkArch:
    input_dim: int
    output_dim: int
    width: int
    depth: int
    activation: str = "tanh"

    def __post_init__(self):
        for name in ("input_dim", "output_dim", "width", "depth"):
            value = getattr(self, name)
            if not isinstance(value, (int, np.integer)) or value < 1:
                raise ConfigurationError(f"must be an integer >= 1, got {value!r}", key=name)
        if self.activation not in ACTIVATIONS:
            raise ConfigurationError(f"unsupported activation {self.activation!r}", key="activation")

    @property
    def layer_sizes(self) -> list[tuple[int, int]]:
        dims = [self.input_dim] + [self.width] * self.depth + [self.output_dim]
        return list(zip(dims[:-1], dims[1:]))

    @property
    def n_params(self) -> int:
        return sum((fi + 1) * fo for fi, fo in self.layer_sizes)

    def to_dict(self) -> dict:
        return {
            "input_dim": int(self.input_dim),
            "output_dim": int(self.output_dim),
            "width": int(self.width),
            "depth": int(self.depth),
            "activation": self.activation,
        }

    @classmethod
    def from_dict(cls, d: dict) -> "NetworkArch":
        return cls(**d)


def _layer_slices(arch: NetworkArch):
    """Yield ``(w_slice, w_shape, b_slice)`` per layer into the flat vector."""
    pos = 0
    for fi, fo in arch.layer_sizes:
        w = slice(pos, pos + fi * fo)
        pos += fi * fo
        b = slice(pos, pos + fo)
        pos += fo
        yield w, (fi, fo), b


@dataclass(frozen=True, eq=False)
class NetworkWeights:
    """Immutable parameter set; ``weights[k]`` and ``biases[k]`` are views of ``flat``."""

    arch: NetworkArch
    flat: np.ndarray
    weights: tuple = field(init=False, repr=False)
    biases: tuple = field(init=False, repr=False)

    def __post_init__(self):
        flat = np.array(self.flat, dtype=np.float64, copy=True)
        if flat.shape != (self.arch.n_params,):
            raise InputShapeError(
                f"flat weights have shape {flat.shape}, architecture needs ({self.arch.n_params},)"
            )
        flat.flags.writeable = False
        ws, bs = [], []
        for w, shape, b in _layer_slices(self.arch):
            ws.append(flat[w].reshape(shape))
            bs.append(flat[b])
        object.__setattr__(self, "flat", flat)
        object.__setattr__(self, "weights", tuple(ws))
        object.__setattr__(self, "biases", tuple(bs))

    @classmethod
    def from_layers(cls, arch: NetworkArch, weights, biases) -> "NetworkWeights":
        parts = []
        for (fi, fo), w, b in zip(arch.layer_sizes, weights, biases):
            w = np.asarray(w, dtype=np.float64)
            b = np.asarray(b, dtype=np.float64)
            if w.shape != (fi, fo) or b.shape != (fo,):
                raise InputShapeError(f"layer shapes {w.shape}/{b.shape}, expected {(fi, fo)}/{(fo,)}")
            parts += [w.ravel(), b]
        return cls(arch, np.concatenate(parts))

    def __eq__(self, other):
        if not isinstance(other, NetworkWeights):
            return NotImplemented
        return self.arch == other.arch and np.array_equal(self.flat, other.flat)

    __hash__ = None

    def layer_of(self, index: int) -> int:
        """Layer number owning flat coordinate ``index``."""
        for k, (w, _, b) in enumerate(_layer_slices(self.arch)):
            if index < b.stop:
                return k
        raise IndexError(index)

    # JSON snapshot: {"arch": {...}, "flat_weights": [...]}
    def to_json(self) -> str:
        return json.dumps({"arch": self.arch.to_dict(), "flat_weights": self.flat.tolist()})

    @classmethod
    def from_json(cls, text: str) -> "NetworkWeights":
        d = json.loads(text)
        return cls(NetworkArch.from_dict(d["arch"]), np.asarray(d["flat_weights"], dtype=np.float64))


def flatten(w: NetworkWeights) -> np.ndarray:
    return w.flat.copy()


def unflatten(arch: NetworkArch, flat) -> NetworkWeights:
    return NetworkWeights(arch, flat)


def init_weights(arch: NetworkArch, seed: int) -> NetworkWeights:
    """Weights uniform on ``[-1/sqrt(fan_in), 1/sqrt(fan_in)]``, biases zero."""
    rng = Rng(seed)
    flat = np.zeros(arch.n_params)
    for w, (fi, fo), _ in _layer_slices(arch):
        bound = 1.0 / math.sqrt(fi)
        flat[w] = rng.uniform(fi * fo, -bound, bound)
    return NetworkWeights(arch, flat)


def _as_batch(x, dim: int, what: str) -> tuple[np.ndarray, bool]:
    x = np.asarray(x, dtype=np.float64)
    single = x.ndim == 1
    if single:
        x = x[None, :]
    if x.ndim != 2 or x.shape[1] != dim:
        raise InputShapeError(f"{what} has shape {x.shape}, expected (..., {dim})")
    return np.ascontiguousarray(x), single


def forward_cached(w: NetworkWeights, x: np.ndarray) -> list[np.ndarray]:
    """Activations ``[x, h_1, ..., h_depth, y]`` for a 2-D input batch."""
    acts = [x]
    h = x
    last = len(w.weights) - 1
    for k, (wk, bk) in enumerate(zip(w.weights, w.biases)):
        z = h @ wk
        z += bk
        h = np.tanh(z, out=z) if k < last else z
        acts.append(h)
    return acts


def backward_flat(w: NetworkWeights, acts: list[np.ndarray], upstream: np.ndarray) -> np.ndarray:
    """Flat gradient of ``sum(upstream * y)`` given cached activations."""
    parts = []
    delta = upstream
    for layer in range(len(w.weights) - 1, -1, -1):
        h = acts[layer]
        parts.append(delta.sum(axis=0))
        parts.append((h.T @ delta).ravel())
        if layer > 0:
            delta = (delta @ w.weights[layer].T) * (1.0 - h * h)
    return np.concatenate(parts[::-1])


def forward(w: NetworkWeights, x) -> np.ndarray:
    """Network output for one input vector or a batch of rows."""
    xb, single = _as_batch(x, w.arch.input_dim, "input")
    y = forward_cached(w, xb)[-1]
    return y[0] if single else y


def backprop(w: NetworkWeights, x, upstream) -> NetworkWeights:
    """Sum over the batch of d(upstream . forward(x))/d(weights), shaped like ``w``."""
    xb, _ = _as_batch(x, w.arch.input_dim, "input")
    gb, _ = _as_batch(upstream, w.arch.output_dim, "upstream gradient")
    if gb.shape[0] != xb.shape[0]:
        raise InputShapeError(f"{xb.shape[0]} inputs but {gb.shape[0]} upstream gradients")
    acts = forward_cached(w, xb)
    return NetworkWeights(w.arch, backward_flat(w, acts, gb))


@dataclass(frozen=True, eq=False)
class AdamState:
    m: np.ndarray
    v: np.ndarray
    step: int = 0
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8

    @classmethod
    def zeros(cls, n: int) -> "AdamState":
        return cls(np.zeros(n), np.zeros(n))

    @classmethod
    def for_weights(cls, w: NetworkWeights) -> "AdamState":
        return cls.zeros(w.arch.n_params)


def adam_update(x: np.ndarray, g: np.ndarray, st: AdamState, lr: float) -> tuple[np.ndarray, AdamState]:
    """Bias-corrected Adam on a flat vector."""
    step = st.step + 1
    m = st.beta1 * st.m + (1.0 - st.beta1) * g
    v = st.beta2 * st.v + (1.0 - st.beta2) * (g * g)
    m_hat = m / (1.0 - st.beta1**step)
    v_hat = v / (1.0 - st.beta2**step)
    x_new = x - lr * m_hat / (np.sqrt(v_hat) + st.eps)
    return x_new, AdamState(m, v, step, st.beta1, st.beta2, st.eps)


def adam_step(w: NetworkWeights, g, st: AdamState, lr: float) -> tuple[NetworkWeights, AdamState]:
    if lr < 0:
        raise ConfigurationError(f"learning rate must be non-negative, got {lr}", key="lr")
    g = g.flat if isinstance(g, NetworkWeights) else np.asarray(g, dtype=np.float64)
    if g.shape != w.flat.shape or st.m.shape != w.flat.shape:
        raise InputShapeError(f"gradient shape {g.shape} does not match weights {w.flat.shape}")
    bad = np.flatnonzero(~np.isfinite(g))
    if bad.size:
        raise NumericError(f"non-finite gradient in layer {w.layer_of(int(bad[0]))} (coordinate {bad[0]})")
    flat, st = adam_update(w.flat, g, st, lr)
    return NetworkWeights(w.arch, flat), st
