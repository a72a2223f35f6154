"""Small multilayer perceptrons with hand-written reverse mode.

Everything is batched: a forward pass takes an ``(n, d)`` array and returns
``(n, k)`` raw scores. Hidden layers use a rectifier, the last layer is affine.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Callable, Sequence

import numpy as np


class ContractError(ValueError):
    """Raised when an operation is called outside its preconditions."""


@dataclass(frozen=True)
class MlpParams:
    weights: tuple[np.ndarray, ...]
    biases: tuple[np.ndarray, ...]

    def __post_init__(self):
        if len(self.weights) != len(self.biases) or not self.weights:
            raise ContractError("need one bias per weight matrix and at least one layer")
        for i, (w, b) in enumerate(zip(self.weights, self.biases)):
            if w.ndim != 2 or b.shape != (w.shape[1],):
                raise ContractError(f"layer {i}: weight {w.shape} does not match bias {b.shape}")
            if i and self.weights[i - 1].shape[1] != w.shape[0]:
                raise ContractError(f"layer {i} input {w.shape[0]} != previous output "
                                    f"{self.weights[i - 1].shape[1]}")

    @property
    def in_dim(self) -> int:
        return self.weights[0].shape[0]

    @property
    def out_dim(self) -> int:
        return self.weights[-1].shape[1]

    @property
    def widths(self) -> tuple[int, ...]:
        return (self.in_dim,) + tuple(w.shape[1] for w in self.weights)

    def tensors(self) -> list[np.ndarray]:
        """Parameter arrays in canonical order: W0, b0, W1, b1, ..."""
        out = []
        for w, b in zip(self.weights, self.biases):
            out += [w, b]
        return out

    @classmethod
    def from_tensors(cls, tensors: Sequence[np.ndarray]) -> "MlpParams":
        tensors = [np.asarray(t, dtype=np.float64) for t in tensors]
        return cls(tuple(tensors[0::2]), tuple(tensors[1::2]))

    def zeros_like(self) -> "GradientBuffer":
        return GradientBuffer.from_tensors([np.zeros_like(t) for t in self.tensors()])

    def flat(self) -> np.ndarray:
        return np.concatenate([t.ravel() for t in self.tensors()])

    def with_flat(self, flat: np.ndarray) -> "MlpParams":
        out, pos = [], 0
        for t in self.tensors():
            out.append(np.asarray(flat[pos:pos + t.size], dtype=np.float64).reshape(t.shape))
            pos += t.size
        if pos != flat.size:
            raise ContractError(f"flat vector has {flat.size} entries, expected {pos}")
        return type(self).from_tensors(out)

    @property
    def size(self) -> int:
        return sum(t.size for t in self.tensors())

    def add_scaled(self, other: "MlpParams", scale: float) -> "MlpParams":
        """Return ``self + scale * other`` as the same type as ``self``."""
        return type(self).from_tensors([a + scale * b for a, b in zip(self.tensors(), other.tensors())])

    def equal(self, other: "MlpParams") -> bool:
        return len(self.tensors()) == len(other.tensors()) and all(
            a.shape == b.shape and np.array_equal(a, b) for a, b in zip(self.tensors(), other.tensors()))


class GradientBuffer(MlpParams):
    """Partial derivatives laid out exactly like an :class:`MlpParams`."""

    def __add__(self, other: "GradientBuffer") -> "GradientBuffer":
        return self.add_scaled(other, 1.0)

    def scaled(self, factor: float) -> "GradientBuffer":
        return GradientBuffer.from_tensors([factor * t for t in self.tensors()])


def init_mlp(widths: Sequence[int], rng: np.random.Generator) -> MlpParams:
    """Glorot-uniform weights, zero biases."""
    if len(widths) < 2:
        raise ContractError("an MLP needs at least input and output widths")
    weights, biases = [], []
    for fan_in, fan_out in zip(widths[:-1], widths[1:]):
        bound = np.sqrt(6.0 / (fan_in + fan_out))
        weights.append(rng.uniform(-bound, bound, size=(fan_in, fan_out)))
        biases.append(np.zeros(fan_out))
    return MlpParams(tuple(weights), tuple(biases))


@dataclass(frozen=True)
class ForwardCache:
    params: MlpParams
    inputs: tuple[np.ndarray, ...]   # input to each layer
    pre: tuple[np.ndarray, ...]      # pre-activations of hidden layers


def forward(params: MlpParams, x: np.ndarray) -> tuple[np.ndarray, ForwardCache]:
    x = np.asarray(x, dtype=np.float64)
    single = x.ndim == 1
    if single:
        x = x[None, :]
    if x.ndim != 2 or x.shape[1] != params.in_dim:
        raise ContractError(f"input of shape {x.shape} does not fit first layer width {params.in_dim}")
    inputs, pre = [], []
    h = x
    last = len(params.weights) - 1
    for i, (w, b) in enumerate(zip(params.weights, params.biases)):
        inputs.append(h)
        z = h @ w + b
        if i < last:
            pre.append(z)
            h = np.maximum(z, 0.0)
        else:
            h = z
    out = h[0] if single else h
    return out, ForwardCache(params, tuple(inputs), tuple(pre))


def predict(params: MlpParams, x: np.ndarray) -> np.ndarray:
    return forward(params, x)[0]


def backward(params: MlpParams, cache: ForwardCache,
             adjoint: np.ndarray) -> tuple[GradientBuffer, np.ndarray]:
    """Reverse pass for the scalar whose d/d(scores) is ``adjoint``.

    Returns the parameter gradient and the adjoint of the network input, the
    latter being what a feature extractor upstream needs.
    """
    if cache.params is not params:
        raise ContractError("cache was produced by a different parameter set")
    g = np.asarray(adjoint, dtype=np.float64)
    if g.ndim == 1:
        g = g[None, :]
    n = cache.inputs[0].shape[0]
    if g.shape != (n, params.out_dim):
        raise ContractError(f"adjoint shape {g.shape} != output shape {(n, params.out_dim)}")
    dws, dbs = [], []
    for i in range(len(params.weights) - 1, -1, -1):
        dws.append(cache.inputs[i].T @ g)
        dbs.append(g.sum(axis=0))
        g = g @ params.weights[i].T
        if i > 0:
            g = g * (cache.pre[i - 1] > 0)
    grads = GradientBuffer(tuple(reversed(dws)), tuple(reversed(dbs)))
    dx = g[0] if np.asarray(adjoint).ndim == 1 else g
    return grads, dx


def softmax(v: np.ndarray) -> np.ndarray:
    """Softmax over the last axis, shifted by the row maximum."""
    v = np.asarray(v, dtype=np.float64)
    z = v - v.max(axis=-1, keepdims=True)
    e = np.exp(z)
    return e / e.sum(axis=-1, keepdims=True)


def log_softmax(v: np.ndarray) -> np.ndarray:
    v = np.asarray(v, dtype=np.float64)
    z = v - v.max(axis=-1, keepdims=True)
    return z - np.log(np.exp(z).sum(axis=-1, keepdims=True))


def finite_diff_check(loss_fn: Callable[[MlpParams], tuple[float, MlpParams]],
                      params: MlpParams, step: float = 1e-5) -> float:
    """Max relative error between ``loss_fn``'s analytic gradient and central differences.

    ``loss_fn(params)`` must return ``(value, gradient)``; only the value is
    used at perturbed points.
    """
    _, analytic = loss_fn(params)
    analytic = analytic.flat()
    base = params.flat()
    numeric = np.empty_like(base)
    for j in range(base.size):
        plus, minus = base.copy(), base.copy()
        plus[j] += step
        minus[j] -= step
        numeric[j] = (loss_fn(params.with_flat(plus))[0] - loss_fn(params.with_flat(minus))[0]) / (2 * step)
    denom = np.maximum(1e-8, np.abs(analytic) + np.abs(numeric))
    return float(np.max(np.abs(analytic - numeric) / denom))
