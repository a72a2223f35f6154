"""Source, target and proxy losses over raw score vectors.

All functions accept a single score vector or a batch ``(n, K)``. The second
argument of the two cross-entropy style losses is a class index; callers that
hold a scoring function instead pass its argmax (the hard label).
"""

from __future__ import annotations

import numpy as np

from .numerics import ContractError, log_softmax, softmax

TARGET_LOSS_FLOOR = float(np.log(1e-12))


def argmax_label(scores: np.ndarray) -> np.ndarray | int:
    """Index of the largest score; ties go to the lowest index."""
    scores = np.asarray(scores)
    if scores.shape[-1] == 0:
        raise ContractError("cannot take argmax of an empty score vector")
    out = np.argmax(scores, axis=-1)
    return int(out) if out.ndim == 0 else out


def one_hot(labels, k: int) -> np.ndarray:
    labels = np.asarray(labels, dtype=int)
    if np.any(labels < 0) or np.any(labels >= k):
        raise ContractError(f"class index outside [0, {k})")
    return np.eye(k)[labels]


def _rows(scores, c):
    scores = np.asarray(scores, dtype=np.float64)
    single = scores.ndim == 1
    s = scores[None, :] if single else scores
    c = np.broadcast_to(np.asarray(c, dtype=int), (s.shape[0],))
    if np.any(c < 0) or np.any(c >= s.shape[1]):
        raise ContractError(f"class index outside [0, {s.shape[1]})")
    return s, c, single


def loss_source(scores, c):
    """Cross-entropy ``-log softmax(scores)[c]``."""
    s, c, single = _rows(scores, c)
    idx = np.arange(len(c))
    z = s - s.max(axis=1, keepdims=True)
    e = np.exp(z)
    own = e[idx, c]
    rest = np.where(np.arange(s.shape[1]) == c[:, None], 0.0, e).sum(axis=1)
    # log1p keeps the tail when the own class dominates
    with np.errstate(divide="ignore", invalid="ignore"):
        out = np.where(own >= rest, np.log1p(rest / own), np.log(own + rest) - z[idx, c])
    return float(out[0]) if single else out


def _log_one_minus(s, c):
    # log(1 - softmax_c) = logsumexp over k != c  -  logsumexp over all k
    m = s.max(axis=1, keepdims=True)
    e = np.exp(s - m)
    total = e.sum(axis=1)
    rest = total - e[np.arange(len(c)), c]
    with np.errstate(divide="ignore"):
        return np.log(rest) - np.log(total)


def loss_target(scores, c):
    """Modified cross-entropy ``log(1 - softmax(scores)[c])``, floored at log(1e-12)."""
    s, c, single = _rows(scores, c)
    out = np.maximum(_log_one_minus(s, c), TARGET_LOSS_FLOOR)
    return float(out[0]) if single else out


def loss_mse(prediction, label):
    """Mean over classes of the squared difference of two simplex vectors."""
    p = np.asarray(prediction, dtype=np.float64)
    y = np.asarray(label, dtype=np.float64)
    if p.shape != y.shape:
        raise ContractError(f"prediction {p.shape} and label {y.shape} differ in shape")
    out = np.mean((p - y) ** 2, axis=-1)
    return float(out) if out.ndim == 0 else out


def loss_soft_ce(scores, label):
    """Cross-entropy of softmax(scores) against a soft label."""
    s = np.asarray(scores, dtype=np.float64)
    y = np.asarray(label, dtype=np.float64)
    if s.shape != y.shape:
        raise ContractError(f"scores {s.shape} and label {y.shape} differ in shape")
    out = -(y * log_softmax(s)).sum(axis=-1)
    return float(out) if out.ndim == 0 else out


# Batch means with their gradient w.r.t. the score matrix.

def mean_source_loss_grad(scores: np.ndarray, c: np.ndarray) -> tuple[float, np.ndarray]:
    n, k = scores.shape
    p = softmax(scores)
    value = float(np.mean(loss_source(scores, c)))
    return value, (p - one_hot(c, k)) / n


def mean_target_loss_grad(scores: np.ndarray, c: np.ndarray) -> tuple[float, np.ndarray]:
    n, k = scores.shape
    raw = _log_one_minus(scores, c)
    clamped = raw < TARGET_LOSS_FLOOR
    p = softmax(scores)
    pc = p[np.arange(n), c]
    rest = np.maximum(1.0 - pc, np.finfo(float).tiny)
    grad = p * (pc / rest)[:, None]
    grad[np.arange(n), c] = -pc
    grad[clamped] = 0.0
    return float(np.mean(np.maximum(raw, TARGET_LOSS_FLOOR))), grad / n


def mean_mse_softmax_grad(scores: np.ndarray, label: np.ndarray) -> tuple[float, np.ndarray]:
    """Mean of ``loss_mse(softmax(scores), label)`` over rows."""
    n, k = scores.shape
    p = softmax(scores)
    value = float(np.mean(loss_mse(p, label)))
    dp = 2.0 * (p - label) / (k * n)
    # Jacobian of softmax applied row-wise: p * (dp - <dp, p>)
    grad = p * (dp - (dp * p).sum(axis=1, keepdims=True))
    return value, grad


def mean_soft_ce_grad(scores: np.ndarray, label: np.ndarray) -> tuple[float, np.ndarray]:
    n, _ = scores.shape
    value = float(np.mean(loss_soft_ce(scores, label)))
    grad = (softmax(scores) * label.sum(axis=1, keepdims=True) - label) / n
    return value, grad
