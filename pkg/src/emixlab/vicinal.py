"""Mixup, enhanced mixup and confident pseudo-labelling.

Batches are kept as arrays (:class:`SampleBatch`) with a per-row origin tag;
:class:`LabeledSample` is the single-row view.
"""

from __future__ import annotations

from dataclasses import dataclass
from enum import IntEnum
from typing import Callable, Iterable

import numpy as np

from .losses import argmax_label, one_hot
from .numerics import ContractError, softmax


class Origin(IntEnum):
    SOURCE = 0
    TARGET_PSEUDO = 1
    MIXED = 2


@dataclass(frozen=True)
class LabeledSample:
    features: np.ndarray
    label: np.ndarray
    origin: Origin


@dataclass(frozen=True)
class SampleBatch:
    x: np.ndarray
    y: np.ndarray
    origin: np.ndarray

    def __post_init__(self):
        if self.x.ndim != 2 or self.y.ndim != 2 or len(self.x) != len(self.y) or len(self.origin) != len(self.x):
            raise ContractError(f"inconsistent batch shapes x={self.x.shape} y={self.y.shape} "
                                f"origin={np.shape(self.origin)}")
        if len(self.y) and (np.any(self.y < -1e-12) or not np.allclose(self.y.sum(axis=1), 1.0, atol=1e-9)):
            raise ContractError("labels must lie on the probability simplex")

    def __len__(self):
        return len(self.x)

    @property
    def num_classes(self) -> int:
        return self.y.shape[1]

    @property
    def hard_labels(self) -> np.ndarray:
        return np.argmax(self.y, axis=1)

    @classmethod
    def from_labels(cls, x, labels, k: int, origin: Origin) -> "SampleBatch":
        x = np.asarray(x, dtype=np.float64)
        return cls(x, one_hot(labels, k), np.full(len(x), int(origin)))

    @classmethod
    def empty(cls, d: int, k: int) -> "SampleBatch":
        return cls(np.empty((0, d)), np.empty((0, k)), np.empty(0, dtype=int))

    @classmethod
    def from_samples(cls, samples: Iterable[LabeledSample]) -> "SampleBatch":
        samples = list(samples)
        if not samples:
            raise ContractError("use SampleBatch.empty for an empty batch")
        return cls(np.stack([s.features for s in samples]).astype(np.float64),
                   np.stack([s.label for s in samples]).astype(np.float64),
                   np.array([int(s.origin) for s in samples]))

    def samples(self) -> list[LabeledSample]:
        return [LabeledSample(self.x[i], self.y[i], Origin(int(self.origin[i]))) for i in range(len(self))]

    def union(self, other: "SampleBatch") -> "SampleBatch":
        return SampleBatch(np.vstack([self.x, other.x]), np.vstack([self.y, other.y]),
                           np.concatenate([self.origin, other.origin]))


def mixup_pair(s1: LabeledSample, s2: LabeledSample, alpha: float) -> LabeledSample:
    if s1.features.shape != s2.features.shape or s1.label.shape != s2.label.shape:
        raise ContractError("mixup partners must share feature and label dimensions")
    return LabeledSample(alpha * s1.features + (1 - alpha) * s2.features,
                         alpha * s1.label + (1 - alpha) * s2.label, Origin.MIXED)


def _mix(batch: SampleBatch, partners: np.ndarray, alpha: float) -> SampleBatch:
    x = alpha * batch.x + (1 - alpha) * batch.x[partners]
    y = alpha * batch.y + (1 - alpha) * batch.y[partners]
    return SampleBatch(x, y, np.full(len(batch), int(Origin.MIXED)))


def mixup(batch: SampleBatch, alpha: float, rng: np.random.Generator) -> SampleBatch:
    """Ordinary mixup: every sample is mixed with a uniformly drawn batch member."""
    _check_alpha(alpha)
    if len(batch) == 0:
        return batch
    return _mix(batch, rng.integers(0, len(batch), size=len(batch)), alpha)


def e_mixup_partners(batch: SampleBatch, rng: np.random.Generator, k: int,
                     partner: str = "different") -> np.ndarray:
    """Partner index for every anchor, following the class-selection rule of e-mixup.

    With ``partner="different"`` the partner class is drawn uniformly among the
    anchor label's minimal coordinates; ``"same"`` uses the maximal ones.
    """
    if k < 2:
        raise ContractError("e-mixup needs at least two classes")
    if partner not in ("different", "same"):
        raise ContractError(f"unknown partner rule {partner!r}")
    if len(batch) == 0:
        raise ContractError("e-mixup needs a nonempty batch")
    hard = batch.hard_labels
    members = [np.flatnonzero(hard == c) for c in range(k)]
    nonempty = [c for c in range(k) if len(members[c])]
    out = np.empty(len(batch), dtype=int)
    for i, label in enumerate(batch.y):
        target = label.min() if partner == "different" else label.max()
        candidates = np.flatnonzero(label == target)
        c = int(candidates[rng.integers(len(candidates))])
        if not len(members[c]):
            anchor = int(hard[i])
            others = [o for o in nonempty if o != anchor]
            if not others:
                out[i] = rng.integers(len(batch))
                continue
            c = others[rng.integers(len(others))]
        pool = members[c]
        out[i] = pool[rng.integers(len(pool))]
    return out


def e_mixup(batch: SampleBatch, alpha: float, rng: np.random.Generator, k: int,
            partner: str = "different") -> SampleBatch:
    """Enhanced mixup: pair each sample with a member of a (by default) different class."""
    _check_alpha(alpha)
    return _mix(batch, e_mixup_partners(batch, rng, k, partner), alpha)


def select_confident(features: np.ndarray, scorer: Callable[[np.ndarray], np.ndarray],
                     tau: float) -> SampleBatch:
    """Pseudo-label the rows whose top softmax probability reaches ``tau``."""
    features = np.asarray(features, dtype=np.float64)
    scores = scorer(features)
    k = scores.shape[1]
    # tau = 1/K is admitted: every row qualifies there
    if not (1.0 / k <= tau <= 1.0):
        raise ContractError(f"tau={tau} must lie in [1/K, 1] with K={k}")
    keep = softmax(scores).max(axis=1) >= tau
    return SampleBatch.from_labels(features[keep], argmax_label(scores[keep]), k, Origin.TARGET_PSEUDO)


def _check_alpha(alpha: float):
    if not 0.0 <= alpha <= 1.0:
        raise ContractError(f"alpha={alpha} outside [0, 1]")
