"""Synthetic shifted-domain tasks and the A-distance diagnostic."""

from __future__ import annotations

import csv
from dataclasses import dataclass, field

import numpy as np

from .numerics import ContractError

GENERATORS = ("two-moons", "gaussian-blobs")


@dataclass(frozen=True)
class TaskConfig:
    generator: str = "two-moons"
    num_classes: int = 2
    n_source: int = 500
    n_target: int = 500
    noise: float = 0.1
    rotation: float = 45.0                        # degrees, about the origin
    translation: tuple[float, ...] = (0.0, 0.0)
    seed: int = 0

    def __post_init__(self):
        if self.generator not in GENERATORS:
            raise ContractError(f"generator must be one of {GENERATORS}, got {self.generator!r}")
        if self.generator == "two-moons" and self.num_classes != 2:
            raise ContractError("two-moons has exactly two classes")
        if self.num_classes < 2:
            raise ContractError("need at least two classes")
        if min(self.n_source, self.n_target) < 2 * self.num_classes:
            raise ContractError("each domain needs at least 2K samples")
        if not 0.0 <= self.rotation < 180.0:
            raise ContractError(f"rotation {self.rotation} outside [0, 180)")
        if len(self.translation) != 2:
            raise ContractError("translation must be a 2-vector")
        if self.noise < 0:
            raise ContractError("noise must be nonnegative")


@dataclass(frozen=True)
class Task:
    """Source samples with labels and target samples whose labels are for evaluation only."""

    config: TaskConfig
    source_x: np.ndarray
    source_y: np.ndarray
    target_x: np.ndarray
    target_y_eval: np.ndarray = field(repr=False)

    @property
    def num_classes(self) -> int:
        return self.config.num_classes


def _balanced_labels(n: int, k: int, rng: np.random.Generator) -> np.ndarray:
    return rng.permutation(np.arange(n) % k)


def sample_base(config: TaskConfig, n: int, rng: np.random.Generator) -> tuple[np.ndarray, np.ndarray]:
    """Draw ``n`` labelled points from the unshifted distribution."""
    y = _balanced_labels(n, config.num_classes, rng)
    if config.generator == "two-moons":
        t = rng.uniform(0.0, np.pi, size=n)
        # moons shifted so the mixture mean sits at the origin, the rotation centre
        upper = np.column_stack([np.cos(t) - 0.5, np.sin(t) - 0.25])
        lower = np.column_stack([0.5 - np.cos(t), 0.25 - np.sin(t)])
        x = np.where(y[:, None] == 0, upper, lower)
    else:
        angles = 2 * np.pi * np.arange(config.num_classes) / config.num_classes
        centers = 3.0 * np.column_stack([np.cos(angles), np.sin(angles)])
        x = centers[y]
    x = x + config.noise * rng.normal(size=x.shape)
    return x, y


def rotation_matrix(degrees: float) -> np.ndarray:
    a = np.deg2rad(degrees)
    return np.array([[np.cos(a), -np.sin(a)], [np.sin(a), np.cos(a)]])


def apply_shift(config: TaskConfig, x: np.ndarray) -> np.ndarray:
    return x @ rotation_matrix(config.rotation).T + np.asarray(config.translation, dtype=float)


def generate(config: TaskConfig) -> Task:
    """Independent source and target draws; the target draw is then shifted.

    Labels move with the points, so the shift is a pure covariate shift.
    """
    src_rng = np.random.default_rng([config.seed, 0])
    tgt_rng = np.random.default_rng([config.seed, 1])
    xs, ys = sample_base(config, config.n_source, src_rng)
    xt, yt = sample_base(config, config.n_target, tgt_rng)
    return Task(config, xs, ys, apply_shift(config, xt), yt)


def a_distance(source: np.ndarray, target: np.ndarray, split_seed: int = 0, steps: int = 200,
               lr: float = 0.5) -> float:
    """Proxy A-distance ``2 (1 - 2 err)`` of a linear domain classifier.

    The classifier is logistic regression fitted by full-batch gradient descent
    on a random half of the pooled points (features standardized with the
    training half's statistics) and scored on the other half.
    """
    source = np.asarray(source, dtype=np.float64)
    target = np.asarray(target, dtype=np.float64)
    if len(source) < 20 or len(target) < 20:
        raise ContractError("A-distance needs at least 20 points per domain")
    x = np.vstack([source, target])
    y = np.concatenate([np.zeros(len(source)), np.ones(len(target))])
    rng = np.random.default_rng(split_seed)
    train = np.zeros(len(x), dtype=bool)
    # stratified 50/50 split
    for dom in (0, 1):
        idx = np.flatnonzero(y == dom)
        train[rng.permutation(idx)[: len(idx) // 2]] = True
    mu = x[train].mean(axis=0)
    sd = x[train].std(axis=0)
    sd[sd == 0] = 1.0
    z = (x - mu) / sd
    w = np.zeros(x.shape[1])
    b = 0.0
    zt, yt = z[train], y[train]
    for _ in range(steps):
        p = 1.0 / (1.0 + np.exp(-(zt @ w + b)))
        g = p - yt
        w -= lr * zt.T @ g / len(yt)
        b -= lr * g.mean()
    pred = (z[~train] @ w + b) > 0
    err = float(np.mean(pred != y[~train].astype(bool)))
    return float(np.clip(2.0 * (1.0 - 2.0 * err), 0.0, 2.0))


def dump_csv(path, task: Task) -> None:
    """Write both domains as ``x1..xd,label,domain`` rows."""
    d = task.source_x.shape[1]
    with open(path, "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh)
        w.writerow([f"x{i + 1}" for i in range(d)] + ["label", "domain"])
        for dom, xs, ys in (("source", task.source_x, task.source_y), ("target", task.target_x, task.target_y_eval)):
            for x, y in zip(xs, ys):
                w.writerow([repr(float(v)) for v in x] + [int(y), dom])


def load_csv(path, config: TaskConfig | None = None) -> Task:
    with open(path, newline="", encoding="utf-8") as fh:
        rows = list(csv.reader(fh))
    header, body = rows[0], rows[1:]
    d = sum(1 for h in header if h.startswith("x"))
    if header != [f"x{i + 1}" for i in range(d)] + ["label", "domain"]:
        raise ContractError(f"unexpected header {header}")
    parts = {"source": ([], []), "target": ([], [])}
    for r in body:
        xs, ys = parts[r[-1]]
        xs.append([float(v) for v in r[:d]])
        ys.append(int(r[d]))
    (sx, sy), (tx, ty) = parts["source"], parts["target"]
    k = int(max(sy + ty)) + 1
    if config is None:
        config = TaskConfig(num_classes=k, n_source=len(sx), n_target=len(tx),
                            generator="two-moons" if k == 2 else "gaussian-blobs")
    return Task(config, np.array(sx), np.array(sy), np.array(tx), np.array(ty))
