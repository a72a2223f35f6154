"""Exact verification of the domain-adaptation bounds on finite instances.

A :class:`FiniteInstance` has a handful of feature points, two joint
distributions over (point, class), an explicit list of hypotheses (score
tables) and a list of point-to-point transformations. Every risk is an exact
weighted sum, so each bound can be checked by enumeration.

Losses are named: ``zero_one`` (argmax disagreement), ``source_ce`` and
``target_ce`` (the training losses, second argument consumed via argmax) and
``abs_prob`` (half the L1 distance between softmax vectors). Labels enter
the losses as one-hot vectors.
"""

from __future__ import annotations

import csv
import json
from dataclasses import dataclass, field
from typing import Iterable, Sequence

import numpy as np

from .losses import TARGET_LOSS_FLOOR
from .numerics import ContractError, log_softmax, softmax

TOLERANCE = 1e-9
LOSSES = ("zero_one", "source_ce", "target_ce", "abs_prob")
TRIANGLE_LOSSES = ("zero_one", "abs_prob")


def pointwise_loss(name: str, a: np.ndarray, b: np.ndarray) -> np.ndarray:
    """Loss between broadcastable stacks of score vectors (last axis = classes)."""
    a = np.asarray(a, dtype=np.float64)
    b = np.asarray(b, dtype=np.float64)
    if name == "zero_one":
        return (np.argmax(a, axis=-1) != np.argmax(b, axis=-1)).astype(np.float64)
    if name == "abs_prob":
        return 0.5 * np.abs(softmax(a) - softmax(b)).sum(axis=-1)
    a, b = np.broadcast_arrays(a, b)
    c = np.argmax(b, axis=-1)[..., None]
    if name == "source_ce":
        return -np.take_along_axis(log_softmax(a), c, axis=-1)[..., 0]
    if name == "target_ce":
        e = np.exp(a - a.max(axis=-1, keepdims=True))
        total = e.sum(axis=-1)
        own = np.take_along_axis(e, c, axis=-1)[..., 0]
        with np.errstate(divide="ignore"):
            val = np.log(np.maximum(total - own, 0.0) / total)
        return np.maximum(val, TARGET_LOSS_FLOOR)
    raise ContractError(f"unknown loss {name!r}; expected one of {LOSSES}")


@dataclass(frozen=True)
class FiniteInstance:
    points: np.ndarray                  # (n, d)
    num_classes: int
    source_joint: np.ndarray            # (n, K)
    target_joint: np.ndarray            # (n, K)
    hypotheses: np.ndarray              # (H, n, K) scores of each hypothesis at each point
    transformations: tuple[np.ndarray, ...] = ()   # each (n,) point-index map
    seed: int | None = None

    def __post_init__(self):
        n, k = len(self.points), self.num_classes
        for name in ("source_joint", "target_joint"):
            joint = getattr(self, name)
            if joint.shape != (n, k) or np.any(joint < 0) or abs(joint.sum() - 1.0) > 1e-12:
                raise ContractError(f"{name} must be a nonnegative ({n}, {k}) table summing to 1")
        if self.hypotheses.ndim != 3 or self.hypotheses.shape[1:] != (n, k) or not len(self.hypotheses):
            raise ContractError(f"hypotheses must have shape (H, {n}, {k})")
        for g in self.transformations:
            if g.shape != (n,) or np.any(g < 0) or np.any(g >= n):
                raise ContractError("transformations must map point indices to point indices")

    @property
    def num_points(self) -> int:
        return len(self.points)

    @property
    def num_hypotheses(self) -> int:
        return len(self.hypotheses)

    def identity(self) -> np.ndarray:
        return np.arange(self.num_points)

    def all_transformations(self) -> list[np.ndarray]:
        """Identity first, then the instance's own maps."""
        return [self.identity()] + list(self.transformations)

    def composed(self, g: np.ndarray | None = None) -> np.ndarray:
        """Score tables of every ``C o G``, shape (H, n, K)."""
        return self.hypotheses if g is None else self.hypotheses[:, np.asarray(g), :]

    def to_json(self) -> str:
        return json.dumps({
            "seed": self.seed, "num_classes": self.num_classes,
            "points": self.points.tolist(), "source_joint": self.source_joint.tolist(),
            "target_joint": self.target_joint.tolist(), "hypotheses": self.hypotheses.tolist(),
            "transformations": [g.tolist() for g in self.transformations],
        })

    @classmethod
    def from_json(cls, text: str) -> "FiniteInstance":
        raw = json.loads(text)
        return cls(np.array(raw["points"], dtype=float), raw["num_classes"],
                   np.array(raw["source_joint"], dtype=float), np.array(raw["target_joint"], dtype=float),
                   np.array(raw["hypotheses"], dtype=float),
                   tuple(np.array(g, dtype=int) for g in raw["transformations"]), raw.get("seed"))


@dataclass
class BoundReport:
    theorem: str
    lhs: float
    rhs: float
    witnesses: dict = field(default_factory=dict)
    applicable: bool = True

    @property
    def slack(self) -> float:
        return self.rhs - self.lhs

    @property
    def holds(self) -> bool:
        return (not self.applicable) or self.slack >= -TOLERANCE


# single-quantity operations

def _label_risks(joint: np.ndarray, comp: np.ndarray, loss: str) -> np.ndarray:
    k = joint.shape[1]
    # comp (H, n, K) against every one-hot label -> (H, n, K_label)
    table = pointwise_loss(loss, comp[:, :, None, :], np.eye(k)[None, None, :, :])
    return np.einsum("hnc,nc->h", table, joint)


def _pair_risks(marginal: np.ndarray, comp: np.ndarray, loss: str) -> np.ndarray:
    """``R[c', c] = E_marginal loss(C'(x), C(x))``."""
    table = pointwise_loss(loss, comp[:, None, :, :], comp[None, :, :, :])
    return table @ marginal


def exact_risk(joint: np.ndarray, scores: np.ndarray, loss: str) -> float:
    """Expected loss of one score table (n, K) under a joint (n, K)."""
    return float(_label_risks(np.asarray(joint), np.asarray(scores)[None], loss)[0])


def discrepancy_distance(instance: FiniteInstance, loss: str = "zero_one",
                         g: np.ndarray | None = None) -> float:
    comp = instance.composed(g)
    ps = _pair_risks(instance.source_joint.sum(axis=1), comp, loss)
    pt = _pair_risks(instance.target_joint.sum(axis=1), comp, loss)
    return float(np.max(np.abs(pt - ps)))


def disparity_discrepancy(instance: FiniteInstance, c: int, loss_s: str = "zero_one", loss_t: str = "zero_one",
                          g: np.ndarray | None = None) -> tuple[float, int]:
    """Sup over C' of target ``loss_t`` disparity minus source ``loss_s`` disparity; returns (value, C')."""
    if not 0 <= c < instance.num_hypotheses:
        raise ContractError(f"hypothesis index {c} not in the instance")
    comp = instance.composed(g)
    rt = pointwise_loss(loss_t, comp, comp[c][None]) @ instance.target_joint.sum(axis=1)
    rs = pointwise_loss(loss_s, comp, comp[c][None]) @ instance.source_joint.sum(axis=1)
    gap = rt - rs
    best = int(np.argmax(gap))
    return float(gap[best]), best


def lambda_combined(instance: FiniteInstance, g: np.ndarray | None = None, loss: str = "zero_one",
                    loss_t: str | None = None) -> tuple[float, int]:
    """Min over hypotheses of source risk plus target risk; returns (value, argmin)."""
    comp = instance.composed(g)
    total = _label_risks(instance.source_joint, comp, loss) + \
        _label_risks(instance.target_joint, comp, loss_t or loss)
    best = int(np.argmin(total))
    return float(total[best]), best


def check_theorem2(instance: FiniteInstance, g: np.ndarray | None, c: int, loss: str = "zero_one",
                   theorem: str = "T2") -> BoundReport:
    comp = instance.composed(g)
    rt = float(_label_risks(instance.target_joint, comp[c][None], loss)[0])
    rs = float(_label_risks(instance.source_joint, comp[c][None], loss)[0])
    d = discrepancy_distance(instance, loss, g)
    lam, star = lambda_combined(instance, g, loss)
    return BoundReport(theorem, rt, rs + d + lam, {"C": c, "C*": star, "d": d, "lambda": lam})


def check_theorem1(instance: FiniteInstance, c: int, loss: str = "zero_one") -> BoundReport:
    """The classical bound: the identity-transformation case of :func:`check_theorem2`."""
    return check_theorem2(instance, None, c, loss, theorem="T1")


def check_theorem3(instance: FiniteInstance, g: np.ndarray | None, loss: str = "zero_one",
                   form: str = "doubled") -> tuple[BoundReport, BoundReport]:
    """Both sides of the combined-risk sandwich around the cross risk ``R_s(C_t) + R_t(C_s)``.

    ``form="doubled"`` uses ``2 lambda + 2 d + delta`` as the upper bound, which
    is what the two-sided argument establishes; ``form="single"`` uses
    ``2 lambda + d + delta``, which does not hold on every instance.
    """
    factor = {"doubled": 2.0, "single": 1.0}.get(form)
    if factor is None:
        raise ContractError(f"unknown form {form!r}")
    comp = instance.composed(g)
    rs = _label_risks(instance.source_joint, comp, loss)
    rt = _label_risks(instance.target_joint, comp, loss)
    cs, ct = int(np.argmin(rs)), int(np.argmin(rt))
    delta = float(rs[cs] + rt[ct])
    lam = float(np.min(rs + rt))
    middle = float(rs[ct] + rt[cs])
    d = discrepancy_distance(instance, loss, g)
    w = {"C_s": cs, "C_t": ct, "delta": delta, "lambda": lam, "d": d}
    return (BoundReport("T3-lower", 2 * lam - delta, middle, dict(w)),
            BoundReport("T3-upper", middle, 2 * lam + factor * d + delta, dict(w)))


def weaker_condition_holds(instance: FiniteInstance, g: np.ndarray | None, c: int,
                           loss_s: str, loss_t: str) -> bool:
    """The two one-sided inequalities that can stand in for the triangle inequality."""
    comp = instance.composed(g)
    ms, mt = instance.source_joint.sum(axis=1), instance.target_joint.sum(axis=1)
    rt_lab = _label_risks(instance.target_joint, comp, loss_t)
    rs_lab = _label_risks(instance.source_joint, comp, loss_s)
    rt_pair = pointwise_loss(loss_t, comp, comp[c][None]) @ mt
    rs_pair = pointwise_loss(loss_s, comp, comp[c][None]) @ ms
    first = rt_lab[c] <= rt_pair + rt_lab + TOLERANCE
    second = rs_pair <= rs_lab + rs_lab[c] + TOLERANCE
    return bool(np.all(first) and np.all(second))


def check_theorem4(instance: FiniteInstance, g: np.ndarray | None, c: int, loss_s: str = "zero_one",
                   loss_t: str = "zero_one") -> BoundReport:
    comp = instance.composed(g)
    lhs = float(_label_risks(instance.target_joint, comp[c][None], loss_t)[0])
    rs = float(_label_risks(instance.source_joint, comp[c][None], loss_s)[0])
    dd, witness = disparity_discrepancy(instance, c, loss_s, loss_t, g)
    lam, star = lambda_combined(instance, g, loss_s, loss_t)
    applicable = (loss_s in TRIANGLE_LOSSES and loss_t in TRIANGLE_LOSSES) or \
        weaker_condition_holds(instance, g, c, loss_s, loss_t)
    return BoundReport("T4", lhs, rs + dd + lam, {"C": c, "C'": witness, "C*": star, "d": dd, "lambda": lam},
                       applicable=applicable)


def check_triangle(loss: str, instance: FiniteInstance) -> bool:
    """Triangle inequality over every triple of outputs realizable at a common point.

    The realizable outputs at a point are the scores of every hypothesis there
    plus the one-hot labels.
    """
    return find_triangle_violation(loss, instance) is None


def find_triangle_violation(loss: str, instance: FiniteInstance) -> tuple[np.ndarray, ...] | None:
    eye = np.eye(instance.num_classes)
    for x in range(instance.num_points):
        vecs = np.unique(np.vstack([instance.hypotheses[:, x, :], eye]), axis=0)
        m = pointwise_loss(loss, vecs[:, None, :], vecs[None, :, :])
        # bad[a, b, c]: loss(a, c) > loss(a, b) + loss(b, c)
        bad = m[:, None, :] > m[:, :, None] + m[None, :, :] + TOLERANCE
        if bad.any():
            a, b, c = np.argwhere(bad)[0]
            return vecs[a], vecs[b], vecs[c]
    return None


# random instances and the bound suite

def random_instance(seed: int, max_points: int = 6, max_classes: int = 3, max_hypotheses: int = 50,
                    max_transformations: int = 4) -> FiniteInstance:
    """Seeded random instance: normalized uniform joints, random score tables plus
    the constant hypotheses, identity-free random point maps."""
    rng = np.random.default_rng(seed)
    n = int(rng.integers(2, max_points + 1))
    k = int(rng.integers(2, max_classes + 1))
    points = rng.normal(size=(n, 2))
    joints = []
    for _ in range(2):
        t = rng.uniform(1e-3, 1.0, size=(n, k))
        joints.append(t / t.sum())
    n_random = int(rng.integers(1, max_hypotheses - k + 1))
    constants = np.broadcast_to(np.eye(k)[:, None, :], (k, n, k))
    hyps = np.concatenate([rng.normal(size=(n_random, n, k)), constants])
    maps = tuple(rng.integers(0, n, size=n) for _ in range(int(rng.integers(0, max_transformations))))
    return FiniteInstance(points, k, joints[0], joints[1], hyps, maps, seed)


def identical_domain_instance(seed: int = 0) -> FiniteInstance:
    """Both domains share one joint and one hypothesis labels every point correctly."""
    rng = np.random.default_rng(seed)
    n, k = 4, 2
    labels = np.array([0, 1, 0, 1])
    joint = np.zeros((n, k))
    joint[np.arange(n), labels] = rng.uniform(0.1, 1.0, size=n)
    joint /= joint.sum()
    perfect = np.eye(k)[labels][None]
    hyps = np.concatenate([perfect, rng.normal(size=(5, n, k))])
    return FiniteInstance(rng.normal(size=(n, 2)), k, joint, joint.copy(), hyps, (), seed)


@dataclass
class InstanceResult:
    seed: int
    reports: list[BoundReport]     # worst (minimum slack) report per theorem
    tightness_gap: float           # max over (G, C) of T2 rhs - T4 rhs
    min_gap: float                 # min of the same difference; nonnegative for zero-one

    @property
    def holds(self) -> bool:
        return all(r.holds for r in self.reports)


def verify_instance(instance: FiniteInstance, loss: str = "zero_one", t3_form: str = "doubled") -> InstanceResult:
    """Check every theorem for every transformation and hypothesis, keeping the tightest case."""
    worst: dict[str, BoundReport] = {}

    def keep(report: BoundReport):
        cur = worst.get(report.theorem)
        if cur is None or report.slack < cur.slack:
            worst[report.theorem] = report

    ms, mt = instance.source_joint.sum(axis=1), instance.target_joint.sum(axis=1)
    max_gap, min_gap = -np.inf, np.inf
    for gi, g in enumerate(instance.all_transformations()):
        comp = instance.composed(g)
        rs = _label_risks(instance.source_joint, comp, loss)
        rt = _label_risks(instance.target_joint, comp, loss)
        ps, pt = _pair_risks(ms, comp, loss), _pair_risks(mt, comp, loss)
        d = float(np.max(np.abs(pt - ps)))
        lam = float(np.min(rs + rt))
        star = int(np.argmin(rs + rt))
        disparity = (pt - ps).max(axis=0)          # sup over C' for every C
        rhs2 = rs + d + lam
        rhs4 = rs + disparity + lam
        c2 = int(np.argmin(rhs2 - rt))
        base = {"G": gi, "C*": star, "d": d, "lambda": lam}
        keep(BoundReport("T2", float(rt[c2]), float(rhs2[c2]), {**base, "C": c2}))
        if gi == 0:
            keep(BoundReport("T1", float(rt[c2]), float(rhs2[c2]), {**base, "C": c2}))
        c4 = int(np.argmin(rhs4 - rt))
        keep(BoundReport("T4", float(rt[c4]), float(rhs4[c4]), {**base, "C": c4}))
        lower, upper = check_theorem3(instance, g, loss, t3_form)
        lower.witnesses["G"] = upper.witnesses["G"] = gi
        keep(lower)
        keep(upper)
        gap = rhs2 - rhs4
        max_gap, min_gap = max(max_gap, float(gap.max())), min(min_gap, float(gap.min()))
    order = ("T1", "T2", "T3-lower", "T3-upper", "T4")
    return InstanceResult(instance.seed, [worst[t] for t in order], max_gap, min_gap)


def run_suite(n_instances: int, base_seed: int = 0, loss: str = "zero_one",
              t3_form: str = "doubled") -> list[InstanceResult]:
    return [verify_instance(random_instance(base_seed + i), loss, t3_form) for i in range(n_instances)]


def theorems_holding(results: Sequence[InstanceResult]) -> dict[str, int]:
    """Per theorem (sandwich halves merged) the number of instances on which it holds."""
    out = {"1": 0, "2": 0, "3": 0, "4": 0}
    for res in results:
        by = {r.theorem: r.holds for r in res.reports}
        out["1"] += by["T1"]
        out["2"] += by["T2"]
        out["3"] += by["T3-lower"] and by["T3-upper"]
        out["4"] += by["T4"]
    return out


CSV_COLUMNS = ("seed", "theoremId", "lhs", "rhs", "slack", "holds")


def write_reports_csv(path, results: Iterable[InstanceResult]) -> None:
    with open(path, "w", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh)
        writer.writerow(CSV_COLUMNS)
        for res in results:
            for r in res.reports:
                writer.writerow([res.seed, r.theorem, repr(r.lhs), repr(r.rhs), repr(r.slack),
                                 "true" if r.holds else "false"])
