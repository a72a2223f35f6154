"""Adversarial training with a mixup proxy: a generator G, a classifier C, an adversarial head D and
a proxy classifier C*, updated together once per iteration.

Per iteration the objectives are

    C   minimizes  source risk
    D   maximizes  disparity
    C*  minimizes  proxy of the combined risk
    G   minimizes  source risk + eta * disparity + proxy

where G's disparity gradient arrives through gradient reversal of D's ascent
direction. All four parameter sets share one SGD-with-momentum step.
"""

from __future__ import annotations

import csv
import io
import math
from dataclasses import asdict, dataclass, fields, replace
from typing import Iterator

import numpy as np

from .losses import argmax_label
from .numerics import ContractError, GradientBuffer, MlpParams, backward, forward, init_mlp, predict, softmax
from .risks import (Scorer, disparity_from_scores, oracle_combined_risk, proxy_from_scores,
                    source_risk_from_scores)
from .synthdata import Task, TaskConfig, a_distance, generate
from .vicinal import Origin, SampleBatch, e_mixup, mixup

NETWORKS = ("g", "c", "d", "cstar")

# ablation rows: flags (use_proxy, pool_source, pool_target, use_mixup, use_emixup)
VARIANTS = {
    "none": (False, False, False, False, False),
    "t": (True, False, True, False, False),
    "tm": (True, False, True, True, False),
    "stm": (True, True, True, True, False),
    "ste": (True, True, True, False, True),
}
ABLATION_ORDER = ("none", "t", "tm", "stm", "ste")


class TrainingAborted(RuntimeError):
    def __init__(self, message: str, state: dict | None = None):
        super().__init__(message)
        self.state = state or {}


@dataclass(frozen=True)
class TrainConfig:
    gamma: float = 8.0
    eta0: float = 0.1
    delta: float = 10.0
    l0: float = 0.04
    lr_scale: float = 0.25
    beta: float = 0.75
    momentum: float = 0.9
    alpha: float = 0.6
    tau: float = 0.9
    iterations: int = 2000
    batch_size: int = 32
    use_proxy: bool = True
    pool_source: bool = True
    pool_target: bool = True
    use_mixup: bool = False
    use_emixup: bool = True
    eta_form: str = "progressive"
    emix_partner: str = "different"
    proxy_to_g: bool = True
    proxy_loss: str = "mse"
    combined_risk_form: str = "symmetric"
    hidden: int = 16
    feature_dim: int = 8
    eval_interval: int = 100
    track_a_distance: bool = False
    seed: int = 0

    def __post_init__(self):
        if self.use_mixup and self.use_emixup:
            raise ContractError("mixup and e-mixup are mutually exclusive")
        if (self.use_mixup or self.use_emixup) and not self.pool_target:
            raise ContractError("mixing requires the target pool")
        if self.use_proxy and not (self.pool_source or self.pool_target):
            raise ContractError("the proxy needs at least one pool")
        if self.eta_form not in ("progressive", "literal"):
            raise ContractError(f"eta_form must be 'progressive' or 'literal', got {self.eta_form!r}")
        if self.proxy_loss not in ("mse", "ce"):
            raise ContractError(f"proxy_loss must be 'mse' or 'ce', got {self.proxy_loss!r}")
        if self.iterations < 0 or self.batch_size < 1 or self.eval_interval < 1:
            raise ContractError("iterations >= 0, batch_size >= 1 and eval_interval >= 1 required")
        if self.gamma <= 0:
            raise ContractError("gamma must be positive")
        if not 0.0 <= self.alpha <= 1.0 or not 0.0 < self.tau <= 1.0:
            raise ContractError("alpha must lie in [0, 1] and tau in (0, 1]")

    @property
    def variant(self) -> str:
        flags = (self.use_proxy, self.pool_source, self.pool_target, self.use_mixup, self.use_emixup)
        for name, v in VARIANTS.items():
            if v == flags:
                return name
        return "custom"

    def with_variant(self, name: str) -> "TrainConfig":
        if name not in VARIANTS:
            raise ContractError(f"unknown variant {name!r}; expected one of {tuple(VARIANTS)}")
        p, s, t, m, e = VARIANTS[name]
        return replace(self, use_proxy=p, pool_source=s, pool_target=t, use_mixup=m, use_emixup=e)


def lr_schedule(i: float, l0: float = 0.04, delta: float = 10.0, beta: float = 0.75) -> float:
    if not 0.0 <= i <= 1.0:
        raise ContractError(f"progress {i} outside [0, 1]")
    return l0 * (1.0 + delta * i) ** (-beta)


def eta_schedule(i: float, eta0: float = 0.1, delta: float = 10.0, form: str = "progressive") -> float:
    """Disparity weight. ``progressive`` rises from 0 towards eta0; ``literal``
    is ``2 eta0 / (1 + exp(delta i) - eta0)``, which decreases in i."""
    if not 0.0 <= i <= 1.0:
        raise ContractError(f"progress {i} outside [0, 1]")
    if form == "progressive":
        return 2.0 * eta0 / (1.0 + math.exp(-delta * i)) - eta0
    if form == "literal":
        return 2.0 * eta0 / (1.0 + math.exp(delta * i) - eta0)
    raise ContractError(f"unknown eta form {form!r}")


@dataclass(frozen=True)
class ModelBundle:
    g: MlpParams
    c: MlpParams
    d: MlpParams
    cstar: MlpParams

    def __post_init__(self):
        f = self.g.out_dim
        for name in ("c", "d", "cstar"):
            if getattr(self, name).in_dim != f:
                raise ContractError(f"head {name} expects {getattr(self, name).in_dim} inputs, G emits {f}")

    def nets(self) -> dict[str, MlpParams]:
        return {name: getattr(self, name) for name in NETWORKS}

    def classifier(self) -> Scorer:
        return Scorer(self.g, self.c, "C")

    def equal(self, other: "ModelBundle") -> bool:
        return all(getattr(self, n).equal(getattr(other, n)) for n in NETWORKS)


def init_bundle(in_dim: int, num_classes: int, config: TrainConfig) -> ModelBundle:
    h, f = config.hidden, config.feature_dim
    nets = {}
    for j, name in enumerate(NETWORKS):
        rng = np.random.default_rng([config.seed, 10 + j])
        widths = (in_dim, h, f) if name == "g" else (f, h, num_classes)
        nets[name] = init_mlp(widths, rng)
    return ModelBundle(**nets)


@dataclass(frozen=True)
class StepBatch:
    """Everything one update consumes, frozen so the objectives are deterministic functions of the weights."""

    source: SampleBatch
    target_x: np.ndarray
    mixed: SampleBatch              # second proxy term; may be empty
    num_confident: int = 0


@dataclass(frozen=True)
class Objectives:
    source_risk: float
    disparity: float
    proxy: float | None
    eta: float

    @property
    def per_network(self) -> dict[str, float]:
        """Scalar each network descends (G's includes the reversed disparity)."""
        proxy = self.proxy or 0.0
        return {"c": self.source_risk, "d": -self.disparity, "cstar": proxy,
                "g": self.source_risk + self.eta * self.disparity + proxy}


def build_proxy_batch(bundle: ModelBundle, source: SampleBatch, target_x: np.ndarray, config: TrainConfig,
                      rng: np.random.Generator) -> tuple[SampleBatch, int]:
    """Confident pseudo-labels, the variant's pool, and its mixing rule."""
    k = source.num_classes
    d = source.x.shape[1]
    if not config.use_proxy:
        return SampleBatch.empty(d, k), 0
    scores = Scorer(bundle.g, bundle.c)(target_x)
    keep = softmax(scores).max(axis=1) >= config.tau
    confident = SampleBatch.from_labels(target_x[keep], argmax_label(scores[keep]), k, Origin.TARGET_PSEUDO)
    pool = source.union(confident) if config.pool_source else confident
    if len(pool) == 0:
        return pool, 0
    if config.use_emixup:
        pool = e_mixup(pool, config.alpha, rng, k, config.emix_partner)
    elif config.use_mixup:
        pool = mixup(pool, config.alpha, rng)
    return pool, len(confident)


def prepare_step(bundle: ModelBundle, source: SampleBatch, target_x: np.ndarray, config: TrainConfig,
                 rng: np.random.Generator) -> StepBatch:
    if len(source) == 0 or len(target_x) == 0:
        raise ContractError("train_step needs nonempty source and target batches")
    if np.any(source.origin != int(Origin.SOURCE)):
        raise ContractError("the source batch may only hold source samples")
    mixed, n_conf = build_proxy_batch(bundle, source, target_x, config, rng)
    return StepBatch(source, np.asarray(target_x, dtype=np.float64), mixed, n_conf)


def objectives_and_grads(bundle: ModelBundle, step: StepBatch, config: TrainConfig,
                         eta: float) -> tuple[Objectives, dict[str, GradientBuffer]]:
    g, c, d, cs = bundle.g, bundle.c, bundle.d, bundle.cstar
    src = step.source
    f_s, g_cache_s = forward(g, src.x)
    f_t, g_cache_t = forward(g, step.target_x)

    c_s, c_cache = forward(c, f_s)
    c_t = predict(c, f_t)
    risk, d_cs = source_risk_from_scores(c_s, src.hard_labels)
    grad_c, df_s = backward(c, c_cache, d_cs)

    d_s, d_cache_s = forward(d, f_s)
    d_t, d_cache_t = forward(d, f_t)
    disparity, dd_s, dd_t = disparity_from_scores(d_s, c_s, d_t, c_t, config.gamma)
    # D ascends the disparity, i.e. descends its negation
    grad_d_s, back_s = backward(d, d_cache_s, -dd_s)
    grad_d_t, back_t = backward(d, d_cache_t, -dd_t)
    grad_d = grad_d_s + grad_d_t
    # gradient reversal between G and D, scaled by eta
    df_s = df_s - eta * back_s
    df_t = -eta * back_t

    proxy, df_m = None, None
    grad_cs = cs.zeros_like()
    if config.use_proxy:
        mixed = step.mixed
        s_s, s_cache = forward(cs, f_s)
        s_m = np.empty((0, src.num_classes))
        if len(mixed):
            f_m, g_cache_m = forward(g, mixed.x)
            s_m, m_cache = forward(cs, f_m)
        proxy, dp_s, dp_m = proxy_from_scores(s_s, src.y, s_m, mixed.y, config.proxy_loss)
        grad_cs, back_ps = backward(cs, s_cache, dp_s)
        if len(mixed):
            grad_cs_m, back_pm = backward(cs, m_cache, dp_m)
            grad_cs = grad_cs + grad_cs_m
        if config.proxy_to_g:
            df_s = df_s + back_ps
            if len(mixed):
                df_m = back_pm

    grad_g = backward(g, g_cache_s, df_s)[0] + backward(g, g_cache_t, df_t)[0]
    if df_m is not None:
        grad_g = grad_g + backward(g, g_cache_m, df_m)[0]
    obj = Objectives(risk, disparity, proxy, eta)
    return obj, {"g": grad_g, "c": grad_c, "d": grad_d, "cstar": grad_cs}


def _bundle_state(bundle: ModelBundle) -> dict:
    return {name: [t.tolist() for t in p.tensors()] for name, p in bundle.nets().items()}


def train_step(bundle: ModelBundle, source: SampleBatch, target_x: np.ndarray, config: TrainConfig, i: float,
               rng: np.random.Generator, velocity: dict[str, GradientBuffer] | None = None):
    """One update. Returns ``(bundle, velocity, objectives)``."""
    step = prepare_step(bundle, source, target_x, config, rng)
    return apply_step(bundle, step, config, i, velocity)


def apply_step(bundle: ModelBundle, step: StepBatch, config: TrainConfig, i: float,
               velocity: dict[str, GradientBuffer] | None = None):
    eta = eta_schedule(i, config.eta0, config.delta, config.eta_form)
    lr = config.lr_scale * lr_schedule(i, config.l0, config.delta, config.beta)
    obj, grads = objectives_and_grads(bundle, step, config, eta)
    values = [obj.source_risk, obj.disparity] + ([obj.proxy] if obj.proxy is not None else [])
    grads_finite = all(np.all(np.isfinite(t)) for gb in grads.values() for t in gb.tensors())
    if not all(math.isfinite(v) for v in values) or not grads_finite:
        raise TrainingAborted(f"non-finite objective at progress {i:.4f}: {obj}",
                              {"progress": i, "objectives": asdict(obj), "bundle": _bundle_state(bundle)})
    if velocity is None:
        velocity = {n: p.zeros_like() for n, p in bundle.nets().items()}
    new_velocity, new_nets = {}, {}
    for name, params in bundle.nets().items():
        if name == "cstar" and not config.use_proxy:
            new_velocity[name], new_nets[name] = velocity[name], params
            continue
        v = velocity[name].scaled(config.momentum) + grads[name]
        new_velocity[name] = v
        new_nets[name] = params.add_scaled(v, -lr)
    return ModelBundle(**new_nets), new_velocity, obj


def evaluate(bundle: ModelBundle, x: np.ndarray, labels: np.ndarray) -> float:
    """Fraction of points whose argmax C(G(x)) equals the true class."""
    pred = argmax_label(bundle.classifier()(np.asarray(x, dtype=np.float64)))
    return float(np.mean(pred == np.asarray(labels)))


@dataclass(frozen=True)
class IterationMetrics:
    iteration: int
    source_risk: float
    disparity: float
    proxy: float | None
    combined_risk: float
    target_acc: float
    a_distance: float | None = None


METRICS_HEADER = ("iter", "source_risk", "disparity", "proxy", "combined_risk", "target_acc", "a_distance")


def evaluation_row(bundle: ModelBundle, task: Task, config: TrainConfig, iteration: int) -> IterationMetrics:
    """Full-data metrics. Target labels are read here and nowhere on the update path."""
    k = task.num_classes
    src = SampleBatch.from_labels(task.source_x, task.source_y, k, Origin.SOURCE)
    scorer = bundle.classifier()
    f_s, f_t = predict(bundle.g, task.source_x), predict(bundle.g, task.target_x)
    c_s, c_t = predict(bundle.c, f_s), predict(bundle.c, f_t)
    risk = source_risk_from_scores(c_s, task.source_y)[0]
    disparity = disparity_from_scores(predict(bundle.d, f_s), c_s, predict(bundle.d, f_t), c_t, config.gamma)[0]
    proxy = None
    if config.use_proxy:
        rng = np.random.default_rng([config.seed, 40, iteration])
        mixed, _ = build_proxy_batch(bundle, src, task.target_x, config, rng)
        s_m = predict(bundle.cstar, predict(bundle.g, mixed.x)) if len(mixed) else np.empty((0, k))
        proxy = proxy_from_scores(predict(bundle.cstar, f_s), src.y, s_m, mixed.y, config.proxy_loss)[0]
    combined = oracle_combined_risk(task.source_x, task.source_y, task.target_x, task.target_y_eval, scorer,
                                    config.combined_risk_form)
    acc = evaluate(bundle, task.target_x, task.target_y_eval)
    a_dist = a_distance(f_s, f_t, split_seed=config.seed) if config.track_a_distance else None
    return IterationMetrics(iteration, risk, disparity, proxy, combined, acc, a_dist)


def _batches(n: int, size: int, rng: np.random.Generator) -> Iterator[np.ndarray]:
    size = min(size, n)
    while True:
        order = rng.permutation(n)
        for start in range(0, n - size + 1, size):
            yield order[start:start + size]


@dataclass
class TrainingReport:
    config: TrainConfig
    metrics: list[IterationMetrics]
    bundle: ModelBundle
    source_acc: float
    target_acc: float

    @property
    def final(self) -> IterationMetrics:
        return self.metrics[-1]

    def row_at(self, iteration: int) -> IterationMetrics:
        for m in self.metrics:
            if m.iteration == iteration:
                return m
        raise KeyError(iteration)


def train(config: TrainConfig, task: Task) -> TrainingReport:
    k = task.num_classes
    bundle = init_bundle(task.source_x.shape[1], k, config)
    batch_rng = np.random.default_rng([config.seed, 20])
    mix_rng = np.random.default_rng([config.seed, 30])
    src_iter = _batches(len(task.source_x), config.batch_size, batch_rng)
    tgt_iter = _batches(len(task.target_x), config.batch_size, batch_rng)
    metrics = [evaluation_row(bundle, task, config, 0)]
    velocity = None
    total = config.iterations
    for j in range(total):
        i = j / (total - 1) if total > 1 else 0.0
        si, ti = next(src_iter), next(tgt_iter)
        src = SampleBatch.from_labels(task.source_x[si], task.source_y[si], k, Origin.SOURCE)
        bundle, velocity, _ = train_step(bundle, src, task.target_x[ti], config, i, mix_rng, velocity)
        done = j + 1
        if done % config.eval_interval == 0 or done == total:
            metrics.append(evaluation_row(bundle, task, config, done))
    return TrainingReport(config, metrics, bundle, evaluate(bundle, task.source_x, task.source_y),
                          metrics[-1].target_acc)


def run_ablation(config: TrainConfig, task_config: TaskConfig, seeds, variants=ABLATION_ORDER) -> list[dict]:
    """Every variant on every seed; data and initialization are shared across variants of one seed."""
    rows = []
    for seed in seeds:
        task = generate(replace(task_config, seed=seed))
        for name in variants:
            report = train(replace(config.with_variant(name), seed=seed), task)
            rows.append({"variant": name, "seed": seed, "target_acc": report.target_acc,
                         "combined_risk": report.final.combined_risk})
    return rows


# serialization

def _fmt(v) -> str:
    if v is None:
        return ""
    if isinstance(v, float):
        return repr(v)
    return str(v)


def metrics_csv(metrics: list[IterationMetrics]) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(METRICS_HEADER)
    for m in metrics:
        w.writerow([_fmt(getattr(m, f.name)) for f in fields(IterationMetrics)])
    return buf.getvalue()


def write_metrics_csv(path, metrics: list[IterationMetrics]) -> None:
    with open(path, "w", encoding="utf-8", newline="") as fh:
        fh.write(metrics_csv(metrics))


def read_metrics_csv(path) -> list[IterationMetrics]:
    with open(path, encoding="utf-8", newline="") as fh:
        rows = list(csv.DictReader(fh))
    opt = lambda s: float(s) if s != "" else None  # noqa: E731
    return [IterationMetrics(int(r["iter"]), float(r["source_risk"]), float(r["disparity"]), opt(r["proxy"]),
                             float(r["combined_risk"]), float(r["target_acc"]), opt(r["a_distance"]))
            for r in rows]


def dump_bundle(path, bundle: ModelBundle) -> None:
    """One line per tensor: ``name dims... values...`` with row-major values."""
    with open(path, "w", encoding="utf-8") as fh:
        for name, params in bundle.nets().items():
            for layer, (w, b) in enumerate(zip(params.weights, params.biases)):
                for tag, t in ((f"W{layer}", w), (f"b{layer}", b)):
                    tokens = [f"{name}.{tag}"] + [str(s) for s in t.shape] + [repr(float(v)) for v in t.ravel()]
                    fh.write(" ".join(tokens) + "\n")


def load_bundle(path) -> ModelBundle:
    tensors: dict[str, list[np.ndarray]] = {n: [] for n in NETWORKS}
    with open(path, encoding="utf-8") as fh:
        for line in fh:
            tok = line.split()
            if not tok:
                continue
            net, tag = tok[0].split(".")
            ndim = 2 if tag.startswith("W") else 1
            shape = tuple(int(s) for s in tok[1:1 + ndim])
            tensors[net].append(np.array([float(v) for v in tok[1 + ndim:]]).reshape(shape))
    return ModelBundle(**{n: MlpParams.from_tensors(ts) for n, ts in tensors.items()})
