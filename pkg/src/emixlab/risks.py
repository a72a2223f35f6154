"""Empirical risks: source risk, gamma-weighted disparity, mixup proxy and the
label-aware combined-risk tracker.

Each estimator has two forms. The public one takes samples and a scorer
(any callable mapping an ``(n, d)`` array to ``(n, K)`` scores). The
``*_from_scores`` variants take precomputed score matrices and also return
gradients with respect to those scores, which is what the trainer needs.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Callable

import numpy as np

from .losses import (argmax_label, loss_source, loss_target, mean_mse_softmax_grad,
                     mean_soft_ce_grad, mean_source_loss_grad, mean_target_loss_grad)
from .numerics import ContractError, MlpParams, predict
from .vicinal import SampleBatch

ScoreFn = Callable[[np.ndarray], np.ndarray]


@dataclass(frozen=True)
class Scorer:
    """A head composed with the feature extractor: ``x -> head(G(x))``."""

    g: MlpParams
    head: MlpParams
    name: str = "C"

    def __call__(self, x: np.ndarray) -> np.ndarray:
        return predict(self.head, predict(self.g, x))


@dataclass(frozen=True)
class DisparityWeights:
    gamma: float = 8.0
    eta0: float = 0.1

    def __post_init__(self):
        if self.gamma <= 0 or self.eta0 < 0:
            raise ContractError("gamma must be positive and eta0 nonnegative")


def _nonempty(*arrays):
    for a in arrays:
        if len(a) == 0:
            raise ContractError("estimators need nonempty batches")


# score-level forms

def source_risk_from_scores(scores: np.ndarray, labels: np.ndarray) -> tuple[float, np.ndarray]:
    _nonempty(scores)
    return mean_source_loss_grad(scores, labels)


def disparity_from_scores(d_src: np.ndarray, c_src: np.ndarray, d_tgt: np.ndarray, c_tgt: np.ndarray,
                          gamma: float) -> tuple[float, np.ndarray, np.ndarray]:
    """Value of the disparity and its gradient w.r.t. the discriminator scores.

    The classifier scores only enter through their argmax, so they carry no
    gradient.
    """
    _nonempty(d_src, d_tgt)
    src_val, src_grad = mean_source_loss_grad(d_src, argmax_label(c_src))
    tgt_val, tgt_grad = mean_target_loss_grad(d_tgt, argmax_label(c_tgt))
    return -gamma * src_val + tgt_val, -gamma * src_grad, tgt_grad


def proxy_from_scores(src_scores: np.ndarray, src_labels: np.ndarray, mix_scores: np.ndarray,
                      mix_labels: np.ndarray, loss: str = "mse") -> tuple[float, np.ndarray, np.ndarray]:
    """Proxy of the combined risk; the mixed term is dropped when there are no mixed rows."""
    _nonempty(src_scores)
    term = {"mse": mean_mse_softmax_grad, "ce": mean_soft_ce_grad}.get(loss)
    if term is None:
        raise ContractError(f"unknown proxy loss {loss!r}")
    value, src_grad = term(src_scores, src_labels)
    if len(mix_scores):
        mix_value, mix_grad = term(mix_scores, mix_labels)
        value += mix_value
    else:
        mix_grad = np.zeros_like(mix_scores)
    return value, src_grad, mix_grad


# sample-level forms

def empirical_source_risk(batch: SampleBatch, scorer: ScoreFn) -> float:
    _nonempty(batch.x)
    return float(np.mean(loss_source(scorer(batch.x), batch.hard_labels)))


def empirical_disparity(src_x: np.ndarray, tgt_x: np.ndarray, head_c: ScoreFn, head_d: ScoreFn,
                        gamma: float) -> float:
    _nonempty(src_x, tgt_x)
    return disparity_from_scores(head_d(src_x), head_c(src_x), head_d(tgt_x), head_c(tgt_x), gamma)[0]


def proxy_combined_risk(src: SampleBatch, mixed: SampleBatch, head_cstar: ScoreFn, loss: str = "mse") -> float:
    _nonempty(src.x, mixed.x)
    return proxy_from_scores(head_cstar(src.x), src.y, head_cstar(mixed.x), mixed.y, loss)[0]


def oracle_combined_risk(src_x: np.ndarray, src_labels: np.ndarray, tgt_x: np.ndarray, tgt_labels: np.ndarray,
                         scorer: ScoreFn, form: str = "symmetric") -> float:
    """Source risk plus true-label target risk of one scorer. Evaluation only.

    ``form="symmetric"`` uses cross-entropy on both domains; ``"double"`` uses
    the modified cross-entropy on the target side.
    """
    _nonempty(src_x, tgt_x)
    src = float(np.mean(loss_source(scorer(src_x), src_labels)))
    if form == "symmetric":
        tgt = float(np.mean(loss_source(scorer(tgt_x), tgt_labels)))
    elif form == "double":
        tgt = float(np.mean(loss_target(scorer(tgt_x), tgt_labels)))
    else:
        raise ContractError(f"unknown combined-risk form {form!r}")
    return src + tgt
