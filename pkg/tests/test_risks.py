import math

import numpy as np
import pytest
from hypothesis import given, strategies as st

from emixlab.numerics import ContractError, init_mlp, predict
from emixlab.risks import (DisparityWeights, Scorer, disparity_from_scores, empirical_disparity,
                           empirical_source_risk, oracle_combined_risk, proxy_combined_risk, proxy_from_scores)
from emixlab.vicinal import Origin, SampleBatch


def _const(scores):
    scores = np.asarray(scores, float)
    return lambda x: np.tile(scores, (len(x), 1))


def _src(labels, k=2, d=2, seed=0):
    return SampleBatch.from_labels(np.random.default_rng(seed).normal(size=(len(labels), d)), labels, k,
                                   Origin.SOURCE)


def _p(s):
    e = np.exp(s - s.max())
    return e / e.sum()


def test_source_risk_examples():
    batch = _src([0, 1, 0, 1])
    perfect = lambda x: np.where(np.arange(len(x))[:, None] % 2 == 0, [10.0, -10.0], [-10.0, 10.0])  # noqa: E731
    assert empirical_source_risk(batch, perfect) == pytest.approx(2.06e-9, rel=1e-2)
    assert empirical_source_risk(batch, _const([0, 0])) == pytest.approx(math.log(2))
    two = _src([0, 1])
    half = lambda x: np.array([[0.0, 0.0], [-1e3, 1e3]])   # noqa: E731
    assert empirical_source_risk(two, half) == pytest.approx(math.log(2) / 2)


def test_empty_batches_rejected():
    empty = SampleBatch.empty(2, 2)
    with pytest.raises(ContractError):
        empirical_source_risk(empty, _const([0, 0]))
    with pytest.raises(ContractError):
        empirical_disparity(np.zeros((0, 2)), np.zeros((3, 2)), _const([0, 0]), _const([0, 0]), 2.0)


def test_disparity_uniform_heads():
    x = np.zeros((4, 2))
    val = empirical_disparity(x, x, _const([0, 0]), _const([0, 0]), 2.0)
    assert val == pytest.approx(-3 * math.log(2))


def test_disparity_supremum_regime():
    xs, xt = np.zeros((3, 2)), np.ones((3, 2))
    c = lambda x: np.tile([5.0, 0.0], (len(x), 1))          # noqa: E731
    # D agrees with C on source, disagrees on target
    d = lambda x: np.where(x[:, :1] == 0, [40.0, -40.0], [-40.0, 40.0])  # noqa: E731
    assert empirical_disparity(xs, xt, c, d, 4.0) == pytest.approx(0.0, abs=1e-12)


def test_disparity_matches_term_by_term_sum():
    rng = np.random.default_rng(3)
    xs, xt = rng.normal(size=(8, 2)), rng.normal(size=(8, 2))
    g = init_mlp((2, 5, 4), rng)
    c, d = Scorer(g, init_mlp((4, 5, 3), rng)), Scorer(g, init_mlp((4, 5, 3), rng), "D")
    gamma = 4.0
    total_s = 0.0
    for x in xs:
        hc = int(np.argmax(c(x[None])[0]))
        total_s += -math.log(_p(d(x[None])[0])[hc])
    total_t = 0.0
    for x in xt:
        hc = int(np.argmax(c(x[None])[0]))
        total_t += math.log(1 - _p(d(x[None])[0])[hc])
    expect = -gamma * total_s / 8 + total_t / 8
    assert empirical_disparity(xs, xt, c, d, gamma) == pytest.approx(expect, rel=1e-12)


def test_disparity_gradients_ignore_classifier():
    rng = np.random.default_rng(0)
    ds, cs, dt, ct = (rng.normal(size=(5, 3)) for _ in range(4))
    _, gs, gt = disparity_from_scores(ds, cs, dt, ct, 2.0)
    _, gs2, gt2 = disparity_from_scores(ds, cs + 1e-3 * rng.normal(size=cs.shape), dt, ct, 2.0)
    # small perturbations of C that keep its argmax leave everything unchanged
    assert np.array_equal(gs, gs2) and np.array_equal(gt, gt2)


@given(st.floats(0.1, 8), st.floats(0.1, 8), st.integers(0, 10_000))
def test_disparity_antitone_in_gamma(g1, g2, seed):
    rng = np.random.default_rng(seed)
    ds, cs, dt, ct = (rng.normal(size=(6, 2)) for _ in range(4))
    lo, hi = sorted((g1, g2))
    if hi - lo < 1e-6:
        return
    assert disparity_from_scores(ds, cs, dt, ct, hi)[0] < disparity_from_scores(ds, cs, dt, ct, lo)[0]


def test_proxy_examples():
    src = _src([0, 1, 1])
    mixed = SampleBatch(np.zeros((2, 2)), np.array([[0.6, 0.4], [0.4, 0.6]]), np.full(2, int(Origin.MIXED)))
    # scores whose softmax reproduces every label exactly
    value = proxy_from_scores(np.log(np.maximum(src.y, 1e-300)), src.y, np.log(mixed.y), mixed.y)[0]
    assert value == pytest.approx(0, abs=1e-12)
    onehot_mixed = SampleBatch.from_labels(np.zeros((2, 2)), [0, 1], 2, Origin.MIXED)
    assert proxy_combined_risk(src, onehot_mixed, _const([0, 0])) == pytest.approx(0.5)


def test_proxy_matches_independent_sum():
    rng = np.random.default_rng(5)
    src = _src([0, 2, 1, 1, 0], k=3, seed=5)
    mixed = SampleBatch(rng.normal(size=(4, 2)), rng.dirichlet(np.ones(3), size=4), np.full(4, 2))
    head = Scorer(init_mlp((2, 4), rng), init_mlp((4, 3), rng), "C*")
    expect = np.mean([np.mean((_p(head(x[None])[0]) - y) ** 2) for x, y in zip(src.x, src.y)]) + \
        np.mean([np.mean((_p(head(x[None])[0]) - y) ** 2) for x, y in zip(mixed.x, mixed.y)])
    assert proxy_combined_risk(src, mixed, head) == pytest.approx(expect, rel=1e-12)


@given(st.integers(0, 10_000), st.integers(2, 4))
def test_proxy_bounded(seed, k):
    rng = np.random.default_rng(seed)
    src = SampleBatch.from_labels(rng.normal(size=(5, 2)), rng.integers(0, k, 5), k, Origin.SOURCE)
    mixed = SampleBatch(rng.normal(size=(3, 2)), rng.dirichlet(np.ones(k), size=3), np.full(3, 2))
    w = rng.normal(size=(2, k)) * 10
    val = proxy_combined_risk(src, mixed, lambda x: x @ w)
    assert 0 <= val <= 4 / k


def test_oracle_combined_risk_examples():
    xs, xt = np.zeros((4, 2)), np.ones((4, 2))
    ys, yt = np.array([0, 0, 0, 0]), np.array([1, 1, 1, 1])
    perfect = lambda x: np.where(x[:, :1] == 0, [30.0, -30.0], [-30.0, 30.0])   # noqa: E731
    assert oracle_combined_risk(xs, ys, xt, yt, perfect) == pytest.approx(0, abs=1e-20)
    assert oracle_combined_risk(xs, ys, xt, yt, _const([0, 0])) == pytest.approx(2 * math.log(2))
    assert oracle_combined_risk(xs, ys, xt, yt, _const([0, 0]), "double") == pytest.approx(0.0)
    with pytest.raises(ContractError):
        oracle_combined_risk(xs, ys, xt, yt, perfect, "other")


def test_oracle_combined_risk_straight_line():
    rng = np.random.default_rng(9)
    xs, xt = rng.normal(size=(6, 2)), rng.normal(size=(5, 2))
    ys, yt = rng.integers(0, 3, 6), rng.integers(0, 3, 5)
    w = rng.normal(size=(2, 3))
    scorer = lambda x: x @ w                                 # noqa: E731
    expect = np.mean([-math.log(_p(x @ w)[y]) for x, y in zip(xs, ys)]) + \
        np.mean([-math.log(_p(x @ w)[y]) for x, y in zip(xt, yt)])
    assert oracle_combined_risk(xs, ys, xt, yt, scorer) == pytest.approx(expect, rel=1e-12)


@given(st.integers(0, 10_000))
def test_estimators_permutation_and_duplication_invariant(seed):
    rng = np.random.default_rng(seed)
    k = 3
    xs, xt = rng.normal(size=(6, 2)), rng.normal(size=(5, 2))
    ys = rng.integers(0, k, 6)
    wc, wd = rng.normal(size=(2, k)), rng.normal(size=(2, k))
    c, d = (lambda x: x @ wc), (lambda x: x @ wd)
    src = SampleBatch.from_labels(xs, ys, k, Origin.SOURCE)
    mixed = SampleBatch(xt, rng.dirichlet(np.ones(k), size=5), np.full(5, 2))
    perm_s, perm_t = rng.permutation(6), rng.permutation(5)
    src_p = SampleBatch.from_labels(xs[perm_s], ys[perm_s], k, Origin.SOURCE)
    mixed_p = SampleBatch(mixed.x[perm_t], mixed.y[perm_t], mixed.origin)
    src_2 = src.union(src)
    mixed_2 = mixed.union(mixed)
    base = (empirical_source_risk(src, c), empirical_disparity(xs, xt, c, d, 2.0),
            proxy_combined_risk(src, mixed, d))
    perm = (empirical_source_risk(src_p, c), empirical_disparity(xs[perm_s], xt[perm_t], c, d, 2.0),
            proxy_combined_risk(src_p, mixed_p, d))
    dup = (empirical_source_risk(src_2, c), empirical_disparity(np.vstack([xs, xs]), np.vstack([xt, xt]), c, d, 2.0),
           proxy_combined_risk(src_2, mixed_2, d))
    np.testing.assert_allclose(perm, base, rtol=0, atol=1e-12)
    np.testing.assert_allclose(dup, base, rtol=0, atol=1e-12)


def test_weights_validation():
    assert DisparityWeights().gamma == 8.0
    with pytest.raises(ContractError):
        DisparityWeights(gamma=0)
    s = Scorer(init_mlp((2, 3), np.random.default_rng(0)), init_mlp((3, 2), np.random.default_rng(1)))
    assert s(np.zeros((1, 2))).shape == (1, 2)
    np.testing.assert_array_equal(s(np.ones((2, 2))), predict(s.head, predict(s.g, np.ones((2, 2)))))
