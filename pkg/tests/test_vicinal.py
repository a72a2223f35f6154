import numpy as np
import pytest
from hypothesis import given, strategies as st

from emixlab.numerics import ContractError, softmax
from emixlab.vicinal import (LabeledSample, Origin, SampleBatch, e_mixup, e_mixup_partners, mixup, mixup_pair,
                             select_confident)


def _s(x, y, origin=Origin.SOURCE):
    return LabeledSample(np.array(x, float), np.array(y, float), origin)


def _batch(labels, k, rng, d=2):
    labels = np.asarray(labels)
    return SampleBatch.from_labels(rng.normal(size=(len(labels), d)), labels, k, Origin.SOURCE)


def test_mixup_pair_endpoints_and_example():
    a, b = _s([1, 0], [1, 0]), _s([0, 1], [0, 1])
    one = mixup_pair(a, b, 1.0)
    assert one.features.tolist() == [1, 0] and one.label.tolist() == [1, 0]
    zero = mixup_pair(a, b, 0.0)
    assert zero.features.tolist() == [0, 1] and zero.label.tolist() == [0, 1]
    m = mixup_pair(a, b, 0.6)
    np.testing.assert_allclose(m.features, [0.6, 0.4])
    np.testing.assert_allclose(m.label, [0.6, 0.4])
    assert m.origin is Origin.MIXED


def test_mixup_pair_dimension_mismatch():
    with pytest.raises(ContractError):
        mixup_pair(_s([1, 0], [1, 0]), _s([0, 1, 2], [0, 1]), 0.5)


def test_two_sample_batch_only_cross_partners():
    rng = np.random.default_rng(0)
    batch = _batch([0, 1], 2, rng)
    out = e_mixup(batch, 0.6, np.random.default_rng(1), 2)
    assert len(out) == 2
    np.testing.assert_allclose(out.y[0], [0.6, 0.4])
    np.testing.assert_allclose(out.y[1], [0.4, 0.6])
    np.testing.assert_allclose(out.x[0], 0.6 * batch.x[0] + 0.4 * batch.x[1])
    assert np.all(out.origin == int(Origin.MIXED))


def test_single_class_batch_falls_back_to_uniform_partner():
    batch = _batch([1, 1, 1, 1, 1], 3, np.random.default_rng(0))
    out = e_mixup(batch, 0.6, np.random.default_rng(5), 3)
    # replay: the argmin draw per anchor, then a uniform partner since no other class is present
    replay = np.random.default_rng(5)
    for i in range(5):
        replay.integers(2)                  # choice among the two zero coordinates
        j = replay.integers(5)
        np.testing.assert_allclose(out.x[i], 0.6 * batch.x[i] + 0.4 * batch.x[j])
    np.testing.assert_allclose(out.y, batch.y)


def test_replay_64_samples_three_classes():
    labels = np.arange(64) % 3
    batch = _batch(labels, 3, np.random.default_rng(2))
    partners = e_mixup_partners(batch, np.random.default_rng(11), 3)
    # independent replay of the selection rule
    replay = np.random.default_rng(11)
    members = {c: np.flatnonzero(labels == c) for c in range(3)}
    for i in range(64):
        zeros = [c for c in range(3) if c != labels[i]]
        c = zeros[replay.integers(2)]
        expect = members[c][replay.integers(len(members[c]))]
        assert partners[i] == expect
        assert labels[partners[i]] != labels[i]
    out = e_mixup(batch, 0.6, np.random.default_rng(11), 3)
    np.testing.assert_allclose(out.x, 0.6 * batch.x + 0.4 * batch.x[partners])


def test_empty_partner_class_is_redrawn():
    # classes 0 and 1 present, class 2 absent: every partner must come from the other present class
    labels = np.array([0, 0, 1, 1, 0])
    batch = _batch(labels, 3, np.random.default_rng(0))
    for seed in range(20):
        p = e_mixup_partners(batch, np.random.default_rng(seed), 3)
        assert np.all(labels[p] != labels)


def test_same_partner_rule():
    labels = np.array([0, 1, 2, 0, 1, 2])
    batch = _batch(labels, 3, np.random.default_rng(0))
    p = e_mixup_partners(batch, np.random.default_rng(3), 3, partner="same")
    assert np.all(labels[p] == labels)


def test_e_mixup_needs_two_classes():
    batch = SampleBatch.from_labels(np.zeros((2, 2)), [0, 0], 1, Origin.SOURCE)
    with pytest.raises(ContractError):
        e_mixup(batch, 0.6, np.random.default_rng(0), 1)


hard_batches = st.tuples(st.integers(2, 4), st.lists(st.integers(0, 3), min_size=1, max_size=30),
                         st.integers(0, 2 ** 32 - 1), st.floats(0.05, 0.95))


@given(hard_batches)
def test_e_mixup_properties(case):
    k, raw, seed, alpha = case
    labels = np.array([r % k for r in raw])
    batch = _batch(labels, k, np.random.default_rng(seed))
    out = e_mixup(batch, alpha, np.random.default_rng(seed), k)
    again = e_mixup(batch, alpha, np.random.default_rng(seed), k)
    assert np.array_equal(out.x, again.x) and np.array_equal(out.y, again.y)
    assert np.all(out.y >= 0) and np.allclose(out.y.sum(axis=1), 1)
    partners = e_mixup_partners(batch, np.random.default_rng(seed), k)
    if len(set(labels)) >= 2:
        assert np.all(labels[partners] != labels)
    # recover alpha from any coordinate where anchor and partner differ
    anchor, partner = batch.x, batch.x[partners]
    diff = anchor - partner
    mask = np.abs(diff) > 0.1
    if mask.any():
        rec = ((out.x - partner)[mask]) / diff[mask]
        np.testing.assert_allclose(rec, alpha, rtol=0, atol=1e-12)


def test_mixup_convex_and_seeded():
    batch = _batch([0, 1, 1, 0], 2, np.random.default_rng(0))
    a = mixup(batch, 0.6, np.random.default_rng(4))
    b = mixup(batch, 0.6, np.random.default_rng(4))
    assert np.array_equal(a.x, b.x)
    with pytest.raises(ContractError):
        mixup(batch, 1.5, np.random.default_rng(0))


def test_select_confident_examples():
    x = np.random.default_rng(0).normal(size=(6, 2))
    uniform = lambda f: np.zeros((len(f), 3))           # noqa: E731
    assert len(select_confident(x, uniform, 1 / 3 + 1e-6)) == 0
    saturated = lambda f: np.tile([10.0, -10.0], (len(f), 1))  # noqa: E731
    out = select_confident(x, saturated, 0.5)
    assert len(out) == 6 and np.all(out.y == [1.0, 0.0])
    assert len(select_confident(x, saturated, 1.0)) == 0
    assert np.all(out.origin == int(Origin.TARGET_PSEUDO))
    with pytest.raises(ContractError):
        select_confident(x, uniform, 0.2)


def test_select_confident_matches_brute_force():
    rng = np.random.default_rng(21)
    x = rng.normal(size=(40, 2))
    w = rng.normal(size=(2, 3)) * 3
    scorer = lambda f: f @ w                            # noqa: E731
    out = select_confident(x, scorer, 0.9)
    expect = []
    for row in x:
        s = row @ w
        p = np.exp(s - s.max()) / np.exp(s - s.max()).sum()
        if p.max() >= 0.9:
            expect.append((row, int(np.argmax(p))))
    assert len(out) == len(expect)
    for (row, c), xi, yi in zip(expect, out.x, out.y):
        np.testing.assert_array_equal(xi, row)
        assert np.argmax(yi) == c


@given(st.floats(0.34, 1.0), st.floats(0.34, 1.0), st.integers(0, 1000))
def test_select_confident_monotone_in_tau(t1, t2, seed):
    lo, hi = sorted((t1, t2))
    rng = np.random.default_rng(seed)
    x = rng.normal(size=(30, 2))
    w = rng.normal(size=(2, 3)) * 4
    a = select_confident(x, lambda f: f @ w, lo)
    b = select_confident(x, lambda f: f @ w, hi)
    assert len(b) <= len(a)
    assert {tuple(r) for r in b.x} <= {tuple(r) for r in a.x}


def test_batch_validation_and_roundtrip():
    with pytest.raises(ContractError):
        SampleBatch(np.zeros((2, 2)), np.array([[0.5, 0.6], [1, 0]]), np.zeros(2, int))
    batch = _batch([0, 1, 2], 3, np.random.default_rng(0))
    back = SampleBatch.from_samples(batch.samples())
    assert np.array_equal(back.x, batch.x) and np.array_equal(back.y, batch.y)
    assert len(batch.union(SampleBatch.empty(2, 3))) == 3
    assert softmax(np.zeros(2)).sum() == 1.0
