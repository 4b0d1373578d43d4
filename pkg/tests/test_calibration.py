"""Calibration error binning, model evaluation, reliability rows and the
temperature baseline."""

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from calico.calibration import (
    compute_ece,
    evaluate_model,
    reliability_table,
    temperature_scale,
)
from calico.errors import ValidationError
from calico.models import ArchSpec, build_model, posterior


def brute_force_ece(conf, corr, m):
    """Reference: walk every sample against every interval."""
    n = len(conf)
    total = 0.0
    for k in range(1, m + 1):
        lo, hi = (k - 1) / m, k / m
        members = [i for i in range(n) if lo < conf[i] <= hi]
        if not members:
            continue
        acc = sum(corr[i] for i in members) / len(members)
        avg = sum(conf[i] for i in members) / len(members)
        total += (len(members) / n) * abs(acc - avg)
    return total


def test_perfect_predictor_zero_ece():
    rep = compute_ece(np.ones(10), np.ones(10, bool), 15)
    assert rep.ece == 0.0
    assert rep.accuracy == 1.0


def test_hand_case_four_singletons():
    rep = compute_ece(np.array([0.55, 0.65, 0.85, 0.95]),
                      np.array([0, 1, 1, 1], bool), 10)
    assert rep.ece == pytest.approx(0.275, abs=1e-15)


def test_single_bin_reduction():
    rng = np.random.default_rng(0)
    conf = rng.uniform(0.2, 1.0, 50)
    corr = rng.random(50) < 0.5
    rep = compute_ece(conf, corr, 1)
    assert rep.ece == pytest.approx(abs(corr.mean() - conf.mean()), abs=1e-15)


def test_right_endpoint_binning():
    # confidence exactly m/M belongs to bin m, not m+1
    rep = compute_ece(np.array([0.2]), np.array([1], bool), 10)
    occupied = [b for b in rep.bins if b.count]
    assert len(occupied) == 1
    assert occupied[0].lo == pytest.approx(0.1)
    assert occupied[0].hi == pytest.approx(0.2)


def test_matches_brute_force_on_random_sets():
    rng = np.random.default_rng(42)
    for _ in range(20):
        n = int(rng.integers(1, 500))
        conf = rng.uniform(1e-6, 1.0, n)
        corr = rng.random(n) < conf
        for m in (1, 10, 15):
            rep = compute_ece(conf, corr, m)
            assert abs(rep.ece - brute_force_ece(conf, corr, m)) <= 1e-12


def test_permutation_invariance():
    rng = np.random.default_rng(5)
    conf = rng.uniform(0.01, 1.0, 200)
    corr = rng.random(200) < 0.7
    perm = rng.permutation(200)
    a = compute_ece(conf, corr, 15).ece
    b = compute_ece(conf[perm], corr[perm], 15).ece
    assert a == pytest.approx(b, abs=1e-15)


def test_counts_sum_and_empty_bins():
    rep = compute_ece(np.array([0.95, 0.97]), np.array([1, 0], bool), 15)
    assert sum(b.count for b in rep.bins) == 2
    assert len(rep.bins) == 15
    assert sum(1 for b in rep.bins if b.count == 0) == 14


def test_rejects_bad_inputs():
    with pytest.raises(ValidationError):
        compute_ece(np.array([]), np.array([]), 10)
    with pytest.raises(ValidationError):
        compute_ece(np.array([0.5]), np.array([1, 0], bool), 10)
    with pytest.raises(ValidationError):
        compute_ece(np.array([0.0]), np.array([1], bool), 10)
    with pytest.raises(ValidationError):
        compute_ece(np.array([1.2]), np.array([1], bool), 10)


def test_consistent_sampling_drives_ece_down():
    # when P(correct | conf=c) = c, calibration is perfect in expectation
    rng = np.random.default_rng(99)
    n = 100_000
    conf = rng.uniform(0.5, 1.0, n)
    corr = rng.random(n) < conf
    rep = compute_ece(conf, corr, 15)
    assert rep.ece < 0.01


def test_evaluate_model_recount():
    arch = ArchSpec(in_shape=(2,), n_classes=3, hidden=(8,), dtype="float64")
    state = build_model(arch, seed=0)
    rng = np.random.default_rng(1)
    x = rng.standard_normal((40, 2))
    y = rng.integers(0, 3, 40)
    rep = evaluate_model(state, x, y, m_bin=10)
    from calico.models import confidence, logits
    conf, pred = confidence(posterior(logits(state, x)))
    assert rep.accuracy == pytest.approx(float((pred == y).mean()), abs=1e-15)
    assert rep.n_data == 40


def test_evaluate_model_empty_rejected():
    arch = ArchSpec(in_shape=(2,), n_classes=3, hidden=(8,))
    state = build_model(arch, seed=0)
    with pytest.raises(ValidationError):
        evaluate_model(state, np.empty((0, 2)), np.empty(0, dtype=int))


def test_reliability_rows_complete():
    rep = compute_ece(np.array([0.55, 0.65, 0.85, 0.95]),
                      np.array([0, 1, 1, 1], bool), 10)
    rows = reliability_table(rep)
    assert len(rows) == 10
    devs = [r["deviation"] for r in rows if r["count"]]
    assert devs == pytest.approx([-0.55, 0.35, 0.15, 0.05])
    assert all(r["deviation"] == 0.0 for r in rows if not r["count"])


def _calibrated_logits(n, k, seed, sharpness=1.0):
    rng = np.random.default_rng(seed)
    raw = rng.standard_normal((n, k)) * sharpness
    # draw labels from the implied posterior, so the set is calibrated
    p = posterior(raw)
    u = rng.random(n)
    labels = (p.cumsum(axis=1) < u[:, None]).sum(axis=1)
    return raw, labels


def test_temperature_identity_on_calibrated():
    raw, labels = _calibrated_logits(4000, 3, seed=3, sharpness=2.0)
    t = temperature_scale(raw, labels)
    assert 0.95 <= t <= 1.05


def test_temperature_recovers_overconfidence():
    raw, labels = _calibrated_logits(4000, 3, seed=4, sharpness=2.0)
    t = temperature_scale(raw * 5.0, labels)
    assert abs(t - 5.0) / 5.0 <= 0.05


def test_temperature_preserves_argmax():
    raw, labels = _calibrated_logits(500, 4, seed=5)
    t = temperature_scale(raw * 5.0, labels)
    assert np.array_equal((raw * 5.0).argmax(axis=1),
                          ((raw * 5.0) / t).argmax(axis=1))


def test_temperature_single_class_rejected():
    rng = np.random.default_rng(0)
    with pytest.raises(ValidationError):
        temperature_scale(rng.standard_normal((10, 3)), np.zeros(10, int))


@settings(max_examples=30, deadline=None)
@given(
    n=st.integers(min_value=1, max_value=300),
    m=st.sampled_from([1, 2, 10, 15]),
    seed=st.integers(min_value=0, max_value=10_000),
)
def test_ece_equals_brute_force_property(n, m, seed):
    rng = np.random.default_rng(seed)
    conf = rng.uniform(1e-9, 1.0, n)
    corr = rng.random(n) < 0.6
    rep = compute_ece(conf, corr, m)
    assert abs(rep.ece - brute_force_ece(conf, corr, m)) <= 1e-12
    assert 0.0 <= rep.ece <= 1.0
