"""Query strategy selection rules and their pool-safety properties."""

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from calico.errors import ValidationError
from calico.models import ArchSpec, build_model
from calico.queries import (
    QuerySpec,
    equal_class_query,
    least_confidence_query,
    pool_confidences,
    random_query,
    select_least_confident,
)


def test_select_basic_order():
    ids = np.array([10, 11, 12])
    conf = np.array([0.9, 0.5, 0.7])
    assert list(select_least_confident(ids, conf, 2)) == [11, 12]


def test_select_exhausts_pool():
    ids = np.array([3, 1, 2])
    conf = np.array([0.2, 0.9, 0.4])
    assert list(select_least_confident(ids, conf, 99)) == [3, 2, 1]


def test_select_tie_breaks_by_id():
    ids = np.array([7, 2, 5])
    conf = np.array([0.5, 0.5, 0.5])
    assert list(select_least_confident(ids, conf, 3)) == [2, 5, 7]


def test_select_matches_brute_force():
    rng = np.random.default_rng(0)
    ids = rng.permutation(1000)[:200]
    conf = rng.uniform(1 / 3, 1.0, 200)
    got = set(select_least_confident(ids, conf, 40))
    want = set(ids[np.argsort(conf, kind="stable")[:40]])
    assert got == want


def test_select_monotone_transform_invariance():
    rng = np.random.default_rng(1)
    ids = np.arange(100)
    conf = rng.uniform(0.3, 1.0, 100)
    a = select_least_confident(ids, conf, 25)
    b = select_least_confident(ids, conf ** 3, 25)  # strictly increasing map
    assert np.array_equal(a, b)


def test_least_confidence_end_to_end():
    arch = ArchSpec(in_shape=(2,), n_classes=3, hidden=(8,), dtype="float64")
    state = build_model(arch, seed=0)
    rng = np.random.default_rng(2)
    features = rng.standard_normal((120, 2))
    pool = np.arange(20, 120)
    q = least_confidence_query(state, pool, features, 15)
    assert len(q) == 15
    assert set(q) <= set(pool)
    conf = pool_confidences(state, features[pool])
    want = set(pool[np.argsort(conf, kind="stable")[:15]])
    assert set(q) == want


def test_least_confidence_empty_pool_rejected():
    arch = ArchSpec(in_shape=(2,), n_classes=3, hidden=(8,))
    state = build_model(arch, seed=0)
    with pytest.raises(ValidationError):
        least_confidence_query(state, np.array([], dtype=np.int64),
                               np.zeros((5, 2)), 3)


class _SimOracle:
    is_simulated = True


class _LiveOracle:
    is_simulated = False


def _equal_class_setup(seed=3):
    arch = ArchSpec(in_shape=(2,), n_classes=3, hidden=(8,), dtype="float64")
    state = build_model(arch, seed=0)
    rng = np.random.default_rng(seed)
    features = rng.standard_normal((90, 2))
    labels = np.repeat(np.arange(3), 30)
    return state, features, labels


def test_equal_class_quota_met():
    state, features, labels = _equal_class_setup()
    pool = np.arange(90)
    q = equal_class_query(state, pool, features, labels, 3, 5,
                          oracle=_SimOracle())
    assert len(q) == 15
    counts = np.bincount(labels[q], minlength=3)
    assert list(counts) == [5, 5, 5]


def test_equal_class_takes_least_confident_within_class():
    state, features, labels = _equal_class_setup()
    pool = np.arange(90)
    q = equal_class_query(state, pool, features, labels, 3, 4)
    conf = pool_confidences(state, features[pool])
    for k in range(3):
        members = pool[labels[pool] == k]
        member_conf = conf[labels[pool] == k]
        want = set(members[np.argsort(member_conf, kind="stable")[:4]])
        assert set(q[labels[q] == k]) == want


def test_equal_class_exhausted_class():
    state, features, labels = _equal_class_setup()
    # leave only 2 members of class 0 in the pool
    pool = np.concatenate([np.arange(2), np.arange(30, 90)])
    q = equal_class_query(state, pool, features, labels, 3, 10)
    counts = np.bincount(labels[q], minlength=3)
    assert list(counts) == [2, 10, 10]


def test_equal_class_refuses_live_oracle():
    state, features, labels = _equal_class_setup()
    with pytest.raises(ValidationError):
        equal_class_query(state, np.arange(90), features, labels, 3, 5,
                          oracle=_LiveOracle())


def test_random_query_seeded():
    pool = np.arange(50, 150)
    a = random_query(pool, 20, seed=9)
    b = random_query(pool, 20, seed=9)
    assert np.array_equal(a, b)
    assert len(set(a)) == 20
    assert set(a) <= set(pool)


def test_random_query_full_pool_is_permutation():
    pool = np.arange(30)
    q = random_query(pool, 30, seed=1)
    assert sorted(q) == list(range(30))


def test_random_query_uniform_frequency():
    # chi-square against uniform over a 20-item pool, 10^4 single draws
    pool = np.arange(20)
    counts = np.zeros(20)
    for s in range(10_000):
        counts[random_query(pool, 1, seed=s)[0]] += 1
    expected = 10_000 / 20
    chi2 = float(((counts - expected) ** 2 / expected).sum())
    # 19 dof: mean 19, sd ~sqrt(38); 3 sigma upper bound
    assert chi2 < 19 + 3 * np.sqrt(38)


def test_query_spec_validation():
    with pytest.raises(ValidationError):
        QuerySpec(strategy="entropy")
    with pytest.raises(ValidationError):
        QuerySpec(strategy="least_confidence", q=0)
    with pytest.raises(ValidationError):
        QuerySpec(strategy="equal_class", labels_per_class=0)
    QuerySpec(strategy="equal_class", labels_per_class=5)


@settings(max_examples=40, deadline=None)
@given(
    n=st.integers(min_value=1, max_value=80),
    q=st.integers(min_value=1, max_value=100),
    seed=st.integers(min_value=0, max_value=1_000),
)
def test_selection_subset_property(n, q, seed):
    rng = np.random.default_rng(seed)
    ids = rng.choice(10_000, size=n, replace=False)
    conf = rng.uniform(0.01, 1.0, n)
    out = select_least_confident(ids, conf, q)
    assert len(out) == min(q, n)
    assert len(set(out.tolist())) == len(out)
    assert set(out.tolist()) <= set(ids.tolist())
