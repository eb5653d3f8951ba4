import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from pgann.core import CandidatePool, Dataset, Neighbor, centroid, cos_angle_at, squared_l2
from pgann import _kernels


class TestDataset:
    def test_from_array_casts_and_validates(self):
        ds = Dataset.from_array(np.arange(12, dtype=np.float64).reshape(4, 3))
        assert ds.data.dtype == np.float32
        assert (ds.n, ds.d) == (4, 3)

    def test_rejects_non_2d(self):
        with pytest.raises(ValueError):
            Dataset.from_array(np.zeros(5))

    def test_rejects_empty(self):
        with pytest.raises(ValueError):
            Dataset.from_array(np.zeros((0, 3)))

    def test_rejects_nan(self):
        bad = np.zeros((2, 2))
        bad[1, 1] = np.nan
        with pytest.raises(ValueError):
            Dataset.from_array(bad)

    def test_direct_construction_requires_contiguous_f32(self):
        with pytest.raises(ValueError):
            Dataset(np.zeros((3, 3), dtype=np.float64))


def test_squared_l2_matches_numpy():
    rng = np.random.default_rng(0)
    for _ in range(200):
        d = rng.integers(1, 40)
        a = rng.normal(size=d).astype(np.float32)
        b = rng.normal(size=d).astype(np.float32)
        ref = float(np.sum((a.astype(np.float64) - b) ** 2))
        assert squared_l2(a, b) == pytest.approx(ref, rel=1e-4)


def test_squared_l2_shape_mismatch():
    with pytest.raises(ValueError):
        squared_l2(np.zeros(3, np.float32), np.zeros(4, np.float32))


def test_cos_angle_right_triangle():
    w = np.zeros(2, np.float32)
    u = np.array([1, 0], np.float32)
    v = np.array([0, 1], np.float32)
    assert cos_angle_at(w, u, v) == pytest.approx(0.0, abs=1e-6)


def test_cos_angle_degenerate_raises():
    p = np.array([1.0, 2.0], np.float32)
    with pytest.raises(ValueError):
        cos_angle_at(p, p, np.array([0.0, 0.0], np.float32))


def test_cos_angle_collinear_clamped():
    # opposite directions: angle at w is exactly pi
    w = np.zeros(2, np.float32)
    u = np.array([2, 0], np.float32)
    v = np.array([-3, 0], np.float32)
    assert cos_angle_at(w, u, v) == pytest.approx(-1.0)


def test_centroid_mean():
    ds = Dataset.from_array(np.array([[0, 0], [2, 4]], np.float32))
    np.testing.assert_allclose(centroid(ds), [1.0, 2.0])


# ---------------------------------------------------------------------------
# Bounded pool: the class and the jitted mirror must agree with the
# sort-everything oracle on any offer sequence.
# ---------------------------------------------------------------------------

def _pool_oracle(offers, L):
    """Expected pool content: L smallest (dist, id) pairs, distinct ids."""
    best = {}
    for i, d in offers:
        best[i] = d
    return sorted(((d, i) for i, d in best.items()))[:L]


@settings(max_examples=60, deadline=None)
@given(
    st.lists(st.tuples(st.integers(0, 30),
                       st.integers(0, 100)), min_size=1, max_size=120),
    st.integers(1, 12),
)
def test_pool_matches_oracle(raw, L):
    # one distance per id, as produced by a deterministic distance function
    dist_of = {i: float(d) for i, d in raw}
    offers = [(i, dist_of[i]) for i, _ in raw]
    pool = CandidatePool(L)
    for i, d in offers:
        pool.insert(Neighbor(id=i, dist=d))
    got = [(nb.dist, nb.id) for nb in pool.entries]
    assert got == _pool_oracle(offers, L)


@settings(max_examples=40, deadline=None)
@given(
    st.lists(st.tuples(st.integers(0, 30),
                       st.integers(0, 100)), min_size=1, max_size=120),
    st.integers(1, 12),
)
def test_kernel_pool_matches_class(raw, L):
    dist_of = {i: float(d) for i, d in raw}
    offers = [(i, dist_of[i]) for i, _ in raw]
    ids = np.empty(L, np.int32)
    dists = np.empty(L, np.float32)
    flags = np.zeros(L, np.bool_)
    size = 0
    pool = CandidatePool(L)
    for i, d in offers:
        size = _kernels.pool_insert(ids, dists, flags, size, L,
                                    np.int32(i), np.float32(d))
        pool.insert(Neighbor(id=i, dist=d))
    got = [(int(ids[t]), float(dists[t])) for t in range(size)]
    want = [(nb.id, nb.dist) for nb in pool.entries]
    assert got == want


def test_pool_full_rejects_worse():
    pool = CandidatePool(2)
    assert pool.insert(Neighbor(1, 1.0))
    assert pool.insert(Neighbor(2, 2.0))
    assert not pool.insert(Neighbor(3, 3.0))
    assert pool.insert(Neighbor(4, 0.5))
    assert pool.ids() == [4, 1]


def test_pool_duplicate_rejected():
    pool = CandidatePool(4)
    assert pool.insert(Neighbor(7, 1.0))
    assert not pool.insert(Neighbor(7, 1.0))
    assert len(pool) == 1


def test_pool_expansion_bookkeeping():
    pool = CandidatePool(3)
    for i, d in ((0, 3.0), (1, 1.0), (2, 2.0)):
        pool.insert(Neighbor(i, d))
    assert pool.first_unexpanded() == 0
    pool.mark_expanded(0)
    assert pool.first_unexpanded() == 1
    pool.mark_expanded(1)
    pool.mark_expanded(2)
    assert pool.first_unexpanded() is None


def test_pool_tie_broken_by_id():
    pool = CandidatePool(3)
    pool.insert(Neighbor(9, 1.0))
    pool.insert(Neighbor(3, 1.0))
    assert pool.ids() == [3, 9]


def test_neighbor_ordering_key():
    assert Neighbor(2, 1.0).key() < Neighbor(1, 2.0).key()
    assert Neighbor(1, 1.0).key() < Neighbor(2, 1.0).key()
