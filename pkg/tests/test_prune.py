import math

import numpy as np
import pytest

from pgann.core import Dataset, cos_angle_at, squared_l2
from pgann.graph import ProximityGraph, complete_graph, reachable_from
from pgann.oracle import exact_knn
from pgann.prune import (PruneParams, RefineStats, add_reverse_and_prune,
                         alpha_prune, entry_point, prune_all, refine,
                         rng_prune)

from conftest import make_ds


def _dominance_oracle(data, u, ids, dists, M):
    """Greedy scan in list order; v is dropped when an already-kept w sits
    closer to v than u does.  Plain numpy, no shared code with the kernel."""
    kept = []
    for v, duv in zip(ids, dists):
        blocked = False
        for w, _ in kept:
            dwv = float(np.float32(np.sum(
                (data[w].astype(np.float32) - data[v]) ** 2, dtype=np.float32)))
            if dwv < duv:
                blocked = True
                break
        if not blocked:
            kept.append((int(v), float(duv)))
            if len(kept) == M:
                break
    return [v for v, _ in kept]


def _candidate_list(ds, u, size, rng):
    others = np.array([v for v in range(ds.n) if v != u])
    pick = rng.choice(others, size=min(size, len(others)), replace=False)
    dists = np.array([squared_l2(ds.data[v], ds.data[u]) for v in pick],
                     dtype=np.float32)
    order = np.lexsort((pick, dists))
    return pick[order].astype(np.int32), dists[order]


def test_rng_prune_matches_dominance_oracle():
    rng = np.random.default_rng(77)
    for trial in range(50):
        n = int(rng.integers(10, 200))
        d = int(rng.integers(2, 8))
        ds = Dataset.from_array(rng.random((n, d)))
        u = int(rng.integers(0, n))
        ids, dists = _candidate_list(ds, u, int(rng.integers(2, 40)), rng)
        M = int(rng.integers(1, 32))
        kept, kd = rng_prune(ds, u, ids, dists, M)
        want = _dominance_oracle(ds.data, u, ids, dists, M)
        assert kept.tolist() == want, f"trial {trial}"
        assert np.all(np.diff(kd) >= 0)


def test_alpha_60_equals_rng():
    rng = np.random.default_rng(5)
    for _ in range(100):
        n = int(rng.integers(10, 80))
        ds = Dataset.from_array(rng.random((n, 4)))
        u = int(rng.integers(0, n))
        ids, dists = _candidate_list(ds, u, int(rng.integers(2, 25)), rng)
        M = int(rng.integers(1, 16))
        a, _ = rng_prune(ds, u, ids, dists, M)
        b, _ = alpha_prune(ds, u, ids, dists, M, 60.0)
        assert a.tolist() == b.tolist()


def test_alpha_near_180_keeps_prefix():
    ds = make_ds(40, 3, seed=1)
    rng = np.random.default_rng(2)
    ids, dists = _candidate_list(ds, 0, 20, rng)
    kept, _ = alpha_prune(ds, 0, ids, dists, 8, 179.9)
    assert kept.tolist() == ids[:8].tolist()


def test_hand_computed_triangle():
    """u=(0,0), a=(1,0), b=(2.4,0.9): the angle at a is about 147.3 deg, so
    b survives only when the threshold exceeds that."""
    pts = np.array([[0, 0], [1, 0], [2.4, 0.9]], np.float32)
    ds = Dataset.from_array(pts)
    ang = math.degrees(math.acos(cos_angle_at(pts[1], pts[0], pts[2])))
    assert ang == pytest.approx(147.27, abs=0.01)
    ids = np.array([1, 2], np.int32)
    dists = np.array([squared_l2(pts[1], pts[0]),
                      squared_l2(pts[2], pts[0])], np.float32)
    kept120, _ = alpha_prune(ds, 0, ids, dists, 2, 120.0)
    kept150, _ = alpha_prune(ds, 0, ids, dists, 2, 150.0)
    assert kept120.tolist() == [1]
    assert kept150.tolist() == [1, 2]
    # the plain occlusion rule drops b regardless of the angle
    keptr, _ = rng_prune(ds, 0, ids, dists, 2)
    assert keptr.tolist() == [1]


def test_single_candidate_kept():
    ds = make_ds(5, 2, seed=0)
    ids = np.array([3], np.int32)
    dists = np.array([squared_l2(ds.data[3], ds.data[0])], np.float32)
    kept, _ = rng_prune(ds, 0, ids, dists, 4)
    assert kept.tolist() == [3]


def test_degree_cap_enforced():
    ds = make_ds(100, 2, seed=3)
    rng = np.random.default_rng(4)
    ids, dists = _candidate_list(ds, 0, 60, rng)
    kept, _ = rng_prune(ds, 0, ids, dists, 3)
    assert len(kept) <= 3


def test_unsorted_candidates_rejected():
    ds = make_ds(10, 2, seed=5)
    ids = np.array([1, 2], np.int32)
    dists = np.array([2.0, 1.0], np.float32)
    with pytest.raises(ValueError, match="ascending"):
        rng_prune(ds, 0, ids, dists, 4)


class TestCoincidentPoints:
    def test_zero_distance_neighbor_blocks_rest(self):
        """A kept copy of u occludes every later candidate: distance zero to
        u means it is closer to any v than u is (whenever d(u,v) > 0)."""
        pts = np.array([[0, 0], [0, 0], [1, 0], [0, 1]], np.float32)
        ds = Dataset.from_array(pts)
        ids = np.array([1, 2, 3], np.int32)
        dists = np.array([0.0, 1.0, 1.0], np.float32)
        kept, _ = rng_prune(ds, 0, ids, dists, 3)
        assert kept.tolist() == [1]
        kepta, _ = alpha_prune(ds, 0, ids, dists, 3, 170.0)
        assert kepta.tolist() == [1]

    def test_duplicate_candidates_collapse(self):
        """Two copies of the same location: the second (by id) is dropped
        because the first sits at distance zero from it."""
        pts = np.array([[0, 0], [1, 0], [1, 0]], np.float32)
        ds = Dataset.from_array(pts)
        ids = np.array([1, 2], np.int32)
        dists = np.array([1.0, 1.0], np.float32)
        kept, _ = rng_prune(ds, 0, ids, dists, 2)
        assert kept.tolist() == [1]
        kepta, _ = alpha_prune(ds, 0, ids, dists, 2, 179.0)
        assert kepta.tolist() == [1]


def test_dominance_freeness_invariant():
    ds = make_ds(200, 6, seed=6)
    rng = np.random.default_rng(7)
    for u in rng.integers(0, 200, size=10):
        ids, dists = _candidate_list(ds, int(u), 40, rng)
        kept, kd = rng_prune(ds, int(u), ids, dists, 20)
        for i in range(len(kept)):
            for j in range(i + 1, len(kept)):
                dij = squared_l2(ds.data[kept[i]], ds.data[kept[j]])
                assert dij >= kd[j] or kd[i] == kd[j]


def test_prune_all_matches_per_node():
    ds = make_ds(60, 4, seed=8)
    rng = np.random.default_rng(9)
    lists = [_candidate_list(ds, u, 15, rng) for u in range(ds.n)]
    cand_counts = np.array([len(i) for i, _ in lists], np.int32)
    cand_off = np.zeros(ds.n + 1, np.int64)
    np.cumsum(cand_counts, out=cand_off[1:])
    cand_ids = np.concatenate([i for i, _ in lists])
    cand_dists = np.concatenate([d for _, d in lists])
    out_ids, out_dists, out_counts, de, ae = prune_all(
        ds, cand_off, cand_counts, cand_ids, cand_dists,
        PruneParams(M=6, strategy="rng"))
    assert de > 0 and ae == 0
    for u in range(ds.n):
        kept, _ = rng_prune(ds, u, *lists[u], 6)
        assert out_ids[u, : out_counts[u]].tolist() == kept.tolist()


def test_reverse_phase_adds_missing_backlink():
    """Candidates only point one way down a 3-chain; after the reverse fold
    each node also links back to whoever chose it."""
    pts = np.array([[0.0], [1.0], [2.1]], np.float32)
    ds = Dataset.from_array(pts)
    ids = np.full((3, 2), -1, np.int32)
    dists = np.full((3, 2), np.inf, np.float32)
    counts = np.zeros(3, np.int32)
    ids[1, 0], dists[1, 0], counts[1] = 0, 1.0, 1
    ids[2, 0], dists[2, 0], counts[2] = 1, squared_l2(pts[2], pts[1]), 1
    b_ids, b_dists, b_counts, _, _ = add_reverse_and_prune(
        ds, ids, dists, counts, PruneParams(M=2, strategy="rng"))
    assert 1 in b_ids[0, : b_counts[0]]
    assert 2 in b_ids[1, : b_counts[1]]


def _two_cluster_candidates(ds, split, k):
    """Candidate lists that never cross the split."""
    n = ds.n
    lists = []
    for u in range(n):
        lo, hi = (0, split) if u < split else (split, n)
        members = [v for v in range(lo, hi) if v != u]
        dists = np.array([squared_l2(ds.data[v], ds.data[u]) for v in members],
                         np.float32)
        order = np.lexsort((members, dists))[:k]
        lists.append((np.array(members, np.int32)[order], dists[order]))
    counts = np.array([len(i) for i, _ in lists], np.int32)
    off = np.zeros(n + 1, np.int64)
    np.cumsum(counts, out=off[1:])
    return (off, counts, np.concatenate([i for i, _ in lists]),
            np.concatenate([d for _, d in lists]))


def test_connect_bridges_clusters():
    rng = np.random.default_rng(11)
    a = rng.normal(0.0, 0.05, size=(30, 3))
    b = rng.normal(5.0, 0.05, size=(30, 3))
    ds = Dataset.from_array(np.vstack([a, b]).astype(np.float32))
    off, counts, ids, dists = _two_cluster_candidates(ds, 30, 8)
    st = RefineStats()
    g = refine(ds, off, counts, ids, dists, PruneParams(M=6), connect=True,
               stats=st)
    g.validate()
    assert st.connect_edges >= 1
    assert reachable_from(g, g.ep).all()


def test_no_connect_leaves_island():
    rng = np.random.default_rng(12)
    a = rng.normal(0.0, 0.05, size=(25, 3))
    b = rng.normal(5.0, 0.05, size=(25, 3))
    ds = Dataset.from_array(np.vstack([a, b]).astype(np.float32))
    off, counts, ids, dists = _two_cluster_candidates(ds, 25, 8)
    g = refine(ds, off, counts, ids, dists, PruneParams(M=6), connect=False,
               ep=0)
    assert not reachable_from(g, g.ep).all()


def test_connect_may_tag_over_cap_nodes():
    """With M=1 the bridge edge lands on an already-full node, which must be
    tagged instead of re-pruned."""
    rng = np.random.default_rng(13)
    a = rng.normal(0.0, 0.05, size=(20, 2))
    b = rng.normal(9.0, 0.05, size=(20, 2))
    ds = Dataset.from_array(np.vstack([a, b]).astype(np.float32))
    off, counts, ids, dists = _two_cluster_candidates(ds, 20, 6)
    g = refine(ds, off, counts, ids, dists, PruneParams(M=1), connect=True)
    g.validate()
    assert reachable_from(g, g.ep).all()
    if len(g.over_cap):
        assert np.all(g.counts[g.over_cap] > g.M)


class TestEntryPoint:
    def test_simplex_tie_breaks_to_zero(self):
        # eye(4): centroid coords and all squared terms are exact in
        # float32, so the four distances tie bit-for-bit and id wins
        ds = Dataset.from_array(np.eye(4, dtype=np.float32))
        assert entry_point(ds, complete_graph(4), k=1, L=4, seed=3) == 0

    def test_single_point(self):
        ds = Dataset.from_array(np.ones((1, 3), np.float32))
        assert entry_point(ds, complete_graph(1), k=1, L=2, seed=0) == 0

    def test_matches_exact_medoid_on_complete_graph(self):
        ds = make_ds(500, 5, seed=14)
        got = entry_point(ds, complete_graph(500), k=1, L=500, seed=1)
        c = ds.data.mean(axis=0, dtype=np.float64).astype(np.float32)
        want, _ = exact_knn(ds, c, 1)
        assert got == int(want[0])

    def test_deterministic(self):
        ds = make_ds(300, 4, seed=15)
        g = complete_graph(300)
        assert entry_point(ds, g, 1, 40, seed=9) == entry_point(
            ds, g, 1, 40, seed=9)


def test_params_validation():
    with pytest.raises(ValueError):
        PruneParams(M=0)
    with pytest.raises(ValueError):
        PruneParams(M=4, strategy="tau")
    with pytest.raises(ValueError):
        PruneParams(M=4, alpha=59.0, strategy="alpha")
    with pytest.raises(ValueError):
        PruneParams(M=4, alpha=180.0, strategy="alpha")
    assert PruneParams(M=4, alpha=90.0).cos_alpha == pytest.approx(0.0)
