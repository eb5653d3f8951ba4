import math

import numpy as np
import pytest

from pgann.hnsw import (FastHnswStats, HnswBuildStats, assign_layers,
                        build_fasthnsw, build_hnsw_original)
from pgann.oracle import ground_truth_table, mean_recall, recall_at_k
from pgann.search import layered_search

from conftest import make_ds


class TestAssignLayers:
    def test_level_one_share(self):
        a = assign_layers(10 ** 5, 1.0 / math.log(16), seed=0)
        share = np.mean(a.levels >= 1)
        assert abs(share - 1.0 / 16) < 0.005

    def test_tail_probabilities_within_three_sigma(self):
        n = 10 ** 5
        mf = 1.0 / math.log(12)
        a = assign_layers(n, mf, seed=1)
        for j in (1, 2, 3):
            p = math.exp(-j / mf)
            obs = np.mean(a.levels >= j)
            assert abs(obs - p) <= 3 * math.sqrt(p * (1 - p) / n), f"j={j}"

    def test_members_nested(self):
        a = assign_layers(5000, 0.5, seed=2)
        for i in range(a.m_l):
            upper = set(a.members(i + 1).tolist())
            assert upper <= set(a.members(i).tolist())

    def test_deterministic_and_edge_cases(self):
        x = assign_layers(1000, 0.4, seed=3)
        y = assign_layers(1000, 0.4, seed=3)
        assert np.array_equal(x.levels, y.levels)
        one = assign_layers(1, 0.4, seed=4)
        assert one.m_l == int(one.levels[0])
        with pytest.raises(ValueError):
            assign_layers(10, 0.0)
        with pytest.raises(ValueError):
            assign_layers(0, 0.5)


class TestOriginalHnsw:
    def test_two_nodes_mutual(self):
        ds = make_ds(2, 4, seed=60)
        lg = build_hnsw_original(ds, ef=4, M=4, seed=0)
        lg.validate()
        for layer in lg.layers:
            g = layer.graph
            if len(layer.members) == 2:
                assert g.adj[0, 0] == 1 and g.adj[1, 0] == 0
            else:
                assert g.counts.max(initial=0) == 0

    def test_deterministic(self):
        ds = make_ds(800, 8, seed=61)
        a = build_hnsw_original(ds, ef=24, M=12, seed=7)
        b = build_hnsw_original(ds, ef=24, M=12, seed=7)
        assert a.ep == b.ep and a.max_level == b.max_level
        for la, lb in zip(a.layers, b.layers):
            assert np.array_equal(la.members, lb.members)
            assert np.array_equal(la.graph.adj, lb.graph.adj)

    def test_validates_and_searches(self):
        """Regression guard for the greedy-descent loop: an early version
        advanced the cursor while still iterating its neighbor row, which
        corrupted rows at this scale."""
        ds = make_ds(3000, 8, seed=62)
        lg = build_hnsw_original(ds, ef=32, M=16, seed=9)
        lg.validate()
        rng = np.random.default_rng(63)
        queries = rng.random((50, 8)).astype(np.float32)
        truth = ground_truth_table(ds, queries=queries, k=10)
        hits = 0.0
        for i in range(50):
            ids, dists = layered_search(ds, lg, queries[i], 10, 64)
            assert len(np.unique(ids)) == len(ids)
            assert np.all(np.diff(dists) >= 0)
            hits += recall_at_k(ids, truth[i], 10)
        assert hits / 50 > 0.8

    def test_degree_cap_every_layer(self):
        ds = make_ds(1500, 6, seed=64)
        lg = build_hnsw_original(ds, ef=20, M=10, seed=11)
        for layer in lg.layers:
            assert layer.graph.counts.max() <= 10

    def test_insertion_candidate_availability_half(self, ds_small,
                                                   ds_small_truth):
        """A node inserted at position i can only ever see i earlier nodes,
        so averaged over a random order the share of its true neighbors
        already present is one half."""
        n = ds_small.n
        avail = 0.0
        for u in range(n):
            avail += np.mean(ds_small_truth[u, :10] < u)
        avail /= n
        assert abs(avail - 0.5) < 0.03

    def test_insertion_recall_capped(self, ds_small, ds_small_truth):
        stats = HnswBuildStats()
        build_hnsw_original(ds_small, ef=48, M=24, seed=13,
                            record_candidates=True, stats=stats)
        assert stats.dist_evals > 0
        total = 0.0
        for u in range(ds_small.n):
            m = int(stats.w0_counts[u])
            total += recall_at_k(stats.w0_ids[u, :m], ds_small_truth[u, :10],
                                 10)
        assert total / ds_small.n <= 0.55

    def test_argument_errors(self):
        ds = make_ds(10, 2, seed=65)
        with pytest.raises(ValueError):
            build_hnsw_original(ds, ef=0, M=4)
        with pytest.raises(ValueError):
            build_hnsw_original(ds, ef=4, M=0)
        with pytest.raises(ValueError, match="m_factor"):
            build_hnsw_original(ds, ef=4, M=1)


class TestFastHnsw:
    def test_small_layers_complete(self):
        ds = make_ds(50, 4, seed=66)
        lg = build_fasthnsw(ds, k0=8, ef=16, M=64, seed=1)
        lg.validate()
        for layer in lg.layers:
            n_i = len(layer.members)
            g = layer.graph
            assert np.all(g.counts == n_i - 1)
            for u in range(n_i):
                assert set(g.adj[u, : n_i - 1].tolist()) == (
                    set(range(n_i)) - {u})

    def test_deterministic(self):
        ds = make_ds(900, 8, seed=67)
        a = build_fasthnsw(ds, k0=12, ef=20, M=10, seed=5)
        b = build_fasthnsw(ds, k0=12, ef=20, M=10, seed=5)
        assert a.ep == b.ep
        for la, lb in zip(a.layers, b.layers):
            assert np.array_equal(la.members, lb.members)
            assert np.array_equal(la.graph.adj, lb.graph.adj)

    def test_nesting_and_caps(self):
        ds = make_ds(1200, 8, seed=68)
        lg = build_fasthnsw(ds, k0=16, ef=24, M=12, seed=6)
        lg.validate()
        for i in range(lg.max_level):
            assert set(lg.layers[i + 1].members.tolist()) <= set(
                lg.layers[i].members.tolist())
        for layer in lg.layers:
            g = layer.graph
            ok = np.delete(g.counts, g.over_cap) if len(g.over_cap) else \
                g.counts
            assert ok.max() <= max(g.M, len(layer.members) - 1)

    def test_layer_zero_candidate_recall_beats_half(self, ds_small,
                                                    ds_small_truth):
        stats = FastHnswStats()
        build_fasthnsw(ds_small, k0=24, ef=48, M=24, seed=7, stats=stats)
        st = stats.layer_stats[0].final_state
        total = 0.0
        for u in range(ds_small.n):
            got, _ = st.c_list(u)
            total += recall_at_k(got[:10], ds_small_truth[u, :10], 10)
        assert total / ds_small.n > 0.7

    def test_connect_switch_smoke(self):
        ds = make_ds(700, 6, seed=69)
        on = build_fasthnsw(ds, k0=10, ef=16, M=8, seed=8,
                            connect_layers=True)
        off = build_fasthnsw(ds, k0=10, ef=16, M=8, seed=8,
                             connect_layers=False)
        on.validate()
        off.validate()
        q = np.full(6, 0.5, np.float32)
        a, _ = layered_search(ds, on, q, 5, 20)
        assert len(a) == 5

    def test_search_quality(self, ds_small):
        lg = build_fasthnsw(ds_small, k0=24, ef=48, M=24, seed=9)
        rng = np.random.default_rng(70)
        queries = rng.random((100, ds_small.d)).astype(np.float32)
        truth = ground_truth_table(ds_small, queries=queries, k=10)
        ids = np.stack([layered_search(ds_small, lg, q, 10, 64)[0]
                        for q in queries])
        assert mean_recall(ids, truth, 10) > 0.9
