"""Beam search over proximity graphs and greedy descent over layered ones."""

from __future__ import annotations

from dataclasses import dataclass
from typing import Optional

import numpy as np

from . import _kernels
from .core import Dataset
from .graph import LayeredGraph, ProximityGraph


@dataclass
class SearchResult:
    ids: np.ndarray
    dists: np.ndarray
    dist_count: int
    n_expanded: int
    expanded_ids: Optional[np.ndarray] = None
    max_rank_on_path: Optional[int] = None


def _check_args(ds: Dataset, g: ProximityGraph, q: np.ndarray, k: int, L: int,
                ep: Optional[int]) -> tuple[np.ndarray, int]:
    if g.n != ds.n:
        raise ValueError("graph and dataset sizes differ")
    if k < 1:
        raise ValueError("k must be >= 1")
    if k > L:
        raise ValueError("k must not exceed the pool width L")
    q = np.ascontiguousarray(q, dtype=np.float32)
    if q.shape != (ds.d,):
        raise ValueError(f"query must have shape ({ds.d},)")
    if ep is None:
        ep = g.ep
    if not (0 <= ep < g.n):
        raise ValueError("entry point out of range")
    return q, int(ep)


def kann_search(ds: Dataset, g: ProximityGraph, q: np.ndarray, k: int, L: int,
                ep: Optional[int] = None) -> tuple[np.ndarray, np.ndarray]:
    """Beam search: expand the first unexpanded pool entry until the first L
    entries are all expanded; returns up to k results ascending (dist, id)."""
    q, ep = _check_args(ds, g, q, k, L, ep)
    ids, dists, _, _ = _kernels.search_one(
        ds.data, g.adj, g.counts, q, k, L, ep, np.int32(-1))
    return ids, dists


def kann_search_instrumented(ds: Dataset, g: ProximityGraph, q: np.ndarray,
                             k: int, L: int, ep: Optional[int] = None,
                             with_ranks: bool = False) -> SearchResult:
    """As kann_search but reporting distance-kernel calls and the expansion
    order.  with_ranks additionally computes, via the brute-force oracle,
    the worst exact rank of any expanded node (1 = nearest); that part is
    O(n) per query and meant for analysis, not production search."""
    q, ep = _check_args(ds, g, q, k, L, ep)
    pool_ids = np.empty(L, dtype=np.int32)
    pool_dists = np.empty(L, dtype=np.float32)
    pool_exp = np.zeros(L, dtype=np.bool_)
    size, dist_count, exp_ids, _, _ = _kernels._search_core_traced(
        ds.data, g.adj, g.counts, q, L, ep, pool_ids, pool_dists, pool_exp)
    ids, dists = _kernels.extract_results(pool_ids, pool_dists, size, k,
                                          np.int32(-1))
    max_rank = None
    if with_ranks and exp_ids.size:
        diff = ds.data.astype(np.float64) - q.astype(np.float64)
        d2 = np.einsum("ij,ij->i", diff, diff)
        order = np.lexsort((np.arange(ds.n), d2))
        rank_of = np.empty(ds.n, dtype=np.int64)
        rank_of[order] = np.arange(1, ds.n + 1)
        max_rank = int(rank_of[exp_ids].max())
    return SearchResult(ids=ids, dists=dists, dist_count=int(dist_count),
                        n_expanded=int(exp_ids.size), expanded_ids=exp_ids,
                        max_rank_on_path=max_rank)


def search_batch(ds: Dataset, g: ProximityGraph, queries: np.ndarray, k: int,
                 L: int, ep: Optional[int] = None
                 ) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    """Sequential multi-query search; returns (ids, dists, dist_counts).

    Runs on one thread by design so timings of this call are comparable
    across machines and runs."""
    if queries.ndim != 2 or queries.shape[1] != ds.d:
        raise ValueError("queries must be (nq, d)")
    q0, ep = _check_args(ds, g, queries[0], k, L, ep)
    qs = np.ascontiguousarray(queries, dtype=np.float32)
    ids, dists, _, dist_counts = _kernels.search_many(
        ds.data, g.adj, g.counts, qs, k, L, ep)
    return ids, dists, dist_counts


def layered_search(ds: Dataset, lg: LayeredGraph, q: np.ndarray, k: int,
                   L: int) -> tuple[np.ndarray, np.ndarray]:
    """Greedy descent through the upper layers (beam width 1), then a full
    beam search on the bottom layer."""
    ids, dists, _ = layered_search_counted(ds, lg, q, k, L)
    return ids, dists


def layered_search_counted(ds: Dataset, lg: LayeredGraph, q: np.ndarray,
                           k: int, L: int
                           ) -> tuple[np.ndarray, np.ndarray, int]:
    """As layered_search, also returning the distance-kernel call count."""
    q = np.ascontiguousarray(q, dtype=np.float32)
    if q.shape != (ds.d,):
        raise ValueError(f"query must have shape ({ds.d},)")
    if k < 1 or k > L:
        raise ValueError("need 1 <= k <= L")
    w = lg.ep
    n_dist = 0
    for li in range(lg.max_level, 0, -1):
        layer = lg.layers[li]
        data = layer.data_view(ds)
        local = layer.local_of(w)
        ids, _, _, nd = _kernels.search_one(
            data, layer.graph.adj, layer.graph.counts, q, 1, 1,
            local, np.int32(-1))
        n_dist += int(nd)
        w = int(layer.members[ids[0]])
    bottom = lg.layers[0]
    ids, dists, _, nd = _kernels.search_one(
        ds.data, bottom.graph.adj, bottom.graph.counts, q, k, L,
        w, np.int32(-1))
    return ids, dists, n_dist + int(nd)
