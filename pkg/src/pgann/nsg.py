"""NSG builders: the classic search-then-refine construction and the
self-iterative refine-then-search one, plus sampled quality estimation.

The iterative builder keeps per-node records between iterations so that
repeated distance evaluations can be served from memory.  Both record
consumers are conservative: a cached verdict or distance is used only when
it provably equals what the kernel would recompute, so cached and uncached
runs emit bit-identical lists and graphs.
"""

from __future__ import annotations

import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from typing import Optional

import numpy as np

from . import _kernels
from ._kernels import EMPTY
from .core import Dataset
from .graph import ProximityGraph
from .knng import KnngState, build_knng
from .oracle import exact_knn
from .prune import PruneParams, RefineStats, entry_point, finish_refine, refine

__all__ = [
    "CnaState", "CnaStats", "QualityEstimate", "FastNsgStats",
    "cna_init", "opt_kcna", "opt_kcna_cached",
    "sample_size", "estimate_quality",
    "build_nsg_original", "build_fastnsg",
]


@dataclass
class CnaState:
    """Per-node candidate lists plus the records the next iteration's
    caches feed on.

    ids/dists rows are (dist, id) ascending with counts[u] live entries;
    fresh marks entries absent from the previous iteration's list.  The
    remaining fields are None until an iteration has produced them.
    """
    ids: np.ndarray
    dists: np.ndarray
    counts: np.ndarray
    fresh: np.ndarray
    iteration: int = 0
    graph: Optional[ProximityGraph] = None
    # search records: per-node expansions in search order (x_ids) with the
    # start of each expansion's distance block in r_dists (x_bo); block
    # slot j belongs to slot j of the expanded node's adjacency row
    x_off: Optional[np.ndarray] = None
    x_ids: Optional[np.ndarray] = None
    x_bo: Optional[np.ndarray] = None
    r_dists: Optional[np.ndarray] = None
    # first-phase prune records: kept ids (id-sorted) and dominator pairs
    # (sorted by the pruned id) per node
    pk_off: Optional[np.ndarray] = None
    pk_ids: Optional[np.ndarray] = None
    dom_off: Optional[np.ndarray] = None
    dom_b: Optional[np.ndarray] = None
    dom_a: Optional[np.ndarray] = None

    @property
    def n(self) -> int:
        return self.ids.shape[0]

    def c_list(self, u: int) -> tuple[np.ndarray, np.ndarray]:
        """Node u's current candidate ids and squared distances."""
        m = int(self.counts[u])
        return self.ids[u, :m], self.dists[u, :m]


@dataclass
class CnaStats:
    """Kernel-call accounting for one opt_kcna pass, phases kept apart so
    the cache savings are attributable."""
    search_dists: int = 0
    memo_hits: int = 0
    prune_a_dists: int = 0
    prune_a_angles: int = 0
    prune_b_dists: int = 0
    prune_b_angles: int = 0
    connect_edges: int = 0

    @property
    def dist_total(self) -> int:
        return self.search_dists + self.prune_a_dists + self.prune_b_dists


def cna_init(knng: KnngState) -> CnaState:
    """Initial candidate lists straight from the KNNG rows, all fresh."""
    n, k0 = knng.ids.shape
    return CnaState(
        ids=knng.ids.copy(),
        dists=knng.dists.copy(),
        counts=np.full(n, k0, dtype=np.int32),
        fresh=np.ones((n, k0), dtype=np.bool_),
        iteration=0,
    )


def _sorted_csr(ids2d: np.ndarray, counts: np.ndarray
                ) -> tuple[np.ndarray, np.ndarray]:
    """Id-sorted CSR over the live prefix of each row."""
    n, w = ids2d.shape
    mask = np.arange(w)[None, :] < counts[:, None]
    vals = np.where(mask, ids2d, np.iinfo(np.int32).max)
    flat = np.sort(vals, axis=1)[mask].astype(np.int32, copy=False)
    off = np.zeros(n + 1, dtype=np.int64)
    np.cumsum(counts.astype(np.int64), out=off[1:])
    return off, flat


def _sorted_csr_pos(ids2d: np.ndarray, counts: np.ndarray
                    ) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    """As _sorted_csr but also returns each id's original row position."""
    n, w = ids2d.shape
    mask = np.arange(w)[None, :] < counts[:, None]
    vals = np.where(mask, ids2d, np.iinfo(np.int32).max)
    order = np.argsort(vals, axis=1, kind="stable")
    svals = np.take_along_axis(vals, order, axis=1)
    flat = svals[mask].astype(np.int32, copy=False)
    pos = order[mask].astype(np.int32, copy=False)
    off = np.zeros(n + 1, dtype=np.int64)
    np.cumsum(counts.astype(np.int64), out=off[1:])
    return off, flat, pos


def _ragged_flat(rows: np.ndarray, counts: np.ndarray
                 ) -> tuple[np.ndarray, np.ndarray]:
    """CSR over row prefixes, preserving each row's stored order."""
    n, w = rows.shape
    mask = np.arange(w)[None, :] < counts[:, None]
    off = np.zeros(n + 1, dtype=np.int64)
    np.cumsum(counts.astype(np.int64), out=off[1:])
    return off, np.ascontiguousarray(rows[mask])


_EMPTY_I32 = np.empty(0, dtype=np.int32)
_EMPTY_I64 = np.empty(0, dtype=np.int64)
_EMPTY_F32 = np.empty(0, dtype=np.float32)


def _opt_kcna(state: CnaState, ds: Dataset, k: int, L: int, M: int,
              alpha: float, seed: int, use_cache: bool,
              stats: Optional[CnaStats]) -> CnaState:
    n = ds.n
    if state.n != n:
        raise ValueError("state and dataset disagree on n")
    if k > L:
        raise ValueError("k must be <= L")
    params = PruneParams(M=M, alpha=alpha, strategy="alpha")
    width = state.ids.shape[1]
    cand_off = np.arange(n + 1, dtype=np.int64) * width
    cand_ids = np.ascontiguousarray(state.ids.reshape(-1))
    cand_dists = np.ascontiguousarray(state.dists.reshape(-1))
    cand_counts = state.counts

    have_prune = bool(use_cache and state.pk_off is not None)
    if have_prune:
        cand_old = np.ascontiguousarray(~state.fresh.reshape(-1))
        pk_off, pk_ids = state.pk_off, state.pk_ids
        dom_off, dom_b, dom_a = state.dom_off, state.dom_b, state.dom_a
    else:
        cand_old = np.zeros(n * width, dtype=np.bool_)
        pk_off = np.zeros(n + 1, dtype=np.int64)
        pk_ids = _EMPTY_I32
        dom_off = np.zeros(n + 1, dtype=np.int64)
        dom_b = _EMPTY_I32
        dom_a = _EMPTY_I32

    a_ids = np.full((n, M), EMPTY, dtype=np.int32)
    a_dists = np.full((n, M), np.inf, dtype=np.float32)
    a_counts = np.zeros(n, dtype=np.int32)
    ndom_b = np.full((n, width), EMPTY, dtype=np.int32)
    ndom_a = np.full((n, width), EMPTY, dtype=np.int32)
    ndom_counts = np.zeros(n, dtype=np.int32)
    de = np.zeros(n, dtype=np.int64)
    ae = np.zeros(n, dtype=np.int64)
    _kernels.prune_batch_cached(
        ds.data, cand_off, cand_counts, cand_ids, cand_dists, cand_old,
        params.strategy_code, params.cos_alpha, M,
        pk_off, pk_ids, dom_off, dom_b, dom_a, have_prune,
        a_ids, a_dists, a_counts, ndom_b, ndom_a, ndom_counts, de, ae)
    prune_a_dists = int(de.sum())
    prune_a_angles = int(ae.sum())

    tail = RefineStats()
    g = finish_refine(ds, a_ids, a_dists, a_counts, params, connect=True,
                      ep=None, seed=seed, connect_L=max(L, M + 1), stats=tail)

    have_search = bool(use_cache and state.x_off is not None
                       and state.graph is not None)
    edge_pos = np.full(g.adj.shape, -1, dtype=np.int32)
    if have_search:
        pg_off, pg_ids, pg_pos = _sorted_csr_pos(state.graph.adj,
                                                 state.graph.counts)
        _kernels.mark_old_edge_pos(g.adj, g.counts, pg_off, pg_ids, pg_pos,
                                   edge_pos)
        xp_off, xp_ids, xp_bo = state.x_off, state.x_ids, state.x_bo
        rp_dists = state.r_dists
    else:
        xp_off = np.zeros(n + 1, dtype=np.int64)
        xp_ids = _EMPTY_I32
        xp_bo = _EMPTY_I64
        rp_dists = _EMPTY_F32

    out_ids = np.full((n, k), EMPTY, dtype=np.int32)
    out_dists = np.full((n, k), np.inf, dtype=np.float32)
    out_m = np.zeros(n, dtype=np.int32)
    dist_counts = np.zeros(n, dtype=np.int64)
    memo_counts = np.zeros(n, dtype=np.int64)
    x_off, x_ids, x_bo, r_dists = _kernels.batch_self_search_cached(
        ds.data, g.adj, g.counts, edge_pos, k, L,
        xp_off, xp_ids, xp_bo, rp_dists, have_search,
        out_ids, out_dists, out_m, dist_counts, memo_counts)

    prev_off, prev_ids = _sorted_csr(state.ids, state.counts)
    fresh = np.zeros((n, k), dtype=np.bool_)
    _kernels.mark_fresh(out_ids, out_m, prev_off, prev_ids, fresh)

    if stats is not None:
        stats.search_dists += int(dist_counts.sum())
        stats.memo_hits += int(memo_counts.sum())
        stats.prune_a_dists += prune_a_dists
        stats.prune_a_angles += prune_a_angles
        stats.prune_b_dists += tail.dist_evals
        stats.prune_b_angles += tail.angle_evals
        stats.connect_edges += tail.connect_edges

    npk_off, npk_ids = _sorted_csr(a_ids, a_counts)
    ndm_off, ndm_b = _ragged_flat(ndom_b, ndom_counts)
    _, ndm_a = _ragged_flat(ndom_a, ndom_counts)
    return CnaState(
        ids=out_ids, dists=out_dists, counts=out_m, fresh=fresh,
        iteration=state.iteration + 1, graph=g,
        x_off=x_off, x_ids=x_ids, x_bo=x_bo, r_dists=r_dists,
        pk_off=npk_off, pk_ids=npk_ids,
        dom_off=ndm_off, dom_b=ndm_b, dom_a=ndm_a,
    )


def opt_kcna(state: CnaState, ds: Dataset, k: int, L: int, M: int,
             alpha: float = 66.0, seed: int = 0,
             stats: Optional[CnaStats] = None) -> CnaState:
    """One refine-then-search pass: build a pruned graph from the current
    candidate lists, then replace each list with a beam search over that
    graph started at the node itself."""
    return _opt_kcna(state, ds, k, L, M, alpha, seed, False, stats)


def opt_kcna_cached(state: CnaState, ds: Dataset, k: int, L: int, M: int,
                    alpha: float = 66.0, seed: int = 0,
                    stats: Optional[CnaStats] = None) -> CnaState:
    """opt_kcna with both record caches enabled.

    Output state is bit-identical to opt_kcna's; only the kernel-call
    counts drop (from the second iteration onward, once records exist).
    """
    return _opt_kcna(state, ds, k, L, M, alpha, seed, True, stats)


# ---------------------------------------------------------------------------
# Sampled quality estimation
# ---------------------------------------------------------------------------

def sample_size(n: int, epsilon: float, l: float) -> int:
    """Nodes to sample so the recall estimate errs by less than epsilon/2
    with probability at least 1 - n**-l (natural log)."""
    if not 0.0 < epsilon <= 1.0:
        raise ValueError("epsilon must be in (0, 1]")
    if l < 1:
        raise ValueError("l must be >= 1")
    if n < 2:
        raise ValueError("n must be >= 2")
    return math.ceil((8.0 + 2.0 * epsilon) * l * math.log(n) / epsilon ** 2)


@dataclass(frozen=True)
class QualityEstimate:
    r_hat: float
    n_s: int
    epsilon: float
    l: float
    sample_ids: np.ndarray
    guaranteed: bool


def estimate_quality(state: CnaState, ds: Dataset, epsilon: float, l: float,
                     k: int, seed: int = 0,
                     truth: Optional[np.ndarray] = None) -> QualityEstimate:
    """Mean recall of the candidate lists over a uniform node sample.

    truth, when given, is a precomputed (n, >=k) exact-neighbor id table
    (self excluded); otherwise sampled nodes are resolved by brute force.
    """
    n = ds.n
    want = sample_size(n, epsilon, l)
    n_s = min(want, n)
    rng = np.random.default_rng(seed)
    ids = rng.choice(n, size=n_s, replace=False).astype(np.int64)
    total = 0.0
    for u in ids:
        if truth is not None:
            exact = truth[u, :k]
        else:
            exact, _ = exact_knn(ds, ds.data[u], k, exclude_id=int(u))
        got, _ = state.c_list(int(u))
        total += len(set(got[:k].tolist()) & set(exact.tolist())) / k
    return QualityEstimate(
        r_hat=total / n_s, n_s=n_s, epsilon=epsilon, l=l,
        sample_ids=ids.astype(np.int32), guaranteed=n_s >= want or n_s == n)


# ---------------------------------------------------------------------------
# Builders
# ---------------------------------------------------------------------------

def build_nsg_original(ds: Dataset, k0: int, k: int, L: int, M: int,
                       seed: int = 0, knng_iters: int = 10,
                       stats: Optional[RefineStats] = None) -> ProximityGraph:
    """Search-then-refine construction: per-node candidate search on the
    KNNG from a centroid entry point, then one refine with the plain
    occlusion rule."""
    if k > L:
        raise ValueError("k must be <= L")
    knng = build_knng(ds, k0, iters=knng_iters, seed=seed)
    n = ds.n
    g0 = ProximityGraph(adj=knng.ids, counts=np.full(n, k0, dtype=np.int32),
                        M=k0, ep=0)
    ep = entry_point(ds, g0, k=1, L=max(L, k0 + 1), seed=seed)
    c_ids = np.full((n, k), EMPTY, dtype=np.int32)
    c_dists = np.full((n, k), np.inf, dtype=np.float32)
    c_counts = np.zeros(n, dtype=np.int32)
    dist_counts = np.zeros(n, dtype=np.int64)
    _kernels.batch_self_search(ds.data, g0.adj, g0.counts, k, L,
                               np.full(n, ep, dtype=np.int64),
                               c_ids, c_dists, c_counts, dist_counts)
    off = np.arange(n + 1, dtype=np.int64) * k
    return refine(ds, off, c_counts, np.ascontiguousarray(c_ids.reshape(-1)),
                  np.ascontiguousarray(c_dists.reshape(-1)),
                  PruneParams(M=M, alpha=60.0, strategy="rng"),
                  connect=True, ep=ep, seed=seed,
                  connect_L=max(L, M + 1), stats=stats)


@dataclass
class FastNsgStats:
    """Accounting across the iterative build."""
    iterations: int = 0
    per_iteration: list = field(default_factory=list)
    estimates: list = field(default_factory=list)
    final_refine: RefineStats = field(default_factory=RefineStats)
    final_state: Optional[CnaState] = None


def build_fastnsg(ds: Dataset, k0: int, k: int, L: int, M: int,
                  alpha: float = 66.0, max_iters: int = 2,
                  target_recall: Optional[float] = None,
                  epsilon: float = 0.6, l: float = 1.0,
                  seed: int = 0, use_cache: bool = True,
                  async_estimate: bool = False, knng_iters: int = 10,
                  connect: bool = True,
                  truth: Optional[np.ndarray] = None,
                  stats: Optional[FastNsgStats] = None) -> ProximityGraph:
    """Self-iterative construction: candidate lists start as KNNG rows and
    are re-derived by refine-then-search passes until the sampled recall
    reaches target_recall or max_iters passes ran; a last refine with the
    plain occlusion rule emits the index.

    With async_estimate the sampling runs in a worker thread and the stop
    decision uses the most recent finished estimate, so the iteration at
    which a target fires can vary run to run.  Leave it off when exact
    reproducibility across machines matters.
    """
    if max_iters < 1:
        raise ValueError("max_iters must be >= 1")
    knng = build_knng(ds, k0, iters=knng_iters, seed=seed)
    state = cna_init(knng)
    step = opt_kcna_cached if use_cache else opt_kcna
    pool = ThreadPoolExecutor(max_workers=1) if async_estimate else None
    pending = []
    try:
        for i in range(max_iters):
            it_stats = CnaStats()
            state = step(state, ds, k, L, M, alpha, seed=seed + i,
                         stats=it_stats)
            if stats is not None:
                stats.iterations += 1
                stats.per_iteration.append(it_stats)
            if target_recall is None:
                continue
            stop = False
            if pool is None:
                est = estimate_quality(state, ds, epsilon, l, k,
                                       seed=seed + i, truth=truth)
                if stats is not None:
                    stats.estimates.append(est)
                stop = est.r_hat >= target_recall
            else:
                pending.append(pool.submit(estimate_quality, state, ds,
                                           epsilon, l, k, seed + i, truth))
                while pending and pending[0].done():
                    est = pending.pop(0).result()
                    if stats is not None:
                        stats.estimates.append(est)
                    stop = stop or est.r_hat >= target_recall
            if stop:
                break
    finally:
        if pool is not None:
            for f in pending:
                est = f.result()
                if stats is not None:
                    stats.estimates.append(est)
            pool.shutdown()
    if stats is not None:
        stats.final_state = state
    width = state.ids.shape[1]
    off = np.arange(ds.n + 1, dtype=np.int64) * width
    return refine(ds, off, state.counts,
                  np.ascontiguousarray(state.ids.reshape(-1)),
                  np.ascontiguousarray(state.dists.reshape(-1)),
                  PruneParams(M=M, alpha=60.0, strategy="rng"),
                  connect=connect, ep=None, seed=seed + max_iters,
                  connect_L=max(L, M + 1),
                  stats=stats.final_refine if stats is not None else None)
