"""Edge selection: occlusion pruning, reverse-edge tightening and the
connectivity repair pass.

refine() is the three-phase pipeline used by every builder here: prune each
node's candidate list, re-prune with reverse edges folded in, then (when
asked) stitch unreachable nodes back onto the tree rooted at the entry
point.  A repaired node may end up one edge over the cap M; such nodes are
tagged in the returned graph rather than silently re-pruned.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Optional

import numpy as np

from . import _kernels
from ._kernels import EMPTY
from .core import Dataset, centroid
from .graph import ProximityGraph, reachable_from

_STRATEGIES = ("rng", "alpha")


@dataclass(frozen=True)
class PruneParams:
    """Degree cap and pruning rule.

    strategy "rng" is the classic occlusion rule: drop v when some kept w
    is closer to v than u is.  strategy "alpha" additionally requires the
    angle at w to exceed alpha degrees before dropping; alpha = 60 makes it
    coincide with "rng" (the blocked side is then always the strict longest
    of its triangle, forcing the angle above 60).
    """

    M: int
    alpha: float = 60.0
    strategy: str = "rng"

    def __post_init__(self):
        if self.M < 1:
            raise ValueError("M must be >= 1")
        if self.strategy not in _STRATEGIES:
            raise ValueError(f"strategy must be one of {_STRATEGIES}")
        if not (60.0 <= self.alpha < 180.0):
            raise ValueError("alpha must lie in [60, 180) degrees")

    @property
    def strategy_code(self) -> int:
        return _STRATEGIES.index(self.strategy)

    @property
    def cos_alpha(self) -> float:
        return math.cos(math.radians(self.alpha))


@dataclass
class RefineStats:
    dist_evals: int = 0
    angle_evals: int = 0
    connect_edges: int = 0


def _check_sorted(ids: np.ndarray, dists: np.ndarray) -> None:
    if ids.shape != dists.shape or ids.ndim != 1:
        raise ValueError("candidate ids/dists must be matching 1-d arrays")
    if ids.size > 1:
        d = dists.astype(np.float64)
        keys_ok = np.all((d[:-1] < d[1:]) |
                         ((d[:-1] == d[1:]) & (ids[:-1] < ids[1:])))
        if not keys_ok:
            raise ValueError("candidates must be ascending by (dist, id)")


def _prune_single(ds: Dataset, u: int, ids: np.ndarray, dists: np.ndarray,
                  params: PruneParams) -> tuple[np.ndarray, np.ndarray]:
    ids = np.ascontiguousarray(ids, dtype=np.int32)
    dists = np.ascontiguousarray(dists, dtype=np.float32)
    _check_sorted(ids, dists)
    off = np.array([0, ids.size], dtype=np.int64)
    cnts = np.array([ids.size], dtype=np.int32)
    out_ids = np.full((1, params.M), EMPTY, dtype=np.int32)
    out_dists = np.full((1, params.M), np.inf, dtype=np.float32)
    out_counts = np.zeros(1, dtype=np.int32)
    de = np.zeros(1, dtype=np.int64)
    ae = np.zeros(1, dtype=np.int64)
    _kernels.prune_row_single(ds.data, np.int64(u), off, cnts, ids, dists,
                              params.strategy_code, params.cos_alpha,
                              params.M, out_ids, out_dists, out_counts, de, ae)
    m = int(out_counts[0])
    return out_ids[0, :m].copy(), out_dists[0, :m].copy()


def rng_prune(ds: Dataset, u: int, ids: np.ndarray, dists: np.ndarray,
              M: int) -> tuple[np.ndarray, np.ndarray]:
    """Occlusion-prune one candidate list (ascending (dist, id)) to <= M."""
    return _prune_single(ds, u, ids, dists, PruneParams(M=M, strategy="rng"))


def alpha_prune(ds: Dataset, u: int, ids: np.ndarray, dists: np.ndarray,
                M: int, alpha: float) -> tuple[np.ndarray, np.ndarray]:
    """Angle-gated occlusion pruning; larger alpha prunes less."""
    return _prune_single(ds, u, ids, dists,
                         PruneParams(M=M, alpha=alpha, strategy="alpha"))


def prune_all(ds: Dataset, cand_off: np.ndarray, cand_counts: np.ndarray,
              cand_ids: np.ndarray, cand_dists: np.ndarray,
              params: PruneParams, cap: Optional[int] = None
              ) -> tuple[np.ndarray, np.ndarray, np.ndarray, int, int]:
    """Batch prune of CSR candidate slices.

    Returns (ids (n, M), dists, counts, dist_evals, angle_evals)."""
    n = ds.n
    width = params.M if cap is None else cap
    out_ids = np.full((n, width), EMPTY, dtype=np.int32)
    out_dists = np.full((n, width), np.inf, dtype=np.float32)
    out_counts = np.zeros(n, dtype=np.int32)
    de = np.zeros(n, dtype=np.int64)
    ae = np.zeros(n, dtype=np.int64)
    _kernels.prune_batch(ds.data, cand_off, cand_counts, cand_ids, cand_dists,
                         params.strategy_code, params.cos_alpha, params.M,
                         out_ids, out_dists, out_counts, de, ae)
    return out_ids, out_dists, out_counts, int(de.sum()), int(ae.sum())


def add_reverse_and_prune(ds: Dataset, ids: np.ndarray, dists: np.ndarray,
                          counts: np.ndarray, params: PruneParams
                          ) -> tuple[np.ndarray, np.ndarray, np.ndarray, int, int]:
    """Phase B: fold reverse edges into every node's list and prune again."""
    n = ds.n
    flat = np.concatenate([ids[u, : counts[u]] for u in range(n)]) \
        if n else np.empty(0, dtype=np.int32)
    rev_counts = np.bincount(flat, minlength=n).astype(np.int64)
    rev_off = np.zeros(n + 1, dtype=np.int64)
    np.cumsum(rev_counts, out=rev_off[1:])
    rev_ids = np.empty(int(rev_off[-1]), dtype=np.int32)
    rev_dists = np.empty(int(rev_off[-1]), dtype=np.float32)
    _kernels.scatter_reverse(ids, dists, counts, rev_off, rev_ids, rev_dists)
    mrg_cap = counts.astype(np.int64) + rev_counts
    mrg_off = np.zeros(n + 1, dtype=np.int64)
    np.cumsum(mrg_cap, out=mrg_off[1:])
    mrg_ids = np.empty(int(mrg_off[-1]), dtype=np.int32)
    mrg_dists = np.empty(int(mrg_off[-1]), dtype=np.float32)
    mrg_counts = np.zeros(n, dtype=np.int32)
    _kernels.merge_with_reverse(ids, dists, counts, rev_off, rev_ids,
                                rev_dists, mrg_off, mrg_ids, mrg_dists,
                                mrg_counts)
    return prune_all(ds, mrg_off, mrg_counts, mrg_ids, mrg_dists, params)


def entry_point(ds: Dataset, g: ProximityGraph, k: int, L: int,
                seed: int = 0) -> int:
    """Node whose vector best matches the dataset centroid, located by a
    beam search seeded at a random node."""
    from .search import kann_search
    rng = np.random.default_rng(seed)
    rn = int(rng.integers(0, ds.n))
    ids, _ = kann_search(ds, g, centroid(ds), k, L, ep=rn)
    return int(ids[0])


def _connect(ds: Dataset, adj: np.ndarray, counts: np.ndarray, M: int,
             ep: int, connect_L: int) -> tuple[np.ndarray, np.ndarray, int]:
    """Phase C: append one edge per unreachable component head until the
    whole graph is reachable from ep.  Returns (adjacency possibly widened,
    counts, number of appended edges); appended edges may push a node one
    past M."""
    n = adj.shape[0]
    g = ProximityGraph(adj=adj, counts=counts, M=M, ep=ep)
    seen = reachable_from(g, ep)
    appended = 0
    over: list[int] = []
    while not seen.all():
        v = int(np.flatnonzero(~seen)[0])
        ids, _, _, _ = _kernels.search_one(
            ds.data, adj, counts, ds.data[v], 1, connect_L, ep, np.int32(-1))
        r = int(ids[0])
        if counts[r] == adj.shape[1]:
            widened = np.full((n, adj.shape[1] + 1), EMPTY, dtype=np.int32)
            widened[:, : adj.shape[1]] = adj
            adj = widened
        adj[r, counts[r]] = v
        counts[r] += 1
        if counts[r] > M:
            over.append(r)
        appended += 1
        # everything newly reachable through v joins the component
        stack = [v]
        seen[v] = True
        while stack:
            x = stack.pop()
            for y in adj[x, : counts[x]]:
                if not seen[y]:
                    seen[y] = True
                    stack.append(int(y))
    return adj, counts, appended


def finish_refine(ds: Dataset, a_ids: np.ndarray, a_dists: np.ndarray,
                  a_counts: np.ndarray, params: PruneParams,
                  connect: bool = True, ep: Optional[int] = None,
                  seed: int = 0, connect_L: Optional[int] = None,
                  stats: Optional[RefineStats] = None) -> ProximityGraph:
    """Phases B and C on an already-pruned adjacency (phase A done by the
    caller).  When ep is None an entry point is computed on the phase-B
    graph via a centroid search; the returned graph carries it."""
    b_ids, b_dists, b_counts, de_b, ae_b = add_reverse_and_prune(
        ds, a_ids, a_dists, a_counts, params)
    if connect_L is None:
        connect_L = max(params.M + 1, 32)
    if ep is None:
        interim = ProximityGraph(adj=b_ids, counts=b_counts, M=params.M, ep=0)
        ep = entry_point(ds, interim, k=1, L=connect_L, seed=seed)
    appended = 0
    adj, counts = b_ids, b_counts
    over_cap = np.empty(0, dtype=np.int32)
    if connect:
        adj, counts, appended = _connect(ds, adj, counts, params.M, ep,
                                         connect_L)
        over_cap = np.flatnonzero(counts > params.M).astype(np.int32)
    if stats is not None:
        stats.dist_evals += de_b
        stats.angle_evals += ae_b
        stats.connect_edges += appended
    return ProximityGraph(adj=adj, counts=counts, M=params.M, ep=int(ep),
                          over_cap=over_cap)


def refine(ds: Dataset, cand_off: np.ndarray, cand_counts: np.ndarray,
           cand_ids: np.ndarray, cand_dists: np.ndarray, params: PruneParams,
           connect: bool = True, ep: Optional[int] = None, seed: int = 0,
           connect_L: Optional[int] = None,
           stats: Optional[RefineStats] = None) -> ProximityGraph:
    """Prune, reverse-tighten, and optionally repair connectivity.

    When ep is None an entry point is computed on the phase-B graph via a
    centroid search.  The returned graph carries that entry point.
    """
    a_ids, a_dists, a_counts, de_a, ae_a = prune_all(
        ds, cand_off, cand_counts, cand_ids, cand_dists, params)
    if stats is not None:
        stats.dist_evals += de_a
        stats.angle_evals += ae_a
    return finish_refine(ds, a_ids, a_dists, a_counts, params,
                         connect=connect, ep=ep, seed=seed,
                         connect_L=connect_L, stats=stats)
