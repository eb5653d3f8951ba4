"""Approximate kNN graph construction by NN-Descent.

Rounds are bulk-synchronous: candidate generation reads the previous
round's lists (including flags) as a frozen snapshot and each node updates
only its own row, so results do not depend on the thread count.  The
fresh/old flags implement the usual incremental join: a pair is evaluated
only when at least one of its two hops is an edge added since that edge
last served in a join.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import _kernels
from .core import Dataset


@dataclass
class KnngState:
    """k0-NN lists: each row ascending (dist, id), always exactly k0 wide."""

    ids: np.ndarray        # (n, k0) int32
    dists: np.ndarray      # (n, k0) float32
    flags: np.ndarray      # (n, k0) bool, True = new since last join
    iterations: int = 0
    last_updates: int = -1

    @property
    def n(self) -> int:
        return self.ids.shape[0]

    @property
    def k0(self) -> int:
        return self.ids.shape[1]


def knng_init_random(ds: Dataset, k0: int, seed: int = 0) -> KnngState:
    """k0 distinct random non-self neighbors per node, sorted by (dist, id)."""
    n = ds.n
    if not (1 <= k0 < n):
        raise ValueError("need 1 <= k0 < n")
    ids = np.empty((n, k0), dtype=np.int32)
    dists = np.empty((n, k0), dtype=np.float32)
    if k0 == n - 1:
        # every other node, no sampling involved
        base = np.arange(n, dtype=np.int32)
        for u in range(n):
            ids[u] = np.concatenate([base[:u], base[u + 1:]])
        short = np.zeros(n, dtype=np.int32)
        for u in range(n):
            for j in range(k0):
                dists[u, j] = _kernels.squared_l2(ds.data[ids[u, j]],
                                                  ds.data[u])
            _kernels.sort_pairs(ids[u], dists[u], k0)
    else:
        rng = np.random.default_rng(seed)
        pad = max(16, k0 // 2)
        draws = rng.integers(0, n - 1, size=(n, k0 + pad)).astype(np.int64)
        short = np.zeros(n, dtype=np.int32)
        _kernels.knng_init_rows(ds.data, draws, ids, dists, short)
        for u in np.flatnonzero(short):
            # rare fallback: an exact sample without replacement, seeded per
            # row so the result does not depend on which rows fell through
            row_rng = np.random.default_rng([seed, 977, int(u)])
            pick = row_rng.permutation(n - 1)[:k0].astype(np.int64)
            pick[pick >= u] += 1
            ids[u] = pick.astype(np.int32)
            for j in range(k0):
                dists[u, j] = _kernels.squared_l2(ds.data[ids[u, j]],
                                                  ds.data[u])
            _kernels.sort_pairs(ids[u], dists[u], k0)
    flags = np.ones((n, k0), dtype=np.bool_)
    return KnngState(ids=ids, dists=dists, flags=flags, iterations=0)


def knng_descent_iterate(ds: Dataset, state: KnngState,
                         rho: float = 1.0) -> KnngState:
    """One NN-Descent round; returns a new state (never mutates the input)."""
    if not (0.0 < rho <= 1.0):
        raise ValueError("rho must be in (0, 1]")
    n, k0 = state.n, state.k0
    cap = max(1, int(np.ceil(rho * k0)))
    flat = state.ids.ravel()
    rev_full = np.bincount(flat, minlength=n).astype(np.int64)
    rev_off = np.zeros(n + 1, dtype=np.int64)
    np.cumsum(rev_full, out=rev_off[1:])
    tmp_ids = np.empty(n * k0, dtype=np.int32)
    tmp_dists = np.empty(n * k0, dtype=np.float32)
    tmp_flags = np.empty(n * k0, dtype=np.bool_)
    _kernels.scatter_reverse_flags(state.ids, state.dists, state.flags,
                                   rev_off, tmp_ids, tmp_dists, tmp_flags)
    rev_ids = np.full((n, k0), -1, dtype=np.int32)
    rev_dists = np.full((n, k0), np.inf, dtype=np.float32)
    rev_flags = np.zeros((n, k0), dtype=np.bool_)
    rev_counts = np.zeros(n, dtype=np.int32)
    _kernels.cap_reverse(rev_off, tmp_ids, tmp_dists, tmp_flags, k0,
                         rev_ids, rev_dists, rev_flags, rev_counts)
    out_ids = state.ids.copy()
    out_dists = state.dists.copy()
    out_flags = state.flags.copy()
    upd = np.zeros(n, dtype=np.int64)
    evals = np.zeros(n, dtype=np.int64)
    _kernels.knng_join_round(ds.data, state.ids, state.dists, state.flags,
                             rev_ids, rev_dists, rev_flags, rev_counts,
                             cap, cap,
                             out_ids, out_dists, out_flags, upd, evals)
    return KnngState(ids=out_ids, dists=out_dists, flags=out_flags,
                     iterations=state.iterations + 1,
                     last_updates=int(upd.sum()))


def build_knng(ds: Dataset, k0: int, iters: int, seed: int = 0,
               rho: float = 1.0, min_update_frac: float = 0.001) -> KnngState:
    """Random init plus up to `iters` rounds, stopping early once a round's
    accepted updates fall below min_update_frac * n * k0."""
    state = knng_init_random(ds, k0, seed)
    threshold = min_update_frac * ds.n * k0
    for _ in range(iters):
        state = knng_descent_iterate(ds, state, rho=rho)
        if state.last_updates < threshold:
            break
    return state
