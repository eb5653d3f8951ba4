"""Brute-force ground truth and recall accounting.

Distances here are accumulated in float64 and never go through the jitted
float32 kernel; the point is an independent reference for testing the graph
code, so the two paths must not share arithmetic.
"""

from __future__ import annotations

from typing import Optional

import numpy as np

from .core import Dataset


def exact_knn(ds: Dataset, q: np.ndarray, k: int,
              exclude_id: Optional[int] = None) -> tuple[np.ndarray, np.ndarray]:
    """The k nearest ids and squared distances to q, ascending (dist, id)."""
    if k < 1:
        raise ValueError("k must be >= 1")
    diff = ds.data.astype(np.float64) - np.asarray(q, dtype=np.float64)
    d2 = np.einsum("ij,ij->i", diff, diff)
    order = np.lexsort((np.arange(ds.n), d2))
    if exclude_id is not None:
        order = order[order != exclude_id]
    top = order[:k]
    return top.astype(np.int32), d2[top]


def ground_truth_table(ds: Dataset, queries: Optional[np.ndarray] = None,
                       k: int = 10, exclude_self: bool = False,
                       chunk: int = 256) -> np.ndarray:
    """Exact kNN ids for each query row; queries=None means every node.

    exclude_self drops the query's own id (only meaningful when the queries
    are dataset rows, matched by position).
    """
    if k < 1:
        raise ValueError("k must be >= 1")
    base = ds.data.astype(np.float64)
    if queries is None:
        qs = base
        self_ids = np.arange(ds.n)
    else:
        qs = np.asarray(queries, dtype=np.float64)
        if qs.ndim != 2 or qs.shape[1] != ds.d:
            raise ValueError("queries must be (nq, d)")
        self_ids = None
        if exclude_self:
            raise ValueError("exclude_self requires queries=None")
    base_sq = np.einsum("ij,ij->i", base, base)
    out = np.empty((qs.shape[0], k), dtype=np.int32)
    for lo in range(0, qs.shape[0], chunk):
        hi = min(lo + chunk, qs.shape[0])
        block = qs[lo:hi]
        d2 = base_sq[None, :] - 2.0 * (block @ base.T)
        d2 += np.einsum("ij,ij->i", block, block)[:, None]
        np.maximum(d2, 0.0, out=d2)
        if exclude_self:
            d2[np.arange(hi - lo), self_ids[lo:hi]] = np.inf
        # stable sort keeps equal distances in id order, matching (dist, id)
        order = np.argsort(d2, axis=1, kind="stable")
        out[lo:hi] = order[:, :k]
    return out


def recall_at_k(approx_ids: np.ndarray, exact_ids: np.ndarray, k: int) -> float:
    """|approx[:k] ∩ exact[:k]| / k."""
    if k < 1:
        raise ValueError("k must be >= 1")
    a = set(int(x) for x in np.asarray(approx_ids).ravel()[:k])
    e = set(int(x) for x in np.asarray(exact_ids).ravel()[:k])
    return len(a & e) / k


def mean_recall(approx_table: np.ndarray, exact_table: np.ndarray, k: int) -> float:
    """Mean recall_at_k across rows of two id tables."""
    if approx_table.shape[0] != exact_table.shape[0]:
        raise ValueError("tables must have matching row counts")
    total = 0.0
    for i in range(approx_table.shape[0]):
        total += recall_at_k(approx_table[i], exact_table[i], k)
    return total / approx_table.shape[0]
