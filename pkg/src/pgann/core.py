"""Core types: datasets, neighbor entries and the bounded candidate pool.

The pool here is the reference implementation of the search frontier; the
jitted search kernel keeps an array mirror of the same ordering rules and is
tested against this class.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Iterable, Optional

import numpy as np

from . import _kernels


@dataclass(frozen=True)
class Dataset:
    """A dense point set, float32, row-major, shape (n, d)."""

    data: np.ndarray

    @classmethod
    def from_array(cls, arr: np.ndarray) -> "Dataset":
        data = np.ascontiguousarray(arr, dtype=np.float32)
        if data.ndim != 2:
            raise ValueError("dataset must be 2-dimensional")
        if data.shape[0] < 1 or data.shape[1] < 1:
            raise ValueError("dataset must be non-empty")
        if not np.all(np.isfinite(data)):
            raise ValueError("dataset contains non-finite values")
        return cls(data)

    @property
    def n(self) -> int:
        return self.data.shape[0]

    @property
    def d(self) -> int:
        return self.data.shape[1]

    def __post_init__(self):
        data = self.data
        if data.dtype != np.float32 or data.ndim != 2 or not data.flags.c_contiguous:
            raise ValueError("dataset must be C-contiguous float32 (n, d); "
                             "use Dataset.from_array to convert")


@dataclass(frozen=True)
class Neighbor:
    """A (node id, distance) pair; fresh marks entries new since the previous
    refinement iteration."""

    id: int
    dist: float
    fresh: bool = False

    def key(self):
        return (self.dist, self.id)


def squared_l2(a: np.ndarray, b: np.ndarray) -> float:
    """Squared L2 distance with fixed float32 accumulation order."""
    a = np.ascontiguousarray(a, dtype=np.float32)
    b = np.ascontiguousarray(b, dtype=np.float32)
    if a.shape != b.shape or a.ndim != 1:
        raise ValueError("inputs must be 1-d vectors of equal length")
    return float(_kernels.squared_l2(a, b))


def cos_angle_at(w: np.ndarray, u: np.ndarray, v: np.ndarray) -> float:
    """Cosine of the angle at vertex w in the triangle (u, w, v).

    Computed from squared side lengths via the law of cosines and clamped
    to [-1, 1].  Raises for degenerate triangles where w coincides with
    u or v.
    """
    d2_uw = squared_l2(u, w)
    d2_vw = squared_l2(v, w)
    d2_uv = squared_l2(u, v)
    c = _kernels.cos_angle_from_sq(d2_uw, d2_vw, d2_uv)
    if np.isnan(c):
        raise ValueError("angle undefined: w coincides with u or v")
    return float(c)


class CandidatePool:
    """Bounded search frontier: at most L entries, ascending (dist, id).

    Inserting into a full pool succeeds only when the candidate is strictly
    better than the current last entry.  Duplicate ids are rejected.  Each
    entry carries an expanded flag; the search loop repeatedly expands the
    first unexpanded entry and stops when the first L entries are all
    expanded.
    """

    def __init__(self, L: int):
        if L < 1:
            raise ValueError("pool capacity must be >= 1")
        self.L = L
        self._entries: list[Neighbor] = []
        self._expanded: list[bool] = []

    def __len__(self) -> int:
        return len(self._entries)

    @property
    def entries(self) -> list[Neighbor]:
        return list(self._entries)

    def insert(self, nb: Neighbor) -> bool:
        """Insert keeping (dist, id) order; returns True if accepted."""
        key = nb.key()
        lo, hi = 0, len(self._entries)
        while lo < hi:
            mid = (lo + hi) // 2
            if self._entries[mid].key() < key:
                lo = mid + 1
            else:
                hi = mid
        if lo < len(self._entries) and self._entries[lo].id == nb.id:
            return False
        if len(self._entries) == self.L:
            if lo == self.L:
                return False
            self._entries.pop()
            self._expanded.pop()
        self._entries.insert(lo, nb)
        self._expanded.insert(lo, False)
        return True

    def first_unexpanded(self) -> Optional[int]:
        """Index of the first unexpanded entry among the first L, or None."""
        for i, done in enumerate(self._expanded[: self.L]):
            if not done:
                return i
        return None

    def mark_expanded(self, idx: int) -> None:
        self._expanded[idx] = True

    def is_expanded(self, idx: int) -> bool:
        return self._expanded[idx]

    def top(self, k: int) -> list[Neighbor]:
        return self._entries[:k]

    def ids(self) -> list[int]:
        return [nb.id for nb in self._entries]


def centroid(ds: Dataset) -> np.ndarray:
    """Mean point of the dataset, accumulated in float64, returned float32."""
    return ds.data.mean(axis=0, dtype=np.float64).astype(np.float32)
