"""Graph containers: flat directed proximity graphs and layered variants.

Adjacency is stored fixed-width (n, width) int32 with -1 padding so the
jitted kernels can index rows directly; width may exceed the degree cap M
by one because connectivity repair is allowed to append a single extra edge
to otherwise-full nodes (those node ids are tagged in over_cap).
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Optional

import numpy as np

from ._kernels import EMPTY
from .core import Dataset


@dataclass
class ProximityGraph:
    """Directed graph over node ids 0..n-1 with a degree cap M."""

    adj: np.ndarray            # (n, width) int32, -1 padded
    counts: np.ndarray         # (n,) int32 out-degrees
    M: int                     # degree cap; only over_cap nodes may exceed it
    ep: int                    # default search entry point
    over_cap: np.ndarray = field(
        default_factory=lambda: np.empty(0, dtype=np.int32))

    @property
    def n(self) -> int:
        return self.adj.shape[0]

    def neighbors(self, u: int) -> np.ndarray:
        return self.adj[u, : self.counts[u]]

    def mean_degree(self) -> float:
        return float(self.counts.mean())

    def validate(self) -> None:
        """Structural checks; raises ValueError on violation."""
        n = self.n
        if self.counts.shape != (n,):
            raise ValueError("counts shape mismatch")
        if not (0 <= self.ep < n):
            raise ValueError("entry point out of range")
        over = set(int(x) for x in self.over_cap)
        for u in range(n):
            c = int(self.counts[u])
            if c > self.adj.shape[1]:
                raise ValueError(f"count exceeds row width at node {u}")
            if c > self.M and u not in over:
                raise ValueError(f"degree {c} > M={self.M} at untagged node {u}")
            row = self.adj[u, :c]
            if c and (row.min() < 0 or row.max() >= n):
                raise ValueError(f"neighbor id out of range at node {u}")
            if u in row:
                raise ValueError(f"self-loop at node {u}")
            if len(np.unique(row)) != c:
                raise ValueError(f"duplicate neighbor at node {u}")

    def to_csr(self) -> tuple[np.ndarray, np.ndarray]:
        """(offsets int64 (n+1), concatenated neighbor ids int32)."""
        counts = self.counts.astype(np.int64)
        offsets = np.zeros(self.n + 1, dtype=np.int64)
        np.cumsum(counts, out=offsets[1:])
        nbrs = np.empty(offsets[-1], dtype=np.int32)
        for u in range(self.n):
            nbrs[offsets[u]: offsets[u + 1]] = self.adj[u, : self.counts[u]]
        return offsets, nbrs

    @classmethod
    def from_csr(cls, offsets: np.ndarray, nbrs: np.ndarray, M: int, ep: int,
                 over_cap: Optional[np.ndarray] = None) -> "ProximityGraph":
        n = len(offsets) - 1
        counts = np.diff(offsets).astype(np.int32)
        width = max(int(counts.max()) if n else 0, 1)
        adj = np.full((n, width), EMPTY, dtype=np.int32)
        for u in range(n):
            adj[u, : counts[u]] = nbrs[offsets[u]: offsets[u + 1]]
        if over_cap is None:
            over_cap = np.empty(0, dtype=np.int32)
        return cls(adj=adj, counts=counts, M=M, ep=ep,
                   over_cap=np.asarray(over_cap, dtype=np.int32))

    @classmethod
    def from_lists(cls, lists: list[np.ndarray], M: int, ep: int,
                   over_cap: Optional[np.ndarray] = None) -> "ProximityGraph":
        n = len(lists)
        counts = np.array([len(x) for x in lists], dtype=np.int32)
        width = max(int(counts.max()) if n else 0, 1)
        adj = np.full((n, width), EMPTY, dtype=np.int32)
        for u, row in enumerate(lists):
            adj[u, : len(row)] = row
        if over_cap is None:
            over_cap = np.empty(0, dtype=np.int32)
        return cls(adj=adj, counts=counts, M=M, ep=ep,
                   over_cap=np.asarray(over_cap, dtype=np.int32))


def complete_graph(n: int, ep: int = 0) -> ProximityGraph:
    """Complete digraph; every node links to every other node ascending."""
    adj = np.empty((n, max(n - 1, 1)), dtype=np.int32)
    base = np.arange(n, dtype=np.int32)
    for u in range(n):
        adj[u, : n - 1] = np.concatenate([base[:u], base[u + 1:]])
    counts = np.full(n, n - 1, dtype=np.int32)
    return ProximityGraph(adj=adj, counts=counts, M=max(n - 1, 1), ep=ep)


def reachable_from(g: ProximityGraph, start: int) -> np.ndarray:
    """Boolean mask of nodes reachable from start via directed edges."""
    seen = np.zeros(g.n, dtype=bool)
    seen[start] = True
    stack = [start]
    while stack:
        u = stack.pop()
        for v in g.adj[u, : g.counts[u]]:
            if not seen[v]:
                seen[v] = True
                stack.append(int(v))
    return seen


@dataclass
class LayerGraph:
    """One layer of a layered index: a local-id graph plus the member map."""

    members: np.ndarray        # (n_i,) int32 global ids, ascending
    graph: ProximityGraph      # over local ids 0..n_i-1
    _local_data: Optional[np.ndarray] = None  # cached row subset for search

    def local_of(self, global_id: int) -> int:
        pos = int(np.searchsorted(self.members, global_id))
        if pos >= len(self.members) or self.members[pos] != global_id:
            raise KeyError(f"node {global_id} not a member of this layer")
        return pos

    def data_view(self, ds: Dataset) -> np.ndarray:
        if len(self.members) == ds.n:
            return ds.data
        if self._local_data is None or self._local_data.shape[0] != len(self.members):
            self._local_data = np.ascontiguousarray(ds.data[self.members])
        return self._local_data


@dataclass
class LayeredGraph:
    """Hierarchy of nested layers; layers[0] covers every node."""

    layers: list[LayerGraph]   # index 0 = bottom
    levels: np.ndarray         # (n,) int32 highest layer of each node
    ep: int                    # global id of the entry node in the top layer
    m_factor: float

    @property
    def n(self) -> int:
        return len(self.layers[0].members)

    @property
    def max_level(self) -> int:
        return len(self.layers) - 1

    def validate(self) -> None:
        if len(self.layers[0].members) != len(self.levels):
            raise ValueError("bottom layer must contain every node")
        prev: Optional[set[int]] = None
        for i, layer in enumerate(self.layers):
            mem = layer.members
            if np.any(np.diff(mem) <= 0):
                raise ValueError(f"layer {i} members not strictly ascending")
            cur = set(int(x) for x in mem)
            if prev is not None and not cur.issubset(prev):
                raise ValueError(f"layer {i} not nested in layer {i - 1}")
            layer.graph.validate()
            prev = cur
        if int(self.levels[self.ep]) != self.max_level:
            raise ValueError("entry point must live in the top layer")
