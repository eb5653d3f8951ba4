"""Layered small-world builders: classic incremental insertion and the
layer-global variant that constructs each layer with the iterative NSG
pipeline over the layer's member set."""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Optional

import numpy as np

from . import _kernels
from ._kernels import EMPTY
from .core import Dataset
from .graph import (LayerGraph, LayeredGraph, ProximityGraph, complete_graph)
from .nsg import FastNsgStats, build_fastnsg

__all__ = [
    "LayerAssignment", "assign_layers",
    "HnswBuildStats", "build_hnsw_original",
    "FastHnswStats", "build_fasthnsw",
]


@dataclass(frozen=True)
class LayerAssignment:
    """Per-node highest layer, drawn from a geometric-like decay."""
    levels: np.ndarray         # (n,) int32
    m_factor: float

    @property
    def m_l(self) -> int:
        return int(self.levels.max())

    def members(self, i: int) -> np.ndarray:
        return np.flatnonzero(self.levels >= i).astype(np.int32)


def assign_layers(n: int, m_factor: float, seed: int = 0) -> LayerAssignment:
    """l(u) = floor(-ln(U) * m_factor) with U uniform on (0, 1], so
    P(l >= j) = exp(-j / m_factor)."""
    if m_factor <= 0:
        raise ValueError("m_factor must be > 0")
    if n < 1:
        raise ValueError("n must be >= 1")
    rng = np.random.default_rng(seed)
    u = 1.0 - rng.random(n)
    levels = np.floor(-np.log(u) * m_factor).astype(np.int32)
    return LayerAssignment(levels=levels, m_factor=float(m_factor))


def _default_m_factor(M: int) -> float:
    if M < 2:
        raise ValueError("m_factor must be given explicitly when M < 2")
    return 1.0 / math.log(M)


def _publish_layers(levels: np.ndarray, adj3: np.ndarray, cnt2: np.ndarray,
                    M: int, ep: int, m_factor: float) -> LayeredGraph:
    """Slice the global working arrays into per-layer local-id graphs."""
    n = levels.shape[0]
    m_l = int(levels.max())
    width = adj3.shape[2]
    loc = np.full(n, -1, dtype=np.int32)
    layers = []
    for i in range(m_l + 1):
        members = np.flatnonzero(levels >= i).astype(np.int32)
        loc[members] = np.arange(len(members), dtype=np.int32)
        counts_i = np.ascontiguousarray(cnt2[i][members]).astype(np.int32)
        rows = adj3[i][members]
        mask = np.arange(width)[None, :] < counts_i[:, None]
        local = np.where(mask, loc[np.clip(rows, 0, None)], EMPTY)
        g = ProximityGraph(adj=local.astype(np.int32), counts=counts_i,
                           M=M, ep=int(loc[ep]))
        layers.append(LayerGraph(members=members, graph=g))
    return LayeredGraph(layers=layers, levels=levels.astype(np.int32),
                        ep=int(ep), m_factor=m_factor)


@dataclass
class HnswBuildStats:
    """Insertion accounting; candidate pools are kept only when asked."""
    dist_evals: int = 0
    levels: Optional[np.ndarray] = None
    w0_ids: Optional[np.ndarray] = None    # (n, ef) bottom-layer pools
    w0_counts: Optional[np.ndarray] = None


def build_hnsw_original(ds: Dataset, ef: int, M: int,
                        m_factor: Optional[float] = None, seed: int = 0,
                        record_candidates: bool = False,
                        stats: Optional[HnswBuildStats] = None
                        ) -> LayeredGraph:
    """Node-by-node insertion: greedy descent above the node's drawn level,
    beam of width ef at and below it, occlusion pruning to M, reverse edges
    re-pruned on overflow.  No connectivity repair.  Insertion order is the
    dataset order and the build is sequential, so a seed fixes the index.
    """
    if ef < 1:
        raise ValueError("ef must be >= 1")
    if M < 1:
        raise ValueError("M must be >= 1")
    if m_factor is None:
        m_factor = _default_m_factor(M)
    n = ds.n
    assign = assign_layers(n, m_factor, seed)
    levels = assign.levels
    n_layers = int(levels.max()) + 1
    adj3 = np.full((n_layers, n, M + 1), EMPTY, dtype=np.int32)
    dst3 = np.full((n_layers, n, M + 1), np.inf, dtype=np.float32)
    cnt2 = np.zeros((n_layers, n), dtype=np.int32)
    record = bool(record_candidates)
    if record:
        w0_ids = np.full((n, ef), EMPTY, dtype=np.int32)
        w0_counts = np.zeros(n, dtype=np.int32)
    else:
        w0_ids = np.empty((1, 1), dtype=np.int32)
        w0_counts = np.empty(1, dtype=np.int32)
    nd = _kernels.hnsw_insert_all(ds.data, levels, adj3, dst3, cnt2, ef, M,
                                  w0_ids, w0_counts, record)
    # entry point = the earliest node holding the top level
    ep = int(np.flatnonzero(levels == levels.max())[0])
    if stats is not None:
        stats.dist_evals += int(nd)
        stats.levels = levels.copy()
        if record:
            stats.w0_ids = w0_ids
            stats.w0_counts = w0_counts
    return _publish_layers(levels, adj3, cnt2, M, ep, m_factor)


@dataclass
class FastHnswStats:
    """Per-layer build accounting for the layer-global construction."""
    levels: Optional[np.ndarray] = None
    layer_sizes: list = field(default_factory=list)
    layer_stats: list = field(default_factory=list)  # FastNsgStats or None


def build_fasthnsw(ds: Dataset, k0: int, ef: int, M: int,
                   alpha: float = 66.0, m_factor: Optional[float] = None,
                   seed: int = 0, max_iters: int = 2,
                   connect_layers: bool = True, use_cache: bool = True,
                   stats: Optional[FastHnswStats] = None) -> LayeredGraph:
    """Assign every node's level up front, then build each layer's graph
    over its full member set, top-down: a complete digraph when the layer
    fits within M, otherwise the iterative NSG build restricted to the
    members with k = L = ef.

    connect_layers governs only the connectivity repair of each per-layer
    final refine; the intermediate refine-then-search passes always repair,
    as the underlying iterative builder defines them.
    """
    if ef < 1:
        raise ValueError("ef must be >= 1")
    if M < 1:
        raise ValueError("M must be >= 1")
    if m_factor is None:
        m_factor = _default_m_factor(M)
    n = ds.n
    assign = assign_layers(n, m_factor, seed)
    levels = assign.levels
    m_l = assign.m_l
    top = assign.members(m_l)
    rng = np.random.default_rng(seed)
    ep = int(top[rng.integers(0, len(top))])
    if stats is not None:
        stats.levels = levels.copy()
    layers: list[Optional[LayerGraph]] = [None] * (m_l + 1)
    for i in range(m_l, -1, -1):
        members = assign.members(i)
        n_i = len(members)
        if stats is not None:
            stats.layer_sizes.insert(0, n_i)
        if n_i <= M or n_i <= 2:
            g = complete_graph(n_i, ep=int(np.searchsorted(members, ep)))
            if stats is not None:
                stats.layer_stats.insert(0, None)
        else:
            sub = Dataset(np.ascontiguousarray(ds.data[members]))
            sub_stats = FastNsgStats() if stats is not None else None
            g = build_fastnsg(
                sub, k0=min(k0, n_i - 1), k=min(ef, n_i - 1),
                L=min(ef, n_i - 1), M=M, alpha=alpha, max_iters=max_iters,
                seed=seed + i + 1, use_cache=use_cache,
                connect=connect_layers, stats=sub_stats)
            if stats is not None:
                stats.layer_stats.insert(0, sub_stats)
        layers[i] = LayerGraph(members=members, graph=g)
    return LayeredGraph(layers=layers, levels=levels, ep=ep,
                        m_factor=m_factor)
