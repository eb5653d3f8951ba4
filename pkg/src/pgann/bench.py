"""Benchmark harness behind the command-line interface.

Index builds with wall-clock timing, recall/QPS sweeps against oracle
truth tables, ground-truth file generation and the Monte-Carlo
experiments.  Every command returns a JSON-friendly report dict carrying
an environment stamp and an echo of its configuration, so a report can
be reproduced from itself.
"""

from __future__ import annotations

import csv
import platform
import sys
import time
import warnings
from dataclasses import asdict, dataclass
from pathlib import Path
from typing import Optional, Sequence, Union

import numpy as np

from .core import Dataset
from .dataset_io import (gen_synthetic, load_dataset, load_index, load_vecs,
                         save_index, save_vecs)
from .experiments import remote_rank_frequency, pruning_angle, sampling_coverage
from .graph import LayeredGraph, ProximityGraph
from .hnsw import build_fasthnsw, build_hnsw_original
from .nsg import FastNsgStats, build_fastnsg, build_nsg_original
from .oracle import ground_truth_table, mean_recall
from .prune import RefineStats
from .search import layered_search_counted, search_batch

BUILDERS = ("ori-nsg", "fast-nsg", "ori-hnsw", "fast-hnsw")


class UsageError(ValueError):
    """Invalid command parameters; the CLI maps this to exit code 2."""


@dataclass
class BenchConfig:
    """Union of the knobs the subcommands understand.

    Builder parameters mirror the module preconditions and are checked
    here before any work starts.  dataset/synthetic are mutually
    exclusive ways to name the base vectors.
    """

    builder: str = "fast-nsg"
    dataset: Optional[str] = None
    synthetic: Optional[str] = None
    k0: int = 32
    k: int = 32
    L: int = 50
    M: int = 24
    alpha: float = 66.0
    ef: int = 64
    iters: int = 2
    target_recall: Optional[float] = None
    epsilon: float = 0.6
    l: float = 1.0
    m_factor: Optional[float] = None
    knng_iters: int = 10
    connect: bool = True
    cache: bool = True
    seed: int = 0
    k_query: int = 10
    L_search: tuple[int, ...] = ()
    index: Optional[str] = None
    queries: Optional[str] = None
    truth: Optional[str] = None
    out: Optional[str] = None
    report: Optional[str] = None
    csv: Optional[str] = None

    def validate_build(self) -> None:
        if self.builder not in BUILDERS:
            raise UsageError(f"unknown builder {self.builder!r}; "
                             f"choose from {', '.join(BUILDERS)}")
        if (self.dataset is None) == (self.synthetic is None):
            raise UsageError("give exactly one of --data and --synthetic")
        if self.k0 < 1 or self.k < 1 or self.M < 1 or self.ef < 1:
            raise UsageError("k0, k, M and ef must all be >= 1")
        if self.L < self.k:
            raise UsageError("search width L must be >= k")
        if not 60.0 <= self.alpha < 180.0:
            raise UsageError("alpha must lie in [60, 180) degrees")
        if self.iters < 1:
            raise UsageError("iteration count must be >= 1")
        if self.target_recall is not None and not 0.0 <= self.target_recall <= 1.0:
            raise UsageError("target recall must lie in [0, 1]")
        if not 0.0 < self.epsilon <= 1.0:
            raise UsageError("epsilon must lie in (0, 1]")
        if self.l < 1.0:
            raise UsageError("l must be >= 1")
        if self.m_factor is not None and self.m_factor <= 0.0:
            raise UsageError("m_factor must be positive")
        if self.knng_iters < 1:
            raise UsageError("knng iteration count must be >= 1")

    def validate_sweep(self) -> None:
        if self.k_query < 1:
            raise UsageError("query k must be >= 1")
        if not self.L_search:
            raise UsageError("give at least one L value to sweep")
        for L in self.L_search:
            if L < self.k_query:
                raise UsageError(f"L={L} is below k={self.k_query}")
        for name, val in (("--data", self.dataset), ("--index", self.index),
                          ("--queries", self.queries)):
            if val is None:
                raise UsageError(f"{name} is required for search-sweep")

    def load_data(self) -> Dataset:
        if self.dataset is not None:
            return load_dataset(self.dataset)
        return _parse_synthetic(self.synthetic, self.seed)

    def echo(self) -> dict:
        out = asdict(self)
        out["L_search"] = list(self.L_search)
        return out


def _parse_synthetic(spec: str, seed: int) -> Dataset:
    """Parse "n:d" or "n:d:dist" into a generated dataset."""
    parts = spec.split(":")
    if len(parts) not in (2, 3):
        raise UsageError(f"synthetic spec {spec!r} is not n:d or n:d:dist")
    try:
        n = int(parts[0])
        d = int(parts[1])
    except ValueError:
        raise UsageError(f"synthetic spec {spec!r} has non-integer sizes")
    dist = parts[2] if len(parts) == 3 else "uniform"
    if n < 1 or d < 1:
        raise UsageError("synthetic n and d must be >= 1")
    try:
        return gen_synthetic(n, d, dist=dist, seed=seed)
    except ValueError as exc:
        raise UsageError(str(exc))


def env_stamp() -> dict:
    import numba

    return {
        "python": sys.version.split()[0],
        "numpy": np.__version__,
        "numba": numba.__version__,
        "platform": platform.platform(),
        "machine": platform.machine(),
        "build_threads": int(numba.get_num_threads()),
        "timestamp": time.strftime("%Y-%m-%dT%H:%M:%S"),
    }


def write_report(path: Union[str, Path], report: dict) -> None:
    import json

    Path(path).write_text(json.dumps(report, indent=2, sort_keys=True) + "\n")


# ---------------------------------------------------------------------------
# build
# ---------------------------------------------------------------------------

def cmd_build(cfg: BenchConfig) -> dict:
    """Build the configured index, optionally persist it, report timing."""
    cfg.validate_build()
    ds = cfg.load_data()
    t0 = time.perf_counter()
    g, build_stats = _dispatch_build(cfg, ds)
    wall = time.perf_counter() - t0
    if cfg.out is not None:
        save_index(cfg.out, g)
    report = {
        "op": "build",
        "config": cfg.echo(),
        "env": env_stamp(),
        "n": ds.n,
        "d": ds.d,
        "build_seconds": wall,
        "index": _index_summary(g),
    }
    report.update(build_stats)
    if cfg.report is not None:
        write_report(cfg.report, report)
    return report


def _dispatch_build(cfg: BenchConfig, ds: Dataset):
    if cfg.builder == "ori-nsg":
        st = RefineStats()
        g = build_nsg_original(ds, k0=cfg.k0, k=cfg.k, L=cfg.L, M=cfg.M,
                               seed=cfg.seed, knng_iters=cfg.knng_iters,
                               stats=st)
        return g, {"build_dist_evals": int(st.dist_evals)}
    if cfg.builder == "fast-nsg":
        st = FastNsgStats()
        g = build_fastnsg(ds, k0=cfg.k0, k=cfg.k, L=cfg.L, M=cfg.M,
                          alpha=cfg.alpha, max_iters=cfg.iters,
                          target_recall=cfg.target_recall,
                          epsilon=cfg.epsilon, l=cfg.l, seed=cfg.seed,
                          use_cache=cfg.cache, knng_iters=cfg.knng_iters,
                          connect=cfg.connect, stats=st)
        st.final_state = None
        evals = sum(s.dist_total for s in st.per_iteration)
        evals += st.final_refine.dist_evals
        return g, {
            "build_dist_evals": int(evals),
            "iterations_run": st.iterations,
            "estimates": [e.r_hat for e in st.estimates],
        }
    if cfg.builder == "ori-hnsw":
        from .hnsw import HnswBuildStats

        st = HnswBuildStats()
        g = build_hnsw_original(ds, ef=cfg.ef, M=cfg.M, m_factor=cfg.m_factor,
                                seed=cfg.seed, stats=st)
        return g, {"build_dist_evals": int(st.dist_evals)}
    st = None
    g = build_fasthnsw(ds, k0=cfg.k0, ef=cfg.ef, M=cfg.M, alpha=cfg.alpha,
                       m_factor=cfg.m_factor, seed=cfg.seed,
                       max_iters=cfg.iters, connect_layers=cfg.connect,
                       use_cache=cfg.cache)
    return g, {}


def _index_summary(g: Union[ProximityGraph, LayeredGraph]) -> dict:
    if isinstance(g, ProximityGraph):
        return {
            "kind": "flat",
            "n": g.n,
            "M": int(g.M),
            "ep": int(g.ep),
            "mean_degree": float(g.counts.mean()),
            "over_cap_nodes": int(len(g.over_cap)),
        }
    return {
        "kind": "layered",
        "n": g.n,
        "layers": [len(layer.members) for layer in g.layers],
        "ep": int(g.ep),
        "m_factor": float(g.m_factor),
    }


# ---------------------------------------------------------------------------
# search sweep
# ---------------------------------------------------------------------------

def cmd_search_sweep(cfg: BenchConfig) -> dict:
    """Recall/QPS sweep over L values; one thread, rows sorted by L."""
    cfg.validate_sweep()
    ds = load_dataset(cfg.dataset)
    g = load_index(cfg.index)
    if g.n != ds.n:
        raise UsageError("index and dataset disagree on the point count")
    queries = np.ascontiguousarray(load_vecs(cfg.queries).astype(np.float32))
    if queries.ndim != 2 or queries.shape[1] != ds.d:
        raise UsageError("queries and dataset disagree on the dimension")
    k = cfg.k_query
    truth = None
    if cfg.truth is not None:
        truth = load_vecs(cfg.truth)
        if truth.shape[0] != queries.shape[0] or truth.shape[1] < k:
            raise UsageError("truth table does not cover the queries at k")
    L_list = _dedup_L(cfg.L_search)
    rows = []
    for L in L_list:
        rows.append(_sweep_one(ds, g, queries, truth, k, L))
    report = {
        "op": "search-sweep",
        "config": cfg.echo(),
        "env": env_stamp(),
        "n": ds.n,
        "d": ds.d,
        "n_queries": int(queries.shape[0]),
        "search_threads": 1,
        "rows": rows,
    }
    if cfg.report is not None:
        write_report(cfg.report, report)
    if cfg.csv is not None:
        _write_csv(cfg.csv, rows)
    return report


def _dedup_L(values: Sequence[int]) -> list[int]:
    seen = set()
    out = []
    for L in values:
        if L in seen:
            warnings.warn(f"duplicate L_search value {L} ignored")
            continue
        seen.add(L)
        out.append(L)
    return sorted(out)


def _sweep_one(ds: Dataset, g, queries: np.ndarray,
               truth: Optional[np.ndarray], k: int, L: int) -> dict:
    nq = queries.shape[0]
    if isinstance(g, ProximityGraph):
        t0 = time.perf_counter()
        ids, _, counts = search_batch(ds, g, queries, k, L)
        wall = time.perf_counter() - t0
        dist_evals = int(counts.sum())
    else:
        ids = np.empty((nq, k), dtype=np.int32)
        dist_evals = 0
        t0 = time.perf_counter()
        for i in range(nq):
            row, _, nd = layered_search_counted(ds, g, queries[i], k, L)
            ids[i] = row
            dist_evals += nd
        wall = time.perf_counter() - t0
    row = {
        "L": int(L),
        "seconds": wall,
        "qps": nq / wall if wall > 0 else float("inf"),
        "dist_evals": dist_evals,
        "dist_evals_per_query": dist_evals / nq,
    }
    if truth is not None:
        row["recall"] = float(mean_recall(ids, truth, k))
    return row


def _write_csv(path: Union[str, Path], rows: list[dict]) -> None:
    if not rows:
        return
    cols = list(rows[0].keys())
    with open(path, "w", newline="") as f:
        w = csv.DictWriter(f, fieldnames=cols)
        w.writeheader()
        for row in rows:
            w.writerow(row)


# ---------------------------------------------------------------------------
# ground truth and synthetic data
# ---------------------------------------------------------------------------

def cmd_gen_gt(cfg: BenchConfig, progress: bool = True) -> dict:
    """Exact-kNN table for a query file, written as .ivecs."""
    if cfg.dataset is None or cfg.queries is None or cfg.out is None:
        raise UsageError("gen-gt needs --data, --queries and --out")
    if cfg.k_query < 1:
        raise UsageError("query k must be >= 1")
    ds = load_dataset(cfg.dataset)
    queries = load_vecs(cfg.queries).astype(np.float32)
    if queries.ndim != 2 or queries.shape[1] != ds.d:
        raise UsageError("queries and dataset disagree on the dimension")
    if cfg.k_query > ds.n:
        raise UsageError(f"k={cfg.k_query} exceeds the dataset size {ds.n}")
    k = cfg.k_query
    nq = queries.shape[0]
    chunk = 256
    parts = []
    t0 = time.perf_counter()
    for start in range(0, nq, chunk):
        part = ground_truth_table(ds, queries[start:start + chunk], k=k)
        parts.append(part)
        if progress and nq > chunk:
            done = min(start + chunk, nq)
            print(f"gen-gt: {done}/{nq} queries",
                  file=sys.stderr, flush=True)
    table = np.vstack(parts).astype(np.int32)
    save_vecs(cfg.out, table)
    return {
        "op": "gen-gt",
        "config": cfg.echo(),
        "env": env_stamp(),
        "n": ds.n,
        "n_queries": nq,
        "k": k,
        "seconds": time.perf_counter() - t0,
        "out": str(cfg.out),
    }


def cmd_gen_synthetic(n: int, d: int, dist: str, seed: int,
                      out: Union[str, Path]) -> dict:
    if n < 1 or d < 1:
        raise UsageError("n and d must be >= 1")
    try:
        ds = gen_synthetic(n, d, dist=dist, seed=seed)
    except ValueError as exc:
        raise UsageError(str(exc))
    save_vecs(out, ds.data)
    return {
        "op": "gen-synthetic",
        "env": env_stamp(),
        "n": n,
        "d": d,
        "dist": dist,
        "seed": seed,
        "out": str(out),
    }


# ---------------------------------------------------------------------------
# Monte-Carlo dispatch
# ---------------------------------------------------------------------------

def cmd_montecarlo(experiment: str, *, alpha: float = 90.0,
                   trials: int = 100_000, seed: int = 0,
                   point_dim: Optional[int] = None, n: int = 5000,
                   d: int = 16, epsilon: float = 0.6, l: float = 1.0,
                   resamples: int = 500) -> dict:
    """Run one of the geometry/sampling experiments and stamp the result."""
    try:
        if experiment == "prune-rank":
            out = remote_rank_frequency(alpha, trials=trials, seed=seed)
        elif experiment == "prune-angle":
            out = pruning_angle(trials=trials, seed=seed,
                                point_sample_dim=point_dim)
        elif experiment == "sample-coverage":
            out = sampling_coverage(n=n, d=d, epsilon=epsilon, l=l,
                                    resamples=resamples, seed=seed)
        else:
            raise UsageError(f"unknown experiment {experiment!r}; "
                             "choose prune-rank, prune-angle or sample-coverage")
    except UsageError:
        raise
    except ValueError as exc:
        raise UsageError(str(exc))
    out["env"] = env_stamp()
    return out
