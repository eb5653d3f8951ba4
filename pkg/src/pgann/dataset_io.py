"""Dataset and index persistence.

Vector files follow the classic .fvecs/.ivecs/.bvecs convention: every
record is a little-endian int32 dimension followed by the payload, and all
records must agree on the dimension.  Index files use a small custom binary
layout (magic "PGIX") storing adjacency as CSR; vectors are never stored in
an index, a graph is always paired with its dataset by the caller.
"""

from __future__ import annotations

import struct
from pathlib import Path
from typing import Optional, Union

import numpy as np

from ._kernels import EMPTY
from .core import Dataset
from .graph import LayerGraph, LayeredGraph, ProximityGraph

MAGIC = b"PGIX"
VERSION = 1
_KIND_FLAT = 0
_KIND_LAYERED = 1


class CorruptIndexError(ValueError):
    """Raised when an index file fails structural validation."""


def load_vecs(path: Union[str, Path]) -> np.ndarray:
    """Load a .fvecs/.ivecs/.bvecs file as a 2-d array of its natural dtype."""
    path = Path(path)
    suffix = path.suffix.lower()
    raw = np.fromfile(path, dtype=np.uint8)
    if raw.size == 0:
        raise ValueError(f"{path}: empty vector file")
    if raw.size < 4:
        raise ValueError(f"{path}: truncated vector file")
    dim = int(raw[:4].view("<i4")[0])
    if dim <= 0:
        raise ValueError(f"{path}: bad leading dimension {dim}")
    if suffix == ".bvecs":
        rec = 4 + dim
        item = np.uint8
    elif suffix == ".ivecs":
        rec = 4 * (dim + 1)
        item = np.dtype("<i4")
    elif suffix == ".fvecs":
        rec = 4 * (dim + 1)
        item = np.dtype("<f4")
    else:
        raise ValueError(f"{path}: unknown vector extension {suffix!r}")
    if raw.size % rec != 0:
        raise ValueError(f"{path}: file size not a multiple of the record size")
    rows = raw.reshape(-1, rec)
    dims = rows[:, :4].copy().view("<i4").ravel()
    if not np.all(dims == dim):
        raise ValueError(f"{path}: inconsistent record dimensions")
    payload = rows[:, 4:].copy()
    if suffix == ".bvecs":
        return payload
    return payload.view(item).reshape(len(rows), dim)


def save_vecs(path: Union[str, Path], arr: np.ndarray) -> None:
    """Write a 2-d array in the vecs format matching the file extension."""
    path = Path(path)
    suffix = path.suffix.lower()
    arr = np.asarray(arr)
    if arr.ndim != 2:
        raise ValueError("array must be 2-d")
    n, d = arr.shape
    if suffix == ".fvecs":
        payload = np.ascontiguousarray(arr, dtype="<f4").view(np.uint8).reshape(n, 4 * d)
    elif suffix == ".ivecs":
        payload = np.ascontiguousarray(arr, dtype="<i4").view(np.uint8).reshape(n, 4 * d)
    elif suffix == ".bvecs":
        payload = np.ascontiguousarray(arr, dtype=np.uint8).reshape(n, d)
    else:
        raise ValueError(f"unknown vector extension {suffix!r}")
    header = np.full((n, 1), d, dtype="<i4").view(np.uint8).reshape(n, 4)
    np.hstack([header, payload]).tofile(path)


def load_dataset(path: Union[str, Path]) -> Dataset:
    """Load a vecs file as a Dataset, widening ints/bytes to float32."""
    return Dataset.from_array(load_vecs(path).astype(np.float32))


def gen_synthetic(n: int, d: int, dist: str = "uniform", seed: int = 0,
                  n_clusters: int = 16, cluster_std: float = 0.05) -> Dataset:
    """Seeded synthetic datasets: uniform cube, gaussian, or clustered."""
    rng = np.random.default_rng(seed)
    if dist == "uniform":
        data = rng.random((n, d), dtype=np.float32)
    elif dist == "gaussian":
        data = rng.standard_normal((n, d), dtype=np.float32)
    elif dist == "clustered":
        centers = rng.random((n_clusters, d))
        assign = rng.integers(0, n_clusters, size=n)
        data = (centers[assign] + cluster_std * rng.standard_normal((n, d))
                ).astype(np.float32)
    else:
        raise ValueError(f"unknown distribution {dist!r}")
    return Dataset.from_array(data)


# ---------------------------------------------------------------------------
# Index files
# ---------------------------------------------------------------------------

def _write_flat_body(f, g: ProximityGraph) -> None:
    offsets, nbrs = g.to_csr()
    f.write(struct.pack("<QQ", g.n, int(g.ep)))
    f.write(struct.pack("<I", len(g.over_cap)))
    np.asarray(g.over_cap, dtype="<i4").tofile(f)
    offsets.astype("<u8").tofile(f)
    nbrs.astype("<i4").tofile(f)


class _Reader:
    """Bounds-checked little-endian reader over a whole file."""

    def __init__(self, buf: bytes, path: Path):
        self.buf = buf
        self.pos = 0
        self.path = path

    def take(self, n: int) -> bytes:
        if self.pos + n > len(self.buf):
            raise CorruptIndexError(f"{self.path}: truncated index file")
        out = self.buf[self.pos: self.pos + n]
        self.pos += n
        return out

    def unpack(self, fmt: str):
        return struct.unpack(fmt, self.take(struct.calcsize(fmt)))

    def array(self, dtype: str, count: int) -> np.ndarray:
        dt = np.dtype(dtype)
        return np.frombuffer(self.take(dt.itemsize * count), dtype=dt).copy()

    def done(self) -> None:
        if self.pos != len(self.buf):
            raise CorruptIndexError(f"{self.path}: trailing bytes in index file")


def _read_flat_body(r: _Reader, M: int) -> ProximityGraph:
    n, ep = r.unpack("<QQ")
    if n < 1:
        raise CorruptIndexError(f"{r.path}: empty graph")
    if ep >= n:
        raise CorruptIndexError(f"{r.path}: entry point {ep} out of range")
    (n_over,) = r.unpack("<I")
    over = r.array("<i4", n_over)
    offsets = r.array("<u8", n + 1).astype(np.int64)
    if offsets[0] != 0 or np.any(np.diff(offsets) < 0):
        raise CorruptIndexError(f"{r.path}: bad CSR offsets")
    nbrs = r.array("<i4", int(offsets[-1]))
    if nbrs.size and (nbrs.min() < 0 or nbrs.max() >= n):
        raise CorruptIndexError(f"{r.path}: neighbor id out of range")
    counts = np.diff(offsets)
    over_set = set(int(x) for x in over)
    bad = np.nonzero(counts > M)[0]
    for u in bad:
        if int(u) not in over_set:
            raise CorruptIndexError(
                f"{r.path}: node {u} degree {counts[u]} exceeds M={M}")
    return ProximityGraph.from_csr(offsets, nbrs, M=M, ep=int(ep), over_cap=over)


def save_index(path: Union[str, Path],
               g: Union[ProximityGraph, LayeredGraph]) -> None:
    path = Path(path)
    with open(path, "wb") as f:
        if isinstance(g, ProximityGraph):
            f.write(MAGIC)
            f.write(struct.pack("<IB", VERSION, _KIND_FLAT))
            f.write(struct.pack("<I", int(g.M)))
            _write_flat_body(f, g)
        elif isinstance(g, LayeredGraph):
            f.write(MAGIC)
            f.write(struct.pack("<IB", VERSION, _KIND_LAYERED))
            f.write(struct.pack("<I", int(g.layers[0].graph.M)))
            f.write(struct.pack("<QQdI", g.n, int(g.ep), float(g.m_factor),
                                len(g.layers)))
            for layer in g.layers:
                f.write(struct.pack("<Q", len(layer.members)))
                np.asarray(layer.members, dtype="<i4").tofile(f)
                f.write(struct.pack("<I", int(layer.graph.M)))
                _write_flat_body(f, layer.graph)
        else:
            raise TypeError(f"cannot serialize {type(g).__name__}")


def load_index(path: Union[str, Path]) -> Union[ProximityGraph, LayeredGraph]:
    path = Path(path)
    buf = Path(path).read_bytes()
    r = _Reader(buf, path)
    if r.take(4) != MAGIC:
        raise CorruptIndexError(f"{path}: not an index file (bad magic)")
    version, kind = r.unpack("<IB")
    if version != VERSION:
        raise CorruptIndexError(f"{path}: unsupported version {version}")
    if kind == _KIND_FLAT:
        (M,) = r.unpack("<I")
        g = _read_flat_body(r, M)
        r.done()
        return g
    if kind != _KIND_LAYERED:
        raise CorruptIndexError(f"{path}: unknown index kind {kind}")
    (M,) = r.unpack("<I")
    n_total, ep, m_factor, n_layers = r.unpack("<QQdI")
    if n_layers < 1:
        raise CorruptIndexError(f"{path}: layered index without layers")
    layers = []
    for li in range(n_layers):
        (n_members,) = r.unpack("<Q")
        members = r.array("<i4", n_members)
        if np.any(np.diff(members) <= 0):
            raise CorruptIndexError(f"{path}: layer {li} members not ascending")
        (layer_m,) = r.unpack("<I")
        g = _read_flat_body(r, layer_m)
        if g.n != n_members:
            raise CorruptIndexError(f"{path}: layer {li} graph size mismatch")
        layers.append(LayerGraph(members=members, graph=g))
    r.done()
    if len(layers[0].members) != n_total:
        raise CorruptIndexError(f"{path}: bottom layer must cover all nodes")
    levels = np.zeros(n_total, dtype=np.int32)
    prev = layers[0].members
    if not np.array_equal(prev, np.arange(n_total, dtype=np.int32)):
        raise CorruptIndexError(f"{path}: bottom layer must contain every node")
    for li in range(1, n_layers):
        mem = layers[li].members
        if not np.all(np.isin(mem, prev)):
            raise CorruptIndexError(f"{path}: layer {li} not nested")
        levels[mem] = li
        prev = mem
    if ep >= n_total or levels[ep] != n_layers - 1:
        raise CorruptIndexError(f"{path}: entry point not in the top layer")
    return LayeredGraph(layers=layers, levels=levels, ep=int(ep),
                        m_factor=float(m_factor))
