"""Shared fixtures.

The expensive builds (the n=10^4 pair used by the layered-index recall
checks) are session-scoped so the suite pays for them once.
"""

import numpy as np
import pytest

from pgann.core import Dataset
from pgann.dataset_io import gen_synthetic
from pgann.oracle import ground_truth_table


def make_ds(n, d, seed=0, dist="uniform"):
    return gen_synthetic(n, d, dist, seed=seed)


@pytest.fixture
def rng():
    return np.random.default_rng(12345)


@pytest.fixture(scope="session")
def ds_small():
    """2000 uniform points in 16-d; cheap enough for oracle comparisons."""
    return make_ds(2000, 16, seed=42)


@pytest.fixture(scope="session")
def ds_small_truth(ds_small):
    """Exact 20-NN of every node, self excluded."""
    return ground_truth_table(ds_small, None, k=20, exclude_self=True)


@pytest.fixture(scope="session")
def ds_mid():
    """The 10^4-point set shared by the recall comparisons."""
    return make_ds(10_000, 16, seed=7)


@pytest.fixture(scope="session")
def mid_queries():
    return gen_synthetic(1000, 16, "uniform", seed=1007).data


@pytest.fixture(scope="session")
def mid_truth(ds_mid, mid_queries):
    return ground_truth_table(ds_mid, mid_queries, k=10)


def line_dataset(n=10):
    """Points 0..n-1 on the x-axis, spaced 1 apart."""
    pts = np.zeros((n, 2), dtype=np.float32)
    pts[:, 0] = np.arange(n, dtype=np.float32)
    return Dataset.from_array(pts)


def lattice_dataset(side=14):
    """side x side unit grid in 2-d."""
    xs, ys = np.meshgrid(np.arange(side), np.arange(side))
    pts = np.stack([xs.ravel(), ys.ravel()], axis=1).astype(np.float32)
    return Dataset.from_array(pts)
