"""Monte-Carlo studies of the pruning geometry and the sampling bound.

Three self-contained experiments, each returning a JSON-friendly dict:

* ``remote_rank_frequency`` measures how often the kept endpoint of a pruned
  triangle ranks worse than both others for a far-away query.
* ``pruning_angle`` measures the mean angle at the kept neighbor over
  configurations where the dominance rule fires.
* ``sampling_coverage`` measures how often the sampled recall estimate
  lands within half an epsilon of the true mean recall.
"""

from __future__ import annotations

import math

import numpy as np

from .core import Dataset
from .dataset_io import gen_synthetic
from .knng import build_knng
from .nsg import CnaState, cna_init, estimate_quality, sample_size
from .oracle import ground_truth_table

__all__ = [
    "remote_rank_frequency",
    "pruning_angle",
    "sampling_coverage",
]


def remote_rank_frequency(alpha_deg: float, trials: int = 100_000, seed: int = 0,
                     remote_radius: float = 1e4) -> dict:
    """Frequency with which a remote query ranks the kept node worst.

    Planar triangles are drawn with w at the origin, u on the positive
    x-axis and v at angle alpha from u, with both edge lengths uniform in
    [0.5, 1] and resampled until the u-v edge is strictly the longest
    (the configuration in which pruning v while keeping w is possible).
    A query is placed at remote_radius in a uniformly random direction;
    a trial counts when the query is closer to both u and v than to w.
    The frequency converges to (pi - alpha) / (2*pi); its reciprocal is
    the expected number of times a point can be pruned.
    """
    if not 0.0 < alpha_deg < 180.0:
        raise ValueError("alpha_deg must lie in (0, 180)")
    if trials < 1:
        raise ValueError("trials must be positive")
    alpha = math.radians(alpha_deg)
    rng = np.random.default_rng(seed)
    r1 = np.empty(trials)
    r2 = np.empty(trials)
    have = 0
    while have < trials:
        want = trials - have
        a = rng.uniform(0.5, 1.0, want)
        b = rng.uniform(0.5, 1.0, want)
        duv_sq = a * a + b * b - 2.0 * a * b * math.cos(alpha)
        longest = np.maximum(a, b)
        ok = duv_sq > longest * longest
        got = int(ok.sum())
        r1[have:have + got] = a[ok]
        r2[have:have + got] = b[ok]
        have += got
    u = np.stack([r1, np.zeros(trials)], axis=1)
    v = np.stack([r2 * math.cos(alpha), r2 * math.sin(alpha)], axis=1)
    theta = rng.uniform(0.0, 2.0 * math.pi, trials)
    q = remote_radius * np.stack([np.cos(theta), np.sin(theta)], axis=1)
    dqw = (q * q).sum(axis=1)
    dqu = ((q - u) ** 2).sum(axis=1)
    dqv = ((q - v) ** 2).sum(axis=1)
    hits = np.logical_and(dqu < dqw, dqv < dqw)
    freq = float(hits.mean())
    predicted = (math.pi - alpha) / (2.0 * math.pi)
    return {
        "experiment": "prune-rank",
        "alpha_deg": float(alpha_deg),
        "trials": int(trials),
        "seed": int(seed),
        "remote_radius": float(remote_radius),
        "frequency": freq,
        "predicted": predicted,
        "abs_error": abs(freq - predicted),
        "stderr": math.sqrt(max(freq * (1.0 - freq), 1e-12) / trials),
        "expected_prunings_mc": (1.0 / freq) if freq > 0 else float("inf"),
        "expected_prunings_analytic": 1.0 / predicted,
    }


def pruning_angle(trials: int = 200_000, seed: int = 0,
                  point_sample_dim: int | None = None) -> dict:
    """Mean angle at the kept neighbor over successful dominance prunings.

    The primary statistic samples triangle configurations directly: the
    three side lengths d(u,w), d(w,v), d(u,v) are drawn uniformly in
    (0, 1] and a configuration is accepted when it forms a valid triangle
    whose u-v side is strictly the longest, i.e. exactly when the
    dominance rule prunes (u, v) while keeping w.  The reported angle is
    the one at w, opposite the pruned side.

    When point_sample_dim is given, a secondary diagnostic repeats the
    measurement with u, w, v drawn as uniform points in that dimension's
    unit cube.  Pairwise distances between such points concentrate as the
    dimension grows, so the accepted triangles become nearly equilateral
    and the diagnostic mean drifts toward 60 degrees; it is reported for
    context, not as the headline number.
    """
    if trials < 1:
        raise ValueError("trials must be positive")
    rng = np.random.default_rng(seed)
    total = 0.0
    total_sq = 0.0
    accepted = 0
    drawn = 0
    while accepted < trials:
        want = trials - accepted
        batch = max(8 * want, 4096)
        sides = rng.random((batch, 3))
        a = sides[:, 0]
        b = sides[:, 1]
        c = sides[:, 2]
        ok = (a + b > c) & (c > a) & (c > b)
        drawn += batch
        a = a[ok]
        b = b[ok]
        c = c[ok]
        if a.size > want:
            a = a[:want]
            b = b[:want]
            c = c[:want]
        cosw = (a * a + b * b - c * c) / (2.0 * a * b)
        ang = np.degrees(np.arccos(np.clip(cosw, -1.0, 1.0)))
        total += float(ang.sum())
        total_sq += float((ang * ang).sum())
        accepted += a.size
    mean = total / accepted
    var = max(total_sq / accepted - mean * mean, 0.0)
    out = {
        "experiment": "prune-angle",
        "trials": int(accepted),
        "seed": int(seed),
        "mean_angle_deg": mean,
        "std_deg": math.sqrt(var),
        "stderr_deg": math.sqrt(var / accepted),
        "accept_rate": accepted / drawn,
    }
    if point_sample_dim is not None:
        out["point_sample_dim"] = int(point_sample_dim)
        out["point_sample_mean_deg"] = _point_sample_angle(
            point_sample_dim, min(trials, 50_000), rng)
    return out


def _point_sample_angle(d: int, trials: int, rng: np.random.Generator) -> float:
    """Mean pruning angle with u, w, v drawn uniformly from [0, 1]^d."""
    if d < 1:
        raise ValueError("dimension must be positive")
    total = 0.0
    accepted = 0
    while accepted < trials:
        batch = max(4 * (trials - accepted), 4096)
        u = rng.random((batch, d))
        w = rng.random((batch, d))
        v = rng.random((batch, d))
        a_sq = ((u - w) ** 2).sum(axis=1)
        b_sq = ((w - v) ** 2).sum(axis=1)
        c_sq = ((u - v) ** 2).sum(axis=1)
        ok = (a_sq < c_sq) & (b_sq < c_sq)
        a_sq = a_sq[ok][:trials - accepted]
        b_sq = b_sq[ok][:trials - accepted]
        c_sq = c_sq[ok][:trials - accepted]
        cosw = (a_sq + b_sq - c_sq) / (2.0 * np.sqrt(a_sq * b_sq))
        ang = np.degrees(np.arccos(np.clip(cosw, -1.0, 1.0)))
        total += float(ang.sum())
        accepted += a_sq.size
    return total / accepted


def sampling_coverage(n: int = 5000, d: int = 16, epsilon: float = 0.6,
                      l: float = 1.0, resamples: int = 500, k: int = 10,
                      k0: int = 32, knng_iters: int = 2,
                      seed: int = 0) -> dict:
    """Empirical coverage of the half-epsilon error bound on sampled recall.

    A candidate state is materialized from an approximate KNNG on uniform
    synthetic data, its true mean recall@k is computed against the exact
    neighbor table, and the sampled estimator is then rerun `resamples`
    times with independent seeds.  Coverage is the fraction of estimates
    within epsilon/2 of the truth; the bound promises at least 1 - 1/n.
    """
    if resamples < 1:
        raise ValueError("resamples must be positive")
    if k > k0:
        raise ValueError("need k <= k0 so candidate lists are k-deep")
    ds = gen_synthetic(n, d, dist="uniform", seed=seed)
    knng = build_knng(ds, k0=k0, iters=knng_iters, seed=seed)
    state = cna_init(knng)
    truth = ground_truth_table(ds, k=k, exclude_self=True)
    true_r = _mean_state_recall(state, truth, k)
    n_s = sample_size(n, epsilon, l)
    hits = 0
    estimates = np.empty(resamples)
    for i in range(resamples):
        est = estimate_quality(state, ds, epsilon, l, k,
                               seed=seed + 1000 + i, truth=truth)
        estimates[i] = est.r_hat
        if abs(est.r_hat - true_r) < epsilon / 2.0:
            hits += 1
    return {
        "experiment": "sample-coverage",
        "n": int(n),
        "d": int(d),
        "epsilon": float(epsilon),
        "l": float(l),
        "k": int(k),
        "resamples": int(resamples),
        "seed": int(seed),
        "sample_size": int(n_s),
        "true_recall": float(true_r),
        "estimate_mean": float(estimates.mean()),
        "estimate_min": float(estimates.min()),
        "estimate_max": float(estimates.max()),
        "coverage": hits / resamples,
        "bound": 1.0 - 1.0 / n,
    }


def _mean_state_recall(state: CnaState, truth: np.ndarray, k: int) -> float:
    """Mean recall@k of every node's candidate prefix against truth rows."""
    n = state.n
    acc = 0.0
    for u in range(n):
        ids, _ = state.c_list(u)
        acc += len(set(ids[:k].tolist()) & set(truth[u].tolist())) / k
    return acc / n
