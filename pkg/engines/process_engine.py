# engines/process_engine.py

import logging
import math
from dataclasses import dataclass, field

import numpy as np
import pandas as pd

from engines.errors import ConfigError, DimensionMismatchError
from engines.geometry_engine import (
    NormSpec,
    as_points,
    ball_volume_tau,
    make_norm,
    probe_contains,
    torus_distance,
)
from engines.replica_engine import replica_rng

logger = logging.getLogger(__name__)

# total bucket budget for the fixed-radius neighbour grid
MAX_BUCKETS = 4_194_304
BRUTEFORCE_CHUNK = 2048
REGIME_TOLERANCE = 0.1


# =========================================================
# Point Sets & Model Parameters
# =========================================================
@dataclass(frozen=True)
class PointSet:
    """
    One realization of the Poisson point process on the torus.

    Points keep insertion order, so row k is vertex k. Planted points (if any)
    follow the background points.
    """

    points: np.ndarray
    intensity: float
    seed: int
    norm: NormSpec
    replica: int = 0
    planted_count: int = 0
    planted_center: tuple = None

    def __post_init__(self):
        pts = np.asarray(self.points, dtype=float)
        pts = as_points(pts, self.norm).copy() if pts.size else np.zeros((0, self.norm.dim))
        pts.setflags(write=False)
        object.__setattr__(self, "points", pts)

    @property
    def count(self):
        return int(self.points.shape[0])


@dataclass(frozen=True)
class ModelParams:
    n: float
    r: float
    norm: NormSpec
    delta_star: float = 0.5
    warnings: tuple = field(default=(), compare=False)

    @property
    def mu(self):
        return expected_edges(self)

    @property
    def tau(self):
        return ball_volume_tau(self.r, self.norm)

    @property
    def p_hat(self):
        """Finite-n plug-in p̂ = log μ / log n."""
        if self.n <= 1.0 or self.mu <= 0.0:
            return float("nan")
        return math.log(self.mu) / math.log(self.n)


def regime_warnings(n, r, norm, delta_star, mu):
    notes = []
    if n <= 1.0:
        return notes
    d = norm.dim
    lo = n ** ((delta_star - 2.0) / d)
    hi = n ** (-delta_star / d)
    if not lo <= r <= hi:
        notes.append(f"r={r:.6g} outside [{lo:.6g}, {hi:.6g}] (rcond window)")
    p_hat = math.log(mu) / math.log(n) if mu > 0 else float("nan")
    if not (delta_star - REGIME_TOLERANCE <= p_hat <= 2.0 - delta_star + REGIME_TOLERANCE):
        notes.append(f"p_hat={p_hat:.4f} outside [{delta_star}, {2 - delta_star}]")
    return notes


def make_params(n, r, norm, delta_star=0.5):
    """
    Build ModelParams, validating ranges and logging regime violations.
    """
    if n < 0:
        raise ConfigError(f"intensity n must be non-negative, got {n}")
    if not 0.0 < r < 0.5:
        raise ConfigError(f"r must lie in (0, 1/2), got {r}")
    if delta_star <= 0:
        raise ConfigError("delta_star must be positive")
    mu = n * n * norm.nu * r**norm.dim / 2.0
    notes = tuple(regime_warnings(n, r, norm, delta_star, mu))
    for note in notes:
        logger.warning("⚠️ regime check: %s", note)
    return ModelParams(float(n), float(r), norm, float(delta_star), notes)


def r_for_p_target(n, p_target, norm):
    """r with μ = n^{p_target}: r = (2 n^{p_target−2} / ν)^{1/d}."""
    return (2.0 * n ** (p_target - 2.0) / norm.nu) ** (1.0 / norm.dim)


def expected_edges(params):
    """μ = n² ν r^d / 2."""
    return params.n**2 * params.norm.nu * params.r**params.norm.dim / 2.0


# =========================================================
# Sampling
# =========================================================
def sample_points(rng, n, dim):
    count = rng.poisson(n) if n > 0 else 0
    return rng.random((count, dim))


def sample_ppp(n, norm, seed, replica=0):
    """Poisson(n) many i.i.d. uniform points on [0, 1)^d, reproducible per (seed, replica)."""
    if n < 0:
        raise ConfigError(f"intensity n must be non-negative, got {n}")
    rng = replica_rng(seed, replica)
    return PointSet(sample_points(rng, n, norm.dim), float(n), int(seed), norm, int(replica))


# =========================================================
# Edge Counting
# =========================================================
def _check_radius(r):
    if not 0.0 < r < 0.5:
        raise ConfigError(f"r must lie in (0, 1/2), got {r}")


def _count_pairs_within(a, b, r, norm, upper_only=False):
    dist = torus_distance(a[:, None, :], b[None, :, :], norm)
    close = dist <= r
    if upper_only:
        close = np.triu(close, k=1)
    return int(close.sum())


def edge_count_bruteforce(ps, r, norm):
    """Exhaustive pairwise scan; reference semantics for edge_count."""
    pts = ps.points
    total = 0
    for start in range(0, len(pts), BRUTEFORCE_CHUNK):
        block = pts[start:start + BRUTEFORCE_CHUNK]
        # pairs inside the block, then block against everything after it
        total += _count_pairs_within(block, block, r, norm, upper_only=True)
        rest = pts[start + BRUTEFORCE_CHUNK:]
        if len(rest):
            total += _count_pairs_within(block, rest, r, norm)
    return total


def _half_bucket_offsets(dim):
    grids = np.array(np.meshgrid(*[[-1, 0, 1]] * dim, indexing="ij")).reshape(dim, -1).T
    keep = []
    for o in grids:
        nz = np.flatnonzero(o)
        if len(nz) == 0 or o[nz[0]] > 0:
            keep.append(o)
    return np.array(keep, dtype=np.int64)


def edge_count(ps, r, norm):
    """
    |E| via a bucket grid of side ≥ r.

    Each point is compared with the points of its own bucket and of the
    lexicographically positive half of the 3^d neighbouring buckets, so every
    unordered pair is examined exactly once.
    """
    _check_radius(r)
    if ps.norm.dim != norm.dim:
        raise DimensionMismatchError("point set and norm differ in dimension")
    pts = ps.points
    n_pts = len(pts)
    if n_pts < 2:
        return 0

    b_max = int(MAX_BUCKETS ** (1.0 / norm.dim))
    per_axis = min(int(math.floor(1.0 / r)), b_max)
    if per_axis < 3:
        return edge_count_bruteforce(ps, r, norm)

    shape = (per_axis,) * norm.dim
    cells = np.minimum((pts * per_axis).astype(np.int64), per_axis - 1)
    keys = np.ravel_multi_index(cells.T, shape)
    order = np.argsort(keys, kind="stable")
    sorted_keys = keys[order]
    sorted_pts = pts[order]
    sorted_cells = cells[order]

    total = 0
    for offset in _half_bucket_offsets(norm.dim):
        nb = np.ravel_multi_index(((sorted_cells + offset) % per_axis).T, shape)
        lo = np.searchsorted(sorted_keys, nb, side="left")
        hi = np.searchsorted(sorted_keys, nb, side="right")
        if not offset.any():
            # same bucket: only partners after me in sorted order
            lo = np.arange(n_pts) + 1
        counts = np.clip(hi - lo, 0, None)
        n_pairs = int(counts.sum())
        if n_pairs == 0:
            continue
        left = np.repeat(np.arange(n_pts), counts)
        starts = np.repeat(lo - np.concatenate(([0], np.cumsum(counts)[:-1])), counts)
        right = np.arange(n_pairs) + starts
        for sl in range(0, n_pairs, 4_000_000):
            i = left[sl:sl + 4_000_000]
            j = right[sl:sl + 4_000_000]
            dist = torus_distance(sorted_pts[i], sorted_pts[j], norm)
            total += int(np.count_nonzero(dist <= r))
    return total


def count_in_probe(ps, probe):
    if ps.count == 0:
        return 0
    return int(np.count_nonzero(probe_contains(probe, ps.points)))


# =========================================================
# Point-set CSV (header dim,n,seed then one row per point)
# =========================================================
def dump_point_set(ps, path):
    with open(path, "w", newline="") as handle:
        handle.write("dim,n,seed\n")
        handle.write(f"{ps.norm.dim},{ps.intensity!r},{ps.seed}\n")
        pd.DataFrame(ps.points).to_csv(handle, header=False, index=False, float_format="%.17g")


def load_point_set(path, kind):
    with open(path) as handle:
        handle.readline()
        dim, n, seed = handle.readline().strip().split(",")
        norm = make_norm(kind, int(dim))
        try:
            pts = pd.read_csv(handle, header=None, dtype=float).to_numpy()
        except pd.errors.EmptyDataError:
            pts = np.zeros((0, norm.dim))
    return PointSet(pts, float(n), int(seed), norm)
