# engines/hull_engine.py

import itertools
from dataclasses import dataclass

import numpy as np

from engines.errors import DimensionMismatchError
from engines.geometry_engine import Ball, Box, local_box_interval, probe_dim
from engines.sgraded_engine import IndexSet

# closed-set comparisons on cell boundaries
BOUNDARY_EPS = 1e-12
# candidate centres per cell side for the inscribed ball search
CENTRE_REFINEMENT = 8
CENTRE_CHUNK = 2048


# =========================================================
# Probe Bounds (unwrapped around a reference point)
# =========================================================
def _probe_frame(probe):
    """
    (reference, lo, hi) with the probe inside [reference + lo, reference + hi]
    in unwrapped coordinates.
    """
    if isinstance(probe, Ball):
        ref = np.asarray(probe.center)
        rho = probe.radius
        return ref, np.full(probe.norm.dim, -rho), np.full(probe.norm.dim, rho)
    if isinstance(probe, Box):
        ref = np.asarray(probe.corner)
        return ref, np.zeros(probe.dim), np.asarray(probe.sides)
    ref = np.asarray(probe.ball.center)
    rho = probe.ball.radius
    box_lo, box_hi = local_box_interval(ref, probe.box)
    return ref, np.maximum(box_lo, -rho), np.minimum(box_hi, rho)


def _candidate_lifts(ref, lo, hi, m):
    """Integer cell lifts k (cell = [k, k+1]/m) meeting the bounding box."""
    first = np.floor((ref + lo) * m - BOUNDARY_EPS).astype(np.int64)
    last = np.floor((ref + hi) * m + BOUNDARY_EPS).astype(np.int64)
    if np.any(last < first):
        return np.zeros((0, len(ref)), dtype=np.int64)
    axes = [np.arange(a, b + 1) for a, b in zip(first, last)]
    mesh = np.meshgrid(*axes, indexing="ij")
    return np.stack([g.ravel() for g in mesh], axis=-1)


def _cell_bounds(lifts, ref, m):
    """Cell extents relative to the reference point."""
    return lifts / m - ref, (lifts + 1) / m - ref


def _ball_tests(lo, hi, radius, norm):
    far = np.maximum(np.abs(lo), np.abs(hi))
    near = np.clip(0.0, lo, hi)
    inside = norm.of(far) <= radius + BOUNDARY_EPS
    touches = norm.of(near) <= radius + BOUNDARY_EPS
    return inside, touches


def _box_tests(lo, hi, box_lo, box_hi):
    inside = np.all((lo >= box_lo - BOUNDARY_EPS) & (hi <= box_hi + BOUNDARY_EPS), axis=-1)
    touches = np.all((lo <= box_hi + BOUNDARY_EPS) & (hi >= box_lo - BOUNDARY_EPS), axis=-1)
    return inside, touches


def _hull_masks(probe, grid):
    if probe_dim(probe) != grid.dim:
        raise DimensionMismatchError("probe and grid differ in dimension")
    ref, lo, hi = _probe_frame(probe)
    lifts = _candidate_lifts(ref, lo, hi, grid.m)
    c_lo, c_hi = _cell_bounds(lifts, ref, grid.m)

    if isinstance(probe, Ball):
        inside, touches = _ball_tests(c_lo, c_hi, probe.radius, probe.norm)
    elif isinstance(probe, Box):
        inside, touches = _box_tests(c_lo, c_hi, lo, hi)
    else:
        box_lo, box_hi = local_box_interval(ref, probe.box)
        in_ball, _ = _ball_tests(c_lo, c_hi, probe.ball.radius, probe.ball.norm)
        in_box, meets_box = _box_tests(c_lo, c_hi, box_lo, box_hi)
        inside = in_ball & in_box
        # cell ∩ box is again a box; test it against the ball
        cut_lo = np.maximum(c_lo, box_lo)
        cut_hi = np.minimum(c_hi, box_hi)
        _, meets_ball = _ball_tests(cut_lo, cut_hi, probe.ball.radius, probe.ball.norm)
        touches = meets_box & meets_ball
    return lifts % grid.m, inside, touches


def inner_hull(probe, grid):
    """ℜ(S) = {I : A_I ⊆ S} with closed cells."""
    cells, inside, _ = _hull_masks(probe, grid)
    return IndexSet(grid.m, grid.dim, grid.ravel(cells[inside]) if inside.any() else [])


def outer_hull(probe, grid):
    """𝔒(S) = {I : A_I ∩ S ≠ ∅} with closed cells."""
    cells, _, touches = _hull_masks(probe, grid)
    return IndexSet(grid.m, grid.dim, grid.ravel(cells[touches]) if touches.any() else [])


# =========================================================
# Index Unions
# =========================================================
@dataclass(frozen=True)
class CellUnion:
    """𝔘(W): the union of the closed cells of an index set."""

    index_set: IndexSet
    m: int
    dim: int

    @property
    def measure(self):
        return len(self.index_set) / float(self.m**self.dim)

    def contains(self, points):
        pts = np.atleast_2d(np.asarray(points, dtype=float))
        if pts.shape[-1] != self.dim:
            raise DimensionMismatchError("points and union differ in dimension")
        idx = np.minimum((pts * self.m).astype(np.int64), self.m - 1)
        flat = np.ravel_multi_index(idx.T, (self.m,) * self.dim)
        return self.index_set.members(flat)


def index_union(index_set, grid):
    return CellUnion(index_set, grid.m, grid.dim)


# =========================================================
# Inscribed Ball
# =========================================================
def _unwrap_cells(cells, m):
    """Lift cells so the set sits contiguously around its first member."""
    base = cells[0]
    return base + (cells - base + m // 2) % m - m // 2


def inscribed_ball_diameter(index_set, grid):
    """
    Lower bound on the diameter of the largest ball inside 𝔘(W).

    Candidate centres sit on a sub-grid of CENTRE_REFINEMENT steps per cell.
    A centre's radius is its distance to the nearest cell outside W, and only
    cells of the bounding box grown by one ring need checking since that ring
    already separates the set from the rest of the torus.
    """
    cells = index_set.cells()
    if len(cells) == 0:
        raise ValueError("inscribed ball of an empty index set")
    m, dim, norm = grid.m, grid.dim, grid.norm
    lifts = _unwrap_cells(cells, m)

    lo = lifts.min(axis=0) - 1
    hi = lifts.max(axis=0) + 1
    axes = [np.arange(a, b + 1) for a, b in zip(lo, hi)]
    frame = np.stack([g.ravel() for g in np.meshgrid(*axes, indexing="ij")], axis=-1)
    outside = frame[~index_set.members(np.ravel_multi_index((frame % m).T, (m,) * dim))]
    if len(outside) == 0:
        return 1.0

    steps = np.array(list(itertools.product(range(CENTRE_REFINEMENT + 1), repeat=dim)))
    centres = np.unique((CENTRE_REFINEMENT * lifts[:, None, :] + steps[None, :, :]).reshape(-1, dim), axis=0)
    centres = centres / CENTRE_REFINEMENT

    best = 0.0
    for start in range(0, len(centres), CENTRE_CHUNK):
        block = centres[start:start + CENTRE_CHUNK]
        gap = np.maximum(
            np.maximum(outside[None, :, :] - block[:, None, :], block[:, None, :] - (outside[None, :, :] + 1)),
            0.0,
        )
        radius = norm.of(gap).min(axis=1)
        best = max(best, float(radius.max()))
    return 2.0 * best / m


def inscribed_ratio(index_set, grid):
    """inscribed_ball_diameter / r."""
    return inscribed_ball_diameter(index_set, grid) / grid.r

