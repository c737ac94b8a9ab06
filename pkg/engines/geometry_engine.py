# engines/geometry_engine.py

import math
from dataclasses import dataclass
from enum import Enum

import numpy as np

from engines.errors import ConfigError, DimensionMismatchError
from engines.settings import MAX_DIM


# =========================================================
# Norm Contract
# =========================================================
class NormKind(str, Enum):
    L1 = "L1"
    L2 = "L2"
    LINF = "Linf"


# numpy / scipy `p` parameter for each norm
NORM_ORDER = {
    NormKind.L1: 1,
    NormKind.L2: 2,
    NormKind.LINF: np.inf,
}


def unit_ball_volume(kind, dim):
    kind = NormKind(kind)
    if kind is NormKind.LINF:
        return float(2**dim)
    if kind is NormKind.L1:
        return float(2**dim) / math.factorial(dim)
    return math.pi ** (dim / 2) / math.gamma(dim / 2 + 1)


@dataclass(frozen=True)
class NormSpec:
    kind: NormKind
    dim: int

    def __post_init__(self):
        object.__setattr__(self, "kind", NormKind(self.kind))
        if not 1 <= self.dim <= MAX_DIM:
            raise ConfigError(f"dimension must lie in [1, {MAX_DIM}], got {self.dim}")

    @property
    def nu(self):
        return unit_ball_volume(self.kind, self.dim)

    @property
    def order(self):
        return NORM_ORDER[self.kind]

    def of(self, vectors):
        """Norm along the last axis."""
        v = np.abs(np.asarray(vectors, dtype=float))
        if self.kind is NormKind.LINF:
            return v.max(axis=-1)
        if self.kind is NormKind.L1:
            return v.sum(axis=-1)
        return np.sqrt((v * v).sum(axis=-1))


def make_norm(kind, dim):
    try:
        return NormSpec(NormKind(kind), int(dim))
    except ValueError as exc:
        raise ConfigError(str(exc)) from exc


# =========================================================
# Torus Points
# =========================================================
def as_points(coords, norm):
    """Validate coordinates as points of [0, 1)^d; returns an (k, d) float array."""
    arr = np.asarray(coords, dtype=float)
    if arr.ndim <= 1:
        # a flat array is one point, except in d = 1 where it lists points
        arr = arr.reshape(-1, 1) if norm.dim == 1 else arr.reshape(1, -1)
    if arr.shape[-1] != norm.dim:
        raise DimensionMismatchError(f"expected {norm.dim} coordinates, got {arr.shape[-1]}")
    if arr.size and (arr.min() < 0.0 or arr.max() >= 1.0):
        raise ValueError("torus coordinates must lie in [0, 1)")
    return arr


def wrapped_offsets(x, y):
    """Per-coordinate wraparound distance min(|Δ|, 1 − |Δ|)."""
    delta = np.abs(np.asarray(x, dtype=float) - np.asarray(y, dtype=float)) % 1.0
    return np.minimum(delta, 1.0 - delta)


def torus_distance(x, y, norm):
    """
    Torus distance between x and y (broadcast over leading axes).

    Returns a float for single points and an array otherwise.
    """
    x = np.asarray(x, dtype=float)
    y = np.asarray(y, dtype=float)
    if x.shape[-1:] != (norm.dim,) and not (norm.dim == 1 and x.ndim == 0):
        raise DimensionMismatchError(f"point x has dimension {x.shape[-1:]}, norm has {norm.dim}")
    if y.shape[-1:] != (norm.dim,) and not (norm.dim == 1 and y.ndim == 0):
        raise DimensionMismatchError(f"point y has dimension {y.shape[-1:]}, norm has {norm.dim}")
    if x.ndim == 0:
        x = x.reshape(1)
    if y.ndim == 0:
        y = y.reshape(1)
    dist = norm.of(wrapped_offsets(x, y))
    if np.ndim(dist) == 0:
        return float(dist)
    return dist


def ball_volume_tau(r, norm):
    """τ = ν (r/2)^d, the volume of a ball of diameter r."""
    if not 0.0 < r < 1.0:
        raise ConfigError(f"r must lie in (0, 1), got {r}")
    return norm.nu * (r / 2.0) ** norm.dim


# =========================================================
# Convex Probes
# =========================================================
@dataclass(frozen=True)
class Ball:
    center: tuple
    radius: float
    norm: NormSpec

    def __post_init__(self):
        object.__setattr__(self, "center", tuple(float(c) % 1.0 for c in np.atleast_1d(self.center)))
        if len(self.center) != self.norm.dim:
            raise DimensionMismatchError("ball center dimension does not match norm")
        if not 0.0 < self.radius < 0.25:
            raise ValueError("ball radius must lie in (0, 1/4) so extents stay below 1/2")


@dataclass(frozen=True)
class Box:
    corner: tuple
    sides: tuple

    def __post_init__(self):
        object.__setattr__(self, "corner", tuple(float(c) % 1.0 for c in np.atleast_1d(self.corner)))
        object.__setattr__(self, "sides", tuple(float(s) for s in np.atleast_1d(self.sides)))
        if len(self.corner) != len(self.sides):
            raise DimensionMismatchError("box corner and sides differ in dimension")
        if any(not 0.0 < s < 0.5 for s in self.sides):
            raise ValueError("box sides must lie in (0, 1/2)")

    @property
    def dim(self):
        return len(self.sides)


@dataclass(frozen=True)
class BallBox:
    ball: Ball
    box: Box

    def __post_init__(self):
        if self.ball.norm.dim != self.box.dim:
            raise DimensionMismatchError("ball and box differ in dimension")


def probe_dim(probe):
    if isinstance(probe, Ball):
        return probe.norm.dim
    if isinstance(probe, Box):
        return probe.dim
    return probe.box.dim


def local_box_interval(reference, box):
    """
    Box interval [lo, hi] per axis in coordinates unwrapped around `reference`.

    Of the two lifts of each interval the one closest to the reference is
    returned; extents below 1/2 make the choice unambiguous.
    """
    corner = np.asarray(box.corner)
    sides = np.asarray(box.sides)
    lo = (corner - np.asarray(reference) + 0.5) % 1.0 - 0.5
    alt = lo - 1.0
    gap = np.maximum(np.maximum(lo, -(lo + sides)), 0.0)
    gap_alt = np.maximum(np.maximum(alt, -(alt + sides)), 0.0)
    use_alt = gap_alt < gap
    lo = np.where(use_alt, alt, lo)
    return lo, lo + sides


# midpoint nodes per axis for ball ∩ box quadrature, by dimension
QUADRATURE_RESOLUTION = {2: 4096, 3: 1024, 4: 160}


def _half_chord(rest, radius, norm):
    """Half-length of the ball's chord along the last axis above `rest`."""
    if norm.kind is NormKind.L2:
        inside = radius * radius - (rest * rest).sum(axis=-1)
        return np.sqrt(np.clip(inside, 0.0, None)) * (inside >= 0.0)
    if norm.kind is NormKind.L1:
        return np.clip(radius - np.abs(rest).sum(axis=-1), 0.0, None)
    return np.where(np.abs(rest).max(axis=-1) <= radius, radius, 0.0)


def _ball_box_measure(probe, resolution=None):
    ball, box = probe.ball, probe.box
    norm, rho = ball.norm, ball.radius
    lo, hi = local_box_interval(ball.center, box)

    a = np.maximum(lo, -rho)
    b = np.minimum(hi, rho)
    if np.any(b <= a):
        return 0.0
    if np.all(lo <= -rho) and np.all(hi >= rho):
        return norm.nu * rho**norm.dim
    if norm.dim == 1:
        return float(b[0] - a[0])

    k = resolution or QUADRATURE_RESOLUTION[norm.dim]
    axes = [a[i] + (np.arange(k) + 0.5) * (b[i] - a[i]) / k for i in range(norm.dim - 1)]
    cell = np.prod([(b[i] - a[i]) / k for i in range(norm.dim - 1)])
    grids = np.meshgrid(*axes, indexing="ij")
    rest = np.stack([g.ravel() for g in grids], axis=-1)

    total = 0.0
    for chunk in np.array_split(rest, max(1, len(rest) // 1_000_000)):
        h = _half_chord(chunk, rho, norm)
        seg = np.minimum(h, hi[-1]) - np.maximum(-h, lo[-1])
        total += np.clip(seg, 0.0, None).sum()
    return float(total * cell)


def probe_measure(probe, resolution=None):
    """
    Lebesgue measure of a probe.

    Balls and boxes are exact. Ball ∩ box integrates the exact chord length
    along the last axis with a midpoint rule over the other d−1 axes of the
    tight bounding box (QUADRATURE_RESOLUTION nodes per axis); the error stays
    below 1e-4·τ for d ≤ 3.
    """
    if isinstance(probe, Ball):
        return probe.norm.nu * probe.radius**probe.norm.dim
    if isinstance(probe, Box):
        return float(np.prod(probe.sides))
    return _ball_box_measure(probe, resolution)


def probe_contains(probe, points):
    """
    Closed membership of points in a probe.

    `points` may be a single point or an (k, d) array; returns a bool or a
    boolean array accordingly.
    """
    pts = np.asarray(points, dtype=float)
    single = pts.ndim == 1
    pts = np.atleast_2d(pts)
    dim = probe_dim(probe)
    if pts.shape[-1] != dim:
        if dim == 1 and single:
            pts = pts.reshape(-1, 1)
            single = False
        else:
            raise DimensionMismatchError(f"points have dimension {pts.shape[-1]}, probe has {dim}")

    if isinstance(probe, Ball):
        mask = torus_distance(pts, np.asarray(probe.center), probe.norm) <= probe.radius
    elif isinstance(probe, Box):
        rel = (pts - np.asarray(probe.corner)) % 1.0
        mask = np.all(rel <= np.asarray(probe.sides), axis=-1)
    else:
        mask = probe_contains(probe.ball, pts) & probe_contains(probe.box, pts)

    mask = np.atleast_1d(mask)
    return bool(mask[0]) if single else mask
