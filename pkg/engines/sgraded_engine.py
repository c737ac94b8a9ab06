# engines/sgraded_engine.py

import json
import logging
import math
import os
from dataclasses import dataclass

import numpy as np
import pandas as pd

from engines.clique_engine import lattice_metric, search_torus, search_window, window_offsets
from engines.errors import BudgetExceededError, ConfigError, DimensionMismatchError, GridTooCoarseError
from engines.geometry_engine import make_norm, torus_distance
from engines.replica_engine import replica_rng
from engines.settings import clique_node_cap

logger = logging.getLogger(__name__)

# m = ⌊s/r⌋ is taken with this slack so s/r = 50 does not floor to 49
FLOOR_SLACK = 1e-9
DENSE_CELL_LIMIT = 20_000_000


# =========================================================
# Index Sets
# =========================================================
@dataclass(frozen=True)
class IndexSet:
    """
    A set of cell indices stored as sorted flat (row-major) positions.

    With `complement=True` the set is everything except `flat`, which keeps
    Wᶜ cheap on grids with millions of cells. Row-major order coincides with
    lexicographic order of cell coordinates.
    """

    m: int
    dim: int
    flat: np.ndarray
    complement: bool = False

    def __post_init__(self):
        flat = np.unique(np.asarray(self.flat, dtype=np.int64))
        flat.setflags(write=False)
        object.__setattr__(self, "flat", flat)

    @classmethod
    def from_cells(cls, cells, m, dim=None):
        cells = np.asarray(cells, dtype=np.int64)
        if cells.size == 0:
            return cls(m, dim or 1, np.zeros(0, dtype=np.int64))
        cells = cells.reshape(-1, dim or cells.shape[-1]) if cells.ndim == 1 else cells
        if cells.min() < 0 or cells.max() >= m:
            raise ValueError("cell coordinates must lie in {0, …, m−1}")
        flat = np.ravel_multi_index(cells.T, (m,) * cells.shape[1])
        return cls(m, cells.shape[1], flat)

    @property
    def n_cells(self):
        return self.m**self.dim

    def __len__(self):
        return self.n_cells - len(self.flat) if self.complement else len(self.flat)

    def members(self, flat):
        """Boolean membership of flat positions."""
        inside = np.isin(np.asarray(flat, dtype=np.int64), self.flat)
        return ~inside if self.complement else inside

    def cells(self):
        if self.complement:
            raise ValueError("complement sets are not enumerated")
        if len(self.flat) == 0:
            return np.zeros((0, self.dim), dtype=np.int64)
        return np.stack(np.unravel_index(self.flat, (self.m,) * self.dim), axis=-1).astype(np.int64)

    def invert(self):
        return IndexSet(self.m, self.dim, self.flat, not self.complement)

    def as_list(self):
        return [tuple(int(c) for c in row) for row in self.cells()]


# =========================================================
# Grid Model
# =========================================================
@dataclass(frozen=True)
class GridModel:
    s: int
    m: int
    n: float
    r: float
    norm: object
    offsets: np.ndarray
    tau_s: int
    tau_exact: bool
    coarse: bool = False

    @property
    def dim(self):
        return self.norm.dim

    @property
    def shape(self):
        return (self.m,) * self.norm.dim

    @property
    def n_cells(self):
        return self.m**self.norm.dim

    @property
    def D(self):
        return self.n / self.n_cells

    @property
    def nbhd_size(self):
        return int(len(self.offsets))

    def ravel(self, cells):
        return np.ravel_multi_index((np.asarray(cells, dtype=np.int64) % self.m).T, self.shape)

    def unravel(self, flat):
        return np.stack(np.unravel_index(np.asarray(flat, dtype=np.int64), self.shape), axis=-1).astype(np.int64)


def _neighbour_offsets(kind, dim, s, m):
    """Distinct wrapped offsets o with d(0, o) ≤ s, representatives in the window."""
    window = window_offsets(dim, s + 1)
    wrapped = np.abs(window) % m
    delta = np.minimum(wrapped, m - wrapped)
    window = window[lattice_metric(delta, kind) <= s]
    # on small tori several window offsets land on one cell; keep the shortest
    order = np.argsort(np.abs(window).sum(axis=1), kind="stable")
    keys = np.ravel_multi_index((window[order] % m).T, (m,) * dim)
    _, first = np.unique(keys, return_index=True)
    return window[np.sort(order[first])]


def _half_offsets(offsets, m, dim):
    """
    One representative per {o, −o} pair, plus a weight: 2 for proper pairs
    and 1 for offsets equal to their own negative mod m. The zero offset is
    dropped.
    """
    shape = (m,) * dim
    keys = np.ravel_multi_index((offsets % m).T, shape)
    neg = np.ravel_multi_index(((-offsets) % m).T, shape)
    keep = (keys < neg) | ((keys == neg) & (offsets % m).any(axis=1))
    weights = np.where(keys[keep] == neg[keep], 1, 2)
    return offsets[keep], weights


def _make_grid(s, m, n, r, norm, coarse, node_cap):
    if s < 0:
        raise ConfigError("s must be non-negative")
    offsets = _neighbour_offsets(norm.kind, norm.dim, s, m)
    offsets.setflags(write=False)
    cap = clique_node_cap() if node_cap is None else node_cap
    if coarse:
        result = search_torus(norm.kind, norm.dim, s, m, cap)
    else:
        result = search_window(norm.kind, norm.dim, s, cap)
    if not result.exact:
        logger.warning("⚠️ clique search capped at %d nodes: τ̃_s ≥ %d (lower bound)", cap, result.size)
    return GridModel(s, m, float(n), float(r), norm, offsets, int(result.size), bool(result.exact), coarse)


def build_grid(params, s, node_cap=None):
    """
    s-graded grid for ModelParams: m = ⌊s/r⌋, D = n/m^d, |N_I| and τ̃_s cached.
    """
    if s < 3:
        raise ConfigError(f"s must be at least 3, got {s}")
    m = int(math.floor(s / params.r + FLOOR_SLACK))
    if m < 2 * s + 3:
        raise GridTooCoarseError(f"grid too coarse: m={m} < 2s+3={2 * s + 3}")
    grid = _make_grid(s, m, params.n, params.r, params.norm, False, node_cap)
    logger.info(
        "✅ grid built: s=%d m=%d D=%.6g |N_I|=%d τ̃_s=%d%s",
        s, m, grid.D, grid.nbhd_size, grid.tau_s, "" if grid.tau_exact else " (lower bound)",
    )
    return grid


def tiny_grid(m, s, D, norm, node_cap=None):
    """
    Oracle-only grid on m^d cells with cell mean D; m < 2s + 3 (even m = 1)
    is allowed and neighbourhoods wrap around the torus.
    """
    if m < 1:
        raise ConfigError("m must be positive")
    n = D * m**norm.dim
    r = min(s / m, 0.49) if m else 0.49
    return _make_grid(s, m, n, r, norm, m < 2 * s + 3, node_cap)


# =========================================================
# Cell Metric
# =========================================================
def cell_metric(I, J, grid):
    """
    d(I, J) = 0 if I = J, else ⌊‖(δ − 1)_+‖⌋ + 1 with δ the wrapped cell
    offset. Vectorised over leading axes.
    """
    I = np.asarray(I, dtype=np.int64)
    J = np.asarray(J, dtype=np.int64)
    if I.shape[-1] != grid.dim or J.shape[-1] != grid.dim:
        raise DimensionMismatchError("cell index dimension does not match grid")
    raw = np.abs(I - J) % grid.m
    delta = np.minimum(raw, grid.m - raw)
    out = lattice_metric(delta, grid.norm.kind)
    return int(out) if np.ndim(out) == 0 else out


def cell_metric_numeric_oracle(I, J, grid, samples=4096, seed=0):
    """
    min ⌈m‖x − y‖⌉ over sampled interior points x ∈ A_I°, y ∈ A_J°.

    Half the samples are uniform in the cells; the rest sit in sub-boxes of
    widths 1e-1 … 1e-4 (in cell units) pressed against the faces where the two
    cells look at each other, which is where the infimum is approached.
    """
    I = np.asarray(I, dtype=np.int64)
    J = np.asarray(J, dtype=np.int64)
    if np.array_equal(I % grid.m, J % grid.m):
        return 0
    rng = replica_rng(seed, 0)
    m, dim = grid.m, grid.dim

    raw = (J - I) % m
    forward = raw <= m - raw  # J sits on the + side of I along this axis
    touching = np.minimum(raw, m - raw) == 0

    best = None
    widths = (1.0, 1e-1, 1e-2, 1e-3, 1e-4)
    per = max(1, samples // len(widths))
    for width in widths:
        u = rng.random((per, dim))
        v = rng.random((per, dim))
        if width < 1.0:
            # x near the face of A_I facing J, y near the face of A_J facing I
            u_face = np.where(forward, 1.0 - width * u, width * u)
            v_face = np.where(forward, width * v, 1.0 - width * v)
            u = np.where(touching, u, u_face)
            v = np.where(touching, u, v_face)
        u = np.clip(u, 1e-12, 1.0 - 1e-12)
        v = np.clip(v, 1e-12, 1.0 - 1e-12)
        x = ((I + u) / m) % 1.0
        y = ((J + v) / m) % 1.0
        dist = torus_distance(x, y, grid.norm) * m
        value = int(np.ceil(dist - 1e-12).min())
        best = value if best is None else min(best, value)
    return best


def neighborhood(I, grid):
    """N_I = {J : d(I, J) ≤ s}."""
    I = np.asarray(I, dtype=np.int64)
    cells = (I[None, :] + grid.offsets) % grid.m
    return IndexSet(grid.m, grid.dim, grid.ravel(cells))


def index_set_diameter(index_set, grid):
    """Largest pairwise cell metric inside an explicit index set (0 when empty)."""
    cells = index_set.cells()
    if len(cells) < 2:
        return 0
    worst = 0
    for start in range(0, len(cells), 1024):
        block = cells[start:start + 1024]
        worst = max(worst, int(cell_metric(block[:, None, :], cells[None, :, :], grid).max()))
    return worst


# =========================================================
# Cell Configurations
# =========================================================
@dataclass(frozen=True)
class CellConfig:
    """
    Occupancy vector {X_I} stored sparsely: sorted flat indices of the
    occupied cells and their positive counts.
    """

    grid: GridModel
    cells: np.ndarray
    counts: np.ndarray
    seed: int = None

    def __post_init__(self):
        cells = np.asarray(self.cells, dtype=np.int64)
        counts = np.asarray(self.counts, dtype=np.int64)
        if cells.shape != counts.shape:
            raise ValueError("cells and counts differ in length")
        if counts.size and counts.min() < 0:
            raise ValueError("cell counts must be non-negative")
        keep = counts > 0
        cells, counts = cells[keep], counts[keep]
        order = np.argsort(cells, kind="stable")
        cells, counts = cells[order], counts[order]
        if len(cells) > 1 and np.any(np.diff(cells) == 0):
            raise ValueError("duplicate cells in configuration")
        cells.setflags(write=False)
        counts.setflags(write=False)
        object.__setattr__(self, "cells", cells)
        object.__setattr__(self, "counts", counts)

    @property
    def total(self):
        return int(self.counts.sum())

    def coords(self):
        return self.grid.unravel(self.cells)

    def count_at(self, flat):
        """X_I for flat positions (0 for empty cells)."""
        flat = np.asarray(flat, dtype=np.int64)
        pos = np.searchsorted(self.cells, flat)
        pos = np.clip(pos, 0, max(len(self.cells) - 1, 0))
        if len(self.cells) == 0:
            return np.zeros(flat.shape, dtype=np.int64)
        hit = self.cells[pos] == flat
        return np.where(hit, self.counts[pos], 0)

    def dense(self):
        if self.grid.n_cells > DENSE_CELL_LIMIT:
            raise ValueError("grid too large for a dense view")
        out = np.zeros(self.grid.n_cells, dtype=np.int64)
        out[self.cells] = self.counts
        return out.reshape(self.grid.shape)

    def restrict(self, keep_mask):
        return CellConfig(self.grid, self.cells[keep_mask], self.counts[keep_mask], self.seed)

    def replace_cells(self, flat, values):
        """Copy with X_I overwritten on `flat` (values may be zero)."""
        flat = np.asarray(flat, dtype=np.int64)
        keep = ~np.isin(self.cells, flat)
        cells = np.concatenate([self.cells[keep], flat])
        counts = np.concatenate([self.counts[keep], np.asarray(values, dtype=np.int64)])
        return CellConfig(self.grid, cells, counts, self.seed)


def config_from_dense(grid, counts, seed=None):
    arr = np.asarray(counts, dtype=np.int64).reshape(-1)
    flat = np.flatnonzero(arr)
    return CellConfig(grid, flat, arr[flat], seed)


def config_from_mapping(grid, mapping, seed=None):
    """{cell tuple: count} → CellConfig."""
    if not mapping:
        return CellConfig(grid, np.zeros(0, dtype=np.int64), np.zeros(0, dtype=np.int64), seed)
    cells = np.array([list(k) for k in mapping], dtype=np.int64).reshape(len(mapping), grid.dim)
    return CellConfig(grid, grid.ravel(cells), list(mapping.values()), seed)


def coarsen(ps, grid):
    """X_I = number of points with ⌊m·x⌋ = I."""
    if ps.norm.dim != grid.dim:
        raise DimensionMismatchError("point set and grid differ in dimension")
    if ps.count == 0:
        return CellConfig(grid, np.zeros(0, dtype=np.int64), np.zeros(0, dtype=np.int64), ps.seed)
    idx = np.minimum((ps.points * grid.m).astype(np.int64), grid.m - 1)
    flat, counts = np.unique(grid.ravel(idx), return_counts=True)
    return CellConfig(grid, flat, counts, ps.seed)


def draw_cell_config(grid, rng, seed=None):
    """
    I.i.d. Poisson(D) counts: a Poisson(n) total scattered uniformly over the
    m^d cells has exactly this law, and only occupied cells are touched.
    """
    total = rng.poisson(grid.n) if grid.n > 0 else 0
    if total == 0:
        return CellConfig(grid, np.zeros(0, dtype=np.int64), np.zeros(0, dtype=np.int64), seed)
    flat, counts = np.unique(rng.integers(0, grid.n_cells, size=total), return_counts=True)
    return CellConfig(grid, flat, counts, seed)


def sample_cell_config(grid, seed, replica=0):
    return draw_cell_config(grid, replica_rng(seed, replica), seed)


# =========================================================
# s-graded Edge Counts
# =========================================================
def _offset_products(cfg, offsets, left_mask=None, right_mask=None):
    """Per offset o: Σ_I X_I X_{I+o} over occupied I (optionally masked)."""
    coords = cfg.coords()
    x = cfg.counts
    out = []
    for o in offsets:
        partner = cfg.grid.ravel(coords + o)
        pos = np.clip(np.searchsorted(cfg.cells, partner), 0, len(cfg.cells) - 1)
        hit = cfg.cells[pos] == partner
        if left_mask is not None:
            hit &= left_mask
        if right_mask is not None:
            hit &= right_mask[pos]
        out.append(int(np.dot(x[hit], cfg.counts[pos[hit]])))
    return out


def pair_mass(cfg, left_mask=None, right_mask=None):
    """
    Σ_{I∈left} Σ_{J∈N_I∩right, J≠I} X_I X_J over ordered pairs, as an int.
    Masks are boolean arrays over the occupied cells of cfg.
    """
    if len(cfg.cells) == 0:
        return 0
    offsets = cfg.grid.offsets[cfg.grid.offsets.any(axis=1)]
    offsets = offsets[(offsets % cfg.grid.m).any(axis=1)]
    return sum(_offset_products(cfg, offsets, left_mask, right_mask))


def sgraded_edge_count(cfg):
    """
    |E_s| = Σ_I [C(X_I, 2) + ½ Σ_{0<d(I,J)≤s} X_I X_J], exact in Python ints.
    """
    if len(cfg.cells) == 0:
        return 0
    x = cfg.counts
    total = int(np.sum(x * (x - 1) // 2))
    if cfg.grid.nbhd_size > 1:
        halves, weights = _half_offsets(cfg.grid.offsets, cfg.grid.m, cfg.grid.dim)
        for product, weight in zip(_offset_products(cfg, halves), weights):
            # a self-inverse offset sees each pair from both ends
            total += product if weight == 2 else product // 2
    return total


def batched_sgraded_edge_counts(grid, counts):
    """
    |E_s| for each row of an (R × m^d) count array, summing X_I X_{I+o}
    over the rolled lattice for every nonzero neighbour offset.
    """
    X = np.asarray(counts, dtype=np.int64).reshape((-1,) + grid.shape)
    axes = tuple(range(1, grid.dim + 1))
    total = np.sum(X * (X - 1) // 2, axis=axes)
    offsets = grid.offsets[(grid.offsets % grid.m).any(axis=1)]
    pairs = np.zeros(len(X), dtype=np.int64)
    for o in offsets:
        pairs += np.sum(X * np.roll(X, tuple(-o), axis=axes), axis=axes)
    return total + pairs // 2


def expected_sgraded_edges(grid):
    """μ̃_s = |N_I| n² / (2 m^d), |N_I| counting I itself."""
    return grid.nbhd_size * grid.n**2 / (2.0 * grid.n_cells)


# =========================================================
# CellConfig CSV + JSON sidecar
# =========================================================
def dump_cell_config(cfg, csv_path, sidecar_path, extra=None):
    coords = cfg.coords()
    frame = pd.DataFrame(coords, columns=[f"i{k}" for k in range(cfg.grid.dim)])
    frame["count"] = cfg.counts
    frame.to_csv(csv_path, index=False)

    sidecar = {
        "n": cfg.grid.n,
        "r": cfg.grid.r,
        "s": cfg.grid.s,
        "m": cfg.grid.m,
        "D": cfg.grid.D,
        "norm": cfg.grid.norm.kind.value,
        "dim": cfg.grid.dim,
        "seed": cfg.seed,
    }
    sidecar.update(extra or {})
    with open(sidecar_path, "w") as handle:
        json.dump(sidecar, handle, indent=2)
    return sidecar


def grid_from_sidecar(sidecar, node_cap=None):
    norm = make_norm(sidecar["norm"], int(sidecar["dim"]))
    m, s = int(sidecar["m"]), int(sidecar["s"])
    return _make_grid(s, m, float(sidecar["n"]), float(sidecar["r"]), norm, m < 2 * s + 3, node_cap)


def load_cell_config(csv_source, sidecar):
    """Read a CellConfig CSV (path or file object) against its sidecar record."""
    if isinstance(sidecar, bytes):
        sidecar = sidecar.decode("utf-8")
    if isinstance(sidecar, os.PathLike) or (isinstance(sidecar, str) and not sidecar.lstrip().startswith("{")):
        with open(sidecar) as handle:
            sidecar = json.load(handle)
    elif isinstance(sidecar, str):
        sidecar = json.loads(sidecar)
    grid = grid_from_sidecar(sidecar)
    frame = pd.read_csv(csv_source)
    columns = [f"i{k}" for k in range(grid.dim)]
    missing = [c for c in columns + ["count"] if c not in frame.columns]
    if missing:
        raise ConfigError(f"cell config CSV is missing columns {missing}")
    if len(frame) == 0:
        return CellConfig(grid, np.zeros(0, dtype=np.int64), np.zeros(0, dtype=np.int64), sidecar.get("seed"))
    cells = frame[columns].to_numpy(dtype=np.int64)
    return CellConfig(grid, grid.ravel(cells), frame["count"].to_numpy(dtype=np.int64), sidecar.get("seed"))


# =========================================================
# Maximum Clique Sets
# =========================================================
def max_clique_set_size(grid):
    """
    τ̃_s, computed once when the grid was built. `grid.tau_exact` is False
    when the node cap stopped the search, and the value is then a lower bound.
    """
    return grid.tau_s


def _canonical_cliques(grid, node_cap):
    cap = clique_node_cap() if node_cap is None else node_cap
    if grid.coarse:
        result = search_torus(grid.norm.kind, grid.dim, grid.s, grid.m, cap, True)
    else:
        result = search_window(grid.norm.kind, grid.dim, grid.s, cap, True)
    if not result.exact:
        raise BudgetExceededError(
            f"clique enumeration for s={grid.s} stopped at {result.nodes} nodes (cap {cap})"
        )
    return result


def enumerate_max_clique_sets(grid, anchor, node_cap=None):
    """
    Every maximum-cardinality set of diameter ≤ s that contains `anchor`.

    Window searches return each set once, translated so its lexicographically
    smallest cell is the origin; shifting every member onto the anchor
    recovers all sets through it. Torus searches already fix cell 0.
    """
    anchor = np.asarray(anchor, dtype=np.int64).reshape(grid.dim)
    result = _canonical_cliques(grid, node_cap)

    seen = set()
    found = []
    for clique in result.cliques:
        members = np.asarray(clique, dtype=np.int64).reshape(-1, grid.dim)
        shifts = [np.zeros(grid.dim, dtype=np.int64)] if grid.coarse else list(members)
        for shift in shifts:
            flat = np.sort(grid.ravel(members - shift + anchor))
            key = tuple(int(f) for f in flat)
            if key in seen:
                continue
            seen.add(key)
            found.append(IndexSet(grid.m, grid.dim, flat))
    found.sort(key=lambda ix: tuple(ix.flat))
    logger.debug("enumerated %d maximum clique sets through %s", len(found), tuple(anchor))
    return found


def max_clique_shape(grid, node_cap=None):
    """Members of one maximum clique set, as offsets from its anchor cell."""
    if grid.coarse:
        result = _canonical_cliques(grid, node_cap)
    else:
        cap = clique_node_cap() if node_cap is None else node_cap
        result = search_window(grid.norm.kind, grid.dim, grid.s, cap, False)
    return np.asarray(result.cliques[0], dtype=np.int64).reshape(-1, grid.dim)


def random_max_clique_set(grid, rng, node_cap=None):
    """One maximum clique set translated onto a uniformly drawn anchor cell."""
    members = max_clique_shape(grid, node_cap)
    anchor = rng.integers(0, grid.m, size=grid.dim)
    return IndexSet(grid.m, grid.dim, grid.ravel(members + anchor))
