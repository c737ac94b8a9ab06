# engines/extract_engine.py

import itertools
import logging
import math
from dataclasses import dataclass, field

import numpy as np
from scipy.spatial import cKDTree

from engines.errors import InsufficientMassError
from engines.geometry_engine import Ball, BallBox, Box, NormKind, probe_measure, torus_distance
from engines.process_engine import count_in_probe, edge_count
from engines.sgraded_engine import IndexSet, build_grid, coarsen, index_set_diameter
from engines.stats_engine import Q_cross, Q_internal, V_count, derive_scales

logger = logging.getLogger(__name__)

THM2_SCHEMA = "thm2_report.v1"
THM1_SCHEMA = "thm1_report.v1"

# clause (a) sub-ball radii as fractions of A's radius
SUB_BALL_FRACTIONS = (0.75, 0.5, 0.25)
# centre refinement: 5 steps of r/16 per axis around the centroid
REFINE_STEPS = (-2, -1, 0, 1, 2)
REFINE_STEP_OF_R = 1.0 / 16.0
MAX_TILES = 250_000
PROFILE_TAIL = 20


# =========================================================
# 𝔦 → 𝔗 → 𝔓
# =========================================================
def _empty_set(grid):
    return IndexSet(grid.m, grid.dim, np.zeros(0, dtype=np.int64))


def extract_bulk_exceedance(cfg, scales):
    """𝔦 = {I : X_I > M}."""
    return IndexSet(cfg.grid.m, cfg.grid.dim, cfg.cells[cfg.counts > scales.M])


def mass_threshold(scales):
    return 1.0 - 2.0 * scales.xi / math.log(scales.n)


def extract_T(cfg, frakI, scales):
    """
    Shortest prefix of 𝔦, sorted by X_I descending with ties in lexicographic
    cell order, whose V exceeds 1 − 2ξ/log n.
    """
    counts = cfg.count_at(frakI.flat)
    order = np.lexsort((frakI.flat, -counts))
    mass = np.cumsum(counts[order]) / scales.q
    above = np.flatnonzero(mass > mass_threshold(scales))
    if len(above) == 0:
        total = float(mass[-1]) if len(mass) else 0.0
        raise InsufficientMassError(
            f"V(𝔦) = {total:.6g} does not exceed {mass_threshold(scales):.6g}"
        )
    return IndexSet(cfg.grid.m, cfg.grid.dim, frakI.flat[order[:above[0] + 1]])


def extract_P(cfg, frakT, scales):
    """𝔓 = {I ∈ 𝔗 : X_I > ξ^{1/4} q / τ̃_s}."""
    counts = cfg.count_at(frakT.flat)
    keep = counts > scales.xi**0.25 * scales.q / scales.tau_s
    return IndexSet(cfg.grid.m, cfg.grid.dim, frakT.flat[keep])


# =========================================================
# Clique-set Certificate
# =========================================================
@dataclass(frozen=True)
class LocalizationReport:
    frakI: IndexSet
    frakT: IndexSet
    frakP: IndexSet
    diamP: int
    cardP: int
    max_dev_inside: float
    max_ratio_outside: float
    QP: float
    thm2_pass: bool
    eps_tilde: float
    failure_mode: str = None
    scales: dict = field(default_factory=dict, compare=False)

    def to_dict(self):
        return {
            "schema": THM2_SCHEMA,
            "thm2_pass": self.thm2_pass,
            "failure_mode": self.failure_mode,
            "eps_tilde": self.eps_tilde,
            "cardI": len(self.frakI),
            "cardT": len(self.frakT),
            "cardP": self.cardP,
            "diamP": self.diamP,
            "max_dev_inside": self.max_dev_inside,
            "max_ratio_outside": self.max_ratio_outside,
            "QP": self.QP,
            "frakP": self.frakP.as_list(),
            "scales": self.scales,
        }


def _failure_mode(diamP, cardP, dev, ratio, grid, eps_tilde):
    if diamP > grid.s:
        return "diameter"
    if cardP < grid.tau_s:
        return "cardinality"
    if not dev < eps_tilde:
        return "deviation_inside"
    if not ratio <= eps_tilde:
        return "mass_outside"
    return None


def certify_thm2(cfg, grid, scales, eps_tilde):
    """
    Run the extraction pipeline and test whether 𝔓 is a maximal clique set
    carrying near-uniform mass q/τ̃_s per cell with nothing comparable outside.

    Non-localized configurations come back with thm2_pass=False and the
    failing clause in failure_mode.
    """
    frakI = extract_bulk_exceedance(cfg, scales)
    try:
        frakT = extract_T(cfg, frakI, scales)
    except InsufficientMassError as exc:
        logger.debug("extraction stopped: %s", exc)
        outside = cfg.counts.max() * scales.tau_s / scales.q if len(cfg.counts) else 0.0
        return LocalizationReport(
            frakI, _empty_set(grid), _empty_set(grid), 0, 0, math.inf, float(outside),
            0.0, False, float(eps_tilde), "insufficient_mass", scales.to_dict(),
        )
    frakP = extract_P(cfg, frakT, scales)

    inside = frakP.members(cfg.cells)
    ratio_in = cfg.counts[inside] * scales.tau_s / scales.q
    ratio_out = cfg.counts[~inside] * scales.tau_s / scales.q
    dev = float(np.abs(ratio_in - 1.0).max()) if len(ratio_in) else math.inf
    outside = float(ratio_out.max()) if len(ratio_out) else 0.0
    diamP = index_set_diameter(frakP, grid)
    cardP = len(frakP)

    mode = _failure_mode(diamP, cardP, dev, outside, grid, eps_tilde)
    return LocalizationReport(
        frakI, frakT, frakP, diamP, cardP, dev, outside,
        Q_internal(frakP, cfg, scales), mode is None, float(eps_tilde), mode, scales.to_dict(),
    )


def localization_profile(cfg, grid, scales, eps_tilde=0.2):
    """Q/V split around 𝔓 plus the largest cell counts, for plots and records."""
    report = certify_thm2(cfg, grid, scales, eps_tilde)
    P = report.frakP
    tail = np.sort(cfg.counts)[::-1][:PROFILE_TAIL]
    return {
        "thm2_pass": report.thm2_pass,
        "failure_mode": report.failure_mode,
        "cardP": report.cardP,
        "Q_P": Q_internal(P, cfg, scales),
        "Q_P_Pc": Q_cross(P, P.invert(), cfg, scales),
        "Q_Pc": Q_internal(P.invert(), cfg, scales),
        "V_P": V_count(P, cfg, scales),
        "top_counts": [int(x) for x in tail],
    }


# =========================================================
# Ball Certificate (continuum)
# =========================================================
def _neighbourhood_sums(cfg):
    """S_I = Σ_{J∈N_I} X_J for every occupied I."""
    coords = cfg.coords()
    sums = np.zeros(len(cfg.cells), dtype=np.int64)
    for o in cfg.grid.offsets:
        sums += cfg.count_at(cfg.grid.ravel(coords + o))
    return sums


def _densest_window(cfg, frakP):
    sums = _neighbourhood_sums(cfg)
    pool = frakP.members(cfg.cells) if len(frakP) else np.ones(len(cfg.cells), dtype=bool)
    candidates = np.flatnonzero(pool)
    best = candidates[np.argmax(sums[candidates])]
    anchor = cfg.grid.unravel(cfg.cells[best])
    return (anchor + cfg.grid.offsets) % cfg.grid.m


def _torus_centroid(points, reference):
    rel = (points - reference + 0.5) % 1.0 - 0.5
    return (reference + rel.mean(axis=0)) % 1.0


def _refine_centre(tree, centre, r, norm):
    steps = np.array(list(itertools.product(REFINE_STEPS, repeat=norm.dim)), dtype=float)
    candidates = (centre + steps * r * REFINE_STEP_OF_R) % 1.0
    counts = tree.query_ball_point(candidates, r / 2.0, p=norm.order, return_length=True)
    return candidates[int(np.argmax(counts))]


def _inscribed_half_side(radius, norm):
    if norm.kind is NormKind.LINF:
        return radius
    if norm.kind is NormKind.L2:
        return radius / math.sqrt(norm.dim)
    return radius / norm.dim


def probe_family(A):
    """Convex probes inside A: A, shrunken balls, half-slabs and the inscribed cube."""
    norm, rho = A.norm, A.radius
    centre = np.asarray(A.center)
    probes = [("A", A)]
    for f in SUB_BALL_FRACTIONS:
        probes.append((f"ball{f}", Ball(centre, f * rho, norm)))
        for k in range(norm.dim):
            for sign in (1, -1):
                shifted = centre.copy()
                shifted[k] += sign * (1.0 - f) * rho
                probes.append((f"ball{f}_{'+' if sign > 0 else '-'}{k}", Ball(shifted, f * rho, norm)))
    for k in range(norm.dim):
        for sign in (1, -1):
            corner = centre - rho
            sides = np.full(norm.dim, 2.0 * rho)
            sides[k] = rho
            if sign > 0:
                corner[k] = centre[k]
            probes.append((f"half_{'+' if sign > 0 else '-'}{k}", BallBox(A, Box(corner, sides))))
    h = _inscribed_half_side(rho, norm)
    probes.append(("cube", Box(centre - h, np.full(norm.dim, 2.0 * h))))
    return probes


def _tile_centres(r, dim):
    k = min(math.ceil(2.0 / r), int(MAX_TILES ** (1.0 / dim)))
    axis = (np.arange(k) + 0.5) / k
    return np.stack([g.ravel() for g in np.meshgrid(*[axis] * dim, indexing="ij")], axis=-1)


def certify_thm1(ps, params, delta, eps, s=5, grid=None, node_cap=None):
    """
    Locate a candidate ball A of diameter r and test both clauses: probes
    inside A carry √(2δμ)·λ(S)/τ points up to ε, and balls away from A stay
    below ε·√(2δμ).
    """
    norm, r, mu, tau = params.norm, params.r, params.mu, params.tau
    target = math.sqrt(2.0 * delta * mu)
    if ps.count == 0:
        return {
            "schema": THM1_SCHEMA,
            "thm1_pass": False,
            "failure_mode": "empty",
            "count_A": 0,
            "target": target,
        }

    grid = grid or build_grid(params, s, node_cap=node_cap)
    cfg = coarsen(ps, grid)
    scales = derive_scales(grid, params.delta_star, delta_tilde=delta, eps_tilde=eps)
    report = certify_thm2(cfg, grid, scales, eps)

    window = _densest_window(cfg, report.frakP)
    window_set = IndexSet(grid.m, grid.dim, grid.ravel(window))
    cells = np.minimum((ps.points * grid.m).astype(np.int64), grid.m - 1)
    in_window = window_set.members(grid.ravel(cells))
    reference = (window[0] + 0.5) / grid.m
    centre = _torus_centroid(ps.points[in_window], reference)

    tree = cKDTree(ps.points, boxsize=1.0)
    centre = _refine_centre(tree, centre, r, norm)
    A = Ball(centre, r / 2.0, norm)

    # clause (a)
    worst_a, worst_probe, n_probes, margin_A = 0.0, None, 0, None
    for name, probe in probe_family(A):
        lam = probe_measure(probe)
        if lam <= eps / 16.0 * tau:
            continue
        n_probes += 1
        margin = abs(count_in_probe(ps, probe) / target - lam / tau)
        if name == "A":
            margin_A = margin
        if margin >= worst_a:
            worst_a, worst_probe = margin, name

    # clause (b)
    tiles = _tile_centres(r, norm.dim)
    tiles = tiles[np.atleast_1d(torus_distance(tiles, centre, norm)) > r]
    counts_b = tree.query_ball_point(tiles, r / 2.0, p=norm.order, return_length=True)
    worst_idx = int(np.argmax(counts_b)) if len(tiles) else None
    worst_b = float(counts_b[worst_idx]) / target if worst_idx is not None else 0.0

    count_A = count_in_probe(ps, A)
    edges = edge_count(ps, r, norm)
    inside_edges = count_A * (count_A - 1) // 2
    excess = edges - mu
    clause_a = worst_a < eps
    clause_b = worst_b < eps

    logger.info(
        "✅ ball certificate: |χ(A)|=%d target=%.1f margin(A)=%.4f worst(b)=%.4f",
        count_A, target, margin_A, worst_b,
    )
    return {
        "schema": THM1_SCHEMA,
        "thm1_pass": bool(clause_a and clause_b),
        "failure_mode": None if clause_a and clause_b else ("clause_a" if not clause_a else "clause_b"),
        "center": [float(c) for c in centre],
        "radius": A.radius,
        "count_A": count_A,
        "target": target,
        "clause_a": {
            "pass": bool(clause_a),
            "pass_A": bool(margin_A < eps),
            "margin_A": margin_A,
            "worst_margin": worst_a,
            "worst_probe": worst_probe,
            "n_probes": n_probes,
        },
        "clause_b": {
            "pass": bool(clause_b),
            "worst_ratio": worst_b,
            "worst_center": [float(c) for c in tiles[worst_idx]] if worst_idx is not None else None,
            "n_tiles": int(len(tiles)),
        },
        "clique_size": count_A,
        "edges": edges,
        "mu": mu,
        "excess_share_in_A": inside_edges / excess if excess > 0 else None,
        "thm2": report.to_dict(),
    }
