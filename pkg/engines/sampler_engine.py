# engines/sampler_engine.py

import itertools
import logging
import math
from dataclasses import asdict, dataclass

import numpy as np
from scipy import stats

from engines.errors import BudgetExceededError, ConfigError
from engines.geometry_engine import torus_distance
from engines.process_engine import PointSet, edge_count, sample_points
from engines.replica_engine import replica_rng, run_replicas
from engines.sgraded_engine import (
    cell_metric,
    batched_sgraded_edge_counts,
    draw_cell_config,
    expected_sgraded_edges,
    max_clique_shape,
    random_max_clique_set,
    sgraded_edge_count,
)

logger = logging.getLogger(__name__)

TAIL_SCHEMA = "tail_estimate.v1"
MIN_REPLICAS = 100
MIN_ESS = 10.0
# exact oracle guards and truncation target
TINY_MAX_CELLS = 6
TINY_MAX_D = 5.0
TINY_TRUNCATION = 1e-10
TINY_INNER_BLOCK = 1_000_000
# grids up to this many cells sample replicas as dense (R × m^d) batches
BATCH_MAX_CELLS = 65_536
BATCH_BUDGET = 2_000_000


# =========================================================
# Records
# =========================================================
@dataclass(frozen=True)
class WeightedSample:
    config: object
    log_weight: float
    replica: int
    planted: bool = False


@dataclass(frozen=True)
class TailEstimate:
    t: float
    threshold: float
    estimate: float
    log_prob: float
    std_err: float
    log_std_err: float
    n_replicas: int
    method: str
    ess: float = math.nan
    reliable: bool = True
    truncation_error: float = 0.0
    seed: int = None

    def to_dict(self):
        record = {"schema": TAIL_SCHEMA}
        record.update(asdict(self))
        return record


def _estimate_from(hits, log_weights, t, threshold, method, seed):
    """
    Weighted mean of the event indicators with its standard error and ESS.
    Weights are rescaled by their largest hit in log space so tails far
    below float range keep a finite log_prob.
    """
    hits = np.asarray(hits, dtype=bool)
    log_weights = np.asarray(log_weights, dtype=float)
    R = len(hits)
    if not hits.any():
        logger.warning("⚠️ %s estimate unreliable: no replica reached the event", method)
        return TailEstimate(float(t), float(threshold), 0.0, -math.inf, 0.0, math.inf, R, method, 0.0, False, 0.0, seed)

    shift = float(log_weights[hits].max())
    scaled = np.where(hits, np.exp(np.where(hits, log_weights, shift) - shift), 0.0)
    mean = float(scaled.mean())
    spread = float(scaled.std(ddof=1) / math.sqrt(R)) if R > 1 else 0.0
    ess = float(scaled.sum() ** 2 / np.sum(scaled**2))
    reliable = ess >= MIN_ESS
    if not reliable:
        logger.warning("⚠️ %s estimate unreliable: effective sample size %.1f < %g", method, ess, MIN_ESS)
    log_prob = shift + math.log(mean)
    return TailEstimate(
        float(t), float(threshold), math.exp(log_prob), log_prob, math.exp(shift) * spread, spread / mean,
        R, method, ess, reliable, 0.0, seed,
    )


# =========================================================
# Rejection
# =========================================================
@dataclass(frozen=True)
class RejectionResult:
    accepted: list
    consumed: int
    acceptance_rate: float
    status: str
    edge_counts: tuple


def rejection_conditional(grid, threshold, budget, seed):
    """Draw `budget` nominal configs and keep those with |E_s| ≥ threshold."""
    if budget < 1:
        raise ConfigError("rejection budget must be at least 1")

    def _draw(rng, replica):
        cfg = draw_cell_config(grid, rng, seed)
        edges = sgraded_edge_count(cfg)
        return edges, cfg if edges >= threshold else None

    draws = run_replicas(_draw, seed, budget)
    accepted = [cfg for _, cfg in draws if cfg is not None]
    status = "ok" if accepted else "no_acceptances"
    if not accepted:
        logger.warning("⚠️ rejection sampler accepted nothing in %d draws (threshold %.6g)", budget, threshold)
    return RejectionResult(accepted, budget, len(accepted) / budget, status, tuple(e for e, _ in draws))


def rejection_estimate_tail(grid, t, replicas, seed):
    threshold = (1.0 + t) * expected_sgraded_edges(grid)
    result = rejection_conditional(grid, threshold, replicas, seed)
    hits = np.asarray(result.edge_counts, dtype=float) >= threshold
    return _estimate_from(hits, np.zeros(len(hits)), t, threshold, "rejection", seed)


# =========================================================
# Planted / Tilted Cell Sampler
# =========================================================
def planted_mean(grid, t, slack=True):
    """D′ = (√(2 t μ̃_s) + n^z) / τ̃_s with z from p̂ = log μ̃_s / log n."""
    mu_s = expected_sgraded_edges(grid)
    extra = 0.0
    if slack and grid.n > 1.0 and mu_s > 0:
        p = math.log(mu_s) / math.log(grid.n)
        extra = grid.n ** max(p / 4.0, 3.0 * p / 4.0 - 0.5)
    return (math.sqrt(2.0 * max(t, 0.0) * mu_s) + extra) / grid.tau_s


def _mixture_log_weight(llr, mixture):
    """log of dP/dQ for Q = ½P + ½P′ (or Q = P′ when mixture is off)."""
    if mixture:
        return math.log(2.0) - float(np.logaddexp(0.0, llr))
    return -llr


def _plant(grid, rng, D_prime, planted):
    """One draw from the nominal or the tilted law plus the tilted/nominal log-ratio."""
    frakK = random_max_clique_set(grid, rng)
    cfg = draw_cell_config(grid, rng)
    if planted:
        cfg = cfg.replace_cells(frakK.flat, rng.poisson(D_prime, size=len(frakK.flat)))
    x = cfg.count_at(frakK.flat)
    llr = float(np.sum(x) * math.log(D_prime / grid.D) - len(x) * (D_prime - grid.D))
    return cfg, llr


def planted_cell_sampler(grid, t, seed, replica=0, slack=True, mixture=True):
    """
    A tilted draw: Poisson(D′) on a uniformly anchored maximal clique set 𝔎,
    Poisson(D) elsewhere, weighted back to the nominal law.
    """
    if t <= 0:
        raise ConfigError("planting needs t > 0")
    rng = replica_rng(seed, replica)
    D_prime = planted_mean(grid, t, slack)
    if D_prime <= grid.D:
        logger.warning("⚠️ D′=%.6g ≤ D=%.6g: nothing to plant, returning a nominal draw", D_prime, grid.D)
        return WeightedSample(draw_cell_config(grid, rng, seed), 0.0, replica, False)
    cfg, llr = _plant(grid, rng, D_prime, True)
    return WeightedSample(cfg, _mixture_log_weight(llr, mixture), replica, True)


def _importance_batches(grid, D_prime, tilt, replicas, seed):
    """
    Mixture-proposal draws as dense count arrays. Batch k of `batch` rows
    uses stream (seed, k), so results depend only on seed and replicas.
    """
    batch = max(1, BATCH_BUDGET // grid.n_cells)
    members = max_clique_shape(grid) if tilt else None
    edges, log_weights = [], []
    for k, start in enumerate(range(0, replicas, batch)):
        rng = replica_rng(seed, k)
        rows = min(batch, replicas - start)
        X = rng.poisson(grid.D, size=(rows, grid.n_cells))
        if not tilt:
            edges.append(batched_sgraded_edge_counts(grid, X))
            log_weights.append(np.zeros(rows))
            continue

        anchors = rng.integers(0, grid.m, size=(rows, 1, grid.dim))
        flat = grid.ravel((members[None] + anchors).reshape(-1, grid.dim)).reshape(rows, -1)
        planted = rng.random(rows) < 0.5
        tilted = rng.poisson(D_prime, size=flat.shape)
        lanes = np.arange(rows)[:, None]
        X[lanes[planted], flat[planted]] = tilted[planted]

        x = X[lanes, flat]
        llr = x.sum(axis=1) * math.log(D_prime / grid.D) - flat.shape[1] * (D_prime - grid.D)
        edges.append(batched_sgraded_edge_counts(grid, X))
        log_weights.append(math.log(2.0) - np.logaddexp(0.0, llr))
    return np.concatenate(edges).astype(float), np.concatenate(log_weights)


def importance_estimate_tail(grid, t, replicas, seed, slack=True, threshold=None):
    """
    Unbiased estimate of P(|E_s| ≥ (1+t)μ̃_s) under the proposal
    ½·nominal + ½·planted. Each replica draws its own anchor, and the weight
    uses the mixture density for that anchor.
    """
    if replicas < MIN_REPLICAS:
        raise ConfigError(f"importance sampling needs at least {MIN_REPLICAS} replicas")
    if threshold is None:
        threshold = (1.0 + t) * expected_sgraded_edges(grid)
    D_prime = planted_mean(grid, t, slack)
    tilt = D_prime > grid.D
    if not tilt:
        logger.warning("⚠️ D′=%.6g ≤ D=%.6g: importance sampler runs nominal only", D_prime, grid.D)

    if grid.n_cells <= BATCH_MAX_CELLS:
        edges, log_weights = _importance_batches(grid, D_prime, tilt, replicas, seed)
    else:
        def _one(rng, replica):
            if not tilt:
                cfg = draw_cell_config(grid, rng)
                return sgraded_edge_count(cfg), 0.0
            planted = bool(rng.random() < 0.5)
            cfg, llr = _plant(grid, rng, D_prime, planted)
            return sgraded_edge_count(cfg), _mixture_log_weight(llr, True)

        draws = run_replicas(_one, seed, replicas)
        edges = np.array([e for e, _ in draws], dtype=float)
        log_weights = np.array([lw for _, lw in draws])
    hit = edges >= threshold
    logger.info("✅ importance estimate t=%g: %d/%d replicas in the event", t, int(hit.sum()), replicas)
    return _estimate_from(hit, log_weights, t, threshold, "importance", seed)


# =========================================================
# Exact Oracle on Tiny Grids
# =========================================================
def _truncation_level(D, cells):
    K = max(1, int(math.ceil(D)))
    while cells * stats.poisson.sf(K, D) > TINY_TRUNCATION:
        K += 1
    return K


def exact_tail_tiny(grid, threshold):
    """
    P(|E_s| ≥ threshold) by enumerating every count vector with X_I ≤ K.
    |E_s| = ½(XᵀAX − ΣX) with A the closed neighbourhood matrix.
    """
    N = grid.n_cells
    if N > TINY_MAX_CELLS or grid.D > TINY_MAX_D:
        raise BudgetExceededError(f"exact oracle limited to m^d ≤ {TINY_MAX_CELLS} and D ≤ {TINY_MAX_D}")
    if threshold <= 0:
        return TailEstimate(0.0, float(threshold), 1.0, 0.0, 0.0, 0.0, 0, "exact")

    cells = grid.unravel(np.arange(N))
    adjacency = (cell_metric(cells[:, None, :], cells[None, :, :], grid) <= grid.s).astype(np.int64)
    K = _truncation_level(grid.D, N)
    values = np.arange(K + 1)
    log_pmf = stats.poisson.logpmf(values, grid.D)

    n_inner = N
    while n_inner > 1 and (K + 1) ** n_inner > TINY_INNER_BLOCK:
        n_inner -= 1
    inner = np.stack([g.ravel() for g in np.meshgrid(*[values] * n_inner, indexing="ij")], axis=-1)
    inner_logp = log_pmf[inner].sum(axis=1)

    hit_mass = 0.0
    total_mass = 0.0
    for outer in itertools.product(values, repeat=N - n_inner):
        outer = np.asarray(outer, dtype=np.int64)
        X = np.concatenate([np.broadcast_to(outer, (len(inner), len(outer))), inner], axis=1)
        prob = np.exp(inner_logp + log_pmf[outer].sum())
        edges = (np.einsum("ki,ij,kj->k", X, adjacency, X) - X.sum(axis=1)) // 2
        hit_mass += float(prob[edges >= threshold].sum())
        total_mass += float(prob.sum())

    truncation = max(0.0, 1.0 - total_mass)
    log_prob = math.log(hit_mass) if hit_mass > 0 else -math.inf
    return TailEstimate(0.0, float(threshold), hit_mass, log_prob, 0.0, 0.0, 0, "exact", math.nan, True, truncation)


# =========================================================
# Continuum Samplers
# =========================================================
def _slack_exponent(params):
    p = params.p_hat
    return max(p / 4.0, 3.0 * p / 4.0 - 0.5)


def planted_count(params, delta, slack=True):
    """⌈√(2δμ) + n^z⌉."""
    extra = params.n ** _slack_exponent(params) if slack else 0.0
    return int(math.ceil(math.sqrt(2.0 * delta * params.mu) + extra))


def _uniform_in_ball(rng, centre, radius, norm, count):
    out = np.zeros((0, norm.dim))
    while len(out) < count:
        need = count - len(out)
        cube = rng.uniform(-radius, radius, size=(2 * need + 16, norm.dim))
        out = np.vstack([out, cube[norm.of(cube) <= radius][:need]])
    pts = (np.asarray(centre) + out) % 1.0
    # float wraparound of tiny negatives lands on 1.0
    pts[pts >= 1.0] = 0.0
    return pts


def planted_continuum_sampler(params, delta, seed, replica=0, center=None, slack=True):
    """Nominal PPP plus ⌈√(2δμ) + n^z⌉ uniform points in a ball of diameter r."""
    norm = params.norm
    rng = replica_rng(seed, replica)
    centre = np.full(norm.dim, 0.5) if center is None else np.asarray(center, dtype=float) % 1.0
    background = sample_points(rng, params.n, norm.dim)
    k = planted_count(params, delta, slack)
    planted = _uniform_in_ball(rng, centre, params.r / 2.0, norm, k)
    points = np.vstack([background, planted])
    return PointSet(points, params.n, int(seed), norm, int(replica), k, tuple(float(c) for c in centre))


def importance_estimate_continuum_tail(params, t, replicas, seed, slack=True):
    """
    Unbiased estimate of P(|E| ≥ (1+t)μ) with proposal ½·nominal + ½·tilted,
    the tilt raising the Poisson mean inside a uniformly placed ball B of
    diameter r from nτ to √(2tμ) + n^z.
    """
    if replicas < MIN_REPLICAS:
        raise ConfigError(f"importance sampling needs at least {MIN_REPLICAS} replicas")
    norm, r, n = params.norm, params.r, params.n
    threshold = (1.0 + t) * params.mu
    base = n * params.tau
    tilted = math.sqrt(2.0 * t * params.mu) + (n ** _slack_exponent(params) if slack else 0.0)
    tilt = tilted > base
    if not tilt:
        logger.warning("⚠️ tilted ball mean %.6g ≤ nτ=%.6g: sampling nominal only", tilted, base)

    def _one(rng, replica):
        pts = sample_points(rng, n, norm.dim)
        if not tilt:
            ps = PointSet(pts, n, int(seed), norm, replica)
            return edge_count(ps, r, norm), 0.0
        centre = rng.random(norm.dim)
        planted = bool(rng.random() < 0.5)
        if planted:
            outside = torus_distance(pts, centre, norm) > r / 2.0 if len(pts) else np.zeros(0, dtype=bool)
            inside = _uniform_in_ball(rng, centre, r / 2.0, norm, int(rng.poisson(tilted)))
            pts = np.vstack([pts[np.atleast_1d(outside)], inside])
        k_B = int(np.count_nonzero(np.atleast_1d(torus_distance(pts, centre, norm)) <= r / 2.0)) if len(pts) else 0
        llr = k_B * math.log(tilted / base) - (tilted - base)
        ps = PointSet(pts, n, int(seed), norm, replica)
        return edge_count(ps, r, norm), _mixture_log_weight(llr, True)

    draws = run_replicas(_one, seed, replicas)
    edges = np.array([e for e, _ in draws], dtype=float)
    log_weights = np.array([lw for _, lw in draws])
    hit = edges >= threshold
    return _estimate_from(hit, log_weights, t, threshold, "importance_continuum", seed)
