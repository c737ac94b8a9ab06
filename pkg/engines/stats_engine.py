# engines/stats_engine.py

import logging
import math
from dataclasses import asdict, dataclass

import numpy as np
from scipy import stats
from scipy.special import xlogy

from engines.errors import ConfigError, DisjointnessError
from engines.sgraded_engine import (
    CellConfig,
    IndexSet,
    expected_sgraded_edges,
    neighborhood,
    pair_mass,
    sgraded_edge_count,
)

logger = logging.getLogger(__name__)

DEFAULT_EPS_TILDE = 0.2


# =========================================================
# Derived Scales
# =========================================================
@dataclass(frozen=True)
class DerivedScales:
    n: float
    D: float
    mu_s: float
    tau_s: int
    p_hat: float
    delta_tilde: float
    q: float
    w: float
    a: float
    M: float
    z: float
    alpha: float
    beta: float
    gamma: float
    xi: float

    @property
    def n_z(self):
        return self.n**self.z

    @property
    def n_alpha(self):
        return self.n**self.alpha

    @property
    def n_beta(self):
        return self.n**self.beta

    @property
    def n_gamma(self):
        return self.n**self.gamma

    def to_dict(self):
        record = asdict(self)
        record.update(n_z=self.n_z, n_alpha=self.n_alpha, n_beta=self.n_beta, n_gamma=self.n_gamma)
        return record


def xi_for_eps(eps_tilde, tau_s):
    """ξ = min(ε̃⁴⁰, (2τ̃_s)⁻¹⁰, (2τ̃_s)⁻⁴/4)."""
    if not 0.0 < eps_tilde <= 1.0:
        raise ConfigError(f"eps_tilde must lie in (0, 1], got {eps_tilde}")
    two_tau = 2.0 * tau_s
    return min(eps_tilde**40, two_tau**-10, two_tau**-4 / 4.0)


def derive_scales(grid, delta_star=0.5, delta_tilde=1.0, eps_tilde=DEFAULT_EPS_TILDE, xi=None):
    """
    Every threshold of the event and extraction machinery for one grid.

    p̂ = log μ̃_s / log n stands in for the limit exponent p.
    """
    if grid.n <= 1.0:
        raise ConfigError("derived scales need n > 1")
    if delta_tilde <= 0:
        raise ConfigError("delta_tilde must be positive")
    mu_s = expected_sgraded_edges(grid)
    p = math.log(mu_s) / math.log(grid.n)
    a = delta_star / 25.0
    return DerivedScales(
        n=grid.n,
        D=grid.D,
        mu_s=mu_s,
        tau_s=grid.tau_s,
        p_hat=p,
        delta_tilde=float(delta_tilde),
        q=math.sqrt(2.0 * delta_tilde * mu_s),
        w=grid.tau_s * grid.D,
        a=a,
        M=max(grid.D, 1.0) * grid.n**a,
        z=max(p / 4.0, 3.0 * p / 4.0 - 0.5),
        alpha=min(1.0 - p / 2.0 - a / 2.0, p / 2.0 - a / 2.0),
        beta=p / 2.0 - a / 4.0,
        gamma=p - 2.0 * a,
        xi=xi_for_eps(eps_tilde, grid.tau_s) if xi is None else float(xi),
    )


# =========================================================
# Poisson Rate Function
# =========================================================
def rate_Y(x, D):
    """Y = x(log(x/D) − 1) + D with 0·log 0 = 0; vectorised over x."""
    if D <= 0:
        raise ConfigError(f"cell mean D must be positive, got {D}")
    x = np.asarray(x, dtype=float)
    out = xlogy(x, x / D) - x + D
    return float(out) if out.ndim == 0 else out


# =========================================================
# Index-set Functionals
# =========================================================
def _mask(index_set, cfg):
    return index_set.members(cfg.cells)


def _check_disjoint(W, W2):
    if W.complement and W2.complement:
        union = np.union1d(W.flat, W2.flat)
        overlap = W.n_cells - len(union) > 0
    elif W.complement:
        overlap = not np.all(np.isin(W2.flat, W.flat))
    elif W2.complement:
        overlap = not np.all(np.isin(W.flat, W2.flat))
    else:
        overlap = len(np.intersect1d(W.flat, W2.flat)) > 0
    if overlap:
        raise DisjointnessError("index sets must be disjoint")


def internal_edges(W, cfg):
    """Σ_{I∈W}[C(X_I, 2) + ½ Σ_{J∈N_I∩W, J≠I} X_I X_J], exact int."""
    mask = _mask(W, cfg)
    x = cfg.counts[mask]
    return int(np.sum(x * (x - 1) // 2)) + pair_mass(cfg, mask, mask) // 2


def cross_edges(W, W2, cfg):
    """Σ_{I∈W} Σ_{J∈N_I∩W′} X_I X_J for disjoint W, W′, exact int."""
    _check_disjoint(W, W2)
    return pair_mass(cfg, _mask(W, cfg), _mask(W2, cfg))


def Q_internal(W, cfg, scales):
    return 2.0 * internal_edges(W, cfg) / scales.q**2


def Q_cross(W, W2, cfg, scales):
    return 2.0 * cross_edges(W, W2, cfg) / scales.q**2


def vertex_mass(W, cfg):
    return int(cfg.counts[_mask(W, cfg)].sum())


def V_count(W, cfg, scales):
    return vertex_mass(W, cfg) / scales.q


def h_frac(W, grid):
    return len(W) / grid.tau_s


def P_excess(I, W, cfg, scales):
    """(1/q) Σ_{J∈W, d(I,J)>s} X_J."""
    near = neighborhood(I, cfg.grid)
    in_w = _mask(W, cfg)
    far = in_w & ~near.members(cfg.cells)
    return float(cfg.counts[far].sum()) / scales.q


def y_mass(W, cfg, scales):
    """Σ_{I∈W} Y_I, empty cells contributing Y = D each."""
    mask = _mask(W, cfg)
    occupied = int(mask.sum())
    total = float(np.sum(rate_Y(cfg.counts[mask], scales.D))) if occupied else 0.0
    return total + (len(W) - occupied) * scales.D


def jensen_lower_bound(W, cfg, scales):
    """
    V(W)[log(q/w) + log V(W) − log h(W) − 1], a lower bound for (1/q)Σ_{I∈W} Y_I.

    The bound drops the +D of every Y_I, so at a uniform W the gap to
    (1/q)ΣY_I is exactly |W|D/q.
    """
    if len(W) == 0:
        raise ValueError("jensen bound needs a nonempty index set")
    V = V_count(W, cfg, scales)
    h = len(W) / scales.tau_s
    return float(V * (math.log(scales.q / scales.w) - math.log(h) - 1.0) + xlogy(V, V))


# =========================================================
# Poisson Tails
# =========================================================
def _check_side(side):
    if side not in ("upper", "lower"):
        raise ConfigError(f"side must be 'upper' or 'lower', got {side!r}")


def poisson_tail_bound(D, t, side="upper"):
    """
    Chernoff bound exp(−t[log(t/D) − 1] − D) on P(X > t) (upper, t ≥ D) or
    P(X < t) (lower, t ≤ D).
    """
    _check_side(side)
    if D <= 0 or t < 0:
        raise ConfigError("Poisson tail needs D > 0 and t ≥ 0")
    if side == "upper" and t < D:
        raise ConfigError(f"upper tail bound needs t ≥ D, got t={t}, D={D}")
    if side == "lower" and t > D:
        raise ConfigError(f"lower tail bound needs t ≤ D, got t={t}, D={D}")
    return math.exp(-(xlogy(t, t / D) - t) - D)


def exact_poisson_tail(D, t, side="upper"):
    """P(X > t) or P(X < t) for X ~ Poisson(D), by scipy's summation."""
    _check_side(side)
    if D <= 0:
        raise ConfigError("Poisson tail needs D > 0")
    if side == "upper":
        return float(stats.poisson.sf(math.floor(t), D))
    return float(stats.poisson.cdf(math.ceil(t) - 1, D))


def log_exact_poisson_tail(D, t, side="upper"):
    _check_side(side)
    if side == "upper":
        return float(stats.poisson.logsf(math.floor(t), D))
    return float(stats.poisson.logcdf(math.ceil(t) - 1, D))


# =========================================================
# Events L / A / B / D
# =========================================================
def edge_threshold_L(scales):
    return (1.0 + scales.delta_tilde) * scales.mu_s


def event_L(cfg, scales):
    return sgraded_edge_count(cfg) >= edge_threshold_L(scales)


def large_cells(cfg, scales):
    """Boolean mask over occupied cells with X_I > M."""
    return cfg.counts > scales.M


def event_A(cfg, scales):
    return int(large_cells(cfg, scales).sum()) > scales.n_alpha


def _top_y_sum(cfg, scales):
    k = int(math.floor(scales.n_alpha))
    if k <= 0:
        return 0.0
    y = rate_Y(cfg.counts, scales.D) if len(cfg.counts) else np.zeros(0)
    empties = min(k, cfg.grid.n_cells - len(cfg.counts))
    pool = np.concatenate([np.atleast_1d(y), np.full(empties, scales.D)])
    if len(pool) <= k:
        return float(pool.sum())
    return float(np.partition(pool, len(pool) - k)[-k:].sum())


def threshold_B(scales):
    return scales.q * (math.log(scales.q / scales.w) - 1.0) + scales.n_beta


def event_B(cfg, scales):
    return _top_y_sum(cfg, scales) > threshold_B(scales)


def truncate(cfg, scales):
    """Ê: every cell with X_I > M emptied."""
    return cfg.restrict(~large_cells(cfg, scales))


def event_D(cfg, scales):
    return sgraded_edge_count(truncate(cfg, scales)) > scales.mu_s + scales.n_gamma


def event_profile(cfg, scales):
    """The four event flags with the statistic and threshold behind each."""
    edges = sgraded_edge_count(cfg)
    n_large = int(large_cells(cfg, scales).sum())
    top_y = _top_y_sum(cfg, scales)
    truncated = sgraded_edge_count(truncate(cfg, scales))
    return {
        "L": {"value": edges, "threshold": edge_threshold_L(scales), "hit": edges >= edge_threshold_L(scales)},
        "A": {"value": n_large, "threshold": scales.n_alpha, "hit": n_large > scales.n_alpha},
        "B": {"value": top_y, "threshold": threshold_B(scales), "hit": top_y > threshold_B(scales)},
        "D": {
            "value": truncated,
            "threshold": scales.mu_s + scales.n_gamma,
            "hit": truncated > scales.mu_s + scales.n_gamma,
        },
    }


def whole_torus(grid):
    return IndexSet(grid.m, grid.dim, np.zeros(0, dtype=np.int64), complement=True)


def empty_config(grid, seed=None):
    return CellConfig(grid, np.zeros(0, dtype=np.int64), np.zeros(0, dtype=np.int64), seed)
