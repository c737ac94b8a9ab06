# engines/verify_engine.py

import logging
import math
import time

import numpy as np

from engines.clique_engine import search_window
from engines.extract_engine import certify_thm1, certify_thm2
from engines.geometry_engine import Ball, NormKind, make_norm
from engines.hull_engine import index_union, inner_hull, inscribed_ratio, outer_hull
from engines.ldp_engine import normalized_log_tail, rate_function, sandwich_bounds
from engines.process_engine import (
    edge_count,
    edge_count_bruteforce,
    make_params,
    r_for_p_target,
    sample_ppp,
)
from engines.replica_engine import replica_rng, run_replicas
from engines.sampler_engine import (
    exact_tail_tiny,
    importance_estimate_continuum_tail,
    importance_estimate_tail,
    planted_cell_sampler,
    planted_continuum_sampler,
)
from engines.settings import clique_node_cap
from engines.sgraded_engine import (
    IndexSet,
    build_grid,
    cell_metric,
    cell_metric_numeric_oracle,
    coarsen,
    config_from_dense,
    expected_sgraded_edges,
    random_max_clique_set,
    sample_cell_config,
    sgraded_edge_count,
    tiny_grid,
)
from engines.stats_engine import (
    cross_edges,
    derive_scales,
    exact_poisson_tail,
    internal_edges,
    jensen_lower_bound,
    poisson_tail_bound,
    vertex_mass,
    y_mass,
)

logger = logging.getLogger(__name__)

VERIFY_SCHEMA = "verify_report.v1"


# =========================================================
# LOCKED desk-scale regimes
# =========================================================
EDGE_MEAN_REGIME = {"n": 150, "r": 0.1, "d": 2, "norm": "L2", "mu": 353.429, "tolerance": 0.02}

# one cell per 1/11070 of the circle: τ̃_3 = 4 cells carry the plant
PLANTED_REGIME = {"n": 1e5, "r": 3.0 / 11070.0, "d": 1, "norm": "Linf", "s": 3, "delta_tilde": 1.0, "eps_tilde": 0.2}

THM1_REGIME = {"n": 1e4, "p_target": 1.0, "d": 2, "norm": "L2", "s": 5, "delta": 1.0, "eps": 0.25}

TINY_REGIME = {"m": 4, "s": 3, "D": 1.0, "d": 1, "norm": "Linf", "t": 1.0}

LDP_REGIME = {"n_sweep": (1e3, 1e4, 1e5), "p_target": 1.0, "d": 1, "norm": "Linf", "s": 5, "t": 1.0, "eps": 0.1}

CHERNOFF_MEANS = (0.05, 0.5, 1.0, 5.0, 50.0)


def _result(name, passed, **detail):
    status = "✅" if passed else "❌"
    logger.info("%s %s", status, name)
    return {"name": name, "passed": bool(passed), "detail": detail}


# =========================================================
# 1. Edge-count mean
# =========================================================
def check_edge_mean(seed, count):
    norm = make_norm(EDGE_MEAN_REGIME["norm"], EDGE_MEAN_REGIME["d"])
    n, r = EDGE_MEAN_REGIME["n"], EDGE_MEAN_REGIME["r"]
    params = make_params(n, r, norm)
    counts = run_replicas(lambda rng, k: edge_count(sample_ppp(n, norm, seed, k), r, norm), seed, count)
    mean = float(np.mean(counts))
    rel = abs(mean - params.mu) / params.mu
    return _result(
        "edge_count_mean",
        rel <= EDGE_MEAN_REGIME["tolerance"],
        mean=mean, mu=params.mu, relative_error=rel, seeds=count,
    )


# =========================================================
# 2. Oracle equivalence
# =========================================================
def check_edge_oracle(seed, instances):
    rng = replica_rng(seed, 0)
    mismatches = 0
    kinds = ("L1", "L2", "Linf")
    for k in range(instances):
        norm = make_norm(kinds[k % 3], 1 + k % 3)
        n = float(rng.integers(50, 1500))
        r = float(rng.uniform(0.02, 0.2))
        ps = sample_ppp(n, norm, seed, k)
        if ps.count > 2000:
            continue
        if edge_count(ps, r, norm) != edge_count_bruteforce(ps, r, norm):
            mismatches += 1
    return _result("edge_count_oracle", mismatches == 0, instances=instances, mismatches=mismatches)


def check_metric_oracle(seed, pairs):
    rng = replica_rng(seed, 1)
    mismatches = []
    per_setting = max(1, pairs // 9)
    for kind in ("L1", "L2", "Linf"):
        for dim in (1, 2, 3):
            s = int(rng.integers(3, 6))
            grid = tiny_grid(50, s, 1.0, make_norm(kind, dim), node_cap=0)
            for _ in range(per_setting):
                I = rng.integers(0, 50, size=dim)
                J = (I + rng.integers(-(s + 2), s + 3, size=dim)) % 50
                closed = cell_metric(I, J, grid)
                sampled = cell_metric_numeric_oracle(I, J, grid, samples=2000, seed=int(rng.integers(1 << 30)))
                if closed != sampled:
                    mismatches.append({"norm": kind, "d": dim, "I": I.tolist(), "J": J.tolist(), "closed": closed, "oracle": sampled})
    return _result("cell_metric_oracle", not mismatches, pairs=per_setting * 9, mismatches=mismatches[:5])


# =========================================================
# 3. Discretization inequalities
# =========================================================
def check_sgraded_domination(seed, instances):
    norm = make_norm("L2", 2)
    params = make_params(2000, 0.02, norm)
    grid = build_grid(params, 5)
    bad = 0
    for k in range(instances):
        ps = sample_ppp(params.n, norm, seed, k)
        if edge_count(ps, params.r, norm) > sgraded_edge_count(coarsen(ps, grid)):
            bad += 1
    return _result("continuum_edges_within_sgraded", bad == 0, instances=instances, violations=bad)


# (d, s) pairs swept for every norm; clique searches stay cheap on the line
EXPECTATION_SETTINGS = [(1, 3), (1, 4), (1, 5), (1, 6), (1, 8), (2, 3), (2, 4), (2, 5)]


def check_expectation_bounds():
    rows = []
    ok = True
    for kind in ("L1", "L2", "Linf"):
        for dim, s in EXPECTATION_SETTINGS:
            norm = make_norm(kind, dim)
            params = make_params(1000.0, 0.01, norm)
            grid = build_grid(params, s)
            mu_s = expected_sgraded_edges(grid)
            lower = grid.n_cells * params.tau
            good = params.mu <= mu_s and lower <= grid.tau_s
            ok &= good
            rows.append({"norm": kind, "d": dim, "s": s, "mu": params.mu, "mu_s": mu_s, "m^d tau": lower, "tau_s": grid.tau_s})
    ok &= len(rows) >= 20
    return _result("expectation_and_clique_bounds", ok, settings=rows)


def check_overcount_trend():
    norm = make_norm("L2", 2)
    params = make_params(1000.0, 0.01, norm)
    ratios = []
    for s in (4, 6, 8, 10, 12):
        grid = build_grid(params, s, node_cap=0)
        ratios.append(expected_sgraded_edges(grid) / params.mu - 1.0)
    decreasing = all(a > b for a, b in zip(ratios, ratios[1:]))
    return _result("overcount_decreasing_in_s", decreasing, ratios=ratios)


# =========================================================
# 4. Clique sets under L∞
# =========================================================
def check_linf_cliques():
    wrong = []
    for dim in (1, 2, 3):
        for s in range(3, 6):
            result = search_window(NormKind.LINF, dim, s, clique_node_cap())
            if result.size != (s + 1) ** dim or not result.exact:
                wrong.append({"d": dim, "s": s, "size": result.size, "exact": result.exact})
    return _result("linf_clique_closed_form", not wrong, wrong=wrong)


# =========================================================
# 5. Chernoff domination
# =========================================================
def check_chernoff():
    failures = []
    points = 0
    for D in CHERNOFF_MEANS:
        uppers = [D, 1.25 * D, 1.5 * D, 2 * D, D + 1, D + 5, 3 * D + 10]
        lowers = [0.0, D / 4, D / 2, 0.9 * D, D]
        for side, ts in (("upper", uppers), ("lower", lowers)):
            for t in ts:
                points += 1
                if poisson_tail_bound(D, t, side) < exact_poisson_tail(D, t, side):
                    failures.append({"D": D, "t": t, "side": side})
    return _result("chernoff_domination", not failures, points=points, failures=failures)


# =========================================================
# 6-7. Jensen functional and partition identity
# =========================================================
def _random_subset(rng, grid):
    size = int(rng.integers(1, min(50, grid.n_cells)))
    return IndexSet(grid.m, grid.dim, rng.choice(grid.n_cells, size=size, replace=False))


def check_jensen(seed, count):
    rng = replica_rng(seed, 2)
    worst = math.inf
    for k in range(count):
        grid = tiny_grid(20, 3, float(rng.uniform(0.2, 6.0)), make_norm("Linf", 2))
        scales = derive_scales(grid)
        cfg = sample_cell_config(grid, seed, k)
        W = _random_subset(rng, grid)
        worst = min(worst, y_mass(W, cfg, scales) / scales.q - jensen_lower_bound(W, cfg, scales))

    grid = tiny_grid(20, 3, 2.0, make_norm("Linf", 2))
    scales = derive_scales(grid)
    cfg = config_from_dense(grid, np.full(grid.n_cells, 3))
    W = _random_subset(rng, grid)
    gap = y_mass(W, cfg, scales) / scales.q - jensen_lower_bound(W, cfg, scales) - len(W) * scales.D / scales.q
    return _result(
        "jensen_lower_bound",
        worst >= -1e-9 and abs(gap) <= 1e-12 * max(1.0, y_mass(W, cfg, scales) / scales.q),
        worst_slack=worst, uniform_gap=gap,
    )


def check_partition(seed, count):
    rng = replica_rng(seed, 3)
    grid = tiny_grid(30, 3, 2.0, make_norm("L2", 2))
    scales = derive_scales(grid)
    broken, square_fail = 0, 0
    for k in range(count):
        cfg = sample_cell_config(grid, seed, k)
        W = _random_subset(rng, grid)
        total = internal_edges(W, cfg) + cross_edges(W, W.invert(), cfg) + internal_edges(W.invert(), cfg)
        if total != sgraded_edge_count(cfg):
            broken += 1
        if vertex_mass(W, cfg) ** 2 < 2 * internal_edges(W, cfg):
            square_fail += 1
    return _result("partition_identity", broken == 0 and square_fail == 0, runs=count, broken=broken, V2_below_Q=square_fail, q=scales.q)


# =========================================================
# 8. Localization on planted inputs
# =========================================================
def planted_grid():
    norm = make_norm(PLANTED_REGIME["norm"], PLANTED_REGIME["d"])
    params = make_params(PLANTED_REGIME["n"], PLANTED_REGIME["r"], norm)
    grid = build_grid(params, PLANTED_REGIME["s"])
    scales = derive_scales(grid, params.delta_star, PLANTED_REGIME["delta_tilde"], PLANTED_REGIME["eps_tilde"])
    return grid, scales


def check_planted_localization(seed, replicas):
    grid, scales = planted_grid()
    eps = PLANTED_REGIME["eps_tilde"]

    def _planted(rng, k):
        sample = planted_cell_sampler(grid, PLANTED_REGIME["delta_tilde"], seed, k)
        return certify_thm2(sample.config, grid, scales, eps).thm2_pass

    def _nominal(rng, k):
        return certify_thm2(sample_cell_config(grid, seed + 1, k), grid, scales, eps).thm2_pass

    planted_rate = float(np.mean(run_replicas(_planted, seed, replicas)))
    nominal_rate = float(np.mean(run_replicas(_nominal, seed + 1, replicas)))
    return _result(
        "planted_localization",
        planted_rate >= 0.9 and nominal_rate <= 0.01,
        planted_pass_rate=planted_rate, nominal_pass_rate=nominal_rate, replicas=replicas, p_hat=scales.p_hat,
    )


# =========================================================
# 9. Ball certificate on planted point sets
# =========================================================
def check_thm1(seed, replicas):
    norm = make_norm(THM1_REGIME["norm"], THM1_REGIME["d"])
    n = THM1_REGIME["n"]
    params = make_params(n, r_for_p_target(n, THM1_REGIME["p_target"], norm), norm)
    grid = build_grid(params, THM1_REGIME["s"])
    delta, eps = THM1_REGIME["delta"], THM1_REGIME["eps"]

    def _one(rng, k):
        ps = planted_continuum_sampler(params, delta, seed, k)
        report = certify_thm1(ps, params, delta, eps, grid=grid)
        return report["clause_a"]["pass_A"], report["clause_b"]["worst_ratio"]

    results = run_replicas(_one, seed, replicas)
    rate = float(np.mean([a for a, _ in results]))
    return _result(
        "ball_certificate_planted",
        rate >= 0.9,
        clause_a_rate=rate, worst_clause_b=float(max(b for _, b in results)), replicas=replicas,
    )


# =========================================================
# 10. Importance sampling vs exact enumeration
# =========================================================
def tiny_oracle_grid():
    return tiny_grid(TINY_REGIME["m"], TINY_REGIME["s"], TINY_REGIME["D"], make_norm(TINY_REGIME["norm"], TINY_REGIME["d"]))


def check_importance_vs_exact(seed, runs, replicas):
    grid = tiny_oracle_grid()
    t = TINY_REGIME["t"]
    threshold = (1.0 + t) * expected_sgraded_edges(grid)
    exact = exact_tail_tiny(grid, threshold)
    inside = 0
    for k in range(runs):
        est = importance_estimate_tail(grid, t, replicas, seed + k)
        inside += abs(est.estimate - exact.estimate) <= 3.0 * est.std_err
    return _result(
        "importance_vs_exact",
        inside >= runs - max(1, runs // 100),
        exact=exact.estimate, truncation_error=exact.truncation_error, runs=runs, within_3se=inside,
    )


# =========================================================
# 11. LDP trend
# =========================================================
def ldp_sweep(seed, replicas, n_sweep=None, t=None, eps=None, regime=LDP_REGIME):
    norm = make_norm(regime["norm"], regime["d"])
    t = regime["t"] if t is None else t
    eps = regime["eps"] if eps is None else eps
    rows = []
    for n in n_sweep or regime["n_sweep"]:
        params = make_params(n, r_for_p_target(n, regime["p_target"], norm), norm)
        grid = build_grid(params, regime["s"])
        bound = sandwich_bounds(params, grid, t, eps)
        est = importance_estimate_continuum_tail(params, t, replicas, seed)
        value, err = normalized_log_tail(est, params.mu, params.n)
        rows.append(
            {
                "n": n,
                "normalized_estimate": value,
                "normalized_err": err,
                "normalized_lower": bound.normalized_lower,
                "normalized_upper": bound.normalized_upper,
                "reliable": est.reliable,
                "I_t": rate_function(t, regime["p_target"]),
            }
        )
    return rows


def check_ldp_trend(seed, replicas):
    rows = ldp_sweep(seed, replicas)
    target = -rows[0]["I_t"]
    bracketed = all(r["normalized_lower"] <= r["normalized_estimate"] <= r["normalized_upper"] for r in rows)
    gaps = [abs((r["normalized_lower"] + r["normalized_upper"]) / 2.0 - target) for r in rows]
    monotone = all(a > b for a, b in zip(gaps, gaps[1:]))
    return _result("ldp_trend", bracketed and monotone, rows=rows, midpoint_gaps=gaps)


# =========================================================
# 12-13. Hulls and inscribed balls
# =========================================================
def check_hull_fattening(seed, balls=10):
    rng = replica_rng(seed, 4)
    norm = make_norm("L2", 2)
    params = make_params(100.0, 0.1, norm)
    worst = []
    ok = True
    for s in (16, 32, 64):
        grid = build_grid(params, s, node_cap=0)
        budget = 32.0 * params.tau / s
        for _ in range(balls):
            S = Ball(rng.random(2), params.r / 2.0, norm)
            gap = index_union(outer_hull(S, grid), grid).measure - index_union(inner_hull(S, grid), grid).measure
            ok &= gap <= budget
        worst.append({"s": s, "last_gap": gap, "budget": budget})
    return _result("hull_fattening", ok, per_s=worst)


def check_inscribed_trend(seed):
    norm = make_norm("L2", 2)
    params = make_params(100.0, 0.01, norm)
    rng = replica_rng(seed, 5)
    ratios = {}
    for s in (8, 16, 32):
        grid = build_grid(params, s, node_cap=0)
        ratios[s] = inscribed_ratio(random_max_clique_set(grid, rng, node_cap=0), grid)
    envelope = all(ratios[s] >= 1.0 - 1.6 / s for s in ratios)
    # cell unions overshoot the ball by O(1/s), so ratios fall toward 1 from above
    excess = {s: ratio - 1.0 for s, ratio in ratios.items()}
    shrinking = abs(excess[8]) >= abs(excess[16]) >= abs(excess[32])
    return _result(
        "inscribed_ball_trend",
        envelope and ratios[32] > 0.8,
        ratios=ratios, excess=excess, shrinking_excess=shrinking,
    )


# =========================================================
# 14. Determinism
# =========================================================
def check_determinism(seed):
    grid = tiny_oracle_grid()
    a = importance_estimate_tail(grid, TINY_REGIME["t"], 200, seed)
    b = importance_estimate_tail(grid, TINY_REGIME["t"], 200, seed)
    return _result("seeded_determinism", a == b, estimate=a.estimate)


# =========================================================
# Suite
# =========================================================
def run_acceptance_suite(config):
    """Every acceptance check at the scales of config.verify."""
    v, seed = config.verify, config.seed
    start = time.perf_counter()
    checks = [
        check_edge_mean(seed, v.edge_seeds),
        check_edge_oracle(seed, v.oracle_instances),
        check_metric_oracle(seed, v.metric_pairs),
        check_sgraded_domination(seed, v.oracle_instances),
        check_expectation_bounds(),
        check_overcount_trend(),
        check_linf_cliques(),
        check_chernoff(),
        check_jensen(seed, 1000),
        check_partition(seed, 50),
        check_planted_localization(seed, v.planted_replicas),
        check_thm1(seed, v.thm1_replicas),
        check_importance_vs_exact(seed, v.is_runs, v.is_replicas),
        check_ldp_trend(seed, v.ldp_replicas),
        check_hull_fattening(seed),
        check_inscribed_trend(seed),
        check_determinism(seed),
    ]
    passed = all(c["passed"] for c in checks)
    logger.info(
        "%s acceptance suite: %d/%d checks passed in %.1fs",
        "✅" if passed else "❌", sum(c["passed"] for c in checks), len(checks), time.perf_counter() - start,
    )
    return {
        "schema": VERIFY_SCHEMA,
        "passed": passed,
        "checks": checks,
    }
