#!/usr/bin/env python3
"""
rggloc: command-line driver for the RGG localization and upper-tail lab.

    rggloc <grid-info|simulate|condition|extract|tail|verify> --config PATH [--seed N] [--out DIR]

Every command writes its CSV/JSON results, its plots and a manifest.json
into the output directory. Exit codes: 0 ok, 1 failed verification,
2 configuration error, 3 budget exhausted.
"""

import argparse
import logging
import sys
from pathlib import Path

import pandas as pd

from engines.config_engine import (
    check_manifest,
    derived_quantities,
    load_run_config,
    resolve_params,
    write_csv,
    write_json,
    write_manifest,
)
from engines.errors import ConfigError, RGGLocError, exit_code_for
from engines.extract_engine import certify_thm1, certify_thm2, localization_profile
from engines.ldp_engine import LDP_COLUMNS, ldp_row, normalized_log_tail, sandwich_bounds
from engines.process_engine import dump_point_set, edge_count, load_point_set, sample_ppp
from engines.replica_engine import run_replicas
from engines.sampler_engine import (
    importance_estimate_continuum_tail,
    importance_estimate_tail,
    planted_cell_sampler,
    rejection_conditional,
    rejection_estimate_tail,
)
from engines.settings import LOG_FORMAT, LOG_LEVEL
from engines.sgraded_engine import (
    build_grid,
    coarsen,
    dump_cell_config,
    expected_sgraded_edges,
    load_cell_config,
    sgraded_edge_count,
)
from engines.stats_engine import derive_scales, event_profile
from engines.verify_engine import run_acceptance_suite
from viz.charts import (
    plot_edge_histogram,
    plot_ldp_convergence,
    plot_localization_heatmap,
    plot_rgg_instance,
    save_figure,
)

logger = logging.getLogger("rggloc")

TAIL_COLUMNS = ["t", "n", "r", "s", "norm", "method", "log_prob", "std_err", "replicas", "seed"]
LDP_EXTRA_COLUMNS = [
    "normalized_estimate",
    "normalized_err",
    "normalized_estimate_s",
    "normalized_lower_s",
    "normalized_upper_s",
    "reliable",
]
# conditioned configs stored in full; every replica still gets a profile row
SAVED_CONFIGS = 10
INSTANCE_PLOT_MAX_POINTS = 5000


# =========================================================
# Shared Helpers
# =========================================================
def _grid_and_scales(config, params):
    grid = build_grid(params, config.grid.s, node_cap=config.grid.node_cap)
    scales = derive_scales(
        grid,
        params.delta_star,
        delta_tilde=config.conditioning.delta_tilde,
        eps_tilde=config.conditioning.eps_tilde,
    )
    return grid, scales


def _out(config):
    out = Path(config.output_dir)
    out.mkdir(parents=True, exist_ok=True)
    return out


def _finish(config, command, outputs):
    write_manifest(config, command, outputs, derived_quantities(config), config.output_dir)
    return 0


# =========================================================
# grid-info
# =========================================================
def cmd_grid_info(config, args=None):
    derived = derived_quantities(config)
    table = pd.Series({k: v for k, v in derived.items() if k != "regime_warnings"}, dtype=object)
    print(table.to_string())
    for warning in derived["regime_warnings"]:
        print(f"warning: {warning}")

    path = write_json(_out(config) / "grid_info.json", derived)
    return _finish(config, "grid-info", [path])


# =========================================================
# simulate
# =========================================================
def cmd_simulate(config, args=None):
    params = resolve_params(config)
    grid, _ = _grid_and_scales(config, params)
    norm, seed = params.norm, config.seed
    out = _out(config)

    def _one(rng, replica):
        ps = sample_ppp(params.n, norm, seed, replica)
        cfg = coarsen(ps, grid)
        return {
            "replica": replica,
            "vertices": ps.count,
            "edges": edge_count(ps, params.r, norm),
            "sgraded_edges": sgraded_edge_count(cfg),
            "occupied_cells": len(cfg.cells),
            "max_cell_count": int(cfg.counts.max()) if len(cfg.counts) else 0,
        }

    rows = run_replicas(_one, seed, config.sampler.replicas)
    frame = pd.DataFrame(rows)
    logger.info(
        "✅ simulated %d replicas: mean |E| = %.4f (μ = %.4f), mean |E_s| = %.4f (μ̃_s = %.4f)",
        len(frame), frame["edges"].mean(), params.mu, frame["sgraded_edges"].mean(), expected_sgraded_edges(grid),
    )

    outputs = [write_csv(out / "simulate_summary.csv", rows)]
    outputs.append(save_figure(plot_edge_histogram(frame["edges"], params.mu), out / "simulate_edges.svg"))

    first = sample_ppp(params.n, norm, seed, 0)
    points_path = out / "points_000.csv"
    dump_point_set(first, points_path)
    outputs.append(points_path)
    if norm.dim == 2 and first.count <= INSTANCE_PLOT_MAX_POINTS:
        outputs.append(save_figure(plot_rgg_instance(first, params.r), out / "instance_000.svg"))
    return _finish(config, "simulate", outputs)


# =========================================================
# condition
# =========================================================
def _conditioned_samples(config, grid):
    sampler, cond, seed = config.sampler, config.conditioning, config.seed
    if sampler.method == "rejection":
        threshold = (1.0 + cond.delta_tilde) * expected_sgraded_edges(grid)
        result = rejection_conditional(grid, threshold, sampler.budget, seed)
        status = {
            "method": "rejection",
            "status": result.status,
            "consumed": result.consumed,
            "accepted": len(result.accepted),
            "acceptance_rate": result.acceptance_rate,
        }
        return [(k, cfg, 0.0) for k, cfg in enumerate(result.accepted)], status

    draws = run_replicas(
        lambda rng, k: planted_cell_sampler(grid, cond.delta_tilde, seed, k, slack=sampler.slack),
        seed,
        sampler.replicas,
    )
    status = {"method": sampler.method, "status": "ok", "consumed": len(draws), "accepted": len(draws)}
    return [(d.replica, d.config, d.log_weight) for d in draws], status


def cmd_condition(config, args=None):
    params = resolve_params(config)
    grid, scales = _grid_and_scales(config, params)
    eps_tilde = config.conditioning.eps_tilde
    out = _out(config)

    samples, status = _conditioned_samples(config, grid)
    outputs, rows, records = [], [], []
    for k, cfg, log_weight in samples:
        profile = localization_profile(cfg, grid, scales, eps_tilde)
        events = event_profile(cfg, scales)
        records.append({"replica": k, "log_weight": log_weight, "profile": profile, "events": events})
        rows.append(
            {
                "replica": k,
                "log_weight": log_weight,
                "total": cfg.total,
                "sgraded_edges": events["L"]["value"],
                "L": events["L"]["hit"],
                "A": events["A"]["hit"],
                "B": events["B"]["hit"],
                "D": events["D"]["hit"],
                "thm2_pass": profile["thm2_pass"],
                "failure_mode": profile["failure_mode"],
                "cardP": profile["cardP"],
                "V_P": profile["V_P"],
            }
        )
        if k < SAVED_CONFIGS:
            csv_path = out / f"condition_{k:03d}.csv"
            sidecar_path = csv_path.with_suffix(".json")
            dump_cell_config(cfg, csv_path, sidecar_path, extra={"method": status["method"], "replica": k, "log_weight": log_weight})
            outputs += [csv_path, sidecar_path]

    passed = sum(r["thm2_pass"] for r in rows)
    logger.info("✅ conditioned %d configs (%s): %d localized", len(rows), status["method"], passed)
    status["localized"] = passed

    outputs.append(write_csv(out / "condition_profiles.csv", rows))
    outputs.append(write_json(out / "condition_records.json", records))
    outputs.append(write_json(out / "condition_summary.json", status))
    return _finish(config, "condition", outputs)


# =========================================================
# extract
# =========================================================
def _input_files(inputs):
    files = []
    for item in inputs:
        path = Path(item)
        if path.is_dir():
            # stored samples only: cell configs with a sidecar, and point sets
            files += sorted(
                p for p in path.glob("*.csv") if p.with_suffix(".json").exists() or p.name.startswith("points_")
            )
        elif path.exists():
            files.append(path)
        else:
            raise ConfigError(f"input not found: {item}")
    if not files:
        raise ConfigError("extract needs at least one input CSV")
    return files


def cmd_extract(config, args):
    cond = config.conditioning
    out = _out(config)
    outputs, summary = [], []

    for path in _input_files(args.input or []):
        sidecar = path.with_suffix(".json")
        if sidecar.exists():
            cfg = load_cell_config(path, sidecar)
            grid = cfg.grid
            scales = derive_scales(grid, config.model.delta_star, cond.delta_tilde, cond.eps_tilde)
            report = certify_thm2(cfg, grid, scales, cond.eps_tilde)
            outputs.append(write_json(out / f"extract_{path.stem}.json", report))
            fig = plot_localization_heatmap(cfg, report.frakP, title=f"{path.stem}: {report.failure_mode or 'localized'}")
            outputs.append(save_figure(fig, out / f"extract_{path.stem}.svg"))
            summary.append({"input": path.name, "kind": "cells", "pass": report.thm2_pass, "failure_mode": report.failure_mode})
        else:
            ps = load_point_set(path, config.model.norm)
            params = resolve_params(config, n=ps.intensity)
            report = certify_thm1(ps, params, cond.delta, cond.eps, s=config.grid.s, node_cap=config.grid.node_cap)
            outputs.append(write_json(out / f"extract_{path.stem}.json", report))
            summary.append({"input": path.name, "kind": "points", "pass": report["thm1_pass"], "failure_mode": report["failure_mode"]})

    logger.info("✅ extracted %d inputs: %d passed", len(summary), sum(r["pass"] for r in summary))
    outputs.append(write_csv(out / "extract_summary.csv", summary, columns=["input", "kind", "pass", "failure_mode"]))
    return _finish(config, "extract", outputs)


# =========================================================
# tail
# =========================================================
def _cell_estimate(config, grid):
    sampler = config.sampler
    if sampler.method == "rejection":
        return rejection_estimate_tail(grid, sampler.t, sampler.replicas, config.seed)
    return importance_estimate_tail(grid, sampler.t, sampler.replicas, config.seed, slack=sampler.slack)


def _tail_row(est, params, grid):
    return {
        "t": est.t,
        "n": params.n,
        "r": params.r,
        "s": grid.s,
        "norm": params.norm.kind.value,
        "method": est.method,
        "log_prob": est.log_prob,
        "std_err": est.std_err,
        "replicas": est.n_replicas,
        "seed": est.seed,
    }


def cmd_tail(config, args=None):
    sampler = config.sampler
    t = sampler.t
    out = _out(config)
    tail_rows, ldp_rows, records = [], [], []

    for n in sampler.n_sweep or [config.model.n]:
        params = resolve_params(config, n=n)
        grid = build_grid(params, config.grid.s, node_cap=config.grid.node_cap)
        p = config.model.p_target if config.model.p_target is not None else params.p_hat

        cell = _cell_estimate(config, grid)
        continuum = importance_estimate_continuum_tail(params, t, sampler.replicas, config.seed, slack=sampler.slack)
        bound = sandwich_bounds(params, grid, t, sampler.ldp_eps)

        value, err = normalized_log_tail(continuum, params.mu, params.n)
        value_s, _ = normalized_log_tail(cell, expected_sgraded_edges(grid), params.n)
        row = ldp_row(bound, p)
        row.update(
            {
                "normalized_estimate": value,
                "normalized_err": err,
                "normalized_estimate_s": value_s,
                "normalized_lower_s": bound.normalized_lower_s,
                "normalized_upper_s": bound.normalized_upper_s,
                "reliable": continuum.reliable and cell.reliable,
            }
        )
        ldp_rows.append(row)
        tail_rows += [_tail_row(cell, params, grid), _tail_row(continuum, params, grid)]
        records.append({"n": params.n, "cell": cell, "continuum": continuum, "sandwich": bound})
        logger.info(
            "✅ n=%g: normalized log-tail %.4f in [%.4f, %.4f]",
            params.n, value, bound.normalized_lower, bound.normalized_upper,
        )

    rate = ldp_rows[-1]["I_t"]

    outputs = [
        write_csv(out / "tail_estimates.csv", tail_rows, columns=TAIL_COLUMNS),
        write_csv(out / "ldp_table.csv", ldp_rows, columns=LDP_COLUMNS + LDP_EXTRA_COLUMNS),
        write_json(out / "tail_estimates.json", records),
        save_figure(plot_ldp_convergence(ldp_rows, rate), out / "ldp_convergence.svg"),
    ]
    return _finish(config, "tail", outputs)


# =========================================================
# verify
# =========================================================
def cmd_verify(config, args=None):
    out = _out(config)
    report = run_acceptance_suite(config)

    derived = derived_quantities(config)
    problems = check_manifest({"derived": derived}, config)
    report["manifest_problems"] = problems
    report["passed"] = report["passed"] and not problems

    path = write_json(out / "verify_report.json", report)
    manifest = write_manifest(config, "verify", [path], derived, out)
    problems = check_manifest(manifest, config)
    if problems:
        logger.error("❌ manifest check failed: %s", "; ".join(problems))
        return 1
    return 0 if report["passed"] else 1


COMMANDS = {
    "grid-info": cmd_grid_info,
    "simulate": cmd_simulate,
    "condition": cmd_condition,
    "extract": cmd_extract,
    "tail": cmd_tail,
    "verify": cmd_verify,
}


# =========================================================
# Entry Point
# =========================================================
def build_parser():
    parser = argparse.ArgumentParser(prog="rggloc", description="RGG localization and upper-tail laboratory")
    sub = parser.add_subparsers(dest="command", required=True)
    for name in COMMANDS:
        cmd = sub.add_parser(name)
        cmd.add_argument("--config", required=True, help="runconfig.v1 JSON document")
        cmd.add_argument("--seed", type=int, default=None, help="override the config seed")
        cmd.add_argument("--out", default=None, help="override the config output_dir")
        if name == "extract":
            cmd.add_argument("--input", nargs="+", help="CellConfig/point-set CSVs or directories holding them")
    return parser


def main(argv=None):
    logging.basicConfig(level=LOG_LEVEL, format=LOG_FORMAT)
    args = build_parser().parse_args(argv)
    try:
        config = load_run_config(args.config)
        updates = {}
        if args.seed is not None:
            if args.seed < 0:
                raise ConfigError("--seed must be non-negative")
            updates["seed"] = args.seed
        if args.out is not None:
            updates["output_dir"] = args.out
        if updates:
            config = config.model_copy(update=updates)
        logger.info("🚀 rggloc %s (seed %d) → %s", args.command, config.seed, config.output_dir)
        return COMMANDS[args.command](config, args)
    except RGGLocError as exc:
        logger.error("❌ %s: %s", type(exc).__name__, exc)
        return exit_code_for(exc)


if __name__ == "__main__":
    sys.exit(main())
