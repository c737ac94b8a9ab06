import json
import math

import numpy as np
import pandas as pd
import pytest

import rggloc
from engines.config_engine import (
    check_manifest,
    derived_quantities,
    file_sha256,
    load_run_config,
    parse_run_config,
    resolve_params,
    to_native,
    write_manifest,
)
from engines.errors import ConfigError
from engines.sampler_engine import TailEstimate
from engines.verify_engine import (
    check_chernoff,
    check_determinism,
    check_edge_oracle,
    check_expectation_bounds,
    check_jensen,
    check_linf_cliques,
    check_partition,
)

BASE = {
    "schema": "runconfig.v1",
    "model": {"n": 150, "r": 0.1, "d": 2, "norm": "L2"},
    "grid": {"s": 5},
    "sampler": {"replicas": 20},
    "seed": 20240521,
}

LINE = {
    "schema": "runconfig.v1",
    "model": {"n": 1000, "p_target": 1.0, "d": 1, "norm": "Linf"},
    "grid": {"s": 5},
    "sampler": {"replicas": 100, "t": 1.0},
    "seed": 7,
}

PLANTED = {
    "schema": "runconfig.v1",
    "model": {"n": 100000, "r": 3.0 / 11070.0, "d": 1, "norm": "Linf"},
    "grid": {"s": 3},
    "conditioning": {"delta_tilde": 1.0, "eps_tilde": 0.2},
    "sampler": {"method": "planted", "replicas": 3},
    "seed": 11,
}


def _write_config(tmp_path, document, name="config.json"):
    path = tmp_path / name
    path.write_text(json.dumps(document))
    return str(path)


# =========================================================
# Run configuration
# =========================================================
def test_parse_run_config_defaults():
    config = parse_run_config(BASE)
    assert config.grid.s == 5
    assert config.conditioning.eps_tilde == 0.2
    assert config.sampler.method == "importance"
    assert config.snapshot()["schema"] == "runconfig.v1"


@pytest.mark.parametrize("model", [
    {"n": 150, "d": 2},
    {"n": 150, "r": 0.1, "p_target": 1.0},
    {"n": -5, "r": 0.1},
    {"n": 150, "r": 0.1, "norm": "L3"},
])
def test_parse_run_config_rejects_bad_models(model):
    with pytest.raises(ConfigError):
        parse_run_config({"model": model})


def test_parse_run_config_rejects_unknown_keys():
    with pytest.raises(ConfigError):
        parse_run_config(dict(BASE, extra=1))
    with pytest.raises(ConfigError):
        parse_run_config([BASE])


def test_load_run_config_errors(tmp_path):
    with pytest.raises(ConfigError):
        load_run_config(tmp_path / "missing.json")
    broken = tmp_path / "broken.json"
    broken.write_text("{not json")
    with pytest.raises(ConfigError):
        load_run_config(broken)


def test_resolve_params_from_p_target():
    config = parse_run_config(LINE)
    params = resolve_params(config)
    assert params.mu == pytest.approx(1000.0)
    assert resolve_params(config, n=1e4).mu == pytest.approx(1e4)


def test_derived_quantities_example():
    derived = derived_quantities(parse_run_config(BASE))
    assert derived["mu"] == pytest.approx(353.429, abs=1e-3)
    assert derived["m"] == 50
    assert derived["D"] == pytest.approx(0.06)
    assert derived["tau_s_exact"]


# =========================================================
# Records and manifests
# =========================================================
def test_to_native():
    record = {
        "a": np.int64(3),
        "b": np.array([1.5, np.inf]),
        "c": (math.nan, np.float32(0.5)),
        "d": TailEstimate(1.0, 2.0, 0.1, math.log(0.1), 0.01, 0.1, 100, "importance"),
    }
    native = to_native(record)
    assert native["a"] == 3 and type(native["a"]) is int
    assert native["b"] == [1.5, None]
    assert native["c"] == [None, 0.5]
    assert native["d"]["schema"] == "tail_estimate.v1"
    assert native["d"]["ess"] is None
    json.dumps(native)


def test_manifest_round_trip(tmp_path):
    config = parse_run_config(dict(BASE, output_dir=str(tmp_path)))
    out = tmp_path / "numbers.csv"
    out.write_text("a\n1\n")
    manifest = write_manifest(config, "grid-info", [out], derived_quantities(config), tmp_path)
    assert manifest["files"] == {"numbers.csv": file_sha256(out)}
    assert (tmp_path / "manifest.json").exists()
    assert check_manifest(manifest, config) == []

    out.write_text("a\n2\n")
    assert check_manifest(manifest, config) == ["checksum mismatch for numbers.csv"]
    tampered = dict(manifest, derived=dict(manifest["derived"], m=51), files={})
    assert check_manifest(tampered, config) == ["derived m: 51 != 50"]


# =========================================================
# Command line
# =========================================================
def test_cli_grid_info(tmp_path, capsys):
    out = tmp_path / "out"
    assert rggloc.main(["grid-info", "--config", _write_config(tmp_path, BASE), "--out", str(out)]) == 0
    assert "353.4" in capsys.readouterr().out
    info = json.loads((out / "grid_info.json").read_text())
    assert info["m"] == 50
    manifest = json.loads((out / "manifest.json").read_text())
    assert manifest["command"] == "grid-info"
    assert set(manifest["files"]) == {"grid_info.json"}


def test_cli_config_errors_exit_2(tmp_path):
    empty = tmp_path / "empty.json"
    empty.write_text("")
    assert rggloc.main(["grid-info", "--config", str(empty), "--out", str(tmp_path)]) == 2
    assert rggloc.main(["grid-info", "--config", _write_config(tmp_path, BASE), "--seed", "-1"]) == 2
    coarse = dict(BASE, model={"n": 150, "r": 0.45, "d": 2, "norm": "L2"})
    assert rggloc.main(["grid-info", "--config", _write_config(tmp_path, coarse, "coarse.json"), "--out", str(tmp_path)]) == 2


def test_cli_simulate_is_reproducible(tmp_path):
    config = _write_config(tmp_path, BASE)
    first, second = tmp_path / "a", tmp_path / "b"
    assert rggloc.main(["simulate", "--config", config, "--out", str(first)]) == 0
    assert rggloc.main(["simulate", "--config", config, "--out", str(second)]) == 0

    summary = pd.read_csv(first / "simulate_summary.csv")
    assert len(summary) == 20
    assert (summary["edges"] <= summary["sgraded_edges"]).all()
    for name in ("simulate_summary.csv", "points_000.csv"):
        assert file_sha256(first / name) == file_sha256(second / name)

    other = tmp_path / "c"
    assert rggloc.main(["simulate", "--config", config, "--out", str(other), "--seed", "5"]) == 0
    assert file_sha256(first / "points_000.csv") != file_sha256(other / "points_000.csv")


def test_cli_extract_point_sets(tmp_path):
    sim = tmp_path / "sim"
    config = _write_config(tmp_path, BASE)
    assert rggloc.main(["simulate", "--config", config, "--out", str(sim)]) == 0
    out = tmp_path / "extract"
    assert rggloc.main(["extract", "--config", config, "--out", str(out), "--input", str(sim)]) == 0
    summary = pd.read_csv(out / "extract_summary.csv")
    assert summary["input"].tolist() == ["points_000.csv"]
    assert summary["kind"].tolist() == ["points"]


def test_cli_condition_then_extract(tmp_path):
    config = _write_config(tmp_path, PLANTED)
    cond = tmp_path / "cond"
    assert rggloc.main(["condition", "--config", config, "--out", str(cond)]) == 0
    profiles = pd.read_csv(cond / "condition_profiles.csv")
    assert len(profiles) == 3
    assert profiles["L"].all()

    out = tmp_path / "extract"
    assert rggloc.main(["extract", "--config", config, "--out", str(out), "--input", str(cond)]) == 0
    summary = pd.read_csv(out / "extract_summary.csv")
    assert summary["input"].tolist() == ["condition_000.csv", "condition_001.csv", "condition_002.csv"]
    assert summary["kind"].eq("cells").all()
    assert summary["pass"].sum() >= 2


def test_cli_extract_without_inputs(tmp_path):
    empty = tmp_path / "nothing"
    empty.mkdir()
    config = _write_config(tmp_path, BASE)
    assert rggloc.main(["extract", "--config", config, "--out", str(tmp_path), "--input", str(empty)]) == 2


def test_cli_tail(tmp_path):
    out = tmp_path / "tail"
    assert rggloc.main(["tail", "--config", _write_config(tmp_path, LINE), "--out", str(out)]) == 0
    estimates = pd.read_csv(out / "tail_estimates.csv")
    assert list(estimates.columns) == rggloc.TAIL_COLUMNS
    assert estimates["method"].tolist() == ["importance", "importance_continuum"]
    table = pd.read_csv(out / "ldp_table.csv")
    assert len(table) == 1
    assert table["normalized_lower"].iloc[0] <= table["normalized_upper"].iloc[0]
    assert table["I_t"].iloc[0] == pytest.approx(0.70711, abs=1e-5)


def test_cli_tail_rejects_too_few_replicas(tmp_path):
    few = dict(LINE, sampler={"replicas": 10})
    assert rggloc.main(["tail", "--config", _write_config(tmp_path, few), "--out", str(tmp_path)]) == 2


# =========================================================
# Acceptance checks at test scale
# =========================================================
@pytest.mark.parametrize("check", [
    check_chernoff,
    check_linf_cliques,
    check_expectation_bounds,
    lambda: check_edge_oracle(3, 6),
    lambda: check_jensen(3, 20),
    lambda: check_partition(3, 5),
    lambda: check_determinism(3),
])
def test_acceptance_checks(check):
    result = check()
    assert result["passed"], result["detail"]


@pytest.mark.parametrize("passed,code", [(True, 0), (False, 1)])
def test_cli_verify_report_and_exit_code(tmp_path, monkeypatch, passed, code):
    report = {"schema": "verify_report.v1", "passed": passed, "checks": [{"name": "stub", "passed": passed, "detail": {}}]}
    monkeypatch.setattr(rggloc, "run_acceptance_suite", lambda config: dict(report))
    out = tmp_path / "verify"
    assert rggloc.main(["verify", "--config", _write_config(tmp_path, BASE), "--out", str(out)]) == code
    written = json.loads((out / "verify_report.json").read_text())
    assert written["passed"] is passed
    assert written["manifest_problems"] == []
    assert set(json.loads((out / "manifest.json").read_text())["files"]) == {"verify_report.json"}


def test_expectation_sweep_covers_twenty_settings():
    result = check_expectation_bounds()
    assert result["passed"]
    settings = result["detail"]["settings"]
    assert len(settings) >= 20
    assert {row["norm"] for row in settings} == {"L1", "L2", "Linf"}
    assert all(row["mu"] <= row["mu_s"] and row["m^d tau"] <= row["tau_s"] for row in settings)
