import json

import pytest
from fastapi.testclient import TestClient

from api.main import app
from api.routes import experiments
from engines.config_engine import parse_run_config, resolve_params
from engines.errors import DimensionMismatchError
from engines.ldp_engine import normalized_log_tail
from engines.sampler_engine import importance_estimate_tail
from engines.sgraded_engine import (
    build_grid,
    config_from_mapping,
    dump_cell_config,
    expected_sgraded_edges,
    sample_cell_config,
)
from engines.verify_engine import planted_grid

client = TestClient(app)

GRID_INFO = {"model": {"n": 150, "r": 0.1, "d": 2, "norm": "L2"}, "grid": {"s": 5}}


def test_health():
    response = client.get("/")
    assert response.status_code == 200
    body = response.json()
    assert body["status"] == "healthy"
    assert body["endpoints"]["extract"] == "/experiments/extract"


def test_grid_info():
    response = client.post("/experiments/grid-info", json=GRID_INFO)
    assert response.status_code == 200
    body = response.json()
    assert body["m"] == 50
    assert body["mu"] == pytest.approx(353.429, abs=1e-3)


def test_grid_info_rejects_bad_config():
    response = client.post("/experiments/grid-info", json={"model": {"n": 150}})
    assert response.status_code == 400
    assert "exactly one" in response.json()["detail"]


def test_extract_planted_upload(tmp_path):
    grid, _ = planted_grid()
    cfg = sample_cell_config(grid, seed=42)
    cfg = cfg.replace_cells(grid.ravel([[500], [501], [502], [503]]), [630, 628, 631, 629])
    csv_path = tmp_path / "planted.csv"
    sidecar = dump_cell_config(cfg, csv_path, tmp_path / "planted.json")

    with open(csv_path, "rb") as handle:
        response = client.post(
            "/experiments/extract",
            files={"file": ("planted.csv", handle, "text/csv")},
            data={"sidecar": json.dumps(sidecar), "eps_tilde": "0.2"},
        )
    assert response.status_code == 200
    body = response.json()
    assert body["thm2_pass"]
    assert body["frakP"] == [[500], [501], [502], [503]]
    assert body["events"]["L"]["hit"]


def test_extract_rejects_unreadable_sidecar():
    response = client.post(
        "/experiments/extract",
        files={"file": ("cells.csv", b"i0,count\n1,2\n", "text/csv")},
        data={"sidecar": "/etc/passwd"},
    )
    assert response.status_code == 400


def test_tail():
    document = {
        "model": {"n": 1000, "p_target": 1.0, "d": 1, "norm": "Linf"},
        "grid": {"s": 5},
        "sampler": {"replicas": 100, "t": 1.0},
        "seed": 3,
    }
    response = client.post("/experiments/tail", json=document)
    assert response.status_code == 200
    body = response.json()
    assert body["replicas"] == 100
    assert body["estimate"]["schema"] == "tail_estimate.v1"
    assert body["sandwich"]["normalized_lower"] <= body["sandwich"]["normalized_upper"]


def test_tail_rejects_too_few_replicas():
    document = {"model": {"n": 1000, "p_target": 1.0, "d": 1, "norm": "Linf"}, "sampler": {"replicas": 5}}
    assert client.post("/experiments/tail", json=document).status_code == 400


def test_tail_normalizes_by_sgraded_mean():
    document = {
        "model": {"n": 1000, "p_target": 1.0, "d": 1, "norm": "Linf"},
        "grid": {"s": 5},
        "sampler": {"replicas": 200, "t": 1.0},
        "seed": 4,
    }
    body = client.post("/experiments/tail", json=document).json()

    config = parse_run_config(document)
    params = resolve_params(config)
    grid = build_grid(params, 5)
    estimate = importance_estimate_tail(grid, 1.0, 200, 4)
    value, _ = normalized_log_tail(estimate, expected_sgraded_edges(grid), params.n)
    assert expected_sgraded_edges(grid) > params.mu
    assert body["normalized_estimate"] == pytest.approx(value)


def test_extract_dimension_mismatch_is_bad_request(tmp_path, monkeypatch):
    def _mismatch(*args, **kwargs):
        raise DimensionMismatchError("points have dimension 2, probe has 1")

    monkeypatch.setattr(experiments, "certify_thm2", _mismatch)
    grid, _ = planted_grid()
    csv_path = tmp_path / "cells.csv"
    sidecar = dump_cell_config(config_from_mapping(grid, {(1,): 2}), csv_path, tmp_path / "cells.json")
    with open(csv_path, "rb") as handle:
        response = client.post(
            "/experiments/extract",
            files={"file": ("cells.csv", handle, "text/csv")},
            data={"sidecar": json.dumps(sidecar)},
        )
    assert response.status_code == 400
    assert "dimension" in response.json()["detail"]
