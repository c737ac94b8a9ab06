#!/usr/bin/env python3
"""
End-to-end smoke test against a running rggloc API.

Set RGGLOC_API_URL (e.g. http://127.0.0.1:8000) to enable; pytest skips
these tests otherwise. Run directly for a printed summary.
"""

import sys

import pytest
import requests

from engines.settings import API_URL

pytestmark = pytest.mark.skipif(not API_URL, reason="RGGLOC_API_URL not set")

GRID_INFO = {"model": {"n": 150, "r": 0.1, "d": 2, "norm": "L2"}, "grid": {"s": 5}}
TAIL = {
    "model": {"n": 1000, "p_target": 1.0, "d": 1, "norm": "Linf"},
    "grid": {"s": 5},
    "sampler": {"replicas": 200, "t": 1.0},
    "seed": 1,
}


def _url(path):
    return API_URL.rstrip("/") + path


def test_service_is_up():
    response = requests.get(_url("/"), timeout=5)
    assert response.status_code == 200
    assert response.json()["status"] == "healthy"


def test_grid_info_endpoint():
    response = requests.post(_url("/experiments/grid-info"), json=GRID_INFO, timeout=60)
    assert response.status_code == 200
    assert response.json()["m"] == 50


def test_tail_endpoint():
    response = requests.post(_url("/experiments/tail"), json=TAIL, timeout=300)
    assert response.status_code == 200
    body = response.json()
    assert body["sandwich"]["normalized_lower"] <= body["sandwich"]["normalized_upper"]


if __name__ == "__main__":
    if not API_URL:
        print("❌ RGGLOC_API_URL not set")
        sys.exit(1)

    print("=" * 60)
    print(f"RGGLOC API SMOKE TEST → {API_URL}")
    print("=" * 60)
    failed = 0
    for check in (test_service_is_up, test_grid_info_endpoint, test_tail_endpoint):
        try:
            check()
            print(f"   ✅ {check.__name__}")
        except Exception as e:
            failed += 1
            print(f"   ❌ {check.__name__}: {e}")
    print("=" * 60)
    sys.exit(1 if failed else 0)
