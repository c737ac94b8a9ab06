import math

import pytest

from engines.errors import ConfigError, UnreliableEstimateError
from engines.geometry_engine import make_norm
from engines.ldp_engine import (
    LDP_COLUMNS,
    ldp_row,
    normalized_log_tail,
    rate_function,
    sandwich_bounds,
    speed,
)
from engines.process_engine import make_params, r_for_p_target
from engines.sampler_engine import TailEstimate
from engines.sgraded_engine import build_grid


def _ldp_setting(n):
    norm = make_norm("Linf", 1)
    params = make_params(n, r_for_p_target(n, 1.0, norm), norm)
    return params, build_grid(params, 5)


def test_rate_function():
    assert rate_function(1.0, 1.0) == pytest.approx(0.70711, abs=1e-5)
    assert rate_function(2.0, 0.5) == pytest.approx(1.5)
    with pytest.raises(ConfigError):
        rate_function(0.0, 1.0)
    with pytest.raises(ConfigError):
        rate_function(1.0, 2.0)


def test_speed():
    assert speed(100.0, math.e) == pytest.approx(10.0)
    with pytest.raises(ConfigError):
        speed(100.0, 1.0)


@pytest.mark.parametrize("n", [1e3, 1e4, 1e5])
def test_sandwich_is_ordered(n):
    params, grid = _ldp_setting(n)
    bound = sandwich_bounds(params, grid, 1.0, 0.1)
    assert bound.lower_log <= bound.upper_log < 0.0
    assert bound.normalized_lower <= bound.normalized_upper
    assert bound.components["lower_planted_count"] >= math.sqrt(2.0 * params.mu)


def test_sandwich_brackets_tighten():
    widths = []
    for n in (1e3, 1e4, 1e5):
        params, grid = _ldp_setting(n)
        bound = sandwich_bounds(params, grid, 1.0, 0.1)
        widths.append(bound.normalized_upper - bound.normalized_lower)
    assert widths[0] > widths[1] > widths[2]


def test_sandwich_validation():
    params, grid = _ldp_setting(1e3)
    with pytest.raises(ConfigError):
        sandwich_bounds(params, grid, 1.0, 0.5)
    with pytest.raises(ConfigError):
        sandwich_bounds(params, grid, -1.0, 0.1)


def test_normalized_log_tail():
    est = TailEstimate(1.0, 10.0, math.exp(-20.0), -20.0, 0.0, 0.1, 1000, "importance", ess=50.0)
    value, err = normalized_log_tail(est, 100.0, math.e)
    assert value == pytest.approx(-2.0)
    assert err == pytest.approx(0.01)


def test_normalized_log_tail_strict_rejects_unreliable():
    est = TailEstimate(1.0, 10.0, 0.0, -math.inf, 0.0, math.inf, 1000, "importance", ess=0.0, reliable=False)
    with pytest.raises(UnreliableEstimateError):
        normalized_log_tail(est, 100.0, 10.0, strict=True)
    value, _ = normalized_log_tail(est, 100.0, 10.0)
    assert value == -math.inf


def test_ldp_row():
    params, grid = _ldp_setting(1e4)
    row = ldp_row(sandwich_bounds(params, grid, 1.0, 0.1), 1.0)
    assert list(row) == LDP_COLUMNS
    assert row["I_t"] == pytest.approx(0.70711, abs=1e-5)
    assert math.isnan(ldp_row(sandwich_bounds(params, grid, 1.0, 0.1), 2.0)["I_t"])
