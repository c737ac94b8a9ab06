import numpy as np
import pytest

from engines.extract_engine import (
    THM2_SCHEMA,
    certify_thm1,
    certify_thm2,
    extract_P,
    extract_T,
    extract_bulk_exceedance,
    localization_profile,
    probe_family,
)
from engines.geometry_engine import Ball, BallBox, Box, make_norm
from engines.process_engine import PointSet, make_params, r_for_p_target
from engines.sampler_engine import planted_continuum_sampler
from engines.sgraded_engine import config_from_mapping, sample_cell_config
from engines.stats_engine import derive_scales, empty_config
from engines.verify_engine import planted_grid

PLANTED_CELLS = [[100], [101], [102], [103]]


@pytest.fixture(scope="module")
def planted():
    grid, scales = planted_grid()
    background = sample_cell_config(grid, seed=42)
    flat = grid.ravel(PLANTED_CELLS)
    cfg = background.replace_cells(flat, [630, 628, 631, 629])
    return grid, scales, background, cfg


def test_planted_config_is_localized(planted):
    grid, scales, _, cfg = planted
    report = certify_thm2(cfg, grid, scales, 0.2)
    assert report.thm2_pass
    assert report.failure_mode is None
    assert report.frakP.as_list() == [(100,), (101,), (102,), (103,)]
    assert report.diamP == 3
    assert report.max_dev_inside < 0.01
    assert report.max_ratio_outside < 0.2


def test_nominal_config_is_not_localized(planted):
    grid, scales, background, _ = planted
    report = certify_thm2(background, grid, scales, 0.2)
    assert not report.thm2_pass
    assert report.failure_mode is not None


def test_empty_config_has_insufficient_mass(planted):
    grid, scales, _, _ = planted
    cfg = empty_config(grid)
    assert len(extract_bulk_exceedance(cfg, scales)) == 0
    report = certify_thm2(cfg, grid, scales, 0.2)
    assert report.failure_mode == "insufficient_mass"
    assert report.cardP == 0


def test_extract_T_keeps_both_heavy_cells(planted):
    grid, scales, _, _ = planted
    count = int(np.ceil(0.6 * scales.q))
    cfg = config_from_mapping(grid, {(9,): count, (3,): count})
    frakT = extract_T(cfg, extract_bulk_exceedance(cfg, scales), scales)
    assert frakT.as_list() == [(3,), (9,)]


def test_extract_T_breaks_ties_toward_smaller_cell(planted):
    grid, scales, _, _ = planted
    count = int(np.ceil(1.1 * scales.q))
    cfg = config_from_mapping(grid, {(9,): count, (3,): count})
    frakT = extract_T(cfg, extract_bulk_exceedance(cfg, scales), scales)
    assert frakT.as_list() == [(3,)]


def test_extract_P_drops_stragglers(planted):
    grid, _, _, _ = planted
    scales = derive_scales(grid, xi=1e-4)
    # 4 x 625 falls short of the mass threshold, so T must take the straggler
    cfg = config_from_mapping(grid, {(3,): 625, (4,): 625, (5,): 625, (6,): 625, (20,): 40})
    frakT = extract_T(cfg, extract_bulk_exceedance(cfg, scales), scales)
    assert frakT.as_list() == [(3,), (4,), (5,), (6,), (20,)]
    assert extract_P(cfg, frakT, scales).as_list() == [(3,), (4,), (5,), (6,)]


def test_split_mass_fails_on_diameter(planted):
    grid, scales, _, _ = planted
    cfg = config_from_mapping(grid, {(100,): 629, (101,): 629, (5000,): 629, (5001,): 629})
    report = certify_thm2(cfg, grid, scales, 0.2)
    assert not report.thm2_pass
    assert report.failure_mode == "diameter"
    assert report.diamP > grid.s


def test_report_record(planted):
    grid, scales, _, cfg = planted
    record = certify_thm2(cfg, grid, scales, 0.2).to_dict()
    assert record["schema"] == THM2_SCHEMA
    assert record["cardP"] == 4
    assert record["frakP"] == [(100,), (101,), (102,), (103,)]
    assert record["scales"]["q"] == pytest.approx(scales.q)


def test_localization_profile(planted):
    grid, scales, _, cfg = planted
    profile = localization_profile(cfg, grid, scales)
    assert profile["thm2_pass"]
    assert profile["top_counts"][0] == 631
    # the plant alone carries V(𝔓) ≈ 1
    assert profile["V_P"] == pytest.approx(2518 / scales.q)
    assert profile["Q_P"] > profile["Q_P_Pc"]


def test_probe_family_shapes():
    norm = make_norm("L2", 2)
    A = Ball((0.5, 0.5), 0.05, norm)
    probes = dict(probe_family(A))
    assert probes["A"] is A
    assert len(probes) == 1 + 3 * 5 + 4 + 1
    assert isinstance(probes["half_+0"], BallBox)
    assert isinstance(probes["cube"], Box)
    assert probes["ball0.5"].radius == pytest.approx(0.025)
    assert probes["ball0.5_+1"].center == pytest.approx((0.5, 0.525))


def test_ball_certificate_on_planted_points():
    norm = make_norm("L2", 2)
    n = 1e4
    params = make_params(n, r_for_p_target(n, 1.0, norm), norm)
    passes = 0
    for replica in range(3):
        ps = planted_continuum_sampler(params, 1.0, seed=17, replica=replica, center=(0.3, 0.6))
        report = certify_thm1(ps, params, 1.0, 0.25)
        passes += report["clause_a"]["pass_A"]
        assert report["target"] == pytest.approx(np.sqrt(2.0 * params.mu))
        assert np.allclose(report["center"], (0.3, 0.6), atol=params.r / 2)
    assert passes >= 2


def test_ball_certificate_on_empty_points():
    norm = make_norm("L2", 2)
    params = make_params(1e4, r_for_p_target(1e4, 1.0, norm), norm)
    report = certify_thm1(PointSet(np.zeros((0, 2)), 1e4, 0, norm), params, 1.0, 0.25)
    assert not report["thm1_pass"]
    assert report["failure_mode"] == "empty"
