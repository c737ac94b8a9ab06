import numpy as np
import pytest

from engines.geometry_engine import Ball, BallBox, Box, make_norm, probe_measure
from engines.hull_engine import (
    index_union,
    inner_hull,
    inscribed_ball_diameter,
    inscribed_ratio,
    outer_hull,
)
from engines.process_engine import make_params
from engines.replica_engine import replica_rng
from engines.sgraded_engine import IndexSet, build_grid, random_max_clique_set, tiny_grid
from engines.verify_engine import check_inscribed_trend


def test_aligned_box_hulls():
    grid = tiny_grid(50, 3, 1.0, make_norm("L2", 2), node_cap=0)
    box = Box((0.1, 0.1), (0.2, 0.2))
    assert len(inner_hull(box, grid)) == 100
    # closed cells sharing a face with the box count as touching
    assert len(outer_hull(box, grid)) == 144


@pytest.mark.parametrize("kind", ["L1", "L2", "Linf"])
def test_hulls_sandwich_the_ball(kind):
    norm = make_norm(kind, 2)
    grid = tiny_grid(60, 3, 1.0, norm, node_cap=0)
    rng = replica_rng(8)
    for _ in range(10):
        ball = Ball(rng.random(2), 0.07, norm)
        inner, outer = inner_hull(ball, grid), outer_hull(ball, grid)
        assert np.all(outer.members(inner.flat))
        assert index_union(inner, grid).measure <= probe_measure(ball) <= index_union(outer, grid).measure


def test_hulls_across_the_seam():
    norm = make_norm("Linf", 2)
    grid = tiny_grid(20, 3, 1.0, norm, node_cap=0)
    # ball [−0.05, 0.05]² around the corner covers cells {19, 0} on both axes
    ball = Ball((0.0, 0.0), 0.05, norm)
    assert sorted(inner_hull(ball, grid).as_list()) == [(0, 0), (0, 19), (19, 0), (19, 19)]
    assert len(outer_hull(ball, grid)) == 16


def test_tiny_ball_has_empty_inner_hull():
    norm = make_norm("L2", 2)
    grid = tiny_grid(20, 3, 1.0, norm, node_cap=0)
    ball = Ball((0.525, 0.525), 0.01, norm)
    assert len(inner_hull(ball, grid)) == 0
    assert outer_hull(ball, grid).as_list() == [(10, 10)]


def test_ball_box_hulls_inside_ball_hulls():
    norm = make_norm("L2", 2)
    grid = tiny_grid(80, 3, 1.0, norm, node_cap=0)
    ball = Ball((0.5, 0.5), 0.1, norm)
    half = BallBox(ball, Box((0.5, 0.3), (0.3, 0.4)))
    assert np.all(outer_hull(ball, grid).members(outer_hull(half, grid).flat))
    assert np.all(inner_hull(ball, grid).members(inner_hull(half, grid).flat))
    assert index_union(inner_hull(half, grid), grid).measure <= probe_measure(half)


def test_cell_union_membership():
    grid = tiny_grid(10, 3, 1.0, make_norm("L2", 2), node_cap=0)
    union = index_union(IndexSet.from_cells([[0, 0], [9, 9]], m=10), grid)
    assert union.measure == pytest.approx(0.02)
    assert union.contains([[0.05, 0.05], [0.95, 0.99], [0.5, 0.5]]).tolist() == [True, True, False]


@pytest.mark.parametrize("s", [16, 32, 64])
def test_hull_fattening_budget(s):
    norm = make_norm("L2", 2)
    params = make_params(100.0, 0.1, norm)
    grid = build_grid(params, s, node_cap=0)
    rng = replica_rng(s)
    for _ in range(5):
        ball = Ball(rng.random(2), params.r / 2.0, norm)
        gap = index_union(outer_hull(ball, grid), grid).measure - index_union(inner_hull(ball, grid), grid).measure
        assert gap <= 32.0 * params.tau / s


def test_inscribed_ball_of_square_block():
    grid = tiny_grid(40, 3, 1.0, make_norm("Linf", 2), node_cap=0)
    block = IndexSet.from_cells([[i, j] for i in range(4) for j in range(4)], m=40)
    assert inscribed_ball_diameter(block, grid) == pytest.approx(4 / 40)

    wrapped = IndexSet.from_cells([[(i + 38) % 40, j] for i in range(4) for j in range(4)], m=40)
    assert inscribed_ball_diameter(wrapped, grid) == pytest.approx(4 / 40)


def test_inscribed_ball_rejects_empty_set():
    grid = tiny_grid(10, 3, 1.0, make_norm("L2", 2), node_cap=0)
    with pytest.raises(ValueError):
        inscribed_ball_diameter(IndexSet(10, 2, []), grid)


def test_inscribed_ratio_of_clique_sets_approaches_one():
    norm = make_norm("L2", 2)
    params = make_params(100.0, 0.01, norm)
    ratios = {}
    for s in (8, 16, 32):
        grid = build_grid(params, s, node_cap=0)
        ratios[s] = inscribed_ratio(random_max_clique_set(grid, replica_rng(s), node_cap=0), grid)
        assert ratios[s] >= 1.0 - 1.6 / s
    assert ratios[32] > 0.8
    assert abs(ratios[32] - 1.0) < abs(ratios[8] - 1.0)


def test_inscribed_trend_reports_shrinking_excess():
    result = check_inscribed_trend(20240521)
    assert result["passed"]
    excess = result["detail"]["excess"]
    assert set(excess) == {8, 16, 32}
    assert result["detail"]["shrinking_excess"] == (abs(excess[8]) >= abs(excess[16]) >= abs(excess[32]))
