import itertools
import json

import numpy as np
import pytest

from engines.errors import ConfigError, GridTooCoarseError
from engines.geometry_engine import make_norm
from engines.process_engine import edge_count, make_params, sample_ppp
from engines.sgraded_engine import (
    IndexSet,
    batched_sgraded_edge_counts,
    build_grid,
    cell_metric,
    cell_metric_numeric_oracle,
    coarsen,
    config_from_dense,
    config_from_mapping,
    dump_cell_config,
    enumerate_max_clique_sets,
    expected_sgraded_edges,
    index_set_diameter,
    load_cell_config,
    max_clique_set_size,
    neighborhood,
    random_max_clique_set,
    sample_cell_config,
    sgraded_edge_count,
    tiny_grid,
)
from engines.replica_engine import replica_rng


def _brute_sgraded_edges(cfg):
    """Pairs of points whose cells are within metric distance s."""
    cells = cfg.coords()
    counts = cfg.counts
    total = int(np.sum(counts * (counts - 1) // 2))
    for a, b in itertools.combinations(range(len(cells)), 2):
        if cell_metric(cells[a], cells[b], cfg.grid) <= cfg.grid.s:
            total += int(counts[a] * counts[b])
    return total


def test_cell_metric_examples():
    grid = tiny_grid(50, 3, 1.0, make_norm("Linf", 2), node_cap=0)
    assert cell_metric([4, 4], [4, 4], grid) == 0
    assert cell_metric([0, 0], [1, 1], grid) == 1
    assert cell_metric([0, 0], [3, 0], grid) == 3
    assert cell_metric([0, 0], [49, 0], grid) == 1

    l2 = tiny_grid(50, 3, 1.0, make_norm("L2", 2), node_cap=0)
    # (δ − 1)_+ = (2, 2): ⌊2√2⌋ + 1 = 3
    assert cell_metric([0, 0], [3, 3], l2) == 3
    assert cell_metric([0, 0], [4, 4], l2) == 5


def test_cell_metric_vectorised():
    grid = tiny_grid(50, 3, 1.0, make_norm("L1", 2), node_cap=0)
    I = np.array([[0, 0], [10, 10]])
    J = np.array([[2, 2], [10, 14]])
    assert cell_metric(I, J, grid).tolist() == [3, 4]


@pytest.mark.parametrize("kind,dim", [("L1", 2), ("L2", 2), ("Linf", 3), ("L2", 1)])
def test_cell_metric_agrees_with_sampling_oracle(kind, dim):
    grid = tiny_grid(40, 4, 1.0, make_norm(kind, dim), node_cap=0)
    rng = replica_rng(5)
    for _ in range(15):
        I = rng.integers(0, 40, size=dim)
        J = (I + rng.integers(-6, 7, size=dim)) % 40
        assert cell_metric(I, J, grid) == cell_metric_numeric_oracle(I, J, grid, samples=2000, seed=1)


@pytest.mark.parametrize("s,size", [(4, 77), (6, 157), (8, 257), (10, 385), (12, 533)])
def test_neighbourhood_sizes_l2(s, size):
    params = make_params(1000.0, 0.01, make_norm("L2", 2))
    grid = build_grid(params, s, node_cap=0)
    assert grid.nbhd_size == size
    assert len(neighborhood([0, 0], grid)) == size


def test_overcount_falls_with_s():
    params = make_params(1000.0, 0.01, make_norm("L2", 2))
    ratios = [expected_sgraded_edges(build_grid(params, s, node_cap=0)) / params.mu for s in (4, 6, 8, 10, 12)]
    assert all(a > b for a, b in zip(ratios, ratios[1:]))
    assert all(r > 1.0 for r in ratios)


def test_linf_neighbourhoods_and_clique_sizes():
    grid = build_grid(make_params(1000.0, 0.01, make_norm("Linf", 2)), 3)
    assert grid.nbhd_size == 49
    assert max_clique_set_size(grid) == 16
    grid = build_grid(make_params(1000.0, 0.01, make_norm("Linf", 1)), 3)
    assert grid.nbhd_size == 7
    grid = build_grid(make_params(1000.0, 0.01, make_norm("Linf", 1)), 5)
    assert grid.tau_s == 6


def test_grid_info_example():
    grid = build_grid(make_params(150, 0.1, make_norm("L2", 2)), 5)
    assert grid.m == 50
    assert grid.D == pytest.approx(0.06)


def test_expected_sgraded_edges_example():
    grid = tiny_grid(50, 3, 2.0, make_norm("Linf", 1))
    assert grid.n == pytest.approx(100.0)
    assert expected_sgraded_edges(grid) == pytest.approx(700.0)


def test_build_grid_rejects_bad_s():
    params = make_params(100, 0.4, make_norm("L2", 2))
    with pytest.raises(GridTooCoarseError):
        build_grid(params, 3)
    with pytest.raises(ConfigError):
        build_grid(make_params(100, 0.01, make_norm("L2", 2)), 2)


@pytest.mark.parametrize("kind,dim,m,s", [("L2", 2, 12, 3), ("L1", 2, 9, 3), ("Linf", 1, 5, 3), ("L2", 1, 20, 4)])
def test_sgraded_edge_count_matches_pair_scan(kind, dim, m, s):
    grid = tiny_grid(m, s, 0.7, make_norm(kind, dim))
    for replica in range(3):
        cfg = sample_cell_config(grid, seed=9, replica=replica)
        assert sgraded_edge_count(cfg) == _brute_sgraded_edges(cfg)


@pytest.mark.parametrize("kind,dim,m,s", [("L2", 2, 12, 3), ("Linf", 1, 5, 3), ("L1", 1, 8, 4), ("L1", 1, 1, 3)])
def test_batched_edge_counts_match_per_config(kind, dim, m, s):
    grid = tiny_grid(m, s, 1.3, make_norm(kind, dim))
    configs = [sample_cell_config(grid, seed=4, replica=k) for k in range(6)]
    X = np.stack([cfg.dense().reshape(-1) for cfg in configs])
    assert batched_sgraded_edge_counts(grid, X).tolist() == [sgraded_edge_count(cfg) for cfg in configs]


def test_single_cell_torus():
    grid = tiny_grid(1, 3, 4.0, make_norm("L2", 1))
    cfg = config_from_dense(grid, [6])
    assert grid.nbhd_size == 1
    assert sgraded_edge_count(cfg) == 15


def test_continuum_edges_within_sgraded_edges():
    norm = make_norm("L2", 2)
    params = make_params(2000, 0.02, norm)
    grid = build_grid(params, 5)
    for replica in range(5):
        ps = sample_ppp(params.n, norm, seed=4, replica=replica)
        cfg = coarsen(ps, grid)
        assert cfg.total == ps.count
        assert edge_count(ps, params.r, norm) <= sgraded_edge_count(cfg)


def test_coarsen_edge_of_torus():
    from engines.process_engine import PointSet

    norm = make_norm("L2", 2)
    grid = tiny_grid(10, 3, 1.0, norm, node_cap=0)
    ps = PointSet(np.array([[0.999, 0.0], [0.95, 0.01]]), 2.0, 0, norm)
    cfg = coarsen(ps, grid)
    assert cfg.coords().tolist() == [[9, 0]]
    assert cfg.counts.tolist() == [2]


def test_index_set_operations():
    W = IndexSet.from_cells([[0, 1], [2, 2]], m=4)
    assert len(W) == 2
    assert len(W.invert()) == 14
    assert W.members(np.array([1, 10, 3])).tolist() == [True, True, False]
    assert W.invert().members(np.array([1, 3])).tolist() == [False, True]
    assert W.as_list() == [(0, 1), (2, 2)]
    with pytest.raises(ValueError):
        IndexSet.from_cells([[0, 4]], m=4)


def test_index_set_diameter():
    grid = tiny_grid(30, 3, 1.0, make_norm("Linf", 2), node_cap=0)
    W = IndexSet.from_cells([[0, 0], [3, 0], [29, 2]], m=30)
    assert index_set_diameter(W, grid) == 4
    assert index_set_diameter(IndexSet.from_cells([[5, 5]], m=30), grid) == 0


def test_config_helpers():
    grid = tiny_grid(6, 3, 1.0, make_norm("L2", 2))
    cfg = config_from_mapping(grid, {(0, 0): 2, (5, 5): 3, (1, 1): 0})
    assert cfg.total == 5
    assert len(cfg.cells) == 2
    assert cfg.count_at(grid.ravel([[5, 5], [2, 2]])).tolist() == [3, 0]
    swapped = cfg.replace_cells(grid.ravel([[0, 0]]), [0])
    assert swapped.total == 3
    assert cfg.dense().shape == (6, 6)


def test_cell_config_csv_and_sidecar(tmp_path):
    grid = build_grid(make_params(150, 0.1, make_norm("L2", 2)), 5)
    cfg = sample_cell_config(grid, seed=1)
    csv_path, sidecar_path = tmp_path / "cfg.csv", tmp_path / "cfg.json"
    sidecar = dump_cell_config(cfg, csv_path, sidecar_path, extra={"replica": 0})
    back = load_cell_config(csv_path, sidecar_path)
    assert np.array_equal(back.cells, cfg.cells)
    assert np.array_equal(back.counts, cfg.counts)
    assert back.grid.m == grid.m and back.grid.tau_s == grid.tau_s

    from_text = load_cell_config(csv_path, json.dumps(sidecar))
    assert from_text.total == cfg.total


def test_load_cell_config_missing_column(tmp_path):
    path = tmp_path / "bad.csv"
    path.write_text("i0,count\n1,2\n")
    sidecar = {"n": 150, "r": 0.1, "s": 5, "m": 50, "D": 0.06, "norm": "L2", "dim": 2, "seed": 0}
    with pytest.raises(ConfigError):
        load_cell_config(path, sidecar)


def test_enumerate_max_clique_sets_linf_line():
    grid = build_grid(make_params(1000.0, 0.01, make_norm("Linf", 1)), 3)
    sets = enumerate_max_clique_sets(grid, [5])
    assert len(sets) == 4
    assert all(len(W) == 4 and W.members(np.array([5]))[0] for W in sets)
    assert sorted(int(W.flat[0]) for W in sets) == [2, 3, 4, 5]


def test_random_max_clique_set_is_a_clique():
    grid = build_grid(make_params(1000.0, 0.01, make_norm("L2", 2)), 4)
    W = random_max_clique_set(grid, replica_rng(3))
    assert len(W) == grid.tau_s
    assert index_set_diameter(W, grid) <= grid.s
