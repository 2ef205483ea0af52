import math

import numpy as np
import pytest

from teamroute.energymap import (
    EnergyMap,
    GpHyperparams,
    GridSpec,
    MapError,
    NoPathError,
    SingularKernelError,
    astar_path,
    build_edge_costs,
    dijkstra_path,
    fit_gp,
    map_from_json,
    map_to_json,
    path_distribution,
)
from teamroute.numerics import GaussianScalar

HYPER = GpHyperparams(signal=6.0, length_scale=100.0, noise=1.0, prior_mean=30.0)


def small_grid(w=10, h=10, cell=10.0):
    return GridSpec(w, h, cell)


def test_prior_with_zero_samples():
    emap = fit_gp([], small_grid(), HYPER)
    cells = [(0, 0), (3, 4), (9, 9)]
    assert np.allclose(emap.mean_at(cells), HYPER.prior_mean)
    assert np.allclose(emap.variance_at(cells), HYPER.signal ** 2)
    cov = emap.covariance(cells)
    assert np.allclose(np.diag(cov), HYPER.signal ** 2)


def test_noiseless_sample_is_interpolated():
    grid = small_grid()
    hyper = GpHyperparams(signal=6.0, length_scale=100.0, noise=0.0, prior_mean=30.0)
    pos = grid.center((4, 5))
    emap = fit_gp([(pos, 42.0)], grid, hyper)
    assert emap.mean_at([(4, 5)])[0] == pytest.approx(42.0, abs=1e-8)
    assert emap.variance_at([(4, 5)])[0] == pytest.approx(0.0, abs=1e-8)


def test_duplicate_noiseless_samples_rejected():
    grid = small_grid()
    hyper = GpHyperparams(signal=6.0, length_scale=100.0, noise=0.0, prior_mean=30.0)
    pos = grid.center((2, 2))
    with pytest.raises(SingularKernelError):
        fit_gp([(pos, 10.0), (pos, 11.0)], grid, hyper)


def test_posterior_variance_never_exceeds_prior():
    rng = np.random.default_rng(0)
    grid = small_grid(20, 20, 5.0)
    samples = [((float(rng.uniform(0, 100)), float(rng.uniform(0, 100))),
                float(rng.normal(30, 6))) for _ in range(40)]
    emap = fit_gp(samples, grid, HYPER)
    cells = emap.free_cells()
    var = emap.variance_at(cells)
    assert np.all(var <= HYPER.signal ** 2 + 1e-8)
    assert np.all(var >= -1e-8)


def test_obstacle_cells_reject_queries():
    grid = small_grid()
    obstacles = np.zeros((10, 10), dtype=bool)
    obstacles[5, 5] = True
    emap = fit_gp([], grid, HYPER, obstacles)
    with pytest.raises(MapError):
        emap.mean_at([(5, 5)])
    with pytest.raises(MapError):
        fit_gp([(grid.center((5, 5)), 10.0)], grid, HYPER, obstacles)


def test_uniform_field_straight_path_matches_dijkstra():
    emap = fit_gp([], small_grid(), HYPER)
    a_star = astar_path(emap, (0, 0), (9, 9))
    oracle = dijkstra_path(emap, (0, 0), (9, 9))
    assert a_star.distribution.mean == pytest.approx(oracle.distribution.mean, abs=1e-9)
    # pure diagonal at prior rate
    assert a_star.length == pytest.approx(9 * 10.0 * math.sqrt(2.0), abs=1e-9)


def test_high_cost_band_forces_detour():
    grid = small_grid(15, 15, 1.0)
    # expensive vertical band in the middle, cheap elsewhere
    samples = []
    for iy in range(0, 15, 2):
        samples.append((grid.center((7, iy)), 300.0))
        samples.append((grid.center((1, iy)), 10.0))
        samples.append((grid.center((13, iy)), 10.0))
    hyper = GpHyperparams(signal=50.0, length_scale=3.0, noise=0.5, prior_mean=30.0)
    emap = fit_gp(samples, grid, hyper)
    a_star = astar_path(emap, (0, 7), (14, 7))
    oracle = dijkstra_path(emap, (0, 7), (14, 7))
    assert a_star.distribution.mean == pytest.approx(oracle.distribution.mean, rel=1e-12)
    # the optimum beats marching straight through the sampled expensive band
    straight = [(ix, 7) for ix in range(15)]
    straight_cost = float(np.dot(np.maximum(emap.mean_at(straight[:-1]), 0.0), np.ones(14)))
    assert a_star.distribution.mean < straight_cost - 1e-6
    assert a_star.cells != straight


def test_walled_endpoint_raises_no_path():
    grid = small_grid()
    obstacles = np.zeros((10, 10), dtype=bool)
    obstacles[0:3, 2] = True
    obstacles[2, 0:3] = True  # seal the corner around (0..1, 0..1)
    emap = fit_gp([], grid, HYPER, obstacles)
    with pytest.raises(NoPathError):
        astar_path(emap, (0, 0), (9, 9))


def test_astar_equals_dijkstra_on_random_maps():
    rng = np.random.default_rng(123)
    for trial in range(10):
        grid = small_grid(30, 30, 10.0)
        obstacles = np.zeros((30, 30), dtype=bool)
        for _ in range(5):
            x, y = rng.integers(2, 26, size=2)
            obstacles[y:y + 3, x:x + 3] = True
        obstacles[0, 0] = obstacles[29, 29] = False
        samples = [((float(rng.uniform(0, 300)), float(rng.uniform(0, 300))),
                    float(rng.normal(30, 6))) for _ in range(30)]
        samples = [(p, v) for p, v in samples
                   if not obstacles[grid.cell_of(p)[1], grid.cell_of(p)[0]]]
        emap = fit_gp(samples, grid, HYPER, obstacles)
        try:
            a_star = astar_path(emap, (0, 0), (29, 29))
        except NoPathError:
            continue
        oracle = dijkstra_path(emap, (0, 0), (29, 29))
        assert a_star.distribution.mean == pytest.approx(oracle.distribution.mean, abs=1e-9)


def test_path_distribution_single_segment():
    grid = small_grid(4, 1, 1.0)
    hyper = GpHyperparams(signal=2.0, length_scale=0.5, noise=0.0, prior_mean=30.0)
    emap = fit_gp([(grid.center((0, 0)), 30.0)], grid, hyper)
    # cells far from the sample revert to the prior (mean 30, var 4)
    dist = path_distribution(emap, [(2, 0), (3, 0)])
    assert dist.mean == pytest.approx(30.0, abs=1e-6)
    assert dist.variance == pytest.approx(4.0, abs=1e-6)


def test_path_distribution_covariance_arithmetic():
    # two cells, lengths 1 and 2: correlations enter through the 2x2 form
    grid = small_grid(3, 1, 1.0)
    emap = fit_gp([], grid, GpHyperparams(signal=1.0, length_scale=0.01,
                                          noise=0.0, prior_mean=10.0))
    # nearly independent cells at this tiny length scale
    cells = [(0, 0), (1, 0), (2, 0)]
    dist = path_distribution(emap, cells)
    assert dist.mean == pytest.approx(10.0 + 10.0, abs=1e-9)
    assert dist.variance == pytest.approx(1.0 + 1.0, abs=1e-6)


def test_path_distribution_correlated_pair_hand_computed():
    class Stub(EnergyMap):
        def __init__(self):
            pass

        def mean_at(self, cells):
            return np.array([10.0, 20.0])[: len(cells)]

        def covariance(self, cells):
            return np.array([[1.0, 0.5], [0.5, 1.0]])

        def _require_free(self, cells):
            return None

    stub = Stub()
    stub.grid = GridSpec(3, 1, 1.0)
    dist = path_distribution(stub, [(0, 0), (1, 0), (2, 0)])
    assert dist.mean == pytest.approx(1.0 * 10.0 + 1.0 * 20.0)
    assert dist.variance == pytest.approx(1.0 + 1.0 + 2 * 0.5)


def test_path_distribution_matches_monte_carlo():
    rng = np.random.default_rng(2024)
    grid = small_grid(20, 20, 10.0)
    samples = [((float(rng.uniform(0, 200)), float(rng.uniform(0, 200))),
                float(rng.normal(30, 6))) for _ in range(50)]
    emap = fit_gp(samples, grid, HYPER)
    path = astar_path(emap, (0, 0), (19, 13)).cells
    dist = path_distribution(emap, path)
    head = path[:-1]
    mean_vec = emap.mean_at(head)
    cov = emap.covariance(head)
    d = np.array([10.0 * math.sqrt(2.0) if (a[0] != b[0] and a[1] != b[1]) else 10.0
                  for a, b in zip(path, path[1:])])
    chol = np.linalg.cholesky(cov + 1e-10 * np.eye(len(head)))
    draws = mean_vec + rng.standard_normal((100_000, len(head))) @ chol.T
    totals = draws @ d
    se_mean = totals.std(ddof=1) / math.sqrt(len(totals))
    assert abs(totals.mean() - dist.mean) <= 3 * se_mean
    sample_var = totals.var(ddof=1)
    se_var = sample_var * math.sqrt(2.0 / (len(totals) - 1))
    assert abs(sample_var - dist.variance) <= 3 * se_var


def test_weight_scaled_edge_costs():
    rng = np.random.default_rng(5)
    grid = small_grid(20, 20, 10.0)
    samples = [((float(rng.uniform(0, 200)), float(rng.uniform(0, 200))),
                float(rng.normal(30, 6))) for _ in range(30)]
    emap = fit_gp(samples, grid, HYPER)
    locations = {0: (15.0, 15.0), 1: (180.0, 40.0), 2: (90.0, 170.0), 3: (15.0, 15.0)}
    pairs = [(i, j) for i in locations for j in locations if i != j]
    table, paths, notes = build_edge_costs(emap, locations, {0: 1.0, 1: 2.0}, pairs)
    for (i, j) in pairs:
        base = table[(0, i, j)]
        heavy = table[(1, i, j)]
        assert heavy.mean == pytest.approx(2.0 * base.mean, rel=1e-12)
        assert heavy.variance == pytest.approx(4.0 * base.variance, rel=1e-12)
        assert base.mean >= 0.0
    # identical locations (0 and 3 coincide) produce a degenerate zero edge
    assert table[(0, 0, 3)] == GaussianScalar(0.0, 0.0)
    # all 4*3 directed pairs present and finite
    assert len(table) == 2 * len(pairs)


def test_scaling_does_not_change_argmin_path():
    rng = np.random.default_rng(9)
    grid = small_grid(15, 15, 1.0)
    samples = [((float(rng.uniform(0, 15)), float(rng.uniform(0, 15))),
                float(rng.normal(30, 6))) for _ in range(25)]
    hyper = GpHyperparams(signal=6.0, length_scale=3.0, noise=1.0, prior_mean=30.0)
    emap = fit_gp(samples, grid, hyper)
    scaled = fit_gp([(p, 3.0 * v) for p, v in samples], grid,
                    GpHyperparams(signal=18.0, length_scale=3.0, noise=3.0, prior_mean=90.0))
    p1 = astar_path(emap, (0, 0), (14, 14))
    p2 = astar_path(scaled, (0, 0), (14, 14))
    assert p2.distribution.mean == pytest.approx(3.0 * p1.distribution.mean, rel=1e-9)


def test_map_json_roundtrip():
    rng = np.random.default_rng(77)
    grid = small_grid(12, 9, 2.5)
    obstacles = np.zeros((9, 12), dtype=bool)
    obstacles[4, 6] = True
    samples = [((float(rng.uniform(0, 12 * 2.5)), float(rng.uniform(0, 9 * 2.5))),
                float(rng.normal(30, 6))) for _ in range(8)]
    samples = [(p, v) for p, v in samples
               if not obstacles[grid.cell_of(p)[1], grid.cell_of(p)[0]]]
    emap = fit_gp(samples, grid, HYPER, obstacles)
    text = map_to_json(emap)
    again = map_from_json(text)
    assert map_to_json(again) == text
    cells = [(0, 0), (11, 8)]
    assert np.allclose(again.mean_at(cells), emap.mean_at(cells))
    assert np.allclose(again.variance_at(cells), emap.variance_at(cells))
