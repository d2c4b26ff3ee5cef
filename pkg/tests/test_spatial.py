import numpy as np
import pytest

from conftest import path_graph
from tgwish.graph import AdjacencyGraph
from tgwish.spatial import (COARSE_RHO_GRID, RHO_GRID, CarPrecision, calibrate_hyperpriors,
                            car_logdet, car_matrix, d_rho_inverse, grid_index, rho_grid)

EDGE2 = AdjacencyGraph(2, {(0, 1)})


def test_rho_grid_literal():
    assert RHO_GRID.size == 31
    assert RHO_GRID[0] == 0.0 and RHO_GRID[-1] == 0.99
    assert np.all(np.diff(RHO_GRID) > 0)
    assert np.allclose(RHO_GRID[:17], 0.05 * np.arange(17))
    assert np.allclose(RHO_GRID[17:22], [0.82, 0.84, 0.86, 0.88, 0.90])
    assert np.allclose(RHO_GRID[22:], 0.91 + 0.01 * np.arange(9))
    with pytest.raises(ValueError):
        RHO_GRID[0] = 1.0
    g = rho_grid()
    g[0] = 0.5
    assert RHO_GRID[0] == 0.0


def test_coarse_grid():
    assert np.allclose(COARSE_RHO_GRID, [0.05, 0.15, 0.25, 0.35, 0.45, 0.55, 0.65, 0.75,
                                         0.85, 0.95, 0.99])


def test_grid_index():
    assert grid_index(RHO_GRID, 0.99) == 30
    assert grid_index(RHO_GRID, 0.35) == 7
    with pytest.raises(ValueError):
        grid_index(RHO_GRID, 0.33)


def test_car_matrix_examples(wa):
    assert np.array_equal(car_matrix(wa, 0.0), np.diag(wa.degrees()))
    assert np.allclose(car_matrix(EDGE2, 0.5), [[1, -0.5], [-0.5, 1]])
    Q = car_matrix(wa, 1.0)
    assert np.allclose(Q.sum(axis=1), 0.0)
    assert np.linalg.matrix_rank(Q) == wa.n - 1
    with pytest.raises(ValueError):
        car_matrix(wa, 1.2)


def test_car_eigenvalues_positive_on_grid(wa):
    for rho in RHO_GRID:
        assert np.linalg.eigvalsh(car_matrix(wa, rho)).min() > 0


def test_d_rho_inverse(wa):
    assert np.allclose(d_rho_inverse(EDGE2, 0.5), np.array([[1, 0.5], [0.5, 1]]) / 0.75)
    assert np.allclose(d_rho_inverse(wa, 0.0), np.diag(1.0 / wa.degrees()))
    D = d_rho_inverse(wa, 0.99)
    assert np.linalg.eigvalsh(D).min() > 0
    for rho in RHO_GRID:
        R = car_matrix(wa, rho) @ d_rho_inverse(wa, rho) - np.eye(wa.n)
        assert np.abs(R).max() < 1e-10
    with pytest.raises(ValueError):
        d_rho_inverse(wa, 1.0)
    with pytest.raises(ValueError, match="isolated"):
        d_rho_inverse(AdjacencyGraph(3, {(0, 1)}), 0.5)


def test_car_logdet(wa):
    assert car_logdet(wa, 0.7) == pytest.approx(np.linalg.slogdet(car_matrix(wa, 0.7))[1])


def test_car_precision_flavors(wa):
    assert CarPrecision(wa, 0.5).logdet() == pytest.approx(car_logdet(wa, 0.5))
    icar = CarPrecision(wa, flavor="icar")
    assert icar.rho == 1.0 and not icar.is_proper
    with pytest.raises(ValueError):
        icar.logdet()
    ind = CarPrecision(wa, flavor="independent")
    assert np.array_equal(ind.matrix, np.eye(wa.n)) and ind.logdet() == 0.0
    with pytest.raises(ValueError):
        CarPrecision(wa, 1.0, "proper")
    with pytest.raises(ValueError):
        CarPrecision(wa, 0.5, "bym")


def test_calibration_degenerate_limit(wa):
    # alpha pinned at 0 and tau2 pushed to infinity (rate b -> 0)
    lo, hi = calibrate_hyperpriors(wa, sigma2_alpha=1e-12, a=0.5, b=1e-14, draws=20000, rng=0)
    assert lo == pytest.approx(1.0, abs=1e-3) and hi == pytest.approx(1.0, abs=1e-3)


def test_calibration_monotone_in_alpha_variance(wa):
    wide = calibrate_hyperpriors(wa, sigma2_alpha=1.0, draws=50000, rng=1)
    narrow = calibrate_hyperpriors(wa, sigma2_alpha=0.25, draws=50000, rng=1)
    assert wide[0] < narrow[0] < 1 < narrow[1] < wide[1]


def test_calibration_reproducible(wa):
    assert calibrate_hyperpriors(path_graph(4), draws=1000, rng=3) == \
        calibrate_hyperpriors(path_graph(4), draws=1000, rng=3)
