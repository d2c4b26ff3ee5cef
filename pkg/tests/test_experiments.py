import csv
import math

import numpy as np
import pytest

from conftest import path_graph
from tgwish.experiments import (SE_COUNTIES, UK_RATES_2008, MetricReport, SimScenario,
                                calibrate_range, coverage_report, crossval_multivariate,
                                cv_metrics, effective_params, expected_count_fixture,
                                fold_assignment, great_circle, interval_coverage, matern52,
                                matern_field, ramse, read_labels, simulate_counts,
                                simulate_separable, washington_labels, washington_subgraph,
                                write_reports)
from tgwish.graph import washington_centroids
from tgwish.model_multi import MultiDataset, MultiPriorConfig
from tgwish.model_uni import UniPriorConfig, fit_univariate
from tgwish.spatial import car_matrix


def test_great_circle_known_distance():
    # one degree of latitude along a meridian
    d = great_circle([[0.0, 0.0], [0.0, 1.0]])
    assert d[0, 1] == pytest.approx(6371.0 * math.pi / 180, rel=1e-9)
    assert np.allclose(d, d.T) and np.all(np.diag(d) == 0)


def test_matern_basic_properties():
    assert matern52(0.0, 10.0) == 1.0
    d = np.sort(np.random.default_rng(0).uniform(0, 500, 200))
    r = matern52(d, 80.0)
    assert np.all(np.diff(r) <= 0) and np.all(r > 0)
    # closed form at d = length scale: (1 + sqrt5 + 5/3) exp(-sqrt5)
    s5 = math.sqrt(5.0)
    assert matern52(80.0, 80.0) == pytest.approx((1 + s5 + 5 / 3) * math.exp(-s5))


def test_calibrated_range_on_wa():
    dist = great_circle(washington_centroids())
    ls = calibrate_range(dist)
    corr = matern52(dist[np.triu_indices_from(dist, 1)], ls)
    assert 0.49 <= np.median(corr) <= 0.51


def test_matern_field_degenerate_coords():
    with pytest.raises(ValueError):
        calibrate_range(np.zeros((3, 3)))


def test_matern_field_covariance(rng):
    dist = great_circle([[0.0, 0.0], [0.0, 0.5], [0.5, 0.0]])
    draws = matern_field(dist, 60.0, rng, size=20_000)
    assert np.abs(np.cov(draws.T) - matern52(dist, 60.0)).max() < 0.04


def test_fixtures():
    labels = washington_labels()
    assert set(labels.values()) == {-1, 0, 1}
    g, idx = washington_subgraph()
    assert g.n == 10 and g.is_connected() and g.labels == SE_COUNTIES
    E = expected_count_fixture("larynx", idx)
    assert E.shape == (10,) and np.all(E > 0)
    full = expected_count_fixture("lung")
    ratio = full / expected_count_fixture("larynx")
    assert np.allclose(ratio, UK_RATES_2008["lung"] / UK_RATES_2008["larynx"])
    with pytest.raises(ValueError):
        expected_count_fixture("skin")


def test_read_labels(tmp_path, se10):
    (tmp_path / "l.csv").write_text("county,label\n" + "\n".join(
        f"{c},{k % 3 - 1}" for k, c in enumerate(se10.labels)) + "\n")
    assert read_labels(tmp_path / "l.csv", se10).tolist() == [k % 3 - 1 for k in range(10)]
    (tmp_path / "bad.csv").write_text("county,label\nAdams,1\n")
    with pytest.raises(ValueError):
        read_labels(tmp_path / "bad.csv", se10)


def test_simulation_null_scenario():
    g = path_graph(4)
    coords = np.array([[0.0, 0.0], [0.0, 0.3], [0.3, 0.3], [0.3, 0.0]])
    sc = SimScenario(g, np.full(4, 5.0), np.zeros(4), coords, M=0.0, beta=0.0, S=1,
                     length_scale=1e-9)
    # with a vanishing range the field is still unit-variance noise, so check theta
    # against its definition rather than against one
    rep = simulate_counts(sc, 0)[0]
    assert np.allclose(rep.theta, np.exp(rep.u))
    assert np.all(rep.data.E == 5.0)


def test_simulation_means_and_determinism(wa):
    sc = SimScenario.washington("lung", M=1.0, S=200, counties=SE_COUNTIES)
    a = simulate_counts(sc, 5)
    b = simulate_counts(sc, 5)
    assert all(np.array_equal(x.data.y, y.data.y) for x, y in zip(a, b))
    lt = np.array([np.log(r.theta) for r in a])
    expected = sc.M * sc.labels
    assert np.abs(lt.mean(axis=0) - expected).max() < 0.35
    # counts average E * theta
    y = np.array([r.data.y for r in a])
    th = np.array([r.theta for r in a])
    assert abs(y.sum() / (sc.E * th).sum() - 1) < 0.02


def test_labels_all_zero_gives_smooth_surface():
    g, _ = washington_subgraph()
    sc = SimScenario.washington("larynx", M=2.0, S=3)
    sc0 = SimScenario(sc.graph, sc.E, np.zeros(sc.graph.n), sc.coords, M=2.0, S=3,
                      length_scale=sc.length_scale)
    for r in simulate_counts(sc0, 1):
        assert np.allclose(np.log(r.theta), sc0.beta * r.x + r.u)


def test_simulate_separable_shapes(se10, rng):
    E = np.full((10, 2), 4.0)
    Y, U = simulate_separable(se10, E, [0.0, 1.0], car_matrix(se10, 0.5), np.eye(2), rng)
    assert Y.shape == U.shape == (10, 2) and np.all(Y == np.round(Y))


def test_ramse_examples():
    truth = np.ones((2, 3))
    assert ramse(truth, np.ones((2, 4, 3))) == 0.0
    assert ramse(truth, np.full((2, 4, 3), 2.0)) == pytest.approx(1.0)
    draws = np.zeros((1, 2, 2))
    draws[0, 0, 0] = 1.0
    assert ramse(np.zeros((1, 2)), draws) == pytest.approx(0.5)
    with pytest.raises(ValueError):
        ramse(truth, np.ones((3, 4, 3)))


def test_ramse_permutation_invariant(rng):
    truth, draws = rng.random((3, 5)), rng.random((3, 7, 5))
    p = rng.permutation(5)
    assert ramse(truth[:, p], draws[:, :, p]) == pytest.approx(ramse(truth, draws))
    assert ramse(truth[::-1], draws[::-1]) == pytest.approx(ramse(truth, draws))


def test_cv_metrics_examples():
    y = np.array([1.0, 5.0, 7.0])
    assert cv_metrics(y, y, np.zeros(3)) == (0.0, 0.0)
    assert cv_metrics(y, y + 2, np.full(3, 3.0)) == (4.0, 3.0)
    with pytest.raises(ValueError):
        cv_metrics([], [], [])
    rep = MetricReport(bias2=4.0, var=3.0)
    assert rep.mse == 7.0 and MetricReport().mse is None


def test_effective_params_degenerate():
    ll = np.tile([[-1.2, -0.7]], (5, 1))
    y, E = np.array([1.0, 0.0]), np.ones(2)
    theta = np.array([math.exp(-0.2) * 1.0, 0.7])
    # loglik at theta_hat is exactly the repeated draw
    ll = np.tile([[1 * math.log(theta[0]) - theta[0], -theta[1]]], (5, 1))
    p_dic, p_waic = effective_params(ll, y, E, theta)
    assert p_dic == pytest.approx(0.0, abs=1e-12) and p_waic == 0.0


def test_effective_params_two_draws():
    y, E = np.array([1.0, 2.0]), np.ones(2)
    draws = np.array([[1.0, 1.0], [2.0, 2.0]])

    def ll(t):
        return [y[i] * math.log(t[i]) - t[i] - math.lgamma(y[i] + 1) for i in range(2)]

    L = np.array([ll(d) for d in draws])
    # at theta_hat = 1.5: 1*log1.5 - 1.5 + 2*log1.5 - 1.5 - log2
    at_hat = 3 * math.log(1.5) - 3.0 - math.log(2.0)
    mean_sum = 0.5 * ((0 - 1) + (0 - 1 - math.log(2)) + (math.log(2) - 2) + (2 * math.log(2) - 2 - math.log(2)))
    var1 = 0.5 * (math.log(2) - 1) ** 2   # ddof=1 variance of two values a, b is (a-b)^2/2
    var2 = 0.5 * (2 * math.log(2) - 1) ** 2
    p_dic, p_waic = effective_params(L, y, E, draws.mean(axis=0))
    assert p_dic == pytest.approx(2 * (at_hat - mean_sum))
    assert p_waic == pytest.approx(var1 + var2)


def test_effective_params_ignore_heldout():
    L = np.array([[-1.0, np.nan], [-2.0, np.nan]])
    a = effective_params(L, [1.0, 3.0], [1.0, 1.0], [1.0, 1.0])
    b = effective_params(L[:, :1], [1.0], [1.0], [1.0])
    assert a == pytest.approx(b)
    with pytest.raises(ValueError):
        effective_params(np.zeros(3), [1.0], [1.0], [1.0])


def test_effective_params_on_model_fit(se10, capsys):
    rng = np.random.default_rng(3)
    E = np.full(10, 8.0)
    y = rng.poisson(E * np.exp(0.3 * rng.standard_normal(10))).astype(float)
    from tgwish.model_uni import ArealDataset
    s = fit_univariate(ArealDataset(se10, y, E), UniPriorConfig(n_iter=4000, burn=1000, thin=4),
                       None, "car")
    p_dic, p_waic = effective_params(s["loglik"], y, E, s["theta"].mean(axis=0))
    assert p_waic >= 0 and np.isfinite(p_dic)
    print(f"p_DIC = {p_dic:.2f}, p_WAIC = {p_waic:.2f}")


def test_coverage_examples():
    y = np.array([1.0, 3.0, 30.0])
    rep = interval_coverage(np.full(3, -np.inf), np.full(3, np.inf), y)
    assert rep.coverage == 1.0
    rep = interval_coverage(y + 1, y + 1, y)
    assert rep.coverage == 0.0 and rep.length == 0.0
    rep = interval_coverage(y - 1, y + 1, np.array([10.0, 11.0, 12.0]))
    assert rep.length_low is None and rep.length_high is None
    rep = interval_coverage([0, 0, 10], [4, 6, 40], y)
    assert rep.length_low == 5.0 and rep.length_high == 30.0 and rep.coverage == 1.0


def test_coverage_report_from_draws(rng):
    y_rep = rng.poisson(10.0, (4000, 50))
    y = rng.poisson(10.0, 50)
    rep = coverage_report(y_rep, y)
    assert rep.coverage > 0.85 and rep.length > 10


def test_write_reports(tmp_path):
    rows = [MetricReport(ramse=1.0).as_row(), {"flavor": "tgw", "ramse": 2.0}]
    write_reports(rows, tmp_path / "r.csv")
    with open(tmp_path / "r.csv") as fh:
        got = list(csv.DictReader(fh))
    assert got[0]["bias2"] == "" and got[1]["flavor"] == "tgw"


def test_fold_assignment():
    f = fold_assignment((10, 3), k=10, seed=0)
    assert f.shape == (10, 3) and np.bincount(f.ravel()).tolist() == [3] * 10
    assert np.array_equal(f, fold_assignment((10, 3), k=10, seed=0))
    with pytest.raises(ValueError):
        fold_assignment((2, 2), k=5)


def test_crossval_holds_out_every_cell_once(se10):
    rng = np.random.default_rng(0)
    E = np.full((10, 2), 6.0)
    Y, _ = simulate_separable(se10, E, [0.0, 0.0], 4 * car_matrix(se10, 0.9), 4 * np.eye(2), rng)
    data = MultiDataset(se10, Y, E)
    seen = []
    prior = MultiPriorConfig(kr_flavor="car", n_iter=200, burn=50, thin=2, gc_draws=2000)
    rep = crossval_multivariate(data, prior, k=5, seed=1,
                                on_fold=lambda k, fit: seen.append(np.isnan(fit["loglik"][0])))
    assert len(seen) == 5
    assert np.array_equal(np.sum(seen, axis=0), np.ones((10, 2)))
    assert np.array_equal(seen[2], fold_assignment((10, 2), 5, 1) == 2)
    assert rep.mse == rep.bias2 + rep.var
