import numpy as np
import pytest
from scipy import stats

from cbdm import simulation as sim


def test_covariate_marginals_and_copula():
    x, z = sim.draw_covariates(10_000, np.random.default_rng(0), return_normals=True)
    for k in range(4):
        assert stats.kstest(x[:, k], stats.uniform(-1, 2).cdf).statistic <= 0.05
    c = np.corrcoef(z.T)
    assert np.all(np.abs(c[np.triu_indices(4, 1)] - 0.2) <= 0.03)


def test_single_row_deterministic():
    a = sim.draw_covariates(1, np.random.default_rng(9))
    np.testing.assert_array_equal(a, sim.draw_covariates(1, np.random.default_rng(9)))
    assert a.shape == (1, 4)


def test_beta_shapes_at_origin():
    a, b = sim.beta_shapes(np.zeros((1, 4)))
    assert sim.propensity_mean(np.zeros((1, 4)))[0] == pytest.approx(0.8)
    assert (a[0], b[0]) == pytest.approx((4.0, 1.0))


def test_treatment_conditional_mean():
    x = np.tile([[0.3, -0.2, 0.5, 0.9]], (100_000, 1))
    t = sim.draw_treatment(x, np.random.default_rng(1))
    assert abs(t.mean() - sim.propensity_mean(x[:1])[0]) <= 0.01
    assert t.min() > 0 and t.max() < 1


def test_response_values():
    assert sim.response("sinusoidal", [[0, 0, 0.3, 0.1]])[0] == pytest.approx(1.0)
    assert sim.response("quadratic", [[1, 1, 0, 0]])[0] == pytest.approx(6.0)
    assert sim.response("absolute", [[-0.3, 0.4, 0, 0]])[0] == pytest.approx(0.7)
    assert sim.response("cubic", [[0.5, 0.5, 0, 0]])[0] == pytest.approx(2.0)
    with pytest.raises(ValueError):
        sim.response("linear", [[0, 0, 0, 0]])


def test_noise_variance():
    rng = np.random.default_rng(2)
    d = sim.generate("quadratic", 20_000, rng, beta=0.0)
    resid = d.outcomes - sim.response("quadratic", d.covariates)
    assert resid.var() == pytest.approx(0.1, rel=0.05)


def test_config_validation():
    with pytest.raises(ValueError):
        sim.ScenarioConfig(replications=0)
    with pytest.raises(ValueError):
        sim.ScenarioConfig(n_values=(5,))
    with pytest.raises(ValueError):
        sim.ScenarioConfig(beta=float("inf"))
    with pytest.raises(ValueError):
        sim.ScenarioConfig(methods=("ipw",))


def test_rmse_with_se():
    rmse, se = sim.rmse_with_se([1.0, 1.0, 1.0], 1.0)
    assert (rmse, se) == (0.0, 0.0)
    rmse, se = sim.rmse_with_se([0.0, 2.0, 1.0, 1.0], 1.0)
    assert rmse == pytest.approx(np.sqrt(0.5))
    assert se > 0


SMALL = sim.ScenarioConfig(families=("quadratic", "sinusoidal"), n_values=(30,), replications=2,
                           methods=sim.METHODS, seed=11)


def test_benchmark_bit_identical_rerun():
    one = sim.ScenarioConfig(families=("cubic",), n_values=(25,), replications=2, seed=3)
    a = [r.as_dict() for r in sim.run_benchmark(one)]
    b = [r.as_dict() for r in sim.run_benchmark(one)]
    assert a == b


def test_parallel_matches_serial():
    a = sim.run_benchmark(SMALL)
    b = sim.run_benchmark(SMALL, threads=2)
    assert [r.as_dict() for r in a] == [r.as_dict() for r in b]
    assert [r.estimates for r in a] == [r.estimates for r in b]
    assert len(a) == 2 * len(sim.METHODS)
    assert all(r.failures == 0 for r in a)


def test_solver_failure_recorded(monkeypatch):
    def boom(*args, **kwargs):
        raise RuntimeError("forced")
    monkeypatch.setattr(sim, "solve_w1_nearest", boom)
    cfg = sim.ScenarioConfig(families=("quadratic",), n_values=(20,), replications=2,
                             methods=("unweighted", "cbdm_wass"))
    rows = {r.method: r for r in sim.run_benchmark(cfg)}
    assert rows["cbdm_wass"].failures == 2 and rows["cbdm_wass"].replications == 0
    assert rows["unweighted"].replications == 2


def test_confounding_biases_naive_estimator():
    cfg = sim.ScenarioConfig(n_values=(1000,), replications=100, methods=("unweighted",))
    for row in sim.run_benchmark(cfg):
        assert abs(row.mean_estimate - 1) > 3 * row.sd_estimate / np.sqrt(row.replications), row.family


def test_quadratic_n500_gauss_beats_unweighted():
    cfg = sim.ScenarioConfig(families=("quadratic",), n_values=(500,), replications=100,
                             methods=("unweighted", "cbdm_gauss"))
    rows = {r.method: r for r in sim.run_benchmark(cfg)}
    assert rows["unweighted"].rmse > rows["cbdm_gauss"].rmse


def test_quadratic_n1000_gauss_closer_in_most_replications():
    cfg = sim.ScenarioConfig(families=("quadratic",), n_values=(1000,), replications=100,
                             methods=("unweighted", "cbdm_gauss"))
    rows = {r.method: r for r in sim.run_benchmark(cfg)}
    naive = np.abs(np.array(rows["unweighted"].estimates) - 1)
    cbdm = np.abs(np.array(rows["cbdm_gauss"].estimates) - 1)
    assert np.sum(cbdm < naive) >= 80


def test_unconfounded_variant_is_unbiased():
    # Without confounding every estimator is centred on beta. Balancing still
    # lowers the RMSE here because it removes the f(X) part of the variance.
    cfg = sim.ScenarioConfig(families=("quadratic",), n_values=(200,), replications=100,
                             methods=("unweighted", "cbdm_gauss"), confounded=False)
    rows = {r.method: r for r in sim.run_benchmark(cfg)}
    for r in rows.values():
        assert abs(r.mean_estimate - 1) <= 3 * r.sd_estimate / np.sqrt(r.replications), r.method
    assert rows["cbdm_gauss"].rmse <= rows["unweighted"].rmse
