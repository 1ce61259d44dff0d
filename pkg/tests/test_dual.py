import math

import numpy as np
import pytest

from cbdm import kernels
from cbdm.data import Dataset
from cbdm.discrepancy import mmd_form
from cbdm.dual import (DualSolution, LegendrePair, dual_objective, rho_star_eval, solve_dual,
                       weights_from_arguments, weights_from_dual)
from cbdm.primal import SolverConfig, solve_mmd
from cbdm.targets import build_shuffle, from_points


def test_quadratic_pair_values():
    p = LegendrePair("quadratic", 2.0)
    assert rho_star_eval(p, 1.0) == (0.25, 0.5)
    assert rho_star_eval(p, -3.0) == (0.0, 0.0)
    assert rho_star_eval(p, 5.0) == (2 * 5 - 4, 2.0)


def test_entropic_pair_values():
    p = LegendrePair("entropic", 5.0)
    assert rho_star_eval(p, 1.0) == (1.0, 1.0)
    v, g = rho_star_eval(p, 10.0)
    assert g == 5.0 and v == pytest.approx(50 - 5 * math.log(5))


def test_pair_validation():
    with pytest.raises(ValueError):
        LegendrePair("huber", 1.0)
    with pytest.raises(ValueError):
        LegendrePair("quadratic", 0.0)


def _instance(n, seed):
    rng = np.random.default_rng(seed)
    x = rng.normal(size=(n, 2))
    d = Dataset(x[:, 0] + rng.normal(size=n), x, None, ("t",), ("x1", "x2"))
    return d, kernels.composed(kernels.gaussian(1.0)), build_shuffle(d, 10, seed=seed)


def test_objective_at_origin():
    d, spec, tg = _instance(5, 0)
    form = mmd_form(spec, d, tg)
    for kind, want in (("quadratic", 0.0), ("entropic", math.exp(-1))):
        val = dual_objective(LegendrePair(kind, 5.0), 0.1, form.K_ss, form.b, form.c, 0.0, np.zeros(5), 0.0)
        assert val == pytest.approx(want, abs=1e-15)


def test_identical_data_entropic_uniform():
    d, spec, _ = _instance(8, 1)
    tg = from_points(d.z)
    pair = LegendrePair("entropic", 5.0)
    sol = solve_dual(spec, d, tg, pair, 1e-3)
    np.testing.assert_allclose(weights_from_dual(sol, pair).weights, 1 / 8, atol=1e-4)


def test_n3_matches_primal():
    rng = np.random.default_rng(3)
    z = rng.normal(size=(3, 2))
    d = Dataset(z[:, 0], z[:, 1:], None, ("t",), ("x1",))
    tg = from_points(rng.normal(size=(4, 2)))
    spec = kernels.gaussian(1.0)
    pair = LegendrePair("quadratic", 2.0)
    w_dual = weights_from_dual(solve_dual(spec, d, tg, pair, 0.1), pair).weights
    w_primal = solve_mmd(mmd_form(spec, d, tg), SolverConfig(lam=0.1, cap=2.0)).weights
    np.testing.assert_allclose(w_dual, w_primal, atol=1e-4)


@pytest.mark.parametrize("seed", range(3))
def test_random_instances_match_primal(seed):
    d, spec, tg = _instance(15, seed)
    pair = LegendrePair("quadratic", 5.0)
    sol = solve_dual(spec, d, tg, pair, 0.05)
    assert sol.converged
    w_primal = solve_mmd(mmd_form(spec, d, tg), SolverConfig(lam=0.05, cap=5.0)).weights
    np.testing.assert_allclose(weights_from_dual(sol, pair).weights, w_primal, atol=1e-4)
    assert sol.alpha.shape == (d.n + tg.m,)


def test_constant_argument_uniform():
    pair = LegendrePair("quadratic", 5.0)
    np.testing.assert_allclose(weights_from_arguments(pair, np.full(4, pair.rho_prime_at_one())), 0.25)


def test_saturated_arguments_raise():
    pair = LegendrePair("quadratic", 3.0)
    args = np.full(4, 10.0)
    np.testing.assert_allclose(weights_from_arguments(pair, args), 3.0 / 4)
    sol = DualSolution(0.0, np.zeros(4), 0.0, 0.0, 0.0, True, 0, 1.0, 1.0, args, np.ones(1))
    with pytest.raises(ValueError, match="sum"):
        weights_from_dual(sol, pair)
