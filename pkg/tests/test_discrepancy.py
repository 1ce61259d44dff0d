import numpy as np
import pytest

from cbdm import kernels
from cbdm.discrepancy import (cost_matrix, finite_class_moments, finite_class_value, mmd_form, mmd_value,
                              transport_cost)
from cbdm.targets import from_points


def _brute_mmd2(spec, z, w, a, q):
    kk = lambda u, v: kernels.eval(spec, u, v)  # noqa: E731
    s = sum(w[i] * w[j] * kk(z[i], z[j]) for i in range(len(z)) for j in range(len(z)))
    s -= 2 * sum(w[i] * q[j] * kk(z[i], a[j]) for i in range(len(z)) for j in range(len(a)))
    s += sum(q[i] * q[j] * kk(a[i], a[j]) for i in range(len(a)) for j in range(len(a)))
    return s


def test_identical_distributions_give_zero():
    z = np.random.default_rng(0).normal(size=(6, 2))
    form = mmd_form(kernels.gaussian(1.0), z, from_points(z))
    assert mmd_value(form, np.full(6, 1 / 6)) <= 1e-10


def test_single_point():
    z = np.array([[0.3, 0.1]])
    assert mmd_value(mmd_form(kernels.gaussian(1.0), z, from_points(z)), [1.0]) == pytest.approx(0, abs=1e-15)


def test_two_by_two_brute_force():
    rng = np.random.default_rng(1)
    z, a = rng.normal(size=(2, 2)), rng.normal(size=(2, 2))
    spec = kernels.gaussian(1.0)
    w = np.array([0.3, 0.7])
    got = mmd_value(mmd_form(spec, z, from_points(a)), w)
    assert got == pytest.approx(_brute_mmd2(spec, z, w, a, [0.5, 0.5]), abs=1e-12)


def test_one_hot_three_terms():
    spec = kernels.composed(kernels.gaussian(0.8))
    z = np.array([[0.0, 1.0], [1.0, -1.0]])
    target = from_points(z[1:])
    want = kernels.eval(spec, z[0], z[0]) - 2 * kernels.eval(spec, z[0], z[1]) + kernels.eval(spec, z[1], z[1])
    assert mmd_value(mmd_form(spec, z, target), [1.0, 0.0]) == pytest.approx(want, rel=1e-12)


def test_random_weights_ten_points():
    rng = np.random.default_rng(2)
    z, a = rng.normal(size=(10, 3)), rng.normal(size=(5, 3))
    spec = kernels.composed(kernels.gaussian(1.1))
    q = rng.dirichlet(np.ones(5))
    w = rng.dirichlet(np.ones(10))
    got = mmd_value(mmd_form(spec, z, from_points(a, q)), w)
    assert got == pytest.approx(_brute_mmd2(spec, z, w, a, q), abs=1e-12)


def test_dimension_mismatch():
    with pytest.raises(ValueError):
        mmd_form(kernels.gaussian(1.0), np.zeros((2, 2)), from_points(np.zeros((2, 3))))


def test_finite_class_single_moment():
    z = np.array([[0.0, 0.0], [1.0, 0.0]])
    m = finite_class_moments([lambda a: a[:, 0]], z, from_points([[0.5, 0.0]]))
    assert finite_class_value(m, [0.5, 0.5]) == 0.0


def test_finite_class_two_moments():
    z = np.array([[0.0, 1.0], [1.0, 2.0], [2.0, 0.0]])
    target = from_points([[1.0, 1.0]])
    m = finite_class_moments([lambda a: a[:, 0], lambda a: a[:, 1]], z, target)
    w = np.array([0.5, 0.25, 0.25])
    # weighted t mean 0.75 (gap 0.25), weighted x mean 1.0 (gap 0)
    assert finite_class_value(m, w) == pytest.approx(0.25)


def test_transport_cost_cases():
    assert transport_cost(np.eye(2) / 2, np.array([[0, 1], [1, 0.0]])) == 0.0
    C = cost_matrix(np.array([[0.0]]), from_points([[1.0]]))
    assert transport_cost([[1.0]], C, [1.0]) == 1.0
    C = np.array([[1.0, 3.0], [2.0, 1.5]])
    best = min(transport_cost(np.diag([0.5, 0.5]), C), transport_cost(np.fliplr(np.diag([0.5, 0.5])), C))
    assert best == pytest.approx(1.25)
    with pytest.raises(ValueError):
        transport_cost([[1.0, 0.0]], [[1.0, 1.0]], masses=[0.5, 0.5])


@pytest.mark.parametrize("spec", [
    kernels.composed(kernels.gaussian(0.8, d_t=1)),
    kernels.composed(kernels.exponential()),
    kernels.gaussian(1.3),
    kernels.gaussian(1.0, mask="x"),
    kernels.composed(kernels.polynomial(2, mask="t")),
])
@pytest.mark.parametrize("build", ["shuffle", "product"])
def test_grid_constant_matches_full_sum(spec, build, small_data):
    from cbdm.targets import build_marginal_product, build_shuffle
    target = build_shuffle(small_data, K=4, seed=2) if build == "shuffle" else build_marginal_product(small_data)
    full = mmd_form(spec, small_data, target)
    structured = mmd_form(spec, small_data, target, max_atoms_for_constant=1)
    assert structured.c_exact
    assert structured.c == pytest.approx(full.c, rel=1e-10)


def test_polynomial_on_z_falls_back_to_subsample(small_data):
    from cbdm.targets import build_shuffle
    target = build_shuffle(small_data, K=4, seed=2)
    assert not mmd_form(kernels.polynomial(1), small_data, target, max_atoms_for_constant=10).c_exact
