import numpy as np
import pytest

from cbdm import kernels
from cbdm.data import Dataset
from cbdm.targets import build_marginal_product, build_shuffle, from_points
from cbdm.tuning import FrontierPoint, balance_report, ess, frontier, mark_knee


def test_ess_values():
    assert ess(np.full(10, 0.1)) == pytest.approx(10)
    assert ess([1.0, 0.0]) == 1.0
    assert ess([0.5, 0.25, 0.25]) == pytest.approx(8 / 3)


def _setup(n=20):
    rng = np.random.default_rng(0)
    x = rng.normal(size=(n, 2))
    d = Dataset(x[:, 0] + rng.normal(size=n), x, None, ("t",), ("x1", "x2"))
    spec = kernels.resolve_bandwidths(kernels.composed(kernels.gaussian("median")), d.z)
    return d, spec, build_shuffle(d, 10)


def test_single_cell():
    d, spec, tg = _setup()
    pts = frontier(d, tg, spec, [0.0], [5.0])
    assert len(pts) == 1 and pts[0].knee


def test_large_lambda_raises_ess():
    d, spec, tg = _setup()
    pts = frontier(d, tg, spec, [0.0, 1e6], [5.0])
    assert pts[-1].ess >= pts[0].ess - 1e-6


def test_grid_reproducible():
    d, spec, tg = _setup()
    a = frontier(d, tg, spec, [0.0, 0.01, 0.1], [2.0, 5.0])
    b = frontier(d, tg, spec, [0.1, 0.0, 0.01], [5.0, 2.0])
    assert len(a) == 6 and a == b


def test_invalid_cap_grid():
    d, spec, tg = _setup()
    with pytest.raises(ValueError):
        frontier(d, tg, spec, [0.0], [0.5])


def test_mark_knee_rule():
    pts = [FrontierPoint(0, 1, 1.0, 5, True), FrontierPoint(0, 2, 1.1, 9, True), FrontierPoint(0, 3, 1.5, 20, True),
           FrontierPoint(0, 4, float("nan"), float("nan"), False, True, "x")]
    marked = mark_knee(pts)
    assert [p.knee for p in marked] == [False, True, False, False]


def test_balance_report_covariance_identity():
    d, _, _ = _setup(8)
    tg = build_marginal_product(d)
    rows = balance_report(d, tg, np.full(8, 1 / 8))
    assert len(rows) == 1 + 2 + 2 + 2
    t, x = d.treatments[:, 0], d.covariates
    for k in range(2):
        gap = next(r["gap"] for r in rows if r["moment"] == f"mean(t*x{k + 1})")
        cov = np.mean(t * x[:, k]) - t.mean() * x[:, k].mean()
        assert gap == pytest.approx(cov, abs=1e-12)


def test_balance_report_balanced():
    # symmetric 4-point design: t and x uncorrelated, target = data
    t = np.array([1.0, -1.0, 1.0, -1.0])
    x = np.array([[1.0], [1.0], [-1.0], [-1.0]])
    d = Dataset(t, x, None, ("t",), ("x1",))
    rows = balance_report(d, from_points(d.z), np.full(4, 0.25))
    assert all(abs(r["gap"]) <= 1e-10 for r in rows)


def test_failed_cell_is_recorded_not_raised():
    from cbdm.primal import SolverConfig
    from cbdm.tuning import _solve_cell
    from cbdm.discrepancy import mmd_form
    d, spec, tg = _setup()
    p = _solve_cell((mmd_form(spec, d, tg), 0.0, 0.5, SolverConfig()))
    assert p.failed and "cap" in p.message
