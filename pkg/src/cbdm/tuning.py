"""Effective sample size, the lambda/W frontier and balance diagnostics."""

from __future__ import annotations

import logging
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass

import numpy as np

from .discrepancy import as_points, mmd_form
from .kernels import KernelSpec
from .primal import SolverConfig, solve_mmd
from .targets import TargetSample

log = logging.getLogger(__name__)

KNEE_FACTOR = 1.2


def ess(w) -> float:
    w = np.asarray(w, dtype=float)
    return float(1.0 / np.sum(w * w))


@dataclass(frozen=True)
class FrontierPoint:
    lam: float
    cap: float
    ipm_value: float
    ess: float
    converged: bool
    failed: bool = False
    message: str = ""
    knee: bool = False


def _solve_cell(args):
    form, lam, cap, base = args
    try:
        cfg = SolverConfig(lam=lam, cap=cap, max_iterations=base.max_iterations,
                           objective_tolerance=base.objective_tolerance,
                           residual_tolerance=base.residual_tolerance, seed=base.seed)
        sol = solve_mmd(form, cfg)
        return FrontierPoint(lam, cap, sol.ipm_value, sol.ess, sol.converged)
    except Exception as exc:  # a failed cell must not abort the grid
        return FrontierPoint(lam, cap, float("nan"), float("nan"), False, True, f"{type(exc).__name__}: {exc}")


def mark_knee(points: list[FrontierPoint], factor: float = KNEE_FACTOR) -> list[FrontierPoint]:
    """Flag the point with maximal ESS among those with IPM <= factor * min IPM.

    This selection rule is a heuristic default, not part of the method; users
    are expected to inspect the whole frontier.
    """
    ok = [p for p in points if not p.failed]
    if not ok:
        return list(points)
    best = min(p.ipm_value for p in ok)
    eligible = [p for p in ok if p.ipm_value <= factor * best + 1e-15]
    knee = max(eligible, key=lambda p: (p.ess, -p.ipm_value))
    return [FrontierPoint(**{**p.__dict__, "knee": p is knee}) for p in points]


def frontier(data, target: TargetSample, spec: KernelSpec, lambdas, caps,
             base: SolverConfig | None = None, threads: int = 1) -> list[FrontierPoint]:
    """Solve the MMD program on every (lambda, cap) cell, sorted by (lambda, cap)."""
    lambdas, caps = sorted(float(x) for x in lambdas), sorted(float(x) for x in caps)
    if not lambdas or not caps:
        raise ValueError("empty lambda or cap grid")
    if any(c < 1 for c in caps):
        raise ValueError("caps must be >= 1")
    base = base or SolverConfig()
    form = mmd_form(spec, data, target, seed=base.seed)
    jobs = [(form, lam, cap, base) for lam in lambdas for cap in caps]
    if threads > 1:
        with ProcessPoolExecutor(max_workers=threads) as ex:
            points = list(ex.map(_solve_cell, jobs))
    else:
        points = [_solve_cell(j) for j in jobs]
    return mark_knee(points)


def _weighted_corr(a, b, w) -> float:
    ma, mb = w @ a, w @ b
    cov = w @ ((a - ma) * (b - mb))
    va, vb = w @ (a - ma) ** 2, w @ (b - mb) ** 2
    if va <= 0 or vb <= 0:
        return float("nan")
    return float(cov / np.sqrt(va * vb))


def balance_report(data, target: TargetSample, w) -> list[dict]:
    """Weighted vs target means of t, each x_k and each t * x_k, plus weighted corr(t, x_k).

    Each row has ``moment``, ``weighted``, ``target`` and ``gap``; correlation
    rows compare with 0, the value under independence.
    """
    z = as_points(data)
    w = np.asarray(w, dtype=float)
    d_t = target.d_t
    d_x = z.shape[1] - d_t
    a, q = target.atoms, target.masses
    t_names = getattr(data, "treatment_names", tuple(f"t{j + 1}" for j in range(d_t)))
    x_names = getattr(data, "covariate_names", tuple(f"x{k + 1}" for k in range(d_x)))
    rows = []

    def add(name, vals_w, vals_q):
        mw, mq = float(w @ vals_w), float(q @ vals_q)
        rows.append({"moment": name, "weighted": mw, "target": mq, "gap": mw - mq})

    for j in range(d_t):
        add(f"mean({t_names[j]})", z[:, j], a[:, j])
    for k in range(d_x):
        add(f"mean({x_names[k]})", z[:, d_t + k], a[:, d_t + k])
    for j in range(d_t):
        for k in range(d_x):
            add(f"mean({t_names[j]}*{x_names[k]})", z[:, j] * z[:, d_t + k], a[:, j] * a[:, d_t + k])
    for j in range(d_t):
        for k in range(d_x):
            r = _weighted_corr(z[:, j], z[:, d_t + k], w)
            rows.append({"moment": f"corr({t_names[j]},{x_names[k]})", "weighted": r, "target": 0.0, "gap": r})
    return rows
