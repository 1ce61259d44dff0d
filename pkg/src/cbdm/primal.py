"""Primal CBDM weights: minimize IPM^2 + lambda * ||w||^2 over the capped simplex.

The capped simplex is {w >= 0, sum(w) = 1, w_i <= W / n}. Solvers:

* :func:`solve_mmd` -- accelerated projected gradient on the MMD quadratic program;
* :func:`solve_finite_class` -- finite moment classes (LP at lambda = 0, smooth dual
  otherwise, projected subgradient on request);
* :func:`solve_w1_nearest` -- closed-form Wasserstein-1 weights (lambda = 0, no cap);
* :func:`solve_w1_transport` -- Wasserstein-1 program over transport plans.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass

import numpy as np
from scipy import optimize
from scipy.linalg import eigvalsh
from scipy.spatial.distance import cdist

from .data import WeightSolution
from .discrepancy import (FiniteClassMoments, MmdQuadraticForm, as_points, cost_matrix,
                          finite_class_value, mmd_value)
from .targets import TargetSample

log = logging.getLogger(__name__)

TIE_TOL = 1e-12
MAX_PLAN_ENTRIES = 4_000_000


class SolverError(RuntimeError):
    pass


class InfeasibleCapError(ValueError):
    pass


@dataclass(frozen=True)
class SolverConfig:
    """Settings shared by the iterative solvers.

    ``cap`` is the clipping constant W (each weight is at most W / n) and
    ``lam`` the ridge strength on ||w||^2.
    """

    lam: float = 0.0
    cap: float = 5.0
    max_iterations: int = 20000
    objective_tolerance: float = 1e-12
    residual_tolerance: float = 1e-10
    step_rule: str = "fixed"
    seed: int = 0

    def __post_init__(self):
        if not self.cap >= 1:
            raise ValueError(f"cap W must be >= 1, got {self.cap}")
        if not self.lam >= 0:
            raise ValueError(f"lambda must be >= 0, got {self.lam}")
        if not self.objective_tolerance > 0 or not self.residual_tolerance > 0:
            raise ValueError("tolerances must be > 0")
        if self.step_rule not in ("fixed", "backtracking"):
            raise ValueError(f"unknown step rule {self.step_rule!r}")
        if self.max_iterations < 1:
            raise ValueError("max_iterations must be >= 1")


def _is_uniform_cap(n: int, cap: float) -> bool:
    return n * cap <= 1.0 + 1e-12


def project_capped_simplex(v, cap: float) -> np.ndarray:
    """Euclidean projection of ``v`` onto {w >= 0, sum(w) = 1, w_i <= cap}.

    The projection is ``clip(v - theta, 0, cap)`` for the unique shift
    ``theta`` making the entries sum to one. The sum is piecewise linear and
    decreasing in theta with kinks at ``v_i`` and ``v_i - cap``, so theta is
    located exactly by a search over the sorted kinks.
    """
    v = np.asarray(v, dtype=float)
    n = v.shape[0]
    if n * cap < 1.0 - 1e-12:
        raise InfeasibleCapError(f"infeasible cap: n * cap = {n * cap} < 1")
    if _is_uniform_cap(n, cap):
        return np.full(n, 1.0 / n)
    vs = np.sort(v)
    prefix = np.concatenate([[0.0], np.cumsum(vs)])

    def total(theta):
        # entries with v_i > theta + cap saturate; theta < v_i <= theta + cap are free
        lo = np.searchsorted(vs, theta, side="right")
        hi = np.searchsorted(vs, theta + cap, side="right")
        return cap * (n - hi) + (prefix[hi] - prefix[lo]) - (hi - lo) * theta

    kinks = np.unique(np.concatenate([vs, vs - cap]))
    s = total(kinks)
    # s falls from n * cap >= 1 at the first kink to 0 at the last one
    k = int(np.clip(np.searchsorted(-s, -1.0, side="right") - 1, 0, len(kinks) - 2))
    a, bnd = kinks[k], kinks[k + 1]
    sa, sb = s[k], s[k + 1]
    theta = a if sa == sb else a + (sa - 1.0) * (bnd - a) / (sa - sb)
    w = np.clip(v - theta, 0.0, cap)
    # polish the shift on the free set so that the sum is 1 to rounding
    free = (w > 0) & (w < cap)
    if free.any():
        theta += (w.sum() - 1.0) / free.sum()
        w = np.clip(v - theta, 0.0, cap)
    return w


def _lambda_max(K: np.ndarray, iters: int = 50, seed: int = 0) -> tuple[float, bool]:
    """Power-method estimate of the top eigenvalue of a PSD matrix."""
    x = np.random.default_rng(seed).standard_normal(K.shape[0])
    x /= np.linalg.norm(x)
    est = 0.0
    for _ in range(iters):
        y = K @ x
        nrm = np.linalg.norm(y)
        if nrm == 0:
            return 0.0, True
        new = float(x @ y)
        x = y / nrm
        if abs(new - est) <= 1e-6 * abs(new):
            return new, True
        est = new
    return est, False


def _check_psd(K: np.ndarray) -> None:
    lo = float(eigvalsh(K, subset_by_index=[0, 0])[0])
    scale = max(1.0, float(np.max(np.abs(np.diag(K)))))
    if lo < -1e-8 * scale:
        raise SolverError(f"MMD form is not PSD: smallest eigenvalue {lo:.3e}")


def _uniform_solution(n, cap, ipm, objective, **diag) -> WeightSolution:
    return WeightSolution(np.full(n, 1.0 / n), cap, ipm, 0, True, objective,
                          diagnostics={"uniform_forced": True, **diag})


def solve_mmd(form: MmdQuadraticForm, cfg: SolverConfig, init=None, check_psd: bool = True) -> WeightSolution:
    """Minimize ``MMD^2(P^w, Q) + lam * ||w||^2`` over the capped simplex.

    Runs monotone FISTA with adaptive restart on
    ``F(w) = w'(K + lam I)w - 2 w'b`` from the uniform weights (or ``init``
    projected onto the feasible set). Stops when the projected-gradient residual
    drops below ``cfg.residual_tolerance`` or the relative objective decrease
    over 50 iterations falls below ``cfg.objective_tolerance``.
    """
    n, lam = form.n, cfg.lam
    cap = cfg.cap / n
    K, b = form.K_ss, form.b
    if _is_uniform_cap(n, cap):
        w = np.full(n, 1.0 / n)
        mmd2 = mmd_value(form, w)
        return _uniform_solution(n, cfg.cap, float(np.sqrt(mmd2)), mmd2 + lam * w @ w)
    if check_psd and n <= 4000:
        _check_psd(K)

    def f(w):
        return float(w @ (K @ w) + lam * (w @ w) - 2.0 * (b @ w))

    def grad(w):
        return 2.0 * (K @ w + lam * w - b)

    top, ok = _lambda_max(K, seed=cfg.seed)
    L = 2.0 * (max(top, 0.0) + lam) * 1.01 + 1e-300
    backtrack = cfg.step_rule == "backtracking" or not ok
    if not ok:
        log.info("power method did not converge; using backtracking steps")

    w = project_capped_simplex(np.full(n, 1.0 / n) if init is None else init, cap)
    fw = f(w)
    y, t = w.copy(), 1.0
    history = [fw + form.c]
    window = 50
    converged = False
    residual = np.inf
    it = 0
    for it in range(1, cfg.max_iterations + 1):
        gy = grad(y)
        fy = f(y) if backtrack else None
        while True:
            z = project_capped_simplex(y - gy / L, cap)
            if not backtrack:
                break
            d = z - y
            if f(z) <= fy + gy @ d + 0.5 * L * (d @ d) + 1e-14 * abs(fy):
                break
            L *= 2.0
        fz = f(z)
        if fz <= fw:
            w_new, f_new = z, fz
            t_new = 0.5 * (1.0 + np.sqrt(1.0 + 4.0 * t * t))
            y = w_new + ((t - 1.0) / t_new) * (z - w)
        else:
            # momentum overshot: restart from the current iterate
            w_new, f_new = w, fw
            t_new = 1.0
            y = w.copy()
        w, fw, t = w_new, f_new, t_new
        history.append(fw + form.c)

        if it % 10 == 0 or it == cfg.max_iterations:
            residual = float(np.max(np.abs(w - project_capped_simplex(w - grad(w) / L, cap))))
            if residual <= cfg.residual_tolerance:
                converged = True
                break
        if it >= window:
            old = history[-window - 1]
            if old - history[-1] <= cfg.objective_tolerance * max(abs(history[-1]), 1e-300):
                residual = float(np.max(np.abs(w - project_capped_simplex(w - grad(w) / L, cap))))
                converged = True
                break

    mmd2 = mmd_value(form, w)
    return WeightSolution(w, cfg.cap, float(np.sqrt(mmd2)), it, converged, mmd2 + lam * float(w @ w),
                          tuple(history),
                          {"mmd2": mmd2, "residual": residual, "lipschitz": L, "c_exact": form.c_exact})


def mmd_objective(form: MmdQuadraticForm, lam: float, w) -> float:
    """``MMD^2 + lam * ||w||^2`` without clamping (for oracles and checks)."""
    w = np.asarray(w, dtype=float)
    return form.raw_value(w) + lam * float(w @ w)


def pg_residual(form: MmdQuadraticForm, cfg: SolverConfig, w) -> float:
    """Projected-gradient optimality residual ``||w - P(w - grad/L)||_inf``."""
    n = form.n
    top = float(eigvalsh(form.K_ss, subset_by_index=[n - 1, n - 1])[0])
    L = 2.0 * (top + cfg.lam)
    g = 2.0 * (form.K_ss @ w + cfg.lam * w - form.b)
    return float(np.max(np.abs(w - project_capped_simplex(w - g / L, cfg.cap / n))))


# ---------------------------------------------------------------- finite class

def finite_class_objective(m: FiniteClassMoments, lam: float, w) -> float:
    return finite_class_value(m, w) ** 2 + lam * float(np.dot(w, w))


def _finite_lp(m: FiniteClassMoments, cap: float) -> np.ndarray:
    k, n = m.A.shape
    c = np.zeros(n + 1)
    c[-1] = 1.0
    A_ub = np.block([[m.A, -np.ones((k, 1))], [-m.A, -np.ones((k, 1))]])
    b_ub = np.concatenate([m.b, -m.b])
    A_eq = np.concatenate([np.ones(n), [0.0]])[None, :]
    bounds = [(0.0, cap)] * n + [(0.0, None)]
    res = optimize.linprog(c, A_ub=A_ub, b_ub=b_ub, A_eq=A_eq, b_eq=[1.0], bounds=bounds,
                           method="highs")
    if res.status != 0:
        raise SolverError(f"finite-class LP failed: {res.message}")
    return project_capped_simplex(res.x[:n], cap)


def _finite_dual(m: FiniteClassMoments, lam: float, cap: float, max_iter: int):
    """Maximize the scaled dual  psi(u) - lam/4 ||u||_1^2  with u = u+ - u-.

    ``psi(u) = min_w ||w||^2 + u'(A w - b)`` over the capped simplex, attained at
    ``w(u) = P(-A'u / 2)``. Splitting u into non-negative parts makes the
    penalty smooth so a bound-constrained quasi-Newton method applies.
    """
    A, b = m.A, m.b
    k = A.shape[0]

    def fun(v):
        u = v[:k] - v[k:]
        w = project_capped_simplex(-0.5 * (A.T @ u), cap)
        r = A @ w - b
        s = v.sum()
        val = -(w @ w + u @ r) + 0.25 * lam * s * s
        g = np.concatenate([-r, r]) + 0.5 * lam * s
        return val, g

    res = optimize.minimize(fun, np.zeros(2 * k), jac=True, method="L-BFGS-B",
                            bounds=[(0.0, None)] * (2 * k),
                            options={"maxiter": max_iter, "maxfun": 5 * max_iter,
                                     "ftol": 1e-16, "gtol": 1e-13, "maxcor": 30})
    u = res.x[:k] - res.x[k:]
    return project_capped_simplex(-0.5 * (A.T @ u), cap), res


def _finite_subgradient(m: FiniteClassMoments, lam: float, cap: float, max_iter: int):
    n = m.A.shape[1]
    w = np.full(n, 1.0 / n)

    def subgrad(w):
        r = m.gaps(w)
        k = int(np.argmax(np.abs(r)))
        return 2.0 * r[k] * m.A[k] + 2.0 * lam * w

    g0 = np.linalg.norm(subgrad(w))
    best, best_f = w, finite_class_objective(m, lam, w)
    if g0 == 0:
        return best, 0
    c = 1.0 / g0
    for t in range(1, max_iter + 1):
        w = project_capped_simplex(w - (c / np.sqrt(t)) * subgrad(w), cap)
        fw = finite_class_objective(m, lam, w)
        if fw < best_f:
            best, best_f = w, fw
    return best, max_iter


def solve_finite_class(m: FiniteClassMoments, cfg: SolverConfig, method: str = "auto") -> WeightSolution:
    """Minimize ``max_k (A_k w - b_k)^2 + lam ||w||^2`` over the capped simplex.

    ``method="auto"`` uses an exact LP for lam = 0 and the smooth dual for
    lam > 0; ``"subgradient"`` runs the projected subgradient method with
    steps ``c / sqrt(t)`` and best-iterate tracking.
    """
    n = m.A.shape[1]
    cap = cfg.cap / n
    lam = cfg.lam
    if _is_uniform_cap(n, cap):
        w = np.full(n, 1.0 / n)
        return _uniform_solution(n, cfg.cap, finite_class_value(m, w), finite_class_objective(m, lam, w))
    info = {}
    if method == "subgradient":
        w, iters = _finite_subgradient(m, lam, cap, cfg.max_iterations)
        converged = True
    elif method in ("auto", "lp", "dual"):
        if lam == 0 or method == "lp":
            w, iters, converged = _finite_lp(m, cap), 1, True
            info["method"] = "lp"
        else:
            w, res = _finite_dual(m, lam, cap, cfg.max_iterations)
            iters, converged = int(res.nit), bool(res.success)
            info.update(method="dual", dual_message=str(res.message))
    else:
        raise ValueError(f"unknown method {method!r}")
    ipm = finite_class_value(m, w)
    info["ipm_squared"] = ipm ** 2
    return WeightSolution(w, cfg.cap, ipm, iters, converged, ipm ** 2 + lam * float(w @ w),
                          diagnostics=info)


# -------------------------------------------------------------- Wasserstein-1

def solve_w1_nearest(data, target: TargetSample, chunk: int = 20000) -> WeightSolution:
    """Send each target atom's mass to its nearest sample point (ties split evenly).

    This is the exact Wasserstein-1 minimizer without clipping and with
    lambda = 0. ``ipm_value`` is the achieved linear transport cost.
    """
    z = as_points(data)
    n = z.shape[0]
    if target.m == 0:
        raise ValueError("empty target")
    w = np.zeros(n)
    cost = 0.0
    for s in range(0, target.m, chunk):
        C = cdist(z, target.atoms[s:s + chunk])
        q = target.masses[s:s + chunk]
        dmin = C.min(axis=0)
        ties = C <= dmin + TIE_TOL
        share = q / ties.sum(axis=0)
        w += ties @ share
        cost += float(q @ dmin)
    return WeightSolution(w, float(n), cost, 1, True, cost ** 2, diagnostics={"transport_cost": cost})


def _project_columns(V: np.ndarray, q: np.ndarray) -> np.ndarray:
    """Project every column j of V onto {x >= 0, sum(x) = q_j}."""
    n = V.shape[0]
    U = -np.sort(-V, axis=0)
    css = np.cumsum(U, axis=0) - q[None, :]
    ks = np.arange(1, n + 1)[:, None]
    cond = U - css / ks > 0
    rho = n - 1 - np.argmax(cond[::-1], axis=0)
    theta = css[rho, np.arange(V.shape[1])] / (rho + 1)
    return np.maximum(V - theta[None, :], 0.0)


def solve_w1_transport(data, target: TargetSample, cfg: SolverConfig) -> WeightSolution:
    """Solve ``min (sum_ij M_ij ||Z_i - z_j||)^2 + lam ||M 1||^2`` over plans M.

    Plans have non-negative entries and column sums equal to the target
    masses; the weights are the row sums. No per-entry cap is applied here.
    Monotone FISTA with backtracking from the plan of the uniform weights.
    """
    z = as_points(data)
    n, mm = z.shape[0], target.m
    if n * mm > MAX_PLAN_ENTRIES:
        raise SolverError(f"transport plan of size {n}x{mm} exceeds {MAX_PLAN_ENTRIES} entries")
    C = cost_matrix(z, target)
    q = target.masses
    lam = cfg.lam

    def f(M):
        s = float(np.sum(M * C))
        r = M.sum(axis=1)
        return s * s + lam * float(r @ r)

    def grad(M):
        return 2.0 * float(np.sum(M * C)) * C + 2.0 * lam * M.sum(axis=1)[:, None]

    M = np.tile(q / n, (n, 1))
    fM = f(M)
    history = [fM]
    L = 1.0
    Y, t = M.copy(), 1.0
    converged = False
    it = 0
    window = 50
    for it in range(1, cfg.max_iterations + 1):
        gY, fY = grad(Y), f(Y)
        L = max(L / 2.0, 1e-12)
        while True:
            Z = _project_columns(Y - gY / L, q)
            D = Z - Y
            if f(Z) <= fY + float(np.sum(gY * D)) + 0.5 * L * float(np.sum(D * D)) + 1e-15 * abs(fY):
                break
            L *= 2.0
        fZ = f(Z)
        if fZ <= fM:
            t_new = 0.5 * (1.0 + np.sqrt(1.0 + 4.0 * t * t))
            Y = Z + ((t - 1.0) / t_new) * (Z - M)
            M, fM, t = Z, fZ, t_new
        else:
            Y, t = M.copy(), 1.0
        history.append(fM)
        if it % 10 == 0:
            R = M - _project_columns(M - grad(M) / L, q)
            if np.max(np.abs(R)) <= cfg.residual_tolerance:
                converged = True
                break
        if it >= window and history[-window - 1] - fM <= cfg.objective_tolerance * max(fM, 1e-300):
            converged = True
            break
        if fM == 0.0:
            converged = True
            break
    w = M.sum(axis=1)
    w = w / w.sum()
    cost = float(np.sum(M * C))
    return WeightSolution(w, float(n), cost, it, converged, fM, tuple(history),
                          {"plan": M, "transport_cost": cost})
