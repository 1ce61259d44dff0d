"""Dual route to MMD-based CBDM weights.

The dual problem is

    min_{mu, alpha}  1/n sum_i rho*(-mu - alpha' k(Z_i)) + mu
                     + lam / (4n) alpha' K alpha + alpha' E_Q[k(Z)]

with ``alpha`` indexed by the sample points and the target atoms. Weights are
recovered as ``n w_i = rho*'(-mu - alpha' k(Z_i))``.

At the optimum ``alpha`` lies in the span of the sample feature maps plus the
target mean embedding, and its coefficient on the mean embedding is exactly
``-2n / lam`` (stationarity in that direction does not involve the data). We
fix that coefficient, so each target atom z_j carries ``-2n q_j / lam``, and
optimize ``(mu, alpha_data)``. The constant ``E_QxQ[K]`` then only shifts the
objective and never has to be computed exactly.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
from scipy.linalg.lapack import dpstrf

from .data import WeightSolution
from .discrepancy import as_points, mmd_form
from .kernels import KernelSpec
from .primal import project_capped_simplex
from .targets import TargetSample

WEIGHT_SUM_RENORMALIZE = 1e-8
WEIGHT_SUM_ERROR = 1e-3


@dataclass(frozen=True)
class LegendrePair:
    """Conjugate of rho restricted to [0, W]; ``kind`` is quadratic or entropic."""

    kind: str
    W: float

    def __post_init__(self):
        if self.kind not in ("quadratic", "entropic"):
            raise ValueError(f"unknown regularizer {self.kind!r}")
        if not self.W > 0:
            raise ValueError("W must be > 0")

    def rho(self, y):
        """The primal regularizer on [0, W] (inf outside)."""
        y = np.asarray(y, dtype=float)
        inside = (y >= 0) & (y <= self.W)
        if self.kind == "quadratic":
            val = y * y
        else:
            with np.errstate(divide="ignore", invalid="ignore"):
                val = np.where(y > 0, y * np.log(np.where(y > 0, y, 1.0)), 0.0)
        return np.where(inside, val, np.inf)

    def value(self, x):
        x = np.asarray(x, dtype=float)
        W = self.W
        if self.kind == "quadratic":
            return np.where(x <= 0, 0.0, np.where(x < 2 * W, x * x / 4, W * x - W * W))
        knot = 1.0 + np.log(W)
        return np.where(x < knot, np.exp(np.minimum(x, knot) - 1.0), W * x - W * np.log(W))

    def derivative(self, x):
        x = np.asarray(x, dtype=float)
        W = self.W
        if self.kind == "quadratic":
            return np.where(x <= 0, 0.0, np.where(x < 2 * W, x / 2, W))
        knot = 1.0 + np.log(W)
        return np.where(x < knot, np.exp(np.minimum(x, knot) - 1.0), W)

    def rho_prime_at_one(self) -> float:
        """d rho / dy at y = 1: the argument giving uniform weights."""
        return 2.0 if self.kind == "quadratic" else 1.0


def rho_star_eval(pair: LegendrePair, x) -> tuple[float, float]:
    return float(pair.value(x)), float(pair.derivative(x))


@dataclass(frozen=True)
class DualSolution:
    """Dual optimum: ``alpha`` lists coefficients on the sample points then the target atoms."""

    mu: float
    alpha_data: np.ndarray
    alpha_target: float
    objective: float
    gradient_norm: float
    converged: bool
    iterations: int
    lam: float
    lam_effective: float
    arguments: np.ndarray = field(repr=False, default=None)
    target_masses: np.ndarray = field(repr=False, default=None)

    @property
    def alpha(self) -> np.ndarray:
        """Coefficients on the support: sample points first, then each target atom."""
        return np.concatenate([self.alpha_data, self.alpha_target * self.target_masses])


def dual_objective(pair: LegendrePair, lam: float, K_ss, b, c, mu, alpha_data, alpha_target) -> float:
    """Evaluate the dual criterion at an arbitrary point.

    ``K_ss``, ``b`` and ``c`` are the sample Gram matrix, ``E_Q k(Z_i, Z)``
    and ``E_QxQ K``; ``alpha_target`` multiplies the target mean embedding.
    """
    K_ss = np.asarray(K_ss, dtype=float)
    n = K_ss.shape[0]
    a = np.asarray(alpha_data, dtype=float)
    inner = K_ss @ a + alpha_target * np.asarray(b)          # alpha' k(Z_i)
    quad = a @ K_ss @ a + 2 * alpha_target * (a @ b) + alpha_target ** 2 * c
    lin = a @ b + alpha_target * c                             # alpha' E_Q k(Z)
    return float(np.mean(pair.value(-mu - inner)) + mu + lam / (4 * n) * quad + lin)


def solve_dual(spec: KernelSpec, data, target: TargetSample, pair: LegendrePair, lam: float,
               tol: float = 1e-7, max_iterations: int = 500, form=None) -> DualSolution:
    """Minimize the dual criterion by damped semismooth Newton.

    ``alpha_data`` is parametrized through a pivoted Cholesky factor
    ``K = L L'`` as ``v = L' alpha_data``, so each step costs O(n r^2) for a
    kernel of numerical rank r. Convergence is declared when the sup-norm of
    the Euclidean gradient in ``(mu, alpha_data)`` is at most ``tol``. The
    start point gives uniform weights up to the fixed target direction.
    """
    form = mmd_form(spec, data, target) if form is None else form
    K, b = form.K_ss, form.b
    n = K.shape[0]
    lam_eff = lam
    if lam <= 0:
        lam_eff = 1e-8 * float(np.trace(K)) / (n + target.m)
    s = 2.0 * n / lam_eff
    alpha_t = -s
    shift = s * b          # contribution of the fixed target coefficient to -alpha'k(Z_i)
    coef = lam_eff / (4.0 * n)
    L = _factor(K)

    # alpha_data = 2 n w / lam at uniform w
    v = L.T @ np.full(n, 2.0 / lam_eff)
    mu = float(np.mean(shift - L @ v)) - pair.rho_prime_at_one()
    mu, v, it, gnorm = _newton(pair, L, shift, coef, mu, v, tol, max_iterations)
    arg = -mu - L @ v + shift
    # the optimal alpha_data is phi / (2 n coef); it reproduces v on the range of L
    a = pair.derivative(arg) / (2.0 * n * coef)
    full = dual_objective(pair, lam_eff, K, b, form.c, mu, a, alpha_t)
    return DualSolution(mu, a, alpha_t, full, gnorm, gnorm <= tol, it, lam, lam_eff, arg, target.masses)


def _factor(K) -> np.ndarray:
    """n x r factor with L L' = K up to rounding, via LAPACK pivoted Cholesky."""
    n = K.shape[0]
    c, piv, rank, info = dpstrf(np.array(K, dtype=float, order="F"), lower=1, tol=-1.0)
    if info < 0:
        raise ValueError("pivoted Cholesky failed on the Gram matrix")
    rank = max(int(rank), 1)
    L = np.zeros((n, rank))
    L[piv - 1] = np.tril(c)[:, :rank]
    return L


def _second_derivative(pair: LegendrePair, x):
    W = pair.W
    if pair.kind == "quadratic":
        return np.where((x > 0) & (x < 2 * W), 0.5, 0.0)
    knot = 1.0 + np.log(W)
    return np.where(x < knot, np.exp(np.minimum(x, knot) - 1.0), 0.0)


def _newton(pair, L, shift, coef, mu, v, tol, max_steps):
    """Semismooth Newton on the dual in (mu, v) with a slope-based line search."""
    n, r = L.shape

    def state(mu, v):
        arg = -mu - L @ v + shift
        phi = pair.derivative(arg)
        g = np.concatenate([[1.0 - float(np.mean(phi))], -(L.T @ phi) / n + 2.0 * coef * v])
        return g, arg

    def sup_residual(g):
        return max(abs(g[0]), float(np.max(np.abs(L @ g[1:]))))

    g, arg = state(mu, v)
    step = 0
    for step in range(1, max_steps + 1):
        if sup_residual(g) <= tol:
            return mu, v, step - 1, sup_residual(g)
        D = _second_derivative(pair, arg)
        H = np.empty((r + 1, r + 1))
        H[0, 0] = D.sum() / n
        H[0, 1:] = H[1:, 0] = (D @ L) / n
        H[1:, 1:] = L.T @ (D[:, None] * L) / n
        H[1:, 1:] += 2.0 * coef * np.eye(r)
        d = np.linalg.lstsq(H, -g, rcond=None)[0]
        if not g @ d < 0:
            d = -g
        eta, g, arg = _line_search(state, mu, v, d, g)
        if eta == 0.0:
            break
        mu, v = mu + eta * d[0], v + eta * d[1:]
    return mu, v, step, sup_residual(g)


def _line_search(state, mu, v, d, g, max_bisections: int = 60):
    """Step along ``d`` to where the directional derivative changes sign.

    The objective is convex, so its slope along ``d`` is non-decreasing; only
    gradients are evaluated because objective values lose all precision to
    cancellation when lam is small. Returns (eta, gradient, argument).
    """
    g1, arg1 = state(mu + d[0], v + d[1:])
    if g1 @ d <= 0:
        return 1.0, g1, arg1
    lo, hi, best = 0.0, 1.0, None
    for _ in range(max_bisections):
        mid = 0.5 * (lo + hi)
        gm, argm = state(mu + mid * d[0], v + mid * d[1:])
        slope = gm @ d
        if slope <= 0:
            lo, best = mid, (mid, gm, argm)
            if slope >= 0.5 * (g @ d):
                break
        else:
            hi = mid
    return best if best is not None else (0.0, g, None)


def weights_from_dual(sol: DualSolution, pair: LegendrePair, data=None) -> WeightSolution:
    """Recover ``w_i = rho*'(-mu - alpha' k(Z_i)) / n``, renormalizing small sum drift."""
    raw = pair.derivative(sol.arguments) / len(sol.arguments)
    n = raw.shape[0]
    if data is not None and as_points(data).shape[0] != n:
        raise ValueError("dual solution does not match the data size")
    total = float(raw.sum())
    drift = total - 1.0
    if abs(drift) > WEIGHT_SUM_ERROR:
        raise ValueError(f"dual weights sum to {total:.6g}; the dual has not converged "
                         "or lambda is badly scaled")
    w = raw / total if abs(drift) > WEIGHT_SUM_RENORMALIZE else raw
    if np.any(w > pair.W / n):
        w = project_capped_simplex(w, pair.W / n)
    return WeightSolution(w, pair.W, float("nan"), sol.iterations, sol.converged, sol.objective,
                          diagnostics={"raw_sum": total, "renormalized": abs(drift) > WEIGHT_SUM_RENORMALIZE,
                                       "gradient_norm": sol.gradient_norm, "mu": sol.mu,
                                       "lam_effective": sol.lam_effective})


def weights_from_arguments(pair: LegendrePair, arguments) -> np.ndarray:
    """Raw weights ``rho*'(arg) / n`` without normalization."""
    arguments = np.asarray(arguments, dtype=float)
    return pair.derivative(arguments) / arguments.shape[0]
