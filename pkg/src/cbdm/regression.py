"""Weighted outcome regression: fit g minimizing sum_i w_i (Y_i - g(T_i))^2."""

from __future__ import annotations

import warnings
from dataclasses import dataclass, field

import numpy as np

from .kernels import KernelSpec, gaussian, gram, resolve_bandwidths

ZERO_WEIGHT = 1e-15
MAX_CONDITION = 1e10


class RegressionError(ValueError):
    pass


@dataclass(frozen=True)
class DoseResponseModel:
    """A fitted dose-response curve.

    For ``kind == "linear"`` the prediction is ``intercept + t @ coef``. For
    ``kind == "kernel_ridge"`` it is ``gram(kernel, t, train_t) @ dual_coef``.
    """

    kind: str
    intercept: float = 0.0
    coef: np.ndarray | None = None
    kernel: KernelSpec | None = None
    dual_coef: np.ndarray | None = None
    train_t: np.ndarray | None = None
    ridge: float = 0.0
    weighted_risk: float = float("nan")
    diagnostics: dict = field(default_factory=dict, repr=False)

    @property
    def d_t(self) -> int:
        return len(self.coef) if self.kind == "linear" else self.train_t.shape[1]

    def predict(self, t_grid) -> np.ndarray:
        return predict(self, t_grid)


def _as_t(t) -> np.ndarray:
    t = np.asarray(t, dtype=float)
    return t[:, None] if t.ndim == 1 else t


def _clean_weights(w, n) -> np.ndarray:
    w = np.asarray(w, dtype=float)
    if w.shape != (n,):
        raise RegressionError(f"weights have shape {w.shape}, expected ({n},)")
    if np.any(w < 0) or not w.sum() > 0:
        raise RegressionError("weights must be non-negative with a positive sum")
    w = np.where(w < ZERO_WEIGHT, 0.0, w)
    return w / w.sum()


def fit_weighted(t, y, w, model: str = "linear", kernel: KernelSpec | None = None,
                 ridge: float | None = None) -> DoseResponseModel:
    """Weighted least squares (with intercept) or weighted kernel ridge regression.

    Kernel ridge minimizes ``sum_i w_i (y_i - g(t_i))^2 + ridge * ||g||^2`` in
    the RKHS of ``kernel`` (default: gaussian with median bandwidth on t), with
    ``ridge`` defaulting to ``1e-6 * trace(K) / n``.
    """
    t = _as_t(t)
    if y is None:
        raise RegressionError("outcomes are required for the regression step")
    y = np.asarray(y, dtype=float)
    n = t.shape[0]
    if y.shape != (n,):
        raise RegressionError("outcome length does not match treatments")
    w = _clean_weights(w, n)
    ess = 1.0 / float(np.sum(w ** 2))
    diag = {"ess": ess, "low_ess": ess < 2}
    if ess < 2:
        warnings.warn(f"effective sample size {ess:.3g} < 2", RuntimeWarning, stacklevel=2)

    if model == "linear":
        X = np.hstack([np.ones((n, 1)), t])
        G = X.T @ (w[:, None] * X)
        cond = np.linalg.cond(G)
        if not np.isfinite(cond) or cond > MAX_CONDITION:
            raise RegressionError(f"weighted design is rank deficient (condition number {cond:.3g})")
        beta = np.linalg.solve(G, X.T @ (w * y))
        resid = y - X @ beta
        diag["condition_number"] = float(cond)
        return DoseResponseModel("linear", float(beta[0]), beta[1:], weighted_risk=float(w @ resid ** 2),
                                 diagnostics=diag)
    if model == "kernel_ridge":
        keep = w > 0
        tk, yk, wk = t[keep], y[keep], w[keep]
        spec = kernel if kernel is not None else gaussian("median", mask="z")
        spec = resolve_bandwidths(spec, tk) if len(np.unique(tk, axis=0)) > 1 else spec
        K = gram(spec, tk)
        zeta = 1e-6 * float(np.trace(K)) / len(yk) if ridge is None else float(ridge)
        # stationarity of the weighted ridge risk: (K + zeta D^-1) c = y
        A = K + zeta * np.diag(1.0 / wk)
        c = np.linalg.solve(A, yk)
        resid = yk - K @ c
        return DoseResponseModel("kernel_ridge", kernel=spec, dual_coef=c, train_t=tk, ridge=zeta,
                                 weighted_risk=float(wk @ resid ** 2), diagnostics=diag)
    raise ValueError(f"unknown model class {model!r}")


def predict(model: DoseResponseModel, t_grid) -> np.ndarray:
    t = _as_t(t_grid)
    if t.shape[1] != model.d_t:
        raise RegressionError(f"treatment dimension {t.shape[1]} does not match the model ({model.d_t})")
    if model.kind == "linear":
        return model.intercept + t @ model.coef
    return gram(model.kernel, t, model.train_t) @ model.dual_coef


def estimate_effect(data, w) -> float:
    """Slope of the weighted linear regression of Y on a univariate treatment."""
    if data.d_t != 1:
        raise RegressionError("estimate_effect needs a univariate treatment")
    fit = fit_weighted(data.treatments, data.outcomes, w, "linear")
    if fit.diagnostics["low_ess"]:
        raise RegressionError("effective sample size below 2")
    return float(fit.coef[0])
