"""Continuous-treatment simulation study and RMSE benchmark.

Covariates: four Uniform(-1, 1) variables tied by a Gaussian copula with
pairwise correlation 0.2. Treatment: T | X ~ Beta(5 m(X), 5 (1 - m(X))) with
m(X) = 0.8 / (1 + sqrt(2) ||(X1, X2, X3)||). Outcome: Y = beta T + f(X) + eps.
"""

from __future__ import annotations

import logging
import math
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field
from typing import ClassVar

import numpy as np
from scipy.stats import norm
from threadpoolctl import threadpool_limits

from . import kernels
from .data import Dataset, standardize
from .discrepancy import mmd_form
from .primal import SolverConfig, solve_mmd, solve_w1_nearest
from .regression import estimate_effect
from .targets import MAX_SHUFFLE_ROUNDS, build_shuffle

log = logging.getLogger(__name__)

FAMILIES = ("absolute", "quadratic", "cubic", "sinusoidal")
METHODS = ("unweighted", "cbdm_wass", "cbdm_poly4", "cbdm_gauss", "cbdm_exp")
COPULA_CORRELATION = 0.2
N_COVARIATES = 4


@dataclass(frozen=True)
class ScenarioConfig:
    families: tuple[str, ...] = FAMILIES
    n_values: tuple[int, ...] = (150, 200)
    replications: int = 100
    seed: int = 0
    methods: tuple[str, ...] = METHODS
    beta: float = 1.0
    cap: float = 5.0
    lam: float = 0.0
    target_size: int = 100_000
    noise_variance: float = 0.1
    confounded: bool = True
    max_iterations: int = 5000

    def __post_init__(self):
        if self.replications < 1:
            raise ValueError("replications must be >= 1")
        if any(n < 10 for n in self.n_values):
            raise ValueError("every n must be >= 10")
        if not math.isfinite(self.beta):
            raise ValueError("beta must be finite")
        for f in self.families:
            if f not in FAMILIES:
                raise ValueError(f"unknown response family {f!r}")
        for m in self.methods:
            if m not in METHODS:
                raise ValueError(f"unknown method {m!r}")


def draw_covariates(n: int, rng: np.random.Generator, correlation: float = COPULA_CORRELATION,
                    return_normals: bool = False):
    """n x 4 covariates, Uniform(-1, 1) marginals, equicorrelated Gaussian copula."""
    d = N_COVARIATES
    cov = np.full((d, d), correlation) + (1.0 - correlation) * np.eye(d)
    chol = np.linalg.cholesky(cov)
    normals = rng.standard_normal((n, d)) @ chol.T
    x = 2.0 * norm.cdf(normals) - 1.0
    return (x, normals) if return_normals else x


def propensity_mean(x) -> np.ndarray:
    x = np.atleast_2d(x)
    return 0.8 / (1.0 + np.sqrt(2.0) * np.linalg.norm(x[:, :3], axis=1))


def beta_shapes(x) -> tuple[np.ndarray, np.ndarray]:
    m = propensity_mean(x)
    return 5.0 * m, 5.0 * (1.0 - m)


def draw_treatment(x, rng: np.random.Generator) -> np.ndarray:
    """One Beta(5 m(x), 5 (1 - m(x))) draw per covariate row."""
    a, b = beta_shapes(x)
    return rng.beta(a, b)


def response(family: str, x) -> np.ndarray:
    x = np.atleast_2d(np.asarray(x, dtype=float))
    x1, x2 = x[:, 0], x[:, 1]
    s = x1 + x2
    if family == "absolute":
        return np.abs(x1) + np.abs(x2)
    if family == "quadratic":
        return s + s ** 2
    if family == "cubic":
        return s ** 2 + s ** 3
    if family == "sinusoidal":
        return np.sin(np.pi * s) + np.cos(np.pi * (x1 - x2))
    raise ValueError(f"unknown response family {family!r}")


def generate(family: str, n: int, rng: np.random.Generator, beta: float = 1.0,
             noise_variance: float = 0.1, confounded: bool = True) -> Dataset:
    """Draw one dataset. With ``confounded=False`` T uses an independent covariate draw."""
    x = draw_covariates(n, rng)
    t = draw_treatment(x if confounded else draw_covariates(n, rng), rng)
    y = beta * t + response(family, x) + rng.normal(0.0, math.sqrt(noise_variance), n)
    names = tuple(f"x{k + 1}" for k in range(N_COVARIATES))
    return Dataset(t, x, y, ("t",), names, "y")


def method_kernel(method: str) -> kernels.KernelSpec:
    tau = {"cbdm_poly4": kernels.polynomial(4),
           "cbdm_gauss": kernels.gaussian("median"),
           "cbdm_exp": kernels.exponential()}[method]
    return kernels.composed(tau, kernels.polynomial(1, mask="t"))


def method_weights(method: str, std: Dataset, target, cfg: SolverConfig, seed: int = 0):
    """Weights for one benchmark method on standardized data."""
    if method == "unweighted":
        return np.full(std.n, 1.0 / std.n), None
    if method == "cbdm_wass":
        sol = solve_w1_nearest(std, target)
        return sol.weights, sol
    spec = kernels.resolve_bandwidths(method_kernel(method), std.z, seed=seed)
    sol = solve_mmd(mmd_form(spec, std, target, seed=seed), cfg)
    return sol.weights, sol


def replication_seed(master: int, family: str, n: int, rep: int) -> np.random.SeedSequence:
    """Seed for one replication, mixed from (master seed, family, n, replication)."""
    return np.random.SeedSequence([master, FAMILIES.index(family), n, rep])


def run_replication(cfg: ScenarioConfig, family: str, n: int, rep: int) -> dict:
    """Estimates of beta for every method on one simulated dataset."""
    ss = replication_seed(cfg.seed, family, n, rep)
    rng = np.random.default_rng(ss)
    sub_seed = int(ss.generate_state(1)[0])
    data = generate(family, n, rng, cfg.beta, cfg.noise_variance, cfg.confounded)
    std, _ = standardize(data)
    rounds = max(1, min(math.ceil(cfg.target_size / n), MAX_SHUFFLE_ROUNDS))
    target = build_shuffle(std, rounds, seed=sub_seed)
    solver = SolverConfig(lam=cfg.lam, cap=cfg.cap, max_iterations=cfg.max_iterations,
                          objective_tolerance=1e-10, residual_tolerance=1e-8, seed=sub_seed)
    out = {}
    for method in cfg.methods:
        try:
            with threadpool_limits(1):
                w, sol = method_weights(method, std, target, solver, seed=sub_seed)
            out[method] = {"estimate": estimate_effect(data, w), "ess": float(1.0 / np.sum(w ** 2)),
                           "converged": True if sol is None else bool(sol.converged), "error": ""}
        except Exception as exc:  # recorded per replication, cell continues
            out[method] = {"estimate": float("nan"), "ess": float("nan"), "converged": False,
                           "error": f"{type(exc).__name__}: {exc}"}
    return out


def _run_job(job):
    cfg, family, n, rep = job
    return run_replication(cfg, family, n, rep)


@dataclass
class BenchmarkRow:
    family: str
    n: int
    method: str
    rmse: float
    mc_se: float
    replications: int
    seed: int
    mean_estimate: float
    sd_estimate: float
    failures: int
    mean_ess: float
    estimates: list = field(default_factory=list, repr=False)

    COLUMNS: ClassVar[tuple[str, ...]] = ("family", "n", "method", "rmse", "mc_se", "replications", "seed",
               "mean_estimate", "sd_estimate", "failures", "mean_ess")

    def as_dict(self) -> dict:
        return {c: getattr(self, c) for c in self.COLUMNS}


def rmse_with_se(estimates, beta: float) -> tuple[float, float]:
    """RMSE of the estimates and its delta-method Monte-Carlo standard error."""
    e2 = (np.asarray(estimates, dtype=float) - beta) ** 2
    r = len(e2)
    mse = float(e2.mean())
    rmse = math.sqrt(mse)
    if r < 2 or rmse == 0:
        return rmse, float("nan") if r < 2 else 0.0
    se_mse = float(e2.std(ddof=1)) / math.sqrt(r)
    return rmse, se_mse / (2.0 * rmse)


def run_benchmark(cfg: ScenarioConfig, threads: int = 1) -> list[BenchmarkRow]:
    """RMSE of the estimated beta for every (family, n, method) cell."""
    jobs = [(cfg, f, n, r) for f in cfg.families for n in cfg.n_values for r in range(cfg.replications)]
    if threads > 1:
        with ProcessPoolExecutor(max_workers=threads) as ex:
            results = list(ex.map(_run_job, jobs, chunksize=max(1, len(jobs) // (8 * threads))))
    else:
        results = [_run_job(j) for j in jobs]
    rows = []
    for f in cfg.families:
        for n in cfg.n_values:
            cell = [res for (_, ff, nn, _), res in zip(jobs, results) if ff == f and nn == n]
            for method in cfg.methods:
                est = np.array([c[method]["estimate"] for c in cell])
                ok = np.isfinite(est)
                ess_vals = np.array([c[method]["ess"] for c in cell])[ok]
                rmse, se = rmse_with_se(est[ok], cfg.beta) if ok.any() else (float("nan"), float("nan"))
                rows.append(BenchmarkRow(
                    f, n, method, rmse, se, int(ok.sum()), cfg.seed,
                    float(est[ok].mean()) if ok.any() else float("nan"),
                    float(est[ok].std(ddof=1)) if ok.sum() > 1 else float("nan"),
                    int((~ok).sum()), float(ess_vals.mean()) if ok.any() else float("nan"),
                    est.tolist()))
    return rows
