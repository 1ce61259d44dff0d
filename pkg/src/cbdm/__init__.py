"""Covariate balancing weights for continuous treatments by distribution matching."""

from .data import DataError, Dataset, WeightSolution, load_csv, standardize, write_csv
from .discrepancy import finite_class_value, mmd_form, mmd_value, npcbgps_moments
from .dual import LegendrePair, solve_dual, weights_from_dual
from .kernels import KernelSpec, composed, exponential, gaussian, polynomial
from .primal import (SolverConfig, SolverError, project_capped_simplex, solve_finite_class, solve_mmd,
                     solve_w1_nearest, solve_w1_transport)
from .regression import estimate_effect, fit_weighted
from .targets import TargetSample, build_marginal_product, build_shuffle
from .tuning import balance_report, ess, frontier

__version__ = "0.1.0"

__all__ = [
    "DataError", "Dataset", "WeightSolution", "load_csv", "standardize", "write_csv",
    "finite_class_value", "mmd_form", "mmd_value", "npcbgps_moments",
    "LegendrePair", "solve_dual", "weights_from_dual",
    "KernelSpec", "composed", "exponential", "gaussian", "polynomial",
    "SolverConfig", "SolverError", "project_capped_simplex", "solve_finite_class", "solve_mmd",
    "solve_w1_nearest", "solve_w1_transport",
    "estimate_effect", "fit_weighted",
    "TargetSample", "build_marginal_product", "build_shuffle",
    "balance_report", "ess", "frontier",
]
