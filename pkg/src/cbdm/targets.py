"""Empirical stand-ins for the interventional law P_T x P_X.

Both constructions use observational data only. ``build_shuffle`` pairs
permuted treatments with fixed covariates over K rounds;
``build_marginal_product`` forms every (T_i, X_j) pair.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from .data import Dataset

MAX_PRODUCT_N = 2000
SHUFFLE_TARGET_SIZE = 100_000
MAX_SHUFFLE_ROUNDS = 200


@dataclass(frozen=True)
class TargetSample:
    """Weighted atoms z = (t, x); ``d_t`` leading coordinates are treatments."""

    atoms: np.ndarray
    masses: np.ndarray
    construction: str
    d_t: int = 1
    # Optional (t_points, x_points, t_index, x_index): atom j is
    # (t_points[t_index[j]], x_points[x_index[j]]). Lets discrepancies use
    # product structure instead of all m atoms.
    grid: tuple | None = field(default=None, compare=False, repr=False)

    def __post_init__(self):
        atoms = np.atleast_2d(np.array(self.atoms, dtype=float))
        masses = np.array(self.masses, dtype=float)
        if atoms.shape[0] == 0:
            raise ValueError("empty target sample")
        if masses.shape != (atoms.shape[0],):
            raise ValueError("masses must have one entry per atom")
        if np.any(masses < 0) or abs(masses.sum() - 1.0) > 1e-12:
            raise ValueError("target masses must be non-negative and sum to 1")
        atoms.setflags(write=False)
        masses.setflags(write=False)
        object.__setattr__(self, "atoms", atoms)
        object.__setattr__(self, "masses", masses)

    @property
    def m(self) -> int:
        return self.atoms.shape[0]

    def expect(self, values) -> float:
        return float(np.dot(self.masses, values))


def from_points(atoms, masses=None, d_t: int = 1, construction: str = "explicit") -> TargetSample:
    atoms = np.atleast_2d(np.asarray(atoms, dtype=float))
    if masses is None:
        masses = np.full(atoms.shape[0], 1.0 / atoms.shape[0])
    return TargetSample(atoms, masses, construction, d_t)


def default_rounds(n: int) -> int:
    """ceil(1e5 / n) shuffles, capped at 200."""
    return max(1, min(math.ceil(SHUFFLE_TARGET_SIZE / n), MAX_SHUFFLE_ROUNDS))


def build_shuffle(data: Dataset, K: int | None = None, seed: int = 0, permutations=None) -> TargetSample:
    """Pair shuffled treatments with fixed covariates, K times, uniform mass.

    Round ``k`` draws its permutation from ``default_rng([seed, k])`` so that
    the output does not depend on the order in which rounds are generated.
    ``permutations`` (a sequence of index arrays) overrides the random draws.
    """
    if permutations is not None:
        perms = [np.asarray(p, dtype=int) for p in permutations]
        for p in perms:
            if sorted(p.tolist()) != list(range(data.n)):
                raise ValueError("each permutation must be a permutation of range(n)")
    else:
        K = default_rounds(data.n) if K is None else int(K)
        if K < 1:
            raise ValueError(f"shuffle rounds K must be >= 1, got {K}")
        perms = [np.random.default_rng([seed, k]).permutation(data.n) for k in range(K)]
    atoms = np.vstack([np.hstack([data.treatments[p], data.covariates]) for p in perms])
    m = atoms.shape[0]
    grid = (data.treatments, data.covariates, np.concatenate(perms), np.tile(np.arange(data.n), len(perms)))
    return TargetSample(atoms, np.full(m, 1.0 / m), f"shuffle(K={len(perms)}, seed={seed})", data.d_t,
                        grid=grid)


def build_marginal_product(data: Dataset) -> TargetSample:
    """All n^2 pairs (T_i, X_j), each with mass 1/n^2."""
    n = data.n
    if n > MAX_PRODUCT_N:
        raise ValueError(f"n={n} is too large for the full marginal product "
                         f"(limit {MAX_PRODUCT_N}); use build_shuffle instead")
    t = np.repeat(data.treatments, n, axis=0)
    x = np.tile(data.covariates, (n, 1))
    grid = (data.treatments, data.covariates, np.repeat(np.arange(n), n), np.tile(np.arange(n), n))
    return TargetSample(np.hstack([t, x]), np.full(n * n, 1.0 / (n * n)), "marginal_product", data.d_t,
                        grid=grid)
