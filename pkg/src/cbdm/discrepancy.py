"""Discrepancies between a weighted sample and a target sample.

* squared MMD as a quadratic form ``w' K w - 2 w' b + c``;
* finite-class IPM ``max_k |A_k w - b_k|`` over a fixed list of functions;
* linear cost of a transport plan, used by the Wasserstein-1 solvers.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Callable, Sequence

import numpy as np
from scipy.spatial.distance import cdist

from .kernels import KernelSpec, gram, kernel_mean, separable_terms
from .targets import TargetSample

MAX_ATOMS_FOR_CONSTANT = 5000
NEGATIVE_TOL = 1e-8


class InternalConsistencyError(RuntimeError):
    """A quantity that must be non-negative came out clearly negative."""


def as_points(data) -> np.ndarray:
    """Accept a Dataset (uses its joint z) or an n x d array."""
    z = getattr(data, "z", data)
    return np.atleast_2d(np.asarray(z, dtype=float))


@dataclass(frozen=True)
class MmdQuadraticForm:
    K_ss: np.ndarray
    b: np.ndarray
    c: float
    c_exact: bool = True

    @property
    def n(self) -> int:
        return self.b.shape[0]

    def raw_value(self, w) -> float:
        w = np.asarray(w, dtype=float)
        return float(w @ self.K_ss @ w - 2.0 * w @ self.b + self.c)


def mmd_form(spec: KernelSpec, data, target: TargetSample, seed: int = 0,
             max_atoms_for_constant: int = MAX_ATOMS_FOR_CONSTANT) -> MmdQuadraticForm:
    """Build the quadratic form of squared MMD between weighted ``data`` and ``target``.

    ``c`` only shifts the objective. Above ``max_atoms_for_constant`` atoms it
    is computed through the product structure of shuffle and marginal-product
    targets when the kernel splits over (t, x), and otherwise estimated on a
    seeded subsample of the target.
    """
    z = as_points(data)
    if z.shape[1] != target.atoms.shape[1]:
        raise ValueError(f"dimension mismatch: data has {z.shape[1]} coordinates, "
                         f"target has {target.atoms.shape[1]}")
    K = gram(spec, z)
    b = kernel_mean(spec, z, target.atoms, target.masses)
    atoms, q = target.atoms, target.masses
    exact = target.m <= max_atoms_for_constant
    if not exact:
        c = _grid_constant(spec, target)
        if c is not None:
            return MmdQuadraticForm(K, b, c, True)
        idx = np.sort(np.random.default_rng(seed).choice(target.m, max_atoms_for_constant,
                                                         replace=False, p=None))
        atoms, q = atoms[idx], q[idx] / q[idx].sum()
    c = float(q @ gram(spec, atoms) @ q)
    return MmdQuadraticForm(K, b, c, exact)


def _grid_constant(spec: KernelSpec, target: TargetSample) -> float | None:
    """Exact ``q' K q`` for atoms on a (t, x) grid with a kernel that splits."""
    if target.grid is None:
        return None
    t_points, x_points, t_index, x_index = target.grid
    terms = separable_terms(spec, t_points, x_points)
    if terms is None:
        return None
    A = np.zeros((len(x_points), len(t_points)))
    np.add.at(A, (x_index, t_index), target.masses)
    r, s = A.sum(axis=0), A.sum(axis=1)
    c = 0.0
    for gt, gx in terms:
        if gt is None:
            c += float(s @ gx @ s)
        elif gx is None:
            c += float(r @ gt @ r)
        else:
            c += float(np.sum(gx * (A @ gt @ A.T)))
    return c


def mmd_value(form: MmdQuadraticForm, w) -> float:
    """Squared MMD at weights ``w``, clamped at zero.

    Rounding-level negatives are clamped; anything below ``-1e-8`` relative to
    the kernel scale raises unless ``c`` was estimated on a subsample.
    """
    w = np.asarray(w, dtype=float)
    if w.shape != (form.n,):
        raise ValueError(f"weight vector has length {w.shape}, expected {form.n}")
    v = form.raw_value(w)
    scale = max(1.0, abs(form.c), float(np.max(np.abs(np.diag(form.K_ss)))))
    if v < -NEGATIVE_TOL * scale and form.c_exact:
        raise InternalConsistencyError(f"squared MMD is {v:.3e} < 0; kernel is not PSD?")
    return max(v, 0.0)


@dataclass(frozen=True)
class FiniteClassMoments:
    """Moment matrix ``A[k, i] = f_k(z_i)`` and target means ``b[k] = E_Q f_k``."""

    A: np.ndarray
    b: np.ndarray
    names: tuple[str, ...] = ()

    def gaps(self, w) -> np.ndarray:
        return self.A @ np.asarray(w, dtype=float) - self.b


def finite_class_moments(functions: Sequence[Callable[[np.ndarray], np.ndarray]], data,
                         target: TargetSample, names: Sequence[str] = ()) -> FiniteClassMoments:
    """Evaluate each vectorized ``f(z_rows) -> values`` on the data and the target."""
    z = as_points(data)
    A = np.vstack([np.asarray(f(z), dtype=float) for f in functions])
    b = np.array([target.expect(f(target.atoms)) for f in functions])
    names = tuple(names) or tuple(f"f{k + 1}" for k in range(len(functions)))
    return FiniteClassMoments(A, b, names)


def npcbgps_moments(data, target: TargetSample, d_t: int | None = None) -> FiniteClassMoments:
    """The moment set {t, x_k, t * x_k}, one block per treatment coordinate."""
    z = as_points(data)
    d_t = target.d_t if d_t is None else d_t
    d_x = z.shape[1] - d_t
    fs, names = [], []
    for j in range(d_t):
        fs.append(lambda a, j=j: a[:, j])
        names.append(f"t{j + 1}")
    for k in range(d_x):
        fs.append(lambda a, k=k: a[:, d_t + k])
        names.append(f"x{k + 1}")
    for j in range(d_t):
        for k in range(d_x):
            fs.append(lambda a, j=j, k=k: a[:, j] * a[:, d_t + k])
            names.append(f"t{j + 1}*x{k + 1}")
    return finite_class_moments(fs, z, target, names)


def finite_class_value(m: FiniteClassMoments, w) -> float:
    """Unsquared IPM over the finite class: the largest absolute moment gap."""
    w = np.asarray(w, dtype=float)
    if w.shape != (m.A.shape[1],):
        raise ValueError(f"weight vector has length {w.shape}, expected {m.A.shape[1]}")
    return float(np.max(np.abs(m.gaps(w))))


def cost_matrix(data, target: TargetSample) -> np.ndarray:
    """Euclidean distances ||Z_i - z_j|| between sample points and target atoms."""
    return cdist(as_points(data), target.atoms)


def transport_cost(M, costs, masses=None, atol: float = 1e-9) -> float:
    """Linear cost sum_ij M_ij c_ij of a plan whose columns carry the target masses."""
    M = np.asarray(M, dtype=float)
    costs = np.asarray(costs, dtype=float)
    if M.shape != costs.shape:
        raise ValueError(f"plan shape {M.shape} does not match cost shape {costs.shape}")
    if np.any(M < -atol):
        raise ValueError("transport plan has negative entries")
    if masses is not None:
        col = M.sum(axis=0)
        if np.max(np.abs(col - np.asarray(masses))) > atol:
            raise ValueError("transport plan violates the target marginal")
    return float(np.sum(M * costs))
