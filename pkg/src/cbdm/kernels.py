"""Positive-definite kernels on z = (t, x) and Gram-matrix assembly.

A kernel reads either all of z, only the leading ``d_t`` treatment
coordinates (``mask="t"``) or only the covariates (``mask="x"``). The composed
kernel ``4 K_tau(z, z') K_g(t, t') + K_g(t, t')**2`` is the natural balancing
kernel when the outcome model lives in the RKHS of ``K_g``.
"""

from __future__ import annotations

from dataclasses import dataclass, replace

import numpy as np
from scipy.spatial.distance import cdist, pdist

KINDS = ("polynomial", "exponential", "gaussian", "composed")
MASKS = ("z", "t", "x")
EXP_MAX_NORM = 30.0
MEDIAN_MAX_POINTS = 2000


class KernelError(ValueError):
    pass


@dataclass(frozen=True)
class KernelSpec:
    kind: str
    degree: int = 1
    bandwidth: float | str = 1.0
    tau: "KernelSpec | None" = None
    g: "KernelSpec | None" = None
    mask: str = "z"
    d_t: int = 1

    def __post_init__(self):
        if self.kind not in KINDS:
            raise KernelError(f"unknown kernel kind {self.kind!r}")
        if self.mask not in MASKS:
            raise KernelError(f"unknown coordinate mask {self.mask!r}")
        if self.d_t < 1:
            raise KernelError("d_t must be >= 1")
        if self.kind == "polynomial" and (int(self.degree) != self.degree or self.degree < 1):
            raise KernelError(f"polynomial degree must be an integer >= 1, got {self.degree}")
        if self.kind == "gaussian" and self.bandwidth != "median":
            if not float(self.bandwidth) > 0:
                raise KernelError(f"bandwidth must be > 0, got {self.bandwidth}")
        if self.kind == "composed":
            if self.tau is None or self.g is None:
                raise KernelError("composed kernel needs both tau and g")
            if self.g.mask != "t":
                raise KernelError("composed kernel requires g to read treatment coordinates only")

    def describe(self) -> str:
        if self.kind == "composed":
            return f"composed(tau={self.tau.describe()}, g={self.g.describe()})"
        arg = {"polynomial": f"p={self.degree}", "gaussian": f"h={self.bandwidth}",
               "exponential": ""}[self.kind]
        return f"{self.kind}({arg}{', ' if arg else ''}mask={self.mask})"


def polynomial(degree: int = 1, mask: str = "z", d_t: int = 1) -> KernelSpec:
    return KernelSpec("polynomial", degree=degree, mask=mask, d_t=d_t)


def gaussian(bandwidth: float | str = "median", mask: str = "z", d_t: int = 1) -> KernelSpec:
    return KernelSpec("gaussian", bandwidth=bandwidth, mask=mask, d_t=d_t)


def exponential(mask: str = "z", d_t: int = 1) -> KernelSpec:
    return KernelSpec("exponential", mask=mask, d_t=d_t)


def composed(tau: KernelSpec, g: KernelSpec | None = None) -> KernelSpec:
    """Outcome-aware kernel; ``g`` defaults to the degree-1 polynomial on t."""
    if g is None:
        g = polynomial(1, mask="t", d_t=tau.d_t)
    return KernelSpec("composed", tau=tau, g=g, d_t=g.d_t)


def _select(spec: KernelSpec, z: np.ndarray) -> np.ndarray:
    if spec.mask == "t":
        return z[..., : spec.d_t]
    if spec.mask == "x":
        return z[..., spec.d_t:]
    return z


def _check_exp(a: np.ndarray) -> None:
    norms = np.linalg.norm(np.atleast_2d(a), axis=-1)
    if np.any(norms > EXP_MAX_NORM):
        raise KernelError(f"exponential kernel input with norm {norms.max():.3g} > {EXP_MAX_NORM}; "
                          "standardize the data first")


def _bw(spec: KernelSpec) -> float:
    if spec.bandwidth == "median":
        raise KernelError("bandwidth 'median' is unresolved; call resolve_bandwidths first")
    return float(spec.bandwidth)


def eval(spec: KernelSpec, z, z2) -> float:  # noqa: A001 - mirrors the math name
    """Kernel value at a single pair of points."""
    z = np.atleast_1d(np.asarray(z, dtype=float))
    z2 = np.atleast_1d(np.asarray(z2, dtype=float))
    if z.shape != z2.shape:
        raise KernelError(f"dimension mismatch: {z.shape} vs {z2.shape}")
    if spec.kind == "composed":
        kg = eval(spec.g, z, z2)
        return 4.0 * eval(spec.tau, z, z2) * kg + kg ** 2
    a, b = _select(spec, z), _select(spec, z2)
    if a.size == 0:
        raise KernelError("kernel reads no coordinates")
    if spec.kind == "gaussian":
        d = a - b
        return float(np.exp(-np.dot(d, d) / (2.0 * _bw(spec) ** 2)))
    if spec.kind == "polynomial":
        return float((1.0 + np.dot(a, b)) ** spec.degree)
    _check_exp(a)
    _check_exp(b)
    return float(np.exp(np.dot(a, b)))


def gram(spec: KernelSpec, points_a, points_b=None) -> np.ndarray:
    """Matrix of kernel values between two point sets (rows are points).

    With ``points_b`` omitted the self-Gram is returned and it is exactly
    symmetric.
    """
    a = np.atleast_2d(np.asarray(points_a, dtype=float))
    same = points_b is None
    b = a if same else np.atleast_2d(np.asarray(points_b, dtype=float))
    if a.shape[0] == 0 or b.shape[0] == 0:
        raise KernelError("empty point set")
    if a.shape[1] != b.shape[1]:
        raise KernelError(f"dimension mismatch: {a.shape[1]} vs {b.shape[1]}")
    if spec.kind == "composed":
        kg = gram(spec.g, a, None if same else b)
        return 4.0 * gram(spec.tau, a, None if same else b) * kg + kg ** 2
    sa, sb = _select(spec, a), _select(spec, b)
    if sa.shape[1] == 0:
        raise KernelError("kernel reads no coordinates")
    if spec.kind == "gaussian":
        d2 = cdist(sa, sb, "sqeuclidean")
        return np.exp(-d2 / (2.0 * _bw(spec) ** 2))
    if spec.kind == "exponential":
        _check_exp(sa)
        if not same:
            _check_exp(sb)
    inner = sa @ sb.T
    if same:
        inner = 0.5 * (inner + inner.T)
    if spec.kind == "polynomial":
        return (1.0 + inner) ** spec.degree
    return np.exp(inner)


def separable_terms(spec: KernelSpec, t_points, x_points):
    """Write the Gram on all pairs (t_a, x_b) as a sum of products.

    Returns a list of ``(Gt, Gx)`` with ``K((t_a, x_b), (t_a', x_b')) =
    sum Gt[a, a'] * Gx[b, b']``, where ``None`` stands for an all-ones
    factor, or ``None`` when the kernel does not split this way.
    """
    t = np.atleast_2d(np.asarray(t_points, dtype=float))
    x = np.atleast_2d(np.asarray(x_points, dtype=float))
    if spec.kind == "composed":
        tau = separable_terms(spec.tau, t, x)
        g = separable_terms(spec.g, t, x)
        if tau is None or g is None or len(g) != 1 or g[0][1] is not None:
            return None
        kg = g[0][0]
        return [(4.0 * kg if a is None else 4.0 * a * kg, b) for a, b in tau] + [(kg ** 2, None)]
    whole = replace(spec, mask="z")
    if spec.mask == "t":
        return [(gram(whole, t), None)]
    if spec.mask == "x":
        return [(None, gram(whole, x))]
    if spec.kind == "polynomial":
        return None
    return [(gram(whole, t), gram(whole, x))]


def kernel_mean(spec: KernelSpec, points, atoms, masses, chunk: int = 20000) -> np.ndarray:
    """Vector with entries sum_j masses[j] * K(points[i], atoms[j])."""
    atoms = np.atleast_2d(np.asarray(atoms, dtype=float))
    masses = np.asarray(masses, dtype=float)
    out = np.zeros(np.atleast_2d(points).shape[0])
    for s in range(0, atoms.shape[0], chunk):
        out += gram(spec, points, atoms[s:s + chunk]) @ masses[s:s + chunk]
    return out


def median_heuristic_bandwidth(points, seed: int = 0, max_points: int = MEDIAN_MAX_POINTS) -> float:
    """Median pairwise Euclidean distance (on a seeded subsample above ``max_points``)."""
    p = np.asarray(points, dtype=float)
    if p.ndim == 1:
        p = p[:, None]
    if p.shape[0] < 2:
        raise KernelError("median heuristic needs at least 2 points")
    if p.shape[0] > max_points:
        idx = np.sort(np.random.default_rng(seed).choice(p.shape[0], max_points, replace=False))
        p = p[idx]
    d = pdist(p)
    if not np.any(d > 0):
        raise KernelError("median heuristic: all points are identical")
    h = float(np.median(d))
    if h <= 0:
        # more than half of the pairs coincide
        h = float(np.median(d[d > 0]))
    return h


def resolve_bandwidths(spec: KernelSpec, points, seed: int = 0) -> KernelSpec:
    """Replace every ``bandwidth="median"`` leaf by the median heuristic on ``points``."""
    if spec.kind == "composed":
        return replace(spec, tau=resolve_bandwidths(spec.tau, points, seed),
                       g=resolve_bandwidths(spec.g, points, seed))
    if spec.kind == "gaussian" and spec.bandwidth == "median":
        z = np.atleast_2d(np.asarray(points, dtype=float))
        return replace(spec, bandwidth=median_heuristic_bandwidth(_select(spec, z), seed=seed))
    return spec


def parse_kernel(name: str, d_t: int = 1, mask: str = "z", bandwidth: float | str = "median") -> KernelSpec:
    """Parse the short kernel names used in config files: ``gaussian``, ``exp``, ``poly4``..."""
    name = name.strip().lower()
    if name in ("gaussian", "gauss", "rbf"):
        return gaussian(bandwidth, mask=mask, d_t=d_t)
    if name in ("exp", "exponential"):
        return exponential(mask=mask, d_t=d_t)
    if name.startswith("poly"):
        deg = name[4:] or "1"
        try:
            return polynomial(int(deg), mask=mask, d_t=d_t)
        except ValueError:
            raise KernelError(f"bad polynomial kernel name {name!r}") from None
    raise KernelError(f"unknown kernel name {name!r}")
