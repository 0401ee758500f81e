"""Exact pairwise optimal transport for the closed-form families.

Each solver returns a Brenier map (gradient of a convex function) from the
source to the target measure:

* 1-D laws: the monotone rearrangement ``G_dst^-1 o G_src``;
* centred Gaussians: the symmetric positive-definite matrix
  ``S_d^1/2 (S_d^1/2 S_s S_d^1/2)^-1/2 S_d^1/2``;
* products / common-copula laws: factor-wise maps;
* discrete laws: an exact coupling (Hungarian algorithm for equal-size
  uniform measures, network simplex otherwise) and its barycentric
  projection.
"""

from __future__ import annotations

import os
from dataclasses import dataclass
from typing import NamedTuple

import numpy as np
from scipy.optimize import linear_sum_assignment
from scipy.spatial.distance import cdist

from .errors import CapacityError, ConditioningError, DomainError, RepresentationError, ShapeError
from .maps import (
    Assignment,
    GridMap,
    LinearMap,
    Monotone1D,
    ProductMap,
    TransportMap,
    as_points,
)
from .measures import (
    DiscreteMeasure,
    GaussianMeasure,
    GridDensity,
    Measure1D,
    ProductMeasure,
    _segments,
    _segments_quantile,
    as_measure1d,
    to_discrete,
)

DEFAULT_CAP = 2048
EIGEN_FLOOR = 1e-12

__all__ = [
    "DEFAULT_CAP",
    "Coupling",
    "MonotoneCheck",
    "matrix_sqrt_spd",
    "matrix_inv_sqrt_spd",
    "optimal_map",
    "optimal_map_1d",
    "optimal_map_gaussian",
    "optimal_map_product",
    "optimal_map_discrete",
    "optimal_map_grid",
    "optimal_coupling_discrete",
    "discrete_map_average",
    "check_monotone",
    "random_probe_pairs",
]


# ---------------------------------------------------------------------------
# SPD matrix functions
# ---------------------------------------------------------------------------


def _spd_eigh(s: np.ndarray):
    s = np.asarray(s, dtype=float)
    if s.ndim != 2 or s.shape[0] != s.shape[1]:
        raise ShapeError("expected a square matrix")
    lam, vec = np.linalg.eigh(0.5 * (s + s.T))
    if lam[0] < EIGEN_FLOOR:
        raise ConditioningError(
            f"matrix is singular or indefinite: smallest eigenvalue {lam[0]:.3e}", float(lam[0])
        )
    return lam, vec


def matrix_sqrt_spd(s) -> np.ndarray:
    """Symmetric square root of an SPD matrix by eigendecomposition."""
    lam, vec = _spd_eigh(s)
    r = (vec * np.sqrt(lam)) @ vec.T
    return 0.5 * (r + r.T)


def matrix_inv_sqrt_spd(s) -> np.ndarray:
    lam, vec = _spd_eigh(s)
    r = (vec / np.sqrt(lam)) @ vec.T
    return 0.5 * (r + r.T)


def gaussian_map_matrix(s_src: np.ndarray, s_dst: np.ndarray) -> np.ndarray:
    root = matrix_sqrt_spd(s_dst)
    t = root @ matrix_inv_sqrt_spd(root @ s_src @ root) @ root
    return 0.5 * (t + t.T)


# ---------------------------------------------------------------------------
# Closed-form maps
# ---------------------------------------------------------------------------


def optimal_map_gaussian(src: GaussianMeasure, dst: GaussianMeasure) -> LinearMap:
    if src.dim != dst.dim:
        raise ShapeError(f"dimension mismatch: {src.dim} vs {dst.dim}")
    return LinearMap(gaussian_map_matrix(src.covariance, dst.covariance))


def optimal_map_1d(src, dst) -> Monotone1D:
    """Monotone rearrangement between two laws on the line.

    Equal-size quantile grids are matched value by value; otherwise the
    knots are taken at the union of both quantile breakpoints, where the
    composition of the two piecewise-linear quantile functions is exact.
    """
    if src.dim != 1 or dst.dim != 1:
        raise ShapeError("optimal_map_1d needs one-dimensional measures")
    a = src if isinstance(src, (Measure1D, DiscreteMeasure, GridDensity)) else as_measure1d(src)
    b = dst if isinstance(dst, (Measure1D, DiscreteMeasure, GridDensity)) else as_measure1d(dst)
    if isinstance(a, Measure1D) and isinstance(b, Measure1D) and a.size == b.size:
        return Monotone1D.from_pairs(a.values, b.values)
    sa, sb = _segments(a), _segments(b)
    u = np.union1d(sa[0], sb[0])
    mids = 0.5 * (u[:-1] + u[1:])
    # evaluate just inside each elementary interval so both sides are single-valued
    eps = 1e-12 * (u[1:] - u[:-1])
    pts = np.concatenate([u[:-1] + eps, mids, u[1:] - eps])
    return Monotone1D.from_pairs(_segments_quantile(sa, pts), _segments_quantile(sb, pts))


def optimal_map_product(src: ProductMeasure, dst: ProductMeasure) -> ProductMap:
    if not isinstance(src, ProductMeasure) or not isinstance(dst, ProductMeasure):
        raise RepresentationError("optimal_map_product needs two product measures")
    if src.dims != dst.dims:
        raise RepresentationError(f"misaligned factorizations {src.dims} vs {dst.dims}")
    if src.copula != dst.copula:
        raise RepresentationError("factor-wise maps are optimal only for a common copula")
    return ProductMap(tuple(optimal_map(a, b) for a, b in zip(src.factors, dst.factors)))


def optimal_map(src, dst, cap: int = DEFAULT_CAP) -> TransportMap:
    """Dispatch to the exact solver for the pair's representation family."""
    if src.dim != dst.dim:
        raise ShapeError(f"dimension mismatch: {src.dim} vs {dst.dim}")
    if isinstance(src, GaussianMeasure) and isinstance(dst, GaussianMeasure):
        return optimal_map_gaussian(src, dst)
    if isinstance(src, ProductMeasure) and isinstance(dst, ProductMeasure):
        return optimal_map_product(src, dst)
    if isinstance(src, DiscreteMeasure) and isinstance(dst, DiscreteMeasure):
        return optimal_map_discrete(src, dst, cap)
    if isinstance(src, GridDensity) and isinstance(dst, GridDensity) and src.dim > 1:
        return optimal_map_grid(src, dst, cap)
    if src.dim == 1:
        return optimal_map_1d(src, dst)
    raise RepresentationError(
        f"no exact solver for {type(src).__name__} -> {type(dst).__name__}"
    )


# ---------------------------------------------------------------------------
# Discrete transport
# ---------------------------------------------------------------------------


@dataclass(frozen=True, eq=False)
class Coupling:
    """Transport plan between two discrete measures with its quadratic cost."""

    source: DiscreteMeasure
    target: DiscreteMeasure
    plan: np.ndarray
    cost: float

    def __post_init__(self):
        p = np.asarray(self.plan, dtype=float)
        if p.shape != (self.source.size, self.target.size):
            raise ShapeError("plan shape must be (source size, target size)")
        if np.any(p < -1e-12):
            raise DomainError("plan entries must be nonnegative")
        if np.max(np.abs(p.sum(axis=1) - self.source.weights)) > 1e-9:
            raise DomainError("plan row sums differ from source weights")
        if np.max(np.abs(p.sum(axis=0) - self.target.weights)) > 1e-9:
            raise DomainError("plan column sums differ from target weights")
        object.__setattr__(self, "plan", np.clip(p, 0.0, None))

    def permutation(self) -> np.ndarray | None:
        """Target index of each source atom when the plan is a permutation."""
        if self.source.size != self.target.size:
            return None
        nz = self.plan > 0
        if not np.all(nz.sum(axis=1) == 1):
            return None
        return np.argmax(self.plan, axis=1)


def squared_distances(x: np.ndarray, y: np.ndarray) -> np.ndarray:
    return cdist(x, y, "sqeuclidean")


def _emd(a: np.ndarray, b: np.ndarray, cost: np.ndarray) -> np.ndarray:
    for key in (
        "POT_BACKEND_DISABLE_PYTORCH",
        "POT_BACKEND_DISABLE_JAX",
        "POT_BACKEND_DISABLE_CUPY",
        "POT_BACKEND_DISABLE_TENSORFLOW",
    ):
        os.environ.setdefault(key, "1")
    import ot

    a = a / a.sum()
    b = b / b.sum()
    return ot.emd(a, b, cost, numItermax=10_000_000)


def optimal_coupling_discrete(
    src: DiscreteMeasure, dst: DiscreteMeasure, cap: int = DEFAULT_CAP
) -> Coupling:
    """Exact minimiser of the expected squared distance over couplings."""
    if src.dim != dst.dim:
        raise ShapeError(f"dimension mismatch: {src.dim} vs {dst.dim}")
    if max(src.size, dst.size) > cap:
        raise CapacityError(f"discrete problem of size {src.size}x{dst.size} exceeds cap {cap}")
    c = squared_distances(src.points, dst.points)
    if src.size == dst.size and src.is_uniform and dst.is_uniform:
        rows, cols = linear_sum_assignment(c)
        plan = np.zeros_like(c)
        plan[rows, cols] = src.weights[rows]
        cost = float(np.sum(src.weights[rows] * c[rows, cols]))
        return Coupling(src, dst, plan, cost)
    if src.dim == 1:
        plan = _monotone_plan_1d(src, dst)
    else:
        plan = _emd(np.array(src.weights), np.array(dst.weights), c)
    return Coupling(src, dst, plan, float(np.sum(plan * c)))


def _monotone_plan_1d(src: DiscreteMeasure, dst: DiscreteMeasure) -> np.ndarray:
    """North-west corner rule on sorted atoms: the optimal plan on the line."""
    ia = np.argsort(src.points[:, 0], kind="stable")
    ib = np.argsort(dst.points[:, 0], kind="stable")
    wa = src.weights[ia].astype(float).copy()
    wb = dst.weights[ib].astype(float).copy()
    plan = np.zeros((src.size, dst.size))
    i = j = 0
    while i < wa.size and j < wb.size:
        m = min(wa[i], wb[j])
        plan[ia[i], ib[j]] += m
        wa[i] -= m
        wb[j] -= m
        if wa[i] <= 1e-15:
            i += 1
        if wb[j] <= 1e-15:
            j += 1
    return plan


def barycentric_images(coupling: Coupling) -> np.ndarray:
    """Mean target location of each source atom under the plan."""
    w = coupling.plan.sum(axis=1, keepdims=True)
    return (coupling.plan @ coupling.target.points) / w


def optimal_map_discrete(src: DiscreteMeasure, dst: DiscreteMeasure, cap: int = DEFAULT_CAP) -> Assignment:
    """Optimal assignment (or barycentric projection of the optimal plan)."""
    coupling = optimal_coupling_discrete(src, dst, cap)
    perm = coupling.permutation()
    if perm is not None:
        return Assignment(src.points, dst.points[perm], perm)
    idx = np.where((coupling.plan > 0).sum(axis=1) == 1, np.argmax(coupling.plan, axis=1), -1)
    return Assignment(src.points, barycentric_images(coupling), idx)


def discrete_map_average(gamma: DiscreteMeasure, targets) -> DiscreteMeasure:
    """One Procrustes step for discrete measures.

    Every atom of ``gamma`` moves to the average of its images under the
    optimal maps to each target. Coinciding averages are merged with a
    :class:`~wassbary.errors.CollisionWarning`.
    """
    targets = list(targets)
    if not targets:
        raise DomainError("need at least one target measure")
    images = np.mean([optimal_map_discrete(gamma, mu).target for mu in targets], axis=0)
    return DiscreteMeasure.merged(images, gamma.weights)


def optimal_map_grid(src: GridDensity, dst: GridDensity, cap: int = DEFAULT_CAP) -> TransportMap:
    """Optimal map between grid densities.

    In one dimension the monotone rearrangement is exact. In higher
    dimensions the cell-centre discretisations are coupled exactly and the
    barycentric projection is stored as a displacement field; empty source
    cells borrow the displacement of the nearest occupied cell.
    """
    if src.dim != dst.dim:
        raise ShapeError(f"dimension mismatch: {src.dim} vs {dst.dim}")
    if src.dim == 1:
        return optimal_map_1d(src, dst)
    a, b = to_discrete(src), to_discrete(dst)
    coupling = optimal_coupling_discrete(a, b, cap)
    disp_pos = barycentric_images(coupling) - a.points
    centers = src.centers()
    mass = src.masses().ravel()
    disp = np.zeros_like(centers)
    occupied = mass > 0
    disp[occupied] = disp_pos
    if not np.all(occupied):
        from scipy.spatial import cKDTree

        _, nearest = cKDTree(centers[occupied]).query(centers[~occupied])
        disp[~occupied] = disp_pos[nearest]
    return GridMap(src.window.lower, src.window.upper, src.cells, disp)


# ---------------------------------------------------------------------------
# Monotonicity
# ---------------------------------------------------------------------------


class MonotoneCheck(NamedTuple):
    ok: bool
    worst: float


def check_monotone(t: TransportMap, probes, tol: float = 1e-9) -> MonotoneCheck:
    """Check <t(x) - t(x'), x - x'> >= -tol on probe pairs.

    ``probes`` is a pair ``(x, x2)`` of equally shaped point arrays or an
    array of shape ``(P, 2, d)``. ``worst`` is the smallest inner product.
    """
    if isinstance(probes, np.ndarray) and probes.ndim == 3:
        x, x2 = probes[:, 0, :], probes[:, 1, :]
    else:
        x, x2 = probes
    x = as_points(x, t.dim)
    x2 = as_points(x2, t.dim)
    if x.shape != x2.shape:
        raise ShapeError("probe arrays must have equal shape")
    inner = np.sum((t.apply(x) - t.apply(x2)) * (x - x2), axis=1)
    worst = float(inner.min()) if inner.size else 0.0
    return MonotoneCheck(bool(worst >= -tol), worst)


def random_probe_pairs(lower, upper, n: int, seed: int = 0) -> tuple:
    """``n`` uniform random point pairs in the box ``[lower, upper]``."""
    lo = np.atleast_1d(np.asarray(lower, dtype=float))
    hi = np.atleast_1d(np.asarray(upper, dtype=float))
    rng = np.random.default_rng(seed)
    x = lo + (hi - lo) * rng.random((n, lo.size))
    x2 = lo + (hi - lo) * rng.random((n, lo.size))
    return x, x2
