"""Measure representations, 2-Wasserstein distances, push-forwards, sampling.

Five representations are supported:

* :class:`Measure1D` - a law on the line stored through its quantile
  function at the midpoint levels ``(i - 1/2)/M`` (or as a sorted sample).
  For distances it is treated as the uniform measure on those values.
* :class:`GaussianMeasure` - centred Gaussian with a covariance matrix.
* :class:`ProductMeasure` - factors joined by the independence copula, or
  1-D factors joined by an explicit copula (e.g. :class:`FrankCopula`).
* :class:`DiscreteMeasure` - finitely many distinct weighted atoms.
* :class:`GridDensity` - piecewise-constant density on a box.
"""

from __future__ import annotations

import itertools
import warnings
from dataclasses import dataclass, field

import numpy as np
from scipy import special
from scipy.stats import qmc

from .errors import (
    CollisionWarning,
    ConditioningError,
    DomainError,
    RepresentationError,
    ShapeError,
)
from .maps import (
    LinearMap,
    Monotone1D,
    ProductMap,
    TransportMap,
    as_points,
)

DEFAULT_LEVELS = 1024
DEFAULT_DISCRETE_POINTS = 512

__all__ = [
    "DEFAULT_LEVELS",
    "Compactum",
    "Measure1D",
    "GaussianMeasure",
    "FrankCopula",
    "ProductMeasure",
    "DiscreteMeasure",
    "GridDensity",
    "PointPattern",
    "midpoint_levels",
    "quantile",
    "as_measure1d",
    "grid_from_quantiles",
    "deposit_cic",
    "wasserstein2_sq",
    "draw",
    "to_discrete",
    "wasserstein2",
    "push_forward",
    "sample",
]


def midpoint_levels(m: int) -> np.ndarray:
    return (np.arange(m) + 0.5) / m


# ---------------------------------------------------------------------------
# Window
# ---------------------------------------------------------------------------


@dataclass(frozen=True, eq=False)
class Compactum:
    """Axis-aligned box ``prod_k [lower_k, upper_k]``."""

    lower: np.ndarray
    upper: np.ndarray

    def __post_init__(self):
        lo = np.atleast_1d(np.asarray(self.lower, dtype=float)).ravel()
        hi = np.atleast_1d(np.asarray(self.upper, dtype=float)).ravel()
        if lo.shape != hi.shape or lo.size == 0:
            raise ShapeError("lower and upper must be nonempty vectors of equal length")
        if np.any(~(hi > lo)):
            raise DomainError("box must have lower < upper on every axis")
        lo.flags.writeable = False
        hi.flags.writeable = False
        object.__setattr__(self, "lower", lo)
        object.__setattr__(self, "upper", hi)

    @classmethod
    def unit(cls, dim: int) -> "Compactum":
        return cls(np.zeros(dim), np.ones(dim))

    @property
    def dim(self) -> int:
        return self.lower.size

    @property
    def widths(self) -> np.ndarray:
        return self.upper - self.lower

    @property
    def diameter(self) -> float:
        return float(np.linalg.norm(self.widths))

    @property
    def volume(self) -> float:
        return float(np.prod(self.widths))

    def contains(self, points, tol: float = 0.0) -> np.ndarray:
        pts = as_points(points, self.dim)
        return np.all((pts >= self.lower - tol) & (pts <= self.upper + tol), axis=1)

    def shrink(self, fraction: float) -> "Compactum":
        """Sub-box with ``fraction`` of each side's width cut from both ends."""
        pad = fraction * self.widths
        return Compactum(self.lower + pad, self.upper - pad)

    def probe_grid(self, per_axis: int) -> np.ndarray:
        axes = [np.linspace(lo, hi, per_axis) for lo, hi in zip(self.lower, self.upper)]
        mesh = np.meshgrid(*axes, indexing="ij")
        return np.stack([m.ravel() for m in mesh], axis=1)

    def __eq__(self, other):
        return (
            isinstance(other, Compactum)
            and np.array_equal(self.lower, other.lower)
            and np.array_equal(self.upper, other.upper)
        )

    def __hash__(self):
        return hash((self.lower.tobytes(), self.upper.tobytes()))


# ---------------------------------------------------------------------------
# Representations
# ---------------------------------------------------------------------------


@dataclass(frozen=True, eq=False)
class Measure1D:
    """Law on the line, stored by quantile values.

    ``kind="quantile"``: ``values[i]`` is the quantile at level ``(i+1/2)/M``;
    intermediate quantiles interpolate linearly.
    ``kind="sample"``: ``values`` is a sorted sample with equal weights.
    """

    values: np.ndarray
    kind: str = "quantile"
    dim: int = field(default=1, init=False)

    def __post_init__(self):
        v = np.asarray(self.values, dtype=float).ravel()
        if v.size == 0:
            raise DomainError("Measure1D needs at least one value")
        if not np.all(np.isfinite(v)):
            raise DomainError("quantile values must be finite")
        if self.kind not in ("quantile", "sample"):
            raise DomainError(f"unknown Measure1D kind {self.kind!r}")
        if self.kind == "sample":
            v = np.sort(v)
        elif np.any(np.diff(v) < 0):
            raise DomainError("quantile values must be nondecreasing")
        v.flags.writeable = False
        object.__setattr__(self, "values", v)

    @property
    def size(self) -> int:
        return self.values.size

    @property
    def levels(self) -> np.ndarray:
        return midpoint_levels(self.size)

    @classmethod
    def from_quantile_function(cls, qf, m: int = DEFAULT_LEVELS) -> "Measure1D":
        return cls(np.asarray(qf(midpoint_levels(m)), dtype=float))

    @classmethod
    def from_sample(cls, x) -> "Measure1D":
        return cls(np.asarray(x, dtype=float), kind="sample")

    @classmethod
    def point_mass(cls, c: float, m: int = DEFAULT_LEVELS) -> "Measure1D":
        return cls(np.full(m, float(c)))

    @classmethod
    def uniform(cls, a: float = 0.0, b: float = 1.0, m: int = DEFAULT_LEVELS) -> "Measure1D":
        return cls(a + (b - a) * midpoint_levels(m))

    @classmethod
    def gaussian(cls, std: float = 1.0, m: int = DEFAULT_LEVELS) -> "Measure1D":
        return cls(std * special.ndtri(midpoint_levels(m)))

    def second_moment(self) -> float:
        return float(np.mean(self.values**2))


@dataclass(frozen=True, eq=False)
class GaussianMeasure:
    """Centred Gaussian N(0, S)."""

    covariance: np.ndarray

    def __post_init__(self):
        s = np.atleast_2d(np.asarray(self.covariance, dtype=float))
        if s.ndim != 2 or s.shape[0] != s.shape[1]:
            raise ShapeError("covariance must be a square matrix")
        s = 0.5 * (s + s.T)
        lam = np.linalg.eigvalsh(s)
        if lam[0] <= 0:
            raise ConditioningError(
                f"covariance is not positive definite (min eigenvalue {lam[0]:.3e})",
                float(lam[0]),
            )
        s.flags.writeable = False
        object.__setattr__(self, "covariance", s)

    @property
    def dim(self) -> int:
        return self.covariance.shape[0]

    def density(self, points) -> np.ndarray:
        pts = as_points(points, self.dim)
        inv = np.linalg.inv(self.covariance)
        quad = np.einsum("ij,jk,ik->i", pts, inv, pts)
        norm = np.sqrt((2 * np.pi) ** self.dim * np.linalg.det(self.covariance))
        return np.exp(-0.5 * quad) / norm


@dataclass(frozen=True)
class FrankCopula:
    """Frank copula with parameter ``theta`` (nonzero)."""

    theta: float

    def __post_init__(self):
        if self.theta == 0 or not np.isfinite(self.theta):
            raise DomainError("Frank copula needs a finite nonzero theta")

    def cdf(self, u, v):
        t = self.theta
        num = np.expm1(-t * np.asarray(u)) * np.expm1(-t * np.asarray(v))
        return -np.log1p(num / np.expm1(-t)) / t

    def density(self, u, v):
        t = self.theta
        u = np.asarray(u, dtype=float)
        v = np.asarray(v, dtype=float)
        em = -np.expm1(-t)
        num = t * em * np.exp(-t * (u + v))
        den = (em - (-np.expm1(-t * u)) * (-np.expm1(-t * v))) ** 2
        return num / den

    def sample(self, n: int, rng: np.random.Generator) -> np.ndarray:
        """Draw ``(n, 2)`` uniforms by inverting the conditional law of V given U."""
        t = self.theta
        u = rng.random(n)
        w = rng.random(n)
        a = np.exp(-t * u)
        v = -np.log1p(w * np.expm1(-t) / (w + (1.0 - w) * a)) / t
        return np.column_stack([u, np.clip(v, 0.0, 1.0)])

    def to_json(self) -> dict:
        return {"family": "frank", "theta": float(self.theta)}


@dataclass(frozen=True, eq=False)
class ProductMeasure:
    """Factors joined by independence, or 1-D marginals joined by a copula.

    When ``copula`` is set, every factor must be one-dimensional and the
    measure is the law with those marginals and that copula. Two such
    measures with the same copula are optimally coupled factor by factor.
    """

    factors: tuple
    copula: FrankCopula | None = None

    def __post_init__(self):
        factors = tuple(self.factors)
        if not factors:
            raise DomainError("ProductMeasure needs at least one factor")
        if self.copula is not None:
            if len(factors) != 2 or any(f.dim != 1 for f in factors):
                raise RepresentationError("a copula joins exactly two 1-D marginals")
        object.__setattr__(self, "factors", factors)

    @property
    def dims(self) -> tuple:
        return tuple(f.dim for f in self.factors)

    @property
    def dim(self) -> int:
        return sum(self.dims)


@dataclass(frozen=True, eq=False)
class DiscreteMeasure:
    """Weighted atoms at distinct points (uniform weights by default)."""

    points: np.ndarray
    weights: np.ndarray | None = None

    def __post_init__(self):
        p = np.asarray(self.points, dtype=float)
        if p.ndim == 1:
            p = p.reshape(-1, 1)
        if p.ndim != 2 or p.shape[0] == 0:
            raise DomainError("DiscreteMeasure needs a nonempty (M, d) point array")
        if not np.all(np.isfinite(p)):
            raise DomainError("points must be finite")
        if np.unique(p, axis=0).shape[0] != p.shape[0]:
            raise DomainError("support points must be pairwise distinct")
        if self.weights is None:
            w = np.full(p.shape[0], 1.0 / p.shape[0])
        else:
            w = np.asarray(self.weights, dtype=float).ravel()
            if w.size != p.shape[0]:
                raise ShapeError("one weight per point is required")
            if np.any(w < 0) or abs(w.sum() - 1.0) > 1e-9:
                raise DomainError("weights must be nonnegative and sum to 1")
        p.flags.writeable = False
        w.flags.writeable = False
        object.__setattr__(self, "points", p)
        object.__setattr__(self, "weights", w)

    @property
    def dim(self) -> int:
        return self.points.shape[1]

    @property
    def size(self) -> int:
        return self.points.shape[0]

    @property
    def is_uniform(self) -> bool:
        return bool(np.all(self.weights == self.weights[0]))

    @classmethod
    def merged(cls, points, weights, warn: bool = True) -> "DiscreteMeasure":
        """Build a measure from possibly repeated points, summing weights."""
        p = np.asarray(points, dtype=float)
        if p.ndim == 1:
            p = p.reshape(-1, 1)
        w = np.asarray(weights, dtype=float)
        uniq, inverse = np.unique(p, axis=0, return_inverse=True)
        if uniq.shape[0] == p.shape[0]:
            return cls(p, w / w.sum())
        if warn:
            warnings.warn(
                f"{p.shape[0] - uniq.shape[0]} support points collided; weights merged",
                CollisionWarning,
                stacklevel=2,
            )
        merged_w = np.zeros(uniq.shape[0])
        np.add.at(merged_w, inverse.ravel(), w)
        return cls(uniq, merged_w / merged_w.sum())


@dataclass(frozen=True, eq=False)
class GridDensity:
    """Piecewise-constant probability density on a box grid.

    ``values`` has shape ``cells``; the mass of a cell is value times cell
    volume.
    """

    window: Compactum
    cells: tuple
    values: np.ndarray

    def __post_init__(self):
        cells = tuple(int(c) for c in np.atleast_1d(self.cells))
        if len(cells) != self.window.dim or any(c < 1 for c in cells):
            raise ShapeError("cells must give a positive count per window axis")
        v = np.asarray(self.values, dtype=float).reshape(cells)
        if np.any(v < 0) or not np.all(np.isfinite(v)):
            raise DomainError("density values must be finite and nonnegative")
        vol = self.window.volume / np.prod(cells)
        total = float(v.sum() * vol)
        if abs(total - 1.0) > 1e-8:
            raise DomainError(f"density must integrate to 1, got {total!r}")
        v.flags.writeable = False
        object.__setattr__(self, "cells", cells)
        object.__setattr__(self, "values", v)

    @property
    def dim(self) -> int:
        return len(self.cells)

    @property
    def cell_widths(self) -> np.ndarray:
        return self.window.widths / np.asarray(self.cells)

    @property
    def cell_volume(self) -> float:
        return float(np.prod(self.cell_widths))

    @classmethod
    def from_masses(cls, window: Compactum, masses) -> "GridDensity":
        m = np.asarray(masses, dtype=float)
        m = np.clip(m, 0.0, None)
        cells = m.shape
        vol = window.volume / np.prod(cells)
        return cls(window, cells, m / m.sum() / vol)

    @classmethod
    def uniform(cls, window: Compactum, cells) -> "GridDensity":
        cells = tuple(int(c) for c in np.atleast_1d(cells))
        return cls(window, cells, np.full(cells, 1.0 / window.volume))

    @classmethod
    def from_function(cls, window: Compactum, cells, fn) -> "GridDensity":
        """Tabulate a nonnegative function at the cell centres and normalise."""
        cells = tuple(int(c) for c in np.atleast_1d(cells))
        pts = _cell_centers(window, cells)
        vals = np.asarray(fn(pts), dtype=float).reshape(cells)
        return cls.from_masses(window, vals)

    def axes(self) -> list:
        return [
            lo + (np.arange(c) + 0.5) * w
            for lo, c, w in zip(self.window.lower, self.cells, self.cell_widths)
        ]

    def edges(self, axis: int = 0) -> np.ndarray:
        return np.linspace(self.window.lower[axis], self.window.upper[axis], self.cells[axis] + 1)

    def centers(self) -> np.ndarray:
        return _cell_centers(self.window, self.cells)

    def masses(self) -> np.ndarray:
        return self.values * self.cell_volume

    def sup_norm(self) -> float:
        return float(self.values.max())


@dataclass(frozen=True, eq=False)
class PointPattern:
    """Finite multiset of points inside a window."""

    window: Compactum
    points: np.ndarray

    def __post_init__(self):
        d = self.window.dim
        p = np.asarray(self.points, dtype=float)
        if p.size == 0:
            p = np.empty((0, d))
        p = as_points(p, d) if p.ndim < 2 else p
        if p.shape[1] != d:
            raise ShapeError(f"points must have dimension {d}")
        tol = 1e-9 * max(1.0, float(np.max(np.abs(self.window.upper))))
        if p.shape[0] and not np.all(self.window.contains(p, tol)):
            raise DomainError("pattern points must lie inside the window")
        p = np.clip(p, self.window.lower, self.window.upper)
        p.flags.writeable = False
        object.__setattr__(self, "points", p)

    @property
    def size(self) -> int:
        return self.points.shape[0]

    @property
    def dim(self) -> int:
        return self.window.dim

    def empirical(self) -> DiscreteMeasure:
        if self.size == 0:
            raise DomainError("an empty pattern has no empirical measure")
        return DiscreteMeasure.merged(self.points, np.ones(self.size), warn=False)


def _cell_centers(window: Compactum, cells) -> np.ndarray:
    axes = [
        lo + (np.arange(c) + 0.5) * (hi - lo) / c
        for lo, hi, c in zip(window.lower, window.upper, cells)
    ]
    mesh = np.meshgrid(*axes, indexing="ij")
    return np.stack([m.ravel() for m in mesh], axis=1)


# ---------------------------------------------------------------------------
# 1-D quantile functions
# ---------------------------------------------------------------------------


def quantile(m: Measure1D, q):
    """Quantile function of ``m`` at level(s) ``q`` in (0, 1)."""
    qa = np.asarray(q, dtype=float)
    if np.any((qa <= 0) | (qa >= 1)) or np.any(~np.isfinite(qa)):
        raise DomainError("quantile levels must lie in the open interval (0, 1)")
    if not isinstance(m, Measure1D):
        m = as_measure1d(m)
    v = m.values
    if m.kind == "sample":
        idx = np.clip(np.ceil(qa * v.size).astype(int) - 1, 0, v.size - 1)
        out = v[idx]
    else:
        out = np.interp(qa, m.levels, v)
    return float(out) if out.ndim == 0 else out


def _segments(m):
    """Quantile function as linear pieces: (level edges, left values, right values)."""
    if isinstance(m, Measure1D):
        n = m.size
        q = np.arange(n + 1) / n
        return q, m.values, m.values
    if isinstance(m, DiscreteMeasure):
        order = np.argsort(m.points[:, 0], kind="stable")
        v = m.points[order, 0]
        q = np.concatenate([[0.0], np.cumsum(m.weights[order])])
        q[-1] = 1.0
        keep = np.diff(q) > 0
        qq = np.concatenate([[0.0], q[1:][keep]])
        return qq, v[keep], v[keep]
    if isinstance(m, GridDensity) and m.dim == 1:
        e = m.edges(0)
        mass = m.masses().ravel()
        keep = mass > 0
        q = np.concatenate([[0.0], np.cumsum(mass[keep])])
        q /= q[-1]
        return q, e[:-1][keep], e[1:][keep]
    raise RepresentationError(f"no exact quantile segments for {type(m).__name__}")


def _segment_eval(seg, u, idx):
    q, left, right = seg
    span = q[idx + 1] - q[idx]
    frac = np.where(span > 0, (u - q[idx]) / np.where(span > 0, span, 1.0), 0.0)
    return left[idx] + (right[idx] - left[idx]) * frac


def _w2sq_segments(a, b) -> float:
    """Exact integral of the squared difference of two piecewise-linear quantile functions."""
    qa, qb = a[0], b[0]
    q = np.union1d(qa, qb)
    s, t = q[:-1], q[1:]
    keep = t > s
    s, t = s[keep], t[keep]
    mid = 0.5 * (s + t)
    ia = np.clip(np.searchsorted(qa, mid, side="right") - 1, 0, qa.size - 2)
    ib = np.clip(np.searchsorted(qb, mid, side="right") - 1, 0, qb.size - 2)
    total = 0.0
    ds = _segment_eval(a, s, ia) - _segment_eval(b, s, ib)
    dm = _segment_eval(a, mid, ia) - _segment_eval(b, mid, ib)
    dt = _segment_eval(a, t, ia) - _segment_eval(b, t, ib)
    total = np.sum((t - s) * (ds**2 + 4 * dm**2 + dt**2)) / 6.0
    return float(max(total, 0.0))


def _segments_quantile(seg, levels) -> np.ndarray:
    q = seg[0]
    idx = np.clip(np.searchsorted(q, levels, side="right") - 1, 0, q.size - 2)
    return _segment_eval(seg, np.asarray(levels, dtype=float), idx)


def as_measure1d(m, levels: int = DEFAULT_LEVELS) -> Measure1D:
    """Convert any one-dimensional measure to its quantile-grid form."""
    if isinstance(m, Measure1D):
        return m
    if m.dim != 1:
        raise ShapeError("only one-dimensional measures have a quantile form")
    if isinstance(m, GaussianMeasure):
        return Measure1D.gaussian(float(np.sqrt(m.covariance[0, 0])), levels)
    if isinstance(m, ProductMeasure):
        return as_measure1d(m.factors[0], levels)
    if isinstance(m, DiscreteMeasure) and m.is_uniform:
        return Measure1D.from_sample(m.points[:, 0])
    return Measure1D(_segments_quantile(_segments(m), midpoint_levels(levels)))


def grid_from_quantiles(window: Compactum, cells: int, m: Measure1D) -> GridDensity:
    """Bin a 1-D quantile-grid measure onto a regular grid.

    The distribution function at each cell edge is read off the piecewise
    linear interpolant of (quantile value, level); mass outside the window
    is folded into the boundary cells.
    """
    v = m.values
    lv = m.levels if m.kind == "quantile" else midpoint_levels(m.size)
    edges = np.linspace(window.lower[0], window.upper[0], cells + 1)
    # repeated quantile values are atoms: keep the largest level (right-continuity)
    xs, idx = np.unique(v[::-1], return_index=True)
    ys = lv[::-1][idx]
    cdf = np.interp(edges, xs, ys, left=0.0, right=1.0)
    cdf[0], cdf[-1] = 0.0, 1.0
    return GridDensity.from_masses(window, np.diff(cdf))


# ---------------------------------------------------------------------------
# Discretisation
# ---------------------------------------------------------------------------


def to_discrete(m, n: int = DEFAULT_DISCRETE_POINTS, seed: int = 0) -> DiscreteMeasure:
    """Deterministic discrete approximation used for cross-family distances.

    Gaussians and copula products use ``n`` scrambled-Sobol points pushed
    through the inverse distribution function; 1-D laws use ``n`` midpoint
    quantiles; grids use the positive-mass cell centres; discrete measures
    are returned unchanged.
    """
    if isinstance(m, DiscreteMeasure):
        return m
    if isinstance(m, GridDensity):
        mass = m.masses().ravel()
        keep = mass > 0
        return DiscreteMeasure(m.centers()[keep], mass[keep] / mass[keep].sum())
    if m.dim == 1:
        vals = as_measure1d(m, n).values
        return DiscreteMeasure.merged(vals, np.ones(vals.size), warn=False)
    u = _sobol(n, m.dim, seed)
    return DiscreteMeasure.merged(_transform_uniforms(m, u), np.ones(n), warn=False)


def _sobol(n: int, dim: int, seed: int) -> np.ndarray:
    eng = qmc.Sobol(dim, scramble=True, seed=seed)
    m = int(np.ceil(np.log2(max(n, 2))))
    u = eng.random_base2(m)[:n]
    return np.clip(u, 1e-12, 1 - 1e-12)


def _transform_uniforms(m, u: np.ndarray) -> np.ndarray:
    """Map uniforms on the unit cube to draws from ``m`` (inverse-CDF construction)."""
    if isinstance(m, GaussianMeasure):
        z = special.ndtri(u)
        lam, vec = np.linalg.eigh(m.covariance)
        return z @ (vec * np.sqrt(lam)) .T
    if isinstance(m, Measure1D):
        return _quantile_extended(m, u[:, 0]).reshape(-1, 1)
    if isinstance(m, ProductMeasure):
        if m.copula is not None:
            uu = _copula_transform(m.copula, u[:, :2])
            cols = [_quantile_extended(as_measure1d(f), uu[:, k]) for k, f in enumerate(m.factors)]
            return np.column_stack(cols)
        out, start = [], 0
        for f in m.factors:
            out.append(_transform_uniforms(f, u[:, start : start + f.dim]))
            start += f.dim
        return np.hstack(out)
    if isinstance(m, DiscreteMeasure):
        if m.dim != 1:
            raise RepresentationError("inverse-CDF sampling of multivariate atoms is not defined")
        return _quantile_extended(as_measure1d(m), u[:, 0]).reshape(-1, 1)
    raise RepresentationError(f"cannot transform uniforms for {type(m).__name__}")


def _quantile_extended(m: Measure1D, u: np.ndarray) -> np.ndarray:
    if m.kind == "sample":
        idx = np.clip(np.ceil(u * m.size).astype(int) - 1, 0, m.size - 1)
        return m.values[idx]
    return np.interp(u, m.levels, m.values)


def _copula_transform(cop: FrankCopula, u: np.ndarray) -> np.ndarray:
    t = cop.theta
    a = np.exp(-t * u[:, 0])
    w = u[:, 1]
    v = -np.log1p(w * np.expm1(-t) / (w * (a - 1.0) - a)) / t
    return np.column_stack([u[:, 0], np.clip(v, 0.0, 1.0)])


# ---------------------------------------------------------------------------
# Distance
# ---------------------------------------------------------------------------


def _sqrtm(s: np.ndarray) -> np.ndarray:
    lam, vec = np.linalg.eigh(0.5 * (s + s.T))
    return (vec * np.sqrt(np.clip(lam, 0.0, None))) @ vec.T


def gaussian_w2sq(s1: np.ndarray, s2: np.ndarray) -> float:
    """``tr[(T - I) S1 (T - I)]`` with ``T`` the optimal map from S1 to S2.

    Equal to ``tr S1 + tr S2 - 2 tr (S1^1/2 S2 S1^1/2)^1/2`` but without the
    cancellation that form suffers when S1 and S2 are close.
    """
    r1 = _sqrtm(s1)
    r1_inv = np.linalg.inv(r1)
    t = r1_inv @ _sqrtm(r1 @ s2 @ r1) @ r1_inv
    dev = 0.5 * (t + t.T) - np.eye(len(t))
    return float(np.trace(dev @ s1 @ dev))


def _block_gaussian(m: ProductMeasure) -> GaussianMeasure | None:
    if m.copula is not None:
        return None
    blocks = []
    for f in m.factors:
        if isinstance(f, GaussianMeasure):
            blocks.append(f.covariance)
        elif isinstance(f, ProductMeasure) and (g := _block_gaussian(f)) is not None:
            blocks.append(g.covariance)
        else:
            return None
    from scipy.linalg import block_diag

    return GaussianMeasure(block_diag(*blocks))


def _exact_1d(m) -> bool:
    return isinstance(m, (Measure1D, DiscreteMeasure)) or (isinstance(m, GridDensity) and m.dim == 1)


def wasserstein2_sq(a, b) -> float:
    """Squared 2-Wasserstein distance."""
    if a.dim != b.dim:
        raise ShapeError(f"dimension mismatch: {a.dim} vs {b.dim}")
    if isinstance(a, GaussianMeasure) and isinstance(b, GaussianMeasure):
        return gaussian_w2sq(a.covariance, b.covariance)
    if a.dim == 1:
        a1 = a if _exact_1d(a) else as_measure1d(a)
        b1 = b if _exact_1d(b) else as_measure1d(b)
        if isinstance(a1, Measure1D) and isinstance(b1, Measure1D) and a1.size == b1.size:
            return float(np.mean((a1.values - b1.values) ** 2))
        return _w2sq_segments(_segments(a1), _segments(b1))
    if isinstance(a, ProductMeasure) and isinstance(b, ProductMeasure):
        if a.dims == b.dims and a.copula == b.copula:
            return float(sum(wasserstein2_sq(fa, fb) for fa, fb in zip(a.factors, b.factors)))
        ga, gb = _block_gaussian(a), _block_gaussian(b)
        if ga is not None and gb is not None:
            return gaussian_w2sq(ga.covariance, gb.covariance)
        if a.copula != b.copula:
            raise RepresentationError("products joined by different copulas have no exact route")
        raise RepresentationError("product measures with misaligned factors")
    if isinstance(a, ProductMeasure) and isinstance(b, GaussianMeasure):
        g = _block_gaussian(a)
        if g is not None:
            return gaussian_w2sq(g.covariance, b.covariance)
    if isinstance(b, ProductMeasure) and isinstance(a, GaussianMeasure):
        return wasserstein2_sq(b, a)
    from .transport import optimal_coupling_discrete

    return optimal_coupling_discrete(to_discrete(a), to_discrete(b)).cost


def wasserstein2(a, b) -> float:
    """2-Wasserstein distance between two measures."""
    return float(np.sqrt(wasserstein2_sq(a, b)))


# ---------------------------------------------------------------------------
# Push-forward
# ---------------------------------------------------------------------------


def push_forward(t: TransportMap, m):
    """Image measure ``t # m``, kept in the family of ``m`` where closed."""
    if not isinstance(t, TransportMap):
        raise RepresentationError(f"not a transport map: {t!r}")
    if t.dim != m.dim:
        raise ShapeError(f"map of dimension {t.dim} applied to measure of dimension {m.dim}")
    if isinstance(m, DiscreteMeasure):
        return DiscreteMeasure.merged(t.apply(m.points), m.weights)
    if isinstance(m, Measure1D):
        if isinstance(t, (Monotone1D, LinearMap)) or (
            isinstance(t, ProductMap) and len(t.factors) == 1
        ):
            return Measure1D(np.maximum.accumulate(t(m.values)), m.kind)
        raise RepresentationError(f"{type(t).__name__} cannot act on a quantile grid")
    if isinstance(m, GaussianMeasure):
        if isinstance(t, LinearMap):
            a = t.matrix
            return GaussianMeasure(a @ m.covariance @ a.T)
        raise RepresentationError("Gaussians are closed only under linear maps")
    if isinstance(m, ProductMeasure):
        if isinstance(t, ProductMap) and t.dims == m.dims:
            return ProductMeasure(
                tuple(push_forward(f, g) for f, g in zip(t.factors, m.factors)), m.copula
            )
        g = _block_gaussian(m)
        if g is not None and isinstance(t, LinearMap):
            return push_forward(t, g)
        raise RepresentationError("product measures need a product map with matching blocks")
    if isinstance(m, GridDensity):
        if m.dim == 1 and isinstance(t, (Monotone1D, LinearMap)):
            q = as_measure1d(m, max(4096, 8 * m.cells[0]))
            return grid_from_quantiles(m.window, m.cells[0], push_forward(t, q))
        images = t.apply(m.centers())
        return GridDensity.from_masses(m.window, deposit_cic(m.window, m.cells, images, m.masses().ravel()))
    raise RepresentationError(f"unsupported measure {type(m).__name__}")


def deposit_cic(window: Compactum, cells, points: np.ndarray, weights: np.ndarray) -> np.ndarray:
    """Cloud-in-cell deposit of weighted points onto the cell-centre lattice.

    Each point's weight is split multilinearly among the (up to ``2**d``)
    surrounding centres; points beyond the outermost centres are clamped.
    """
    cells = tuple(cells)
    d = len(cells)
    h = window.widths / np.asarray(cells)
    f = (points - window.lower) / h - 0.5
    f = np.clip(f, 0.0, np.asarray(cells) - 1.0)
    i0 = np.floor(f).astype(int)
    frac = f - i0
    out = np.zeros(cells)
    for corner in itertools.product((0, 1), repeat=d):
        c = np.asarray(corner)
        idx = np.minimum(i0 + c, np.asarray(cells) - 1)
        w = weights * np.prod(np.where(c == 1, frac, 1.0 - frac), axis=1)
        np.add.at(out, tuple(idx.T), w)
    return out


# ---------------------------------------------------------------------------
# Sampling
# ---------------------------------------------------------------------------


def draw(m, n: int, rng: np.random.Generator) -> np.ndarray:
    """``n`` i.i.d. draws from ``m`` as an ``(n, d)`` array."""
    if n < 0:
        raise DomainError("sample size must be nonnegative")
    d = m.dim
    if n == 0:
        return np.empty((0, d))
    if isinstance(m, Measure1D):
        return _quantile_extended(m, rng.random(n)).reshape(-1, 1)
    if isinstance(m, GaussianMeasure):
        lam, vec = np.linalg.eigh(m.covariance)
        return rng.standard_normal((n, d)) @ (vec * np.sqrt(lam)).T
    if isinstance(m, ProductMeasure):
        if m.copula is not None:
            uu = m.copula.sample(n, rng)
            return np.column_stack(
                [_quantile_extended(as_measure1d(f), uu[:, k]) for k, f in enumerate(m.factors)]
            )
        return np.hstack([draw(f, n, rng) for f in m.factors])
    if isinstance(m, DiscreteMeasure):
        idx = rng.choice(m.size, size=n, p=m.weights)
        return m.points[idx].copy()
    if isinstance(m, GridDensity):
        mass = m.masses().ravel()
        idx = rng.choice(mass.size, size=n, p=mass / mass.sum())
        lower_corner = m.centers()[idx] - 0.5 * m.cell_widths
        return lower_corner + rng.random((n, d)) * m.cell_widths
    raise RepresentationError(f"cannot sample {type(m).__name__}")


def sample(m, n: int, rng_seed: int, window: Compactum | None = None) -> PointPattern:
    """``n`` i.i.d. draws from ``m`` as a point pattern; deterministic per seed.

    The window defaults to the grid's box for :class:`GridDensity`, and to
    the bounding box of the draws otherwise.
    """
    pts = draw(m, n, np.random.default_rng(rng_seed))
    if window is None:
        if isinstance(m, GridDensity):
            window = m.window
        elif pts.shape[0]:
            lo, hi = pts.min(axis=0), pts.max(axis=0)
            pad = np.maximum(1e-9, 1e-9 * np.abs(hi))
            window = Compactum(lo - pad, hi + pad)
        else:
            window = Compactum(-np.ones(m.dim), np.ones(m.dim))
    return PointPattern(window, pts)
