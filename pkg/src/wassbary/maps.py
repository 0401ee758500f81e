"""Transport map representations.

Every map is an immutable dataclass that can be called on an ``(n, d)``
array of points (a 1-D array is accepted when ``dim == 1``) and knows its
exact inverse.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
from scipy.interpolate import RegularGridInterpolator, griddata
from scipy.spatial import cKDTree

from .errors import ConditioningError, DomainError, RepresentationError, ShapeError

__all__ = [
    "TransportMap",
    "Monotone1D",
    "LinearMap",
    "ProductMap",
    "Assignment",
    "GridMap",
    "identity_map",
    "as_points",
]


def as_points(x, dim: int) -> np.ndarray:
    """Return ``x`` as a float ``(n, dim)`` array."""
    arr = np.asarray(x, dtype=float)
    if arr.ndim == 0:
        arr = arr.reshape(1, 1)
    if arr.ndim == 1:
        arr = arr.reshape(-1, 1) if dim == 1 else arr.reshape(1, -1)
    if arr.shape[1] != dim:
        raise ShapeError(f"expected points of dimension {dim}, got {arr.shape[1]}")
    return arr


class TransportMap:
    """Common interface of all map representations."""

    dim: int

    def apply(self, points: np.ndarray) -> np.ndarray:  # pragma: no cover - abstract
        raise NotImplementedError

    def inverse(self) -> "TransportMap":  # pragma: no cover - abstract
        raise NotImplementedError

    def __call__(self, x):
        arr = np.asarray(x, dtype=float)
        flat = self.dim == 1 and arr.ndim <= 1
        out = self.apply(as_points(arr, self.dim))
        if flat:
            return out.reshape(arr.shape)
        return out


@dataclass(frozen=True, eq=False)
class Monotone1D(TransportMap):
    """Piecewise-linear nondecreasing map on the real line.

    Beyond the terminal knots the map continues linearly with the terminal
    slope. A single-knot map is the translation through that knot.
    """

    knots_x: np.ndarray
    knots_y: np.ndarray
    dim: int = field(default=1, init=False)

    def __post_init__(self):
        x = np.asarray(self.knots_x, dtype=float).ravel()
        y = np.asarray(self.knots_y, dtype=float).ravel()
        if x.size == 0 or x.size != y.size:
            raise DomainError("Monotone1D needs matching, nonempty knot arrays")
        if not (np.all(np.isfinite(x)) and np.all(np.isfinite(y))):
            raise DomainError("knots must be finite")
        if np.any(np.diff(x) <= 0):
            raise DomainError("knots_x must be strictly increasing")
        if np.any(np.diff(y) < 0):
            raise DomainError("knots_y must be nondecreasing")
        x.flags.writeable = False
        y.flags.writeable = False
        object.__setattr__(self, "knots_x", x)
        object.__setattr__(self, "knots_y", y)

    @classmethod
    def from_pairs(cls, x, y) -> "Monotone1D":
        """Build a map from (possibly tied) sorted source/target pairs.

        Tied source values are merged by averaging their targets, which is
        the barycentric projection of the monotone coupling.
        """
        x = np.asarray(x, dtype=float).ravel()
        y = np.asarray(y, dtype=float).ravel()
        order = np.argsort(x, kind="stable")
        x, y = x[order], y[order]
        ux, start, counts = np.unique(x, return_index=True, return_counts=True)
        if ux.size == x.size:
            return cls(x, np.maximum.accumulate(y))
        sums = np.add.reduceat(y, start)
        return cls(ux, np.maximum.accumulate(sums / counts))

    @classmethod
    def identity(cls, lo: float = 0.0, hi: float = 1.0) -> "Monotone1D":
        return cls(np.array([lo, hi]), np.array([lo, hi]))

    def apply(self, points):
        x = points[:, 0]
        kx, ky = self.knots_x, self.knots_y
        if kx.size == 1:
            return (x + (ky[0] - kx[0])).reshape(-1, 1)
        out = np.interp(x, kx, ky)
        lo = x < kx[0]
        if np.any(lo):
            slope = (ky[1] - ky[0]) / (kx[1] - kx[0])
            out[lo] = ky[0] + slope * (x[lo] - kx[0])
        hi = x > kx[-1]
        if np.any(hi):
            slope = (ky[-1] - ky[-2]) / (kx[-1] - kx[-2])
            out[hi] = ky[-1] + slope * (x[hi] - kx[-1])
        return out.reshape(-1, 1)

    def inverse(self) -> "Monotone1D":
        if self.knots_x.size > 1 and np.any(np.diff(self.knots_y) <= 0):
            # flat pieces have no single-valued inverse; collapse them
            return Monotone1D.from_pairs(self.knots_y, self.knots_x)
        return Monotone1D(self.knots_y.copy(), self.knots_x.copy())


@dataclass(frozen=True, eq=False)
class LinearMap(TransportMap):
    """x -> A x with A symmetric positive definite (a Brenier map)."""

    matrix: np.ndarray

    def __post_init__(self):
        a = np.atleast_2d(np.asarray(self.matrix, dtype=float))
        if a.ndim != 2 or a.shape[0] != a.shape[1]:
            raise ShapeError("LinearMap needs a square matrix")
        scale = max(1.0, float(np.max(np.abs(a))))
        if np.max(np.abs(a - a.T)) > 1e-8 * scale:
            raise DomainError("LinearMap matrix must be symmetric")
        a = 0.5 * (a + a.T)
        lam = np.linalg.eigvalsh(a)
        if lam[0] <= 0:
            raise ConditioningError(
                f"LinearMap matrix is not positive definite (min eigenvalue {lam[0]:.3e})",
                float(lam[0]),
            )
        a.flags.writeable = False
        object.__setattr__(self, "matrix", a)

    @property
    def dim(self) -> int:
        return self.matrix.shape[0]

    def apply(self, points):
        return points @ self.matrix.T

    def inverse(self) -> "LinearMap":
        return LinearMap(np.linalg.inv(self.matrix))


def identity_map(dim: int) -> LinearMap:
    return LinearMap(np.eye(dim))


@dataclass(frozen=True, eq=False)
class ProductMap(TransportMap):
    """Block-separable map acting factor by factor on coordinate blocks."""

    factors: tuple

    def __post_init__(self):
        factors = tuple(self.factors)
        if not factors:
            raise DomainError("ProductMap needs at least one factor")
        for f in factors:
            if not isinstance(f, TransportMap):
                raise RepresentationError(f"not a transport map: {f!r}")
        object.__setattr__(self, "factors", factors)

    @property
    def dims(self) -> tuple:
        return tuple(f.dim for f in self.factors)

    @property
    def dim(self) -> int:
        return sum(self.dims)

    def apply(self, points):
        out = np.empty_like(points)
        start = 0
        for f in self.factors:
            stop = start + f.dim
            out[:, start:stop] = f.apply(points[:, start:stop])
            start = stop
        return out

    def inverse(self) -> "ProductMap":
        return ProductMap(tuple(f.inverse() for f in self.factors))


@dataclass(frozen=True, eq=False)
class Assignment(TransportMap):
    """Point-to-point table: ``source[k]`` is sent to ``target[k]``.

    ``index`` optionally records, for each source row, the row of the
    target measure it was matched to (``-1`` for averaged images).
    Points off the table are sent with their nearest source point.
    """

    source: np.ndarray
    target: np.ndarray
    index: np.ndarray | None = None

    def __post_init__(self):
        s = np.atleast_2d(np.asarray(self.source, dtype=float))
        t = np.atleast_2d(np.asarray(self.target, dtype=float))
        if s.shape != t.shape:
            raise ShapeError("source and target tables must have equal shape")
        s.flags.writeable = False
        t.flags.writeable = False
        object.__setattr__(self, "source", s)
        object.__setattr__(self, "target", t)
        if self.index is not None:
            idx = np.asarray(self.index, dtype=int).ravel()
            if idx.size != s.shape[0]:
                raise ShapeError("index must have one entry per source point")
            object.__setattr__(self, "index", idx)

    @property
    def dim(self) -> int:
        return self.source.shape[1]

    def apply(self, points):
        _, nearest = cKDTree(self.source).query(points)
        return self.target[np.asarray(nearest, dtype=int)]

    def is_bijection(self) -> bool:
        return np.unique(self.target, axis=0).shape[0] == self.target.shape[0]

    def inverse(self) -> "Assignment":
        if not self.is_bijection():
            raise DomainError("assignment is not injective and cannot be inverted")
        index = None
        if self.index is not None:
            index = np.arange(self.source.shape[0])
        return Assignment(self.target.copy(), self.source.copy(), index)


@dataclass(frozen=True, eq=False)
class GridMap(TransportMap):
    """Displacement field sampled at the cell centres of a box grid.

    ``displacement`` has shape ``(prod(cells), d)`` in C order. Between
    centres the field is interpolated multilinearly, and extrapolated
    linearly outside the outermost centres.
    """

    lower: np.ndarray
    upper: np.ndarray
    cells: tuple
    displacement: np.ndarray

    def __post_init__(self):
        lo = np.asarray(self.lower, dtype=float).ravel()
        hi = np.asarray(self.upper, dtype=float).ravel()
        cells = tuple(int(c) for c in self.cells)
        disp = np.asarray(self.displacement, dtype=float).reshape(int(np.prod(cells)), len(cells))
        object.__setattr__(self, "lower", lo)
        object.__setattr__(self, "upper", hi)
        object.__setattr__(self, "cells", cells)
        object.__setattr__(self, "displacement", disp)

    @property
    def dim(self) -> int:
        return len(self.cells)

    def axes(self):
        return [
            lo + (np.arange(c) + 0.5) * (hi - lo) / c
            for lo, hi, c in zip(self.lower, self.upper, self.cells)
        ]

    def centers(self) -> np.ndarray:
        mesh = np.meshgrid(*self.axes(), indexing="ij")
        return np.stack([m.ravel() for m in mesh], axis=1)

    def apply(self, points):
        axes = self.axes()
        field_ = self.displacement.reshape(*self.cells, self.dim)
        if any(c < 2 for c in self.cells):
            _, nearest = cKDTree(self.centers()).query(points)
            return points + self.displacement[nearest]
        interp = RegularGridInterpolator(
            axes, field_, method="linear", bounds_error=False, fill_value=None
        )
        return points + interp(points)

    def inverse(self) -> "GridMap":
        """Approximate inverse resampled on the same grid.

        The forward images of the centres are scattered; the inverse is
        interpolated from them linearly, with nearest-neighbour fill
        outside their convex hull.
        """
        centers = self.centers()
        images = centers + self.displacement
        back = griddata(images, centers, centers, method="linear")
        missing = np.any(~np.isfinite(back), axis=1)
        if np.any(missing):
            back[missing] = griddata(images, centers, centers[missing], method="nearest")
        return GridMap(self.lower, self.upper, self.cells, back - centers)
