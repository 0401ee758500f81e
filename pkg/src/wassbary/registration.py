"""Multicouplings routed through the Fréchet mean, and pattern registration.

If ``gamma`` is the Fréchet mean of ``mu_1..mu_N`` and ``t_i`` are the
optimal maps from ``gamma``, then ``(t_1(Z), ..., t_N(Z))`` with
``Z ~ gamma`` minimises ``sum_{i<j} E|X_i - X_j|^2`` among all couplings
of the ``mu_i``.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .barycenter import (
    MULTIMARGINAL_CAP,
    BarycenterResult,
    DescentConfig,
    DescentTrace,
    _grid1d_to_quantiles,
    _is_grid1d,
    barycenter,
    discrete_barycenter_lp,
)
from .errors import DomainError, RepresentationError
from .maps import Assignment, GridMap, LinearMap, Monotone1D, ProductMap, TransportMap
from .measures import (
    Compactum,
    DiscreteMeasure,
    GaussianMeasure,
    GridDensity,
    Measure1D,
    PointPattern,
    ProductMeasure,
    grid_from_quantiles,
)

__all__ = [
    "Multicoupling",
    "multicoupling",
    "map_gram",
    "invert_map",
    "register_pattern",
    "registration_error",
    "interior_probes",
]


@dataclass(frozen=True)
class Multicoupling:
    """Barycenter, the maps out of it, and the summed pairwise cost.

    ``objective`` is ``(1/2N) sum_i int |t_i - id|^2 d gamma`` and
    ``functional`` is ``(1/2N) int sum_i |t_i - mean_j t_j|^2 d gamma``;
    the two agree at a Karcher mean.
    """

    barycenter: object
    maps: list
    pairwise_cost: float
    objective: float
    functional: float
    trace: DescentTrace

    @property
    def size(self) -> int:
        return len(self.maps)


def _node_gram(nodes, weights, images) -> np.ndarray:
    flat = np.stack([np.asarray(im, dtype=float).reshape(len(weights), -1) for im in images])
    return np.einsum("k,ikd,jkd->ij", weights, flat, flat)


def map_gram(gamma, maps) -> np.ndarray:
    """Matrix ``K_ij = int <t_i(z), t_j(z)> d gamma(z)`` by family quadrature.

    ``maps`` may include the identity to obtain cross terms with ``z``.
    """
    if isinstance(gamma, GaussianMeasure):
        mats = [m.matrix for m in maps]
        g = gamma.covariance
        return np.array([[float(np.trace(a @ g @ b.T)) for b in mats] for a in mats])
    if isinstance(gamma, ProductMeasure):
        # coordinates split into blocks, so the inner product is a block sum
        total = 0.0
        for k, factor in enumerate(gamma.factors):
            total = total + map_gram(factor, [m.factors[k] for m in maps])
        return total
    if isinstance(gamma, Measure1D):
        w = np.full(gamma.size, 1.0 / gamma.size)
        return _node_gram(gamma.values, w, [m(gamma.values) for m in maps])
    if isinstance(gamma, DiscreteMeasure):
        return _node_gram(gamma.points, gamma.weights, [m(gamma.points) for m in maps])
    if isinstance(gamma, GridDensity):
        masses = gamma.masses().ravel()
        occ = masses > 0
        centers = gamma.centers()[occ]
        return _node_gram(centers, masses[occ], [m(centers) for m in maps])
    raise RepresentationError(f"no quadrature for {type(gamma).__name__}")


def _identity_like(m: TransportMap) -> TransportMap:
    if isinstance(m, LinearMap):
        return LinearMap(np.eye(m.dim))
    if isinstance(m, ProductMap):
        return ProductMap(tuple(_identity_like(f) for f in m.factors))
    if isinstance(m, Monotone1D):
        return Monotone1D.identity()
    if isinstance(m, Assignment):
        return Assignment(m.source, m.source)
    if isinstance(m, GridMap):
        return GridMap(m.lower, m.upper, m.cells, np.zeros_like(m.displacement))
    raise RepresentationError(f"unsupported map {type(m).__name__}")


def multicoupling(inputs, cfg: DescentConfig | None = None) -> Multicoupling:
    """Optimal multicoupling of ``inputs`` through their Fréchet mean.

    For small discrete inputs the Procrustes iteration is started from the
    exact Fréchet mean given by the multi-marginal LP, since discrete
    Procrustes limits are in general only stationary points.
    """
    inputs = list(inputs)
    if len(inputs) < 2:
        raise DomainError("a multicoupling needs at least two measures")
    cfg = cfg or DescentConfig()
    grid1d = _is_grid1d(inputs)
    work = _grid1d_to_quantiles(inputs, cfg.levels) if grid1d else inputs
    if (
        cfg.initial is None
        and all(isinstance(m, DiscreteMeasure) for m in work)
        and np.prod([m.size for m in work]) <= MULTIMARGINAL_CAP
    ):
        cfg = DescentConfig(**{**cfg.__dict__, "initial": discrete_barycenter_lp(work)})
    elif grid1d and isinstance(cfg.initial, GridDensity):
        (init,) = _grid1d_to_quantiles([cfg.initial], cfg.levels)
        cfg = DescentConfig(**{**cfg.__dict__, "initial": init})
    result: BarycenterResult = barycenter(work, cfg)
    gamma, maps = result.barycenter, result.maps

    n = len(maps)
    gram = map_gram(gamma, [_identity_like(maps[0])] + list(maps))
    diag = np.diag(gram)
    # int |t_i - t_j|^2 = K_ii + K_jj - 2 K_ij
    pair = diag[1:, None] + diag[None, 1:] - 2.0 * gram[1:, 1:]
    pairwise_cost = float(np.sum(np.triu(pair, 1)))
    to_id = diag[1:] + diag[0] - 2.0 * gram[0, 1:]
    objective = float(np.sum(to_id) / (2 * n))
    functional = float((np.sum(diag[1:]) - np.sum(gram[1:, 1:]) / n) / (2 * n))

    if grid1d:
        gamma = grid_from_quantiles(inputs[0].window, inputs[0].cells[0], gamma)
    return Multicoupling(gamma, maps, pairwise_cost, objective, functional, result.trace)


def invert_map(t: TransportMap) -> TransportMap:
    """Exact inverse within the map's own family."""
    return t.inverse()


def register_pattern(p: PointPattern, t_inv: TransportMap) -> PointPattern:
    """Map every point of ``p`` through ``t_inv``; the window is kept.

    Images leaving the window by rounding are clipped back onto it.
    """
    if p.size == 0:
        return PointPattern(p.window, p.points.copy())
    pts = t_inv(p.points)
    return PointPattern(p.window, np.clip(pts, p.window.lower, p.window.upper))


def interior_probes(window: Compactum, per_axis: int = 50, shrink: float = 0.1) -> np.ndarray:
    """Probe grid on the sub-box with ``shrink`` of each side removed."""
    return window.shrink(shrink).probe_grid(per_axis)


def registration_error(est: TransportMap, truth: TransportMap, probes) -> float:
    """Largest pointwise discrepancy ``|est(x) - truth(x)|`` over ``probes``.

    ``probes`` is an ``(P, d)`` array or a window, in which case the
    default interior grid is used.
    """
    if isinstance(probes, Compactum):
        probes = interior_probes(probes)
    pts = np.asarray(probes, dtype=float)
    if pts.ndim == 1:
        pts = pts.reshape(-1, est.dim)
    diff = est(pts) - truth(pts)
    return float(np.max(np.linalg.norm(diff.reshape(len(pts), -1), axis=1)))
