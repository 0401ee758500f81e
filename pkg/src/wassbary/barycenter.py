"""Fréchet means in Wasserstein space by Procrustes gradient descent.

One step solves the N pairwise transport problems from the current
template ``gamma`` to the inputs, averages the maps, and pushes ``gamma``
through ``(1 - tau) * id + tau * mean_i t_i``. With ``tau = 1`` this is
plain Procrustes averaging. The loop stops once the gradient norm
``|| mean_i t_i - id ||_{L2(gamma)}`` drops below the tolerance.

Every family carries its own exact quadrature for the objective and the
gradient: quantile grids in 1-D, traces for Gaussians, atom sums for
discrete measures and grids.
"""

from __future__ import annotations

import logging
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from typing import Callable, NamedTuple

import numpy as np

from .errors import DomainError, RepresentationError
from .maps import Assignment, GridMap, LinearMap, Monotone1D, ProductMap
from .measures import (
    DEFAULT_LEVELS,
    DiscreteMeasure,
    GaussianMeasure,
    GridDensity,
    Measure1D,
    ProductMeasure,
    _quantile_extended,
    deposit_cic,
    grid_from_quantiles,
    midpoint_levels,
    to_discrete,
    wasserstein2_sq,
)
from .transport import (
    DEFAULT_CAP,
    barycentric_images,
    gaussian_map_matrix,
    optimal_coupling_discrete,
)

logger = logging.getLogger(__name__)

ASCENT_SLACK = 1e-12

__all__ = [
    "DescentConfig",
    "TraceRow",
    "DescentTrace",
    "BarycenterResult",
    "frechet_objective",
    "frechet_gradient_norm_sq",
    "karcher_residual",
    "procrustes_step",
    "barycenter",
    "gaussian_barycenter",
    "density_bound",
    "discrete_barycenter_lp",
    "multicoupling_nodes",
]


@dataclass(frozen=True)
class DescentConfig:
    """Stopping rule and step for the Procrustes iteration.

    ``initial=None`` starts from the first input. ``levels`` is the
    quantile resolution used when 1-D grid densities are averaged.
    """

    tolerance: float = 1e-6
    max_iterations: int = 200
    step: float = 1.0
    initial: object = None
    stagnation: float = 1e-14
    levels: int = 4096
    threads: int = 1
    cap: int = DEFAULT_CAP

    def __post_init__(self):
        if not self.tolerance > 0:
            raise DomainError("tolerance must be positive")
        if self.max_iterations < 1:
            raise DomainError("max_iterations must be at least 1")
        if not 0.0 <= self.step <= 1.0:
            raise DomainError("step must lie in [0, 1]")
        if self.threads < 1:
            raise DomainError("threads must be at least 1")


class TraceRow(NamedTuple):
    iteration: int
    objective: float
    grad_sq: float
    delta: float


@dataclass
class DescentTrace:
    """Per-iterate objective, squared gradient norm and objective change.

    Row ``j`` describes the iterate ``gamma_j``; ``delta`` is
    ``F(gamma_j) - F(gamma_{j-1})`` (``nan`` for ``j = 0``). For discrete
    inputs the functional is not differentiable and ``grad_sq`` is the
    formal gradient (``formal_gradient`` is then set).
    """

    rows: list = field(default_factory=list)
    iterations_used: int = 0
    converged: bool = False
    stop_reason: str = ""
    formal_gradient: bool = False

    @property
    def objectives(self) -> np.ndarray:
        return np.array([r.objective for r in self.rows])

    @property
    def grad_sq(self) -> np.ndarray:
        return np.array([r.grad_sq for r in self.rows])

    @property
    def final_grad_norm(self) -> float:
        return float(np.sqrt(self.rows[-1].grad_sq))

    def __len__(self) -> int:
        return len(self.rows)


class BarycenterResult(NamedTuple):
    barycenter: object
    trace: DescentTrace
    maps: list


# ---------------------------------------------------------------------------
# Family evaluators
# ---------------------------------------------------------------------------


class _Evaluation(NamedTuple):
    objective: float
    grad_sq: float
    payload: object


def _pmap(fn, items, threads: int):
    if threads <= 1 or len(items) <= 1:
        return [fn(x) for x in items]
    with ThreadPoolExecutor(max_workers=threads) as pool:
        return list(pool.map(fn, items))


class _OneDimFamily:
    """Quantile-grid laws on the line; maps are quantile couplings."""

    formal = False

    def __init__(self, inputs, cfg):
        sizes = {m.size for m in inputs}
        self.size = sizes.pop() if len(sizes) == 1 else max(max(m.size for m in inputs), DEFAULT_LEVELS)
        self.q = np.stack([self.regrid(m).values for m in inputs])

    def regrid(self, m: Measure1D) -> Measure1D:
        if m.size == self.size:
            return m
        return Measure1D(_quantile_extended(m, midpoint_levels(self.size)))

    def evaluate(self, gamma: Measure1D, threads: int) -> _Evaluation:
        g = self.regrid(gamma).values
        diff = self.q - g
        objective = float(np.mean(diff**2, axis=1).sum() / (2 * self.q.shape[0]))
        mean_map = np.mean(self.q, axis=0)
        grad_sq = float(np.mean((mean_map - g) ** 2))
        return _Evaluation(objective, grad_sq, (g, mean_map))

    def step(self, gamma, ev: _Evaluation, tau: float) -> Measure1D:
        g, mean_map = ev.payload
        if tau == 1.0:
            return Measure1D(mean_map)
        return Measure1D(np.maximum.accumulate((1.0 - tau) * g + tau * mean_map))

    def maps(self, gamma, ev: _Evaluation) -> list:
        g, _ = ev.payload
        return [Monotone1D.from_pairs(g, qi) for qi in self.q]

    def nodes(self, gamma, ev):
        g, _ = ev.payload
        w = np.full(g.size, 1.0 / g.size)
        return g.reshape(-1, 1), w, [qi.reshape(-1, 1) for qi in self.q]


class _GaussianFamily:
    """Centred Gaussians; every map is a symmetric positive-definite matrix."""

    formal = False

    def __init__(self, inputs, cfg):
        self.covs = [m.covariance for m in inputs]

    def evaluate(self, gamma: GaussianMeasure, threads: int) -> _Evaluation:
        g = gamma.covariance
        eye = np.eye(g.shape[0])
        ts = _pmap(lambda s: gaussian_map_matrix(g, s), self.covs, threads)
        # d^2(gamma, mu_i) = tr[(T_i - I) G (T_i - I)]
        objective = sum(float(np.trace((t - eye) @ g @ (t - eye))) for t in ts) / (2 * len(ts))
        mean_map = np.mean(ts, axis=0)
        grad_sq = float(np.trace((mean_map - eye) @ g @ (mean_map - eye)))
        return _Evaluation(objective, max(grad_sq, 0.0), (g, ts, mean_map))

    def step(self, gamma, ev: _Evaluation, tau: float) -> GaussianMeasure:
        g, _, mean_map = ev.payload
        a = (1.0 - tau) * np.eye(g.shape[0]) + tau * mean_map
        return GaussianMeasure(a @ g @ a)

    def maps(self, gamma, ev: _Evaluation) -> list:
        return [LinearMap(t) for t in ev.payload[1]]


class _DiscreteFamily:
    """Weighted atoms; maps are barycentric projections of exact couplings."""

    formal = True

    def __init__(self, inputs, cfg):
        self.inputs = list(inputs)
        self.cap = cfg.cap

    def atoms(self, gamma):
        return gamma

    def evaluate(self, gamma, threads: int) -> _Evaluation:
        src = self.atoms(gamma)
        couplings = _pmap(
            lambda mu: optimal_coupling_discrete(src, self.atoms(mu), self.cap), self.inputs, threads
        )
        objective = sum(c.cost for c in couplings) / (2 * len(couplings))
        images = [barycentric_images(c) for c in couplings]
        mean_map = np.mean(images, axis=0)
        grad_sq = float(np.sum(src.weights * np.sum((mean_map - src.points) ** 2, axis=1)))
        return _Evaluation(objective, grad_sq, (src, couplings, images, mean_map))

    def step(self, gamma, ev: _Evaluation, tau: float):
        src, _, _, mean_map = ev.payload
        moved = mean_map if tau == 1.0 else (1.0 - tau) * src.points + tau * mean_map
        return DiscreteMeasure.merged(moved, src.weights)

    def maps(self, gamma, ev: _Evaluation) -> list:
        src, couplings, images, _ = ev.payload
        out = []
        for c, img in zip(couplings, images):
            perm = c.permutation()
            idx = perm if perm is not None else np.full(src.size, -1)
            out.append(Assignment(src.points, img, idx))
        return out

    def nodes(self, gamma, ev):
        src, _, images, _ = ev.payload
        return src.points, src.weights, images


class _GridFamily(_DiscreteFamily):
    """Grid densities in d >= 2, coupled through their cell centres."""

    formal = False

    def atoms(self, gamma):
        return to_discrete(gamma)

    def step(self, gamma: GridDensity, ev: _Evaluation, tau: float) -> GridDensity:
        src, _, _, mean_map = ev.payload
        moved = mean_map if tau == 1.0 else (1.0 - tau) * src.points + tau * mean_map
        masses = deposit_cic(gamma.window, gamma.cells, moved, src.weights)
        return GridDensity.from_masses(gamma.window, masses)

    def maps(self, gamma: GridDensity, ev: _Evaluation) -> list:
        src, _, images, _ = ev.payload
        centers = gamma.centers()
        occupied = gamma.masses().ravel() > 0
        out = []
        for img in images:
            disp = np.zeros_like(centers)
            disp[occupied] = img - src.points
            if not np.all(occupied):
                from scipy.spatial import cKDTree

                _, nearest = cKDTree(centers[occupied]).query(centers[~occupied])
                disp[~occupied] = disp[occupied][nearest]
            out.append(GridMap(gamma.window.lower, gamma.window.upper, gamma.cells, disp))
        return out


class _ProductFamily:
    """Factor-wise iteration for products and common-copula laws."""

    formal = False

    def __init__(self, inputs, cfg):
        first = inputs[0]
        for m in inputs:
            if m.dims != first.dims or m.copula != first.copula:
                raise RepresentationError("product inputs must share factor dimensions and copula")
        self.copula = first.copula
        self.subs = [
            _make_family([m.factors[k] for m in inputs], cfg) for k in range(len(first.factors))
        ]

    def evaluate(self, gamma: ProductMeasure, threads: int) -> _Evaluation:
        evs = [sub.evaluate(f, threads) for sub, f in zip(self.subs, gamma.factors)]
        return _Evaluation(sum(e.objective for e in evs), sum(e.grad_sq for e in evs), evs)

    def step(self, gamma, ev: _Evaluation, tau: float) -> ProductMeasure:
        factors = tuple(
            sub.step(f, e, tau) for sub, f, e in zip(self.subs, gamma.factors, ev.payload)
        )
        return ProductMeasure(factors, self.copula)

    def maps(self, gamma, ev: _Evaluation) -> list:
        per_factor = [sub.maps(f, e) for sub, f, e in zip(self.subs, gamma.factors, ev.payload)]
        return [ProductMap(tuple(fm[i] for fm in per_factor)) for i in range(len(per_factor[0]))]


def _make_family(inputs, cfg):
    kinds = {type(m) for m in inputs}
    if len(kinds) != 1:
        raise RepresentationError(
            "mixed measure families; convert explicitly with the measures module"
        )
    kind = kinds.pop()
    dims = {m.dim for m in inputs}
    if len(dims) != 1:
        raise RepresentationError("inputs have different dimensions")
    if kind is Measure1D:
        return _OneDimFamily(inputs, cfg)
    if kind is GaussianMeasure:
        return _GaussianFamily(inputs, cfg)
    if kind is ProductMeasure:
        return _ProductFamily(inputs, cfg)
    if kind is DiscreteMeasure:
        return _DiscreteFamily(inputs, cfg)
    if kind is GridDensity:
        if inputs[0].dim == 1:
            raise AssertionError("1-D grids are handled through their quantile form")
        return _GridFamily(inputs, cfg)
    raise RepresentationError(f"no barycenter family for {kind.__name__}")


def _grid1d_to_quantiles(measures, levels: int) -> list:
    from .measures import _segments, _segments_quantile

    lv = midpoint_levels(levels)
    return [Measure1D(_segments_quantile(_segments(m), lv)) for m in measures]


def _is_grid1d(inputs) -> bool:
    return all(isinstance(m, GridDensity) and m.dim == 1 for m in inputs)


def _check_inputs(inputs) -> list:
    inputs = list(inputs)
    if not inputs:
        raise DomainError("need at least one input measure")
    return inputs


# ---------------------------------------------------------------------------
# Public operations
# ---------------------------------------------------------------------------


def frechet_objective(gamma, inputs) -> float:
    """F(gamma) = (1/2N) sum_i d^2(gamma, mu_i)."""
    inputs = _check_inputs(inputs)
    return sum(wasserstein2_sq(gamma, m) for m in inputs) / (2 * len(inputs))


def _evaluate(gamma, inputs, cfg: DescentConfig):
    if _is_grid1d(inputs) and isinstance(gamma, GridDensity):
        qs = _grid1d_to_quantiles(inputs, cfg.levels)
        (g,) = _grid1d_to_quantiles([gamma], cfg.levels)
        fam = _OneDimFamily(qs, cfg)
        return fam, g, fam.evaluate(g, cfg.threads)
    fam = _make_family(inputs, cfg)
    _make_family([gamma, inputs[0]], cfg)
    return fam, gamma, fam.evaluate(gamma, cfg.threads)


def frechet_gradient_norm_sq(gamma, inputs, cfg: DescentConfig | None = None) -> float:
    """|| (1/N) sum_i t_gamma^{mu_i} - id ||^2 in L2(gamma)."""
    inputs = _check_inputs(inputs)
    _, _, ev = _evaluate(gamma, inputs, cfg or DescentConfig())
    return ev.grad_sq


def karcher_residual(gamma, inputs, cfg: DescentConfig | None = None) -> float:
    return float(np.sqrt(frechet_gradient_norm_sq(gamma, inputs, cfg)))


def procrustes_step(gamma, inputs, tau: float = 1.0, cfg: DescentConfig | None = None):
    """Push ``gamma`` through ``(1 - tau) id + (tau / N) sum_i t_gamma^{mu_i}``."""
    if not 0.0 <= tau <= 1.0:
        raise DomainError("step must lie in [0, 1]")
    inputs = _check_inputs(inputs)
    cfg = cfg or DescentConfig()
    fam, g, ev = _evaluate(gamma, inputs, cfg)
    out = fam.step(g, ev, tau)
    if isinstance(gamma, GridDensity) and gamma.dim == 1:
        return grid_from_quantiles(gamma.window, gamma.cells[0], out)
    return out


def barycenter(
    inputs,
    cfg: DescentConfig | None = None,
    callback: Callable | None = None,
) -> BarycenterResult:
    """Fréchet mean of ``inputs`` by Procrustes gradient descent.

    Returns the final template, the descent trace and the maps from the
    template to every input. ``callback(j, gamma_j)`` is invoked on every
    iterate, ``gamma_0`` included. Running out of iterations is reported
    through ``trace.converged`` rather than raised.
    """
    inputs = _check_inputs(inputs)
    cfg = cfg or DescentConfig()
    grid1d = _is_grid1d(inputs)
    if grid1d:
        template = inputs[0] if cfg.initial is None else cfg.initial
        work_inputs = _grid1d_to_quantiles(inputs, cfg.levels)
        gamma = _grid1d_to_quantiles([template], cfg.levels)[0]
    else:
        work_inputs = inputs
        gamma = inputs[0] if cfg.initial is None else cfg.initial
    fam = _make_family(work_inputs, cfg)
    _make_family([gamma, work_inputs[0]], cfg)

    trace = DescentTrace(formal_gradient=fam.formal)
    ev = fam.evaluate(gamma, cfg.threads)
    trace.rows.append(TraceRow(0, ev.objective, ev.grad_sq, float("nan")))
    if callback is not None:
        callback(0, gamma)
    j = 0
    while True:
        if np.sqrt(ev.grad_sq) < cfg.tolerance:
            trace.converged, trace.stop_reason = True, "gradient"
            break
        if (
            j >= 1
            and abs(trace.rows[-1].delta) < cfg.stagnation
            and trace.rows[-1].grad_sq >= trace.rows[-2].grad_sq
        ):
            # F has hit rounding level and the gradient is no longer shrinking
            trace.stop_reason = "stagnation"
            break
        if j >= cfg.max_iterations:
            trace.stop_reason = "max_iterations"
            break
        candidate = fam.step(gamma, ev, cfg.step)
        cand_ev = fam.evaluate(candidate, cfg.threads)
        prev = ev.objective
        if cand_ev.objective > prev + ASCENT_SLACK * max(1.0, abs(prev)):
            # re-gridding can undo a descent step; keep the better iterate
            trace.stop_reason = "ascent"
            break
        gamma, ev = candidate, cand_ev
        j += 1
        trace.rows.append(TraceRow(j, ev.objective, ev.grad_sq, ev.objective - prev))
        if callback is not None:
            callback(j, gamma)
        logger.debug("iteration %d: F=%.12g |F'|^2=%.3e", j, ev.objective, ev.grad_sq)
    trace.iterations_used = j
    maps = fam.maps(gamma, ev)
    if grid1d:
        template = inputs[0] if cfg.initial is None else cfg.initial
        gamma = grid_from_quantiles(template.window, template.cells[0], gamma)
    return BarycenterResult(gamma, trace, maps)


def gaussian_barycenter(inputs, cfg: DescentConfig | None = None):
    """Fréchet mean of centred Gaussians, iterating on covariance matrices."""
    inputs = _check_inputs(inputs)
    if not all(isinstance(m, GaussianMeasure) for m in inputs):
        raise RepresentationError("gaussian_barycenter needs Gaussian inputs")
    result = barycenter(inputs, cfg)
    return result.barycenter, result.trace


def density_bound(inputs) -> float:
    """Bound on the density of every Procrustes iterate.

    ``min(N**(d-1) * max_i ||g_i||_inf, N**d * min_i ||g_i||_inf)`` where
    ``g_i`` are the input densities.
    """
    inputs = list(inputs)
    if not inputs:
        raise DomainError("need at least one density")
    n = len(inputs)
    d = inputs[0].dim
    sups = [m.sup_norm() for m in inputs]
    return float(min(n ** (d - 1) * max(sups), n**d * min(sups)))


def multicoupling_nodes(gamma, inputs, cfg: DescentConfig | None = None):
    """Quadrature nodes of ``gamma`` with the images under each map.

    Returns ``(nodes, weights, images)``, or ``None`` for Gaussian/product
    families where integrals are evaluated in closed form instead.
    """
    cfg = cfg or DescentConfig()
    fam, g, ev = _evaluate(gamma, list(inputs), cfg)
    if hasattr(fam, "nodes"):
        return fam.nodes(g, ev)
    return None


MULTIMARGINAL_CAP = 20000


def discrete_barycenter_lp(inputs, cap: int = MULTIMARGINAL_CAP) -> DiscreteMeasure:
    """Exact Fréchet mean of discrete measures via the multi-marginal LP.

    Solves for the multicoupling of ``inputs`` minimising summed pairwise
    squared distances and pushes it through the coordinate mean. Only
    feasible for tiny instances: the LP has ``prod(sizes)`` variables.
    """
    from scipy.optimize import linprog
    from scipy.sparse import coo_matrix

    inputs = _check_inputs(inputs)
    if not all(isinstance(m, DiscreteMeasure) for m in inputs):
        raise RepresentationError("discrete_barycenter_lp needs discrete inputs")
    sizes = [m.size for m in inputs]
    total = int(np.prod(sizes))
    if total > cap:
        raise DomainError(f"multi-marginal LP needs {total} variables, cap is {cap}")
    idx = np.indices(sizes).reshape(len(sizes), -1).T
    pts = np.stack([m.points[idx[:, i]] for i, m in enumerate(inputs)])
    mean = pts.mean(axis=0)
    # sum_{i<j} |x_i - x_j|^2 = N * sum_i |x_i - mean|^2
    cost = len(inputs) * np.sum((pts - mean) ** 2, axis=(0, 2))
    rows, offset = [], 0
    for i, s in enumerate(sizes):
        rows.append(offset + idx[:, i])
        offset += s
    r = np.concatenate(rows)
    c = np.tile(np.arange(total), len(sizes))
    a_eq = coo_matrix((np.ones(r.size), (r, c)), shape=(offset, total)).tocsr()
    b_eq = np.concatenate([m.weights for m in inputs])
    res = linprog(cost, A_eq=a_eq, b_eq=b_eq, bounds=(0, None), method="highs-ds")
    if res.status != 0:
        raise ArithmeticError(f"multi-marginal LP failed: {res.message}")
    keep = res.x > 1e-12
    w = res.x[keep] / res.x[keep].sum()
    return DiscreteMeasure.merged(mean[keep], w, warn=False)
