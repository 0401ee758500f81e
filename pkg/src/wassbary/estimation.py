"""Warped point processes, kernel smoothing, and the consistency harness.

Model: ``Pi_i`` are Poisson processes with mean measure ``tau * lambda`` on
a box ``K``; the observations are ``T_i # Pi_i`` for i.i.d. random
increasing warps ``T_i`` whose mean is the identity. The structural mean
``lambda`` is estimated by the Fréchet mean of kernel-smoothed
observations, and the warps by the Procrustes maps out of that mean.
"""

from __future__ import annotations

import logging
import math
from dataclasses import dataclass, field
from typing import Callable

import numpy as np
from scipy.special import ndtr

from .barycenter import DescentConfig, DescentTrace, barycenter
from .errors import DomainError, WassbaryError
from .maps import TransportMap
from .measures import (
    Compactum,
    GridDensity,
    PointPattern,
    draw,
    wasserstein2_sq,
)
from .registration import interior_probes, register_pattern, registration_error

logger = logging.getLogger(__name__)

__all__ = [
    "KernelSpec",
    "WarpFamily",
    "SeparableWarp",
    "WarpMap",
    "ExperimentDesign",
    "PopulationEstimate",
    "default_bandwidth",
    "default_cells",
    "default_intensity",
    "sample_warp",
    "sample_poisson",
    "simulate_patterns",
    "kernel_estimate",
    "smoothing_constant",
    "smoothing_distance_sq",
    "estimate_population",
    "run_consistency_experiment",
    "EXPERIMENT_COLUMNS",
]


# ---------------------------------------------------------------------------
# Kernels
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class KernelSpec:
    """Isotropic Gaussian kernel with total second moment ``bandwidth**2``.

    The unit kernel has covariance ``I / d`` so that ``int |z|^2 psi = 1``.
    """

    bandwidth: float
    shape: str = "gaussian"

    def __post_init__(self):
        if not (self.bandwidth > 0 and math.isfinite(self.bandwidth)):
            raise DomainError("bandwidth must be positive and finite")
        if self.shape != "gaussian":
            raise DomainError(f"unknown kernel shape {self.shape!r}")

    def profile(self, r: float, dim: int) -> float:
        """Unit kernel ``psi`` evaluated at any point of norm ``r``."""
        var = 1.0 / dim
        return float((2 * math.pi * var) ** (-dim / 2) * math.exp(-(r**2) / (2 * var)))


def default_bandwidth(tau: float, dim: int = 1) -> float:
    """``tau**(-1/(d+4))`` clipped to ``(0, 1]``."""
    if tau <= 0:
        return 1.0
    return float(min(1.0, tau ** (-1.0 / (dim + 4))))


def default_cells(dim: int) -> int:
    return 128 if dim <= 2 else 48


def smoothing_constant(spec: KernelSpec, window: Compactum) -> float:
    """``1 / (psi(d_K) * Leb(K))``, the constant in the smoothing bound."""
    value = spec.profile(window.diameter, window.dim) * window.volume
    if not value > 0:
        raise ArithmeticError("kernel vanishes at the window diameter; constant is infinite")
    return 1.0 / value


def _axis_masses(x: np.ndarray, edges: np.ndarray, std: float) -> np.ndarray:
    """Normalised per-point kernel masses of every cell along one axis."""
    cdf = ndtr((edges[None, :] - x[:, None]) / std)
    cells = np.diff(cdf, axis=1)
    inside = cdf[:, -1] - cdf[:, 0]
    return cells / inside[:, None]


def kernel_estimate(p: PointPattern, spec: KernelSpec, cells=None) -> GridDensity:
    """Kernel-smoothed, restricted and renormalised intensity estimate.

    Each point's kernel is cut to the window and scaled to unit mass there;
    the estimate is their average, integrated exactly over each cell. An
    empty pattern yields the uniform density on the window.
    """
    window = p.window
    d = window.dim
    cells = np.broadcast_to(np.asarray(default_cells(d) if cells is None else cells, int), (d,))
    cells = tuple(int(c) for c in cells)
    if p.size == 0:
        return GridDensity.uniform(window, cells)
    std = spec.bandwidth / math.sqrt(d)
    per_axis = [
        _axis_masses(p.points[:, k], np.linspace(window.lower[k], window.upper[k], cells[k] + 1), std)
        for k in range(d)
    ]
    # the Gaussian kernel factorises over axes, so each point's cell masses
    # form an outer product
    masses = per_axis[0]
    for ax in per_axis[1:]:
        masses = (masses[..., None] * ax.reshape(ax.shape[0], *([1] * (masses.ndim - 1)), -1))
    masses = masses.sum(axis=0) / p.size
    return GridDensity.from_masses(window, masses)


def smoothing_distance_sq(p: PointPattern, spec: KernelSpec, cells=None) -> float:
    """``d^2`` between the kernel estimate and the pattern's empirical law."""
    return wasserstein2_sq(kernel_estimate(p, spec, cells), p.empirical())


# ---------------------------------------------------------------------------
# Warps
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class WarpFamily:
    """Coordinatewise sine warps on a box.

    On the box rescaled to ``[0, 1]^d``, axis ``k`` is deformed by
    ``x - a sin(pi j_k x) / (pi |j_k|)`` with ``j_k`` uniform on
    ``{-J..-1, 1..J}``. Any ``0 <= a <= 1`` keeps the map increasing;
    ``a = 0`` is the identity.
    """

    window: Compactum
    max_frequency: int = 2
    amplitude: float = 0.5

    def __post_init__(self):
        if self.max_frequency < 1:
            raise DomainError("max_frequency must be at least 1")
        if not 0.0 <= self.amplitude <= 1.0:
            raise DomainError("amplitude outside [0, 1] gives non-monotone warps")

    def to_json(self) -> dict:
        return {
            "lower": self.window.lower.tolist(),
            "upper": self.window.upper.tolist(),
            "max_frequency": self.max_frequency,
            "amplitude": self.amplitude,
        }


@dataclass(frozen=True, eq=False)
class SeparableWarp(TransportMap):
    """One member of :class:`WarpFamily`, or its inverse when ``inverted``."""

    lower: np.ndarray
    upper: np.ndarray
    frequencies: tuple
    amplitude: float
    inverted: bool = False

    def __post_init__(self):
        object.__setattr__(self, "lower", np.asarray(self.lower, dtype=float))
        object.__setattr__(self, "upper", np.asarray(self.upper, dtype=float))
        object.__setattr__(self, "frequencies", tuple(int(j) for j in self.frequencies))

    @property
    def dim(self) -> int:
        return len(self.frequencies)

    def _unit_forward(self, u: np.ndarray, j: int) -> np.ndarray:
        if j == 0 or self.amplitude == 0:
            return u
        return u - self.amplitude * np.sin(np.pi * j * u) / (np.pi * abs(j))

    def _unit_inverse(self, v: np.ndarray, j: int) -> np.ndarray:
        if j == 0 or self.amplitude == 0:
            return v
        # bisection is safe: the forward map is increasing with the
        # displacement bounded by a / (pi |j|)
        span = self.amplitude / (np.pi * abs(j))
        lo, hi = v - span, v + span
        for _ in range(60):
            mid = 0.5 * (lo + hi)
            below = self._unit_forward(mid, j) < v
            lo = np.where(below, mid, lo)
            hi = np.where(below, hi, mid)
        return 0.5 * (lo + hi)

    def apply(self, points):
        width = self.upper - self.lower
        u = (points - self.lower) / width
        out = np.empty_like(u)
        for k, j in enumerate(self.frequencies):
            f = self._unit_inverse if self.inverted else self._unit_forward
            out[:, k] = f(u[:, k], j)
        return self.lower + out * width

    def inverse(self) -> "SeparableWarp":
        return SeparableWarp(
            self.lower, self.upper, self.frequencies, self.amplitude, not self.inverted
        )


@dataclass(frozen=True)
class WarpMap:
    forward: TransportMap
    inverse: TransportMap
    family_params: dict


def sample_warp(family: WarpFamily, rng_seed) -> WarpMap:
    """Draw one warp; frequencies are uniform on ``±{1..J}`` per axis."""
    rng = np.random.default_rng(rng_seed)
    mags = rng.integers(1, family.max_frequency + 1, size=family.window.dim)
    signs = rng.choice([-1, 1], size=family.window.dim)
    freqs = tuple(int(s * m) for s, m in zip(signs, mags))
    fwd = SeparableWarp(family.window.lower, family.window.upper, freqs, family.amplitude)
    params = {**family.to_json(), "frequencies": list(freqs)}
    return WarpMap(fwd, fwd.inverse(), params)


# ---------------------------------------------------------------------------
# Point processes
# ---------------------------------------------------------------------------


def sample_poisson(intensity, tau: float, window: Compactum, rng_seed) -> PointPattern:
    """Poisson process with mean measure ``tau * intensity`` on ``window``."""
    if tau < 0:
        raise DomainError("tau must be nonnegative")
    rng = np.random.default_rng(rng_seed)
    count = int(rng.poisson(tau)) if tau > 0 else 0
    pts = draw(intensity, count, rng)
    return PointPattern(window, np.clip(pts, window.lower, window.upper))


def default_intensity(window: Compactum | None = None, cells: int = 512) -> GridDensity:
    """Strictly positive bimodal mixture on ``[0, 1]`` (or ``window``)."""
    window = window or Compactum.unit(1)

    def fn(x):
        u = (x - window.lower) / window.widths
        bumps = 0.6 * np.exp(-0.5 * ((u - 0.3) / 0.08) ** 2) + 0.4 * np.exp(
            -0.5 * ((u - 0.7) / 0.1) ** 2
        )
        return 0.2 + np.prod(bumps, axis=1) if u.shape[1] > 1 else 0.2 + bumps[:, 0]

    return GridDensity.from_function(window, cells, fn)


@dataclass(frozen=True)
class SimulatedData:
    truth: list  # unwarped patterns Pi_i
    observed: list  # warped patterns T_i # Pi_i
    warps: list


def simulate_patterns(intensity, family: WarpFamily, n: int, tau: float, seed) -> SimulatedData:
    """``n`` warped Poisson patterns with independent child seeds."""
    children = np.random.SeedSequence(seed).spawn(2 * n)
    truth, observed, warps = [], [], []
    for i in range(n):
        pi = sample_poisson(intensity, tau, family.window, children[2 * i])
        w = sample_warp(family, children[2 * i + 1])
        truth.append(pi)
        observed.append(register_pattern(pi, w.forward))
        warps.append(w)
    return SimulatedData(truth, observed, warps)


# ---------------------------------------------------------------------------
# Estimation
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class PopulationEstimate:
    intensity: GridDensity
    maps: list  # estimated warps T_i, from the mean to each smoothed pattern
    inverses: list
    smoothed: list
    trace: DescentTrace
    bandwidth: float


def estimate_population(
    patterns,
    bandwidth: float | Callable | None = None,
    cells=None,
    cfg: DescentConfig | None = None,
) -> PopulationEstimate:
    """Smooth every pattern, average them in Wasserstein space, read off warps.

    ``bandwidth`` is a number, a rule ``tau -> sigma`` applied to the mean
    pattern size, or ``None`` for :func:`default_bandwidth`.
    """
    patterns = list(patterns)
    if not patterns:
        raise DomainError("need at least one pattern")
    window = patterns[0].window
    if any(p.window != window for p in patterns):
        raise DomainError("patterns must share one window")
    mean_size = float(np.mean([p.size for p in patterns]))
    if bandwidth is None:
        sigma = default_bandwidth(mean_size, window.dim)
    elif callable(bandwidth):
        sigma = float(bandwidth(mean_size))
    else:
        sigma = float(bandwidth)
    spec = KernelSpec(sigma)
    smoothed = [kernel_estimate(p, spec, cells) for p in patterns]
    lam_hat, trace, maps = barycenter(smoothed, cfg or DescentConfig())
    inverses = [m.inverse() for m in maps]
    return PopulationEstimate(lam_hat, maps, inverses, smoothed, trace, sigma)


# ---------------------------------------------------------------------------
# Consistency experiment
# ---------------------------------------------------------------------------

EXPERIMENT_COLUMNS = (
    "n",
    "tau",
    "sigma",
    "replicate",
    "d_lambda",
    "sup_Tinv_err",
    "sup_T_err",
    "reg_dist",
    "iters",
    "converged",
    "status",
)


@dataclass(frozen=True)
class ExperimentDesign:
    """Grid of ``(n, tau)`` cells run for several seeded replicates.

    ``tau / log n`` must increase along the design (``log n`` is floored
    at 1 so that ``n = 1`` is admissible).
    """

    n_grid: tuple
    tau_grid: tuple
    replicates: int = 1
    seed: int = 0
    bandwidth_rule: Callable | None = None
    cells: int | None = None
    window: Compactum = field(default_factory=lambda: Compactum.unit(1))
    max_frequency: int = 2
    amplitude: float = 0.5
    probes_per_axis: int = 50

    def __post_init__(self):
        n_grid = tuple(int(n) for n in self.n_grid)
        tau_grid = tuple(float(t) for t in self.tau_grid)
        object.__setattr__(self, "n_grid", n_grid)
        object.__setattr__(self, "tau_grid", tau_grid)
        if not n_grid or len(n_grid) != len(tau_grid):
            raise DomainError("n_grid and tau_grid must be nonempty and of equal length")
        if min(n_grid) < 1 or min(tau_grid) <= 0:
            raise DomainError("design needs n >= 1 and tau > 0")
        if self.replicates < 1:
            raise DomainError("replicates must be at least 1")
        rate = [t / max(math.log(n), 1.0) for n, t in zip(n_grid, tau_grid)]
        if any(b <= a for a, b in zip(rate, rate[1:])):
            raise DomainError("tau / log n must increase along the design")

    @property
    def family(self) -> WarpFamily:
        return WarpFamily(self.window, self.max_frequency, self.amplitude)

    def to_json(self) -> dict:
        return {
            "n_grid": list(self.n_grid),
            "tau_grid": list(self.tau_grid),
            "replicates": self.replicates,
            "seed": self.seed,
            "cells": self.cells,
            "lower": self.window.lower.tolist(),
            "upper": self.window.upper.tolist(),
            "max_frequency": self.max_frequency,
            "amplitude": self.amplitude,
            "probes_per_axis": self.probes_per_axis,
        }


def _empirical_distance(a: PointPattern, b: PointPattern) -> float:
    if a.size == 0 or b.size == 0:
        return float("nan")
    return math.sqrt(wasserstein2_sq(a.empirical(), b.empirical()))


def _run_cell(design, intensity, n, tau, replicate, cell_index, cfg) -> dict:
    seed = [design.seed, replicate, cell_index]
    sim = simulate_patterns(intensity, design.family, n, tau, seed)
    rule = design.bandwidth_rule or (lambda t: default_bandwidth(t, design.window.dim))
    sigma = rule(tau)
    est = estimate_population(sim.observed, sigma, design.cells, cfg)
    probes = interior_probes(design.window, design.probes_per_axis)
    inv_err = [registration_error(e, w.inverse, probes) for e, w in zip(est.inverses, sim.warps)]
    fwd_err = [registration_error(e, w.forward, probes) for e, w in zip(est.maps, sim.warps)]
    reg = [
        _empirical_distance(register_pattern(obs, e), pi)
        for obs, e, pi in zip(sim.observed, est.inverses, sim.truth)
    ]
    return {
        "sigma": sigma,
        "d_lambda": math.sqrt(wasserstein2_sq(est.intensity, intensity)),
        "sup_Tinv_err": float(np.median(inv_err)),
        "sup_T_err": float(np.median(fwd_err)),
        "reg_dist": float(np.nanmedian(reg)) if not np.all(np.isnan(reg)) else float("nan"),
        "iters": est.trace.iterations_used,
        "converged": est.trace.converged,
        "status": "ok",
    }


def run_consistency_experiment(
    design: ExperimentDesign,
    intensity: GridDensity | None = None,
    cfg: DescentConfig | None = None,
) -> list:
    """One row per design cell and replicate; failures become error rows."""
    intensity = intensity or default_intensity(design.window)
    cfg = cfg or DescentConfig()
    rows = []
    for r in range(design.replicates):
        for c, (n, tau) in enumerate(zip(design.n_grid, design.tau_grid)):
            row = {"n": n, "tau": tau, "replicate": r}
            try:
                row.update(_run_cell(design, intensity, n, tau, r, c, cfg))
            except (WassbaryError, ArithmeticError, ValueError) as exc:
                logger.warning("replicate %d, n=%d failed: %s", r, n, exc)
                nan = float("nan")
                row.update(
                    sigma=nan, d_lambda=nan, sup_Tinv_err=nan, sup_T_err=nan, reg_dist=nan,
                    iters=0, converged=False, status=f"error: {exc}",
                )
            rows.append({k: row[k] for k in EXPERIMENT_COLUMNS})
    return rows
