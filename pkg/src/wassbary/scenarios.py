"""Seeded reproductions of the worked examples: random inputs, their mean, maps.

Each scenario draws its parameters from ``numpy.random.default_rng(seed)``
and returns plain tables (column names plus rows) and figure specs, so
that writing them out is a separate concern.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
from scipy import stats

from .barycenter import DescentConfig, barycenter
from .measures import (
    DEFAULT_LEVELS,
    FrankCopula,
    GaussianMeasure,
    Measure1D,
    ProductMeasure,
    midpoint_levels,
)

__all__ = [
    "SCENARIOS",
    "ScenarioOutput",
    "run_scenario",
    "bimodal_gaussian_params",
    "gamma_gaussian_params",
    "bimodal_gaussian",
    "gamma_gaussian",
    "wishart_covariances",
    "level_set_points",
]

SCENARIOS = ("1d-mixtures", "product", "copula", "gaussian", "trivariate")
N_MEASURES = 4
LEVEL = 0.0003


@dataclass
class Mixture1D:
    """A 1-D law given by its cdf and pdf, with a bracket holding its mass."""

    cdf: object
    pdf: object
    lo: float
    hi: float
    params: dict

    def quantiles(self, m: int = DEFAULT_LEVELS) -> Measure1D:
        u = midpoint_levels(m)
        lo = np.full(m, self.lo)
        hi = np.full(m, self.hi)
        for _ in range(80):
            mid = 0.5 * (lo + hi)
            below = self.cdf(mid) < u
            lo = np.where(below, mid, lo)
            hi = np.where(below, hi, mid)
        return Measure1D(0.5 * (lo + hi))


@dataclass
class ScenarioOutput:
    name: str
    tables: dict = field(default_factory=dict)  # file stem -> (columns, rows)
    figures: list = field(default_factory=list)  # (file stem, plot kind, payload)
    summary: dict = field(default_factory=dict)


def bimodal_gaussian_params(rng) -> dict:
    return {
        "m1": rng.uniform(-13, -3),
        "m2": rng.uniform(3, 13),
        "s1": rng.gamma(4.0, 1 / 4.0),
        "s2": rng.gamma(4.0, 1 / 4.0),
    }


def bimodal_gaussian(p: dict) -> Mixture1D:
    """Equal mixture of N(m1, s1^2) and N(m2, s2^2)."""
    a = stats.norm(p["m1"], p["s1"])
    b = stats.norm(p["m2"], p["s2"])
    lo = p["m1"] - 12 * p["s1"]
    hi = p["m2"] + 12 * p["s2"]
    return Mixture1D(
        lambda x: 0.5 * a.cdf(x) + 0.5 * b.cdf(x),
        lambda x: 0.5 * a.pdf(x) + 0.5 * b.pdf(x),
        lo,
        hi,
        p,
    )


def gamma_gaussian_params(rng) -> dict:
    return {
        "beta": rng.gamma(4.0, 1.0),
        "m3": rng.uniform(1, 4),
        "m4": rng.uniform(-4, -1),
    }


def gamma_gaussian(p: dict) -> Mixture1D:
    """3/5 Gamma(3, rate beta) shifted by m3, plus 2/5 N(m4, 1)."""
    g = stats.gamma(3.0, loc=p["m3"], scale=1 / p["beta"])
    n = stats.norm(p["m4"], 1.0)
    hi = max(g.ppf(1 - 1e-15), p["m4"] + 12)
    return Mixture1D(
        lambda x: 0.6 * g.cdf(x) + 0.4 * n.cdf(x),
        lambda x: 0.6 * g.pdf(x) + 0.4 * n.pdf(x),
        p["m4"] - 12,
        hi,
        p,
    )


def wishart_covariances(rng, n: int = N_MEASURES, dim: int = 2) -> list:
    dist = stats.wishart(df=dim, scale=np.eye(dim))
    return [np.atleast_2d(dist.rvs(random_state=rng)) for _ in range(n)]


def _quantile_density(m: Measure1D, x: np.ndarray) -> tuple:
    """Cdf and density on ``x`` read off a quantile grid."""
    vals, idx = np.unique(m.values, return_index=True)
    lv = m.levels[idx]
    cdf = np.interp(x, vals, lv, left=0.0, right=1.0)
    # density at the nodes is 1 / Q'(u)
    dens = 1.0 / np.gradient(vals, lv)
    return cdf, np.interp(x, vals, dens, left=0.0, right=0.0)


def _span(mixtures, pad: float = 1.0, points: int = 400) -> np.ndarray:
    qs = [mx.quantiles(256).values for mx in mixtures]
    lo = min(q[0] for q in qs) - pad
    hi = max(q[-1] for q in qs) + pad
    return np.linspace(lo, hi, points)


def _map_rows(t, x):
    y = t(x)
    return np.column_stack([x, y, y - x]).tolist()


def _scenario_1d(rng, cfg) -> ScenarioOutput:
    mixtures = [bimodal_gaussian(bimodal_gaussian_params(rng)) for _ in range(N_MEASURES)]
    inputs = [mx.quantiles() for mx in mixtures]
    bary, trace, maps = barycenter(inputs, cfg)
    x = _span(mixtures)
    out = ScenarioOutput("1d-mixtures")
    curves = []
    for i, mx in enumerate(mixtures, 1):
        dens = mx.pdf(x)
        out.tables[f"input_{i}"] = (("x", "density"), np.column_stack([x, dens]).tolist())
        curves.append((x, dens, f"input {i}"))
    _, bdens = _quantile_density(bary, x)
    out.tables["barycenter"] = (("x", "density"), np.column_stack([x, bdens]).tolist())
    xb = np.linspace(bary.values[0], bary.values[-1], 400)
    for i, t in enumerate(maps, 1):
        out.tables[f"map_{i}"] = (("x", "t", "displacement"), _map_rows(t, xb))
    out.figures.append(("densities", "lines", {"curves": curves, "mean": (x, bdens)}))
    out.figures.append(
        ("maps", "lines", {"curves": [(xb, t(xb), f"map {i}") for i, t in enumerate(maps, 1)]})
    )
    out.summary = {"params": [mx.params for mx in mixtures]}
    return out, trace


def _grid2(xs, ys):
    gx, gy = np.meshgrid(xs, ys, indexing="ij")
    return gx, gy, np.column_stack([gx.ravel(), gy.ravel()])


def _displacement_rows(t, pts):
    disp = t(pts) - pts
    return np.column_stack([pts, disp]).tolist(), disp


def _scenario_marginals(rng, cfg, copula) -> tuple:
    mx = [bimodal_gaussian(bimodal_gaussian_params(rng)) for _ in range(N_MEASURES)]
    my = [gamma_gaussian(gamma_gaussian_params(rng)) for _ in range(N_MEASURES)]
    inputs = [ProductMeasure((a.quantiles(), b.quantiles()), copula) for a, b in zip(mx, my)]
    bary, trace, maps = barycenter(inputs, cfg)
    name = "copula" if copula is not None else "product"
    out = ScenarioOutput(name)
    xs, ys = _span(mx, points=120), _span(my, points=120)
    gx, gy, pts = _grid2(xs, ys)

    def joint(fx, fy, cx, cy):
        dens = np.outer(fx, fy)
        if copula is not None:
            cu, cv = np.meshgrid(np.clip(cx, 1e-12, 1 - 1e-12), np.clip(cy, 1e-12, 1 - 1e-12), indexing="ij")
            dens = dens * copula.density(cu, cv)
        return dens

    panels = []
    for i, (a, b) in enumerate(zip(mx, my), 1):
        dens = joint(a.pdf(xs), b.pdf(ys), a.cdf(xs), b.cdf(ys))
        out.tables[f"input_{i}"] = (("x", "y", "density"), np.column_stack([pts, dens.ravel()]).tolist())
        panels.append((gx, gy, dens, f"input {i}"))
    cx, fx = _quantile_density(bary.factors[0], xs)
    cy, fy = _quantile_density(bary.factors[1], ys)
    bdens = joint(fx, fy, cx, cy)
    out.tables["barycenter"] = (("x", "y", "density"), np.column_stack([pts, bdens.ravel()]).tolist())
    panels.append((gx, gy, bdens, "Fréchet mean"))
    qx = np.linspace(*np.quantile(bary.factors[0].values, [0.01, 0.99]), 20)
    qy = np.linspace(*np.quantile(bary.factors[1].values, [0.01, 0.99]), 20)
    _, _, qpts = _grid2(qx, qy)
    fields = []
    for i, t in enumerate(maps, 1):
        rows, disp = _displacement_rows(t, qpts)
        out.tables[f"displacement_{i}"] = (("x", "y", "dx", "dy"), rows)
        fields.append((qpts, disp, f"map {i}"))
    out.figures.append(("densities", "contours", {"panels": panels}))
    out.figures.append(("displacements", "quiver", {"fields": fields}))
    out.summary = {
        "x_params": [a.params for a in mx],
        "y_params": [b.params for b in my],
        "copula": None if copula is None else copula.to_json(),
    }
    return out, trace


def _gaussian_density(cov, pts):
    return stats.multivariate_normal(np.zeros(len(cov)), cov).pdf(pts)


def _scenario_gaussian(rng, cfg) -> tuple:
    covs = wishart_covariances(rng)
    inputs = [GaussianMeasure(s) for s in covs]
    if cfg.initial is None:
        cfg = DescentConfig(**{**cfg.__dict__, "initial": GaussianMeasure(np.eye(2))})
    bary, trace, maps = barycenter(inputs, cfg)
    out = ScenarioOutput("gaussian")
    rows = [[f"input_{i}", s[0, 0], s[0, 1], s[1, 1]] for i, s in enumerate(covs, 1)]
    b = bary.covariance
    rows.append(["barycenter", b[0, 0], b[0, 1], b[1, 1]])
    out.tables["covariances"] = (("measure", "s11", "s12", "s22"), rows)
    xs = np.linspace(-4, 4, 121)
    gx, gy, pts = _grid2(xs, xs)
    panels = []
    for i, s in enumerate(covs, 1):
        dens = _gaussian_density(s, pts)
        out.tables[f"input_{i}"] = (("x", "y", "density"), np.column_stack([pts, dens]).tolist())
        panels.append((gx, gy, dens.reshape(gx.shape), f"input {i}"))
    bd = _gaussian_density(b, pts)
    out.tables["barycenter"] = (("x", "y", "density"), np.column_stack([pts, bd]).tolist())
    panels.append((gx, gy, bd.reshape(gx.shape), "Fréchet mean"))
    q = np.linspace(-2, 2, 17)
    _, _, qpts = _grid2(q, q)
    fields = []
    for i, t in enumerate(maps, 1):
        r, disp = _displacement_rows(t, qpts)
        out.tables[f"displacement_{i}"] = (("x", "y", "dx", "dy"), r)
        fields.append((qpts, disp, f"map {i}"))
    out.figures.append(("densities", "contours", {"panels": panels}))
    out.figures.append(("displacements", "quiver", {"fields": fields}))
    out.summary = {"start": "identity"}
    return out, trace


def level_set_points(values: np.ndarray, axes: list, level: float) -> np.ndarray:
    """Points where a gridded field crosses ``level`` along grid edges.

    Each crossing between neighbouring nodes is located by linear
    interpolation; the result is a point cloud on the level set.
    """
    found = []
    mesh = np.meshgrid(*axes, indexing="ij")
    for k in range(values.ndim):
        a = np.moveaxis(values, k, 0)
        lo, hi = a[:-1], a[1:]
        hit = (lo - level) * (hi - level) < 0
        if not np.any(hit):
            continue
        frac = (level - lo[hit]) / (hi[hit] - lo[hit])
        coords = []
        for j, m in enumerate(mesh):
            mm = np.moveaxis(m, k, 0)
            c0, c1 = mm[:-1][hit], mm[1:][hit]
            coords.append(c0 + frac * (c1 - c0))
        found.append(np.column_stack(coords))
    if not found:
        return np.empty((0, values.ndim))
    return np.vstack(found)


def _scenario_trivariate(rng, cfg) -> tuple:
    u = stats.ortho_group.rvs(3, random_state=rng)
    mixtures = [bimodal_gaussian(bimodal_gaussian_params(rng)) for _ in range(N_MEASURES)]
    covs = wishart_covariances(rng)
    # in the rotated frame (U_1'y, U_2'y, U_3'y) every input is N(0, S) x f
    inputs = [ProductMeasure((GaussianMeasure(s), mx.quantiles())) for s, mx in zip(covs, mixtures)]
    bary, trace, maps = barycenter(inputs, cfg)
    out = ScenarioOutput("trivariate")
    out.tables["rotation"] = (("u1", "u2", "u3"), u.tolist())
    axis = np.linspace(-16, 16, 48)
    gx, gy, gz = np.meshgrid(axis, axis, axis, indexing="ij")
    pts = np.column_stack([gx.ravel(), gy.ravel(), gz.ravel()])
    rot = pts @ u  # column k holds U_k' y

    def density(cov, f_vals):
        return _gaussian_density(cov, rot[:, :2]) * f_vals

    sets = []
    for i, (s, mx) in enumerate(zip(covs, mixtures), 1):
        vals = density(s, mx.pdf(rot[:, 2])).reshape(gx.shape)
        lv = level_set_points(vals, [axis] * 3, LEVEL)
        out.tables[f"levelset_{i}"] = (("x", "y", "z"), lv.tolist())
        sets.append((lv, f"input {i}"))
    _, fb = _quantile_density(bary.factors[1], rot[:, 2])
    vals = density(bary.factors[0].covariance, fb).reshape(gx.shape)
    lv = level_set_points(vals, [axis] * 3, LEVEL)
    out.tables["levelset_barycenter"] = (("x", "y", "z"), lv.tolist())
    sets.append((lv, "Fréchet mean"))
    out.figures.append(("levelsets", "scatter3d", {"sets": sets}))
    out.summary = {"level": LEVEL, "params": [mx.params for mx in mixtures]}
    return out, trace


def run_scenario(name: str, seed: int, cfg: DescentConfig | None = None):
    """Build and solve one scenario; returns ``(ScenarioOutput, trace)``."""
    cfg = cfg or DescentConfig()
    rng = np.random.default_rng(seed)
    if name == "1d-mixtures":
        return _scenario_1d(rng, cfg)
    if name == "product":
        return _scenario_marginals(rng, cfg, None)
    if name == "copula":
        return _scenario_marginals(rng, cfg, FrankCopula(-8.0))
    if name == "gaussian":
        return _scenario_gaussian(rng, cfg)
    if name == "trivariate":
        return _scenario_trivariate(rng, cfg)
    raise KeyError(name)
