"""Wasserstein barycenters by Procrustes gradient descent, with registration
of warped point processes."""

__version__ = "0.1.0"

from .barycenter import (  # noqa: E402
    DescentConfig,
    DescentTrace,
    barycenter,
    density_bound,
    frechet_gradient_norm_sq,
    frechet_objective,
    gaussian_barycenter,
    karcher_residual,
    procrustes_step,
)
from .maps import Assignment, GridMap, LinearMap, Monotone1D, ProductMap  # noqa: E402
from .measures import (  # noqa: E402
    Compactum,
    DiscreteMeasure,
    FrankCopula,
    GaussianMeasure,
    GridDensity,
    Measure1D,
    PointPattern,
    ProductMeasure,
    push_forward,
    quantile,
    wasserstein2,
    wasserstein2_sq,
)
from .registration import (  # noqa: E402
    Multicoupling,
    invert_map,
    multicoupling,
    register_pattern,
    registration_error,
)
from .transport import optimal_coupling_discrete, optimal_map  # noqa: E402

__all__ = [
    "DescentConfig",
    "DescentTrace",
    "barycenter",
    "density_bound",
    "frechet_gradient_norm_sq",
    "frechet_objective",
    "gaussian_barycenter",
    "karcher_residual",
    "procrustes_step",
    "Compactum",
    "DiscreteMeasure",
    "FrankCopula",
    "GaussianMeasure",
    "GridDensity",
    "Measure1D",
    "PointPattern",
    "ProductMeasure",
    "push_forward",
    "quantile",
    "wasserstein2",
    "wasserstein2_sq",
    "Multicoupling",
    "invert_map",
    "multicoupling",
    "register_pattern",
    "registration_error",
    "Assignment",
    "GridMap",
    "LinearMap",
    "Monotone1D",
    "ProductMap",
    "optimal_coupling_discrete",
    "optimal_map",
]
