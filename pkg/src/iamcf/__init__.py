"""Weak inverse anisotropic mean curvature flow via the Finsler p-Laplacian.

Solves the anisotropic p-harmonic exterior problem on truncated grids,
passes p -> 1+, and verifies the analytic estimates (barriers, gradient
bounds, exponential area growth, weak curvature identity) numerically.
"""

from .norms import (
    CustomNorm,
    DegenerateGradientError,
    EllipsoidalNorm,
    EuclideanNorm,
    LqNorm,
    MinkowskiNorm,
    PolarNorm,
    ellipticity_constant,
    make_norm,
)
from .grid import ConvexPolygon, GridDomain, ScalarField, cell_gradients, node_gradients
from .wulff import (
    Contour,
    WulffShape,
    anisotropic_normal,
    first_variation_check,
    hf_grid,
    level_set_HF,
    sample_wulff_boundary,
    sigma_F,
)
from .solver import (
    ContinuationResult,
    SolveReport,
    SolverConfig,
    boundary_trace_sup,
    check_gradient_bounds,
    continuation_solve,
    enclosing_wulff,
    energy,
    energy_gradient,
    inscribed_wulff,
    log_transform,
    residual_Qp,
    solve_vp,
    wulff_inradius,
    wulff_inradius_bruteforce,
)
from .flow import (
    FlowSnapshot,
    GrowthSeries,
    J_functional,
    area_growth_series,
    extract_sublevel,
    marching_squares,
    minimality_spot_check,
    obstacle_sigma,
    properness_proxy,
    sigma_F_coarea,
    weak_curvature_residual,
)
from .cli import bundled_config, convergence_study, load_config, run_checks

__all__ = [
    "CustomNorm",
    "DegenerateGradientError",
    "EllipsoidalNorm",
    "EuclideanNorm",
    "LqNorm",
    "MinkowskiNorm",
    "PolarNorm",
    "ellipticity_constant",
    "make_norm",
    "ConvexPolygon",
    "GridDomain",
    "ScalarField",
    "cell_gradients",
    "node_gradients",
    "Contour",
    "WulffShape",
    "anisotropic_normal",
    "first_variation_check",
    "hf_grid",
    "level_set_HF",
    "sample_wulff_boundary",
    "sigma_F",
    "ContinuationResult",
    "SolveReport",
    "SolverConfig",
    "boundary_trace_sup",
    "check_gradient_bounds",
    "continuation_solve",
    "enclosing_wulff",
    "energy",
    "energy_gradient",
    "inscribed_wulff",
    "log_transform",
    "residual_Qp",
    "solve_vp",
    "wulff_inradius",
    "wulff_inradius_bruteforce",
    "FlowSnapshot",
    "GrowthSeries",
    "J_functional",
    "area_growth_series",
    "extract_sublevel",
    "marching_squares",
    "minimality_spot_check",
    "obstacle_sigma",
    "properness_proxy",
    "sigma_F_coarea",
    "weak_curvature_residual",
    "bundled_config",
    "convergence_study",
    "load_config",
    "run_checks",
]

__version__ = "0.1.0"
