"""Multivariate stochastic dominance tests based on entropic center-outward quantiles."""

from __future__ import annotations

__version__ = "0.1.0"

from .ballgrid import BallGrid, ball_prefix, build_grid, default_grid_shape, shell_band
from .contribution import (
    ContributionCurve,
    RhoFn,
    analytic_normal_curve,
    first_order_curve,
    second_order_curve,
)
from .errors import (
    ConvergenceError,
    DataFormatError,
    DimensionError,
    EmptyCurveError,
    InfeasibleTestError,
    MSDError,
    OracleCapError,
    ParameterError,
)
from .quantile import QuantileMap, Sample, contour_points, fit_quantile_map, region_points
from .sdtest import TestConfig, TestResult, baseline_cdf_test, run_test
from .transport import (
    DiscreteMeasure,
    DualPotentials,
    SinkhornReport,
    TransportPlan,
    cost_matrix,
    entropic_map,
    plan_from_potentials,
    sinkhorn,
    solve_exact,
)

__all__ = [
    "BallGrid",
    "ContributionCurve",
    "ConvergenceError",
    "DataFormatError",
    "DimensionError",
    "DiscreteMeasure",
    "DualPotentials",
    "EmptyCurveError",
    "InfeasibleTestError",
    "MSDError",
    "OracleCapError",
    "ParameterError",
    "QuantileMap",
    "RhoFn",
    "Sample",
    "SinkhornReport",
    "TestConfig",
    "TestResult",
    "TransportPlan",
    "analytic_normal_curve",
    "ball_prefix",
    "baseline_cdf_test",
    "build_grid",
    "contour_points",
    "cost_matrix",
    "default_grid_shape",
    "entropic_map",
    "first_order_curve",
    "fit_quantile_map",
    "plan_from_potentials",
    "region_points",
    "run_test",
    "second_order_curve",
    "shell_band",
    "sinkhorn",
    "solve_exact",
]
