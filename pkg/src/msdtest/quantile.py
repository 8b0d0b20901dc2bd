"""Empirical (entropic) center-outward quantile maps.

A quantile map sends every point of a :class:`~msdtest.ballgrid.BallGrid`
to the barycentric projection of an optimal coupling between the uniform
measure on the grid and the (possibly weighted) sample.
"""

from __future__ import annotations

import csv
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .ballgrid import BallGrid, ball_prefix, shell_band
from .errors import ConvergenceError, DimensionError, ParameterError
from .transport import (
    DEFAULT_MAX_ITER,
    DEFAULT_TOL,
    DiscreteMeasure,
    DualPotentials,
    SinkhornReport,
    barycentric_from_logits,
    cost_matrix,
    sinkhorn,
    solve_exact,
)

DEFAULT_EPSILON = 0.2


@dataclass(frozen=True)
class Sample:
    observations: np.ndarray
    weights: np.ndarray | None = None

    def __post_init__(self):
        obs = np.asarray(self.observations, dtype=float)
        if obs.ndim == 1:
            obs = obs[:, None]
        if obs.ndim != 2:
            raise DimensionError(f"observations must be an N x d matrix, got shape {obs.shape}")
        if len(obs) < 2:
            raise ParameterError(f"need at least 2 observations, got {len(obs)}")
        if not np.all(np.isfinite(obs)):
            raise ParameterError("observations must be finite")
        object.__setattr__(self, "observations", obs)
        if self.weights is not None:
            w = np.asarray(self.weights, dtype=float)
            if w.shape != (len(obs),) or np.any(w < 0) or not w.sum() > 0:
                raise ParameterError("weights must be nonnegative, one per observation, with positive total")
            object.__setattr__(self, "weights", w / w.sum())

    @property
    def size(self) -> int:
        return len(self.observations)

    @property
    def dimension(self) -> int:
        return self.observations.shape[1]

    def measure(self) -> DiscreteMeasure:
        if self.weights is None:
            return DiscreteMeasure.uniform(self.observations)
        return DiscreteMeasure(self.observations, self.weights)


@dataclass(frozen=True)
class QuantileMap:
    grid: BallGrid
    images: np.ndarray
    epsilon: float
    sample_size: int
    report: SinkhornReport | None = None
    potentials: DualPotentials | None = None

    def __post_init__(self):
        if self.images.shape != self.grid.points.shape:
            raise DimensionError("one image per grid point is required")

    def to_csv(self, path: str | Path) -> None:
        d = self.grid.dimension
        with open(path, "w", newline="") as fh:
            writer = csv.writer(fh)
            writer.writerow([f"grid_x{k + 1}" for k in range(d)] + [f"image_x{k + 1}" for k in range(d)])
            for g, y in zip(self.grid.points, self.images):
                writer.writerow([repr(float(v)) for v in (*g, *y)])


def _as_sample(sample) -> Sample:
    return sample if isinstance(sample, Sample) else Sample(sample)


def fit_quantile_map(
    sample,
    grid: BallGrid,
    epsilon: float = DEFAULT_EPSILON,
    *,
    tol: float = DEFAULT_TOL,
    max_iter: int = DEFAULT_MAX_ITER,
    warm: DualPotentials | None = None,
    cost: np.ndarray | None = None,
) -> QuantileMap:
    """Fit the quantile map of ``sample`` on ``grid``.

    Parameters
    ----------
    sample : Sample or array_like
        ``N x d`` observations, optionally weighted.
    grid : BallGrid
        Source points; each carries mass ``1 / n``.
    epsilon : float
        Entropic regularization.  ``0`` solves the exact problem and is only
        available below the exact-solver size cap.
    warm, cost
        Starting potentials and a precomputed grid-by-sample cost matrix,
        used by the bootstrap to refit reweighted samples cheaply.

    Raises
    ------
    ConvergenceError
        Sinkhorn stopped above ``tol``; the report is attached.
    """
    sample = _as_sample(sample)
    if sample.dimension != grid.dimension:
        raise DimensionError(f"sample dimension {sample.dimension} != grid dimension {grid.dimension}")
    if epsilon < 0:
        raise ParameterError(f"epsilon must be nonnegative, got {epsilon}")
    source = DiscreteMeasure.uniform(grid.points)
    target = sample.measure()

    if epsilon == 0:
        plan = solve_exact(source, target)
        return QuantileMap(grid, plan.barycentric_images(), 0.0, sample.size)

    C = cost_matrix(source, target) if cost is None else cost
    pot, report = sinkhorn(source, target, epsilon, tol=tol, max_iter=max_iter, warm=warm, cost=C)
    if not report.converged:
        raise ConvergenceError(
            f"Sinkhorn stopped at marginal error {report.marginal_error:.3g} "
            f"after {report.iterations} iterations (tol {tol:g})",
            report,
        )
    images = barycentric_from_logits((pot.phi[None, :] - C) / epsilon, target)
    return QuantileMap(grid, images, float(epsilon), sample.size, report, pot)


def contour_points(qmap: QuantileMap, p: float, b: float) -> np.ndarray:
    """Images of the grid points in the radial band around level ``p``."""
    return qmap.images[shell_band(qmap.grid, p, b)]


def region_points(qmap: QuantileMap, p: float) -> np.ndarray:
    """Images of the grid points with radius at most ``p``."""
    return qmap.images[ball_prefix(qmap.grid, p)]
