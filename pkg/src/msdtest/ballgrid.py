"""Deterministic regular grid on the closed unit ball.

The grid discretizes the spherical uniform distribution: ``n_r`` concentric
shells at radii ``j / (n_r + 1)`` intersected with ``n_s`` rays, plus the
origin when ``n_0 = 1``.  Points are stored shell-major, so point
``j * n_s + k`` sits on shell ``j`` along direction ``k``; the origin, when
present, is the last point.
"""

from __future__ import annotations

import csv
import math
from dataclasses import dataclass
from pathlib import Path

import numpy as np
from scipy.stats import norm, qmc

from .errors import ParameterError

# Fixed seed of the scrambled Sobol stream used for d >= 4 directions.
DIRECTION_SEED = 20240917

# Radii are rationals j/(n_r+1); band edges computed as p - b can miss an
# exact shell by one ulp, so membership tests use this slack.
_RADIUS_SLACK = 1e-12


@dataclass(frozen=True)
class BallGrid:
    dimension: int
    n_r: int
    n_s: int
    n_0: int
    points: np.ndarray
    radii: np.ndarray
    directions: np.ndarray
    shell_index: np.ndarray
    ray_index: np.ndarray

    def __post_init__(self):
        for arr in (self.points, self.radii, self.directions, self.shell_index, self.ray_index):
            arr.setflags(write=False)

    @property
    def n(self) -> int:
        return len(self.points)

    @property
    def norms(self) -> np.ndarray:
        """Radius of every point (0 for the origin)."""
        out = np.zeros(self.n)
        mask = self.shell_index >= 0
        out[mask] = self.radii[self.shell_index[mask]]
        return out

    @property
    def spacing(self) -> float:
        return 1.0 / (self.n_r + 1)

    def to_csv(self, path: str | Path) -> None:
        with open(path, "w", newline="") as fh:
            writer = csv.writer(fh)
            writer.writerow([f"x{k + 1}" for k in range(self.dimension)])
            for row in self.points:
                writer.writerow([repr(float(v)) for v in row])


def _directions(d: int, n_s: int) -> np.ndarray:
    if d == 1:
        return np.where(np.arange(n_s) % 2 == 0, 1.0, -1.0)[:, None]
    if d == 2:
        theta = 2.0 * np.pi * np.arange(n_s) / n_s
        return np.column_stack([np.cos(theta), np.sin(theta)])
    if d == 3:
        # Fibonacci lattice on the sphere.
        k = np.arange(n_s)
        z = 1.0 - (2.0 * k + 1.0) / n_s
        r = np.sqrt(np.clip(1.0 - z * z, 0.0, None))
        phi = k * np.pi * (3.0 - math.sqrt(5.0))
        return np.column_stack([r * np.cos(phi), r * np.sin(phi), z])
    # d >= 4: Sobol points pushed through the normal quantile, then paired
    # with their antipodes so the directions are exactly balanced.
    half = (n_s + 1) // 2
    sampler = qmc.Sobol(d, scramble=True, seed=DIRECTION_SEED)
    m = max(1, math.ceil(math.log2(half)))
    u = sampler.random_base2(m)[:half]
    g = norm.ppf(np.clip(u, 1e-12, 1 - 1e-12))
    g /= np.linalg.norm(g, axis=1, keepdims=True)
    dirs = np.empty((2 * half, d))
    dirs[0::2] = g
    dirs[1::2] = -g
    return dirs[:n_s]


def build_grid(d: int, n_r: int, n_s: int, with_origin: bool = False) -> BallGrid:
    """Build the shell-by-ray grid with ``n_r * n_s + n_0`` points.

    Directions are equispaced angles for d = 2, a Fibonacci lattice for
    d = 3 and antithetic normalized Sobol-normal draws for d >= 4.  The
    construction is fully deterministic.
    """
    for name, value in (("d", d), ("n_r", n_r), ("n_s", n_s)):
        if int(value) != value or value < 1:
            raise ParameterError(f"{name} must be a positive integer, got {value!r}")
    d, n_r, n_s = int(d), int(n_r), int(n_s)
    n_0 = 1 if with_origin else 0

    radii = np.arange(1, n_r + 1) / (n_r + 1)
    directions = _directions(d, n_s)
    points = (radii[:, None, None] * directions[None, :, :]).reshape(n_r * n_s, d)
    shell_index = np.repeat(np.arange(n_r), n_s)
    ray_index = np.tile(np.arange(n_s), n_r)
    if n_0:
        points = np.vstack([points, np.zeros((1, d))])
        shell_index = np.append(shell_index, -1)
        ray_index = np.append(ray_index, -1)
    return BallGrid(d, n_r, n_s, n_0, points, radii, directions, shell_index, ray_index)


def default_grid_shape(n: int) -> tuple[int, int, bool]:
    """Shell/ray counts for a sample of size ``n``.

    Returns ``(n_r, n_s, with_origin)`` with ``n_r = floor(sqrt(n))`` and
    ``n_s = floor(n / n_r)``.  The origin is added when one point is left
    over; when more are left over the grid is slightly smaller than ``n``.
    """
    if n < 2:
        raise ParameterError(f"need at least 2 points, got {n}")
    n_r = math.isqrt(n)
    n_s = n // n_r
    return n_r, n_s, n - n_r * n_s >= 1


def grid_for_sample_size(d: int, n: int) -> BallGrid:
    n_r, n_s, origin = default_grid_shape(n)
    return build_grid(d, n_r, n_s, origin)


def shell_band(grid: BallGrid, p: float, b: float) -> np.ndarray:
    """Indices of non-origin points with ``p - b < |g| <= p + b``.

    The origin lies on no contour and is never returned.  The result may be
    empty.
    """
    if not 0 < p <= 1:
        raise ParameterError(f"level must lie in (0, 1], got {p}")
    if not 0 < b <= 1:
        raise ParameterError(f"bandwidth must lie in (0, 1], got {b}")
    r = grid.norms
    mask = (grid.shell_index >= 0) & (r > p - b + _RADIUS_SLACK) & (r <= p + b + _RADIUS_SLACK)
    return np.flatnonzero(mask)


def ball_prefix(grid: BallGrid, p: float) -> np.ndarray:
    """Indices with ``|g| <= p``."""
    if not 0 < p <= 1:
        raise ParameterError(f"level must lie in (0, 1], got {p}")
    return np.flatnonzero(grid.norms <= p + _RADIUS_SLACK)
