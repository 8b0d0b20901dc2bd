"""First- and second-order contribution curves.

For a fitted quantile map with grid images ``Q(g_i)`` and a radial
weighting ``rho``:

* first order: ``M(p)`` is the mean of ``rho(Q(g_i))`` over the grid points
  whose radius falls in the band ``(p - b, p + b]``;
* second order: ``MM(p) = (1/n) * sum of rho(Q(g_i))`` over grid points with
  radius ``<= p``.
"""

from __future__ import annotations

import csv
import math
import re
import warnings
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
from scipy.integrate import quad

from .ballgrid import _RADIUS_SLACK, BallGrid
from .errors import EmptyCurveError, ParameterError
from .quantile import QuantileMap

FIRST = "first"
SECOND = "second"


@dataclass(frozen=True)
class RhoFn:
    """Nonnegative, radially nondecreasing weighting of image points.

    ``kind`` is one of ``"norm"``, ``"squared"``, ``"capped"`` (``min(|x|,
    cap)``) or ``"table"`` (piecewise-linear profile of ``|x|`` through
    ``(radii, values)``, constant beyond the last knot).
    """

    kind: str = "norm"
    cap: float | None = None
    radii: tuple[float, ...] = ()
    values: tuple[float, ...] = ()

    def __post_init__(self):
        if self.kind not in ("norm", "squared", "capped", "table"):
            raise ParameterError(f"unknown rho kind {self.kind!r}")
        if self.kind == "capped" and not (self.cap is not None and self.cap > 0):
            raise ParameterError("capped rho needs cap > 0")
        if self.kind == "table":
            r, v = np.asarray(self.radii, float), np.asarray(self.values, float)
            if len(r) < 1 or r.shape != v.shape:
                raise ParameterError("table rho needs matching, nonempty radii and values")
            if np.any(np.diff(r) <= 0) or r[0] < 0:
                raise ParameterError("table radii must be nonnegative and strictly increasing")
            if np.any(v < 0) or np.any(np.diff(v) < 0):
                raise ParameterError("table values must be nonnegative and nondecreasing")

    @classmethod
    def parse(cls, text: str) -> RhoFn:
        """Parse ``norm``, ``squared`` or ``capped(c)``."""
        text = text.strip().lower()
        if text in ("norm", "euclidean", "euclidean-norm"):
            return cls("norm")
        if text in ("squared", "squared-norm"):
            return cls("squared")
        m = re.fullmatch(r"capped(?:-norm)?\(\s*(?:c\s*=\s*)?([^)]+)\)", text)
        if m:
            return cls("capped", cap=float(m.group(1)))
        raise ParameterError(f"cannot parse rho {text!r}")

    @property
    def tag(self) -> str:
        if self.kind == "capped":
            return f"capped({self.cap:g})"
        return self.kind

    def __call__(self, points: np.ndarray) -> np.ndarray:
        r = np.linalg.norm(np.atleast_2d(points), axis=1)
        if self.kind == "norm":
            return r
        if self.kind == "squared":
            return r * r
        if self.kind == "capped":
            return np.minimum(r, self.cap)
        return np.interp(r, self.radii, self.values)


@dataclass(frozen=True)
class ContributionCurve:
    levels: np.ndarray
    values: np.ndarray
    kind: str
    epsilon: float | None = None
    bandwidth: float | None = None
    sample_size: int | None = None
    rho: str = "norm"
    dropped: tuple[float, ...] = field(default=())

    def __post_init__(self):
        lv = np.asarray(self.levels, dtype=float)
        vals = np.asarray(self.values, dtype=float)
        if lv.shape != vals.shape or lv.ndim != 1:
            raise ParameterError("levels and values must be 1-d of equal length")
        if np.any(np.diff(lv) <= 0):
            raise ParameterError("levels must be strictly increasing")
        if self.kind not in (FIRST, SECOND):
            raise ParameterError(f"kind must be {FIRST!r} or {SECOND!r}")
        object.__setattr__(self, "levels", lv)
        object.__setattr__(self, "values", vals)

    def to_csv(self, path: str | Path) -> None:
        with open(path, "w", newline="") as fh:
            writer = csv.writer(fh)
            writer.writerow(["p", "value", "kind"])
            for p, v in zip(self.levels, self.values):
                writer.writerow([repr(float(p)), repr(float(v)), self.kind])


def _check_levels(levels) -> np.ndarray:
    lv = np.asarray(levels, dtype=float).ravel()
    if lv.size == 0:
        raise ParameterError("no evaluation levels")
    if np.any(lv <= 0) or np.any(lv > 1):
        raise ParameterError("levels must lie in (0, 1]")
    if np.any(np.diff(lv) <= 0):
        raise ParameterError("levels must be strictly increasing")
    return lv


class CurveOperator:
    """Precomputed level-by-grid averaging matrices for one grid.

    Both curves are linear in the vector ``rho(images)``; building the
    matrices once lets the bootstrap evaluate curves with a matrix product.
    """

    def __init__(self, grid: BallGrid, levels=None, bandwidth: float | None = None):
        self.grid = grid
        self.levels = _check_levels(grid.radii if levels is None else levels)
        self.bandwidth = grid.spacing if bandwidth is None else float(bandwidth)
        if not 0 < self.bandwidth <= 1:
            raise ParameterError(f"bandwidth must lie in (0, 1], got {self.bandwidth}")
        r = grid.norms
        on_shell = grid.shell_index >= 0
        p = self.levels[:, None]
        band = (
            on_shell[None, :]
            & (r[None, :] > p - self.bandwidth + _RADIUS_SLACK)
            & (r[None, :] <= p + self.bandwidth + _RADIUS_SLACK)
        )
        counts = band.sum(axis=1)
        self.first_mask = counts > 0
        self.first_matrix = band[self.first_mask] / counts[self.first_mask, None]
        self.second_matrix = (r[None, :] <= p + _RADIUS_SLACK) / grid.n

    @property
    def first_levels(self) -> np.ndarray:
        return self.levels[self.first_mask]

    @property
    def dropped_levels(self) -> tuple[float, ...]:
        return tuple(float(x) for x in self.levels[~self.first_mask])

    def first(self, rho_values: np.ndarray) -> np.ndarray:
        return self.first_matrix @ rho_values

    def second(self, rho_values: np.ndarray) -> np.ndarray:
        return self.second_matrix @ rho_values


def first_order_curve(
    qmap: QuantileMap,
    rho: RhoFn | None = None,
    levels=None,
    b: float | None = None,
) -> ContributionCurve:
    """Band-averaged ``rho`` of the contour images at each level.

    Defaults: the grid's shell radii as levels and one shell spacing as
    bandwidth.  Levels whose band holds no grid point are dropped and listed
    in ``dropped``.
    """
    rho = rho or RhoFn()
    op = CurveOperator(qmap.grid, levels, b)
    if not op.first_mask.any():
        raise EmptyCurveError("every radial band is empty; increase the bandwidth")
    return ContributionCurve(
        op.first_levels,
        op.first(rho(qmap.images)),
        FIRST,
        qmap.epsilon,
        op.bandwidth,
        qmap.sample_size,
        rho.tag,
        op.dropped_levels,
    )


def second_order_curve(qmap: QuantileMap, rho: RhoFn | None = None, levels=None) -> ContributionCurve:
    """``(1/n)`` times the sum of ``rho`` over images of the ball of radius ``p``."""
    rho = rho or RhoFn()
    op = CurveOperator(qmap.grid, levels)
    return ContributionCurve(
        op.levels,
        op.second(rho(qmap.images)),
        SECOND,
        qmap.epsilon,
        None,
        qmap.sample_size,
        rho.tag,
    )


def normal_contour_radius(p, reference: str = "disk") -> np.ndarray:
    """Radius of the level-``p`` contour of ``N(0, I_2)``.

    ``reference="disk"`` pairs the normal with the uniform law on the disk
    (``sqrt(-2 log(1 - p^2))``); ``"spherical"`` pairs it with the
    spherical uniform, whose radius is uniform on ``[0, 1)``
    (``sqrt(-2 log(1 - p))``).
    """
    p = np.asarray(p, dtype=float)
    if reference == "disk":
        mass = p * p
    elif reference == "spherical":
        mass = p
    else:
        raise ParameterError(f"unknown reference {reference!r}")
    with np.errstate(divide="ignore"):
        return np.sqrt(-2.0 * np.log1p(-mass))


def analytic_normal_curve(
    sigma: float, levels, kind: str = FIRST, reference: str = "disk"
) -> ContributionCurve:
    """Contribution curves of ``N(0, sigma^2 I_2)`` with ``rho = |x|``.

    The first-order curve is ``sigma * r(p)`` with ``r`` from
    :func:`normal_contour_radius`; the second-order curve is
    ``sigma * int_0^{r(p)} t^2 exp(-t^2 / 2) dt`` by adaptive quadrature.
    A first-order level ``p = 1`` has infinite value and is dropped with a
    warning.
    """
    if not sigma > 0:
        raise ParameterError(f"sigma must be positive, got {sigma}")
    lv = _check_levels(levels)
    if kind == FIRST:
        keep = lv < 1.0
        if not keep.all():
            warnings.warn("first-order normal curve is infinite at p = 1; level dropped", stacklevel=2)
        vals = sigma * normal_contour_radius(lv[keep], reference)
        return ContributionCurve(lv[keep], vals, FIRST, rho="norm", dropped=tuple(lv[~keep]))
    if kind != SECOND:
        raise ParameterError(f"kind must be {FIRST!r} or {SECOND!r}")
    radii = normal_contour_radius(lv, reference)
    vals = np.array(
        [
            math.sqrt(math.pi / 2) if math.isinf(r) else quad(lambda t: t * t * math.exp(-t * t / 2), 0.0, r)[0]
            for r in radii
        ]
    )
    return ContributionCurve(lv, sigma * vals, SECOND, rho="norm")
