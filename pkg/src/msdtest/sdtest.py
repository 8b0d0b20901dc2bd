"""Two-sample tests of first- and second-order multivariate dominance.

``run_test(X, Y, config)`` tests ``H0: X dominates Y`` at the configured
order.  With contribution curves ``M_X`` and ``M_Y`` the difference process
is ``T(p) = M_Y(p) - M_X(p)``, so positive values are evidence against the
null.  The observed statistic is ``sqrt(r_N) * F(T)`` with ``F`` either the
sup (``"S"``) or the integral of the positive part (``"I"``), and
``r_N = N1 * N2 / (N1 + N2)``.

Critical values come from a multinomial-weight bootstrap: each replication
reweights the atoms of both samples, refits both entropic quantile maps
(warm-started from the base fit), and evaluates the estimated directional
derivative of ``F`` on the bootstrap process ``sqrt(r_N) * (T_B - T)``
restricted to an estimated contact set.

One set of bootstrap draws serves every combination of statistic, contact
threshold ``tau`` and level ``alpha``; see :func:`bootstrap_draws` and
:func:`evaluate`.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field, replace

import numpy as np
from scipy.integrate import trapezoid

from .ballgrid import BallGrid, build_grid, default_grid_shape
from .contribution import CurveOperator, ContributionCurve, FIRST, SECOND, RhoFn
from .errors import (
    ConvergenceError,
    DimensionError,
    InfeasibleTestError,
    MSDError,
    ParameterError,
)
from .quantile import QuantileMap, Sample, fit_quantile_map
from .transport import DEFAULT_MAX_ITER, DEFAULT_TOL, cost_matrix

STATISTICS = ("S", "I")


@dataclass(frozen=True)
class TestConfig:
    """Settings of one test.

    ``B`` is the bootstrap count, ``nu`` the variance floor, ``eta`` the
    floor applied to the critical value and ``tau`` the contact-set
    threshold (``math.inf`` uses every level).  ``n_r``/``n_s``/
    ``with_origin`` override the default grid, which is sized from the
    smaller sample.  ``levels=None`` evaluates at the grid's shell radii and
    ``bandwidth=None`` uses one shell spacing.
    """

    __test__ = False

    order: int = 1
    statistic: str = "S"
    alpha: float = 0.05
    tau: float = math.inf
    nu: float = 0.001
    B: int = 200
    epsilon: float = 0.2
    bandwidth: float | None = None
    levels: tuple[float, ...] | None = None
    eta: float = 0.0
    seed: int = 0
    rho: RhoFn = field(default_factory=RhoFn)
    n_r: int | None = None
    n_s: int | None = None
    with_origin: bool | None = None
    tol: float = DEFAULT_TOL
    max_iter: int = DEFAULT_MAX_ITER
    min_survival: float = 0.95

    def __post_init__(self):
        if self.order not in (1, 2):
            raise ParameterError(f"order must be 1 or 2, got {self.order}")
        if self.statistic not in STATISTICS:
            raise ParameterError(f"statistic must be 'S' or 'I', got {self.statistic!r}")
        if not 0 < self.alpha < 1:
            raise ParameterError(f"alpha must lie in (0, 1), got {self.alpha}")
        if not self.tau > 0:
            raise ParameterError(f"tau must be positive, got {self.tau}")
        if not self.nu > 0:
            raise ParameterError(f"nu must be positive, got {self.nu}")
        if int(self.B) != self.B or self.B < 2:
            raise ParameterError(f"B must be an integer >= 2, got {self.B}")
        if not self.epsilon > 0:
            raise ParameterError(f"epsilon must be positive, got {self.epsilon}")
        if self.bandwidth is not None and not 0 < self.bandwidth <= 1:
            raise ParameterError(f"bandwidth must lie in (0, 1], got {self.bandwidth}")
        if self.eta < 0:
            raise ParameterError(f"eta must be nonnegative, got {self.eta}")
        if (self.n_r is None) != (self.n_s is None):
            raise ParameterError("n_r and n_s must be given together")
        if not 0 < self.min_survival <= 1:
            raise ParameterError("min_survival must lie in (0, 1]")
        if self.levels is not None:
            object.__setattr__(self, "levels", tuple(float(p) for p in self.levels))

    def grid(self, d: int, n1: int, n2: int) -> BallGrid:
        if self.n_r is not None:
            return build_grid(d, self.n_r, self.n_s, bool(self.with_origin))
        n_r, n_s, origin = default_grid_shape(min(n1, n2))
        return build_grid(d, n_r, n_s, origin if self.with_origin is None else self.with_origin)


@dataclass(frozen=True)
class TProcess:
    levels: np.ndarray
    values: np.ndarray
    r_N: float
    lambda_hat: float


@dataclass(frozen=True)
class ContactSet:
    """Contact levels, stored as a mask over every evaluation level."""

    all_levels: np.ndarray
    mask: np.ndarray
    tau: float
    variance: np.ndarray

    @property
    def levels(self) -> np.ndarray:
        return self.all_levels[self.mask]

    @property
    def empty(self) -> bool:
        return not self.mask.any()


@dataclass(frozen=True)
class TestResult:
    __test__ = False

    hypothesis: str
    config: TestConfig
    n1: int
    n2: int
    statistic: float
    critical_value: float
    p_value: float
    p_value_raw: float
    reject: bool
    contact: ContactSet
    tprocess: TProcess
    curve_x: ContributionCurve
    curve_y: ContributionCurve
    draws: np.ndarray = field(repr=False)
    failed_reps: int = 0
    bandwidth: float | None = None

    def report(self) -> str:
        """Key/value text report."""
        c = self.config
        rows = [
            ("hypothesis", self.hypothesis),
            ("order", c.order),
            ("statistic_kind", c.statistic),
            ("N1", self.n1),
            ("N2", self.n2),
            ("epsilon", c.epsilon),
            ("b", self.bandwidth if self.bandwidth is not None else "none"),
            ("tau", "inf" if math.isinf(c.tau) else c.tau),
            ("alpha", c.alpha),
            ("B", c.B),
            ("nu", c.nu),
            ("eta", c.eta),
            ("seed", c.seed),
            ("rho", c.rho.tag),
            ("r_N", self.tprocess.r_N),
            ("statistic_value", self.statistic),
            ("critical_value", self.critical_value),
            ("p_value", self.p_value),
            ("p_value_raw", self.p_value_raw),
            ("reject", str(self.reject).lower()),
            ("contact_levels", " ".join(f"{p:.6g}" for p in self.contact.levels)),
            ("failed_reps", self.failed_reps),
        ]
        return "".join(f"{k}: {_fmt(v)}\n" for k, v in rows)


def _fmt(v) -> str:
    if isinstance(v, float):
        return repr(v)
    return str(v)


# ---------------------------------------------------------------------------
# Functionals


def t_process(curve1: ContributionCurve, curve2: ContributionCurve, n1: int, n2: int) -> TProcess:
    """``T = curve2 - curve1`` with ``curve1`` from X and ``curve2`` from Y."""
    if curve1.kind != curve2.kind:
        raise ParameterError(f"curve kinds differ: {curve1.kind} vs {curve2.kind}")
    if curve1.levels.shape != curve2.levels.shape or not np.array_equal(curve1.levels, curve2.levels):
        raise ParameterError("curves are evaluated at different levels")
    if n1 < 1 or n2 < 1:
        raise ParameterError("sample sizes must be positive")
    n = n1 + n2
    return TProcess(curve1.levels, curve2.values - curve1.values, n1 * n2 / n, n1 / n)


def statistic_S(h) -> float:
    """Maximum of ``h`` over the evaluated levels."""
    h = np.asarray(h, dtype=float)
    if h.size == 0:
        raise ParameterError("empty process")
    return float(h.max())


def _positive_part_segments(h: np.ndarray, levels: np.ndarray) -> np.ndarray:
    """Integral of ``max(h, 0)`` on each segment of the linear interpolant."""
    h0, h1 = h[..., :-1], h[..., 1:]
    dp = np.diff(levels)
    both = (h0 >= 0) & (h1 >= 0)
    out = np.where(both, 0.5 * (h0 + h1) * dp, 0.0)
    # One endpoint positive: triangle up to the zero crossing.
    cross0 = (h0 > 0) & (h1 < 0)
    cross1 = (h0 < 0) & (h1 > 0)
    with np.errstate(divide="ignore", invalid="ignore"):
        out = np.where(cross0, 0.5 * h0 * h0 / (h0 - h1) * dp, out)
        out = np.where(cross1, 0.5 * h1 * h1 / (h1 - h0) * dp, out)
    return out


def statistic_I(h, levels) -> float:
    """Integral of ``max(h, 0)`` between the first and last level.

    ``h`` is interpolated linearly between levels and the positive part is
    integrated exactly, so sign changes inside a segment are resolved at
    the interpolated zero.  A single level has zero width.
    """
    h = np.asarray(h, dtype=float)
    lv = np.asarray(levels, dtype=float)
    if h.shape != lv.shape or h.size == 0:
        raise ParameterError("h and levels must be nonempty and equally long")
    if np.any(np.diff(lv) <= 0):
        raise ParameterError("levels must be strictly increasing")
    return float(_positive_part_segments(h, lv).sum())


def variance_estimate(draws: np.ndarray, t_hat: np.ndarray, r_N: float, nu: float) -> np.ndarray:
    """Per-level ``max(var(sqrt(r_N) * (T_B - T)), nu)`` over bootstrap rows."""
    draws = np.atleast_2d(np.asarray(draws, dtype=float))
    if draws.shape[0] < 2:
        raise ParameterError("need at least two bootstrap draws")
    z = math.sqrt(r_N) * (draws - np.asarray(t_hat)[None, :])
    return np.maximum(z.var(axis=0, ddof=1), nu)


def contact_set(tproc: TProcess, variance: np.ndarray, tau: float) -> ContactSet:
    """Levels with ``|sqrt(r_N) T(p)| <= tau * sqrt(V(p))``."""
    variance = np.asarray(variance, dtype=float)
    if math.isinf(tau):
        mask = np.ones(len(tproc.levels), dtype=bool)
    else:
        mask = np.abs(math.sqrt(tproc.r_N) * tproc.values) <= tau * np.sqrt(variance)
    return ContactSet(tproc.levels, mask, tau, variance)


def derivative_statistic(statistic: str, contact: ContactSet, h: np.ndarray) -> np.ndarray:
    """Estimated directional derivative of ``S`` or ``I`` at ``h``.

    ``h`` may be one process or a stack of processes (one per row).  For
    ``S`` this is the maximum over contact levels; for ``I`` the integral of
    the positive part over segments whose endpoints both lie in the contact
    set.

    Raises
    ------
    InfeasibleTestError
        Empty contact set with the ``S`` statistic.
    """
    h = np.asarray(h, dtype=float)
    if statistic == "S":
        if contact.empty:
            raise InfeasibleTestError("estimated contact set is empty")
        return h[..., contact.mask].max(axis=-1)
    if statistic == "I":
        seg = _positive_part_segments(h, contact.all_levels)
        keep = contact.mask[:-1] & contact.mask[1:]
        return (seg * keep).sum(axis=-1)
    raise ParameterError(f"unknown statistic {statistic!r}")


def critical_value(draws, alpha: float) -> float:
    """The ``ceil(B (1 - alpha))``-th smallest draw."""
    d = np.sort(np.asarray(draws, dtype=float))
    k = math.ceil(len(d) * (1.0 - alpha) - 1e-9)
    return float(d[max(k, 1) - 1])


def p_values(draws, observed: float) -> tuple[float, float]:
    """``((1 + #{draws >= obs}) / (B + 1), #{draws >= obs} / B)``."""
    d = np.asarray(draws, dtype=float)
    hits = int(np.count_nonzero(d >= observed))
    return (1 + hits) / (len(d) + 1), hits / len(d)


# ---------------------------------------------------------------------------
# Bootstrap


@dataclass(frozen=True)
class BaseProblem:
    """Base fits shared read-only by every bootstrap replication."""

    config: TestConfig
    grid: BallGrid
    operator: CurveOperator
    x: Sample
    y: Sample
    cost_x: np.ndarray = field(repr=False)
    cost_y: np.ndarray = field(repr=False)
    map_x: QuantileMap = field(repr=False)
    map_y: QuantileMap = field(repr=False)

    @property
    def n1(self) -> int:
        return self.x.size

    @property
    def n2(self) -> int:
        return self.y.size

    def curves(self, rho_x: np.ndarray, rho_y: np.ndarray) -> dict[int, np.ndarray]:
        """Difference processes ``T`` for both orders."""
        op = self.operator
        return {1: op.first(rho_y) - op.first(rho_x), 2: op.second(rho_y) - op.second(rho_x)}


def _as_unweighted(sample) -> Sample:
    s = sample if isinstance(sample, Sample) else Sample(sample)
    if s.weights is not None:
        raise ParameterError("test inputs must be unweighted samples")
    return s


def prepare(sample_x, sample_y, config: TestConfig) -> BaseProblem:
    """Fit both base quantile maps on a common grid."""
    x, y = _as_unweighted(sample_x), _as_unweighted(sample_y)
    if x.dimension != y.dimension:
        raise DimensionError(f"samples have dimensions {x.dimension} and {y.dimension}")
    grid = config.grid(x.dimension, x.size, y.size)
    op = CurveOperator(grid, config.levels, config.bandwidth)
    if config.order == 1 and not op.first_mask.any():
        raise ParameterError("every radial band is empty; increase the bandwidth")
    cost_x = cost_matrix(grid.points, x.observations)
    cost_y = cost_matrix(grid.points, y.observations)
    kw = dict(tol=config.tol, max_iter=config.max_iter)
    map_x = fit_quantile_map(x, grid, config.epsilon, cost=cost_x, **kw)
    map_y = fit_quantile_map(y, grid, config.epsilon, cost=cost_y, **kw)
    return BaseProblem(config, grid, op, x, y, cost_x, cost_y, map_x, map_y)


def bootstrap_weights(base: BaseProblem, rep_index: int) -> tuple[np.ndarray, np.ndarray]:
    """Multinomial counts for replication ``rep_index``.

    The stream depends only on ``(config.seed, rep_index)``, so replications
    can run in any order or in parallel.
    """
    ss = np.random.SeedSequence(base.config.seed, spawn_key=(rep_index,))
    rng = np.random.default_rng(ss)
    wx = rng.multinomial(base.n1, np.full(base.n1, 1.0 / base.n1))
    wy = rng.multinomial(base.n2, np.full(base.n2, 1.0 / base.n2))
    return wx, wy


def _refit(base: BaseProblem, which: str, counts: np.ndarray) -> QuantileMap:
    sample, cost, qmap = (
        (base.x, base.cost_x, base.map_x) if which == "x" else (base.y, base.cost_y, base.map_y)
    )
    if np.all(counts == counts[0]):
        # Uniform counts give back the base measure.
        return qmap
    c = base.config
    return fit_quantile_map(
        Sample(sample.observations, counts.astype(float)),
        base.grid,
        c.epsilon,
        tol=c.tol,
        max_iter=c.max_iter,
        warm=qmap.potentials,
        cost=cost,
    )


def bootstrap_process(base: BaseProblem, rep_index: int, weights=None) -> dict[int, np.ndarray]:
    """Bootstrap difference processes ``T_B`` (both orders) for one replication.

    ``weights`` overrides the multinomial counts with a pair ``(W_X, W_Y)``.

    Raises
    ------
    ConvergenceError
        A refit did not converge; the caller counts the replication as failed.
    """
    wx, wy = bootstrap_weights(base, rep_index) if weights is None else weights
    wx, wy = np.asarray(wx), np.asarray(wy)
    if wx.shape != (base.n1,) or wy.shape != (base.n2,):
        raise DimensionError("one bootstrap weight per observation is required")
    rho = base.config.rho
    qx = _refit(base, "x", wx)
    qy = _refit(base, "y", wy)
    return base.curves(rho(qx.images), rho(qy.images))


@dataclass(frozen=True)
class BootstrapDraws:
    """Base difference processes and their bootstrap replications.

    ``t_hat[k]`` and ``draws[k]`` (one row per surviving replication) hold
    order ``k`` on levels ``levels[k]``.
    """

    config: TestConfig
    n1: int
    n2: int
    levels: dict[int, np.ndarray]
    t_hat: dict[int, np.ndarray]
    draws: dict[int, np.ndarray] = field(repr=False)
    curves_x: dict[int, ContributionCurve] = field(repr=False)
    curves_y: dict[int, ContributionCurve] = field(repr=False)
    failed: int
    bandwidth: float

    @property
    def r_N(self) -> float:
        return self.n1 * self.n2 / (self.n1 + self.n2)

    @property
    def lambda_hat(self) -> float:
        return self.n1 / (self.n1 + self.n2)

    def tprocess(self, order: int) -> TProcess:
        return TProcess(self.levels[order], self.t_hat[order], self.r_N, self.lambda_hat)


def bootstrap_draws(sample_x, sample_y, config: TestConfig) -> BootstrapDraws:
    """Fit the base problem and run ``config.B`` bootstrap replications.

    Raises
    ------
    MSDError
        Fewer than ``min_survival * B`` replications converged.
    """
    base = prepare(sample_x, sample_y, config)
    rho = config.rho
    rx, ry = rho(base.map_x.images), rho(base.map_y.images)
    t_hat = base.curves(rx, ry)
    op = base.operator
    rows: dict[int, list[np.ndarray]] = {1: [], 2: []}
    failed = 0
    for rep in range(config.B):
        try:
            tb = bootstrap_process(base, rep)
        except ConvergenceError:
            failed += 1
            continue
        rows[1].append(tb[1])
        rows[2].append(tb[2])
    if config.B - failed < config.min_survival * config.B:
        raise MSDError(f"{failed} of {config.B} bootstrap replications failed to converge")

    levels = {1: op.first_levels, 2: op.levels}

    def curve(order, vals, qmap):
        kind = FIRST if order == 1 else SECOND
        bw = op.bandwidth if order == 1 else None
        dropped = op.dropped_levels if order == 1 else ()
        return ContributionCurve(levels[order], vals, kind, config.epsilon, bw, qmap.sample_size, rho.tag, dropped)

    curves_x = {1: curve(1, op.first(rx), base.map_x), 2: curve(2, op.second(rx), base.map_x)}
    curves_y = {1: curve(1, op.first(ry), base.map_y), 2: curve(2, op.second(ry), base.map_y)}
    draws = {k: np.array(v).reshape(len(v), len(levels[k])) for k, v in rows.items()}
    return BootstrapDraws(
        config, base.n1, base.n2, levels, t_hat, draws, curves_x, curves_y, failed, op.bandwidth
    )


def evaluate(bd: BootstrapDraws, config: TestConfig | None = None) -> TestResult:
    """Decision for one configuration from precomputed bootstrap draws.

    Only ``order``, ``statistic``, ``tau``, ``alpha``, ``nu`` and ``eta``
    are read from ``config`` (default: the config the draws were made with).

    Raises
    ------
    InfeasibleTestError
        Empty contact set with the ``S`` statistic.
    """
    c = bd.config if config is None else config
    k = c.order
    tproc = bd.tprocess(k)
    draws = bd.draws[k]
    root_r = math.sqrt(tproc.r_N)
    if c.statistic == "S":
        observed = root_r * statistic_S(tproc.values)
    else:
        observed = root_r * statistic_I(tproc.values, tproc.levels)
    var = variance_estimate(draws, tproc.values, tproc.r_N, c.nu)
    contact = contact_set(tproc, var, c.tau)
    boot = derivative_statistic(c.statistic, contact, root_r * (draws - tproc.values[None, :]))
    c_hat = critical_value(boot, c.alpha)
    p, p_raw = p_values(boot, observed)
    return TestResult(
        hypothesis=f"H0: X >=_{k} Y",
        config=c,
        n1=bd.n1,
        n2=bd.n2,
        statistic=float(observed),
        critical_value=c_hat,
        p_value=p,
        p_value_raw=p_raw,
        reject=bool(observed > max(c_hat, c.eta)),
        contact=contact,
        tprocess=tproc,
        curve_x=bd.curves_x[k],
        curve_y=bd.curves_y[k],
        draws=np.sort(boot),
        failed_reps=bd.failed,
        bandwidth=bd.bandwidth if k == 1 else None,
    )


def run_test(sample_x, sample_y, config: TestConfig | None = None) -> TestResult:
    """Test ``H0: X dominates Y`` at ``config.order``.

    Swap the arguments to test the reverse direction.
    """
    config = config or TestConfig()
    return evaluate(bootstrap_draws(sample_x, sample_y, config), config)


def evaluate_grid(
    bd: BootstrapDraws,
    orders=(1, 2),
    statistics=STATISTICS,
    taus=(math.inf,),
    alphas=(0.1,),
) -> dict[tuple, TestResult | None]:
    """Results for every ``(order, statistic, tau, alpha)`` combination.

    Infeasible combinations map to ``None``.
    """
    out: dict[tuple, TestResult | None] = {}
    for order in orders:
        for stat in statistics:
            for tau in taus:
                for alpha in alphas:
                    cfg = replace(bd.config, order=order, statistic=stat, tau=tau, alpha=alpha)
                    try:
                        out[(order, stat, tau, alpha)] = evaluate(bd, cfg)
                    except InfeasibleTestError:
                        out[(order, stat, tau, alpha)] = None
    return out


# ---------------------------------------------------------------------------
# Baseline: CDF comparison on a bivariate quantile grid


def _cdf_factors(obs: np.ndarray, z1: np.ndarray, z2: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """Indicator factors whose outer product averages to the joint CDF on ``z1 x z2``."""
    return (obs[:, :1] <= z1[None, :]).astype(float), (obs[:, 1:] <= z2[None, :]).astype(float)


def baseline_cdf_test(
    sample_x,
    sample_y,
    order: int = 1,
    permutations: int = 1000,
    grid_size: int = 50,
    seed: int = 0,
) -> float:
    """Permutation p-value of a bivariate CDF-dominance test of ``H0: X dominates Y``.

    The joint empirical CDFs ``D_X`` and ``D_Y`` are evaluated on the
    product of pooled marginal quantiles at levels ``k / (grid_size + 1)``.
    Order 1 uses ``sup (D_X - D_Y)``; order 2 uses the integral of
    ``D_X - D_Y`` over the grid box (trapezoid rule).  Both are large when X
    puts more mass in lower orthants.  The p-value is
    ``(1 + #{permuted >= observed}) / (permutations + 1)`` over random
    relabelings of the pooled sample.
    """
    x = _as_unweighted(sample_x).observations
    y = _as_unweighted(sample_y).observations
    if x.shape[1] != 2 or y.shape[1] != 2:
        raise DimensionError("the baseline test supports d = 2 only")
    if order not in (1, 2):
        raise ParameterError(f"order must be 1 or 2, got {order}")
    pooled = np.vstack([x, y])
    q = np.arange(1, grid_size + 1) / (grid_size + 1)
    z1 = np.quantile(pooled[:, 0], q)
    z2 = np.quantile(pooled[:, 1], q)
    A, Bm = _cdf_factors(pooled, z1, z2)
    n1 = len(x)

    def stat(labels_x: np.ndarray) -> float:
        dx = A[labels_x].T @ Bm[labels_x] / labels_x.sum()
        dy = A[~labels_x].T @ Bm[~labels_x] / (~labels_x).sum()
        if order == 1:
            return float((dx - dy).max())
        return float(trapezoid(trapezoid(dx - dy, z2, axis=1), z1))

    labels = np.zeros(len(pooled), dtype=bool)
    labels[:n1] = True
    observed = stat(labels)
    rng = np.random.default_rng(seed)
    hits = 0
    for _ in range(permutations):
        hits += stat(rng.permutation(labels)) >= observed
    return (1 + hits) / (permutations + 1)
