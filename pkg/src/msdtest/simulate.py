"""Samplers and Monte Carlo drivers for the dominance experiments.

Distributions are described by :class:`DistributionSpec` (a tag plus
parameters) so experiment files can declare them as plain mappings::

    {"kind": "multinormal", "mean": [0, 0], "cov": [[4, 1], [1, "$beta"]]}

Strings of the form ``"$name"`` are placeholders filled from the sweep.
"""

from __future__ import annotations

import csv
import io
import math
import os
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field, fields, replace
from pathlib import Path
from typing import Any

import numpy as np
from scipy.stats import norm

from .contribution import RhoFn
from .errors import MSDError, ParameterError
from .quantile import Sample
from .sdtest import STATISTICS, TestConfig, bootstrap_draws, evaluate_grid
from .transforms import MonotoneMap, apply_map, symmetrize

WORKERS_ENV = "MSDTEST_WORKERS"
CENTERING_DRAWS = 50_000
KINDS = ("multinormal", "skew-t", "gauss-mixture", "clayton-normal", "example2", "rotated")


@dataclass(frozen=True)
class DistributionSpec:
    kind: str
    params: dict = field(default_factory=dict)

    def __post_init__(self):
        if self.kind not in KINDS:
            raise ParameterError(f"unknown distribution kind {self.kind!r}")

    @classmethod
    def from_dict(cls, data: dict) -> DistributionSpec:
        data = dict(data)
        kind = data.pop("kind", None)
        if kind is None:
            raise ParameterError("distribution entry needs a 'kind'")
        if kind == "rotated":
            data["inner"] = cls.from_dict(data["inner"])
        return cls(kind, data)

    def substitute(self, values: dict[str, float]) -> DistributionSpec:
        return DistributionSpec(self.kind, _substitute(self.params, values))


def _substitute(obj: Any, values: dict[str, float]) -> Any:
    if isinstance(obj, str) and obj.startswith("$"):
        try:
            return values[obj[1:]]
        except KeyError as exc:
            raise ParameterError(f"no value for placeholder {obj!r}") from exc
    if isinstance(obj, DistributionSpec):
        return obj.substitute(values)
    if isinstance(obj, dict):
        return {k: _substitute(v, values) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_substitute(v, values) for v in obj]
    return obj


def _spd(cov, name: str = "covariance") -> np.ndarray:
    c = np.atleast_2d(np.asarray(cov, dtype=float))
    if c.shape[0] != c.shape[1] or not np.allclose(c, c.T, atol=1e-12):
        raise ParameterError(f"{name} must be a symmetric square matrix")
    try:
        return np.linalg.cholesky(c)
    except np.linalg.LinAlgError as exc:
        raise ParameterError(f"{name} is not positive definite") from exc


# ---------------------------------------------------------------------------
# Samplers


def _multinormal(rng, n, mean, cov):
    L = _spd(cov)
    mean = np.asarray(mean, dtype=float)
    return mean + rng.standard_normal((n, len(mean))) @ L.T


def _gauss_mixture(rng, n, weights, means, covs):
    w = np.asarray(weights, dtype=float)
    if np.any(w < 0) or abs(w.sum() - 1) > 1e-10:
        raise ParameterError("mixture weights must be nonnegative and sum to 1")
    means = np.asarray(means, dtype=float)
    chols = [_spd(c) for c in covs]
    if len(means) != len(w) or len(chols) != len(w):
        raise ParameterError("one mean and covariance per component is required")
    # Normals before labels: a one-component mixture reproduces the
    # multinormal stream exactly.
    z = rng.standard_normal((n, means.shape[1]))
    labels = rng.choice(len(w), size=n, p=w)
    out = np.empty_like(z)
    for k, L in enumerate(chols):
        sel = labels == k
        out[sel] = means[k] + z[sel] @ L.T
    return out


def _skew_t_raw(rng, n, xi, Sigma, alpha, nu):
    """Azzalini skew-t: skew-normal divided by ``sqrt(W / nu)``."""
    Sigma = np.asarray(Sigma, dtype=float)
    _spd(Sigma, "Sigma")
    omega = np.sqrt(np.diag(Sigma))
    corr = Sigma / np.outer(omega, omega)
    alpha = np.asarray(alpha, dtype=float)
    delta = corr @ alpha / math.sqrt(1.0 + alpha @ corr @ alpha)
    L = _spd(corr - np.outer(delta, delta), "skew-normal residual covariance")
    d = len(omega)
    u0 = np.abs(rng.standard_normal(n))
    z = u0[:, None] * delta[None, :] + rng.standard_normal((n, d)) @ L.T
    if math.isinf(nu):
        scale = np.ones(n)
    else:
        scale = np.sqrt(rng.chisquare(nu, size=n) / nu)
    return np.asarray(xi, dtype=float) + omega * z / scale[:, None]


def _skew_t(rng, n, xi, Sigma, alpha, nu, center=True, scale=1.0, center_draws=CENTERING_DRAWS):
    if not nu > 0:
        raise ParameterError("nu must be positive")
    if center and not nu > 1:
        raise ParameterError("centering needs a finite mean (nu > 1)")
    x = scale * _skew_t_raw(rng, n, xi, Sigma, alpha, nu)
    if center:
        # The mean is estimated from a separate large batch, not the sample.
        x -= scale * _skew_t_raw(rng, center_draws, xi, Sigma, alpha, nu).mean(axis=0)
    return x


def _clayton_normal(rng, n, means, sds, theta):
    if not theta > 0:
        raise ParameterError(f"theta must be positive, got {theta}")
    means = np.asarray(means, dtype=float)
    sds = np.asarray(sds, dtype=float)
    # Marshall-Olkin: gamma frailty, then the Laplace transform of the
    # generator applied to exponentials.
    v = rng.gamma(1.0 / theta, 1.0, size=n)
    e = rng.exponential(size=(n, len(means)))
    u = (1.0 + e / v[:, None]) ** (-1.0 / theta)
    return means + sds * norm.ppf(u)


def _example2(rng, n, t):
    z = rng.standard_normal((n, 2))
    z[:, 0] = np.where(z[:, 0] > 0, t * z[:, 0], z[:, 0])
    return z


def rotation_matrix(angle_deg: float) -> np.ndarray:
    th = math.radians(angle_deg)
    return np.array([[math.cos(th), -math.sin(th)], [math.sin(th), math.cos(th)]])


def rotate_sample(sample, rotation) -> np.ndarray:
    """Left-multiply every observation by an orthogonal, determinant-one matrix."""
    R = np.asarray(rotation, dtype=float)
    if R.ndim != 2 or R.shape[0] != R.shape[1]:
        raise ParameterError("rotation must be a square matrix")
    if not np.allclose(R @ R.T, np.eye(len(R)), atol=1e-10) or abs(np.linalg.det(R) - 1) > 1e-10:
        raise ParameterError("rotation must be orthogonal with determinant 1")
    x = sample.observations if isinstance(sample, Sample) else np.asarray(sample, dtype=float)
    return x @ R.T


def _draw(spec: DistributionSpec, n: int, rng: np.random.Generator) -> np.ndarray:
    p = spec.params
    if spec.kind == "multinormal":
        return _multinormal(rng, n, p["mean"], p["cov"])
    if spec.kind == "gauss-mixture":
        return _gauss_mixture(rng, n, p["weights"], p["means"], p["covs"])
    if spec.kind == "skew-t":
        return _skew_t(
            rng,
            n,
            p.get("xi", [0.0, 0.0]),
            p.get("Sigma", np.eye(len(p.get("xi", [0.0, 0.0])))),
            p["alpha"],
            float(p["nu"]),
            bool(p.get("center", True)),
            float(p.get("scale", 1.0)),
        )
    if spec.kind == "clayton-normal":
        return _clayton_normal(rng, n, p["means"], p["sds"], float(p["theta"]))
    if spec.kind == "example2":
        return _example2(rng, n, float(p["t"]))
    # rotated
    inner = _draw(p["inner"], n, rng)
    R = np.asarray(p["matrix"], dtype=float) if "matrix" in p else rotation_matrix(float(p["angle_deg"]))
    return rotate_sample(inner, R)


def sample(spec: DistributionSpec, n: int, seed) -> Sample:
    """``n`` i.i.d. draws; deterministic for a given seed (int or SeedSequence)."""
    if n < 2:
        raise ParameterError(f"need n >= 2, got {n}")
    return Sample(_draw(spec, int(n), np.random.default_rng(seed)))


# ---------------------------------------------------------------------------
# Experiments


@dataclass(frozen=True)
class ExperimentSpec:
    """A Monte Carlo rejection-rate study.

    ``sweep`` maps one placeholder name to the values it takes; the table
    has one column block per value.  ``preprocess`` optionally names a
    monotone map and a symmetrization mode applied to both samples.
    """

    name: str
    x: DistributionSpec
    y: DistributionSpec
    n1: int
    n2: int
    config: TestConfig
    reps: int
    sweep_name: str | None = None
    sweep_values: tuple = ()
    orders: tuple[int, ...] = (1, 2)
    statistics: tuple[str, ...] = STATISTICS
    taus: tuple[float, ...] = (math.inf,)
    alphas: tuple[float, ...] = (0.1,)
    seed: int = 0
    preprocess: dict | None = None

    def __post_init__(self):
        if self.reps < 1 or self.n1 < 2 or self.n2 < 2:
            raise ParameterError("reps must be >= 1 and sample sizes >= 2")
        if self.sweep_name is not None and not self.sweep_values:
            raise ParameterError("sweep needs at least one value")

    @property
    def points(self) -> list:
        return list(self.sweep_values) if self.sweep_name else [None]

    @classmethod
    def from_dict(cls, data: dict, full: bool = False) -> ExperimentSpec:
        data = dict(data)
        overrides = data.pop("full", None) or {}
        test = dict(data.pop("test", None) or {})
        if full:
            test.update(overrides.get("test", {}))
            data.update({k: v for k, v in overrides.items() if k != "test"})
        if "tau" in test:
            test["tau"] = _parse_tau(test["tau"])
        if "rho" in test:
            test["rho"] = RhoFn.parse(str(test["rho"]))
        unknown = set(test) - {f.name for f in fields(TestConfig)}
        if unknown:
            raise ParameterError(f"unknown test keys: {sorted(unknown)}")
        config = TestConfig(**test)
        sweep = data.pop("sweep", None) or {}
        if len(sweep) > 1:
            raise ParameterError("only one sweep parameter is supported")
        sweep_name, sweep_values = (next(iter(sweep.items())) if sweep else (None, ()))
        n1 = int(data.pop("n1"))
        n2 = int(data.pop("n2", n1))
        return cls(
            name=str(data.pop("name", "experiment")),
            x=DistributionSpec.from_dict(data.pop("x")),
            y=DistributionSpec.from_dict(data.pop("y")),
            n1=n1,
            n2=n2,
            config=config,
            reps=int(data.pop("reps")),
            sweep_name=sweep_name,
            sweep_values=tuple(sweep_values),
            orders=tuple(int(o) for o in data.pop("orders", (1, 2))),
            statistics=tuple(data.pop("statistics", STATISTICS)),
            taus=tuple(_parse_tau(t) for t in data.pop("taus", ("inf",))),
            alphas=tuple(float(a) for a in data.pop("alphas", (0.1,))),
            seed=int(data.pop("seed", 0)),
            preprocess=data.pop("preprocess", None),
            **_leftover(data),
        )


def _leftover(data: dict) -> dict:
    data.pop("description", None)
    if data:
        raise ParameterError(f"unknown experiment keys: {sorted(data)}")
    return {}


def _parse_tau(value) -> float:
    if isinstance(value, str) and value.strip().lower() in ("inf", "infinity", "∞"):
        return math.inf
    return float(value)


def _preprocess(x: np.ndarray, pre: dict | None, seed) -> np.ndarray:
    if not pre:
        return x
    if "map" in pre:
        x = apply_map(MonotoneMap.parse(pre["map"]), x)
    mode = pre.get("symmetrize")
    if mode == "random":
        x = symmetrize(x, seed=np.random.default_rng(seed), exact_max_dim=0).points
    elif mode is not None:
        raise ParameterError(f"unsupported symmetrize mode {mode!r} for testing")
    return x


@dataclass(frozen=True)
class ReplicationOutcome:
    point: int
    rep: int
    decisions: dict  # (order, stat, tau, alpha) -> bool | None
    failed: bool = False


def _replicate(spec: ExperimentSpec, point_index: int, rep: int) -> ReplicationOutcome:
    ss = np.random.SeedSequence(spec.seed, spawn_key=(point_index, rep))
    sx, sy, sb, sp = ss.spawn(4)
    value = spec.points[point_index]
    subs = {spec.sweep_name: value} if spec.sweep_name else {}
    x = sample(spec.x.substitute(subs), spec.n1, sx).observations
    y = sample(spec.y.substitute(subs), spec.n2, sy).observations
    px, py = sp.spawn(2)
    x = _preprocess(x, spec.preprocess, px)
    y = _preprocess(y, spec.preprocess, py)
    boot_seed = int(sb.generate_state(1)[0])
    try:
        bd = bootstrap_draws(x, y, replace(spec.config, seed=boot_seed))
    except MSDError:
        return ReplicationOutcome(point_index, rep, {}, failed=True)
    grid = evaluate_grid(bd, spec.orders, spec.statistics, spec.taus, spec.alphas)
    return ReplicationOutcome(
        point_index, rep, {k: (None if r is None else r.reject) for k, r in grid.items()}
    )


def _replicate_star(args):
    return _replicate(*args)


def resolve_workers(workers: int | None = None) -> int:
    if workers is None:
        workers = int(os.environ.get(WORKERS_ENV, "1"))
    return max(1, int(workers))


@dataclass(frozen=True)
class TableCell:
    sweep_value: Any
    order: int
    statistic: str
    tau: float
    alpha: float
    rate: float
    rejections: int
    feasible: int
    infeasible: int
    failed: int


@dataclass(frozen=True)
class ExperimentTable:
    spec: ExperimentSpec
    cells: tuple[TableCell, ...]

    def rate(self, sweep_value=None, order=1, statistic="S", tau=math.inf, alpha=0.1) -> float:
        for c in self.cells:
            if (c.sweep_value, c.order, c.statistic, c.tau, c.alpha) == (sweep_value, order, statistic, tau, alpha):
                return c.rate
        raise KeyError((sweep_value, order, statistic, tau, alpha))

    def to_csv(self) -> str:
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(
            [self.spec.sweep_name or "sweep", "order", "statistic", "tau", "alpha", "rate",
             "rejections", "feasible", "infeasible", "failed"]
        )
        for c in self.cells:
            w.writerow(
                [c.sweep_value, c.order, c.statistic, _tau_text(c.tau), c.alpha,
                 "nan" if math.isnan(c.rate) else f"{c.rate:.4f}", c.rejections, c.feasible,
                 c.infeasible, c.failed]
            )
        return buf.getvalue()

    def to_text(self) -> str:
        """Aligned table: rows (order, statistic, tau), columns (alpha, sweep value)."""
        spec = self.spec
        cols = [(a, v) for a in spec.alphas for v in spec.points]
        head = ["order", "stat", "tau"] + [
            f"a={a:g}" + ("" if v is None else f",{spec.sweep_name}={v}") for a, v in cols
        ]
        lines = [head]
        for order in spec.orders:
            for stat in spec.statistics:
                for tau in spec.taus:
                    row = [str(order), stat, _tau_text(tau)]
                    for a, v in cols:
                        r = self.rate(v, order, stat, tau, a)
                        row.append("  -  " if math.isnan(r) else f"{r:.3f}")
                    lines.append(row)
        widths = [max(len(r[i]) for r in lines) for i in range(len(head))]
        return "\n".join("  ".join(s.rjust(wd) for s, wd in zip(r, widths)) for r in lines) + "\n"

    def write(self, stem: str | Path) -> tuple[Path, Path]:
        stem = Path(stem)
        csv_path, txt_path = stem.with_suffix(".csv"), stem.with_suffix(".txt")
        csv_path.write_text(self.to_csv())
        txt_path.write_text(self.to_text())
        return csv_path, txt_path


def _tau_text(tau: float) -> str:
    return "inf" if math.isinf(tau) else f"{tau:g}"


def run_experiment(spec: ExperimentSpec, workers: int | None = None) -> ExperimentTable:
    """Rejection rates for every sweep value and table cell.

    Each replication is seeded from ``(spec.seed, sweep index, replication)``
    alone, so the table does not depend on the worker count.  A cell's rate
    is the share of rejections among replications where that cell was
    feasible; it is NaN when fewer than 95% of replications produced a
    decision (bootstrap failures or empty contact sets).
    """
    tasks = [(spec, i, r) for i in range(len(spec.points)) for r in range(spec.reps)]
    workers = resolve_workers(workers)
    if workers > 1:
        with ProcessPoolExecutor(max_workers=workers) as pool:
            outcomes = list(pool.map(_replicate_star, tasks, chunksize=1))
    else:
        outcomes = [_replicate(*t) for t in tasks]
    outcomes.sort(key=lambda o: (o.point, o.rep))

    cells = []
    for i, value in enumerate(spec.points):
        mine = [o for o in outcomes if o.point == i]
        failed = sum(o.failed for o in mine)
        for order in spec.orders:
            for stat in spec.statistics:
                for tau in spec.taus:
                    for alpha in spec.alphas:
                        key = (order, stat, tau, alpha)
                        vals = [o.decisions.get(key) for o in mine if not o.failed]
                        decided = [v for v in vals if v is not None]
                        infeasible = len(vals) - len(decided)
                        rej = int(sum(decided))
                        ok = len(decided) >= 0.95 * spec.reps
                        rate = rej / len(decided) if ok and decided else math.nan
                        cells.append(
                            TableCell(value, order, stat, tau, alpha, rate, rej, len(decided), infeasible, failed)
                        )
    return ExperimentTable(spec, tuple(cells))
