"""Command-line interface.

Subcommands
-----------
test           two-sample dominance test with report and curve files
curves         first- and second-order contribution curves of one sample
simulate       Monte Carlo rejection-rate table from an experiment config
var-residuals  VAR fit with AIC order choice and residuals split at a break
transform      monotone map, sign symmetrization or background mixing

Data files are comma-separated with one observation per row.  A header is
detected when the first row is not numeric.  ``--weights`` reads the last
column as observation weights.  Exit codes: 0 completed, 1 error,
2 infeasible test (empty contact set).
"""

from __future__ import annotations

import argparse
import csv
import hashlib
import math
import re
import sys
import time
from dataclasses import asdict, dataclass, replace
from datetime import date
from importlib import resources
from pathlib import Path

import numpy as np
import yaml

from . import __version__
from .ballgrid import build_grid, default_grid_shape
from .contribution import CurveOperator, RhoFn
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
from .quantile import DEFAULT_EPSILON, Sample, fit_quantile_map
from .sdtest import TestConfig, run_test
from .simulate import ExperimentSpec, resolve_workers, run_experiment
from .timeseries import aic_table, fit_var, split_residuals
from .transforms import MixtureSpec, MonotoneMap, apply_map, mix_background, symmetrize

EXIT_OK = 0
EXIT_ERROR = 1
EXIT_INFEASIBLE = 2


# ---------------------------------------------------------------------------
# Data files


@dataclass(frozen=True)
class Table:
    header: list[str] | None
    rows: list[list[str]]  # raw tokens, kept for verbatim echo
    values: np.ndarray
    weights: np.ndarray | None


def _is_number(token: str) -> bool:
    try:
        float(token)
    except ValueError:
        return False
    return True


def _read_rows(path: str | Path) -> list[list[str]]:
    with open(path, newline="") as fh:
        return [[t.strip() for t in row] for row in csv.reader(fh) if row and any(t.strip() for t in row)]


def read_table(path: str | Path, weights: bool = False) -> Table:
    """Numeric CSV with an optional header row and optional trailing weights."""
    rows = _read_rows(path)
    header = None
    if rows and not all(_is_number(t) for t in rows[0]):
        header, rows = rows[0], rows[1:]
    if not rows:
        raise DataFormatError(f"{path}: no observations")
    width = len(rows[0])
    for i, row in enumerate(rows):
        if len(row) != width:
            raise DataFormatError(f"{path}: row {i + 1} has {len(row)} fields, expected {width}")
        if not all(_is_number(t) for t in row):
            raise DataFormatError(f"{path}: row {i + 1} is not numeric")
    values = np.array([[float(t) for t in row] for row in rows])
    if not np.all(np.isfinite(values)):
        raise DataFormatError(f"{path}: non-finite values")
    w = None
    if weights:
        if width < 2:
            raise DataFormatError(f"{path}: weight column requested but only one column present")
        values, w = values[:, :-1], values[:, -1]
        if np.any(w < 0) or not w.sum() > 0:
            raise DataFormatError(f"{path}: weights must be nonnegative with positive total")
    return Table(header, rows, values, w)


def _parse_date(token: str) -> date | None:
    try:
        return date.fromisoformat(token)
    except ValueError:
        return None


def read_series(path: str | Path) -> tuple[list[date] | None, np.ndarray, list[str] | None]:
    """Time series CSV whose first column may hold ISO-8601 dates."""
    rows = _read_rows(path)
    header = None
    if rows and _parse_date(rows[0][0]) is None and not all(_is_number(t) for t in rows[0]):
        header, rows = rows[0], rows[1:]
    if not rows:
        raise DataFormatError(f"{path}: no observations")
    dates = None
    if _parse_date(rows[0][0]) is not None:
        dates = []
        for i, row in enumerate(rows):
            d = _parse_date(row[0])
            if d is None:
                raise DataFormatError(f"{path}: row {i + 1} has no ISO date")
            dates.append(d)
        rows = [row[1:] for row in rows]
        if header is not None:
            header = header[1:]
        if any(b <= a for a, b in zip(dates, dates[1:])):
            raise DataFormatError(f"{path}: dates must be strictly increasing")
    width = len(rows[0])
    for i, row in enumerate(rows):
        if len(row) != width or not all(_is_number(t) for t in row):
            raise DataFormatError(f"{path}: row {i + 1} is malformed")
    return dates, np.array([[float(t) for t in row] for row in rows]), header


def _fmt(v: float) -> str:
    return repr(float(v))


def _write_csv(path: Path, header: list[str] | None, rows) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        if header is not None:
            w.writerow(header)
        w.writerows(rows)


def _digest(path: str | Path) -> str:
    return hashlib.sha256(Path(path).read_bytes()).hexdigest()


# ---------------------------------------------------------------------------
# Manifest and reports


def _plain(value):
    if isinstance(value, float) and math.isinf(value):
        return "inf"
    if isinstance(value, RhoFn):
        return value.tag
    if isinstance(value, (list, tuple)):
        return [_plain(v) for v in value]
    if isinstance(value, dict):
        return {k: _plain(v) for k, v in value.items()}
    if isinstance(value, np.generic):
        return value.item()
    return value


def manifest(command: str, config: dict, inputs: list[str], seed) -> str:
    """``manifest.*`` lines: command, resolved config, input digests, seed, version."""
    lines = [f"manifest.command: {command}", f"manifest.version: {__version__}", f"manifest.seed: {seed}"]
    for path in inputs:
        lines.append(f"manifest.input: {Path(path).name} sha256={_digest(path)}")
    for key, val in sorted(config.items()):
        lines.append(f"manifest.config.{key}: {_plain(val)}")
    return "\n".join(lines) + "\n"


def _test_config_dict(config: TestConfig) -> dict:
    d = asdict(config)
    d["rho"] = config.rho.tag
    return d


def _write_report(path: Path, head: str, body: str) -> None:
    path.write_text(head + "\n" + body)


# ---------------------------------------------------------------------------
# Argument helpers


def _tau(text: str) -> float:
    if text.strip().lower() in ("inf", "infinity"):
        return math.inf
    return float(text)


def _levels(text: str | None):
    if text is None:
        return None
    try:
        return tuple(float(t) for t in text.split(","))
    except ValueError as exc:
        raise ParameterError(f"cannot parse levels {text!r}") from exc


def _add_grid_flags(p: argparse.ArgumentParser) -> None:
    p.add_argument("--epsilon", type=float, default=DEFAULT_EPSILON, help="entropic regularization (default 0.2)")
    p.add_argument("--nr", type=int, default=None, help="number of grid shells (default: sized from N)")
    p.add_argument("--ns", type=int, default=None, help="directions per shell (default: sized from N)")
    p.add_argument("--bandwidth", type=float, default=None, help="first-order band half-width (default: shell spacing)")
    p.add_argument("--levels", default=None, help="comma-separated levels in (0, 1] (default: shell radii)")
    p.add_argument("--rho", default="norm", help="norm, squared or capped(c) (default norm)")
    p.add_argument("--weights", action="store_true", help="last column holds observation weights")


def _output_dir(path: str) -> Path:
    out = Path(path)
    out.mkdir(parents=True, exist_ok=True)
    return out


def _unweighted(table: Table, path: str) -> np.ndarray:
    if table.weights is not None and not np.allclose(table.weights, table.weights[0]):
        raise ParameterError(f"{path}: the test needs equally weighted observations")
    return table.values


# ---------------------------------------------------------------------------
# Commands


def _curve_rows(curve):
    return [[_fmt(p), _fmt(v)] for p, v in zip(curve.levels, curve.values)]


def cmd_test(args) -> int:
    tx, ty = read_table(args.x, args.weights), read_table(args.y, args.weights)
    x, y = _unweighted(tx, args.x), _unweighted(ty, args.y)
    if x.shape[1] != y.shape[1]:
        raise DimensionError(f"samples have {x.shape[1]} and {y.shape[1]} columns")
    config = TestConfig(
        order=args.order,
        statistic=args.stat,
        alpha=args.alpha,
        tau=args.tau,
        nu=args.nu,
        B=args.bootstrap,
        epsilon=args.epsilon,
        bandwidth=args.bandwidth,
        levels=_levels(args.levels),
        eta=args.eta_floor,
        seed=args.seed,
        rho=RhoFn.parse(args.rho),
        n_r=args.nr,
        n_s=args.ns,
    )
    out = _output_dir(args.out)
    head = manifest("test", _test_config_dict(config), [args.x, args.y], config.seed)
    report = out / f"{args.prefix}_report.txt"
    try:
        result = run_test(x, y, config)
    except InfeasibleTestError as exc:
        _write_report(report, head, f"status: infeasible\nreason: {exc}\n")
        raise
    _write_report(report, head, "status: completed\n" + result.report())
    _write_csv(out / f"{args.prefix}_curve_x.csv", ["p", "value"], _curve_rows(result.curve_x))
    _write_csv(out / f"{args.prefix}_curve_y.csv", ["p", "value"], _curve_rows(result.curve_y))
    print(f"statistic={result.statistic:.6g} critical_value={result.critical_value:.6g} "
          f"p_value={result.p_value:.4g} reject={str(result.reject).lower()}")
    return EXIT_OK


def cmd_curves(args) -> int:
    table = read_table(args.sample, args.weights)
    sample = Sample(table.values, table.weights)
    if (args.nr is None) != (args.ns is None):
        raise ParameterError("--nr and --ns must be given together")
    if args.nr is None:
        n_r, n_s, origin = default_grid_shape(sample.size)
    else:
        n_r, n_s, origin = args.nr, args.ns, False
    grid = build_grid(sample.dimension, n_r, n_s, origin)
    rho = RhoFn.parse(args.rho)
    op = CurveOperator(grid, _levels(args.levels), args.bandwidth)
    if not op.first_mask.any():
        raise EmptyCurveError("every radial band is empty; increase the bandwidth")
    qmap = fit_quantile_map(sample, grid, args.epsilon)
    r = rho(qmap.images)
    out = _output_dir(args.out)
    config = {
        "epsilon": args.epsilon, "n_r": n_r, "n_s": n_s, "with_origin": origin,
        "bandwidth": op.bandwidth, "levels": args.levels or "shell radii", "rho": rho.tag,
    }
    first = list(zip(op.first_levels, op.first(r)))
    second = list(zip(op.levels, op.second(r)))
    _write_csv(out / f"{args.prefix}_first.csv", ["p", "value"], [[_fmt(p), _fmt(v)] for p, v in first])
    _write_csv(out / f"{args.prefix}_second.csv", ["p", "value"], [[_fmt(p), _fmt(v)] for p, v in second])
    body = [
        f"N: {sample.size}",
        f"d: {sample.dimension}",
        f"sinkhorn_iterations: {qmap.report.iterations if qmap.report else 0}",
        f"dropped_levels: {', '.join(f'{p:g}' for p in op.dropped_levels) or 'none'}",
    ]
    _write_report(out / f"{args.prefix}_curves_report.txt",
                  manifest("curves", config, [args.sample], "none"), "\n".join(body) + "\n")
    return EXIT_OK


def _bundled_config(name: str) -> Path | None:
    res = resources.files("msdtest") / "configs" / f"{name}.yaml"
    return Path(str(res)) if res.is_file() else None


def load_experiment(source: str) -> tuple[dict, Path]:
    path = Path(source)
    if not path.is_file():
        bundled = _bundled_config(source)
        if bundled is None:
            raise FileNotFoundError(f"no config file or bundled config named {source!r}")
        path = bundled
    data = yaml.safe_load(path.read_text())
    if not isinstance(data, dict):
        raise DataFormatError(f"{path}: config must be a mapping")
    return data, path


def cmd_simulate(args) -> int:
    data, path = load_experiment(args.config)
    spec = ExperimentSpec.from_dict(data, full=args.full)
    overrides = {}
    if args.reps is not None:
        overrides["reps"] = args.reps
    if args.seed is not None:
        overrides["seed"] = args.seed
    if args.bootstrap is not None:
        overrides["config"] = replace(spec.config, B=args.bootstrap)
    spec = replace(spec, **overrides)
    table = run_experiment(spec, resolve_workers(args.workers))
    out = _output_dir(args.out)
    stem = out / (args.prefix or spec.name)
    table.write(stem)
    config = {
        "name": spec.name, "n1": spec.n1, "n2": spec.n2, "reps": spec.reps, "full": args.full,
        "sweep": f"{spec.sweep_name}={list(spec.sweep_values)}" if spec.sweep_name else "none",
        "orders": list(spec.orders), "statistics": list(spec.statistics), "taus": list(spec.taus),
        "alphas": list(spec.alphas), "preprocess": spec.preprocess or "none",
        **{f"test.{k}": v for k, v in _test_config_dict(spec.config).items() if k != "seed"},
    }
    _write_report(stem.with_name(stem.name + "_report.txt"),
                  manifest("simulate", config, [str(path)], spec.seed), table.to_text())
    sys.stdout.write(table.to_text())
    return EXIT_OK


def _break_position(dates, n_rows: int, token: str) -> int:
    """Row index of the break in the original series."""
    if dates is not None:
        d = _parse_date(token)
        if d is None:
            raise ParameterError(f"break {token!r} is not an ISO date")
        if d not in dates:
            raise ParameterError(f"break date {token} is not in the series")
        return dates.index(d)
    try:
        i = int(token)
    except ValueError as exc:
        raise ParameterError(f"series has no dates; break must be a row index, got {token!r}") from exc
    if not 0 <= i < n_rows:
        raise ParameterError(f"break row {i} outside the series")
    return i


def cmd_var_residuals(args) -> int:
    dates, y, header = read_series(args.series)
    if args.lags is not None:
        table, p = None, args.lags
    else:
        table = aic_table(y, args.p_max)
        best = min(table.values())
        p = min(k for k, v in table.items() if v == best)
    fit = fit_var(y, p)
    row = _break_position(dates, len(y), args.break_at)
    # Residual k belongs to series row k + p.
    cut = row - p + (0 if args.break_after else 1)
    if cut <= 0:
        raise ParameterError("empty before-window: the break falls within the first lags")
    before, after = split_residuals(fit, cut, args.window)
    out = _output_dir(args.out)
    cols = header or [f"e{k + 1}" for k in range(y.shape[1])]
    _write_csv(out / f"{args.prefix}_before.csv", cols, [[_fmt(v) for v in r] for r in before])
    _write_csv(out / f"{args.prefix}_after.csv", cols, [[_fmt(v) for v in r] for r in after])
    body = [f"selected_order: {p}", f"T: {len(y)}", f"d: {y.shape[1]}", f"aic: {fit.aic!r}"]
    if table is not None:
        body += [f"aic.p{k}: {v!r}" for k, v in table.items()]
    body += [f"intercept: {' '.join(_fmt(v) for v in fit.intercept)}"]
    for k, A in enumerate(fit.coefs):
        body += [f"phi{k + 1}.row{i + 1}: {' '.join(_fmt(v) for v in A[i])}" for i in range(len(A))]
    body += [f"n_before: {len(before)}", f"n_after: {len(after)}"]
    if dates is not None:
        body.append(f"break_date: {dates[row].isoformat()}")
    config = {"p_max": args.p_max, "lags": args.lags or "aic", "break": args.break_at,
              "break_in": "after" if args.break_after else "before", "window": args.window or "none"}
    _write_report(out / f"{args.prefix}_var_report.txt",
                  manifest("var-residuals", config, [args.series], "none"), "\n".join(body) + "\n")
    print(f"selected_order={p} n_before={len(before)} n_after={len(after)}")
    return EXIT_OK


def _parse_mix(text: str) -> float | None:
    m = re.fullmatch(r"\s*mix\(\s*(?:eta\s*=\s*)?([^)]+)\)\s*", text)
    if not m:
        return None
    try:
        return float(m.group(1))
    except ValueError as exc:
        raise ParameterError(f"cannot parse {text!r}") from exc


def cmd_transform(args) -> int:
    table = read_table(args.sample, args.weights)
    header = table.header
    spec = args.spec.strip()
    eta = _parse_mix(spec)
    if spec == "symmetrize":
        if table.weights is not None:
            raise ParameterError("symmetrize expects an unweighted sample")
        m = symmetrize(table.values, seed=args.seed)
        pts, w = m.points, m.weights
        rows = [[_fmt(v) for v in p] + [_fmt(wi)] for p, wi in zip(pts, w)]
        if header is not None:
            header = header + ["weight"]
    elif eta is not None:
        mixed, idx = mix_background(table.values, MixtureSpec(eta), seed=args.seed)
        replaced = set(idx.tolist())
        rows = []
        for i, raw in enumerate(table.rows):
            if i in replaced:
                new = [_fmt(v) for v in mixed[i]]
                rows.append(new + ([raw[-1]] if table.weights is not None else []))
            else:
                rows.append(raw)
    else:
        mapped = apply_map(MonotoneMap.parse(spec), table.values)
        rows = [
            [_fmt(v) for v in mapped[i]] + ([raw[-1]] if table.weights is not None else [])
            for i, raw in enumerate(table.rows)
        ]
    if args.output == "-":
        w = csv.writer(sys.stdout, lineterminator="\n")
        if header is not None:
            w.writerow(header)
        w.writerows(rows)
    else:
        _write_csv(Path(args.output), header, rows)
    return EXIT_OK


# ---------------------------------------------------------------------------
# Entry point


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="msdtest", description="Multivariate stochastic dominance tests.")
    parser.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("test", help="test H0: X dominates Y")
    p.add_argument("x", help="CSV sample of X (the dominating law under H0)")
    p.add_argument("y", help="CSV sample of Y")
    p.add_argument("--order", type=int, choices=(1, 2), default=1)
    p.add_argument("--stat", choices=("S", "I"), default="S", help="sup (S) or integral (I) statistic")
    p.add_argument("--alpha", type=float, default=0.05)
    p.add_argument("--tau", type=_tau, default=math.inf, help="contact-set threshold, or inf (default)")
    p.add_argument("--nu", type=float, default=0.001, help="variance floor")
    p.add_argument("--eta-floor", type=float, default=0.0, help="floor on the critical value")
    p.add_argument("--bootstrap", type=int, default=200, help="bootstrap replications B")
    p.add_argument("--seed", type=int, default=0)
    _add_grid_flags(p)
    p.add_argument("--out", default=".", help="output directory")
    p.add_argument("--prefix", default="msdtest")
    p.set_defaults(func=cmd_test)

    p = sub.add_parser("curves", help="contribution curves of one sample")
    p.add_argument("sample")
    _add_grid_flags(p)
    p.add_argument("--out", default=".")
    p.add_argument("--prefix", default="curves")
    p.set_defaults(func=cmd_curves)

    p = sub.add_parser("simulate", help="rejection-rate table from an experiment config")
    p.add_argument("config", help="YAML file or bundled config name (e.g. table1_desk)")
    p.add_argument("--full", action="store_true", help="use the config's full-scale settings")
    p.add_argument("--reps", type=int, default=None, help="override Monte Carlo replications")
    p.add_argument("--bootstrap", type=int, default=None, help="override B")
    p.add_argument("--seed", type=int, default=None, help="override the master seed")
    p.add_argument("--workers", type=int, default=None, help="worker processes (default: $MSDTEST_WORKERS or 1)")
    p.add_argument("--out", default=".")
    p.add_argument("--prefix", default=None, help="file stem (default: experiment name)")
    p.set_defaults(func=cmd_simulate)

    p = sub.add_parser("var-residuals", help="VAR residuals split at a break")
    p.add_argument("series", help="CSV time series, optional leading ISO date column")
    p.add_argument("--break", dest="break_at", required=True, help="break date, or row index without dates")
    p.add_argument("--break-after", action="store_true", help="place the break row in the after window")
    p.add_argument("--window", type=int, default=None, help="keep this many residuals on each side")
    p.add_argument("--p-max", type=int, default=4, help="largest order tried by AIC")
    p.add_argument("--lags", type=int, default=None, help="fixed VAR order (skips AIC)")
    p.add_argument("--out", default=".")
    p.add_argument("--prefix", default="residuals")
    p.set_defaults(func=cmd_var_residuals)

    p = sub.add_parser("transform", help="map, symmetrize or mix a sample")
    p.add_argument("sample")
    p.add_argument("spec", help='map such as "softplus(a=1,b=0)", "symmetrize" or "mix(eta=0.1)"')
    p.add_argument("-o", "--output", default="-", help="output CSV (default stdout)")
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--weights", action="store_true")
    p.set_defaults(func=cmd_transform)
    return parser


_ERROR_CLASSES = (
    (FileNotFoundError, "file-not-found"),
    (DataFormatError, "data-format"),
    (DimensionError, "dimension"),
    (OracleCapError, "size-cap"),
    (ConvergenceError, "convergence"),
    (EmptyCurveError, "empty-curve"),
    (ParameterError, "config"),
    (MSDError, "error"),
    (ValueError, "config"),
)


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    start = time.perf_counter()
    try:
        code = args.func(args)
    except InfeasibleTestError as exc:
        print(f"infeasible: {exc}", file=sys.stderr)
        code = EXIT_INFEASIBLE
    except (OSError, MSDError, ValueError) as exc:
        label = next((name for cls, name in _ERROR_CLASSES if isinstance(exc, cls)), "io")
        print(f"error[{label}]: {exc}", file=sys.stderr)
        code = EXIT_ERROR
    print(f"wall-clock: {time.perf_counter() - start:.2f} s", file=sys.stderr)
    return code


if __name__ == "__main__":
    sys.exit(main())
