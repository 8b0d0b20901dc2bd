"""Vector autoregressions fitted by least squares, for residual extraction.

``fit_var`` regresses ``y_t`` on an intercept and ``y_{t-1}, ..., y_{t-p}``
equation by equation; ``select_order`` picks ``p`` by

    AIC(p) = log det(Sigma_e) + 2 (d^2 p + d) / T_eff

where ``Sigma_e`` is the residual covariance (divided by ``T_eff``) and all
candidate orders are fitted on the same ``T - p_max`` observations so the
criteria are comparable.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import DimensionError, ParameterError


@dataclass(frozen=True)
class VarFit:
    order: int
    coefs: np.ndarray  # (p, d, d); coefs[k] multiplies y_{t-k-1}
    intercept: np.ndarray
    residuals: np.ndarray
    sigma: np.ndarray
    aic: float

    @property
    def dimension(self) -> int:
        return self.intercept.shape[0]


def _as_series(series) -> np.ndarray:
    y = np.asarray(series, dtype=float)
    if y.ndim == 1:
        y = y[:, None]
    if y.ndim != 2:
        raise DimensionError("series must be a T x d matrix")
    if not np.all(np.isfinite(y)):
        raise ParameterError("series contains non-finite values")
    return y


def _design(y: np.ndarray, p: int, start: int) -> tuple[np.ndarray, np.ndarray]:
    """Regressors ``[1, y_{t-1}, ..., y_{t-p}]`` and targets for ``t >= start``."""
    T = len(y)
    lags = [y[start - k : T - k] for k in range(1, p + 1)]
    X = np.hstack([np.ones((T - start, 1))] + lags)
    return X, y[start:]


def _fit(y: np.ndarray, p: int, start: int) -> VarFit:
    d = y.shape[1]
    X, Y = _design(y, p, start)
    if len(X) <= X.shape[1]:
        raise ParameterError(f"too few observations ({len(y)}) for a VAR({p}) in {d} dimensions")
    if np.linalg.matrix_rank(X) < X.shape[1]:
        raise ParameterError("singular regressor matrix")
    B, *_ = np.linalg.lstsq(X, Y, rcond=None)
    resid = Y - X @ B
    T_eff = len(Y)
    sigma = resid.T @ resid / T_eff
    sign, logdet = np.linalg.slogdet(sigma)
    if sign <= 0:
        raise ParameterError("residual covariance is singular")
    aic = float(logdet + 2.0 * (d * d * p + d) / T_eff)
    coefs = B[1:].reshape(p, d, d).transpose(0, 2, 1)
    return VarFit(p, coefs, B[0], resid, sigma, aic)


def fit_var(series, p: int) -> VarFit:
    """Least-squares VAR(``p``) with intercept; residuals in time order (``T - p`` rows)."""
    if int(p) != p or p < 1:
        raise ParameterError(f"order must be a positive integer, got {p}")
    y = _as_series(series)
    if len(y) <= y.shape[1] * p + y.shape[1] + 1:
        raise ParameterError(f"too few observations ({len(y)}) for a VAR({p})")
    return _fit(y, int(p), int(p))


def aic_table(series, p_max: int) -> dict[int, float]:
    """AIC of every order ``1..p_max`` on the common estimation sample."""
    if int(p_max) != p_max or p_max < 1:
        raise ParameterError(f"p_max must be a positive integer, got {p_max}")
    y = _as_series(series)
    return {p: _fit(y, p, p_max).aic for p in range(1, p_max + 1)}


def select_order(series, p_max: int) -> int:
    """Order with the smallest AIC; ties go to the smaller order."""
    table = aic_table(series, p_max)
    best = min(table.values())
    return min(p for p, v in table.items() if v == best)


def split_residuals(fit: VarFit, break_index: int, window: int | None = None) -> tuple[np.ndarray, np.ndarray]:
    """Residual rows ``[:break_index]`` and ``[break_index:]``.

    ``window`` keeps the last ``window`` rows before the break and the first
    ``window`` rows after it.
    """
    e = fit.residuals
    n = len(e)
    if int(break_index) != break_index or not 0 < break_index < n:
        raise ParameterError(f"break index {break_index} outside (0, {n})")
    before, after = e[:break_index], e[break_index:]
    if window is not None:
        if window < 1:
            raise ParameterError("window must be positive")
        before, after = before[-window:], after[:window]
    return before, after


def simulate_var(coefs, intercept, n: int, seed, sigma=None, burn: int = 200) -> np.ndarray:
    """Gaussian VAR path of length ``n`` after ``burn`` discarded steps."""
    A = np.asarray(coefs, dtype=float)
    if A.ndim == 2:
        A = A[None]
    p, d, _ = A.shape
    c = np.asarray(intercept, dtype=float).reshape(d)
    L = np.linalg.cholesky(np.eye(d) if sigma is None else np.asarray(sigma, dtype=float))
    rng = np.random.default_rng(seed)
    total = n + burn + p
    e = rng.standard_normal((total, d)) @ L.T
    y = np.zeros((total, d))
    for t in range(p, total):
        y[t] = c + e[t] + sum(A[k] @ y[t - k - 1] for k in range(p))
    return y[-n:]
