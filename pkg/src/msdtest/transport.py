"""Discrete optimal transport for the quadratic cost ``c(x, y) = |x - y|^2 / 2``.

Two solvers live here.  :func:`solve_exact` solves the unregularized
Kantorovich linear program and is meant as a small-scale oracle.
:func:`sinkhorn` solves the entropic problem

    min_pi  <C, pi> + eps * KL(pi | mu (x) nu)

and returns dual potentials ``(psi, phi)`` such that

    pi_ij = mu_i nu_j exp((psi_i + phi_j - C_ij) / eps).

The Sinkhorn loop runs scaling updates on a kernel that is re-centred on the
current potentials whenever the scalings drift (absorption), so it never
forms ``exp(-C / eps)`` directly and stays finite for small ``eps``.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
from scipy.optimize import linear_sum_assignment, linprog
from scipy.sparse import csr_matrix, hstack, identity, kron

from .errors import DimensionError, OracleCapError, ParameterError

ORACLE_CAP = 250_000
DEFAULT_TOL = 1e-8
DEFAULT_MAX_ITER = 10_000

# Scalings are folded back into the potentials once |log u| or |log v|
# exceeds this value.
_ABSORB_AT = 30.0
_CHECK_EVERY = 5
# Problems with at most this many target atoms get Newton polishing when
# plain scaling stalls (it converges sublinearly once the plan is nearly a
# permutation).
_NEWTON_MAX_ATOMS = 1500
_SCALING_BUDGET = 300
_NEWTON_STEPS = 60
_SCALING_RATIO = 4.0
_STAGE_TOL = 1e-6


@dataclass(frozen=True)
class DiscreteMeasure:
    points: np.ndarray
    weights: np.ndarray

    def __post_init__(self):
        pts = np.asarray(self.points, dtype=float)
        if pts.ndim == 1:
            pts = pts[:, None]
        w = np.asarray(self.weights, dtype=float)
        if pts.ndim != 2 or w.ndim != 1 or len(w) != len(pts):
            raise DimensionError(
                f"points {pts.shape} and weights {w.shape} do not describe one measure"
            )
        if len(w) == 0:
            raise ParameterError("measure has no atoms")
        if np.any(w < 0) or not np.all(np.isfinite(w)):
            raise ParameterError("weights must be finite and nonnegative")
        if abs(w.sum() - 1.0) > 1e-10:
            raise ParameterError(f"weights sum to {w.sum():.12g}, expected 1")
        if not np.all(np.isfinite(pts)):
            raise ParameterError("points must be finite")
        object.__setattr__(self, "points", pts)
        object.__setattr__(self, "weights", w)

    @classmethod
    def uniform(cls, points) -> DiscreteMeasure:
        pts = np.asarray(points, dtype=float)
        return cls(pts, np.full(len(pts), 1.0 / len(pts)))

    @property
    def size(self) -> int:
        return len(self.weights)

    @property
    def dimension(self) -> int:
        return self.points.shape[1]

    def mean(self) -> np.ndarray:
        return self.weights @ self.points


@dataclass(frozen=True)
class TransportPlan:
    coupling: np.ndarray
    source: DiscreteMeasure
    target: DiscreteMeasure

    @property
    def cost(self) -> float:
        """Transport cost ``sum_ij C_ij pi_ij`` (no entropy term)."""
        return float(np.sum(cost_matrix(self.source, self.target) * self.coupling))

    def marginal_error(self) -> float:
        rows = np.abs(self.coupling.sum(axis=1) - self.source.weights).sum()
        cols = np.abs(self.coupling.sum(axis=0) - self.target.weights).sum()
        return float(max(rows, cols))

    def barycentric_images(self) -> np.ndarray:
        """Conditional mean of the target given each source atom."""
        mass = self.coupling.sum(axis=1)
        out = np.zeros((self.source.size, self.target.dimension))
        ok = mass > 0
        out[ok] = (self.coupling[ok] @ self.target.points) / mass[ok, None]
        return out


@dataclass(frozen=True)
class DualPotentials:
    """Entropic potentials, normalized so that ``sum_i mu_i psi_i = 0``."""

    psi: np.ndarray
    phi: np.ndarray
    epsilon: float
    normalization: str = "source-mean-zero"


@dataclass
class SinkhornReport:
    iterations: int
    marginal_error: float
    converged: bool
    warm_started: bool
    history: list[float] = field(default_factory=list, repr=False)


def _as_points(obj) -> np.ndarray:
    if isinstance(obj, DiscreteMeasure):
        return obj.points
    pts = np.asarray(obj, dtype=float)
    return pts[:, None] if pts.ndim == 1 else pts


def cost_matrix(source, target) -> np.ndarray:
    """Pairwise ``|x_i - y_j|^2 / 2``; accepts measures or point arrays."""
    x, y = _as_points(source), _as_points(target)
    if x.shape[1] != y.shape[1]:
        raise DimensionError(f"dimension mismatch: {x.shape[1]} vs {y.shape[1]}")
    sq = (x * x).sum(1)[:, None] + (y * y).sum(1)[None, :] - 2.0 * (x @ y.T)
    return 0.5 * np.maximum(sq, 0.0)


def _check_pair(source: DiscreteMeasure, target: DiscreteMeasure) -> None:
    if source.dimension != target.dimension:
        raise DimensionError(
            f"dimension mismatch: source {source.dimension}, target {target.dimension}"
        )


def solve_exact(
    source: DiscreteMeasure, target: DiscreteMeasure, cap: int = ORACLE_CAP
) -> TransportPlan:
    """Optimal plan of the unregularized problem.

    Equal-size uniform marginals go through an assignment solver, so the plan
    is a permutation matrix divided by ``n``; anything else is solved as a
    linear program over the coupling polytope.
    """
    _check_pair(source, target)
    n, m = source.size, target.size
    if n * m > cap:
        raise OracleCapError(f"exact solve of a {n}x{m} problem exceeds the cap of {cap} entries")
    C = cost_matrix(source, target)
    a, b = source.weights, target.weights
    if n == m and np.allclose(a, 1.0 / n, rtol=0, atol=1e-14) and np.allclose(b, 1.0 / m, rtol=0, atol=1e-14):
        rows, cols = linear_sum_assignment(C)
        plan = np.zeros((n, m))
        plan[rows, cols] = 1.0 / n
        return TransportPlan(plan, source, target)

    # Row-sum constraints: kron(I_n, 1_m); column sums: kron(1_n, I_m).
    row_op = kron(identity(n, format="csr"), csr_matrix(np.ones((1, m))))
    col_op = kron(csr_matrix(np.ones((1, n))), identity(m, format="csr"))
    A_eq = csr_matrix(np.zeros((0, n * m)))
    A_eq = csr_matrix(hstack([row_op.T, col_op.T]).T)
    res = linprog(
        C.ravel(),
        A_eq=A_eq,
        b_eq=np.concatenate([a, b]),
        bounds=(0, None),
        method="highs",
    )
    if res.status != 0:
        raise ParameterError(f"transport LP failed: {res.message}")
    plan = np.maximum(res.x.reshape(n, m), 0.0)
    return TransportPlan(plan, source, target)


def _lse(Z: np.ndarray, axis: int) -> np.ndarray:
    # Lean log-sum-exp; inputs here are always finite.
    m = Z.max(axis=axis, keepdims=True)
    return (np.log(np.exp(Z - m).sum(axis=axis, keepdims=True)) + m).squeeze(axis)


def _soft_min_rows(g: np.ndarray, C: np.ndarray, log_b: np.ndarray, eps: float) -> np.ndarray:
    """psi_i = -eps log sum_j nu_j exp((phi_j - C_ij) / eps)."""
    return -eps * _lse((g[None, :] - C) / eps + log_b[None, :], axis=1)


def _soft_min_cols(f: np.ndarray, C: np.ndarray, log_a: np.ndarray, eps: float) -> np.ndarray:
    return -eps * _lse((f[:, None] - C) / eps + log_a[:, None], axis=0)


def _log_marginal_error(f, g, C, log_a, log_b, a, b, eps) -> float:
    logP = (f[:, None] + g[None, :] - C) / eps + log_a[:, None] + log_b[None, :]
    P = np.exp(logP)
    return float(max(np.abs(P.sum(1) - a).sum(), np.abs(P.sum(0) - b).sum()))


def _sinkhorn_core(a, b, C, eps, tol, max_iter, f, g):
    """Scaling iterations with absorption; returns ``(f, g, iterations, err)``.

    ``a`` and ``b`` must be strictly positive.
    """
    log_a, log_b = np.log(a), np.log(b)
    # Exact soft-min sweeps make the kernel well scaled before the loop.
    if g is None:
        f = _soft_min_rows(np.zeros(len(b)), C, log_b, eps)
        g = _soft_min_cols(f, C, log_a, eps)
    f = _soft_min_rows(g, C, log_b, eps)

    def kernel():
        return np.exp((f[:, None] + g[None, :] - C) / eps)

    K = kernel()
    u = np.ones(len(a))
    v = np.ones(len(b))
    err = np.inf
    it = 0
    while it < max_iter:
        it += 1
        Kv = K @ (b * v)
        if not np.all(Kv > 0) or not np.all(np.isfinite(Kv)):
            f = f + eps * np.log(u)
            g = g + eps * np.log(v)
            f = _soft_min_rows(g, C, log_b, eps)
            u[:] = 1.0
            v[:] = 1.0
            K = kernel()
            Kv = K @ b
        u = 1.0 / Kv
        Ku = K.T @ (a * u)
        if not np.all(Ku > 0) or not np.all(np.isfinite(Ku)):
            f = f + eps * np.log(u)
            g = g + eps * np.log(v)
            g = _soft_min_cols(f, C, log_a, eps)
            u[:] = 1.0
            v[:] = 1.0
            K = kernel()
            Ku = K.T @ a
        v = 1.0 / Ku
        if it % _CHECK_EVERY == 0 or it == max_iter:
            row = a * u * (K @ (b * v))
            err = float(np.abs(row - a).sum())
            if err <= tol:
                break
        if np.abs(np.log(u)).max() > _ABSORB_AT or np.abs(np.log(v)).max() > _ABSORB_AT:
            f = f + eps * np.log(u)
            g = g + eps * np.log(v)
            u[:] = 1.0
            v[:] = 1.0
            K = kernel()
    f = f + eps * np.log(u)
    g = g + eps * np.log(v)
    return f, g, it, err


def _semidual(g, C, log_b, a, b, eps):
    """Row-optimal ``f``, row conditionals ``q`` and the semi-dual value."""
    Z = (g[None, :] - C) / eps + log_b[None, :]
    lse = _lse(Z, axis=1)
    f = -eps * lse
    q = np.exp(Z - lse[:, None])
    return f, q, float(a @ f + b @ g)


def _newton_polish(a, b, C, eps, g, tol, max_steps):
    """Damped Newton ascent on the semi-dual in ``g``.

    The Hessian is a weighted sum of categorical covariance matrices; the
    ``1 - q`` factor of each row's dominant entry is formed from the other
    entries to avoid cancellation.  The constant null direction is removed by
    an eigenvalue cutoff.  Returns ``(f, g, steps, column_error)``.
    """
    log_b = np.log(b)
    f, q, J = _semidual(g, C, log_b, a, b, eps)
    rows = np.arange(len(a))
    err = float(np.abs(b - a @ q).sum())
    steps = 0
    while steps < max_steps and err > tol:
        steps += 1
        grad = b - a @ q
        top = q.argmax(axis=1)
        one_minus = 1.0 - q
        others = q.copy()
        others[rows, top] = 0.0
        one_minus[rows, top] = others.sum(axis=1)
        H = -(q.T * a) @ q
        H[np.diag_indices_from(H)] = (a[:, None] * q * one_minus).sum(axis=0)
        w, V = np.linalg.eigh(H / eps)
        keep = w > w.max() * 1e-14
        step = V[:, keep] @ ((V[:, keep].T @ grad) / w[keep])
        t = 1.0
        while t > 1e-10:
            f2, q2, J2 = _semidual(g + t * step, C, log_b, a, b, eps)
            if J2 >= J - 1e-15 * abs(J):
                break
            t *= 0.5
        else:
            break
        g, f, q, J = g + t * step, f2, q2, J2
        err = float(np.abs(b - a @ q).sum())
    return f, g, steps, err


def _solve_stage(a, b, C, eps, tol, max_iter, g, polish):
    """Scaling iterations, then Newton polishing when they stall.

    At most ``max_iter`` iterations in total; a Newton step counts as one.
    """
    budget = min(max_iter, _SCALING_BUDGET) if polish else max_iter
    f, g, iters, err = _sinkhorn_core(a, b, C, eps, tol, budget, None, g)
    if err > tol and polish and iters < max_iter:
        f, g, steps, err = _newton_polish(a, b, C, eps, g, tol, min(_NEWTON_STEPS, max_iter - iters))
        iters += steps
        if err > tol and iters < max_iter:
            f, g, k, err = _sinkhorn_core(a, b, C, eps, tol, max_iter - iters, None, g)
            iters += k
    return f, g, iters, err


def sinkhorn(
    source: DiscreteMeasure,
    target: DiscreteMeasure,
    epsilon: float,
    tol: float = DEFAULT_TOL,
    max_iter: int = DEFAULT_MAX_ITER,
    warm: DualPotentials | None = None,
    cost: np.ndarray | None = None,
) -> tuple[DualPotentials, SinkhornReport]:
    """Entropic potentials between two discrete measures.

    Parameters
    ----------
    source, target : DiscreteMeasure
        Marginals ``mu`` and ``nu``.  Atoms with zero weight are allowed; they
        carry no mass and their potential is the soft c-transform of the
        other side.
    epsilon : float
        Regularization on the raw ``|x - y|^2 / 2`` cost scale.
    tol : float
        Target L1 violation of the row marginal of the implied plan (the
        column marginal is matched exactly by the last half-step).
    warm : DualPotentials, optional
        Starting potentials.  They only change the iteration count.
    cost : ndarray, optional
        Precomputed cost matrix, to avoid rebuilding it in loops.

    Returns
    -------
    potentials : DualPotentials
    report : SinkhornReport
        ``converged`` is False when ``max_iter`` was exhausted; the caller
        decides whether that is fatal.
    """
    _check_pair(source, target)
    if not epsilon > 0:
        raise ParameterError(f"epsilon must be positive, got {epsilon}")
    if not tol > 0:
        raise ParameterError(f"tol must be positive, got {tol}")
    eps = float(epsilon)
    C = cost_matrix(source, target) if cost is None else cost
    a, b = source.weights, target.weights
    ia, ib = np.flatnonzero(a > 0), np.flatnonzero(b > 0)
    Cs = C[np.ix_(ia, ib)]
    a_s, b_s = a[ia], b[ib]

    g0 = None
    if warm is not None:
        g0 = np.asarray(warm.phi, dtype=float)[ib]
    polish = len(b_s) <= _NEWTON_MAX_ATOMS
    iters = 0
    if warm is None and polish:
        # Cold start at small eps: solve a geometric sequence of larger eps
        # first so every stage starts close to its own optimum.
        schedule = []
        stage = float(Cs.max())
        while stage > _SCALING_RATIO * eps:
            schedule.append(stage)
            stage /= _SCALING_RATIO
        for stage in schedule:
            if iters >= max_iter:
                break
            _, g0, k = _solve_stage(a_s, b_s, Cs, stage, _STAGE_TOL, max_iter - iters, g0, polish)[:3]
            iters += k
    if iters < max_iter:
        f_s, g_s, k, err = _solve_stage(a_s, b_s, Cs, eps, tol, max_iter - iters, g0, polish)
        iters += k
    else:
        g_s = np.zeros(len(b_s)) if g0 is None else g0
        f_s = _soft_min_rows(g_s, Cs, np.log(b_s), eps)

    log_a_s, log_b_s = np.log(a_s), np.log(b_s)
    err = _log_marginal_error(f_s, g_s, Cs, log_a_s, log_b_s, a_s, b_s, eps)

    psi = np.empty(len(a))
    phi = np.empty(len(b))
    psi[ia] = f_s
    phi[ib] = g_s
    if len(ia) < len(a):
        psi[np.setdiff1d(np.arange(len(a)), ia)] = _soft_min_rows(
            g_s, C[np.ix_(np.setdiff1d(np.arange(len(a)), ia), ib)], log_b_s, eps
        )
    if len(ib) < len(b):
        rest = np.setdiff1d(np.arange(len(b)), ib)
        phi[rest] = _soft_min_cols(f_s, C[np.ix_(ia, rest)], log_a_s, eps)
    shift = float(a @ psi)
    psi -= shift
    phi += shift

    report = SinkhornReport(
        iterations=iters,
        marginal_error=err,
        converged=bool(err <= tol),
        warm_started=warm is not None,
    )
    return DualPotentials(psi, phi, eps), report


def plan_from_potentials(
    potentials: DualPotentials,
    source: DiscreteMeasure,
    target: DiscreteMeasure,
    cap: int = 25_000_000,
) -> TransportPlan:
    """Materialize ``pi_ij = mu_i nu_j exp((psi_i + phi_j - C_ij) / eps)``."""
    _check_pair(source, target)
    if source.size * target.size > cap:
        raise OracleCapError(f"plan of {source.size}x{target.size} exceeds the cap of {cap} entries")
    C = cost_matrix(source, target)
    eps = potentials.epsilon
    with np.errstate(divide="ignore"):
        log_a, log_b = np.log(source.weights), np.log(target.weights)
    logP = (potentials.psi[:, None] + potentials.phi[None, :] - C) / eps
    logP = logP + log_a[:, None] + log_b[None, :]
    return TransportPlan(np.exp(logP), source, target)


def entropic_map(potentials: DualPotentials, target: DiscreteMeasure, x) -> np.ndarray:
    """Barycentric projection of the entropic plan at ``x``.

    ``T(x) = sum_j y_j w_j(x) / sum_j w_j(x)`` with
    ``w_j(x) = nu_j exp((phi_j - |x - y_j|^2 / 2) / eps)``.  Accepts a single
    point of shape ``(d,)`` or a batch ``(k, d)``.
    """
    x = np.asarray(x, dtype=float)
    single = x.ndim == 1
    xs = x[None, :] if single else x
    if xs.shape[1] != target.dimension:
        raise DimensionError(f"point dimension {xs.shape[1]} != target dimension {target.dimension}")
    out = barycentric_from_logits(
        (potentials.phi[None, :] - cost_matrix(xs, target.points)) / potentials.epsilon,
        target,
    )
    return out[0] if single else out


def barycentric_from_logits(logits: np.ndarray, target: DiscreteMeasure) -> np.ndarray:
    """Rows of ``softmax(logits + log nu) @ Y``; zero-weight atoms get no mass."""
    keep = target.weights > 0
    z = logits[:, keep] + np.log(target.weights[keep])[None, :]
    z -= z.max(axis=1, keepdims=True)
    w = np.exp(z)
    w /= w.sum(axis=1, keepdims=True)
    return w @ target.points[keep]


def entropic_cost(potentials: DualPotentials, source: DiscreteMeasure, target: DiscreteMeasure) -> float:
    """Transport term ``<C, pi_eps>`` of the entropic plan (KL term excluded)."""
    return plan_from_potentials(potentials, source, target).cost
