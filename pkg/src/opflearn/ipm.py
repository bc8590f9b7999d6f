"""Primal-dual interior-point solver for convex QPs with linear constraints.

Solves

    min 1/2 x' Q x + q' x   s.t.   A x = b,   G x <= h

with Q symmetric positive semidefinite, via a Mehrotra-style
predictor-corrector method on the perturbed KKT system. Setting Q = 0 gives
the LP mode used by the L1 feasibility projection. Redundant equality rows are
removed by a rank-revealing QR at setup, so stacked power-balance blocks that
share a linear dependence are handled transparently.

The solver is deterministic for identical inputs and options. One solver call
owns its workspace; share problems, not solutions, across threads.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass, field

import numpy as np
import scipy.linalg

logger = logging.getLogger(__name__)

STATUS_OPTIMAL = "optimal"
STATUS_INFEASIBLE = "infeasible"
STATUS_MAX_ITER = "max_iter"

_STEP_BACK = 0.995  # fraction-to-boundary factor
_STALL_LIMIT = 3
_DIVERGENCE_NORM = 1e12


@dataclass(frozen=True)
class SolverOptions:
    tolerance: float = 1e-8
    max_iter: int = 100
    verbosity: int = 0
    debug: bool = False  # record the merit-function trace
    initial_perturbation: float = 0.0  # relative jitter of the starting point
    perturbation_seed: int = 0


@dataclass
class QpSolution:
    x: np.ndarray
    y: np.ndarray  # equality multipliers (aligned with the original rows)
    z: np.ndarray  # inequality multipliers
    s: np.ndarray  # inequality slacks
    status: str
    iterations: int
    kkt_residuals: tuple[float, float, float]  # (primal, dual, complementarity)
    objective: float
    merit_history: list[float] = field(default_factory=list)


def _as_2d(a: np.ndarray | None, n: int) -> np.ndarray:
    if a is None:
        return np.zeros((0, n))
    a = np.asarray(a, dtype=float)
    if a.ndim != 2 or a.shape[1] != n:
        raise ValueError(f"constraint matrix must be 2-D with {n} columns, got {a.shape}")
    return a


def _as_1d(v: np.ndarray | None, rows: int, name: str) -> np.ndarray:
    if v is None:
        return np.zeros(0)
    v = np.asarray(v, dtype=float).ravel()
    if v.shape != (rows,):
        raise ValueError(f"{name} must have length {rows}, got {v.shape}")
    return v


def independent_rows(a: np.ndarray, rhs: np.ndarray) -> tuple[np.ndarray, bool]:
    """Indices of a maximal independent row subset of ``a``, plus consistency.

    Uses a column-pivoted QR of ``a.T``. The second return value is False when
    some dropped (dependent) row is inconsistent with the retained ones, i.e.
    the equality system is infeasible.
    """
    p, n = a.shape
    if p == 0:
        return np.zeros(0, dtype=int), True
    _, r, piv = scipy.linalg.qr(a.T, mode="economic", pivoting=True)
    diag = np.abs(np.diag(r))
    if diag.size == 0 or diag[0] == 0.0:
        rank = 0
    else:
        rank = int(np.sum(diag > diag[0] * max(a.shape) * np.finfo(float).eps * 10))
    keep = np.sort(piv[:rank])
    if rank == p:
        return keep, True
    if rank == 0:
        x_ls = np.zeros(n)
    else:
        x_ls, *_ = np.linalg.lstsq(a[keep], rhs[keep], rcond=None)
    dropped = np.setdiff1d(np.arange(p), keep)
    residual = a[dropped] @ x_ls - rhs[dropped]
    consistent = bool(np.max(np.abs(residual), initial=0.0) <= 1e-8 * (1.0 + np.max(np.abs(rhs))))
    return keep, consistent


class _AugmentedSolver:
    """Factorization of [[H, A'], [A, -dI]] shared by all same-iteration solves.

    The system grows severely ill-conditioned as the barrier parameter
    vanishes (the z/s scaling blows up on active rows), so raw LU steps stop
    making dual-residual progress around 1e-7. Each solve therefore applies
    iterative refinement against the factored matrix, which restores
    close-to-machine-precision Newton directions at the cost of one matrix
    product per round. Regularization escalates only if factorization fails.
    """

    def __init__(self, h_mat: np.ndarray, a_mat: np.ndarray):
        self.n = h_mat.shape[0]
        self.p = a_mat.shape[0]
        scale = max(1.0, float(np.max(np.abs(h_mat), initial=0.0)))
        delta = 0.0
        for _ in range(6):
            kkt = np.zeros((self.n + self.p, self.n + self.p))
            kkt[: self.n, : self.n] = h_mat
            if delta:
                kkt[: self.n, : self.n] += delta * scale * np.eye(self.n)
            if self.p:
                kkt[: self.n, self.n:] = a_mat.T
                kkt[self.n:, : self.n] = a_mat
                if delta:
                    kkt[self.n:, self.n:] = -delta * scale * np.eye(self.p)
            try:
                factors = scipy.linalg.lu_factor(kkt, check_finite=False)
            except (scipy.linalg.LinAlgError, ValueError):
                factors = None
            if factors is not None and np.all(np.isfinite(factors[0])):
                probe = scipy.linalg.lu_solve(
                    factors, np.ones(self.n + self.p), check_finite=False
                )
                if np.all(np.isfinite(probe)):
                    self.kkt = kkt
                    self.factors = factors
                    return
            delta = 1e-12 if delta == 0.0 else delta * 100.0
        raise np.linalg.LinAlgError("KKT system is numerically singular")

    def solve(self, rhs_x: np.ndarray, rhs_y: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
        rhs = np.concatenate([rhs_x, rhs_y])
        sol = scipy.linalg.lu_solve(self.factors, rhs, check_finite=False)
        norm = 1.0 + float(np.max(np.abs(rhs), initial=0.0))
        for _ in range(2):
            residual = self.kkt @ sol - rhs
            if float(np.max(np.abs(residual), initial=0.0)) <= 1e-14 * norm:
                break
            correction = scipy.linalg.lu_solve(self.factors, residual, check_finite=False)
            if not np.all(np.isfinite(correction)):
                break
            sol = sol - correction
        return sol[: self.n], sol[self.n:]


def _max_step(v: np.ndarray, dv: np.ndarray) -> float:
    neg = dv < 0
    if not np.any(neg):
        return 1.0
    return float(min(1.0, np.min(-v[neg] / dv[neg])))


def _polish_duals(q_mat, q_vec, a_mat, g_mat, h_vec, x, s, tol):
    """Recover multipliers by least squares on the stationarity equation.

    Near convergence the primal iterate is exact while the multipliers stall
    at the accuracy floor of the barrier steps. With the active set read off
    the slacks, solving  A' y + G_act' z = -(Q x + q)  directly gives duals
    accurate to machine precision. Clipped to keep z non-negative; the caller
    re-checks the residuals and only accepts an actual improvement.
    """
    active = s <= np.sqrt(tol) * (1.0 + np.abs(h_vec))
    p = a_mat.shape[0]
    columns = [a_mat.T] if p else []
    if np.any(active):
        columns.append(g_mat[active].T)
    if not columns:
        return np.zeros(0), np.zeros(g_mat.shape[0])
    stacked = np.hstack(columns)
    sol, *_ = np.linalg.lstsq(stacked, -(q_mat @ x + q_vec), rcond=None)
    y = sol[:p]
    z = np.zeros(g_mat.shape[0])
    if np.any(active):
        z[active] = np.maximum(sol[p:], 0.0)
    return y, z


def solve_qp(
    quadratic: np.ndarray,
    linear: np.ndarray,
    a_eq: np.ndarray | None = None,
    b_eq: np.ndarray | None = None,
    a_ineq: np.ndarray | None = None,
    b_ineq: np.ndarray | None = None,
    options: SolverOptions | None = None,
) -> QpSolution:
    """Solve the canonical convex QP; see the module docstring for the form.

    Returns a QpSolution whose ``status`` is "optimal" only when all three KKT
    residuals (primal, dual, complementarity) are at or below the configured
    tolerance. On "max_iter" the best iterate found is returned; "infeasible"
    carries the last iterate for diagnosis.
    """
    opts = options or SolverOptions()
    q_vec = np.asarray(linear, dtype=float).ravel()
    n = q_vec.shape[0]
    q_mat = np.asarray(quadratic, dtype=float)
    if q_mat.shape != (n, n):
        raise ValueError(f"quadratic term must be {n}x{n}, got {q_mat.shape}")
    a_full = _as_2d(a_eq, n)
    b_full = _as_1d(b_eq, a_full.shape[0], "b_eq")
    g_mat = _as_2d(a_ineq, n)
    h_vec = _as_1d(b_ineq, g_mat.shape[0], "b_ineq")
    m = g_mat.shape[0]

    keep, consistent = independent_rows(a_full, b_full)
    a_mat = a_full[keep]
    b_vec = b_full[keep]
    p = a_mat.shape[0]

    def expand_y(y_red: np.ndarray) -> np.ndarray:
        y = np.zeros(a_full.shape[0])
        y[keep] = y_red
        return y

    if not consistent:
        x = np.zeros(n)
        return QpSolution(
            x=x, y=expand_y(np.zeros(p)), z=np.zeros(m), s=np.zeros(m),
            status=STATUS_INFEASIBLE, iterations=0,
            kkt_residuals=(float("inf"), float("inf"), float("inf")),
            objective=float("nan"),
        )

    # Starting point: least-squares equality solution, analytic-center slacks.
    if p:
        x = np.linalg.lstsq(a_mat, b_vec, rcond=None)[0]
    else:
        x = np.zeros(n)
    if opts.initial_perturbation:
        rng = np.random.default_rng(opts.perturbation_seed)
        x = x + opts.initial_perturbation * rng.standard_normal(n)

    if m == 0:
        return _solve_equality_qp(q_mat, q_vec, a_mat, b_vec, expand_y, opts, x)

    s = np.maximum(1.0, h_vec - g_mat @ x)
    z = np.ones(m)
    if opts.initial_perturbation:
        rng = np.random.default_rng(opts.perturbation_seed + 1)
        s = s * (1.0 + opts.initial_perturbation * rng.random(m))
        z = z * (1.0 + opts.initial_perturbation * rng.random(m))
    y = np.zeros(p)

    best: tuple[float, np.ndarray, np.ndarray, np.ndarray, np.ndarray] | None = None
    merit_history: list[float] = []
    stall_count = 0
    status = STATUS_MAX_ITER
    iterations = 0

    def residuals(x, y, z, s):
        r_d = q_mat @ x + q_vec + g_mat.T @ z + (a_mat.T @ y if p else 0.0)
        r_p = (a_mat @ x - b_vec) if p else np.zeros(0)
        r_i = g_mat @ x + s - h_vec
        return r_d, r_p, r_i

    def kkt_norms(r_d, r_p, r_i, z, s):
        primal = max(
            float(np.max(np.abs(r_p), initial=0.0)), float(np.max(np.abs(r_i), initial=0.0))
        )
        dual = float(np.max(np.abs(r_d), initial=0.0))
        comp = float(np.max(z * s, initial=0.0))
        return primal, dual, comp

    for iterations in range(1, opts.max_iter + 1):
        r_d, r_p, r_i = residuals(x, y, z, s)
        primal, dual, comp = kkt_norms(r_d, r_p, r_i, z, s)
        merit = float(np.linalg.norm(r_d) + np.linalg.norm(r_p) + np.linalg.norm(r_i) + z @ s / m)
        if opts.debug:
            merit_history.append(merit)
        if best is None or merit < best[0]:
            best = (merit, x.copy(), y.copy(), z.copy(), s.copy())
        if opts.verbosity >= 2:
            logger.info(
                "iter %3d primal %.3e dual %.3e comp %.3e", iterations, primal, dual, comp
            )

        if primal <= opts.tolerance and dual <= opts.tolerance and comp <= opts.tolerance:
            status = STATUS_OPTIMAL
            break
        if primal <= opts.tolerance and comp <= opts.tolerance and dual > opts.tolerance:
            # x has converged; the duals are stuck at the barrier's accuracy
            # floor. Try an exact multiplier recovery before iterating on.
            y_new, z_new = _polish_duals(q_mat, q_vec, a_mat, g_mat, h_vec, x, s, opts.tolerance)
            r_d_new, r_p_new, r_i_new = residuals(x, y_new, z_new, s)
            p_new, d_new, c_new = kkt_norms(r_d_new, r_p_new, r_i_new, z_new, s)
            if max(p_new, d_new, c_new) <= opts.tolerance:
                y, z = y_new, z_new
                status = STATUS_OPTIMAL
                break

        dual_norm = max(float(np.max(np.abs(z), initial=0.0)), float(np.max(np.abs(y), initial=0.0)))
        if dual_norm > _DIVERGENCE_NORM * (1.0 + float(np.max(np.abs(q_vec), initial=0.0))):
            status = STATUS_INFEASIBLE
            break

        mu = float(z @ s) / m
        w = z / np.maximum(s, 1e-300)
        h_aug = q_mat + (g_mat * w[:, None]).T @ g_mat
        kkt = _AugmentedSolver(h_aug, a_mat)

        # Predictor (affine scaling, sigma = 0).
        rc_aff = z * s
        rhs_x = -r_d + g_mat.T @ ((rc_aff - z * r_i) / s)
        dx_a, dy_a = kkt.solve(rhs_x, -r_p)
        ds_a = -r_i - g_mat @ dx_a
        dz_a = -(rc_aff + z * ds_a) / s

        alpha_aff = min(_max_step(s, ds_a), _max_step(z, dz_a))
        mu_aff = float((z + alpha_aff * dz_a) @ (s + alpha_aff * ds_a)) / m
        sigma = min(1.0, max(0.0, (mu_aff / mu))) ** 3

        # Corrector with centering.
        rc = z * s - sigma * mu + ds_a * dz_a
        rhs_x = -r_d + g_mat.T @ ((rc - z * r_i) / s)
        dx, dy = kkt.solve(rhs_x, -r_p)
        ds = -r_i - g_mat @ dx
        dz = -(rc + z * ds) / s

        alpha = _STEP_BACK * min(_max_step(s, ds), _max_step(z, dz))

        # Keep the merit monotone when a cheap backtrack suffices.
        accepted = False
        for _ in range(5):
            x_n, y_n = x + alpha * dx, y + alpha * dy
            z_n, s_n = z + alpha * dz, s + alpha * ds
            r_d_n, r_p_n, r_i_n = residuals(x_n, y_n, z_n, s_n)
            merit_n = float(
                np.linalg.norm(r_d_n) + np.linalg.norm(r_p_n) + np.linalg.norm(r_i_n)
                + z_n @ s_n / m
            )
            if merit_n <= merit * (1.0 + 1e-9):
                accepted = True
                break
            alpha *= 0.5
        x, y, z, s = x_n, y_n, z_n, s_n
        if not accepted and opts.verbosity >= 1:
            logger.info("iter %d: non-monotone step accepted (merit %.3e)", iterations, merit_n)

        if alpha < 1e-10:
            stall_count += 1
            if stall_count >= _STALL_LIMIT:
                status = STATUS_INFEASIBLE if primal > 1e3 * opts.tolerance else STATUS_MAX_ITER
                break
        else:
            stall_count = 0
    else:
        iterations = opts.max_iter

    if status != STATUS_OPTIMAL and status != STATUS_INFEASIBLE and best is not None:
        _, x, y, z, s = best
    r_d, r_p, r_i = residuals(x, y, z, s)
    final = kkt_norms(r_d, r_p, r_i, z, s)
    if status == STATUS_OPTIMAL and max(final) > opts.tolerance:  # pragma: no cover
        status = STATUS_MAX_ITER
    objective = float(0.5 * x @ q_mat @ x + q_vec @ x)
    return QpSolution(
        x=x, y=expand_y(y), z=z, s=s, status=status, iterations=iterations,
        kkt_residuals=final, objective=objective, merit_history=merit_history,
    )


def _solve_equality_qp(q_mat, q_vec, a_mat, b_vec, expand_y, opts, x0) -> QpSolution:
    """Direct KKT solve for the inequality-free special case."""
    n = q_vec.shape[0]
    p = a_mat.shape[0]
    try:
        dx, y = _AugmentedSolver(q_mat, a_mat).solve(
            -(q_mat @ x0 + q_vec), -(a_mat @ x0 - b_vec) if p else np.zeros(0)
        )
    except np.linalg.LinAlgError:
        return QpSolution(
            x=x0, y=expand_y(np.zeros(p)), z=np.zeros(0), s=np.zeros(0),
            status=STATUS_MAX_ITER, iterations=1,
            kkt_residuals=(float("inf"), float("inf"), 0.0), objective=float("nan"),
        )
    x = x0 + dx
    r_d = q_mat @ x + q_vec + (a_mat.T @ y if p else 0.0)
    r_p = a_mat @ x - b_vec if p else np.zeros(0)
    primal = float(np.max(np.abs(r_p), initial=0.0))
    dual = float(np.max(np.abs(r_d), initial=0.0))
    ok = primal <= opts.tolerance and dual <= opts.tolerance
    return QpSolution(
        x=x, y=expand_y(y), z=np.zeros(0), s=np.zeros(0),
        status=STATUS_OPTIMAL if ok else STATUS_MAX_ITER, iterations=1,
        kkt_residuals=(primal, dual, 0.0),
        objective=float(0.5 * x @ q_mat @ x + q_vec @ x),
    )


def solve_lp(
    linear: np.ndarray,
    a_eq: np.ndarray | None = None,
    b_eq: np.ndarray | None = None,
    a_ineq: np.ndarray | None = None,
    b_ineq: np.ndarray | None = None,
    options: SolverOptions | None = None,
) -> QpSolution:
    """LP mode: solve_qp with a zero quadratic term."""
    c = np.asarray(linear, dtype=float).ravel()
    return solve_qp(np.zeros((c.size, c.size)), c, a_eq, b_eq, a_ineq, b_ineq, options)
