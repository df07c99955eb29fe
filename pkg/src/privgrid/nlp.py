"""Primal-dual interior-point solver for smooth constrained problems.

Problem form::

    min f(x)  s.t.  c_E(x) = 0,  c_I(x) <= 0,  lower <= x <= upper

Bounds are folded into the inequality set (fixed variables into the equality
set), inequalities get positive slacks z with h(x) + z = 0, and each Newton
step solves the condensed KKT system

    [ H + J_h' diag(mu/z) J_h   J_g' ] [dx ]   [ -(grad L + J_h' (mu*h + gamma)/z) ]
    [ J_g                       0    ] [dlam] = [ -g                               ]

A backtracking search on the exact-penalty barrier merit
``f - gamma*sum(log z) + nu*(|g|_1 + |h + z|_1)`` guards the primal step.
"""

from __future__ import annotations

import logging
import math
import time
import warnings
from dataclasses import dataclass, field
from typing import Callable

import numpy as np
import scipy.sparse as sp
from scipy.sparse.linalg import MatrixRankWarning, spsolve

log = logging.getLogger(__name__)

OPTIMAL = "optimal"
INFEASIBLE = "infeasible"
ITERATION_LIMIT = "iteration-limit"
TIMEOUT = "timeout"
NUMERICAL = "numerical"
STATUSES = (OPTIMAL, INFEASIBLE, ITERATION_LIMIT, TIMEOUT, NUMERICAL)
DUAL_BLOWUP = 1e20


class InfeasibleBoundsError(ValueError):
    pass


@dataclass
class NlpProblem:
    """A smooth NLP described by callbacks.

    ``hessian(x, obj_factor, lam_eq, mu_ineq)`` returns the Hessian of
    ``obj_factor*f + lam_eq'c_E + mu_ineq'c_I``; when omitted, a
    finite-difference Hessian of the Lagrangian gradient is used.
    Jacobian callbacks return (m, n) arrays or sparse matrices.
    """

    n: int
    objective: Callable[[np.ndarray], float]
    gradient: Callable[[np.ndarray], np.ndarray]
    x0: np.ndarray | None = None
    lower: np.ndarray | None = None
    upper: np.ndarray | None = None
    eq: Callable[[np.ndarray], np.ndarray] | None = None
    eq_jacobian: Callable | None = None
    ineq: Callable[[np.ndarray], np.ndarray] | None = None
    ineq_jacobian: Callable | None = None
    hessian: Callable | None = None
    name: str = ""

    def __post_init__(self):
        self.lower = np.full(self.n, -np.inf) if self.lower is None else np.asarray(self.lower, float)
        self.upper = np.full(self.n, np.inf) if self.upper is None else np.asarray(self.upper, float)
        if self.lower.shape != (self.n,) or self.upper.shape != (self.n,):
            raise ValueError("bounds must have length n")

    def eval_eq(self, x):
        return np.zeros(0) if self.eq is None else np.asarray(self.eq(x), float)

    def eval_ineq(self, x):
        return np.zeros(0) if self.ineq is None else np.asarray(self.ineq(x), float)

    def eval_eq_jacobian(self, x):
        if self.eq is None:
            return sp.csr_matrix((0, self.n))
        return sp.csr_matrix(self.eq_jacobian(x))

    def eval_ineq_jacobian(self, x):
        if self.ineq is None:
            return sp.csr_matrix((0, self.n))
        return sp.csr_matrix(self.ineq_jacobian(x))

    def violation(self, x) -> float:
        """Largest violation of any constraint or bound at ``x`` (unscaled)."""
        parts = [0.0]
        ce = self.eval_eq(x)
        if ce.size:
            parts.append(np.max(np.abs(ce)))
        ci = self.eval_ineq(x)
        if ci.size:
            parts.append(np.max(ci))
        parts.append(np.max(self.lower - x, initial=0.0))
        parts.append(np.max(x - self.upper, initial=0.0))
        return float(max(parts))


@dataclass
class SolveOptions:
    tol_feas: float = 1e-6
    tol_opt: float = 1e-6
    max_iter: int = 500
    timeout_s: float = 600.0
    restoration_window: int = 100
    restoration_tol: float = 1e-4
    step_fraction: float = 0.99995
    centering: float = 0.1
    # plain Newton steps cut only by the fraction-to-boundary rule converge
    # far more reliably on AC-OPF than the L1-merit backtracking below
    line_search: bool = False
    max_backtracks: int = 12
    second_order_correction: bool = False


@dataclass
class SolveReport:
    status: str
    iterations: int
    primal_infeasibility: float
    dual_infeasibility: float
    objective: float
    wall_time: float
    message: str = ""
    # (merit before, merit after, whether the line search accepted the step)
    merit_history: list[tuple[float, float, bool]] = field(default_factory=list)
    lam_eq: np.ndarray | None = None
    mu_ineq: np.ndarray | None = None

    @property
    def success(self) -> bool:
        return self.status == OPTIMAL


def restore_feasible_start(p: NlpProblem, margin: float = 1e-4) -> np.ndarray:
    """A start point strictly inside the variable bounds.

    Fixed variables sit on their value; a given initial point is pulled in
    by ``margin`` from finite bounds; otherwise finite boxes give their
    midpoint and one-sided bounds a point one unit inside.
    """
    lo, up = p.lower, p.upper
    if np.any(lo > up):
        bad = np.flatnonzero(lo > up)
        raise InfeasibleBoundsError(f"lower > upper for variables {bad.tolist()}")
    x = np.zeros(p.n) if p.x0 is None else np.array(p.x0, dtype=float)
    have_x0 = p.x0 is not None
    for i in range(p.n):
        l, u = lo[i], up[i]
        if l == u:
            x[i] = l
            continue
        lf, uf = np.isfinite(l), np.isfinite(u)
        if not have_x0:
            if lf and uf:
                x[i] = 0.5 * (l + u)
            elif lf:
                x[i] = max(x[i], l + 1.0)
            elif uf:
                x[i] = min(x[i], u - 1.0)
            continue
        m = min(margin, 0.5 * (u - l)) if lf and uf else margin
        if lf and uf and u - l <= 2 * margin:
            x[i] = 0.5 * (l + u)
            continue
        if lf:
            x[i] = max(x[i], l + m)
        if uf:
            x[i] = min(x[i], u - m)
    return x


class _Scaled:
    """Internal view of a problem: bounds folded in, rows and objective scaled."""

    def __init__(self, p: NlpProblem, x0: np.ndarray):
        self.p = p
        n = p.n
        lo, up = p.lower, p.upper
        fixed = np.flatnonzero(lo == up)
        free = lo != up
        ub = np.flatnonzero(free & np.isfinite(up))
        lb = np.flatnonzero(free & np.isfinite(lo))
        self.fixed, self.ub, self.lb = fixed, ub, lb
        self.J_fixed = sp.csr_matrix((np.ones(len(fixed)), (np.arange(len(fixed)), fixed)), shape=(len(fixed), n))
        rows = np.arange(len(ub) + len(lb))
        cols = np.concatenate([ub, lb])
        vals = np.concatenate([np.ones(len(ub)), -np.ones(len(lb))])
        self.J_bounds = sp.csr_matrix((vals, (rows, cols)), shape=(len(rows), n))

        grad = np.asarray(p.gradient(x0), float)
        self.sf = 1.0 / max(1.0, np.max(np.abs(grad), initial=0.0))
        Je = p.eval_eq_jacobian(x0)
        Ji = p.eval_ineq_jacobian(x0)
        self.se = 1.0 / np.maximum(1.0, _row_inf_norm(Je))
        self.si = 1.0 / np.maximum(1.0, _row_inf_norm(Ji))
        self.n_eq_gen = Je.shape[0]
        self.n_in_gen = Ji.shape[0]

    def f(self, x):
        return self.sf * float(self.p.objective(x))

    def df(self, x):
        return self.sf * np.asarray(self.p.gradient(x), float)

    def g(self, x):
        return np.concatenate([self.se * self.p.eval_eq(x), x[self.fixed] - self.p.lower[self.fixed]])

    def h(self, x):
        return np.concatenate(
            [
                self.si * self.p.eval_ineq(x),
                x[self.ub] - self.p.upper[self.ub],
                self.p.lower[self.lb] - x[self.lb],
            ]
        )

    def dg(self, x):
        return sp.vstack([sp.diags(self.se) @ self.p.eval_eq_jacobian(x), self.J_fixed], format="csr")

    def dh(self, x):
        return sp.vstack([sp.diags(self.si) @ self.p.eval_ineq_jacobian(x), self.J_bounds], format="csr")

    def hess(self, x, lam, mu):
        lam_gen = self.se * lam[: self.n_eq_gen]
        mu_gen = self.si * mu[: self.n_in_gen]
        if self.p.hessian is not None:
            return sp.csr_matrix(self.p.hessian(x, self.sf, lam_gen, mu_gen))
        return _fd_hessian(self.p, x, self.sf, lam_gen, mu_gen)

    def unscale(self, lam, mu):
        return (
            lam[: self.n_eq_gen] * self.se / self.sf,
            mu[: self.n_in_gen] * self.si / self.sf,
        )


def _row_inf_norm(J: sp.csr_matrix) -> np.ndarray:
    if J.shape[0] == 0:
        return np.zeros(0)
    return np.asarray(abs(J).max(axis=1).todense()).ravel()


def lagrangian_gradient(p: NlpProblem, x, obj_factor, lam_eq, mu_ineq) -> np.ndarray:
    grad = obj_factor * np.asarray(p.gradient(x), float)
    if p.eq is not None and len(lam_eq):
        grad = grad + p.eval_eq_jacobian(x).T @ lam_eq
    if p.ineq is not None and len(mu_ineq):
        grad = grad + p.eval_ineq_jacobian(x).T @ mu_ineq
    return grad


def _fd_hessian(p: NlpProblem, x, obj_factor, lam_eq, mu_ineq, step=1e-6) -> sp.csr_matrix:
    n = p.n
    H = np.empty((n, n))
    for i in range(n):
        e = np.zeros(n)
        h = step * max(1.0, abs(x[i]))
        e[i] = h
        H[:, i] = (
            lagrangian_gradient(p, x + e, obj_factor, lam_eq, mu_ineq)
            - lagrangian_gradient(p, x - e, obj_factor, lam_eq, mu_ineq)
        ) / (2 * h)
    return sp.csr_matrix(0.5 * (H + H.T))


def _kkt_factor_solve(M, Jg, rhs, delta: float):
    n, m = M.shape[0], Jg.shape[0]
    if delta:
        Mr = M + delta * sp.identity(n, format="csr")
        C = -1e-8 * sp.identity(m, format="csr")
    else:
        Mr, C = M, sp.csr_matrix((m, m))
    K = sp.bmat([[Mr, Jg.T], [Jg, C]], format="csc")
    with warnings.catch_warnings():
        warnings.simplefilter("error", MatrixRankWarning)
        try:
            sol = np.atleast_1d(spsolve(K, rhs))
        except (MatrixRankWarning, RuntimeError):
            return None
    return sol if np.all(np.isfinite(sol)) else None


def _kkt_solve(M, Jg, rhs_x, rhs_g, last_delta: float = 0.0, curvature: float = 1e-8):
    """Solve the primal-dual system, regularising the Hessian block when needed.

    No inertia information is available from the sparse LU, so a step is
    accepted only if it passes the curvature test ``dx'M dx >= c |dx|^2``;
    otherwise ``delta*I`` is added with delta grown geometrically, starting
    near the value the previous iteration needed.
    Returns ``(dx, dlam, delta)`` or None.
    """
    n = M.shape[0]
    rhs = np.concatenate([rhs_x, rhs_g])
    delta = 0.0
    while delta <= 1e10:
        sol = _kkt_factor_solve(M, Jg, rhs, delta)
        if sol is not None:
            dx = sol[:n]
            if dx @ (M @ dx) + delta * (dx @ dx) >= curvature * (dx @ dx):
                if delta:
                    log.debug("KKT system regularised with delta=%g", delta)
                return dx, sol[n:], delta
        delta = max(1e-4, last_delta / 3) if delta == 0.0 else 8 * delta
    return None


def solve(p: NlpProblem, opts: SolveOptions | None = None) -> tuple[np.ndarray, SolveReport]:
    """Minimise ``p`` and return ``(x, report)``; never raises on solver failure."""
    opts = opts or SolveOptions()
    t0 = time.perf_counter()
    x = restore_feasible_start(p)
    try:
        S = _Scaled(p, x)
        f, df = S.f(x), S.df(x)
        g, h = S.g(x), S.h(x)
        Jg, Jh = S.dg(x), S.dh(x)
    except FloatingPointError as exc:
        return x, SolveReport(NUMERICAL, 0, math.inf, math.inf, math.nan, time.perf_counter() - t0, str(exc))
    neq, niq = len(g), len(h)

    gamma = 1.0
    z = np.ones(niq)
    k = h < -1.0
    z[k] = -h[k]
    mu = np.ones(niq)
    k = gamma / z > 1.0
    mu[k] = gamma / z[k]
    lam = np.zeros(neq)
    nu = 1.0
    last_delta = 0.0

    history: list[tuple[float, float, bool]] = []
    best_viol = math.inf
    f_prev = f
    status, message = ITERATION_LIMIT, "iteration limit reached"
    it = 0
    gradcond = math.inf

    def merit(xv, zv, fv, gv, hv):
        if np.any(zv <= 0):
            return math.inf
        return fv - gamma * np.sum(np.log(zv)) + nu * (np.sum(np.abs(gv)) + np.sum(np.abs(hv + zv)))

    while True:
        if not (np.isfinite(f) and np.all(np.isfinite(g)) and np.all(np.isfinite(h))):
            status, message = NUMERICAL, "non-finite function value"
            break
        Lx = df + Jg.T @ lam + Jh.T @ mu
        viol = p.violation(x)
        best_viol = min(best_viol, viol)
        gradcond = np.max(np.abs(Lx), initial=0.0) / (1 + max(np.max(np.abs(lam), initial=0), np.max(np.abs(mu), initial=0)))
        compcond = float(z @ mu) / (1 + np.max(np.abs(x), initial=0.0)) if niq else 0.0
        costcond = abs(f - f_prev) / (1 + abs(f_prev))
        if it > 0 and viol <= opts.tol_feas and gradcond <= opts.tol_opt and compcond <= opts.tol_opt and costcond <= opts.tol_opt:
            status, message = OPTIMAL, "converged"
            break
        if it >= opts.max_iter:
            break
        if time.perf_counter() - t0 > opts.timeout_s:
            status, message = TIMEOUT, f"timeout after {opts.timeout_s:g} s"
            break
        if it >= opts.restoration_window and best_viol > opts.restoration_tol:
            status = INFEASIBLE
            message = f"constraint violation stuck at {best_viol:.3g} after {it} iterations"
            break
        if niq and best_viol > opts.restoration_tol and np.max(mu / z) > DUAL_BLOWUP:
            # barrier duals diverge while the constraints stay violated
            status = INFEASIBLE
            message = f"multipliers diverged with constraint violation {best_viol:.3g}"
            break
        it += 1

        try:
            Lxx = S.hess(x, lam, mu)
        except FloatingPointError:
            status, message = NUMERICAL, "Hessian evaluation failed"
            break
        zinv = 1.0 / z
        D = sp.diags(mu * zinv)
        M = (Lxx + Jh.T @ D @ Jh).tocsr()
        N = Lx + Jh.T @ (zinv * (mu * h + gamma))
        step = _kkt_solve(M, Jg, -N, -g, last_delta)
        if step is None:
            status, message = NUMERICAL, "KKT system could not be factorised"
            break
        dx, dlam, last_delta = step
        dz = -h - z - Jh @ dx
        dmu = -mu + zinv * (gamma - mu * dz)

        def boundary_step(v, dv):
            neg = dv < 0
            return min(opts.step_fraction * np.min(v[neg] / -dv[neg]), 1.0) if np.any(neg) else 1.0

        def trial(alpha, dxv, dzv):
            xn, zn = x + alpha * dxv, z + alpha * dzv
            with np.errstate(all="ignore"):
                fn, gn, hn = S.f(xn), S.g(xn), S.h(xn)
            phin = merit(xn, zn, fn, gn, hn) if np.isfinite(fn) else math.inf
            return xn, zn, fn, gn, hn, phin

        alpha_p = boundary_step(z, dz)
        alpha_d = boundary_step(mu, dmu)

        nu = max(nu, 1.1 * max(np.max(np.abs(lam + dlam), initial=0.0), np.max(np.abs(mu + dmu), initial=0.0)))
        phi0 = merit(x, z, f, g, h)
        sufficient = lambda phin: phin <= phi0 + 1e-12 * abs(phi0)  # noqa: E731
        cand = trial(alpha_p, dx, dz)
        accepted = sufficient(cand[-1])
        if not accepted and opts.line_search and opts.second_order_correction and np.isfinite(cand[-1]):
            # second-order correction: re-linearise with the constraint values
            # seen at the trial point, which counters the Maratos effect
            g_soc = cand[3] - alpha_p * (Jg @ dx)
            h_soc = cand[4] - alpha_p * (Jh @ dx)
            N_soc = Lx + Jh.T @ (zinv * (mu * h_soc + gamma))
            M_soc = M + last_delta * sp.identity(len(x), format="csr")
            sol = _kkt_factor_solve(M_soc, Jg, np.concatenate([-N_soc, -g_soc]), 0.0)
            if sol is not None:
                dx_c = sol[: len(x)]
                dz_c = -h_soc - z - Jh @ dx_c
                soc = trial(boundary_step(z, dz_c), dx_c, dz_c)
                if sufficient(soc[-1]):
                    cand, accepted = soc, True
        alpha = alpha_p
        for _ in range(opts.max_backtracks - 1 if opts.line_search and not accepted else 0):
            alpha *= 0.5
            cand = trial(alpha, dx, dz)
            if sufficient(cand[-1]):
                accepted = True
                break
        if not accepted and opts.line_search:
            # no merit decrease along this direction: take the boundary-limited
            # step anyway, the interior iteration usually recovers
            cand = trial(alpha_p, dx, dz)
        xn, zn, fn, gn, hn, phin = cand
        if not np.isfinite(phin):
            status, message = NUMERICAL, "non-finite merit at every trial point"
            break
        history.append((phi0, phin, accepted))

        f_prev = f
        x, z = xn, zn
        lam = lam + alpha_d * dlam
        mu = mu + alpha_d * dmu
        f, g, h = fn, gn, hn
        df = S.df(x)
        Jg, Jh = S.dg(x), S.dh(x)
        if niq:
            gamma = opts.centering * float(z @ mu) / niq

    lam_u, mu_u = S.unscale(lam, mu)
    report = SolveReport(
        status=status,
        iterations=it,
        primal_infeasibility=p.violation(x),
        dual_infeasibility=float(gradcond),
        objective=float(p.objective(x)),
        wall_time=time.perf_counter() - t0,
        message=message,
        merit_history=history,
        lam_eq=lam_u,
        mu_ineq=mu_u,
    )
    log.debug("%s: %s after %d iterations (%.3f s)", p.name or "nlp", status, it, report.wall_time)
    return x, report


def solve_with_scipy(p: NlpProblem, opts: SolveOptions | None = None) -> tuple[np.ndarray, SolveReport]:
    """Same contract as :func:`solve`, backed by scipy's ``trust-constr``.

    Meant for cross-checking on small problems, not for production runs.
    """
    from scipy.optimize import Bounds, NonlinearConstraint, minimize

    opts = opts or SolveOptions()
    t0 = time.perf_counter()
    x0 = restore_feasible_start(p)
    cons = []
    if p.eq is not None:
        m = len(p.eval_eq(x0))
        cons.append(NonlinearConstraint(p.eval_eq, np.zeros(m), np.zeros(m), jac=lambda x: p.eval_eq_jacobian(x)))
    if p.ineq is not None:
        m = len(p.eval_ineq(x0))
        cons.append(NonlinearConstraint(p.eval_ineq, np.full(m, -np.inf), np.zeros(m), jac=lambda x: p.eval_ineq_jacobian(x)))
    res = minimize(
        p.objective,
        x0,
        jac=p.gradient,
        method="trust-constr",
        bounds=Bounds(p.lower, p.upper, keep_feasible=False),
        constraints=cons,
        options={"gtol": opts.tol_opt, "xtol": 1e-12, "maxiter": max(opts.max_iter, 2000)},
    )
    viol = p.violation(res.x)
    status = OPTIMAL if res.status in (1, 2) and viol <= 10 * opts.tol_feas else ITERATION_LIMIT
    report = SolveReport(
        status=status,
        iterations=int(res.nit),
        primal_infeasibility=viol,
        dual_infeasibility=float(res.optimality),
        objective=float(res.fun),
        wall_time=time.perf_counter() - t0,
        message=str(res.message),
    )
    return res.x, report
