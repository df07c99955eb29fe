import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from privgrid.nlp import (
    InfeasibleBoundsError,
    NlpProblem,
    SolveOptions,
    restore_feasible_start,
    solve,
    solve_with_scipy,
)
from privgrid.opf import build_opf


def quadratic(Q, c, A=None, b=None, C=None, d=None, lower=None, upper=None):
    n = len(c)
    kw = {}
    if A is not None:
        kw.update(eq=lambda x: A @ x - b, eq_jacobian=lambda x: A)
    if C is not None:
        kw.update(ineq=lambda x: C @ x - d, ineq_jacobian=lambda x: C)
    return NlpProblem(
        n,
        objective=lambda x: 0.5 * x @ Q @ x + c @ x,
        gradient=lambda x: Q @ x + c,
        hessian=lambda x, s, lam, mu: s * Q,
        lower=lower,
        upper=upper,
        **kw,
    )


def test_active_lower_bound():
    p = NlpProblem(1, lambda x: (x[0] - 1) ** 2, lambda x: 2 * (x - 1), lower=np.array([2.0]))
    x, rep = solve(p)
    assert rep.status == "optimal"
    assert x[0] == pytest.approx(2.0, abs=1e-6)


def test_symmetric_projection():
    p = quadratic(2 * np.eye(2), np.zeros(2), A=np.array([[1.0, 1.0]]), b=np.array([1.0]))
    x, rep = solve(p)
    assert rep.status == "optimal"
    np.testing.assert_allclose(x, [0.5, 0.5], atol=1e-6)


def test_start_midpoint():
    p = NlpProblem(1, lambda x: 0.0, lambda x: 0 * x, lower=np.array([0.0]), upper=np.array([2.0]))
    assert restore_feasible_start(p)[0] == 1.0


def test_start_interior_initial_point_kept():
    p = NlpProblem(1, lambda x: 0.0, lambda x: 0 * x, x0=np.array([5.0]), lower=np.array([0.0]))
    assert restore_feasible_start(p)[0] == 5.0


def test_start_projected_inward():
    p = NlpProblem(1, lambda x: 0.0, lambda x: 0 * x, x0=np.array([0.0]), lower=np.array([0.0]), upper=np.array([1.0]))
    assert restore_feasible_start(p)[0] == pytest.approx(1e-4)


def test_fixed_variable():
    p = NlpProblem(
        2, lambda x: x @ x, lambda x: 2 * x, lower=np.array([1.0, -1.0]), upper=np.array([1.0, 1.0])
    )
    assert restore_feasible_start(p)[0] == 1.0
    x, rep = solve(p)
    assert rep.success and x[0] == 1.0


def test_empty_box_raises():
    p = NlpProblem(1, lambda x: 0.0, lambda x: 0 * x, lower=np.array([1.0]), upper=np.array([0.0]))
    with pytest.raises(InfeasibleBoundsError):
        restore_feasible_start(p)


def test_bad_bound_shape():
    with pytest.raises(ValueError):
        NlpProblem(2, lambda x: 0.0, lambda x: 0 * x, lower=np.zeros(3))


def _constructed_qp(seed):
    """A convex QP whose solution, active set and multipliers are chosen first."""
    rng = np.random.default_rng(seed)
    n, m_eq, m_in = 6, 2, 4
    B = rng.standard_normal((n, n))
    Q = B @ B.T + n * np.eye(n)
    A = rng.standard_normal((m_eq, n))
    C = rng.standard_normal((m_in, n))
    x_star = rng.standard_normal(n)
    lam = rng.standard_normal(m_eq)
    active = np.array([True, True, False, False])
    mu = np.where(active, rng.uniform(0.5, 2.0, m_in), 0.0)
    b = A @ x_star
    d = C @ x_star + np.where(active, 0.0, rng.uniform(0.5, 2.0, m_in))
    c = -(Q @ x_star + A.T @ lam + C.T @ mu)
    return Q, c, A, b, C, d, x_star, active


def _kkt_direct(Q, c, A, b, C, d, active):
    """Solve the equality-constrained KKT system on the known active set."""
    G = np.vstack([A, C[active]])
    h = np.concatenate([b, d[active]])
    n, m = Q.shape[0], G.shape[0]
    K = np.block([[Q, G.T], [G, np.zeros((m, m))]])
    return np.linalg.solve(K, np.concatenate([-c, h]))[:n]


@settings(max_examples=25, deadline=None)
@given(st.integers(0, 2**31))
def test_convex_qp_matches_kkt_solve(seed):
    Q, c, A, b, C, d, x_star, active = _constructed_qp(seed)
    x_ref = _kkt_direct(Q, c, A, b, C, d, active)
    np.testing.assert_allclose(x_ref, x_star, atol=1e-9)
    x, rep = solve(quadratic(Q, c, A, b, C, d), SolveOptions(tol_feas=1e-9, tol_opt=1e-9))
    assert rep.status == "optimal"
    assert np.max(np.abs(x - x_ref)) <= 1e-6


@settings(max_examples=25, deadline=None)
@given(st.integers(0, 2**31))
def test_merit_decreases_on_accepted_steps(seed):
    Q, c, A, b, C, d, _, _ = _constructed_qp(seed)
    _, rep = solve(quadratic(Q, c, A, b, C, d), SolveOptions(line_search=True))
    assert rep.status == "optimal"
    accepted = [(a, b_) for a, b_, ok in rep.merit_history if ok]
    assert len(accepted) >= len(rep.merit_history) // 2
    for before, after in accepted:
        assert after <= before + 1e-12 * abs(before)


def test_line_search_mode_solves_opf(case5):
    p, _ = build_opf(case5)
    _, rep = solve(p, SolveOptions(line_search=True))
    assert rep.status == "optimal"


def test_deterministic(case5):
    p, _ = build_opf(case5, "loss")
    x1, r1 = solve(p)
    x2, r2 = solve(p)
    assert np.array_equal(x1, x2)
    assert r1.iterations == r2.iterations
    assert r1.merit_history == r2.merit_history


def test_optimal_implies_tolerances(case5):
    p, _ = build_opf(case5)
    opts = SolveOptions()
    x, rep = solve(p, opts)
    assert rep.success
    assert rep.primal_infeasibility <= opts.tol_feas
    assert rep.dual_infeasibility <= opts.tol_opt


def test_timeout_status(case24):
    p, _ = build_opf(case24)
    x, rep = solve(p, SolveOptions(timeout_s=0.0))
    assert rep.status == "timeout"
    assert x.shape == (p.n,)


def test_iteration_limit_status(case24):
    p, _ = build_opf(case24)
    _, rep = solve(p, SolveOptions(max_iter=2))
    assert rep.status == "iteration-limit"
    assert rep.iterations == 2


def test_infeasible_constraints_detected():
    p = NlpProblem(
        1,
        lambda x: x[0] ** 2,
        lambda x: 2 * x,
        ineq=lambda x: np.array([x[0], 1.0 - x[0]]),
        ineq_jacobian=lambda x: np.array([[1.0], [-1.0]]),
    )
    _, rep = solve(p)
    assert rep.status == "infeasible"


def test_nan_oracle_is_numerical():
    p = NlpProblem(1, lambda x: math.nan, lambda x: 0 * x)
    _, rep = solve(p)
    assert rep.status == "numerical"


def test_finite_difference_hessian_fallback():
    # nonconvex objective on a disk, no Hessian callback
    p = NlpProblem(
        2,
        lambda x: (1 - x[0]) ** 2 + 100 * (x[1] - x[0] ** 2) ** 2,
        lambda x: np.array([-2 * (1 - x[0]) - 400 * x[0] * (x[1] - x[0] ** 2), 200 * (x[1] - x[0] ** 2)]),
        ineq=lambda x: np.array([x @ x - 0.5]),
        ineq_jacobian=lambda x: 2 * x[None, :],
    )
    x, rep = solve(p, SolveOptions(tol_feas=1e-9, tol_opt=1e-9))
    assert rep.success
    xs, rs = solve_with_scipy(p, SolveOptions(tol_feas=1e-9, tol_opt=1e-10))
    assert rs.success
    np.testing.assert_allclose(x, xs, atol=1e-5)
    assert x @ x == pytest.approx(0.5, abs=1e-8)


def test_scipy_adapter_agrees_on_opf(load):
    case = load("pglib_opf_case3_lmbd")[0]
    p, _ = build_opf(case)
    x, rep = solve(p)
    xs, rs = solve_with_scipy(p)
    assert rep.success
    assert rs.objective == pytest.approx(rep.objective, rel=1e-4)
