"""Fidelity restoration of perturbed line parameters.

The noisy admittances are pulled back to a physically solvable network: the
branch parameters become decision variables of an AC-OPF, the objective is the
squared distance to the noisy targets, the total grid loss must stay within a
factor beta of the public baseline loss, and each parameter is boxed around
its noisy voltage-level mean.

:func:`build_restoration` only ever sees a :class:`PublicNetwork` (no line
parameters) plus the noisy release, so the original admittances cannot leak
into the optimisation.
"""

from __future__ import annotations

import logging
import time
from dataclasses import dataclass, field, replace

import numpy as np
import scipy.sparse as sp

from .mechanism import NoiseStreams, PerturbedAdmittances, PrivacyParams, perturb_branch_parameters
from .network import NetworkCase, PublicNetwork, to_series_impedance
from .nlp import NlpProblem, SolveOptions, SolveReport, solve
from .opf import COST, OBJECTIVES, AcOpfModel, OpfSolution, check_feasibility, grid_loss, solution_from_x, solve_opf

log = logging.getLogger(__name__)

TINY_LOSS = 1e-8
ABS_LOSS_FLOOR = 1e-3
# the release is re-checked independently at this tolerance after the
# (g, b) -> (r, x) conversion, so the restoration solve runs tighter
RELEASE_CHECK_TOL = 1e-6
RELEASE_TOL_FEAS = 1e-8


def release_options(timeout_s: float = 600.0, **kw) -> SolveOptions:
    return SolveOptions(tol_feas=RELEASE_TOL_FEAS, timeout_s=timeout_s, **kw)


class RestorationInfeasible(RuntimeError):
    """The restoration problem is infeasible before any solve is attempted."""


@dataclass(frozen=True)
class LevelBoxes:
    """Per-branch variable boxes derived from the noisy level means."""

    g: tuple[np.ndarray, np.ndarray]
    b: tuple[np.ndarray, np.ndarray]
    b_sh: tuple[np.ndarray, np.ndarray]
    warnings: tuple[str, ...] = ()


def level_boxes(pert: PerturbedAdmittances, lam: float) -> LevelBoxes:
    """Boxes ``[mu/lam, lam*mu]`` per level, endpoints sorted.

    For susceptance (mu < 0) sorting gives the reversed pair ``[lam*mu, mu/lam]``.
    A noisy mean of the wrong sign still yields a sorted box but is reported;
    if the box then excludes the physically required sign (g >= 0, b < 0,
    b_sh >= 0) the run cannot succeed and :class:`RestorationInfeasible` is raised.
    """
    warnings = []
    out = {}
    # (name, means, sign check on the box, which sign is flipped)
    for name, mu, ok, flipped in (
        ("g", pert.mu_g, lambda lo, hi: hi >= 0, lambda m: m <= 0),
        ("b", pert.mu_b, lambda lo, hi: lo < 0, lambda m: m >= 0),
        ("b_sh", pert.mu_b_sh, lambda lo, hi: hi >= 0, lambda m: m < 0),
    ):
        a, c = mu / lam, mu * lam
        lo, hi = np.minimum(a, c), np.maximum(a, c)
        for k, kv in enumerate(pert.levels):
            if flipped(mu[k]):
                warnings.append(f"noisy mean of {name} at {kv:g} kV has the wrong sign ({mu[k]:.6g})")
                log.warning(warnings[-1])
            if not ok(lo[k], hi[k]):
                raise RestorationInfeasible(
                    f"box for {name} at {kv:g} kV is [{lo[k]:.6g}, {hi[k]:.6g}], which excludes the required sign"
                )
        out[name] = (lo[pert.level_of], hi[pert.level_of])
    return LevelBoxes(out["g"], out["b"], out["b_sh"], tuple(warnings))


@dataclass
class RestorationProblem:
    nlp: NlpProblem
    model: AcOpfModel
    pert: PerturbedAdmittances
    l_star: float
    params: PrivacyParams
    boxes: LevelBoxes
    loss_bounds: tuple[float, float]
    shunt_term: bool = False

    def distance(self, x: np.ndarray) -> float:
        """The fidelity objective at ``x``."""
        return float(self.nlp.objective(x))


def loss_band(l_star: float, beta: float) -> tuple[float, float]:
    """Admissible interval for the released grid loss."""
    if l_star <= TINY_LOSS:
        half = beta * max(l_star, ABS_LOSS_FLOOR)
        log.warning("baseline loss %.3g is near zero; using the absolute band +-%.3g", l_star, half)
        return l_star - half, l_star + half
    return (1.0 - beta) * l_star, (1.0 + beta) * l_star


def build_restoration(
    public: PublicNetwork,
    pert: PerturbedAdmittances,
    l_star: float,
    params: PrivacyParams,
    shunt_term: bool = False,
) -> RestorationProblem:
    """Assemble the restoration NLP from public data and the noisy release."""
    if not isinstance(public, PublicNetwork):
        raise TypeError("build_restoration takes the public network, not the full case")
    ids = tuple(br.id for br in public.in_service_branches)
    if ids != tuple(pert.branch_ids):
        raise ValueError("perturbation does not match the network's in-service branches")
    boxes = level_boxes(pert, params.lam)
    model = AcOpfModel(public, None)
    L = model.layout
    n = L.n
    arr = model.arr
    total_pd = float(arr.pd.sum())
    lo_loss, hi_loss = loss_band(l_star, params.beta)

    g_t, b_t, sh_t = pert.g_tilde, pert.b_tilde, pert.b_sh_tilde

    def f(x):
        val = np.sum((x[L.g] - g_t) ** 2) + np.sum((x[L.b] - b_t) ** 2)
        if shunt_term:
            val += np.sum((x[L.b_sh] - sh_t) ** 2)
        return float(val)

    def df(x):
        gr = np.zeros(n)
        gr[L.g] = 2 * (x[L.g] - g_t)
        gr[L.b] = 2 * (x[L.b] - b_t)
        if shunt_term:
            gr[L.b_sh] = 2 * (x[L.b_sh] - sh_t)
        return gr

    obj_h = np.zeros(n)
    obj_h[L.g] = obj_h[L.b] = 2.0
    if shunt_term:
        obj_h[L.b_sh] = 2.0

    loss_row = np.zeros(n)
    loss_row[L.pg] = 1.0
    loss_jac = sp.csr_matrix(np.vstack([-loss_row, loss_row]))
    n_opf_ineq = model.n_ineq

    def ineq(x):
        loss = float(np.sum(x[L.pg])) - total_pd
        return np.concatenate([model.ineq(x), [lo_loss - loss, loss - hi_loss]])

    def ineq_jac(x):
        return sp.vstack([model.ineq_jacobian(x), loss_jac], format="csr")

    def hess(x, obj_factor, lam, mu):
        return model.constraint_hessian(x, lam, mu[:n_opf_ineq]) + sp.diags(obj_factor * obj_h)

    lo, up = model.bounds()
    lo[L.g], up[L.g] = boxes.g
    lo[L.b], up[L.b] = boxes.b
    lo[L.b_sh], up[L.b_sh] = boxes.b_sh

    x0 = model.flat_start()
    x0[L.g] = np.clip(g_t, *boxes.g)
    x0[L.b] = np.clip(b_t, *boxes.b)
    x0[L.b_sh] = np.clip(sh_t, *boxes.b_sh)

    nlp = NlpProblem(
        n=n,
        objective=f,
        gradient=df,
        x0=x0,
        lower=lo,
        upper=up,
        eq=model.eq,
        eq_jacobian=model.eq_jacobian,
        ineq=ineq,
        ineq_jacobian=ineq_jac,
        hessian=hess,
        name=f"{public.name}:restoration",
    )
    return RestorationProblem(nlp, model, pert, l_star, params, boxes, (lo_loss, hi_loss), shunt_term)


def baseline_grid_loss(
    case: NetworkCase, arm: str = COST, opts: SolveOptions | None = None
) -> tuple[float, OpfSolution]:
    """Grid loss at the optimum of the plain OPF on the original case."""
    sol = solve_opf(case, arm, opts)
    if not sol.success:
        raise BaselineError(f"baseline {arm} OPF on {case.name} ended with status {sol.status}", sol.status)
    return grid_loss(case, sol), sol


class BaselineError(RuntimeError):
    def __init__(self, message: str, status: str):
        super().__init__(message)
        self.status = status


@dataclass
class Provenance:
    case: str
    seed: int | None
    params: PrivacyParams
    objective_arm: str
    l_star: float | None
    status: str
    iterations: int
    wall_time_s: float
    stage: str = "restoration"
    message: str = ""

    def to_json(self) -> dict:
        # key order is part of the output contract
        return {
            "case": self.case,
            "seed": self.seed,
            "alpha": self.params.alpha,
            "beta": self.params.beta,
            "epsilon": self.params.epsilon,
            "lambda": self.params.lam,
            "objective_arm": self.objective_arm,
            "L_star": self.l_star,
            "status": self.status,
            "iterations": self.iterations,
            "wall_time_s": self.wall_time_s,
        }


@dataclass
class ObfuscatedCase:
    case: NetworkCase
    solution: OpfSolution
    provenance: Provenance
    pert: PerturbedAdmittances
    problem: RestorationProblem = field(repr=False)

    @property
    def status(self) -> str:
        return self.provenance.status

    @property
    def success(self) -> bool:
        return True

    @property
    def fidelity_objective(self) -> float:
        return self.problem.distance(self.solution.x)

    @property
    def released_loss(self) -> float:
        return grid_loss(self.case, self.solution)


@dataclass
class PipelineFailure:
    stage: str
    status: str
    message: str
    provenance: Provenance
    report: SolveReport | None = None

    @property
    def success(self) -> bool:
        return False


def _release(case: NetworkCase, ids, g, b, b_sh) -> NetworkCase:
    r, x = to_series_impedance(g, b)
    return case.with_branch_parameters({i: (r[k], x[k], b_sh[k]) for k, i in enumerate(ids)})


def run_pipeline(
    case: NetworkCase,
    params: PrivacyParams,
    arm: str = COST,
    seed: int | None = None,
    *,
    streams=None,
    l_star: float | None = None,
    opts: SolveOptions | None = None,
    shunt_term: bool = False,
) -> ObfuscatedCase | PipelineFailure:
    """Perturb, restore and release ``case``.

    Either ``seed`` or ``streams`` (e.g. :class:`ZeroNoise`) selects the noise.
    ``l_star`` short-circuits the baseline solve with a publicly known loss.
    """
    if arm not in OBJECTIVES:
        raise ValueError(f"objective arm must be one of {OBJECTIVES}, got {arm!r}")
    if streams is None:
        if seed is None:
            raise ValueError("pass a seed or a noise source")
        streams = NoiseStreams(seed)
    seed = getattr(streams, "seed", seed)
    opts = opts or release_options()
    t0 = time.perf_counter()

    def fail(stage, status, message, report=None, l_val=None, iters=0):
        prov = Provenance(
            case.name, seed, params, arm, l_val, status, iters, time.perf_counter() - t0, stage, message
        )
        return PipelineFailure(stage, status, message, prov, report)

    if l_star is None:
        try:
            l_star, _ = baseline_grid_loss(case, arm, opts)
        except BaselineError as exc:
            return fail("baseline", exc.status, str(exc))
    pert = perturb_branch_parameters(case, params, streams)
    try:
        problem = build_restoration(case.public(), pert, l_star, params, shunt_term)
    except RestorationInfeasible as exc:
        return fail("build", "infeasible", str(exc), l_val=l_star)

    elapsed = time.perf_counter() - t0
    remaining = max(opts.timeout_s - elapsed, 1e-3)
    run_opts = replace(opts, timeout_s=remaining)
    x, report = solve(problem.nlp, run_opts)
    if not report.success:
        return fail("restoration", report.status, report.message, report, l_star, report.iterations)

    model = problem.model
    sol = solution_from_x(model, x, report.objective, report.status, report)
    released = _release(case, pert.branch_ids, sol.g, sol.b, sol.b_sh)
    check = check_feasibility(released, sol, RELEASE_CHECK_TOL)
    loss = grid_loss(released, sol)
    lo, hi = problem.loss_bounds
    slack = RELEASE_CHECK_TOL
    if not check.ok or not (lo - slack <= loss <= hi + slack):
        msg = f"released case fails re-check: {check.violations}, loss {loss:.6g} vs [{lo:.6g}, {hi:.6g}]"
        return fail("verify", "numerical", msg, report, l_star, report.iterations)
    prov = Provenance(
        case.name, seed, params, arm, l_star, report.status, report.iterations, time.perf_counter() - t0
    )
    return ObfuscatedCase(released, sol, prov, pert, problem)
