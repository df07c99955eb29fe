"""AC optimal power flow in polar coordinates.

Branch flows follow the Pi model with off-nominal taps::

    S_f = (Y + j b_sh/2)* |V_f|^2 / t^2 - Y* V_f V_t* / (t e^{-j shift})
    S_t = (Y + j b_sh/2)* |V_t|^2       - Y* V_t V_f* / (t e^{+j shift})

with Y = g + jb. Flows are not decision variables; they are substituted into
the bus balance and thermal constraints. Branch admittances are either data
(plain OPF) or extra decision variables (the restoration problem), and the
same derivative code serves both.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
import scipy.sparse as sp

from .network import BranchAdmittance, CaseValidationError, NetworkCase, _Grid
from .nlp import NlpProblem, SolveOptions, SolveReport, solve

COST = "cost"
LOSS = "loss"
OBJECTIVES = (COST, LOSS)

# local coordinates of one branch: (va_f, va_t, vm_f, vm_t, g, b, b_sh)
_N_LOCAL = 7


@dataclass(frozen=True)
class GridArrays:
    """Vectorised view of a grid (in-service elements only)."""

    base_mva: float
    bus_ids: np.ndarray
    slack: int
    vmin: np.ndarray
    vmax: np.ndarray
    gs: np.ndarray
    bs: np.ndarray
    pd: np.ndarray
    qd: np.ndarray
    branch_ids: np.ndarray
    f: np.ndarray
    t: np.ndarray
    tap: np.ndarray
    shift: np.ndarray
    rate: np.ndarray
    angmin: np.ndarray
    angmax: np.ndarray
    gen_ids: np.ndarray
    gen_bus: np.ndarray
    pmin: np.ndarray
    pmax: np.ndarray
    qmin: np.ndarray
    qmax: np.ndarray
    c2: np.ndarray
    c1: np.ndarray
    c0: np.ndarray

    @classmethod
    def from_grid(cls, grid: _Grid) -> "GridArrays":
        idx = grid.bus_index
        brs = grid.in_service_branches
        gens = grid.in_service_generators
        pd, qd = grid.demand()
        arr = lambda seq: np.array(list(seq), dtype=float)  # noqa: E731
        return cls(
            base_mva=grid.base_mva,
            bus_ids=np.array([b.id for b in grid.buses], dtype=int),
            slack=grid.slack_index,
            vmin=arr(b.vmin for b in grid.buses),
            vmax=arr(b.vmax for b in grid.buses),
            gs=arr(b.shunt_g for b in grid.buses),
            bs=arr(b.shunt_b for b in grid.buses),
            pd=pd,
            qd=qd,
            branch_ids=np.array([br.id for br in brs], dtype=int),
            f=np.array([idx[br.from_bus] for br in brs], dtype=int),
            t=np.array([idx[br.to_bus] for br in brs], dtype=int),
            tap=arr(br.tap for br in brs),
            shift=arr(br.shift for br in brs),
            rate=arr(br.rate_a for br in brs),
            angmin=arr(br.ang_min for br in brs),
            angmax=arr(br.ang_max for br in brs),
            gen_ids=np.array([g.id for g in gens], dtype=int),
            gen_bus=np.array([idx[g.bus] for g in gens], dtype=int),
            pmin=arr(g.pmin for g in gens),
            pmax=arr(g.pmax for g in gens),
            qmin=arr(g.qmin for g in gens),
            qmax=arr(g.qmax for g in gens),
            c2=arr(g.c2 for g in gens),
            c1=arr(g.c1 for g in gens),
            c0=arr(g.c0 for g in gens),
        )

    @property
    def nb(self) -> int:
        return len(self.bus_ids)

    @property
    def nl(self) -> int:
        return len(self.branch_ids)

    @property
    def ng(self) -> int:
        return len(self.gen_ids)


@dataclass(frozen=True)
class Layout:
    nb: int
    ng: int
    nl: int
    variable_admittance: bool

    @property
    def va(self) -> slice:
        return slice(0, self.nb)

    @property
    def vm(self) -> slice:
        return slice(self.nb, 2 * self.nb)

    @property
    def pg(self) -> slice:
        return slice(2 * self.nb, 2 * self.nb + self.ng)

    @property
    def qg(self) -> slice:
        return slice(2 * self.nb + self.ng, 2 * self.nb + 2 * self.ng)

    def _adm(self, k: int) -> slice:
        if not self.variable_admittance:
            raise AttributeError("admittances are not variables in this layout")
        start = 2 * self.nb + 2 * self.ng + k * self.nl
        return slice(start, start + self.nl)

    @property
    def g(self) -> slice:
        return self._adm(0)

    @property
    def b(self) -> slice:
        return self._adm(1)

    @property
    def b_sh(self) -> slice:
        return self._adm(2)

    @property
    def n(self) -> int:
        return 2 * self.nb + 2 * self.ng + (3 * self.nl if self.variable_admittance else 0)


@dataclass
class FlowEval:
    """Branch flows and, on request, their local derivatives.

    ``grad[k]`` is (nl, 7) and ``hess[k]`` is (nl, 7, 7) for k in
    (Pf, Qf, Pt, Qt), in local coordinates (va_f, va_t, vm_f, vm_t, g, b, b_sh).
    """

    pf: np.ndarray
    qf: np.ndarray
    pt: np.ndarray
    qt: np.ndarray
    grad: np.ndarray | None = None
    hess: np.ndarray | None = None


# maps (a, vm_f, vm_t, g, b, b_sh) derivatives to (va_f, va_t, vm_f, vm_t, g, b, b_sh)
_T = np.zeros((_N_LOCAL, 6))
_T[0, 0], _T[1, 0] = 1.0, -1.0
for _k in range(1, 6):
    _T[_k + 1, _k] = 1.0


def local_flows(vf, vt, thf, tht, g, b, bsh, tap, shift, order: int = 0) -> FlowEval:
    """Pi-model flows at both ends of each branch, vectorised over branches."""
    vf, vt, thf, tht, g, b, bsh, tap, shift = np.broadcast_arrays(
        *(np.asarray(v, dtype=float) for v in (vf, vt, thf, tht, g, b, bsh, tap, shift))
    )
    a = thf - tht - shift
    c, s = np.cos(a), np.sin(a)
    w = vf * vt / tap
    qf = vf * vf / (tap * tap)
    qt = vt * vt
    Af, Bf = qf - w * c, -w * s
    At, Bt = qt - w * c, w * s
    P_f = g * Af + b * Bf
    Q_f = g * Bf - b * Af - 0.5 * bsh * qf
    P_t = g * At + b * Bt
    Q_t = g * Bt - b * At - 0.5 * bsh * qt
    out = FlowEval(P_f, Q_f, P_t, Q_t)
    if order == 0:
        return out

    nl = a.shape[0] if a.ndim else 1
    shape = (nl,)
    zero = np.zeros(shape)

    def vec(*cols):
        return np.stack([np.broadcast_to(cc, shape) for cc in cols], axis=-1)

    # primitives on u = (a, vf, vt)
    wc_g = vec(-w * s, c * vt / tap, c * vf / tap)
    ws_g = vec(w * c, s * vt / tap, s * vf / tap)
    qf_g = vec(zero, 2 * vf / tap**2, zero)
    qt_g = vec(zero, zero, 2 * vt)

    def sym(aa, av1, av2, v1v1, v1v2, v2v2):
        H = np.empty(shape + (3, 3))
        H[:, 0, 0] = aa
        H[:, 0, 1] = H[:, 1, 0] = av1
        H[:, 0, 2] = H[:, 2, 0] = av2
        H[:, 1, 1] = v1v1
        H[:, 1, 2] = H[:, 2, 1] = v1v2
        H[:, 2, 2] = v2v2
        return H

    wc_h = sym(-w * c, -s * vt / tap, -s * vf / tap, zero, c / tap, zero)
    ws_h = sym(-w * s, c * vt / tap, c * vf / tap, zero, s / tap, zero)
    qf_h = sym(zero, zero, zero, 2 / tap**2, zero, zero)
    qt_h = sym(zero, zero, zero, zero, zero, 2 + zero)

    prims = {
        "f": (Af, Bf, qf, qf_g - wc_g, -ws_g, qf_g, qf_h - wc_h, -ws_h, qf_h),
        "t": (At, Bt, qt, qt_g - wc_g, ws_g, qt_g, qt_h - wc_h, ws_h, qt_h),
    }
    grads, hesses = [], []
    for end in ("f", "t"):
        A, B, K, gA, gB, gK, hA, hB, hK = prims[end]
        gs_, bs_, shs = g[:, None], b[:, None], bsh[:, None]
        # P = g A + b B
        gP = np.concatenate([gs_ * gA + bs_ * gB, A[:, None], B[:, None], zero[:, None]], axis=1)
        HP = np.zeros(shape + (6, 6))
        HP[:, :3, :3] = g[:, None, None] * hA + b[:, None, None] * hB
        HP[:, :3, 3] = HP[:, 3, :3] = gA
        HP[:, :3, 4] = HP[:, 4, :3] = gB
        # Q = g B - b A - b_sh K / 2
        gQ = np.concatenate(
            [gs_ * gB - bs_ * gA - 0.5 * shs * gK, B[:, None], -A[:, None], -0.5 * K[:, None]], axis=1
        )
        HQ = np.zeros(shape + (6, 6))
        HQ[:, :3, :3] = g[:, None, None] * hB - b[:, None, None] * hA - 0.5 * bsh[:, None, None] * hK
        HQ[:, :3, 3] = HQ[:, 3, :3] = gB
        HQ[:, :3, 4] = HQ[:, 4, :3] = -gA
        HQ[:, :3, 5] = HQ[:, 5, :3] = -0.5 * gK
        grads += [gP, gQ]
        hesses += [HP, HQ]
    grad6 = np.stack(grads)
    out.grad = grad6 @ _T.T
    if order >= 2:
        hess6 = np.stack(hesses)
        out.hess = np.einsum("ij,kljm,nm->klin", _T, hess6, _T)
    return out


def branch_flow(adm: BranchAdmittance, tap, shift, vm_i, va_i, vm_j, va_j) -> tuple[complex, complex]:
    """Complex power entering the branch at each end, ``(S_ij, S_ji)`` in p.u."""
    fe = local_flows(vm_i, vm_j, va_i, va_j, adm.g, adm.b, adm.b_sh, tap, shift)
    return complex(float(fe.pf), float(fe.qf)), complex(float(fe.pt), float(fe.qt))


class AcOpfModel:
    """Constraint set of the AC-OPF over a grid.

    Equalities: slack angle, then active balance per bus, then reactive
    balance per bus. Inequalities: squared thermal limits at the from and to
    ends of rated branches, then upper and lower angle-difference limits.
    """

    def __init__(self, grid: _Grid, admittance: BranchAdmittance | None):
        if not grid.is_connected():
            raise CaseValidationError(f"network {grid.name!r} is not connected")
        self.grid = grid
        self.arr = a = GridArrays.from_grid(grid)
        self.layout = Layout(a.nb, a.ng, a.nl, admittance is None)
        self.admittance = admittance
        self.rated = np.flatnonzero(a.rate > 0)
        self.n_eq = 1 + 2 * a.nb
        self.n_ineq = 2 * len(self.rated) + 2 * a.nl
        self._cache_key = None
        self._cache = None

    # -- bookkeeping ---------------------------------------------------------

    def constraint_kinds(self) -> tuple[list[str], list[str]]:
        a = self.arr
        eq = ["slack-angle"] + ["power-balance"] * (2 * a.nb)
        ineq = ["thermal"] * (2 * len(self.rated)) + ["angle-diff"] * (2 * a.nl)
        return eq, ineq

    def admittance_at(self, x: np.ndarray) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
        L = self.layout
        if L.variable_admittance:
            return x[L.g], x[L.b], x[L.b_sh]
        adm = self.admittance
        return np.asarray(adm.g, float), np.asarray(adm.b, float), np.asarray(adm.b_sh, float)

    def bounds(self) -> tuple[np.ndarray, np.ndarray]:
        a, L = self.arr, self.layout
        lo = np.full(L.n, -np.inf)
        up = np.full(L.n, np.inf)
        lo[L.vm], up[L.vm] = a.vmin, a.vmax
        lo[L.pg], up[L.pg] = a.pmin, a.pmax
        lo[L.qg], up[L.qg] = a.qmin, a.qmax
        return lo, up

    def flat_start(self) -> np.ndarray:
        a, L = self.arr, self.layout
        x = np.zeros(L.n)
        x[L.vm] = np.clip(1.0, a.vmin, a.vmax)
        x[L.pg] = 0.5 * (a.pmin + a.pmax)
        x[L.qg] = 0.5 * (a.qmin + a.qmax)
        if L.variable_admittance and self.admittance is not None:
            x[L.g], x[L.b], x[L.b_sh] = self.admittance.g, self.admittance.b, self.admittance.b_sh
        return x

    def flows(self, x: np.ndarray, order: int = 0) -> FlowEval:
        key = (x.tobytes(), order)
        if self._cache_key is not None and self._cache_key[0] == key[0] and self._cache_key[1] >= order:
            return self._cache
        a, L = self.arr, self.layout
        va, vm = x[L.va], x[L.vm]
        g, b, bsh = self.admittance_at(x)
        fe = local_flows(vm[a.f], vm[a.t], va[a.f], va[a.t], g, b, bsh, a.tap, a.shift, order=order)
        self._cache_key, self._cache = key, fe
        return fe

    def _local_cols(self) -> np.ndarray:
        a, L = self.arr, self.layout
        cols = [L.va.start + a.f, L.va.start + a.t, L.vm.start + a.f, L.vm.start + a.t]
        if L.variable_admittance:
            idx = np.arange(a.nl)
            cols += [L.g.start + idx, L.b.start + idx, L.b_sh.start + idx]
        return np.stack(cols, axis=1)

    @property
    def n_local(self) -> int:
        return _N_LOCAL if self.layout.variable_admittance else 4

    # -- constraints ---------------------------------------------------------

    def eq(self, x: np.ndarray) -> np.ndarray:
        a, L = self.arr, self.layout
        fe = self.flows(x)
        vm = x[L.vm]
        p = np.bincount(a.f, fe.pf, a.nb) + np.bincount(a.t, fe.pt, a.nb)
        q = np.bincount(a.f, fe.qf, a.nb) + np.bincount(a.t, fe.qt, a.nb)
        p += a.gs * vm**2 + a.pd - np.bincount(a.gen_bus, x[L.pg], a.nb)
        q += -a.bs * vm**2 + a.qd - np.bincount(a.gen_bus, x[L.qg], a.nb)
        return np.concatenate([[x[L.va][a.slack]], p, q])

    def eq_jacobian(self, x: np.ndarray) -> sp.csr_matrix:
        a, L = self.arr, self.layout
        fe = self.flows(x, order=1)
        nloc = self.n_local
        cols = self._local_cols()
        vm = x[L.vm]
        rows_l, cols_l, vals_l = [], [], []

        def add(r, c, v):
            rows_l.append(np.asarray(r).ravel())
            cols_l.append(np.asarray(c).ravel())
            vals_l.append(np.asarray(v).ravel())

        add([0], [L.va.start + a.slack], [1.0])
        off_p, off_q = 1, 1 + a.nb
        for k, (bus, off) in enumerate([(a.f, off_p), (a.f, off_q), (a.t, off_p), (a.t, off_q)]):
            r = np.repeat(off + bus, nloc)
            add(r, cols, fe.grad[k][:, :nloc])
        nb_idx = np.arange(a.nb)
        add(off_p + nb_idx, L.vm.start + nb_idx, 2 * a.gs * vm)
        add(off_q + nb_idx, L.vm.start + nb_idx, -2 * a.bs * vm)
        gi = np.arange(a.ng)
        add(off_p + a.gen_bus, L.pg.start + gi, -np.ones(a.ng))
        add(off_q + a.gen_bus, L.qg.start + gi, -np.ones(a.ng))
        return sp.csr_matrix(
            (np.concatenate(vals_l), (np.concatenate(rows_l), np.concatenate(cols_l))), shape=(self.n_eq, L.n)
        )

    def ineq(self, x: np.ndarray) -> np.ndarray:
        a, L = self.arr, self.layout
        fe = self.flows(x)
        r = self.rated
        rate2 = a.rate[r] ** 2
        sf2 = fe.pf[r] ** 2 + fe.qf[r] ** 2 - rate2
        st2 = fe.pt[r] ** 2 + fe.qt[r] ** 2 - rate2
        va = x[L.va]
        d = va[a.f] - va[a.t]
        return np.concatenate([sf2, st2, d - a.angmax, a.angmin - d])

    def ineq_jacobian(self, x: np.ndarray) -> sp.csr_matrix:
        a, L = self.arr, self.layout
        fe = self.flows(x, order=1)
        nloc = self.n_local
        r = self.rated
        nr = len(r)
        cols = self._local_cols()[r]
        gf = 2 * fe.pf[r, None] * fe.grad[0][r, :nloc] + 2 * fe.qf[r, None] * fe.grad[1][r, :nloc]
        gt = 2 * fe.pt[r, None] * fe.grad[2][r, :nloc] + 2 * fe.qt[r, None] * fe.grad[3][r, :nloc]
        rows = [np.repeat(np.arange(nr), nloc), np.repeat(nr + np.arange(nr), nloc)]
        colsl = [cols.ravel(), cols.ravel()]
        vals = [gf.ravel(), gt.ravel()]
        base = 2 * nr
        li = np.arange(a.nl)
        for sign, off in ((1.0, base), (-1.0, base + a.nl)):
            rows += [off + li, off + li]
            colsl += [L.va.start + a.f, L.va.start + a.t]
            vals += [np.full(a.nl, sign), np.full(a.nl, -sign)]
        return sp.csr_matrix(
            (np.concatenate(vals), (np.concatenate(rows), np.concatenate(colsl))), shape=(self.n_ineq, L.n)
        )

    def constraint_hessian(self, x: np.ndarray, lam: np.ndarray, mu: np.ndarray) -> sp.csr_matrix:
        """Hessian of ``lam'eq(x) + mu'ineq(x)``."""
        a, L = self.arr, self.layout
        fe = self.flows(x, order=2)
        nloc = self.n_local
        lp, lq = lam[1 : 1 + a.nb], lam[1 + a.nb :]
        w = [lp[a.f], lq[a.f], lp[a.t], lq[a.t]]
        H = np.zeros((a.nl, nloc, nloc))
        for k in range(4):
            H += w[k][:, None, None] * fe.hess[k][:, :nloc, :nloc]
        r = self.rated
        nr = len(r)
        if nr:
            mf, mt = mu[:nr], mu[nr : 2 * nr]
            for m, (kp, kq), (P, Q) in ((mf, (0, 1), (fe.pf, fe.qf)), (mt, (2, 3), (fe.pt, fe.qt))):
                gP = fe.grad[kp][r, :nloc]
                gQ = fe.grad[kq][r, :nloc]
                hS = 2 * (
                    gP[:, :, None] * gP[:, None, :]
                    + P[r, None, None] * fe.hess[kp][r, :nloc, :nloc]
                    + gQ[:, :, None] * gQ[:, None, :]
                    + Q[r, None, None] * fe.hess[kq][r, :nloc, :nloc]
                )
                H[r] += m[:, None, None] * hS
        cols = self._local_cols()
        rows = np.repeat(cols, nloc, axis=1).ravel()
        colsr = np.tile(cols, (1, nloc)).ravel()
        vm_idx = L.vm.start + np.arange(a.nb)
        diag = 2 * a.gs * lp - 2 * a.bs * lq
        rows = np.concatenate([rows, vm_idx])
        colsr = np.concatenate([colsr, vm_idx])
        vals = np.concatenate([H.ravel(), diag])
        return sp.csr_matrix((vals, (rows, colsr)), shape=(L.n, L.n))


@dataclass
class OpfSolution:
    vm: np.ndarray
    va: np.ndarray
    pg: np.ndarray
    qg: np.ndarray
    sf: np.ndarray
    st: np.ndarray
    objective: float
    status: str
    report: SolveReport | None = None
    g: np.ndarray | None = None
    b: np.ndarray | None = None
    b_sh: np.ndarray | None = None
    x: np.ndarray | None = field(default=None, repr=False)

    @property
    def success(self) -> bool:
        return self.status == "optimal"


def _cost(a: GridArrays, pg: np.ndarray) -> float:
    p = a.base_mva * pg
    return float(np.sum(a.c2 * p * p + a.c1 * p + a.c0))


def build_opf(case: NetworkCase, objective: str = COST) -> tuple[NlpProblem, AcOpfModel]:
    """Baseline AC-OPF with a dispatch-cost or grid-loss objective."""
    if objective not in OBJECTIVES:
        raise ValueError(f"objective must be one of {OBJECTIVES}, got {objective!r}")
    model = AcOpfModel(case, case.admittances())
    a, L = model.arr, model.layout
    n = L.n
    total_pd = float(a.pd.sum())

    if objective == COST:

        def f(x):
            return _cost(a, x[L.pg])

        def df(x):
            gr = np.zeros(n)
            p = a.base_mva * x[L.pg]
            gr[L.pg] = a.base_mva * (2 * a.c2 * p + a.c1)
            return gr

        obj_h = np.zeros(n)
        obj_h[L.pg] = 2 * a.c2 * a.base_mva**2
    else:

        def f(x):
            return float(np.sum(x[L.pg]) - total_pd)

        def df(x):
            gr = np.zeros(n)
            gr[L.pg] = 1.0
            return gr

        obj_h = np.zeros(n)

    def hess(x, obj_factor, lam, mu):
        return model.constraint_hessian(x, lam, mu) + sp.diags(obj_factor * obj_h)

    lo, up = model.bounds()
    problem = NlpProblem(
        n=n,
        objective=f,
        gradient=df,
        x0=model.flat_start(),
        lower=lo,
        upper=up,
        eq=model.eq,
        eq_jacobian=model.eq_jacobian,
        ineq=model.ineq,
        ineq_jacobian=model.ineq_jacobian,
        hessian=hess,
        name=f"{case.name}:opf-{objective}",
    )
    return problem, model


def solution_from_x(model: AcOpfModel, x: np.ndarray, objective: float, status: str, report=None) -> OpfSolution:
    L = model.layout
    fe = model.flows(x)
    sol = OpfSolution(
        vm=x[L.vm].copy(),
        va=x[L.va].copy(),
        pg=x[L.pg].copy(),
        qg=x[L.qg].copy(),
        sf=fe.pf + 1j * fe.qf,
        st=fe.pt + 1j * fe.qt,
        objective=objective,
        status=status,
        report=report,
        x=x.copy(),
    )
    if L.variable_admittance:
        sol.g, sol.b, sol.b_sh = x[L.g].copy(), x[L.b].copy(), x[L.b_sh].copy()
    return sol


def solve_opf(case: NetworkCase, objective: str = COST, opts: SolveOptions | None = None) -> OpfSolution:
    problem, model = build_opf(case, objective)
    x, report = solve(problem, opts)
    return solution_from_x(model, x, report.objective, report.status, report)


def grid_loss(case: _Grid, solution: OpfSolution) -> float:
    """Total active generation minus total active demand (p.u.)."""
    pd, _ = case.demand()
    return float(np.sum(solution.pg) - np.sum(pd))


@dataclass
class FeasibilityReport:
    violations: dict[str, float]
    tol: float

    @property
    def max_violation(self) -> float:
        return max(self.violations.values(), default=0.0)

    @property
    def ok(self) -> bool:
        return self.max_violation <= self.tol


def check_feasibility(case: NetworkCase, solution: OpfSolution, tol: float = 1e-6) -> FeasibilityReport:
    """Re-evaluate every OPF constraint at ``solution`` using the case's own
    admittances and complex arithmetic; report the largest violation per kind.
    """
    a = GridArrays.from_grid(case)
    adm = case.admittances()
    V = solution.vm * np.exp(1j * solution.va)
    y = adm.g + 1j * adm.b
    ysh = 0.5j * adm.b_sh
    ratio = a.tap * np.exp(1j * a.shift)
    Vf, Vt = V[a.f], V[a.t]
    sf = np.conj(y + ysh) * np.abs(Vf) ** 2 / a.tap**2 - np.conj(y) * Vf * np.conj(Vt) / np.conj(ratio)
    st = np.conj(y + ysh) * np.abs(Vt) ** 2 - np.conj(y) * Vt * np.conj(Vf) / ratio
    inj = np.zeros(a.nb, complex)
    np.add.at(inj, a.f, sf)
    np.add.at(inj, a.t, st)
    sg = np.zeros(a.nb, complex)
    np.add.at(sg, a.gen_bus, solution.pg + 1j * solution.qg)
    ysh_bus = a.gs + 1j * a.bs
    mismatch = sg - (a.pd + 1j * a.qd) - np.conj(ysh_bus) * solution.vm**2 - inj
    dth = solution.va[a.f] - solution.va[a.t]
    r = a.rate > 0
    pos = lambda v: float(np.max(np.maximum(v, 0.0), initial=0.0))  # noqa: E731
    violations = {
        "slack-angle": abs(float(solution.va[a.slack])),
        "vm-bounds": max(pos(solution.vm - a.vmax), pos(a.vmin - solution.vm)),
        "angle-diff": max(pos(dth - a.angmax), pos(a.angmin - dth)),
        "gen-bounds": max(
            pos(solution.pg - a.pmax), pos(a.pmin - solution.pg), pos(solution.qg - a.qmax), pos(a.qmin - solution.qg)
        ),
        "thermal": max(pos(np.abs(sf[r]) - a.rate[r]), pos(np.abs(st[r]) - a.rate[r])),
        "power-balance": float(np.max(np.maximum(np.abs(mismatch.real), np.abs(mismatch.imag)), initial=0.0)),
    }
    return FeasibilityReport(violations, tol)
