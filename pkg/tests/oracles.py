"""Independent reference computations used by the tests.

Nothing here imports the code paths under test for the quantity being
checked: flows go through a textbook bus admittance matrix, feasibility is
re-evaluated in plain Python loops, and Laplace statistics come from scipy.
"""

from __future__ import annotations

import math
import xml.etree.ElementTree as ET

import numpy as np

from privgrid.network import Branch, Bus, Generator, Load, NetworkCase

# published PGLib-OPF v23.07 baseline AC objective values ($/h)
PGLIB_REFERENCE = {
    "pglib_opf_case3_lmbd": 5812.64,
    "pglib_opf_case5_pjm": 17551.89,
    "pglib_opf_case14_ieee": 2178.08,
}

MINIMAL_CASE = """function mpc = two_bus
mpc.version = '2';
mpc.baseMVA = 100;
% bus_i type Pd Qd Gs Bs area Vm Va baseKV zone Vmax Vmin
mpc.bus = [
	1	3	0	0	0	0	1	1	0	138	1	1.1	0.9;
	2	1	50	10	0	0	1	1	0	138	1	1.1	0.9;
];
mpc.gen = [
	1	0	0	100	-100	1	100	1	200	0;
];
mpc.branch = [
	1	2	0.01	0.1	0.02	250	250	250	0	0	1	-360	360;
];
mpc.gencost = [
	2	0	0	3	0.01	10	5;
];
"""


def complex_flow(g, b, b_sh, tap, shift, vm_i, va_i, vm_j, va_j):
    """Both end flows from the branch's 2x2 admittance block, S = V conj(I)."""
    y = complex(g, b)
    ysh = 0.5j * b_sh
    t = tap * np.exp(1j * shift)
    yff = (y + ysh) / (tap * tap)
    yft = -y / np.conj(t)
    ytf = -y / t
    ytt = y + ysh
    vi = vm_i * np.exp(1j * va_i)
    vj = vm_j * np.exp(1j * va_j)
    ii = yff * vi + yft * vj
    ij = ytf * vi + ytt * vj
    return vi * np.conj(ii), vj * np.conj(ij)


def ybus(case: NetworkCase) -> np.ndarray:
    """Dense bus admittance matrix, assembled branch by branch."""
    idx = case.bus_index
    n = len(case.buses)
    Y = np.zeros((n, n), complex)
    for br in case.in_service_branches:
        y = 1.0 / complex(br.r, br.x)
        ysh = 0.5j * br.b_sh
        t = br.tap * np.exp(1j * br.shift)
        f, k = idx[br.from_bus], idx[br.to_bus]
        Y[f, f] += (y + ysh) / (br.tap**2)
        Y[f, k] += -y / np.conj(t)
        Y[k, f] += -y / t
        Y[k, k] += y + ysh
    for bus in case.buses:
        Y[idx[bus.id], idx[bus.id]] += complex(bus.shunt_g, bus.shunt_b)
    return Y


def brute_force_violations(case: NetworkCase, vm, va, pg, qg) -> dict[str, float]:
    """Every OPF constraint re-evaluated with scalar loops."""
    idx = case.bus_index
    V = [vm[k] * complex(math.cos(va[k]), math.sin(va[k])) for k in range(len(vm))]
    Y = ybus(case)
    out = {k: 0.0 for k in ("slack-angle", "vm-bounds", "angle-diff", "gen-bounds", "thermal", "power-balance")}
    out["slack-angle"] = abs(va[case.slack_index])
    for k, bus in enumerate(case.buses):
        out["vm-bounds"] = max(out["vm-bounds"], vm[k] - bus.vmax, bus.vmin - vm[k])
    sg = [0j] * len(V)
    for k, gen in enumerate(case.in_service_generators):
        out["gen-bounds"] = max(
            out["gen-bounds"], pg[k] - gen.pmax, gen.pmin - pg[k], qg[k] - gen.qmax, gen.qmin - qg[k]
        )
        sg[idx[gen.bus]] += complex(pg[k], qg[k])
    pd, qd = case.demand()
    for i in range(len(V)):
        inj = V[i] * sum(np.conj(Y[i, j] * V[j]) for j in range(len(V)))
        mis = sg[i] - complex(pd[i], qd[i]) - inj
        out["power-balance"] = max(out["power-balance"], abs(mis.real), abs(mis.imag))
    for br in case.in_service_branches:
        f, t = idx[br.from_bus], idx[br.to_bus]
        d = va[f] - va[t]
        out["angle-diff"] = max(out["angle-diff"], d - br.ang_max, br.ang_min - d)
        if br.rate_a > 0:
            g, b = br.r / (br.r**2 + br.x**2), -br.x / (br.r**2 + br.x**2)
            sf, st = complex_flow(g, b, br.b_sh, br.tap, br.shift, vm[f], va[f], vm[t], va[t])
            out["thermal"] = max(out["thermal"], abs(sf) - br.rate_a, abs(st) - br.rate_a)
    return {k: max(v, 0.0) for k, v in out.items()}


def fd_jacobian(fun, x: np.ndarray, h: float = 1e-6) -> np.ndarray:
    """Central-difference Jacobian, one column per variable."""
    x = np.asarray(x, float)
    f0 = np.atleast_1d(fun(x))
    J = np.zeros((f0.size, x.size))
    for i in range(x.size):
        e = np.zeros_like(x)
        e[i] = h
        J[:, i] = (np.atleast_1d(fun(x + e)) - np.atleast_1d(fun(x - e))) / (2 * h)
    return J


def relative_error(A, B) -> float:
    A = A.toarray() if hasattr(A, "toarray") else np.asarray(A)
    B = B.toarray() if hasattr(B, "toarray") else np.asarray(B)
    return float(np.max(np.abs(A - B), initial=0.0) / max(1.0, np.max(np.abs(B), initial=0.0)))


def svg_points(svg: bytes) -> dict[str, int]:
    """Marker count per scatter group of a rendered SVG."""
    root = ET.fromstring(svg)
    counts = {}
    for g in root.iter("{http://www.w3.org/2000/svg}g"):
        gid = g.get("id", "")
        if gid.startswith("points-"):
            counts[gid[len("points-") :]] = sum(1 for el in g.iter() if el.tag.endswith("}use"))
    return counts


def svg_coords(svg: bytes) -> dict[str, np.ndarray]:
    """Marker positions (pixels, SVG y axis pointing down) per scatter group."""
    root = ET.fromstring(svg)
    out = {}
    for g in root.iter("{http://www.w3.org/2000/svg}g"):
        gid = g.get("id", "")
        if gid.startswith("points-"):
            pts = [(float(el.get("x")), float(el.get("y"))) for el in g.iter() if el.tag.endswith("}use")]
            out[gid[len("points-") :]] = np.array(pts).reshape(-1, 2)
    return out


def two_bus_case(r=0.0, x=0.1, b_sh=0.0, pd=0.5, qd=0.1, name="two_bus") -> NetworkCase:
    return NetworkCase(
        name=name,
        base_mva=100.0,
        buses=(
            Bus(1, 138.0, 0.9, 1.1, is_slack=True),
            Bus(2, 138.0, 0.9, 1.1),
        ),
        branches=(Branch(1, 1, 2, r, x, b_sh=b_sh, rate_a=5.0),),
        generators=(Generator(1, 1, 0.0, 5.0, -5.0, 5.0, c2=0.0, c1=1.0, c0=0.0),),
        loads=(Load(2, pd, qd),),
    )
