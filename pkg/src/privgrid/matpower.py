"""Reader and writer for the Matpower ``.m`` case format.

Only the data subset used by case files is understood: ``function mpc =``
headers, ``mpc.<field> = <scalar | 'string' | [matrix] | {cell}>;``
assignments and ``%`` comments. Matrices keep every column they are given;
fields other than the four standard matrices are carried verbatim.
"""

from __future__ import annotations

import bisect
import math
import re
from dataclasses import dataclass, field
from importlib import resources
from pathlib import Path

import numpy as np

from .network import Branch, Bus, CaseValidationError, Generator, Load, NetworkCase

# column indices (0-based) of the standard layout
BUS_I, BUS_TYPE, PD, QD, GS, BS, BUS_AREA, VM, VA, BASE_KV, ZONE, VMAX, VMIN = range(13)
GEN_BUS, PG, QG, QMAX, QMIN, VG, MBASE, GEN_STATUS, PMAX, PMIN = range(10)
F_BUS, T_BUS, BR_R, BR_X, BR_B, RATE_A, RATE_B, RATE_C, TAP, SHIFT, BR_STATUS, ANGMIN, ANGMAX = range(13)
MODEL, STARTUP, SHUTDOWN, NCOST, COST = range(5)

PQ, PV, REF, NONE = 1, 2, 3, 4

MIN_COLUMNS = {"bus": 13, "gen": 10, "branch": 13, "gencost": 4}

_BUS_HEADER = "bus_i\ttype\tPd\tQd\tGs\tBs\tarea\tVm\tVa\tbaseKV\tzone\tVmax\tVmin"
_GEN_HEADER = "bus\tPg\tQg\tQmax\tQmin\tVg\tmBase\tstatus\tPmax\tPmin"
_BRANCH_HEADER = "fbus\ttbus\tr\tx\tb\trateA\trateB\trateC\tratio\tangle\tstatus\tangmin\tangmax"
_GENCOST_HEADER = "2\tstartup\tshutdown\tn\tc(n-1)\t...\tc0"


class MatpowerParseError(ValueError):
    def __init__(self, message: str, line: int | None = None):
        self.line = line
        super().__init__(f"line {line}: {message}" if line is not None else message)


class UnsupportedCostModel(ValueError):
    pass


@dataclass
class RawCase:
    """Matrices of a case file, untouched apart from parsing."""

    base_mva: float
    bus: np.ndarray
    gen: np.ndarray
    branch: np.ndarray
    gencost: np.ndarray | None = None
    function_name: str = "mpc"
    version: str = "2"
    extras: dict[str, str] = field(default_factory=dict)

    def copy(self) -> "RawCase":
        return RawCase(
            base_mva=self.base_mva,
            bus=self.bus.copy(),
            gen=self.gen.copy(),
            branch=self.branch.copy(),
            gencost=None if self.gencost is None else self.gencost.copy(),
            function_name=self.function_name,
            version=self.version,
            extras=dict(self.extras),
        )

    def same_data(self, other: "RawCase") -> bool:
        if self.base_mva != other.base_mva:
            return False
        for name in ("bus", "gen", "branch", "gencost"):
            a, b = getattr(self, name), getattr(other, name)
            if (a is None) != (b is None):
                return False
            if a is not None and not np.array_equal(a, b, equal_nan=True):
                return False
        return True


_ASSIGN = re.compile(r"mpc\.(\w+)\s*=\s*")
_FUNC = re.compile(r"function\s+\w+\s*=\s*(\w+)")
_NUMBER = {"inf": math.inf, "+inf": math.inf, "-inf": -math.inf, "nan": math.nan}


def _strip_comments(text: str) -> str:
    out = []
    for line in text.splitlines():
        quoted = False
        cut = len(line)
        for k, ch in enumerate(line):
            if ch == "'":
                quoted = not quoted
            elif ch == "%" and not quoted:
                cut = k
                break
        out.append(line[:cut])
    return "\n".join(out)


def _closing(text: str, start: int, open_ch: str, close_ch: str) -> int:
    depth = 0
    for k in range(start, len(text)):
        if text[k] == open_ch:
            depth += 1
        elif text[k] == close_ch:
            depth -= 1
            if depth == 0:
                return k
    return -1


def _to_float(tok: str) -> float:
    low = tok.lower()
    if low in _NUMBER:
        return _NUMBER[low]
    return float(tok)


def _parse_matrix(body: str, name: str, first_line: int) -> np.ndarray:
    rows: list[list[float]] = []
    line = first_line
    for raw_line in body.split("\n"):
        for chunk in raw_line.split(";"):
            toks = [t for t in re.split(r"[\s,]+", chunk.strip()) if t]
            if not toks:
                continue
            row = []
            for col, tok in enumerate(toks, start=1):
                try:
                    row.append(_to_float(tok))
                except ValueError:
                    raise MatpowerParseError(
                        f"mpc.{name}: non-numeric entry {tok!r} at row {len(rows) + 1}, column {col}", line
                    ) from None
            rows.append(row)
        line += 1
    if not rows:
        return np.zeros((0, MIN_COLUMNS.get(name, 0)))
    width = len(rows[0])
    for k, row in enumerate(rows, start=1):
        if len(row) != width:
            raise MatpowerParseError(
                f"mpc.{name}: row {k} has {len(row)} columns, expected {width}", first_line
            )
    return np.array(rows, dtype=float)


def parse_matpower(text: str) -> RawCase:
    """Parse the text of a Matpower case file."""
    clean = _strip_comments(text)
    line_starts = [0] + [m.end() for m in re.finditer("\n", clean)]

    def line_of(pos: int) -> int:
        return bisect.bisect_right(line_starts, pos)

    m = _FUNC.search(clean)
    function_name = m.group(1) if m else "mpc"
    fields: dict[str, object] = {}
    extras: dict[str, str] = {}
    pos = 0
    while True:
        m = _ASSIGN.search(clean, pos)
        if m is None:
            break
        name, start = m.group(1), m.end()
        ch = clean[start : start + 1]
        if ch in "[{":
            end = _closing(clean, start, ch, "]" if ch == "[" else "}")
            if end < 0:
                raise MatpowerParseError(f"mpc.{name}: unterminated {ch}", line_of(start))
            if ch == "[":
                fields[name] = _parse_matrix(clean[start + 1 : end], name, line_of(start))
            else:
                extras[name] = clean[start : end + 1]
            pos = end + 1
        else:
            end = start
            while end < len(clean) and clean[end] not in ";\n":
                end += 1
            value = clean[start:end].strip()
            if value.startswith("'"):
                fields[name] = value.strip("'")
            else:
                try:
                    fields[name] = _to_float(value)
                except ValueError:
                    raise MatpowerParseError(f"mpc.{name}: cannot parse scalar {value!r}", line_of(start)) from None
            pos = end
    last_line = len(line_starts)
    for req in ("baseMVA", "bus", "gen", "branch"):
        if req not in fields:
            raise MatpowerParseError(f"missing mpc.{req}", last_line)
    for name, minimum in MIN_COLUMNS.items():
        mat = fields.get(name)
        if isinstance(mat, np.ndarray) and mat.shape[0] and mat.shape[1] < minimum:
            raise MatpowerParseError(f"mpc.{name} has {mat.shape[1]} columns, need at least {minimum}")
    for name, value in fields.items():
        if name not in ("baseMVA", "bus", "gen", "branch", "gencost", "version") and isinstance(value, np.ndarray):
            extras[name] = _matrix_text(value)
    return RawCase(
        base_mva=float(fields["baseMVA"]),
        bus=fields["bus"],
        gen=fields["gen"],
        branch=fields["branch"],
        gencost=fields.get("gencost"),
        function_name=function_name,
        version=str(fields.get("version", "2")),
        extras=extras,
    )


def _fmt(v: float) -> str:
    if math.isnan(v):
        return "NaN"
    if math.isinf(v):
        return "Inf" if v > 0 else "-Inf"
    if v == int(v) and abs(v) < 1e15:
        return str(int(v))
    return repr(float(v))


def _matrix_text(mat: np.ndarray) -> str:
    lines = ["["]
    for row in mat:
        lines.append("\t" + "\t".join(_fmt(v) for v in row) + ";")
    lines.append("]")
    return "\n".join(lines)


def write_matpower(raw: RawCase) -> str:
    """Render a :class:`RawCase` as Matpower text (shortest exact round-trip floats)."""
    out = [
        f"function mpc = {raw.function_name}",
        "",
        "%% MATPOWER Case Format : Version 2",
        f"mpc.version = '{raw.version}';",
        "",
        "%% system MVA base",
        f"mpc.baseMVA = {_fmt(raw.base_mva)};",
        "",
        "%% bus data",
        f"%\t{_BUS_HEADER}",
        f"mpc.bus = {_matrix_text(raw.bus)};",
        "",
        "%% generator data",
        f"%\t{_GEN_HEADER}",
        f"mpc.gen = {_matrix_text(raw.gen)};",
        "",
        "%% branch data",
        f"%\t{_BRANCH_HEADER}",
        f"mpc.branch = {_matrix_text(raw.branch)};",
    ]
    if raw.gencost is not None:
        out += ["", "%% generator cost data", f"%\t{_GENCOST_HEADER}", f"mpc.gencost = {_matrix_text(raw.gencost)};"]
    for name, body in raw.extras.items():
        out += ["", f"mpc.{name} = {body};"]
    return "\n".join(out) + "\n"


def _angle_limit(deg: float, sign: int) -> float:
    # Matpower: 0 or |angle| >= 360 means unconstrained on that side
    if deg == 0.0 or abs(deg) >= 360.0:
        return sign * math.pi / 2
    rad = math.radians(deg)
    return max(-math.pi / 2, min(math.pi / 2, rad))


def _poly_cost(row: np.ndarray, gen_row: int) -> tuple[float, float, float]:
    if int(row[MODEL]) != 2:
        raise UnsupportedCostModel(f"gencost row {gen_row}: only polynomial cost (MODEL=2) is supported")
    n = int(row[NCOST])
    coeffs = list(row[COST : COST + n])
    while len(coeffs) > 3:
        if coeffs[0] != 0.0:
            raise UnsupportedCostModel(f"gencost row {gen_row}: polynomial degree above 2")
        coeffs.pop(0)
    coeffs = [0.0] * (3 - len(coeffs)) + coeffs
    return float(coeffs[0]), float(coeffs[1]), float(coeffs[2])


def raw_to_case(raw: RawCase, name: str | None = None) -> NetworkCase:
    """Convert file matrices to a per-unit :class:`NetworkCase`.

    Out-of-service branches and generators and isolated buses are dropped;
    branch and generator ids are their 1-based row numbers in the file.
    """
    base = raw.base_mva
    bus_ids = {int(r[BUS_I]) for r in raw.bus}
    bad = [f"gen row {k + 1} -> bus {int(r[GEN_BUS])}" for k, r in enumerate(raw.gen) if int(r[GEN_BUS]) not in bus_ids]
    bad += [
        f"branch row {k + 1} -> {int(r[F_BUS])}-{int(r[T_BUS])}"
        for k, r in enumerate(raw.branch)
        if int(r[F_BUS]) not in bus_ids or int(r[T_BUS]) not in bus_ids
    ]
    if bad:
        raise CaseValidationError("dangling bus references: " + "; ".join(bad))

    buses, loads = [], []
    for r in raw.bus:
        if int(r[BUS_TYPE]) == NONE:
            continue
        bid = int(r[BUS_I])
        buses.append(
            Bus(
                id=bid,
                base_kv=float(r[BASE_KV]) if r[BASE_KV] > 0 else 1.0,
                vmin=float(r[VMIN]),
                vmax=float(r[VMAX]),
                shunt_g=float(r[GS]) / base,
                shunt_b=float(r[BS]) / base,
                is_slack=int(r[BUS_TYPE]) == REF,
            )
        )
        if r[PD] != 0.0 or r[QD] != 0.0:
            loads.append(Load(bus=bid, pd=float(r[PD]) / base, qd=float(r[QD]) / base))

    gens = []
    for k, r in enumerate(raw.gen):
        if r[GEN_STATUS] <= 0:
            continue
        c2 = c1 = c0 = 0.0
        if raw.gencost is not None and k < raw.gencost.shape[0]:
            c2, c1, c0 = _poly_cost(raw.gencost[k], k + 1)
        gens.append(
            Generator(
                id=k + 1,
                bus=int(r[GEN_BUS]),
                pmin=float(r[PMIN]) / base,
                pmax=float(r[PMAX]) / base,
                qmin=float(r[QMIN]) / base,
                qmax=float(r[QMAX]) / base,
                c2=c2,
                c1=c1,
                c0=c0,
            )
        )

    branches = []
    for k, r in enumerate(raw.branch):
        if r[BR_STATUS] == 0:
            continue
        tap = float(r[TAP]) if r[TAP] != 0.0 else 1.0
        branches.append(
            Branch(
                id=k + 1,
                from_bus=int(r[F_BUS]),
                to_bus=int(r[T_BUS]),
                r=float(r[BR_R]),
                x=float(r[BR_X]),
                b_sh=float(r[BR_B]),
                tap=tap,
                shift=math.radians(float(r[SHIFT])),
                rate_a=float(r[RATE_A]) / base,
                ang_min=_angle_limit(float(r[ANGMIN]), -1),
                ang_max=_angle_limit(float(r[ANGMAX]), +1),
            )
        )
    return NetworkCase(
        name=name or raw.function_name,
        base_mva=base,
        buses=buses,
        branches=branches,
        generators=gens,
        loads=loads,
    )


def case_to_raw(case: NetworkCase, template: RawCase) -> RawCase:
    """Write the case's branch r, x and b back into a copy of ``template``.

    Every other column of every matrix is left as it was in the template.
    """
    out = template.copy()
    for br in case.branches:
        row = br.id - 1
        out.branch[row, BR_R] = br.r
        out.branch[row, BR_X] = br.x
        out.branch[row, BR_B] = br.b_sh
    return out


def read_raw(path: str | Path) -> RawCase:
    return parse_matpower(Path(path).read_text())


def read_case(path: str | Path) -> tuple[NetworkCase, RawCase]:
    path = Path(path)
    raw = read_raw(path)
    return raw_to_case(raw, name=path.stem), raw


def bundled_case_path(name: str) -> Path:
    """Path of a case file shipped with the package, e.g. ``'pglib_opf_case5_pjm'``."""
    ref = resources.files("privgrid") / "data" / "cases" / f"{name}.m"
    path = Path(str(ref))
    if not path.exists():
        raise FileNotFoundError(f"no bundled case named {name!r}")
    return path


def bundled_cases() -> list[str]:
    folder = Path(str(resources.files("privgrid") / "data" / "cases"))
    return sorted(p.stem for p in folder.glob("*.m"))
