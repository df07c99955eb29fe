"""In-memory transmission network model.

All quantities are per unit on the case MVA base, angles in radians. Records
are frozen dataclasses; a :class:`NetworkCase` is never mutated after
construction, edits go through :meth:`NetworkCase.with_branch_parameters`.
"""

from __future__ import annotations

import math
from collections import defaultdict
from dataclasses import dataclass, replace
from functools import cached_property
from typing import Iterable

import numpy as np
from scipy.sparse import coo_matrix
from scipy.sparse.csgraph import connected_components


class DegenerateBranchError(ValueError):
    """Raised when a zero impedance or zero admittance cannot be inverted."""


class CaseValidationError(ValueError):
    """Raised when a network description is internally inconsistent."""


@dataclass(frozen=True)
class Bus:
    id: int
    base_kv: float
    vmin: float
    vmax: float
    shunt_g: float = 0.0
    shunt_b: float = 0.0
    is_slack: bool = False


@dataclass(frozen=True)
class BranchAdmittance:
    """Series conductance/susceptance and total line-charging susceptance.

    Works equally for scalars and for aligned numpy vectors (one entry per
    branch).
    """

    g: float | np.ndarray
    b: float | np.ndarray
    b_sh: float | np.ndarray


@dataclass(frozen=True)
class BranchTopology:
    """Everything about a branch except its impedance parameters."""

    id: int
    from_bus: int
    to_bus: int
    tap: float = 1.0
    shift: float = 0.0
    rate_a: float = 0.0
    ang_min: float = -math.pi / 2
    ang_max: float = math.pi / 2
    status: bool = True


@dataclass(frozen=True)
class Branch:
    id: int
    from_bus: int
    to_bus: int
    r: float
    x: float
    b_sh: float = 0.0
    g_sh: float = 0.0
    tap: float = 1.0
    shift: float = 0.0
    rate_a: float = 0.0
    ang_min: float = -math.pi / 2
    ang_max: float = math.pi / 2
    status: bool = True

    @property
    def admittance(self) -> BranchAdmittance:
        g, b = to_series_admittance(self.r, self.x)
        return BranchAdmittance(g, b, self.b_sh)

    def topology(self) -> BranchTopology:
        return BranchTopology(
            id=self.id,
            from_bus=self.from_bus,
            to_bus=self.to_bus,
            tap=self.tap,
            shift=self.shift,
            rate_a=self.rate_a,
            ang_min=self.ang_min,
            ang_max=self.ang_max,
            status=self.status,
        )


@dataclass(frozen=True)
class Generator:
    id: int
    bus: int
    pmin: float
    pmax: float
    qmin: float
    qmax: float
    c2: float = 0.0
    c1: float = 0.0
    c0: float = 0.0
    status: bool = True


@dataclass(frozen=True)
class Load:
    bus: int
    pd: float
    qd: float


def to_series_admittance(r, x):
    """Return ``(g, b)`` with ``g + jb = 1 / (r + jx)``.

    >>> to_series_admittance(3.0, 4.0)
    (0.12, -0.16)
    """
    r = np.asarray(r, dtype=float)
    x = np.asarray(x, dtype=float)
    den = r * r + x * x
    if np.any(den == 0.0):
        raise DegenerateBranchError("zero series impedance (r = x = 0)")
    g, b = r / den, -x / den
    if g.ndim == 0:
        return float(g), float(b)
    return g, b


def to_series_impedance(g, b):
    """Return ``(r, x)`` with ``r + jx = 1 / (g + jb)``."""
    g = np.asarray(g, dtype=float)
    b = np.asarray(b, dtype=float)
    den = g * g + b * b
    if np.any(den == 0.0):
        raise DegenerateBranchError("zero series admittance (g = b = 0)")
    r, x = g / den, -b / den
    if r.ndim == 0:
        return float(r), float(x)
    return r, x


@dataclass(frozen=True)
class _Grid:
    name: str
    base_mva: float
    buses: tuple[Bus, ...]
    branches: tuple
    generators: tuple[Generator, ...]
    loads: tuple[Load, ...] = ()

    def __post_init__(self):
        for attr in ("buses", "branches", "generators", "loads"):
            object.__setattr__(self, attr, tuple(getattr(self, attr)))
        self._validate()

    def _validate(self) -> None:
        ids = [b.id for b in self.buses]
        if len(set(ids)) != len(ids):
            raise CaseValidationError("duplicate bus ids")
        known = set(ids)
        bad = [
            f"branch {br.id}: {br.from_bus}->{br.to_bus}"
            for br in self.branches
            if br.from_bus not in known or br.to_bus not in known
        ]
        bad += [f"generator {g.id}: bus {g.bus}" for g in self.generators if g.bus not in known]
        bad += [f"load at bus {ld.bus}" for ld in self.loads if ld.bus not in known]
        if bad:
            raise CaseValidationError("dangling bus references: " + "; ".join(bad))
        n_slack = sum(b.is_slack for b in self.buses)
        if n_slack != 1:
            raise CaseValidationError(f"expected exactly one slack bus, found {n_slack}")
        for br in self.branches:
            if br.tap <= 0:
                raise CaseValidationError(f"branch {br.id}: tap ratio must be positive")
        for g in self.generators:
            if g.pmin > g.pmax or g.qmin > g.qmax:
                raise CaseValidationError(f"generator {g.id}: inverted limits")
        for b in self.buses:
            if not (0 < b.vmin <= b.vmax):
                raise CaseValidationError(f"bus {b.id}: bad voltage bounds")
            if b.base_kv <= 0:
                raise CaseValidationError(f"bus {b.id}: base_kv must be positive")

    @cached_property
    def bus_index(self) -> dict[int, int]:
        return {b.id: k for k, b in enumerate(self.buses)}

    @property
    def slack_index(self) -> int:
        return next(k for k, b in enumerate(self.buses) if b.is_slack)

    @property
    def in_service_branches(self) -> tuple:
        return tuple(br for br in self.branches if br.status)

    @property
    def in_service_generators(self) -> tuple[Generator, ...]:
        return tuple(g for g in self.generators if g.status)

    def is_connected(self) -> bool:
        n = len(self.buses)
        idx = self.bus_index
        rows = [idx[br.from_bus] for br in self.in_service_branches]
        cols = [idx[br.to_bus] for br in self.in_service_branches]
        adj = coo_matrix((np.ones(len(rows)), (rows, cols)), shape=(n, n))
        n_comp, _ = connected_components(adj, directed=False)
        return n_comp == 1

    def demand(self) -> tuple[np.ndarray, np.ndarray]:
        """Per-bus active and reactive demand vectors (bus order)."""
        pd = np.zeros(len(self.buses))
        qd = np.zeros(len(self.buses))
        for ld in self.loads:
            k = self.bus_index[ld.bus]
            pd[k] += ld.pd
            qd[k] += ld.qd
        return pd, qd


@dataclass(frozen=True)
class PublicNetwork(_Grid):
    """A network description with the protected line parameters removed.

    Branches are :class:`BranchTopology` records: endpoints, taps, thermal and
    angle limits, but no r, x or shunt susceptance.
    """


@dataclass(frozen=True)
class NetworkCase(_Grid):
    """The full network description; ``branches`` holds :class:`Branch` records."""

    def _validate(self) -> None:
        super()._validate()
        for br in self.branches:
            if br.status and br.x == 0.0 and br.r == 0.0:
                raise CaseValidationError(f"branch {br.id}: zero impedance")
            if br.r < 0:
                raise CaseValidationError(f"branch {br.id}: negative resistance")

    def public(self) -> PublicNetwork:
        return PublicNetwork(
            name=self.name,
            base_mva=self.base_mva,
            buses=self.buses,
            branches=tuple(br.topology() for br in self.branches),
            generators=self.generators,
            loads=self.loads,
        )

    def admittances(self) -> BranchAdmittance:
        """Vectorised admittances of the in-service branches, in branch order."""
        brs = self.in_service_branches
        r = np.array([br.r for br in brs])
        x = np.array([br.x for br in brs])
        g, b = to_series_admittance(r, x)
        return BranchAdmittance(np.atleast_1d(g), np.atleast_1d(b), np.array([br.b_sh for br in brs]))

    def with_branch_parameters(self, params: dict[int, tuple[float, float, float]]) -> "NetworkCase":
        """Copy of the case with ``{branch_id: (r, x, b_sh)}`` substituted."""
        branches = []
        for br in self.branches:
            if br.id in params:
                r, x, b_sh = params[br.id]
                br = replace(br, r=float(r), x=float(x), b_sh=float(b_sh))
            branches.append(br)
        return replace(self, branches=tuple(branches))


def branch_level(grid: _Grid, branch) -> float:
    """Voltage level of a branch: the higher of its two endpoint base voltages."""
    idx = grid.bus_index
    return max(grid.buses[idx[branch.from_bus]].base_kv, grid.buses[idx[branch.to_bus]].base_kv)


def voltage_levels(grid: _Grid) -> dict[float, tuple[int, ...]]:
    """Partition in-service branch ids by voltage level (kV).

    Transformers whose endpoints sit at different levels are assigned to the
    higher one.
    """
    groups: dict[float, list[int]] = defaultdict(list)
    for br in grid.in_service_branches:
        groups[branch_level(grid, br)].append(br.id)
    return {lvl: tuple(ids) for lvl, ids in sorted(groups.items())}


def level_index(grid: _Grid) -> tuple[list[float], np.ndarray]:
    """Sorted level list and, per in-service branch, the position of its level."""
    levels = sorted(voltage_levels(grid))
    pos = {lvl: k for k, lvl in enumerate(levels)}
    which = np.array([pos[branch_level(grid, br)] for br in grid.in_service_branches], dtype=int)
    return levels, which


def iter_branch_ids(grid: _Grid) -> Iterable[int]:
    return (br.id for br in grid.in_service_branches)
