"""Utility and solvability reporting for released networks."""

from __future__ import annotations

import csv
import io
import math
from collections import Counter
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterable, Mapping

import numpy as np

from .mechanism import PrivacyParams
from .network import NetworkCase

QUANTITIES = ("r", "x", "b_sh")
OUTCOMES = ("optimal", "infeasible", "timeout", "iteration-limit", "numerical")
CSV_HEADER = ("branch_id", "quantity", "original", "released")


def rmse(a, b) -> float:
    """Root-mean-square difference of two equal-length vectors."""
    a = np.asarray(a, dtype=float).ravel()
    b = np.asarray(b, dtype=float).ravel()
    if a.shape != b.shape:
        raise ValueError(f"length mismatch: {a.size} vs {b.size}")
    if a.size == 0:
        raise ValueError("rmse of empty vectors")
    return float(np.sqrt(np.mean((a - b) ** 2)))


@dataclass
class UtilityReport:
    case_name: str
    branch_ids: tuple[int, ...]
    original: dict[str, np.ndarray]
    released: dict[str, np.ndarray]
    params: PrivacyParams | None = None

    def rmse_of(self, quantity: str) -> float:
        return rmse(self.original[quantity], self.released[quantity])

    @property
    def rmse_r(self) -> float:
        return self.rmse_of("r")

    @property
    def rmse_x(self) -> float:
        return self.rmse_of("x")

    @property
    def rmse_bsh(self) -> float:
        return self.rmse_of("b_sh")

    def rows(self) -> list[tuple[int, str, float, float]]:
        out = []
        for q in QUANTITIES:
            for k, bid in enumerate(self.branch_ids):
                out.append((bid, q, float(self.original[q][k]), float(self.released[q][k])))
        return out

    def summary(self) -> dict:
        if not self.branch_ids:
            return {"case": self.case_name, "n_branches": 0}
        return {
            "case": self.case_name,
            "n_branches": len(self.branch_ids),
            "rmse_r": self.rmse_r,
            "rmse_x": self.rmse_x,
            "rmse_b_sh": self.rmse_bsh,
        }

    @classmethod
    def empty(cls, case_name: str = "") -> "UtilityReport":
        z = {q: np.zeros(0) for q in QUANTITIES}
        return cls(case_name, (), z, dict(z))


def _branch_values(case: NetworkCase) -> dict[str, np.ndarray]:
    brs = case.in_service_branches
    return {
        "r": np.array([br.r for br in brs]),
        "x": np.array([br.x for br in brs]),
        "b_sh": np.array([br.b_sh for br in brs]),
    }


def utility_report(original: NetworkCase, released: NetworkCase, params: PrivacyParams | None = None) -> UtilityReport:
    """Compare final released line parameters with the originals (in-service branches, p.u.)."""
    ids = tuple(br.id for br in original.in_service_branches)
    if ids != tuple(br.id for br in released.in_service_branches):
        raise ValueError("original and released cases have different in-service branches")
    return UtilityReport(original.name, ids, _branch_values(original), _branch_values(released), params)


def write_csv(rows: Iterable[Iterable], header: Iterable[str]) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(header)
    for row in rows:
        w.writerow([repr(v) if isinstance(v, float) else v for v in row])
    return buf.getvalue()


def atomic_write(path: Path | str, data: str | bytes) -> None:
    """Write via a sibling temp file and rename, so readers never see a partial file."""
    path = Path(path)
    tmp = path.with_name(f".{path.name}.tmp")
    mode = "wb" if isinstance(data, bytes) else "w"
    kw = {} if isinstance(data, bytes) else {"encoding": "utf-8", "newline": ""}
    try:
        with open(tmp, mode, **kw) as fh:
            fh.write(data)
        tmp.replace(path)
    finally:
        if tmp.exists():
            tmp.unlink()


def render_scatter_svg(report: UtilityReport) -> bytes:
    """One panel per quantity, released against original, with a dashed y = x line."""
    import matplotlib

    matplotlib.use("Agg")
    import matplotlib.pyplot as plt

    rc = {
        "svg.fonttype": "none",  # keep text as <text>, not glyph <use> references
        "svg.hashsalt": "privgrid",
        "font.size": 11,
        "axes.spines.top": False,
        "axes.spines.right": False,
    }
    with plt.rc_context(rc):
        fig, axes = plt.subplots(len(QUANTITIES), 1, figsize=(800 / 72, 800 / 72), dpi=72)
        for ax, q in zip(axes, QUANTITIES):
            o, r = report.original[q], report.released[q]
            if o.size:
                lo = float(min(o.min(), r.min()))
                hi = float(max(o.max(), r.max()))
            else:
                lo, hi = 0.0, 1.0
            pad = 0.05 * (hi - lo or 1.0)
            ax.plot([lo - pad, hi + pad], [lo - pad, hi + pad], ls="--", color="0.5", lw=1)
            ax.scatter(o, r, s=14, color="#2b8cbe", edgecolors="none", gid=f"points-{q}")
            ax.set_xlabel(f"original {q} (p.u.)")
            ax.set_ylabel(f"released {q}")
        title = report.case_name or "utility"
        fig.suptitle(title)
        fig.tight_layout()
        buf = io.BytesIO()
        fig.savefig(buf, format="svg", metadata={"Date": None})
        plt.close(fig)
    return buf.getvalue()


def scatter_export(report: UtilityReport, path: Path | str) -> tuple[Path, Path]:
    """Write ``<path>.csv`` and ``<path>.svg``; returns both paths."""
    base = Path(path)
    if base.suffix in (".csv", ".svg"):
        base = base.with_suffix("")
    csv_path, svg_path = base.with_suffix(".csv"), base.with_suffix(".svg")
    atomic_write(csv_path, write_csv(report.rows(), CSV_HEADER))
    atomic_write(svg_path, render_scatter_svg(report))
    return csv_path, svg_path


@dataclass
class SolvabilityReport:
    """Outcome counts keyed by (case, objective arm)."""

    counts: dict[tuple[str, str], Counter] = field(default_factory=dict)

    @property
    def total(self) -> int:
        return sum(sum(c.values()) for c in self.counts.values())

    def success_rate(self, case: str | None = None, arm: str | None = None) -> float:
        sel = [c for (cs, a), c in self.counts.items() if case in (None, cs) and arm in (None, a)]
        n = sum(sum(c.values()) for c in sel)
        if n == 0:
            return math.nan
        return 100.0 * sum(c["optimal"] for c in sel) / n

    def to_json(self) -> dict:
        groups = []
        for (case, arm), c in sorted(self.counts.items()):
            runs = sum(c.values())
            row = {"case": case, "objective_arm": arm, "runs": runs}
            row.update({k: c[k] for k in OUTCOMES})
            row["success_pct"] = self.success_rate(case, arm)
            groups.append(row)
        return {"total_runs": self.total, "success_pct": self.success_rate(), "groups": groups}

    def to_csv(self) -> str:
        header = ("case", "objective_arm", "runs", *OUTCOMES, "success_pct")
        rows = [tuple(g.values()) for g in self.to_json()["groups"]]
        return write_csv(rows, header)


def aggregate_solvability(runs: Iterable[Mapping]) -> SolvabilityReport:
    """Tabulate run records (``case``, ``objective_arm``, ``status``) into a report."""
    counts: dict[tuple[str, str], Counter] = {}
    for run in runs:
        status = run["status"]
        if status not in OUTCOMES:
            raise ValueError(f"unknown outcome {status!r}")
        key = (run.get("case", ""), run.get("objective_arm", ""))
        counts.setdefault(key, Counter())[status] += 1
    return SolvabilityReport(counts)
