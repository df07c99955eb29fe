"""Command-line front end: ``privgrid obfuscate | solve | batch``."""

from __future__ import annotations

import argparse
import json
import logging
import os
import sys
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass
from functools import lru_cache
from pathlib import Path

from .matpower import MatpowerParseError, UnsupportedCostModel, bundled_case_path, case_to_raw, read_case
from .matpower import write_matpower
from .mechanism import PrivacyParams
from .metrics import aggregate_solvability, atomic_write, scatter_export, utility_report, write_csv
from .network import CaseValidationError, NetworkCase
from .nlp import SolveOptions
from .opf import OBJECTIVES, grid_loss, solve_opf
from .restoration import BaselineError, baseline_grid_loss, release_options, run_pipeline

log = logging.getLogger("privgrid")

EXIT_OK = 0
EXIT_USAGE = 1
EXIT_INFEASIBLE = 2
EXIT_BUDGET = 3

OUT_DIR_ENV = "PRIVGRID_OUT_DIR"

_EXIT_BY_STATUS = {
    "optimal": EXIT_OK,
    "infeasible": EXIT_INFEASIBLE,
    "numerical": EXIT_INFEASIBLE,
    "timeout": EXIT_BUDGET,
    "iteration-limit": EXIT_BUDGET,
}


def exit_code(status: str) -> int:
    return _EXIT_BY_STATUS.get(status, EXIT_INFEASIBLE)


class UsageError(Exception):
    pass


def parse_seeds(text: str) -> list[int]:
    """``"7"`` or an inclusive range ``"0..99"``."""
    if ".." in text:
        a, _, b = text.partition("..")
        lo, hi = int(a), int(b)
        if hi < lo:
            raise argparse.ArgumentTypeError(f"empty seed range {text!r}")
        return list(range(lo, hi + 1))
    return [int(text)]


def load_case(ref: str) -> tuple[NetworkCase, object, str]:
    """Read a case from a path, falling back to a bundled case name."""
    path = Path(ref)
    if not path.exists():
        try:
            path = bundled_case_path(Path(ref).stem)
        except FileNotFoundError:
            raise UsageError(f"case file not found: {ref}") from None
    try:
        case, raw = read_case(path)
    except (MatpowerParseError, UnsupportedCostModel, CaseValidationError, OSError) as exc:
        raise UsageError(f"cannot read {path}: {exc}") from exc
    return case, raw, path.stem


@dataclass(frozen=True)
class RunConfig:
    params: PrivacyParams
    arm: str
    timeout_s: float
    out_dir: Path
    l_star: float | None = None
    shunt_term: bool = False

    @property
    def solve_options(self) -> SolveOptions:
        return release_options(self.timeout_s)


def _config(args) -> RunConfig:
    try:
        params = PrivacyParams(epsilon=args.epsilon, alpha=args.alpha, beta=args.beta, lam=args.lam)
    except ValueError as exc:
        raise UsageError(str(exc)) from exc
    if not args.timeout_s > 0:
        raise UsageError("--timeout-s must be positive")
    out = Path(args.out_dir or os.environ.get(OUT_DIR_ENV) or ".")
    out.mkdir(parents=True, exist_ok=True)
    return RunConfig(params, args.objective, args.timeout_s, out, args.l_star, args.shunt_term)


def _dumps(obj) -> str:
    return json.dumps(obj, indent=2) + "\n"


def cmd_obfuscate(args) -> int:
    case, raw, stem = load_case(args.case)
    cfg = _config(args)
    seed = args.seed[0] if args.seed else 0
    out = run_pipeline(
        case,
        cfg.params,
        cfg.arm,
        seed,
        l_star=cfg.l_star,
        opts=cfg.solve_options,
        shunt_term=cfg.shunt_term,
    )
    prov = out.provenance.to_json()
    sidecar = cfg.out_dir / f"{stem}_private.json"
    if not out.success:
        print(f"{stem}: {out.stage} stage ended {out.status}: {out.message}", file=sys.stderr)
        atomic_write(sidecar, _dumps(prov))
        return exit_code(out.status)
    released_raw = case_to_raw(out.case, raw)
    released_raw.function_name = f"{stem}_private"
    atomic_write(cfg.out_dir / f"{stem}_private.m", write_matpower(released_raw))
    report = utility_report(case, out.case, cfg.params)
    csv_path, svg_path = scatter_export(report, cfg.out_dir / f"{stem}_utility")
    prov.update(report.summary() | {"case": stem})
    prov["released_loss"] = out.released_loss
    atomic_write(sidecar, _dumps(prov))
    log.info("wrote %s, %s, %s, %s", cfg.out_dir / f"{stem}_private.m", sidecar, csv_path, svg_path)
    return EXIT_OK


def cmd_solve(args) -> int:
    case, _, stem = load_case(args.case)
    opts = SolveOptions(timeout_s=args.timeout_s)
    sol = solve_opf(case, args.objective, opts)
    rep = sol.report
    print(
        _dumps(
            {
                "case": stem,
                "objective_arm": args.objective,
                "status": sol.status,
                "objective": sol.objective,
                "grid_loss": grid_loss(case, sol),
                "iterations": rep.iterations,
                "primal_infeasibility": rep.primal_infeasibility,
                "dual_infeasibility": rep.dual_infeasibility,
                "wall_time_s": rep.wall_time,
            }
        ),
        end="",
    )
    return exit_code(sol.status)


@lru_cache(maxsize=None)
def _cached_case(ref: str):
    return load_case(ref)


def _batch_one(job: tuple) -> dict:
    ref, arm, seed, params, l_star, timeout_s, shunt_term, run_dir = job
    case, raw, stem = _cached_case(ref)
    out = run_pipeline(
        case, params, arm, seed, l_star=l_star, opts=release_options(timeout_s), shunt_term=shunt_term
    )
    rec = out.provenance.to_json()
    rec["case"] = stem
    rec["stage"] = out.provenance.stage
    rec.update({"rmse_r": None, "rmse_x": None, "rmse_b_sh": None})
    if out.success:
        tag = f"{stem}_{arm}_seed{seed}"
        released_raw = case_to_raw(out.case, raw)
        released_raw.function_name = f"{stem}_private"
        atomic_write(Path(run_dir) / f"{tag}_private.m", write_matpower(released_raw))
        report = utility_report(case, out.case, params)
        scatter_export(report, Path(run_dir) / f"{tag}_utility")
        rec.update({"rmse_r": report.rmse_r, "rmse_x": report.rmse_x, "rmse_b_sh": report.rmse_bsh})
        rec["released_loss"] = out.released_loss
    return rec


def _case_refs(inputs: list[str]) -> list[str]:
    refs = []
    for item in inputs:
        p = Path(item)
        if p.is_dir():
            found = sorted(str(f) for f in p.glob("*.m"))
            if not found:
                raise UsageError(f"no .m case files in {p}")
            refs += found
        else:
            refs.append(item)
    return refs


def cmd_batch(args) -> int:
    cfg = _config(args)
    refs = _case_refs(args.cases)
    seeds = args.seeds or args.seed or [0]
    arms = list(OBJECTIVES) if cfg.arm == "both" else [cfg.arm]
    run_dir = cfg.out_dir / "runs"
    run_dir.mkdir(exist_ok=True)

    jobs, records = [], []
    for ref in refs:
        case, _, stem = load_case(ref)
        for arm in arms:
            l_star = cfg.l_star
            if l_star is None:
                try:
                    l_star, _ = baseline_grid_loss(case, arm, cfg.solve_options)
                except BaselineError as exc:
                    log.error("%s", exc)
                    for seed in seeds:
                        records.append(_baseline_failure(stem, seed, cfg, arm, exc.status))
                    continue
            for seed in seeds:
                jobs.append((ref, arm, seed, cfg.params, l_star, cfg.timeout_s, cfg.shunt_term, str(run_dir)))

    workers = args.workers or os.cpu_count() or 1
    if workers == 1 or len(jobs) <= 1:
        records += [_batch_one(j) for j in jobs]
    else:
        with ProcessPoolExecutor(max_workers=workers) as pool:
            records += list(pool.map(_batch_one, jobs))
    records.sort(key=lambda r: (r["case"], r["objective_arm"], r["seed"]))

    solv = aggregate_solvability(records)
    atomic_write(cfg.out_dir / "solvability.json", _dumps(solv.to_json()))
    atomic_write(cfg.out_dir / "solvability.csv", solv.to_csv())
    atomic_write(cfg.out_dir / "runs.json", _dumps(records))
    keys = list(records[0]) if records else []
    atomic_write(cfg.out_dir / "runs.csv", write_csv(([r.get(k) for k in keys] for r in records), keys))
    print(f"{len(records)} runs, {solv.success_rate():.1f}% optimal; reports in {cfg.out_dir}")
    return EXIT_OK


def _baseline_failure(stem, seed, cfg: RunConfig, arm, status) -> dict:
    p = cfg.params
    return {
        "case": stem,
        "seed": seed,
        "alpha": p.alpha,
        "beta": p.beta,
        "epsilon": p.epsilon,
        "lambda": p.lam,
        "objective_arm": arm,
        "L_star": None,
        "status": status,
        "iterations": 0,
        "wall_time_s": 0.0,
        "stage": "baseline",
        "rmse_r": None,
        "rmse_x": None,
        "rmse_b_sh": None,
    }


def _add_privacy_flags(p: argparse.ArgumentParser, arms) -> None:
    p.add_argument("--alpha", type=float, default=0.01, help="indistinguishability radius (p.u.)")
    p.add_argument("--beta", type=float, default=0.5, help="allowed relative grid-loss deviation")
    p.add_argument("--epsilon", type=float, default=1.0, help="privacy budget")
    p.add_argument("--lambda", dest="lam", type=float, default=30.0, help="level box scale factor (> 1)")
    p.add_argument("--objective", choices=arms, default="cost", help="baseline OPF objective used for L*")
    p.add_argument("--timeout-s", type=float, default=600.0)
    p.add_argument("--l-star", type=float, default=None, help="public baseline grid loss (p.u.); skips the baseline solve")
    p.add_argument("--out-dir", default=None, help=f"output directory (default ${OUT_DIR_ENV} or .)")
    p.add_argument("--shunt-term", action="store_true", help="add the shunt distance to the restoration objective")
    p.add_argument("--seed", type=parse_seeds, default=None)


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="privgrid", description=__doc__)
    parser.add_argument("-v", "--verbose", action="count", default=0)
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("obfuscate", help="release one case")
    p.add_argument("case", help="Matpower .m file or bundled case name")
    _add_privacy_flags(p, OBJECTIVES)
    p.set_defaults(func=cmd_obfuscate)

    p = sub.add_parser("solve", help="solve the baseline OPF and print a JSON report")
    p.add_argument("case")
    p.add_argument("--objective", choices=OBJECTIVES, default="cost")
    p.add_argument("--timeout-s", type=float, default=600.0)
    p.set_defaults(func=cmd_solve)

    p = sub.add_parser("batch", help="run the release pipeline over cases, arms and seeds")
    p.add_argument("cases", nargs="+", help="case files, bundled names or directories of .m files")
    _add_privacy_flags(p, (*OBJECTIVES, "both"))
    p.add_argument("--seeds", type=parse_seeds, default=None, help="seed or inclusive range A..B")
    p.add_argument("--workers", type=int, default=None, help="worker processes (default: CPU count)")
    p.set_defaults(func=cmd_batch)
    return parser


def main(argv: list[str] | None = None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return EXIT_OK if exc.code == 0 else EXIT_USAGE
    logging.basicConfig(
        level=logging.WARNING - 10 * min(args.verbose, 2), format="%(levelname)s %(name)s: %(message)s"
    )
    try:
        return args.func(args)
    except UsageError as exc:
        print(f"privgrid: {exc}", file=sys.stderr)
        return EXIT_USAGE


if __name__ == "__main__":
    sys.exit(main())
