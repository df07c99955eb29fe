"""Differentially-private release of transmission network line parameters."""

from .matpower import bundled_case_path, bundled_cases, read_case, write_matpower
from .mechanism import NoiseStreams, PrivacyParams, ZeroNoise, perturb_branch_parameters
from .network import NetworkCase, PublicNetwork
from .nlp import SolveOptions, solve
from .metrics import aggregate_solvability, scatter_export, utility_report
from .opf import build_opf, check_feasibility, grid_loss, solve_opf
from .restoration import ObfuscatedCase, PipelineFailure, build_restoration, run_pipeline

__all__ = [
    "NetworkCase",
    "NoiseStreams",
    "ObfuscatedCase",
    "PipelineFailure",
    "PrivacyParams",
    "PublicNetwork",
    "SolveOptions",
    "ZeroNoise",
    "aggregate_solvability",
    "bundled_case_path",
    "bundled_cases",
    "build_opf",
    "build_restoration",
    "check_feasibility",
    "grid_loss",
    "perturb_branch_parameters",
    "read_case",
    "run_pipeline",
    "scatter_export",
    "solve",
    "solve_opf",
    "utility_report",
    "write_matpower",
]

__version__ = "0.1.0"
