"""Laplace perturbation of branch admittances.

Noise for every (quantity, branch) and (quantity, voltage level) pair comes
from its own Philox counter block under a single key derived from the seed,
so adding or removing a branch leaves every other branch's noise unchanged.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Protocol

import numpy as np

from .network import NetworkCase, _Grid, level_index

FAMILIES = {"b": 0, "b_sh": 1, "mu_g": 2, "mu_b": 3, "mu_b_sh": 4}


class UniformSource(Protocol):
    def random(self, size=None): ...


@dataclass(frozen=True)
class PrivacyParams:
    epsilon: float = 1.0
    alpha: float = 0.01
    beta: float = 0.5
    lam: float = 30.0

    def __post_init__(self):
        for name in ("epsilon", "alpha", "beta", "lam"):
            v = getattr(self, name)
            if not (v > 0 and math.isfinite(v)):
                raise ValueError(f"{name} must be a positive finite number, got {v!r}")
        if self.lam <= 1:
            raise ValueError(f"lam must exceed 1, got {self.lam!r}")

    @property
    def branch_scale(self) -> float:
        """Laplace scale of the per-branch draws, 3*alpha/epsilon."""
        return 3.0 * self.alpha / self.epsilon

    def level_scale(self, n_v: int) -> float:
        """Laplace scale of a level mean over ``n_v`` branches."""
        return 3.0 * self.alpha / (n_v * self.epsilon)


class NoiseStreams:
    """Seeded family of independent uniform streams keyed by (family, index)."""

    def __init__(self, seed: int):
        self.seed = int(seed)
        self._key = np.random.SeedSequence(self.seed).generate_state(2, np.uint64)

    def stream(self, family: str, index: int) -> np.random.Generator:
        counter = np.array([0, 0, FAMILIES[family], int(index)], dtype=np.uint64)
        return np.random.Generator(np.random.Philox(key=self._key, counter=counter))


class _Median:
    def random(self, size=None):
        return 0.5 if size is None else np.full(size, 0.5)


class ZeroNoise:
    """Stand-in for :class:`NoiseStreams` whose every Laplace draw is exactly 0."""

    seed = None

    def stream(self, family: str, index: int) -> _Median:
        return _Median()


def sample_laplace(scale: float, rng: UniformSource, size=None):
    """Draw from Laplace(0, scale) by inverting the CDF of a uniform draw."""
    if not scale > 0:
        raise ValueError(f"Laplace scale must be positive, got {scale!r}")
    u = np.asarray(rng.random(size), dtype=float)
    # u == 0 maps to an infinite draw; redraw those entries
    while np.any(u == 0.0):
        if u.ndim == 0:
            u = np.asarray(rng.random(), dtype=float)
        else:
            bad = u == 0.0
            u[bad] = rng.random(int(bad.sum()))
    d = u - 0.5
    x = -scale * np.sign(d) * np.log1p(-2.0 * np.abs(d))
    return float(x) if x.ndim == 0 else x


@dataclass(frozen=True)
class DrawRecord:
    family: str
    scale: float
    count: int


@dataclass(frozen=True)
class PerturbedAdmittances:
    """Noisy line parameters and noisy per-level means.

    Per-branch arrays follow ``branch_ids`` (in-service branch order); per-level
    arrays follow ``levels`` and ``level_of`` maps each branch to its level.
    """

    branch_ids: tuple[int, ...]
    b_tilde: np.ndarray
    g_tilde: np.ndarray
    b_sh_tilde: np.ndarray
    levels: tuple[float, ...]
    level_of: np.ndarray
    n_per_level: np.ndarray
    mu_g: np.ndarray
    mu_b: np.ndarray
    mu_b_sh: np.ndarray
    draws: tuple[DrawRecord, ...]

    @property
    def g_sh_tilde(self) -> np.ndarray:
        return np.zeros_like(self.b_tilde)


def _level_key(kv: float) -> int:
    return int(round(kv * 1000))


def noisy_level_means(
    grid: _Grid, values: np.ndarray, params: PrivacyParams, streams, family: str
) -> np.ndarray:
    """Mean of ``values`` over each voltage level plus Laplace(3a/(n_v e)) noise."""
    levels, which = level_index(grid)
    values = np.asarray(values, dtype=float)
    if values.shape != which.shape:
        raise ValueError("values must have one entry per in-service branch")
    out = np.empty(len(levels))
    for k, kv in enumerate(levels):
        members = values[which == k]
        if members.size == 0:
            raise RuntimeError(f"voltage level {kv} kV has no branches")
        noise = sample_laplace(params.level_scale(members.size), streams.stream(family, _level_key(kv)))
        out[k] = members.mean() + noise
    return out


def perturb_branch_parameters(case: NetworkCase, params: PrivacyParams, streams) -> PerturbedAdmittances:
    """Apply the Laplace mechanism to the series and shunt susceptances.

    The conductance follows the susceptance so that each branch keeps its
    original g/b ratio. Nothing is clamped here: a noisy value may change sign.
    """
    adm = case.admittances()
    ids = tuple(br.id for br in case.in_service_branches)
    scale = params.branch_scale
    noise_b = np.array([sample_laplace(scale, streams.stream("b", i)) for i in ids])
    noise_sh = np.array([sample_laplace(scale, streams.stream("b_sh", i)) for i in ids])
    b_tilde = adm.b + noise_b
    # g*b~/b rather than (g/b)*b~: keeps g~*b == g*b~ to within one ulp
    g_tilde = adm.g * b_tilde / adm.b
    b_sh_tilde = adm.b_sh + noise_sh

    levels, which = level_index(case)
    counts = np.bincount(which, minlength=len(levels))
    mu_g = noisy_level_means(case, adm.g, params, streams, "mu_g")
    mu_b = noisy_level_means(case, adm.b, params, streams, "mu_b")
    mu_b_sh = noisy_level_means(case, adm.b_sh, params, streams, "mu_b_sh")

    draws = [DrawRecord("b", scale, len(ids)), DrawRecord("b_sh", scale, len(ids))]
    for fam in ("mu_g", "mu_b", "mu_b_sh"):
        for n_v in counts:
            draws.append(DrawRecord(fam, params.level_scale(int(n_v)), 1))
    return PerturbedAdmittances(
        branch_ids=ids,
        b_tilde=b_tilde,
        g_tilde=g_tilde,
        b_sh_tilde=b_sh_tilde,
        levels=tuple(levels),
        level_of=which,
        n_per_level=counts,
        mu_g=mu_g,
        mu_b=mu_b,
        mu_b_sh=mu_b_sh,
        draws=tuple(draws),
    )
