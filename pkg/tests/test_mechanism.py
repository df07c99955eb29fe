import math
from dataclasses import replace

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from scipy import stats

from privgrid.mechanism import (
    NoiseStreams,
    PrivacyParams,
    ZeroNoise,
    noisy_level_means,
    perturb_branch_parameters,
    sample_laplace,
)
from privgrid.network import Branch, Bus, Generator, NetworkCase, level_index
from oracles import two_bus_case


class _Const:
    def __init__(self, u):
        self.u = u

    def random(self, size=None):
        return self.u if size is None else np.full(size, self.u)


class FixedStreams:
    """Every stream of a family returns the same uniform value."""

    seed = None

    def __init__(self, **u):
        self.u = u

    def stream(self, family, index):
        return _Const(self.u.get(family, 0.5))


def u_for(noise: float, scale: float) -> float:
    """Uniform value whose inverse-CDF Laplace draw equals ``noise``."""
    d = 0.5 * (1.0 - math.exp(-abs(noise) / scale))
    return 0.5 + math.copysign(d, noise)


def test_median_draw_is_zero():
    assert sample_laplace(0.03, _Const(0.5)) == 0.0


def test_scales():
    p = PrivacyParams(epsilon=1.0, alpha=0.01)
    assert p.branch_scale == pytest.approx(0.03)
    assert p.level_scale(10) == pytest.approx(0.003)


@pytest.mark.parametrize("kw", [{"epsilon": 0}, {"alpha": -1}, {"beta": 0}, {"lam": 1.0}, {"lam": math.inf}])
def test_invalid_params(kw):
    with pytest.raises(ValueError):
        PrivacyParams(**kw)


@pytest.mark.parametrize("scale", [0.0, -1.0])
def test_nonpositive_scale(scale):
    with pytest.raises(ValueError):
        sample_laplace(scale, _Const(0.3))


def test_zero_uniform_is_redrawn():
    class Seq:
        vals = iter([0.0, 0.75])

        def random(self, size=None):
            return next(self.vals)

    assert sample_laplace(1.0, Seq()) == pytest.approx(math.log(2))


def test_monte_carlo_moments():
    x = sample_laplace(1.0, NoiseStreams(123).stream("b", 0), size=1_000_000)
    assert abs(x.mean()) < 0.005
    assert abs(np.abs(x).mean() - 1.0) < 0.005


def test_sampler_matches_laplace_distribution():
    x = sample_laplace(0.03, NoiseStreams(5).stream("b", 1), size=10_000)
    assert stats.kstest(x, stats.laplace(scale=0.03).cdf).pvalue > 0.01


def test_zero_noise_is_identity(case24):
    pert = perturb_branch_parameters(case24, PrivacyParams(), ZeroNoise())
    adm = case24.admittances()
    np.testing.assert_array_equal(pert.b_tilde, adm.b)
    # g*b/b may land one ulp away from g
    assert np.all(_ulp_close(pert.g_tilde, adm.g))
    np.testing.assert_array_equal(pert.b_sh_tilde, adm.b_sh)


def test_ratio_example():
    # r + jx = 0.2 + 0.4j gives g = 1, b = -2
    case = two_bus_case(r=0.2, x=0.4)
    # a wide scale keeps the required uniform well away from 0
    p = PrivacyParams(alpha=1.0)
    pert = perturb_branch_parameters(case, p, FixedStreams(b=u_for(-2.0, p.branch_scale)))
    assert pert.b_tilde[0] == pytest.approx(-4.0, rel=1e-9)
    assert pert.g_tilde[0] == pytest.approx(2.0, rel=1e-9)


def test_level_mean_single_level():
    buses = (Bus(1, 138, 0.9, 1.1, is_slack=True), Bus(2, 138, 0.9, 1.1))
    # r = 0 and x = 1, 1/3 give b = -1, -3
    branches = (Branch(1, 1, 2, 0.0, 1.0), Branch(2, 1, 2, 0.0, 1.0 / 3.0))
    case = NetworkCase("t", 100, buses, branches, (Generator(1, 1, 0, 1, -1, 1),))
    mu = noisy_level_means(case, case.admittances().b, PrivacyParams(), ZeroNoise(), "mu_b")
    assert mu == pytest.approx([-2.0])


def test_level_means_match_group_by(case24):
    adm = case24.admittances()
    pert = perturb_branch_parameters(case24, PrivacyParams(), ZeroNoise())
    kv = {b.id: b.base_kv for b in case24.buses}
    groups = {}
    for k, br in enumerate(case24.in_service_branches):
        groups.setdefault(max(kv[br.from_bus], kv[br.to_bus]), []).append(k)
    assert list(pert.levels) == sorted(groups)
    for j, lvl in enumerate(pert.levels):
        members = groups[lvl]
        assert pert.mu_g[j] == pytest.approx(np.mean(adm.g[members]), rel=1e-14)
        assert pert.mu_b[j] == pytest.approx(np.mean(adm.b[members]), rel=1e-14)
        assert pert.mu_b_sh[j] == pytest.approx(np.mean(adm.b_sh[members]), rel=1e-14)
        assert pert.n_per_level[j] == len(members)


def test_level_noise_scale(case24):
    p = PrivacyParams()
    levels, which = level_index(case24)
    counts = np.bincount(which)
    draws = []
    for seed in range(3000):
        mu = noisy_level_means(case24, case24.admittances().b, p, NoiseStreams(seed), "mu_b")
        draws.append(mu)
    base = noisy_level_means(case24, case24.admittances().b, p, ZeroNoise(), "mu_b")
    noise = np.array(draws) - base
    for j, n_v in enumerate(counts):
        scale = p.level_scale(int(n_v))
        assert stats.kstest(noise[:, j], stats.laplace(scale=scale).cdf).pvalue > 0.01


def test_determinism(case24):
    a = perturb_branch_parameters(case24, PrivacyParams(), NoiseStreams(42))
    b = perturb_branch_parameters(case24, PrivacyParams(), NoiseStreams(42))
    c = perturb_branch_parameters(case24, PrivacyParams(), NoiseStreams(43))
    for f in ("b_tilde", "g_tilde", "b_sh_tilde", "mu_g", "mu_b", "mu_b_sh"):
        np.testing.assert_array_equal(getattr(a, f), getattr(b, f))
    assert not np.array_equal(a.b_tilde, c.b_tilde)


def test_branch_noise_survives_case_edits(case24):
    p = PrivacyParams()
    full = perturb_branch_parameters(case24, p, NoiseStreams(9))
    dropped = replace(case24, branches=tuple(br for br in case24.branches if br.id != 5))
    part = perturb_branch_parameters(dropped, p, NoiseStreams(9))
    noise_full = dict(zip(full.branch_ids, full.b_tilde - case24.admittances().b))
    noise_part = dict(zip(part.branch_ids, part.b_tilde - dropped.admittances().b))
    for bid, v in noise_part.items():
        assert v == noise_full[bid]


def test_branch_noise_is_uncorrelated():
    x = np.empty((10_000, 3))
    for seed in range(10_000):
        s = NoiseStreams(seed)
        x[seed] = [sample_laplace(1.0, s.stream("b", i)) for i in (1, 2)] + [sample_laplace(1.0, s.stream("b_sh", 1))]
    c = np.corrcoef(x.T)
    assert np.all(np.abs(c[np.triu_indices(3, 1)]) < 0.05)


def test_shunt_conductance_is_zero(case24):
    pert = perturb_branch_parameters(case24, PrivacyParams(), NoiseStreams(0))
    assert np.all(pert.g_sh_tilde == 0.0)


def test_draw_accounting(case24):
    p = PrivacyParams()
    pert = perturb_branch_parameters(case24, p, NoiseStreams(0))
    nl = len(case24.in_service_branches)
    by_family = {}
    for d in pert.draws:
        by_family[d.family] = by_family.get(d.family, 0) + d.count
    assert by_family == {"b": nl, "b_sh": nl, "mu_g": 2, "mu_b": 2, "mu_b_sh": 2}
    assert {d.scale for d in pert.draws if d.family == "b"} == {p.branch_scale}


def _ulp_close(a, b):
    return np.abs(a - b) <= np.spacing(np.maximum(np.abs(a), np.abs(b)))


@settings(max_examples=50, deadline=None)
@given(st.integers(min_value=0, max_value=2**32 - 1), st.sampled_from([0.01, 0.1, 1.0]))
def test_ratio_preserved_to_one_ulp(case24, seed, alpha):
    adm = case24.admittances()
    pert = perturb_branch_parameters(case24, PrivacyParams(alpha=alpha), NoiseStreams(seed))
    assert np.all(_ulp_close(pert.g_tilde * adm.b, adm.g * pert.b_tilde))
