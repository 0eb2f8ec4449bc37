"""Numerical checks of the uniform estimates: tail sums, splitting,
eigenfunction and pairing bounds, Lipschitz dependence on the potential."""

import math

import numpy as np
import pytest

from kgring.model import (
    CoeffSeq,
    GridFunction,
    PotentialProfile,
    default_coupling,
    from_grid,
    grid_points,
)
from kgring.spectrum import decoupled_spectrum, solve_spectrum
from kgring.validate import (
    check_eigen_splitting,
    check_eigenfunction_bounds,
    check_estimate_sums,
    check_pairing_bounds,
    check_v_lipschitz,
    resolvent_tail_sum,
    weighted_tail_sum,
)


def make_potential(N, coupling, amps, seed=None):
    """Zero-mean band-limited test potential; ``seed`` randomizes only the
    harmonic phases, keeping the amplitude profile fixed."""
    M = 8 * N
    x = grid_points(M)
    if seed is None:
        vals = amps[0] * np.cos(x) + amps[1] * np.sin(2 * x)
    else:
        rng = np.random.default_rng(seed)
        vals = sum(
            a * np.cos(k * x + rng.uniform(0, 2 * np.pi))
            for k, a in enumerate(amps, start=1)
        )
    vhat = from_grid(GridFunction(M, vals.astype(complex)), len(amps) + 1)
    c = 0.5 * (vhat.c + vhat.c[::-1].conj())
    return PotentialProfile.build(CoeffSeq(vhat.N, c, real_valued=True), coupling)


@pytest.fixture(scope="module")
def spec12():
    cpl = default_coupling(12)
    return solve_spectrum(cpl, PotentialProfile.zero(cpl), 12)


@pytest.fixture(scope="module")
def spec24():
    cpl = default_coupling(24)
    return solve_spectrum(cpl, PotentialProfile.zero(cpl), 24)


class TestEstimateSums:
    def test_n0_exact_series(self):
        # independent oracle: the n = 0 sum is sum_{m >= 1} 1/m^2 = pi^2/6
        direct = sum(1.0 / m**2 for m in range(1, 200_000))
        assert resolvent_tail_sum(0) == pytest.approx(direct, abs=1e-5)
        assert resolvent_tail_sum(0) == pytest.approx(math.pi**2 / 6.0, abs=1e-12)

    def test_closed_form_matches_direct_sum(self):
        for n in (1, 2, 7, 30):
            m = np.arange(0, 200_001)
            m = m[m != n]
            direct = np.sum(1.0 / np.abs(m.astype(float) ** 2 - n * n))
            assert resolvent_tail_sum(n) == pytest.approx(direct, rel=1e-4)

    def test_report_passes_with_stable_constant(self):
        rep = check_estimate_sums(n_max=10_000, gamma=0.9)
        assert rep.passed
        assert rep.fitted["c_gamma_i"] > 0
        assert rep.worst_margin >= -1e-12
        # the weighted sums n^gamma * S(n) stay bounded over four decades
        sums = np.array(rep.details["sums_i"])
        ns = np.array(rep.details["ns"], dtype=float)
        weighted = sums * (1 + ns**0.9)
        assert weighted.max() / weighted[ns >= 100].max() < 2.0

    def test_eta_exponent_at_least_gamma(self):
        rep = check_estimate_sums(n_max=1000, gamma=0.9)
        assert rep.fitted["eta_exponent"] >= 0.85

    def test_weighted_sum_small_eta(self):
        # eta -> 0 limit vanishes like eta^gamma
        v1 = weighted_tail_sum(4, 0.1, m_max=100_000)
        v2 = weighted_tail_sum(4, 0.001, m_max=100_000)
        assert v2 < v1 * 0.05


class TestEigenSplitting:
    def test_positive_and_stable_under_N_doubling(self, spec12, spec24):
        r12 = check_eigen_splitting(spec12)
        r24 = check_eigen_splitting(spec24)
        assert r12.passed and r24.passed
        assert r12.fitted["c0"] > 0
        assert abs(r24.fitted["c0"] - r12.fitted["c0"]) < 0.2 * max(
            r12.fitted["c0"], r24.fitted["c0"]
        )

    def test_alpha_zero_skipped(self):
        rep = check_eigen_splitting(decoupled_spectrum(4))
        assert rep.passed
        assert "skipped" in rep.details

    def test_small_v_reduces_but_keeps_positive(self, spec12):
        cpl = spec12.coupling
        vp = make_potential(12, cpl, (0.05, 0.03))
        rep_v = check_eigen_splitting(solve_spectrum(cpl, vp, 12))
        rep_0 = check_eigen_splitting(spec12)
        assert rep_v.fitted["c0"] > 0
        assert rep_v.fitted["c0"] < rep_0.fitted["c0"] * 1.2

    def test_splitting_tracks_bilinear_ratio(self):
        # the pair splitting is set by |a.a|: pushing the bilinear square
        # toward the degeneracy floor shrinks c0 but keeps it positive
        N = 10
        big_ratio = default_coupling(N, a=1.0, b=0.25, theta=0.05 * math.pi,
                                     c2=0.99, c1=0.3)
        small_ratio = default_coupling(N, a=1.0, b=0.8, theta=0.42 * math.pi)
        r_big = check_eigen_splitting(
            solve_spectrum(big_ratio, PotentialProfile.zero(big_ratio), N)
        )
        r_small = check_eigen_splitting(
            solve_spectrum(small_ratio, PotentialProfile.zero(small_ratio), N)
        )
        assert 0 < r_small.fitted["c0"] < r_big.fitted["c0"]


class TestEigenfunctionBounds:
    def test_sup_norm_uniform(self, spec12, spec24):
        r12 = check_eigenfunction_bounds(spec12)
        r24 = check_eigenfunction_bounds(spec24)
        assert r12.passed and r24.passed
        assert abs(r24.fitted["b"] - r12.fitted["b"]) < 0.2 * r12.fitted["b"]

    def test_modulus_of_continuity_bounded(self, spec24):
        rep = check_eigenfunction_bounds(spec24, gamma=0.9)
        assert np.isfinite(rep.fitted["c_holder"])
        assert rep.fitted["c_holder"] < 10 * rep.fitted["b"]

    def test_conjugate_closeness_decays(self, spec24):
        rep = check_eigenfunction_bounds(spec24)
        ns = np.array(rep.details["ns"])
        dist = np.array(rep.details["conj_dist"])
        hi = dist[ns >= 12].max()
        lo = dist[(ns >= 1) & (ns <= 3)].max()
        assert hi < lo
        assert np.isfinite(rep.fitted["c_conj"])


class TestPairingBounds:
    def test_upper_bound_is_cauchy_schwarz(self, spec12):
        rep = check_pairing_bounds(spec12)
        assert rep.passed
        assert rep.fitted["c"] <= 1.0 + 1e-12

    def test_lower_constant_stable(self, spec12, spec24):
        c12 = check_pairing_bounds(spec12).fitted["c"]
        c24 = check_pairing_bounds(spec24).fitted["c"]
        assert c12 > 0.05
        assert abs(c24 - c12) < 0.2 * max(c12, c24)

    def test_projection_norms_bounded(self, spec24):
        rep = check_pairing_bounds(spec24)
        assert rep.fitted["proj_norm_sup"] < 1.0 / rep.fitted["c"] + 1e-9

    def test_phase_leading_term(self, spec12):
        # <f, e> is dominated by 2 <f_pi, e_pi>
        rep = check_pairing_bounds(spec12)
        assert rep.fitted["phase_gap_sup"] < 0.5


class TestVLipschitz:
    def test_zero_difference(self, spec12):
        cpl = spec12.coupling
        v = make_potential(12, cpl, (0.03, 0.02))
        rep = check_v_lipschitz(cpl, v, v, 12)
        assert rep.passed
        assert rep.fitted["C_phi"] == 0.0

    def test_constants_finite_and_stable(self):
        N = 8
        cpl = default_coupling(N)
        v0 = PotentialProfile.zero(cpl)
        reports = []
        for seed in (3, 4):
            v2 = make_potential(N, cpl, (0.03, 0.02, 0.01), seed=seed)
            reports.append(check_v_lipschitz(cpl, v0, v2, N))
        C = [r.fitted["C_lam"] for r in reports]
        assert all(np.isfinite(c) and c > 0 for c in C)
        assert abs(C[0] - C[1]) < 0.25 * max(C)

    def test_real_shift_fraction_decays(self):
        # (iii) sharper than (ii): the real part of the shift is a vanishing
        # fraction of the full shift as n grows
        N = 16
        cpl = default_coupling(N)
        v0 = PotentialProfile.zero(cpl)
        v2 = make_potential(N, cpl, (0.04, 0.02))
        rep = check_v_lipschitz(cpl, v0, v2, N)
        ns = np.array(rep.details["ns"])
        frac = np.array(rep.details["re_fraction"])
        lo = np.median(frac[ns <= 3])
        hi = np.median(frac[ns >= 12])
        assert hi < 0.5 * lo

    def test_directional_derivative_matches_fd(self):
        N = 8
        cpl = default_coupling(N)
        v0 = PotentialProfile.zero(cpl)
        v2 = make_potential(N, cpl, (0.02, 0.01))
        rep = check_v_lipschitz(cpl, v0, v2, N, tau=0.5)
        # the mismatch is dominated by the formula's own O(1/n) remainder,
        # so halving the step must not grow it, and it stays small
        assert rep.fitted["fd_err_half"] <= 1.25 * rep.fitted["fd_err_tau"]
        assert rep.fitted["fd_err_tau"] < 0.1


class TestReportSerialization:
    def test_jsonable(self, spec12):
        import json

        rep = check_pairing_bounds(spec12)
        blob = json.dumps(rep.to_jsonable())
        assert "pairing_bounds" in blob
