"""Diagram sums: closed forms against time-quadrature and brute-force
references, cutoff convergence and divergence verdicts, the renormalized
series."""

import math

import numpy as np
import pytest

from kgring.model import RunConfig, Temperatures, default_coupling, example_config
from kgring.diagrams import (
    DiagramWorkspace,
    fit_octave_degree,
    g1_full,
    g1_full_time_quadrature,
    g1_resonant,
    g2_tadpole_divergence,
    g2_whale,
    g2_whale_time_quadrature,
    two_point_breakdown,
    two_point_correction,
)
from kgring.spectrum import ModeLabel, decoupled_spectrum
from kgring.covariance import mode_covariance


@pytest.fixture(scope="module")
def ws4():
    cfg = example_config(N=4, g=0.02, T1=2.0, T2=1.0)
    return cfg, DiagramWorkspace.from_config(cfg)


@pytest.fixture(scope="module")
def ws64():
    cfg = example_config(N=64, g=0.02, T1=2.0, T2=1.0)
    return cfg, DiagramWorkspace.from_config(cfg)


def brute_force_whale(ws, x, y, g):
    """Five-fold nested-loop reference of the whale sum (tiny N only)."""
    d = len(ws.lam)
    ax, ay = ws.point_amp(x), ws.point_amp(y)
    svar = np.real(np.diag(ws.S))
    lam = ws.lam
    E, F = ws.E, ws.F
    dz = ws.dz
    total = 0.0 + 0.0j
    for k1 in range(d):
        for k2 in range(d):
            for k3 in range(d):
                w3 = svar[k1] * svar[k2] * svar[k3]
                if w3 == 0:
                    continue
                prod1 = E[k1].conj() * E[k2].conj() * E[k3].conj()
                for n in range(d):
                    Z1 = np.sum(F[n] * prod1) * dz
                    for p in range(d):
                        Z2 = np.sum(F[p] * prod1.conj()) * dz
                        den1 = lam[n] + lam[k1] + lam[k2] + lam[k3]
                        den2 = lam[n] + lam[p]
                        total += (
                            w3 * Z1 * Z2 * (ay[n] * ax[p] + ax[n] * ay[p])
                            / (den1 * den2)
                        )
    return 6 * g * g * total


class TestTrivialZeros:
    def test_g_zero(self, ws4):
        cfg, ws = ws4
        assert g1_full(ws, 0.1, 0.9, 0.0).value == 0
        assert g1_resonant(ws, 0.1, 0.9, 0.0).value == 0
        assert g2_whale(ws, 0.1, 0.9, 0.0, trace_tops=(4,)).value == 0

    def test_alpha_zero(self):
        spec = decoupled_spectrum(4)
        mc = mode_covariance(spec, Temperatures(2.0, 1.0))
        ws = DiagramWorkspace(spec, mc, 64)
        r = g1_full(ws, 0.1, 0.9, 0.05)
        assert abs(r.value) < 1e-14
        rw = g2_whale(ws, 0.1, 0.9, 0.05, trace_tops=(4,))
        assert abs(rw.value) < 1e-14


class TestSymmetryAndReality:
    def test_all_diagrams_real_and_symmetric(self, ws4):
        cfg, ws = ws4
        x, y = 0.7, 2.4
        for fn in (g1_full, g1_resonant):
            a = fn(ws, x, y, cfg.g)
            b = fn(ws, y, x, cfg.g)
            assert a.imag_residue <= cfg.tail_tol
            assert abs(a.value - b.value) < 1e-12
        a = g2_whale(ws, x, y, cfg.g, trace_tops=(4,))
        b = g2_whale(ws, y, x, cfg.g, trace_tops=(4,))
        assert a.imag_residue <= cfg.tail_tol
        assert abs(a.value - b.value) < 1e-12


class TestOracles:
    def test_g1_full_vs_time_quadrature(self, ws4):
        cfg, ws = ws4
        x, y = 0.0, math.pi / 2
        closed = g1_full(ws, x, y, cfg.g).value
        quad = g1_full_time_quadrature(ws, x, y, cfg.g)
        assert abs(quad - closed) / abs(closed) < 1e-6

    def test_whale_vs_time_quadrature(self, ws4):
        cfg, ws = ws4
        x, y = 0.0, math.pi / 2
        closed = g2_whale(ws, x, y, cfg.g, trace_tops=(4,)).value
        quad = g2_whale_time_quadrature(ws, x, y, cfg.g)
        assert abs(quad - closed) / abs(closed) < 1e-6

    def test_whale_vs_brute_force(self):
        cfg = example_config(N=1, g=0.05, T1=2.0, T2=1.0)
        ws = DiagramWorkspace.from_config(cfg)
        x, y = 0.3, 1.9
        ref = brute_force_whale(ws, x, y, cfg.g)
        got = g2_whale(ws, x, y, cfg.g, trace_tops=(1,)).value
        assert abs(got - ref) / abs(ref) < 1e-12


class TestResonantReduction:
    def test_same_order_as_full(self):
        # the dropped nearly resonant terms are not negligible (spec open
        # question), but the resonant part carries the same order
        N = 12
        cfg = RunConfig(N=N, M=8 * N, g=0.01,
                        coupling=default_coupling(N, a=0.4, b=0.32),
                        temps=Temperatures(2.0, 1.0))
        ws = DiagramWorkspace.from_config(cfg)
        f = g1_full(ws, 0.0, math.pi / 2, cfg.g, trace_tops=(N,)).value
        r = g1_resonant(ws, 0.0, math.pi / 2, cfg.g, trace_tops=(N,)).value
        assert 0.1 <= abs(r) / abs(f) <= 10.0

    def test_paired_converges_unpaired_stalls(self, ws64):
        cfg, ws = ws64
        tops = (8, 16, 32, 64)
        paired = g1_resonant(ws, 0.0, 0.0, cfg.g, ring_average=True,
                             trace_tops=tops)
        unpaired = g1_resonant(ws, 0.0, 0.0, cfg.g, paired=False,
                               diagnostic=True, ring_average=True,
                               trace_tops=tops)
        assert paired.degree_fit < -0.5
        assert abs(unpaired.degree_fit) < 0.35

    def test_unpaired_requires_diagnostic_flag(self, ws4):
        cfg, ws = ws4
        with pytest.raises(ValueError, match="diagnostic"):
            g1_resonant(ws, 0.0, 1.0, cfg.g, paired=False)

    def test_per_term_degree_minus_one(self, ws64):
        # the n term of the resonant sum has superficial degree -1
        cfg, ws = ws64
        sp = ws.spectrum
        tmat = np.real(np.diag(ws.mc.t_sandwich))
        two_re = (ws.lam + ws.lam.conj()).real
        K = (ws.E.conj() * ws.cdiag[None, :] * ws.F.conj()).sum(axis=1) * ws.dz
        q = 1.0 / sp.pairings
        cross = np.abs(q) ** 2 / (math.pi * np.abs(sp.lambdas) ** 2)
        mags, ns = [], []
        for n in range(4, 65, 4):
            i = sp.index[ModeLabel("osc", n, +1)]
            mags.append(abs(3 * cfg.g * tmat[i] / two_re[i] ** 2 * K[i] * cross[i]))
            ns.append(n)
        slope = np.polyfit(np.log(ns), np.log(mags), 1)[0]
        assert slope == pytest.approx(-1.0, abs=0.3)


class TestTadpoleDivergence:
    def test_third_and_fourth_diverge(self, ws64):
        cfg, ws = ws64
        x = y = math.pi / 3
        for which in ("third", "fourth"):
            r = g2_tadpole_divergence(ws, x, y, cfg.g, which,
                                      trace_tops=(8, 16, 32, 64))
            assert r.diverged
            assert r.value is None
            assert r.degree_fit == pytest.approx(1.0, abs=0.3)

    def test_difference_does_not_cancel(self, ws64):
        cfg, ws = ws64
        x = y = math.pi / 3
        tops = (8, 16, 32, 64)
        r3 = g2_tadpole_divergence(ws, x, y, cfg.g, "third", trace_tops=tops)
        r4 = g2_tadpole_divergence(ws, x, y, cfg.g, "fourth", trace_tops=tops)
        diff = [
            (L3, v3 - v4)
            for (L3, v3), (_, v4) in zip(r3.cutoff_trace, r4.cutoff_trace)
        ]
        assert fit_octave_degree(diff) == pytest.approx(1.0, abs=0.3)

    def test_invalid_which_rejected(self, ws4):
        cfg, ws = ws4
        with pytest.raises(ValueError):
            g2_tadpole_divergence(ws, 0, 0, cfg.g, "fifth")


class TestCutoffTraces:
    def test_whale_converges(self):
        cfg = example_config(N=16, g=0.02, T1=2.0, T2=1.0)
        ws = DiagramWorkspace.from_config(cfg)
        r = g2_whale(ws, 0.0, math.pi / 2, cfg.g, trace_tops=(4, 8, 16))
        assert r.degree_fit < 0
        last_gap = abs(r.cutoff_trace[-1][1] - r.cutoff_trace[-2][1])
        assert last_gap <= cfg.tail_tol

    def test_g1_full_converges(self, ws64):
        cfg, ws = ws64
        r = g1_full(ws, 0.0, math.pi / 2, cfg.g, trace_tops=(8, 16, 32, 64))
        assert r.degree_fit < 0


class TestRenormalizedSeries:
    def test_g_zero_reduces_to_covariance(self):
        cfg = example_config(N=4, g=0.0, T1=2.0, T2=1.0)
        from kgring.spectrum import solve_spectrum
        from kgring.covariance import CovarianceField

        val = two_point_correction(0.3, 1.1, 0.0, cfg)
        spec = solve_spectrum(cfg.coupling, cfg.zero_potential(), cfg.N)
        cf = CovarianceField(spec, mode_covariance(spec, cfg.temps), cfg.M)
        assert abs(val - cf.value(0.3, 1.1, 0.0)) < 1e-12

    def test_wick_subtraction_kills_first_order(self):
        cfg = example_config(N=6, g=0.01, T1=2.0, T2=1.0)
        bd = two_point_breakdown(0.0, math.pi / 2, cfg.g, cfg)
        # the residual weight is bounded by the fixed-point residual; the
        # resonant denominators amplify it by a bounded factor
        assert abs(bd["g1_wick"].value) < 1e4 * cfg.fixpoint_tol
        assert abs(bd["whale"].value) > 0
        assert bd["fixpoint_trace"].converged

    def test_equilibrium_variance_shift_negative(self):
        # quartic repulsion shrinks the field variance at equilibrium
        cfg = example_config(N=6, g=0.02, T1=1.0, T2=1.0)
        from kgring.spectrum import solve_spectrum
        from kgring.covariance import CovarianceField

        x = 0.9
        spec0 = solve_spectrum(cfg.coupling, cfg.zero_potential(), cfg.N)
        cf0 = CovarianceField(spec0, mode_covariance(spec0, cfg.temps), cfg.M)
        base = cf0.value(x, x, 0.0).real
        corrected = two_point_correction(x, x, cfg.g, cfg).real
        assert corrected < base

    @pytest.mark.slow
    def test_nonlinear_mc_within_3se(self):
        from kgring.sde import run_stationary
        from kgring.diagrams import g2_whale as _whale

        cfg = example_config(N=6, g=0.01, T1=2.0, T2=1.0, seed=5)
        probes = [(0.0, 0.0), (0.0, math.pi / 2)]
        bd = two_point_breakdown(0.0, 0.0, cfg.g, cfg)
        ws = bd["workspace"]
        preds = np.array(
            [
                ws.field.value(x, y, 0.0).real
                + _whale(ws, x, y, cfg.g, trace_tops=(6,)).value.real
                for (x, y) in probes
            ]
        )
        sim = run_stationary(cfg, "nonlinear", n_traj=64, dt=1.0,
                             n_samples=700, probes=probes)
        mean, se = sim.probe_means()
        assert np.all(np.abs(mean - preds) <= 3.0 * se)
