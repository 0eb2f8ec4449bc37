"""Stationary covariances: mode sums against the Lyapunov oracle, the Gibbs
equilibrium structure, the equal-time diagonal, and the propagator."""

import math

import numpy as np
import pytest
import scipy.linalg

from kgring.model import PotentialProfile, Temperatures, default_coupling, grid_points
from kgring.covariance import (
    CovarianceField,
    Propagator,
    dense_covariance,
    equal_time_diag,
    full_noise_matrix,
    lyapunov_oracle,
    mode_covariance,
    solve_stationary_covariance,
    space_time_covariance,
    stationary_current_dense,
)
from kgring.spectrum import (
    ModeLabel,
    SpectrumError,
    build_operator,
    decoupled_spectrum,
    solve_spectrum,
)


@pytest.fixture(scope="module")
def setup_n8():
    N = 8
    cpl = default_coupling(N)
    v0 = PotentialProfile.zero(cpl)
    spec = solve_spectrum(cpl, v0, N)
    op = build_operator(cpl, v0, N)
    return N, cpl, spec, op


class TestModeCovariance:
    def test_zero_temperature_gives_zero(self, setup_n8):
        N, cpl, spec, op = setup_n8
        mc = mode_covariance(spec, Temperatures(0.0, 0.0))
        assert np.max(np.abs(mc.scalars)) == 0.0

    def test_alpha_zero_supported_on_bath_modes(self):
        spec = decoupled_spectrum(6)
        mc = mode_covariance(spec, Temperatures(2.0, 1.0))
        sandwich = mc.t_sandwich
        # oscillatory f_r vanish: only the two bath rows/columns survive
        assert np.max(np.abs(sandwich[2:, :])) == 0.0
        assert np.max(np.abs(sandwich[:, 2:])) == 0.0
        assert np.allclose(np.diag(sandwich[:2, :2]).real, [4.0, 2.0])
        # stationary bath variances Q_i / 2 = T_i
        assert abs(mc.scalars[0, 0] - 2.0) < 1e-14
        assert abs(mc.scalars[1, 1] - 1.0) < 1e-14

    def test_hermitian_pairing(self, setup_n8):
        _, _, spec, _ = setup_n8
        mc = mode_covariance(spec, Temperatures(2.0, 0.7))
        assert np.max(np.abs(mc.scalars - mc.scalars.conj().T)) < 1e-12

    def test_stationarity_identity(self, setup_n8):
        # (lam_m* + lam_n) E[...] + <f_n, Q f_m> = 0 entry by entry
        _, _, spec, _ = setup_n8
        mc = mode_covariance(spec, Temperatures(1.5, 0.5))
        lam = spec.lambdas
        denom = lam.conj()[:, None] + lam[None, :]
        resid = denom * mc.scalars + mc.t_sandwich.T
        assert np.max(np.abs(resid)) < 1e-12

    @pytest.mark.parametrize("temps", [(1, 1), (2, 1), (4, 0.5)])
    def test_matches_lyapunov_oracle(self, setup_n8, temps):
        _, _, spec, op = setup_n8
        tt = Temperatures(*temps)
        S_modes = dense_covariance(mode_covariance(spec, tt))
        S_lyap = lyapunov_oracle(op, tt)
        err = np.linalg.norm(S_modes - S_lyap) / np.linalg.norm(S_lyap)
        assert err < 1e-8


class TestLyapunovOracle:
    def test_scalar_ou(self):
        # dX = -X dt + sqrt(2) dW: noise covariance 2, variance 1
        S = solve_stationary_covariance(np.array([[-1.0 + 0j]]), np.array([[2.0]]))
        assert abs(S[0, 0] - 1.0) < 1e-14

    def test_alpha_zero_r_block(self):
        N = 3
        cpl = default_coupling(N, a=0.0, b=0.0)
        op = build_operator(cpl, PotentialProfile.zero(cpl), N)
        # undamped field blocks make the full solve singular; solve the bath
        # corner alone (it decouples exactly)
        A_r = op.matrix[-2:, -2:]
        S = solve_stationary_covariance(A_r, np.diag([2.0 * 2.0, 2.0 * 1.0]))
        assert np.allclose(S, np.diag([2.0, 1.0]), atol=1e-14)

    def test_full_system_psd_and_hermitian(self, setup_n8):
        _, _, _, op = setup_n8
        S = lyapunov_oracle(op, Temperatures(1.0, 3.0))
        assert np.max(np.abs(S - S.conj().T)) < 1e-12
        assert np.min(np.linalg.eigvalsh(S)) > -1e-10

    def test_non_dissipative_reported(self):
        A = np.array([[1e-3 + 1j, 0], [0, -1.0 + 0j]])
        with pytest.raises(SpectrumError, match="dissipative"):
            solve_stationary_covariance(A, np.eye(2))


class TestEquilibriumGibbs:
    def test_phi_mode_variances(self, setup_n8):
        N, _, _, op = setup_n8
        S = lyapunov_oracle(op, Temperatures(1.0, 1.0))
        K = 2 * N + 1
        ks = np.arange(-N, N + 1)
        assert np.max(np.abs(np.diag(S[:K, :K]).real - 1.0 / (ks**2 + 1.0))) < 1e-8

    def test_cross_blocks_vanish(self, setup_n8):
        N, _, _, op = setup_n8
        S = lyapunov_oracle(op, Temperatures(1.0, 1.0))
        K = 2 * N + 1
        assert np.max(np.abs(S[:K, K : 2 * K])) < 1e-8  # phi-pi
        assert np.max(np.abs(S[K : 2 * K, 2 * K :])) < 1e-8  # pi-r

    def test_gibbs_kernel_closed_sum(self, setup_n8):
        N, _, spec, _ = setup_n8
        mc = mode_covariance(spec, Temperatures(1.0, 1.0))
        x, y = 0.7, 2.1
        val = space_time_covariance(spec, mc, x, y, 0.0)
        gibbs = sum(
            np.exp(1j * k * (x - y)) / (2 * math.pi * (k * k + 1.0))
            for k in range(-N, N + 1)
        )
        assert abs(val - gibbs) < 1e-12


class TestCovarianceField:
    def test_variance_positive_and_matches_diag(self, setup_n8):
        N, _, spec, _ = setup_n8
        mc = mode_covariance(spec, Temperatures(2.0, 1.0))
        cf = CovarianceField(spec, mc, 8 * N)
        d = cf.diag()
        x0 = d.x[5]
        v = cf.value(x0, x0, 0.0)
        assert abs(v.imag) < 1e-10
        assert v.real > 0
        assert abs(v - d.values[5]) < 1e-10

    def test_hermitian_symmetry(self, setup_n8):
        N, _, spec, _ = setup_n8
        mc = mode_covariance(spec, Temperatures(2.0, 1.0))
        cf = CovarianceField(spec, mc, 8 * N)
        C = cf.on_grid(0.0)
        assert np.max(np.abs(C - C.conj().T)) < 1e-10

    def test_nonequilibrium_profile_not_constant(self, setup_n8):
        N, _, spec, _ = setup_n8
        mc = mode_covariance(spec, Temperatures(2.0, 1.0))
        d = equal_time_diag(spec, mc, 8 * N)
        vals = d.values.real
        assert vals.max() - vals.min() > 1e-3

    def test_equilibrium_profile_constant(self, setup_n8):
        N, _, spec, _ = setup_n8
        mc = mode_covariance(spec, Temperatures(1.0, 1.0))
        d = equal_time_diag(spec, mc, 8 * N)
        expect = sum(1.0 / (2 * math.pi * (k * k + 1.0)) for k in range(-N, N + 1))
        assert np.max(np.abs(d.values.real - expect)) < 1e-10

    def test_diag_matches_lyapunov_in_x_space(self, setup_n8):
        N, _, spec, op = setup_n8
        temps = Temperatures(2.0, 1.0)
        mc = mode_covariance(spec, temps)
        M = 8 * N
        d = equal_time_diag(spec, mc, M)
        S = lyapunov_oracle(op, temps)
        K = 2 * N + 1
        ks = np.arange(-N, N + 1)
        F = np.exp(1j * np.outer(grid_points(M), ks)) / math.sqrt(2 * math.pi)
        diag_x = np.einsum("jk,kl,jl->j", F, S[:K, :K], F.conj())
        assert np.max(np.abs(d.values - diag_x)) < 1e-7

    def test_modulus_of_continuity(self, setup_n8):
        # discrete Hoelder quotient at gamma = 0.9 stays bounded
        N, _, spec, _ = setup_n8
        mc = mode_covariance(spec, Temperatures(2.0, 1.0))
        cf = CovarianceField(spec, mc, 8 * N)
        C = cf.on_grid(0.0)
        x = grid_points(8 * N)
        quots = []
        for shift in (1, 2, 5, 11):
            dy = x[shift]
            q = np.max(np.abs(C - np.roll(C, -shift, axis=1))) / dy**0.9
            quots.append(q)
        assert max(quots) < 10 * abs(C).max()

    def test_term_size_profile(self):
        # diagonal terms ~ n^-2, nearly degenerate pairs ~ n^-3, generic
        # ~ n^-2 m^-2 |n-m|^-1 (fitted exponents within +-0.3)
        N = 32
        cpl = default_coupling(N)
        spec = solve_spectrum(cpl, PotentialProfile.zero(cpl), N)
        mc = mode_covariance(spec, Temperatures(2.0, 1.0))
        sup_e = {}
        for n in range(1, N + 1):
            m = spec.mode(ModeLabel("osc", n, +1))
            sup_e[n] = np.max(np.abs(m.e_phi.c)) / abs(m.pairing)
        idx = {n: spec.index[ModeLabel("osc", n, +1)] for n in range(1, N + 1)}
        ns = np.arange(8, N + 1)
        diag_terms = np.array(
            [abs(mc.scalars[idx[n], idx[n]]) * sup_e[n] ** 2 for n in ns]
        )
        slope = np.polyfit(np.log(ns), np.log(diag_terms), 1)[0]
        assert slope == pytest.approx(-2.0, abs=0.3)
        # nearly degenerate partner (-n, same branch)
        near = []
        for n in ns:
            j = spec.index[ModeLabel("osc", -int(n), +1)]
            near.append(abs(mc.scalars[idx[n], j]) * sup_e[n] ** 2)
        slope_near = np.polyfit(np.log(ns), np.log(np.array(near)), 1)[0]
        assert slope_near == pytest.approx(-3.0, abs=0.3)
        # generic pair (n, n/2): expect ~ n^-2 m^-2 |n-m|^-1 ~ n^-5
        ns2 = np.arange(12, N + 1, 2)
        gen = []
        for n in ns2:
            m2 = n // 2
            j = spec.index[ModeLabel("osc", m2, +1)]
            term = abs(mc.scalars[idx[n], j])
            sup_m = np.max(np.abs(spec.mode(ModeLabel("osc", m2, +1)).e_phi.c)) / abs(
                spec.mode(ModeLabel("osc", m2, +1)).pairing
            )
            gen.append(term * sup_e[n] * sup_m)
        slope_gen = np.polyfit(np.log(ns2), np.log(np.array(gen)), 1)[0]
        assert slope_gen == pytest.approx(-5.0, abs=0.45)

    def test_tail_bound_recorded(self, setup_n8):
        N, _, spec, _ = setup_n8
        mc = mode_covariance(spec, Temperatures(2.0, 1.0))
        cf = CovarianceField(spec, mc, 8 * N)
        assert cf.tail_bound > 0
        # the tail estimate should roughly bound the effect of halving N
        half = solve_spectrum(spec.coupling, spec.v, N // 2)
        mc_half = mode_covariance(half, Temperatures(2.0, 1.0))
        cf_half = CovarianceField(half, mc_half, 8 * N)
        gap = np.max(np.abs(cf.diag().values - cf_half.diag().values))
        assert gap < 60 * cf.tail_bound


class TestPropagator:
    def test_decoupled_sin_kernel(self):
        N = 6
        spec = decoupled_spectrum(N)
        prop = Propagator(spec)
        x, z, t = 1.2, 0.4, 0.8
        got = prop.value(x, t, z)
        expect = math.sin(t) / (2 * math.pi)
        for n in range(1, N + 1):
            om = math.sqrt(n * n + 1.0)
            expect += math.sin(om * t) * math.cos(n * (x - z)) / (math.pi * om)
        assert abs(got - expect) < 1e-12

    def test_matches_dense_matrix_exponential(self):
        N = 10
        cpl = default_coupling(N)
        v0 = PotentialProfile.zero(cpl)
        spec = solve_spectrum(cpl, v0, N)
        op = build_operator(cpl, v0, N)
        K = 2 * N + 1
        ks = np.arange(-N, N + 1)
        x, z, t = 2.0, 0.9, 1.3
        E = scipy.linalg.expm(op.matrix * t)
        ex = np.exp(1j * x * ks) / math.sqrt(2 * math.pi)
        ez = np.exp(1j * z * ks) / math.sqrt(2 * math.pi)
        expect = ex @ E[0:K, K : 2 * K] @ ez.conj()
        got = Propagator(spec).value(x, t, z)
        assert abs(got - expect) < 1e-6

    def test_large_time_decay_bound(self, setup_n8):
        _, _, spec, _ = setup_n8
        prop = Propagator(spec)
        ts = np.array([5.0, 50.0, 200.0])
        vals = np.abs(prop.value(0.3, ts, 1.7))
        bound = 50 * np.exp(spec.max_real_part() * ts)
        assert (vals <= bound).all()

    def test_rejects_nonpositive_time(self, setup_n8):
        _, _, spec, _ = setup_n8
        with pytest.raises(ValueError, match="t > 0"):
            Propagator(spec).value(0.1, 0.0, 0.2)


class TestCurrent:
    def test_equilibrium_current_vanishes(self, setup_n8):
        N, _, _, op = setup_n8
        S = lyapunov_oracle(op, Temperatures(1.0, 1.0))
        assert abs(stationary_current_dense(S, N)) < 1e-10

    def test_linear_in_temperature_difference(self, setup_n8):
        N, _, _, op = setup_n8
        J21 = stationary_current_dense(lyapunov_oracle(op, Temperatures(2, 1)), N)
        J31 = stationary_current_dense(lyapunov_oracle(op, Temperatures(3, 1)), N)
        assert abs(J21) > 0.01
        assert J31 / J21 == pytest.approx(2.0, rel=1e-9)
