"""Stationary covariance of the linearized dynamics.

The stationary Gaussian measure of  dPhi = A_v Phi dt + sqrt(Q) dW  has mode
covariances fixed by stationarity plus Ito's lemma:

    (conj(lam_m) + lam_n) E[Phi(f_m*) Phi(f_n)] + <f_n, Q f_m> = 0,

with Q = diag(0, 0, 2 T1, 2 T2) the bath-noise covariance.  Everything else
is assembled from these scalars: the space-time field covariance

    C(x, y, t) = - sum_{m,n} P_{n,phi(y)} Q P_{m,phi(x)}^dag
                   e^{t lam_n} / (conj(lam_m) + lam_n),

its equal-time diagonal (the object the renormalization fixed point feeds
on), and the propagator D(x, t; z) = sum_n e^{t lam_n} P_{n,phi(x),pi(z)}.

Mode sums run in a fixed order, level group by level group with the n/-n
partners summed jointly and compensated accumulation across groups: the
propagator series is only conditionally convergent and relies on the pair
cancellation.

The independent oracle is a direct Lyapunov solve A S + S A^dag + Q = 0 of
the dense truncated system.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np
import scipy.linalg

from .model import GridFunction, Temperatures, grid_points
from .spectrum import Spectrum, SpectrumError, TruncatedOperator

__all__ = [
    "ModeCovariance",
    "CovarianceField",
    "Propagator",
    "mode_covariance",
    "dense_covariance",
    "lyapunov_oracle",
    "solve_stationary_covariance",
    "space_time_covariance",
    "equal_time_diag",
    "propagator",
    "full_noise_matrix",
    "stationary_current_dense",
]


def full_noise_matrix(N, temps: Temperatures):
    """Q = diag(0, ..., 0, 2 T1, 2 T2) on (phi_hat, pi_hat, r)."""
    d = 2 * (2 * N + 1) + 2
    Q = np.zeros((d, d))
    Q[-2, -2] = 2.0 * temps.T1
    Q[-1, -1] = 2.0 * temps.T2
    return Q


@dataclass(frozen=True)
class ModeCovariance:
    """Scalar stationary covariances in the biorthogonal mode basis.

    ``scalars[m, n] = E[Phi(f_m*) Phi(f_n)]``; the 4x4 block for a pair is
    available on demand (kept lazy: only the scalars and the phi rows are
    ever materialized by the downstream sums).
    """

    spectrum: Spectrum
    temps: Temperatures
    scalars: np.ndarray
    t_sandwich: np.ndarray  # <f_n, Q f_m>, indexed [n, m]

    @property
    def q_weights(self):
        return 1.0 / self.spectrum.pairings

    def block(self, m, n):
        """The (m, n) covariance block -P_n Q P_m^dag / (lam_m* + lam_n) as a
        dense truncated matrix."""
        sp = self.spectrum
        en = sp.modes[n].e_vector() / sp.pairings[n]
        em = sp.modes[m].e_vector() / sp.pairings[m]
        return self.scalars[m, n] * np.outer(en, em.conj())


def mode_covariance(spectrum: Spectrum, temps: Temperatures) -> ModeCovariance:
    """All pair entries of the stationary mode covariance.

    Every pair the noise actually reaches must have a strictly dissipative
    denominator; pairs with vanishing noise sandwich (e.g. all oscillatory
    modes of the decoupled system) contribute zero.
    """
    lam = spectrum.lambdas
    fr = spectrum.f_r_matrix()  # (d, 2)
    qdiag = np.array([2.0 * temps.T1, 2.0 * temps.T2])
    t_sandwich = (fr.conj() * qdiag[None, :]) @ fr.T  # [n, m] = <f_n, Q f_m>
    denom = lam.conj()[:, None] + lam[None, :]  # [m, n]
    num = t_sandwich.T
    active = np.abs(num) > 0
    if np.any(denom.real[active] >= 0):
        raise SpectrumError(
            "non-dissipative mode pair reached by the noise: "
            f"max Re lambda = {spectrum.max_real_part():.3e}"
        )
    safe = np.where(active, denom, 1.0)
    scalars = np.where(active, -num / safe, 0.0)
    herm_defect = np.max(np.abs(scalars - scalars.conj().T))
    if herm_defect > 1e-10 * (1.0 + np.max(np.abs(scalars))):
        raise SpectrumError(f"mode covariance not Hermitian: defect {herm_defect:.3e}")
    return ModeCovariance(spectrum, temps, scalars, t_sandwich)


def dense_covariance(mc: ModeCovariance) -> np.ndarray:
    """The full truncated covariance E[Phi Phi^dag] as the double mode sum."""
    sp = mc.spectrum
    E = sp.e_matrix() / sp.pairings[None, :]
    return E @ mc.scalars.T @ E.conj().T


def solve_stationary_covariance(A: np.ndarray, Q: np.ndarray) -> np.ndarray:
    """Unique solution of A S + S A^dag + Q = 0 for a dissipative A."""
    w = np.linalg.eigvals(A)
    worst = float(np.max(w.real))
    if worst >= 0:
        nearest = w[np.argmax(w.real)]
        raise SpectrumError(
            f"Lyapunov solve needs a dissipative operator; eigenvalue nearest "
            f"the axis: {nearest}"
        )
    S = scipy.linalg.solve_continuous_lyapunov(A, -np.asarray(Q, dtype=complex))
    S = 0.5 * (S + S.conj().T)
    evals = np.linalg.eigvalsh(S)
    floor = -1e-10 * max(1.0, float(np.max(np.abs(evals))))
    if float(np.min(evals)) < floor:
        raise SpectrumError(
            f"Lyapunov solution not PSD: min eigenvalue {np.min(evals):.3e}"
        )
    return S


def lyapunov_oracle(op: TruncatedOperator, temps: Temperatures) -> np.ndarray:
    """Brute-force stationary covariance of the dense truncated system."""
    return solve_stationary_covariance(op.matrix, full_noise_matrix(op.N, temps))


# ---------------------------------------------------------------------------
# field covariance
# ---------------------------------------------------------------------------


def _group_reduce(spectrum, terms):
    """Sum per-mode quantities (axis 0 = modes) level group by level group
    with compensated accumulation; deterministic for a fixed spectrum."""
    terms = np.asarray(terms)
    shape = terms.shape[1:]
    s = np.zeros(shape, dtype=complex)
    comp = np.zeros(shape, dtype=complex)
    for _, idx in spectrum.level_groups():
        t = terms[idx].sum(axis=0)
        y = t - comp
        tot = s + y
        comp = (tot - s) - y
        s = tot
    return s


class CovarianceField:
    """Evaluator of C(x, y, t) with its equal-time diagonal and a recorded
    estimate of the level-truncation tail."""

    def __init__(self, spectrum: Spectrum, mc: ModeCovariance, M: int):
        self.spectrum = spectrum
        self.mc = mc
        self.M = M
        q = 1.0 / spectrum.pairings
        ks = np.arange(-spectrum.N, spectrum.N + 1)
        x = grid_points(M)
        fourier = np.exp(1j * np.outer(x, ks)) / math.sqrt(2.0 * math.pi)
        # rows: q_n * e_{n,phi}(x_j)
        self.e_grid = (fourier @ spectrum.e_phi_coeffs().T).T * q[:, None]
        self._fourier = fourier
        self._q = q
        self._diag = None
        self.tail_bound = self._estimate_tail()

    def _point_vector(self, pts):
        ks = np.arange(-self.spectrum.N, self.spectrum.N + 1)
        pts = np.atleast_1d(np.asarray(pts, dtype=float))
        four = np.exp(1j * np.outer(pts, ks)) / math.sqrt(2.0 * math.pi)
        return (four @ self.spectrum.e_phi_coeffs().T) * self._q[None, :]

    def value(self, x, y, t=0.0):
        """C(x, y, t) = E[phi(x) phi_t(y)], scalar x, y; t scalar or array."""
        t_arr = np.atleast_1d(np.asarray(t, dtype=float))
        if np.any(t_arr < 0):
            raise ValueError("covariance evaluated at negative time lag")
        a = self._point_vector(y)[0]
        b = self._point_vector(x)[0]
        w = b.conj() @ self.mc.scalars  # w_n = sum_m conj(b_m) S[m, n]
        lam = self.spectrum.lambdas
        terms = (a * w)[:, None] * np.exp(np.outer(lam, t_arr))
        out = _group_reduce(self.spectrum, terms)
        return complex(out[0]) if np.isscalar(t) or np.ndim(t) == 0 else out

    def on_grid(self, t=0.0):
        """Matrix C[j, l] = C(x_j, x_l, t) over the M-point grid."""
        lam = self.spectrum.lambdas
        a = self.e_grid * np.exp(lam * float(t))[:, None]  # (d, M) for y side
        w = self.e_grid.conj().T @ self.mc.scalars  # (M, d): rows x
        # C[j, l] = sum_n w[j, n] a[n, l], accumulated level group by level
        # group with compensation (avoids a (d, M, M) intermediate)
        s = np.zeros((self.M, self.M), dtype=complex)
        comp = np.zeros_like(s)
        for _, idx in self.spectrum.level_groups():
            term = w[:, idx] @ a[idx, :]
            y = term - comp
            tot = s + y
            comp = (tot - s) - y
            s = tot
        return s

    def diag(self) -> GridFunction:
        """C(x, x, 0) on the grid; real and strictly positive."""
        if self._diag is None:
            w = self.e_grid.conj().T @ self.mc.scalars  # (M, d)
            terms = (w.T * self.e_grid)  # (d, M): term_n(x) pre-reduction
            vals = _group_reduce(self.spectrum, terms)
            imag = float(np.max(np.abs(vals.imag)))
            if imag > 1e-10 * (1.0 + float(np.max(np.abs(vals.real)))):
                raise SpectrumError(
                    f"equal-time diagonal has imaginary residue {imag:.3e}"
                )
            floor = -1e-12 * (1.0 + float(np.max(np.abs(vals.real))))
            if np.min(vals.real) < floor:
                # a driven field has strictly positive variance; a negative
                # diagonal can only come from a mistreated truncation tail
                raise SpectrumError(
                    "equal-time diagonal negative: numerical-tail failure "
                    f"(min {np.min(vals.real):.3e})"
                )
            self._diag = GridFunction(self.M, vals)
        return self._diag

    def _estimate_tail(self):
        """Geometric extrapolation of the per-level diagonal contributions
        (the double sum's diagonal decays like level^-2)."""
        groups = self.spectrum.level_groups()
        sup_by_level = {}
        for level, idx in groups:
            if level < 1:
                continue
            contrib = np.zeros(self.M, dtype=complex)
            for n in idx:
                contrib += self.mc.scalars[n, n] * np.abs(self.e_grid[n]) ** 2
            sup_by_level[level] = float(np.max(np.abs(contrib)))
        if not sup_by_level:
            return 0.0
        N = self.spectrum.N
        octave = [sup_by_level[L] * L * L for L in sup_by_level if L >= max(1, N // 2)]
        c = max(octave) if octave else 0.0
        return c / max(N, 1)


def space_time_covariance(spectrum, mc, x, y, t):
    """C(x, y, t) as the ordered double mode sum (t >= 0)."""
    field = CovarianceField(spectrum, mc, M=8 * spectrum.N if spectrum.N else 16)
    return field.value(x, y, t)


def equal_time_diag(spectrum, mc, M=None) -> GridFunction:
    M = M if M is not None else (8 * spectrum.N if spectrum.N else 16)
    return CovarianceField(spectrum, mc, M).diag()


# ---------------------------------------------------------------------------
# propagator
# ---------------------------------------------------------------------------


class Propagator:
    """D(x, t; z) = sum_n e^{t lam_n} P_{n, phi(x), pi(z)}, t > 0.

    The series at t = 0 is only conditionally convergent; evaluation is
    restricted to strictly positive times, in the paired level order.
    """

    def __init__(self, spectrum: Spectrum):
        self.spectrum = spectrum
        self.decay_rate = spectrum.max_real_part()

    def value(self, x, t, z):
        t_arr = np.atleast_1d(np.asarray(t, dtype=float))
        if np.any(t_arr <= 0):
            raise ValueError("propagator defined for t > 0 only")
        sp = self.spectrum
        ks = np.arange(-sp.N, sp.N + 1)
        ex = (np.exp(1j * float(x) * ks) @ sp.e_phi_coeffs().T) / math.sqrt(2 * math.pi)
        fz = (np.exp(1j * float(z) * ks) @ sp.f_pi_coeffs().T) / math.sqrt(2 * math.pi)
        amp = ex * fz.conj() / sp.pairings
        terms = amp[:, None] * np.exp(np.outer(sp.lambdas, t_arr))
        out = _group_reduce(sp, terms)
        return complex(out[0]) if np.ndim(t) == 0 else out


def propagator(spectrum, x, t, z):
    return Propagator(spectrum).value(x, t, z)


# ---------------------------------------------------------------------------
# observables of the dense covariance
# ---------------------------------------------------------------------------


def stationary_current_dense(sigma: np.ndarray, N: int) -> float:
    """Mean current (1/2 pi) int pi d_x phi dx from a dense covariance.

    In coefficients: (1/2 pi) sum_k Re[ik * Sigma[phi_k, pi_k]] with Sigma
    the Hermitian covariance E[Phi Phi^dag].
    """
    K = 2 * N + 1
    ks = np.arange(-N, N + 1)
    cross = np.diag(sigma[0:K, K : 2 * K])  # E[phi_k conj(pi_k)]
    val = np.sum(1j * ks * cross) / (2.0 * math.pi)
    return float(val.real)
