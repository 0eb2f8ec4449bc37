"""Monte-Carlo simulation of the linear and nonlinear field-bath dynamics.

This module is the fully independent oracle: it never touches the secular
eigensolver.  The linear dynamics is integrated *exactly* -- one step of
size dt maps the state by e^{dt A} and adds Gaussian noise with the exact
integrated covariance S_dt = S_inf - e^{dt A} S_inf e^{dt A^T}, both built
from dense linear algebra.  There is therefore no time-discretization bias
in any linear estimate; statistical error is the only error.

The nonlinear dynamics (cubic force) runs a Strang splitting: half kick
with the collocation-evaluated cubic (dealiased on a 4N+4 grid), exact
linear flow with noise, half kick.

States live in real coordinates (cos/sin components of each wavenumber plus
the two bath variables), which keeps the field exactly real along
trajectories.  Trajectories are vectorized; each one draws from its own
counter-based (Philox) stream keyed by (seed, trajectory index), so results
are bit-identical for any chunking or scheduling of the trajectory set.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np
import scipy.linalg

from .model import (
    CoeffSeq,
    Coupling,
    GridFunction,
    PotentialProfile,
    RunConfig,
    Temperatures,
    grid_points,
    integrate,
    to_grid,
)
from .spectrum import build_operator, schroedinger_block

__all__ = [
    "StateVector",
    "SimOutput",
    "LinearFlow",
    "NonlinearFlow",
    "real_basis_matrix",
    "state_to_real",
    "real_to_state",
    "step_linear",
    "step_nonlinear",
    "run_stationary",
    "current_estimate",
    "field_energy",
    "total_energy",
    "quartic_energy",
    "current_observable",
    "TrajectoryBlowupError",
]


class TrajectoryBlowupError(RuntimeError):
    pass


# ---------------------------------------------------------------------------
# states and the real coordinate system
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class StateVector:
    """One field-bath state (phi_hat, pi_hat, r) at a given time."""

    phihat: CoeffSeq
    pihat: CoeffSeq
    r: np.ndarray
    time: float = 0.0

    def __post_init__(self):
        r = np.asarray(self.r, dtype=float)
        if r.shape != (2,):
            raise ValueError("r must have two components")
        object.__setattr__(self, "r", r)
        for name, seq in (("phihat", self.phihat), ("pihat", self.pihat)):
            defect = np.max(np.abs(seq.c[::-1].conj() - seq.c))
            if defect > 1e-9 * (1.0 + np.max(np.abs(seq.c))):
                raise ValueError(f"{name} violates the reality constraint")

    @property
    def N(self):
        return self.phihat.N

    def reality_defect(self):
        return max(
            float(np.max(np.abs(self.phihat.c[::-1].conj() - self.phihat.c))),
            float(np.max(np.abs(self.pihat.c[::-1].conj() - self.pihat.c))),
        )


def real_basis_matrix(N):
    """Unitary map X = R Phi_hat onto real coordinates.

    Per field block: [h(0), sqrt2 Re h(1), sqrt2 Im h(1), ..., sqrt2 Im h(N)];
    bath components pass through.  R is unitary, so norms and energies are
    preserved, and real X <-> conjugate-symmetric coefficients.
    """
    K = 2 * N + 1
    d = 2 * K + 2
    R = np.zeros((d, d), dtype=complex)
    inv_sqrt2 = 1.0 / math.sqrt(2.0)

    def fill(base):
        R[base, base + N] = 1.0  # k = 0
        for k in range(1, N + 1):
            R[base + 2 * k - 1, base + N + k] = inv_sqrt2
            R[base + 2 * k - 1, base + N - k] = inv_sqrt2
            R[base + 2 * k, base + N + k] = -1j * inv_sqrt2
            R[base + 2 * k, base + N - k] = 1j * inv_sqrt2

    fill(0)
    fill(K)
    R[2 * K, 2 * K] = 1.0
    R[2 * K + 1, 2 * K + 1] = 1.0
    return R


def state_to_real(state: StateVector, R=None):
    R = real_basis_matrix(state.N) if R is None else R
    z = np.concatenate([state.phihat.c, state.pihat.c, state.r.astype(complex)])
    return (R @ z).real


def real_to_state(x, N, time=0.0, R=None):
    R = real_basis_matrix(N) if R is None else R
    z = R.conj().T @ np.asarray(x, dtype=complex)
    K = 2 * N + 1
    return StateVector(
        CoeffSeq(N, z[:K]), CoeffSeq(N, z[K : 2 * K]), z[2 * K :].real, time
    )


def _realify(Ac, R):
    Ar = R @ Ac @ R.conj().T
    worst = float(np.max(np.abs(Ar.imag)))
    if worst > 1e-10 * (1.0 + np.max(np.abs(Ar.real))):
        raise ValueError(f"operator is not real in the cos/sin basis ({worst:.2e})")
    return Ar.real


def _stable_cholesky(S):
    n = len(S)
    try:
        return np.linalg.cholesky(S + 1e-14 * np.trace(S) / n * np.eye(n))
    except np.linalg.LinAlgError:
        w, V = np.linalg.eigh(S)
        return V * np.sqrt(np.clip(w, 0.0, None))[None, :]


# ---------------------------------------------------------------------------
# exact linear integrator
# ---------------------------------------------------------------------------


class LinearFlow:
    """Exact one-step integrator of dPhi = A_v Phi dt + sqrt(Q) dW.

    X_{t+dt} = E X_t + L xi with E = e^{dt A} and L L^T = S_dt, the exact
    integrated noise covariance.  xi has the full state dimension: the two
    Brownian motions act on r, but the flow smears them over every
    coordinate within a step.
    """

    def __init__(self, coupling: Coupling, v: PotentialProfile, N: int,
                 temps: Temperatures, dt: float):
        if dt <= 0:
            raise ValueError("dt must be positive")
        self.N = N
        self.dt = dt
        self.temps = temps
        self.R = real_basis_matrix(N)
        op = build_operator(coupling, v, N)
        self.A = _realify(op.matrix, self.R)
        self.E = scipy.linalg.expm(self.A * dt)
        d = self.A.shape[0]
        if temps.T1 == 0.0 and temps.T2 == 0.0:
            self.sigma_inf = np.zeros((d, d))
            self.L = np.zeros((d, d))
        else:
            from .covariance import solve_stationary_covariance

            Q = np.zeros((d, d))
            Q[-2, -2] = 2.0 * temps.T1
            Q[-1, -1] = 2.0 * temps.T2
            S = solve_stationary_covariance(self.A.astype(complex), Q).real
            self.sigma_inf = 0.5 * (S + S.T)
            S_dt = self.sigma_inf - self.E @ self.sigma_inf @ self.E.T
            self.L = _stable_cholesky(0.5 * (S_dt + S_dt.T))

    @property
    def dim(self):
        return self.A.shape[0]

    def step(self, X, xi):
        """Advance states (rows of X) one exact step; xi ~ N(0, I), same shape."""
        return X @ self.E.T + xi @ self.L.T

    def stationary_sample(self, rng, n):
        return rng.standard_normal((n, self.dim)) @ _stable_cholesky(self.sigma_inf).T


class NonlinearFlow:
    """Strang splitting: half cubic kick, exact linear step, half kick.

    The kick integrates pi' = v_shift*phi - g*phi^3; the cubic is evaluated
    by collocation on a 4N+4 grid and projected back to level N (alias-free
    for a band-N field).  The linear half carries the matching potential
    v_shift, so the composed dynamics is the original cubic equation for any
    admissible shift.  Stability requires dt <= 0.5/(N+1).
    """

    def __init__(self, coupling, v_shift: PotentialProfile, N, temps, dt, g):
        if dt > 0.5 / (N + 1):
            raise ValueError(
                f"dt = {dt} above the stability bound 0.5/(N+1) = {0.5 / (N + 1):.3g}"
            )
        self.linear = LinearFlow(coupling, v_shift, N, temps, dt)
        self.g = g
        self.N = N
        self.dt = dt
        K = 2 * N + 1
        self._K = K
        Mk = 4 * N + 4
        ks = np.arange(-N, N + 1)
        x = grid_points(Mk)
        norm = 1.0 / math.sqrt(2.0 * math.pi)
        self._synth = np.exp(1j * np.outer(x, ks)) * norm  # coeff -> grid
        # grid -> coeff projection: c(k) = (sqrt(2 pi)/Mk) sum_j u_j e^{-ik x_j}
        self._proj = np.exp(-1j * np.outer(ks, x)) * (math.sqrt(2.0 * math.pi) / Mk)
        R = self.linear.R
        self._phi_from_real = R.conj().T[0:K, :]
        self._real_from_pi = R[K : 2 * K, K : 2 * K]
        # +v_shift*phi counter-kick as a convolution on the coefficients
        vh = v_shift.vhat
        if vh.l2_norm() == 0:
            self._vshift_conv = None
        else:
            diff = ks[:, None] - ks[None, :]
            conv = np.zeros((K, K), dtype=complex)
            mask = np.abs(diff) <= vh.N
            conv[mask] = vh.c[diff[mask] + vh.N]
            self._vshift_conv = conv / math.sqrt(2.0 * math.pi)

    def _kick(self, X, half_dt):
        phi = X @ self._phi_from_real.T  # (n, K) coefficients
        grid = (phi @ self._synth.T).real  # (n, Mk) real field values
        dpi = (-self.g * grid**3).astype(complex) @ self._proj.T
        if self._vshift_conv is not None:
            dpi += phi @ self._vshift_conv.T
        out = X.copy()
        out[:, self._K : 2 * self._K] += half_dt * (dpi @ self._real_from_pi.T).real
        return out

    def step(self, X, xi):
        half = 0.5 * self.dt
        X3 = self._kick(self.linear.step(self._kick(X, half), xi), half)
        sup = float(np.max(np.abs(X3)))
        if sup > 1e6:
            raise TrajectoryBlowupError(f"state magnitude {sup:.3e} exceeds 1e6")
        return X3


def step_linear(state: StateVector, dt, noise, coupling, v, temps) -> StateVector:
    """One exact linear step of a single state; ``noise`` is a standard
    normal vector of the full state dimension."""
    flow = LinearFlow(coupling, v, state.N, temps, dt)
    x = state_to_real(state, flow.R)
    x2 = flow.step(x[None, :], np.asarray(noise, dtype=float)[None, :])[0]
    return real_to_state(x2, state.N, state.time + dt, flow.R)


def step_nonlinear(state: StateVector, dt, noise, coupling, g, v_shift,
                   temps) -> StateVector:
    """One Strang-split nonlinear step of a single state."""
    flow = NonlinearFlow(coupling, v_shift, state.N, temps, dt, g)
    x = state_to_real(state, flow.linear.R)
    x2 = flow.step(x[None, :], np.asarray(noise, dtype=float)[None, :])[0]
    return real_to_state(x2, state.N, state.time + dt, flow.linear.R)


# ---------------------------------------------------------------------------
# observables
# ---------------------------------------------------------------------------


def field_energy(state: StateVector) -> float:
    ks = state.phihat.ks
    return 0.5 * float(
        np.sum(np.abs(state.pihat.c) ** 2)
        + np.sum((ks**2 + 1.0) * np.abs(state.phihat.c) ** 2)
    )


def total_energy(state: StateVector) -> float:
    return field_energy(state) + 0.5 * float(np.sum(state.r**2))


def quartic_energy(state: StateVector, g: float, M=None) -> float:
    M = M if M is not None else 8 * state.N + 8
    vals = to_grid(state.phihat, M).values.real
    quart = integrate(GridFunction(M, (vals**4).astype(complex))).real
    return total_energy(state) + 0.25 * g * quart


def current_observable(state: StateVector) -> float:
    """(1/2 pi) int pi(x) d_x phi(x) dx, evaluated spectrally."""
    ks = state.phihat.ks
    val = np.sum(1j * ks * state.phihat.c * state.pihat.c.conj())
    return float(val.real) / (2.0 * math.pi)


# ---------------------------------------------------------------------------
# stationary runs
# ---------------------------------------------------------------------------


@dataclass
class SimOutput:
    """Per-trajectory accumulators of a stationary run.

    Everything is stored per trajectory: batch-means errors stay honest and
    outputs of independent runs merge associatively (concatenation of the
    trajectory axis).
    """

    seed: int
    mode: str
    dt: float
    n_samples: int
    probe_points: tuple
    probe_sums: np.ndarray  # (n_traj, n_probes) sums of phi(x) phi(y)
    probe_sq_sums: np.ndarray
    probe_first_half: np.ndarray
    current_sums: np.ndarray  # (n_traj,)
    current_sq_sums: np.ndarray
    mode_lambdas: np.ndarray  # dense eigenvalues labeling the decay rates
    mode_lags: np.ndarray  # per-mode lag in saved steps
    mode_autocov: np.ndarray  # (n_traj, n_modes)
    mode_var: np.ndarray

    @property
    def n_traj(self):
        return self.probe_sums.shape[0]

    def merge(self, other: "SimOutput") -> "SimOutput":
        if (self.mode, self.dt, self.n_samples, tuple(self.probe_points)) != (
            other.mode, other.dt, other.n_samples, tuple(other.probe_points)
        ):
            raise ValueError("incompatible accumulators")
        return SimOutput(
            self.seed, self.mode, self.dt, self.n_samples, self.probe_points,
            np.vstack([self.probe_sums, other.probe_sums]),
            np.vstack([self.probe_sq_sums, other.probe_sq_sums]),
            np.vstack([self.probe_first_half, other.probe_first_half]),
            np.concatenate([self.current_sums, other.current_sums]),
            np.concatenate([self.current_sq_sums, other.current_sq_sums]),
            self.mode_lambdas, self.mode_lags,
            np.vstack([self.mode_autocov, other.mode_autocov]),
            np.vstack([self.mode_var, other.mode_var]),
        )

    def probe_means(self):
        m = self.probe_sums / self.n_samples
        return m.mean(axis=0), np.std(m, axis=0, ddof=1) / math.sqrt(self.n_traj)

    def probe_ess(self):
        """Effective sample size per probe: population variance / Var(mean)."""
        mean, se = self.probe_means()
        n_tot = self.n_traj * self.n_samples
        pop_var = self.probe_sq_sums.sum(axis=0) / n_tot - mean**2
        with np.errstate(divide="ignore", invalid="ignore"):
            return np.where(se > 0, pop_var / se**2, float(n_tot))

    def stationarity_flags(self, threshold=5.0):
        """First-half vs full batch-mean drift in pooled-SE units."""
        half = self.probe_first_half / max(self.n_samples // 2, 1)
        full = self.probe_sums / self.n_samples
        drift = np.abs(half.mean(axis=0) - full.mean(axis=0))
        se = np.std(full, axis=0, ddof=1) / math.sqrt(self.n_traj)
        return drift > threshold * np.where(se > 0, se, np.inf)

    def current_mean_se(self):
        m = self.current_sums / self.n_samples
        return float(m.mean()), float(np.std(m, ddof=1) / math.sqrt(self.n_traj))

    def decay_rates(self):
        """Estimated Re lambda per tracked mode.

        The lagged-autocovariance / variance ratio is pooled across
        trajectories before the log (keeps the ratio bias ~ 1/(total
        samples)); errors are leave-one-trajectory-out jackknife.
        """
        lag_t = self.mode_lags * self.dt
        num = self.mode_autocov.sum(axis=0)
        den = self.mode_var.sum(axis=0)
        pooled = np.log(np.abs(num / den)) / lag_t
        n = self.n_traj
        loo_num = num[None, :] - self.mode_autocov
        loo_den = den[None, :] - self.mode_var
        loo = np.log(np.abs(loo_num / loo_den)) / lag_t[None, :]
        se = np.sqrt((n - 1) / n * np.sum((loo - loo.mean(axis=0)) ** 2, axis=0))
        return pooled, se


def _default_probes():
    pts = [0.0, 2.0 * math.pi / 3.0, 4.0 * math.pi / 3.0]
    return [(x, y) for x in pts for y in pts]


def _probe_rows(N, points, R):
    """Real row vectors evaluating phi(x) on real-coordinate states."""
    ks = np.arange(-N, N + 1)
    K = 2 * N + 1
    d = 2 * K + 2
    rows = []
    for x in points:
        z = np.zeros(d, dtype=complex)
        z[0:K] = np.exp(1j * x * ks) / math.sqrt(2.0 * math.pi)
        rows.append((R.conj() @ z))
    out = np.vstack(rows)
    assert np.max(np.abs(out.imag)) < 1e-12
    return out.real


def _lag_groups(lags):
    groups = {}
    for i, L in enumerate(lags):
        groups.setdefault(int(L), []).append(i)
    return [(np.array(idx), L) for L, idx in sorted(groups.items())]


def run_stationary(cfg: RunConfig, mode="linear", n_traj=64, dt=1.0,
                   n_samples=1000, probes=None, v=None, burn_in_factor=20.0,
                   nonlinear_dt=None) -> SimOutput:
    """Sample the stationary state and accumulate the standard observables.

    Burn-in runs ``burn_in_factor`` multiples of the slowest decay time
    1/|max Re lambda| (dense eigenvalues).  One sample is recorded per dt of
    simulated time; nonlinear runs subdivide each dt into Strang substeps at
    or below the stability bound.
    """
    if cfg.temps.T1 == 0 and cfg.temps.T2 == 0:
        raise ValueError("stationary sampling needs a positive temperature")
    N = cfg.N
    v = v if v is not None else cfg.zero_potential()
    if mode == "linear":
        flow = LinearFlow(cfg.coupling, v, N, cfg.temps, dt)
        lin = flow
        substeps = 1
    elif mode == "nonlinear":
        sub = nonlinear_dt if nonlinear_dt is not None else 0.4 / (N + 1)
        substeps = max(1, int(math.ceil(dt / sub)))
        flow = NonlinearFlow(cfg.coupling, v, N, cfg.temps, dt / substeps, cfg.g)
        lin = flow.linear
    else:
        raise ValueError(f"unknown mode {mode!r}")

    d = lin.dim
    lam_all = np.linalg.eigvals(lin.A)
    slowest = float(np.max(lam_all.real))
    if slowest >= 0:
        raise ValueError("non-dissipative configuration")
    burn_steps = int(math.ceil(burn_in_factor / abs(slowest) / dt)) * substeps

    w, vl = scipy.linalg.eig(lin.A, left=True, right=False)
    order = np.lexsort((w.real, w.imag))
    w = w[order]
    vl = vl[:, order]
    lags = np.clip(np.round(0.75 / np.abs(w.real) / dt).astype(int), 1, 192)
    max_lag = int(lags.max())
    lag_groups = _lag_groups(lags)
    # vl are left eigenvectors of the real-basis A: amplitudes <f_n, X> = X @ conj(vl)
    FL = vl.conj()

    probes = list(probes) if probes is not None else _default_probes()
    rows_x = _probe_rows(N, [p[0] for p in probes], lin.R)
    rows_y = _probe_rows(N, [p[1] for p in probes], lin.R)
    K = 2 * N + 1
    ks = np.arange(-N, N + 1)
    phi_from_real = lin.R.conj().T[0:K, :]
    pi_from_real = lin.R.conj().T[K : 2 * K, :]

    rngs = [
        np.random.Generator(np.random.Philox(np.random.SeedSequence((cfg.seed, j))))
        for j in range(n_traj)
    ]
    X = np.vstack([lin.stationary_sample(r, 1) for r in rngs])

    def draw_block(n_steps):
        return np.stack([r.standard_normal((n_steps, d)) for r in rngs], axis=1)

    block = 128
    done = 0
    while done < burn_steps:
        nb = min(block, burn_steps - done)
        noise = draw_block(nb)
        for s in range(nb):
            X = flow.step(X, noise[s])
        done += nb

    n_probes = len(probes)
    probe_sums = np.zeros((n_traj, n_probes))
    probe_sq = np.zeros((n_traj, n_probes))
    probe_half = np.zeros((n_traj, n_probes))
    cur_sums = np.zeros(n_traj)
    cur_sq = np.zeros(n_traj)
    autocov = np.zeros((n_traj, len(w)), dtype=complex)
    var_acc = np.zeros((n_traj, len(w)))
    history = []
    half_mark = n_samples // 2

    done = 0
    while done < n_samples:
        nb = min(block, n_samples - done)
        noise = draw_block(nb * substeps)
        for s in range(nb):
            for sub_i in range(substeps):
                X = flow.step(X, noise[s * substeps + sub_i])
            t_idx = done + s
            phx = X @ rows_x.T
            phy = X @ rows_y.T
            prod = phx * phy
            probe_sums += prod
            probe_sq += prod**2
            if t_idx < half_mark:
                probe_half += prod
            phi_c = X @ phi_from_real.T
            pi_c = X @ pi_from_real.T
            J = np.sum(1j * ks[None, :] * phi_c * pi_c.conj(), axis=1).real / (
                2.0 * math.pi
            )
            cur_sums += J
            cur_sq += J**2
            amps = X @ FL
            history.append(amps)
            if len(history) > max_lag:
                for idx, L in lag_groups:
                    past = history[-1 - L]
                    autocov[:, idx] += amps[:, idx] * past[:, idx].conj()
                    var_acc[:, idx] += np.abs(amps[:, idx]) ** 2
                history.pop(0)
        done += nb

    return SimOutput(
        seed=cfg.seed, mode=mode, dt=dt, n_samples=n_samples,
        probe_points=tuple(probes),
        probe_sums=probe_sums, probe_sq_sums=probe_sq,
        probe_first_half=probe_half,
        current_sums=cur_sums, current_sq_sums=cur_sq,
        mode_lambdas=w, mode_lags=lags.astype(float),
        mode_autocov=autocov, mode_var=var_acc,
    )


def current_estimate(sim: SimOutput):
    """Mean current with its batch-means standard error."""
    return sim.current_mean_se()
