"""Perturbative corrections to the stationary two-point function.

Vertices carry the cubic interaction; lines are stationary covariances C and
propagators D, with every time integral of e^{t(lam + lam')} done in closed
form as -1/(lam + lam').  Implemented diagrams:

* first order (``g1_full``): the complete double mode sum of
  3g " dt dz w(z) [C(z,x,t) D(y,t;z) + C(z,y,t) D(x,t;z)] with vertex
  weight w(z) = 3g C(z,z,0), or a Wick-subtracted weight;
* its resonant reduction (``g1_resonant``): one mode label and the small
  denominator (lam + lam*)^-2, convergent only through the n/-n pairing;
* the order-g^2 "breaching whale" (``g2_whale``): three resonant covariance
  lines between the interaction vertices, two propagators out to x and y,
  every time integral exact, the wavenumber constraint enforced by the
  z-integrals (coefficient convolutions evaluated on the quadrature grid);
* the two divergent tadpole diagrams (``g2_tadpole_divergence``): single
  mode sums whose partial sums grow linearly in the cutoff.  They are kept
  as diagnostics; the renormalized series removes them.

Cutoff traces evaluate a diagram with all mode labels restricted to levels
<= L over a dyadic ladder of L; ``degree_fit`` is the log-log slope of the
octave increments (negative = convergent, ~+1 = linear divergence).

The independent oracle replaces the closed-form time integrals by composite
Gauss-Legendre quadrature of the same integrands (``*_time_quadrature``).
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .model import TWO_PI, RunConfig, grid_points
from .covariance import CovarianceField, ModeCovariance, mode_covariance
from .spectrum import Spectrum, SpectrumError, solve_spectrum

__all__ = [
    "DiagramResult",
    "DiagramWorkspace",
    "DIAGRAM_IDS",
    "g1_full",
    "g1_resonant",
    "g2_whale",
    "g2_tadpole_divergence",
    "g1_full_time_quadrature",
    "g2_whale_time_quadrature",
    "two_point_correction",
    "two_point_breakdown",
    "fit_octave_degree",
]

DIAGRAM_IDS = (
    "G1_FULL",
    "G1_RESONANT",
    "G2_WHALE",
    "G2_WHALE_TADPOLES",
    "G2_DOUBLE_TADPOLE",
)


@dataclass(frozen=True)
class DiagramResult:
    diagram_id: str
    value: complex | None
    cutoff_trace: tuple  # ((L, partial value), ...)
    degree_fit: float | None
    diverged: bool
    imag_residue: float

    def trace_values(self):
        return np.array([v for _, v in self.cutoff_trace])


def fit_octave_degree(trace):
    """Log-log slope of the octave increments |S(2L) - S(L)| against L."""
    if len(trace) < 3:
        return None
    Ls = np.array([L for L, _ in trace], dtype=float)
    vals = np.array([v for _, v in trace])
    inc = np.abs(np.diff(vals))
    mid = np.sqrt(Ls[1:] * Ls[:-1])
    good = inc > 0
    if good.sum() < 2:
        return -np.inf
    return float(np.polyfit(np.log(mid[good]), np.log(inc[good]), 1)[0])


def _check_denominators(den, active=None):
    mags = np.abs(den)
    if active is not None:
        if not np.any(active):
            return
        mags = mags[active]
    worst = float(np.min(mags))
    if worst < 1e-12:
        raise SpectrumError(
            f"diagram denominator {worst:.3e} below 1e-12: defective configuration"
        )


def _safe_inv(den, active):
    return np.where(active, 1.0 / np.where(active, den, 1.0), 0.0)


class DiagramWorkspace:
    """Grids and per-mode arrays shared by every diagram of one background."""

    def __init__(self, spectrum: Spectrum, mc: ModeCovariance, M: int):
        self.spectrum = spectrum
        self.mc = mc
        self.M = M
        field = CovarianceField(spectrum, mc, M)
        self.field = field
        self.cdiag = field.diag().values.real  # C(z, z, 0) on the grid
        self.E = field.e_grid  # rows: q_n e_{n,phi}(x_j)
        sp = spectrum
        ks = np.arange(-sp.N, sp.N + 1)
        x = grid_points(M)
        fourier = np.exp(1j * np.outer(x, ks)) / math.sqrt(TWO_PI)
        self.F = (fourier @ sp.f_pi_coeffs().T).T.conj()  # rows: conj f_{n,pi}(x_j)
        self.lam = sp.lambdas
        self.S = mc.scalars
        self.levels = np.array(
            [m.label.level if m.label.kind == "osc" else -1 for m in sp.modes]
        )
        self.dz = TWO_PI / M

    @staticmethod
    def from_config(cfg: RunConfig, v=None):
        v = v if v is not None else cfg.zero_potential()
        spec = solve_spectrum(cfg.coupling, v, cfg.N, cfg.root_tol, cfg.parallel_width)
        return DiagramWorkspace(spec, mode_covariance(spec, cfg.temps), cfg.M)

    def point_amp(self, pt):
        """Vector of q_n e_{n,phi}(pt) over the modes."""
        sp = self.spectrum
        ks = np.arange(-sp.N, sp.N + 1)
        vals = (np.exp(1j * pt * ks) @ sp.e_phi_coeffs().T) / math.sqrt(TWO_PI)
        return vals / sp.pairings

    def mask(self, L):
        return self.levels <= L

    def octaves(self, tops):
        out = [int(L) for L in tops if L <= self.spectrum.N]
        if not out or out[-1] != self.spectrum.N:
            out.append(self.spectrum.N)
        return out


# ---------------------------------------------------------------------------
# first order
# ---------------------------------------------------------------------------


def _g1_full_value(ws, a_x, a_y, weight, sel):
    E, F, lam = ws.E[sel], ws.F[sel], ws.lam[sel]
    S = ws.S[np.ix_(sel, sel)]
    I = (E.conj() * weight[None, :]) @ F.T * ws.dz  # I[m, j]
    B = S.T @ I  # B[k, j] = sum_m S[m, k] I[m, j]
    active = np.abs(B) > 0
    pair_den = lam[:, None] + lam[None, :]
    _check_denominators(pair_den, active)
    core = -B * _safe_inv(pair_den, active)
    ax, ay = a_x[sel], a_y[sel]
    return (ax @ core @ ay) + (ay @ core @ ax)


def g1_full(ws: DiagramWorkspace, x, y, g, weight=None,
            trace_tops=(4, 8, 16, 32), tail_tol=1e-6) -> DiagramResult:
    """The complete first-order correction at (x, y).

    ``weight`` overrides the vertex factor 3g C(z,z,0); the renormalized
    series passes the Wick-subtracted weight 3g C(z,z,0) - v*(z).
    """
    w = weight if weight is not None else 3.0 * g * ws.cdiag
    a_x, a_y = ws.point_amp(x), ws.point_amp(y)
    trace = []
    for L in ws.octaves(trace_tops):
        trace.append((L, complex(_g1_full_value(ws, a_x, a_y, w, ws.mask(L)))))
    total = trace[-1][1]
    return DiagramResult("G1_FULL", total, tuple(trace),
                         fit_octave_degree(trace), False, abs(total.imag))


def g1_resonant(ws: DiagramWorkspace, x, y, g, paired=True, diagnostic=False,
                ring_average=False, trace_tops=(4, 8, 16, 32),
                tail_tol=1e-6) -> DiagramResult:
    """The resonant single sum; convergence rests on the pairing of each
    mode with its conjugate partner inside a level group.

    ``paired=False`` (diagnostic only) keeps a single branch: without the
    partner the leading 1/n pieces no longer cancel and the octave
    increments stop shrinking (degree ~ 0).  ``ring_average=True`` replaces
    the (x, y) probe by the ring-averaged diagonal observable, whose cross
    factor is positive and free of the mode-phase oscillation in n -- the
    cleanest exhibition of the cancellation mechanism.
    """
    if not paired and not diagnostic:
        raise ValueError("unpaired summation is a diagnostic mode only")
    tmat_diag = np.real(np.diag(ws.mc.t_sandwich))
    active = tmat_diag > 0
    two_re = ws.lam + ws.lam.conj()
    _check_denominators(two_re, active)
    # resonant retention: the covariance line keeps its diagonal (label n)
    # and the propagator leg pairs with the conjugate mode, so the D-leg
    # factors appear conjugated
    K = (ws.E.conj() * ws.cdiag[None, :] * ws.F.conj()).sum(axis=1) * ws.dz
    inv2 = _safe_inv(two_re, active) ** 2
    if ring_average:
        q = 1.0 / ws.spectrum.pairings
        cross = np.abs(q) ** 2 / (math.pi * np.abs(ws.lam) ** 2)
    else:
        a_x, a_y = ws.point_amp(x), ws.point_amp(y)
        cross = a_x * a_y.conj() + a_y * a_x.conj()
    terms = 3.0 * g * tmat_diag * inv2 * K * cross
    if not paired:
        keep = np.array(
            [m.label.kind == "bath" or m.label.branch == 1
             for m in ws.spectrum.modes]
        )
        terms = np.where(keep, terms, 0.0)
    trace = []
    for L in ws.octaves(trace_tops):
        trace.append((L, complex(terms[ws.mask(L)].sum())))
    total = trace[-1][1]
    return DiagramResult("G1_RESONANT", total, tuple(trace),
                         fit_octave_degree(trace), False, abs(total.imag))


# ---------------------------------------------------------------------------
# order g^2: the breaching whale
# ---------------------------------------------------------------------------


def _whale_sum(ws, a_x, a_y, sel_mask):
    idx = np.where(sel_mask)[0]
    lam = ws.lam[idx]
    svar = np.real(np.diag(ws.S))[idx]
    ax, ay = a_x[idx], a_y[idx]
    E = ws.E[idx]
    F_T = ws.F[idx].T
    k_idx = np.where(svar > 0)[0]  # covariance lines need noise weight
    if len(k_idx) == 0 or np.max(np.abs(E[k_idx])) == 0:
        return 0.0 + 0.0j
    pair_den = lam[:, None] + lam[None, :]
    _check_denominators(pair_den)
    cau = 1.0 / pair_den  # [n, p] -> 1/(lam_n + lam_p)
    Ec = E.conj()
    dz = ws.dz
    total = 0.0 + 0.0j
    for i1, k1 in enumerate(k_idx):
        base = Ec[k1]
        for k2 in k_idx[i1:]:
            prods = (base * Ec[k2]) * Ec[k_idx]  # rows k3 (svar > 0 only)
            Z1 = prods @ F_T * dz  # [k3, n]
            Z2 = prods.conj() @ F_T * dz
            # line weights enter once per covariance line
            mult = (1.0 if k2 == k1 else 2.0) * svar[k1] * svar[k2]
            four_den = lam[None, :] + lam[k1] + lam[k2] + lam[k_idx][:, None]
            _check_denominators(four_den)
            u = Z1 * ay[None, :] / four_den
            w2c = (Z2 * ax[None, :]) @ cau.T
            contrib = (u * w2c).sum(axis=1)
            u_s = Z1 * ax[None, :] / four_den
            w2c_s = (Z2 * ay[None, :]) @ cau.T
            contrib_s = (u_s * w2c_s).sum(axis=1)
            total += mult * np.sum(svar[k_idx] * (contrib + contrib_s))
    return total


def g2_whale(ws: DiagramWorkspace, x, y, g, trace_tops=(8, 16, 32),
             tail_tol=1e-6) -> DiagramResult:
    """The finite order-g^2 diagram: three resonant covariance lines between
    the vertices, both terminal orientations included."""
    a_x, a_y = ws.point_amp(x), ws.point_amp(y)
    trace = []
    for L in ws.octaves(trace_tops):
        val = 6.0 * g * g * _whale_sum(ws, a_x, a_y, ws.mask(L))
        trace.append((L, complex(val)))
    total = trace[-1][1]
    return DiagramResult("G2_WHALE", total, tuple(trace),
                         fit_octave_degree(trace), False, abs(total.imag))


# ---------------------------------------------------------------------------
# divergent tadpole diagrams (diagnostics)
# ---------------------------------------------------------------------------


def g2_tadpole_divergence(ws: DiagramWorkspace, x, y, g, which="third",
                          trace_tops=(16, 32, 64, 128)) -> DiagramResult:
    """Partial-sum trace of the two tadpole-bearing g^2 diagrams.

    ``third``: the whale with tadpole earrings; ``fourth``: the double-
    tadpole partner (one tadpole per vertex, propagator chain through both).
    Summands have degree 0, so partial sums grow linearly in the cutoff; a
    positive fitted degree across >= 3 octaves is the divergence verdict.
    """
    if which not in ("third", "fourth"):
        raise ValueError("which must be 'third' or 'fourth'")
    a_x, a_y = ws.point_amp(x), ws.point_amp(y)
    tmat_diag = np.real(np.diag(ws.mc.t_sandwich))
    active = tmat_diag > 0
    two_re = ws.lam + ws.lam.conj()
    _check_denominators(two_re, active)
    inv3 = _safe_inv(two_re, active) ** 3
    if which == "third":
        I1 = (ws.E.conj() * ws.cdiag[None, :] * ws.F).sum(axis=1) * ws.dz
        core = np.abs(I1) ** 2
    else:
        K = (ws.E.conj() * ws.cdiag[None, :] * ws.F.conj()).sum(axis=1) * ws.dz
        core = K**2
    cross = a_x * a_y.conj() + a_y * a_x.conj()
    terms = -9.0 * g * g * tmat_diag * inv3 * cross * core
    trace = []
    for L in ws.octaves(trace_tops):
        trace.append((L, complex(terms[ws.mask(L)].sum())))
    deg = fit_octave_degree(trace)
    diverged = deg is not None and deg > 0.5 and len(trace) >= 4
    ident = "G2_WHALE_TADPOLES" if which == "third" else "G2_DOUBLE_TADPOLE"
    return DiagramResult(ident, None if diverged else trace[-1][1],
                         tuple(trace), deg, diverged,
                         abs(trace[-1][1].imag))


# ---------------------------------------------------------------------------
# time-quadrature oracles
# ---------------------------------------------------------------------------


def _gl_nodes(t_end, max_freq, order=10, rad_per_panel=1.5):
    """Composite Gauss-Legendre nodes and weights on [0, t_end]."""
    n_panels = max(8, int(math.ceil(t_end * max(max_freq, 0.5) / rad_per_panel)))
    base_x, base_w = np.polynomial.legendre.leggauss(order)
    edges = np.linspace(0.0, t_end, n_panels + 1)
    h = edges[1] - edges[0]
    mid = 0.5 * (edges[:-1] + edges[1:])
    nodes = (mid[:, None] + 0.5 * h * base_x[None, :]).ravel()
    weights = np.tile(0.5 * h * base_w, n_panels)
    return nodes, weights


def _quad_exp(s, nodes, weights):
    """Numerical integral of e^{t s} over the nodes, vectorized in s."""
    flat = np.asarray(s).ravel()
    blk = max(1, int(2e6 / max(len(nodes), 1)))
    res = np.empty(flat.shape, dtype=complex)
    for i in range(0, len(flat), blk):
        seg = flat[i : i + blk]
        res[i : i + blk] = weights @ np.exp(np.outer(nodes, seg))
    return res.reshape(np.asarray(s).shape)


def g1_full_time_quadrature(ws: DiagramWorkspace, x, y, g, weight=None,
                            decades=18.4, order=10):
    """First-order correction with the t-integral done numerically.

    Same z-integrals and mode data as the closed form; only the time
    integral of each e^{t (lam_k + lam_j)} is replaced by quadrature.
    """
    w = weight if weight is not None else 3.0 * g * ws.cdiag
    a_x, a_y = ws.point_amp(x), ws.point_amp(y)
    E, F, S, lam = ws.E, ws.F, ws.S, ws.lam
    I = (E.conj() * w[None, :]) @ F.T * ws.dz
    B = S.T @ I
    s = lam[:, None] + lam[None, :]
    t_end = decades / abs(float(np.max(s.real)))
    nodes, wts = _gl_nodes(t_end, float(np.max(np.abs(s.imag))), order)
    core = B * _quad_exp(s, nodes, wts)  # quadrature plays the role of -1/s
    return complex((a_x @ core @ a_y) + (a_y @ core @ a_x))


def g2_whale_time_quadrature(ws: DiagramWorkspace, x, y, g, decades=18.4,
                             order=10):
    """Whale value with both time integrals done numerically.

    The t2 integral multiplies e^{t2 (lam_n + lam_p)} only, so its
    quadrature is precomputed per (n, p); the t1 quadrature is applied node
    by node to the assembled two-point z-integrated integrand.
    """
    lam = ws.lam
    a_x, a_y = ws.point_amp(x), ws.point_amp(y)
    svar = np.real(np.diag(ws.S))
    s2 = lam[:, None] + lam[None, :]
    t2_end = decades / abs(float(np.max(s2.real)))
    nodes2, w2 = _gl_nodes(t2_end, float(np.max(np.abs(s2.imag))), order)
    Q2 = _quad_exp(s2, nodes2, w2)  # [n, p]
    slowest = 4.0 * abs(float(np.max(lam.real)))
    t1_end = decades / slowest
    nodes1, w1 = _gl_nodes(t1_end, 4.0 * float(np.max(np.abs(lam.imag))), order)
    E, F = ws.E, ws.F
    total = 0.0 + 0.0j
    for t1, wt in zip(nodes1, w1):
        phase = np.exp(lam * t1)
        # C~(z1, z2, t1) = sum_k e^{t1 lam_k} svar_k conj(E[k,z1]) E[k,z2]
        Ct = (E.conj() * (svar * phase)[:, None]).T @ E  # [z1, z2]
        G = (F @ Ct**3) @ F.T * ws.dz**2  # [n, p]
        both = (phase * a_y)[:, None] * a_x[None, :] + (phase * a_x)[:, None] * a_y[
            None, :
        ]
        total += wt * np.sum(both * G * Q2)
    return 6.0 * g * g * complex(total)


# ---------------------------------------------------------------------------
# the renormalized two-point function
# ---------------------------------------------------------------------------


def two_point_breakdown(x, y, g, cfg: RunConfig):
    """Solve the fixed point and assemble the renormalized series pieces.

    At v = v* the first-order vertex weight 3g C(z,z,0) - v*(z) vanishes up
    to the fixed-point residual, so the g^1 piece is a near-zero bookkeeping
    term and the g^2 correction is the whale alone.
    """
    from .renorm import solve_fixed_point
    from .model import to_grid

    v_star, trace = solve_fixed_point(g, cfg)
    spec = solve_spectrum(cfg.coupling, v_star, cfg.N, cfg.root_tol,
                          cfg.parallel_width)
    mc = mode_covariance(spec, cfg.temps)
    ws = DiagramWorkspace(spec, mc, cfg.M)
    c0 = ws.field.value(x, y, 0.0)
    v_grid = to_grid(v_star.vhat.pad(2 * cfg.N), cfg.M).values.real
    wick_weight = 3.0 * g * ws.cdiag - v_grid
    g1 = g1_full(ws, x, y, g, weight=wick_weight,
                 trace_tops=(max(cfg.N // 2, 1), cfg.N))
    whale = g2_whale(ws, x, y, g, trace_tops=(max(cfg.N // 2, 1), cfg.N))
    return {
        "v_star": v_star,
        "fixpoint_trace": trace,
        "workspace": ws,
        "c0": complex(c0),
        "g1_wick": g1,
        "whale": whale,
        "total": complex(c0 + g1.value + whale.value),
    }


def two_point_correction(x, y, g, cfg: RunConfig) -> complex:
    """C_{v*}(x, y, 0) + Wick-subtracted g^1 term + whale, through g^2."""
    return two_point_breakdown(x, y, g, cfg)["total"]
