"""Domain types shared by every stage: band-limited periodic functions on the
ring [0, 2*pi], the uniform-grid quadrature that evaluates every integral in
the pipeline, bath-coupling data with its non-degeneracy checks, and run
configuration.

Conventions fixed here and inherited everywhere else:

* Fourier normalization  h(x) = sum_k c(k) e^{ikx} / sqrt(2*pi), so the
  L^2[0, 2*pi] norm of h equals the l^2 norm of its coefficients (Parseval
  with no stray factors).
* Quadrature is the uniform rectangle rule on M points, which is exact for
  trigonometric polynomials of degree < M.  The default M = 8N leaves room
  for products of three band-limited mode functions plus one adjoint factor.
* Temperatures enter the dynamics through the bath-noise covariance
  2*T_i (unit friction Langevin convention), so that at T1 == T2 == T the
  stationary state is the Gibbs measure with field-mode variance T/(k^2+1).
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, field, replace

import numpy as np

TWO_PI = 2.0 * math.pi
#: normalization of the Fourier basis e^{ikx}/sqrt(2 pi)
FOURIER_NORM = 1.0 / math.sqrt(TWO_PI)

__all__ = [
    "TWO_PI",
    "FOURIER_NORM",
    "CoeffSeq",
    "GridFunction",
    "Coupling",
    "PotentialProfile",
    "Temperatures",
    "RunConfig",
    "CouplingReport",
    "ConfigError",
    "to_grid",
    "from_grid",
    "integrate",
    "grid_points",
    "validate_coupling",
    "default_coupling",
    "example_config",
    "load_config",
    "config_to_dict",
    "kahan_sum",
]


class ConfigError(ValueError):
    """Raised when a run configuration violates the fixed key schema."""

    def __init__(self, key_path, message):
        self.key_path = key_path
        super().__init__(f"{key_path}: {message}")


# ---------------------------------------------------------------------------
# band-limited functions and the grid
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class CoeffSeq:
    """Fourier coefficients c(k), |k| <= N, of a band-limited function.

    ``c[j]`` stores the coefficient of wavenumber ``k = j - N``; the array has
    length exactly 2N+1.  When ``real_valued`` is set the coefficients must
    satisfy c(-k) = conj(c(k)) so the represented function is real.
    """

    N: int
    c: np.ndarray
    real_valued: bool = False

    def __post_init__(self):
        c = np.asarray(self.c, dtype=complex)
        if c.shape != (2 * self.N + 1,):
            raise ValueError(
                f"coefficient array has shape {c.shape}, expected ({2 * self.N + 1},)"
            )
        object.__setattr__(self, "c", c)
        if self.real_valued:
            defect = np.max(np.abs(c[::-1].conj() - c))
            scale = 1.0 + np.max(np.abs(c))
            if defect > 1e-9 * scale:
                raise ValueError(
                    f"real_valued flag set but c(-k) != conj(c(k)); defect {defect:.3e}"
                )

    @property
    def ks(self):
        return np.arange(-self.N, self.N + 1)

    def coeff(self, k):
        if abs(k) > self.N:
            return 0.0 + 0.0j
        return self.c[k + self.N]

    @staticmethod
    def zeros(N, real_valued=True):
        return CoeffSeq(N, np.zeros(2 * N + 1, dtype=complex), real_valued)

    def pad(self, N2):
        """Embed into a larger band [-N2, N2] (zero-extension)."""
        if N2 < self.N:
            raise ValueError("pad target band is smaller than current band")
        c = np.zeros(2 * N2 + 1, dtype=complex)
        c[N2 - self.N : N2 + self.N + 1] = self.c
        return CoeffSeq(N2, c, self.real_valued)

    def conj_function(self):
        """Coefficients of the pointwise complex conjugate x -> conj(h(x))."""
        return CoeffSeq(self.N, self.c[::-1].conj(), self.real_valued)

    def l2_norm(self):
        return float(np.linalg.norm(self.c))

    def __add__(self, other):
        N = max(self.N, other.N)
        a, b = self.pad(N), other.pad(N)
        return CoeffSeq(N, a.c + b.c, self.real_valued and other.real_valued)

    def __sub__(self, other):
        N = max(self.N, other.N)
        a, b = self.pad(N), other.pad(N)
        return CoeffSeq(N, a.c - b.c, self.real_valued and other.real_valued)

    def __mul__(self, scalar):
        s = complex(scalar)
        real = self.real_valued and s.imag == 0.0
        return CoeffSeq(self.N, self.c * s, real)

    __rmul__ = __mul__


@dataclass(frozen=True)
class GridFunction:
    """Values on the uniform grid x_j = 2*pi*j/M, j = 0..M-1."""

    M: int
    values: np.ndarray

    def __post_init__(self):
        v = np.asarray(self.values, dtype=complex)
        if v.shape != (self.M,):
            raise ValueError(f"values shape {v.shape}, expected ({self.M},)")
        object.__setattr__(self, "values", v)

    @property
    def x(self):
        return grid_points(self.M)


def grid_points(M):
    return TWO_PI * np.arange(M) / M


def to_grid(h: CoeffSeq, M: int) -> GridFunction:
    """Evaluate the band-limited function on the M-point uniform grid.

    Requires M >= 2N+1 so that all wavenumbers are distinct mod M.
    """
    if M < 2 * h.N + 1:
        raise ValueError(
            f"grid too small: M = {M} < 2N+1 = {2 * h.N + 1}; "
            "wavenumbers would alias"
        )
    spec = np.zeros(M, dtype=complex)
    ks = h.ks
    spec[np.mod(ks, M)] = h.c
    vals = M * np.fft.ifft(spec) * FOURIER_NORM
    return GridFunction(M, vals)


def from_grid(u: GridFunction, N: int) -> CoeffSeq:
    """Discrete Fourier projection onto the band [-N, N].

    Exact inverse of :func:`to_grid` on band-limited inputs when M >= 2N+1.
    """
    M = u.M
    if M < 2 * N + 1:
        raise ValueError(f"grid too small: M = {M} < 2N+1 = {2 * N + 1}")
    spec = np.fft.fft(u.values) / (M * FOURIER_NORM)
    ks = np.arange(-N, N + 1)
    return CoeffSeq(N, spec[np.mod(ks, M)])


def integrate(u: GridFunction) -> complex:
    """Rectangle rule for int_0^{2 pi} u dx; exact for trig degree < M."""
    return complex(TWO_PI * np.mean(u.values))


def kahan_sum(terms):
    """Compensated sequential sum of an iterable of (complex) terms.

    Keeps mode-sum reductions deterministic and accurate in the fixed
    summation order the callers establish.
    """
    s = 0.0 + 0.0j
    comp = 0.0 + 0.0j
    for t in terms:
        y = t - comp
        tot = s + y
        comp = (tot - s) - y
        s = tot
    return s


# ---------------------------------------------------------------------------
# coupling to the baths
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class Coupling:
    """Bath-coupling distributions alpha_1, alpha_2 with their band constants.

    The constants c1 < c2 < 1 and c0 bound, for each wavenumber n, the
    bilinear square a(n).a(n) and the Hermitian square a*(n).a(n) of the
    2-vector a(n) = (alpha1_hat(n), alpha2_hat(n)).  They rule out the
    antipodal delta-pair degeneracies that would collapse the splitting of
    the nearly degenerate eigenvalue pairs.
    """

    alpha1: CoeffSeq
    alpha2: CoeffSeq
    c0: float
    c1: float
    c2: float

    def __post_init__(self):
        if not (0 < self.c1 < self.c2 < 1):
            raise ValueError("need 0 < c1 < c2 < 1")
        if self.c0 <= 0:
            raise ValueError("need c0 > 0")
        if self.alpha1.N != self.alpha2.N:
            raise ValueError("alpha1 and alpha2 must share the truncation level")

    @property
    def N(self):
        return self.alpha1.N

    def alpha_hat(self, n):
        """The 2-vector (alpha1_hat(n), alpha2_hat(n))."""
        return np.array([self.alpha1.coeff(n), self.alpha2.coeff(n)])

    def alpha_matrix(self, N=None):
        """(2N+1, 2) array of coupling coefficients, rows indexed by k."""
        N = self.N if N is None else N
        a1 = self.alpha1.pad(N) if N > self.N else self.alpha1
        a2 = self.alpha2.pad(N) if N > self.N else self.alpha2
        if N < self.N:
            mid = self.N
            a1 = CoeffSeq(N, self.alpha1.c[mid - N : mid + N + 1])
            a2 = CoeffSeq(N, self.alpha2.c[mid - N : mid + N + 1])
        return np.stack([a1.c, a2.c], axis=1)

    def sup_sq(self):
        """sup_n of the Hermitian square a*(n).a(n)."""
        amat = self.alpha_matrix()
        return float(np.max(np.sum(np.abs(amat) ** 2, axis=1)))


@dataclass(frozen=True)
class CouplingReport:
    """Per-wavenumber margins of the three non-degeneracy inequalities.

    Rows are ``(n, |a.a| - c1, c2*(a*.a) - |a.a|, c0 - a*.a)``; a negative
    entry is a violation.  At n = 0 a real coupling forces |a.a| = a*.a, so
    the pair-splitting inequalities are vacuous there (there is no n/-n pair
    to split); the row checks c1 <= a*.a <= c0 instead.
    """

    rows: tuple
    passed: bool
    violations: tuple  # (n, inequality index 0/1/2) pairs

    def worst_margin(self):
        return min(min(m for m in row[1:] if m is not None) for row in self.rows)


def validate_coupling(coupling: Coupling, N: int) -> CouplingReport:
    """Check the coupling non-degeneracy band conditions for all |n| <= N."""
    rows = []
    violations = []
    for n in range(-N, N + 1):
        a = coupling.alpha_hat(n)
        bilin = abs(np.dot(a, a))
        herm = float(np.real(np.dot(a.conj(), a)))
        if n == 0 and np.allclose(a.imag, 0.0):
            # single mode at level 0: only boundedness below/above is needed
            m1 = herm - coupling.c1
            m2 = None
        else:
            m1 = bilin - coupling.c1
            m2 = coupling.c2 * herm - bilin
        m3 = coupling.c0 - herm
        rows.append((n, m1, m2, m3))
        for idx, m in enumerate((m1, m2, m3)):
            if m is not None and m < 0:
                violations.append((n, idx))
    return CouplingReport(tuple(rows), not violations, tuple(violations))


def default_coupling(N, a=1.0, b=0.8, theta=0.42 * math.pi,
                     c0=2.0, c1=0.35, c2=0.6) -> Coupling:
    """Reference coupling used by the tests and demos.

    alpha1 is a flat comb (a real delta-like distribution), alpha2 a comb of
    the same modulus with a uniform phase twist theta on positive wavenumbers
    (conjugate on negative ones, so alpha2 is real-valued as a distribution).
    theta strictly between 0 and pi/2 breaks the ring's parity symmetry,
    which is what lets a temperature difference drive a nonzero mean current.
    Per-|n| invariants: |a.a| = sqrt(a^4 + b^4 + 2 a^2 b^2 cos 2 theta),
    a*.a = a^2 + b^2, both independent of n.
    """
    ks = np.arange(-N, N + 1)
    a1 = np.full(2 * N + 1, a, dtype=complex)
    a2 = b * np.exp(1j * theta * np.sign(ks)).astype(complex)
    a2[N] = 0.0  # alpha2_hat(0): level 0 is damped through alpha1 alone
    return Coupling(
        CoeffSeq(N, a1, real_valued=True),
        CoeffSeq(N, a2, real_valued=True),
        c0,
        c1,
        c2,
    )


# ---------------------------------------------------------------------------
# potential, temperatures, run configuration
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class PotentialProfile:
    """Real periodic potential v(x) with its sup-norm and contraction ball.

    ``ball_radius = eps0 * sup_n |alpha_hat(n)|^2``; spectrum and fixed-point
    operations require ``sup_norm <= ball_radius``.
    """

    vhat: CoeffSeq
    sup_norm: float
    ball_radius: float

    @staticmethod
    def build(vhat: CoeffSeq, coupling: Coupling, eps0: float = 0.1,
              M: int | None = None) -> "PotentialProfile":
        if not vhat.real_valued:
            raise ValueError("potential must be real-valued")
        M = M if M is not None else max(8 * vhat.N, 16)
        vals = to_grid(vhat, M).values
        sup = float(np.max(np.abs(vals.real)))
        return PotentialProfile(vhat, sup, eps0 * coupling.sup_sq())

    @staticmethod
    def zero(coupling: Coupling, eps0: float = 0.1) -> "PotentialProfile":
        return PotentialProfile(CoeffSeq.zeros(0), 0.0, eps0 * coupling.sup_sq())

    def in_ball(self):
        return self.sup_norm <= self.ball_radius


@dataclass(frozen=True)
class Temperatures:
    T1: float
    T2: float

    def __post_init__(self):
        if self.T1 < 0 or self.T2 < 0:
            raise ValueError("temperatures must be nonnegative")

    def noise_covariance(self):
        """Bath-noise covariance diag(2 T1, 2 T2) (unit-friction Langevin)."""
        return np.diag([2.0 * self.T1, 2.0 * self.T2])


@dataclass(frozen=True)
class RunConfig:
    N: int
    M: int
    g: float
    coupling: Coupling
    temps: Temperatures
    root_tol: float = 1e-9
    fixpoint_tol: float = 1e-8
    tail_tol: float = 1e-6
    seed: int = 0
    parallel_width: int = 1
    eps0: float = 0.1

    def __post_init__(self):
        if self.M < 8 * self.N:
            raise ValueError(
                f"M = {self.M} < 8N = {8 * self.N}: triple mode products "
                "would not integrate exactly"
            )
        for name in ("root_tol", "fixpoint_tol", "tail_tol"):
            if getattr(self, name) <= 0:
                raise ValueError(f"{name} must be strictly positive")
        if self.parallel_width < 1:
            raise ValueError("parallel.width must be >= 1")

    def with_potential(self, vhat: CoeffSeq) -> PotentialProfile:
        return PotentialProfile.build(vhat, self.coupling, self.eps0, self.M)

    def zero_potential(self) -> PotentialProfile:
        return PotentialProfile.zero(self.coupling, self.eps0)


# ---------------------------------------------------------------------------
# configuration file handling (fixed key schema, JSON syntax)
# ---------------------------------------------------------------------------


def _require(d, path):
    cur = d
    walked = []
    for part in path.split("."):
        walked.append(part)
        if not isinstance(cur, dict) or part not in cur:
            raise ConfigError(".".join(walked), "missing required key")
        cur = cur[part]
    return cur


def _coeff_from_pairs(pairs, N, key):
    arr = np.asarray(pairs, dtype=float)
    if arr.ndim != 2 or arr.shape[1] != 2:
        raise ConfigError(key, "expected a list of [re, im] pairs")
    if arr.shape[0] != 2 * N + 1:
        raise ConfigError(
            key, f"expected 2N+1 = {2 * N + 1} entries (k = -N..N), got {arr.shape[0]}"
        )
    return CoeffSeq(N, arr[:, 0] + 1j * arr[:, 1], real_valued=True)


def load_config(path) -> RunConfig:
    """Read a run configuration from a JSON file with the fixed key paths.

    Required keys: model.N, model.M, model.g, coupling.alpha1, coupling.alpha2,
    coupling.c0/c1/c2, temps.T1/T2, tol.root/fixpoint/tail, rng.seed,
    parallel.width.  alpha arrays are lists of [re, im] pairs for k = -N..N.
    """
    with open(path, "r", encoding="utf-8") as fh:
        raw = json.load(fh)
    return config_from_dict(raw)


def config_from_dict(raw) -> RunConfig:
    N = int(_require(raw, "model.N"))
    M = int(_require(raw, "model.M"))
    g = float(_require(raw, "model.g"))
    alpha1 = _coeff_from_pairs(_require(raw, "coupling.alpha1"), N, "coupling.alpha1")
    alpha2 = _coeff_from_pairs(_require(raw, "coupling.alpha2"), N, "coupling.alpha2")
    try:
        coupling = Coupling(
            alpha1,
            alpha2,
            float(_require(raw, "coupling.c0")),
            float(_require(raw, "coupling.c1")),
            float(_require(raw, "coupling.c2")),
        )
    except ValueError as exc:
        raise ConfigError("coupling", str(exc)) from exc
    temps = Temperatures(
        float(_require(raw, "temps.T1")), float(_require(raw, "temps.T2"))
    )
    try:
        return RunConfig(
            N=N,
            M=M,
            g=g,
            coupling=coupling,
            temps=temps,
            root_tol=float(_require(raw, "tol.root")),
            fixpoint_tol=float(_require(raw, "tol.fixpoint")),
            tail_tol=float(_require(raw, "tol.tail")),
            seed=int(_require(raw, "rng.seed")),
            parallel_width=int(_require(raw, "parallel.width")),
        )
    except ValueError as exc:
        raise ConfigError("model", str(exc)) from exc


def _coeff_pairs(seq: CoeffSeq):
    return [[float(z.real), float(z.imag)] for z in seq.c]


def config_to_dict(cfg: RunConfig) -> dict:
    return {
        "model": {"N": cfg.N, "M": cfg.M, "g": cfg.g},
        "coupling": {
            "alpha1": _coeff_pairs(cfg.coupling.alpha1),
            "alpha2": _coeff_pairs(cfg.coupling.alpha2),
            "c0": cfg.coupling.c0,
            "c1": cfg.coupling.c1,
            "c2": cfg.coupling.c2,
        },
        "temps": {"T1": cfg.temps.T1, "T2": cfg.temps.T2},
        "tol": {
            "root": cfg.root_tol,
            "fixpoint": cfg.fixpoint_tol,
            "tail": cfg.tail_tol,
        },
        "rng": {"seed": cfg.seed},
        "parallel": {"width": cfg.parallel_width},
    }


def example_config(N=8, g=0.01, T1=2.0, T2=1.0, seed=7, M=None) -> RunConfig:
    """A ready-to-run configuration around the reference coupling."""
    return RunConfig(
        N=N,
        M=M if M is not None else 8 * N,
        g=g,
        coupling=default_coupling(N),
        temps=Temperatures(T1, T2),
        seed=seed,
    )
