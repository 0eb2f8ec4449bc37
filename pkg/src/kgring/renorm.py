"""The tadpole-killing fixed point v = 3g C_v(x, x, 0).

With this potential in the linear reference dynamics, g phi^3 - v phi is a
third-order Wick polynomial with respect to the stationary Gaussian measure
for every x, which removes all simple-tadpole diagrams from the expansion.
The map v -> 3g * (equal-time field variance of the v-dynamics) is Lipschitz
on the admissible ball and, for small g, a strict contraction; the solver is
a damped Picard iteration with step halving on residual increase.

The fixed point is stored band-limited at 2N: the variance profile is a
finite sum of products of two level-N mode functions, so 2N is exact, not an
approximation.
"""

from __future__ import annotations

import warnings
from dataclasses import dataclass

import numpy as np

from .model import CoeffSeq, GridFunction, PotentialProfile, RunConfig, from_grid, to_grid
from .covariance import CovarianceField, mode_covariance
from .spectrum import BallViolationError, solve_spectrum

__all__ = ["FixpointTrace", "FixpointError", "tilde_v", "solve_fixed_point",
           "lipschitz_probe"]


class FixpointError(RuntimeError):
    def __init__(self, message, trace=None):
        super().__init__(message)
        self.trace = trace


@dataclass
class FixpointTrace:
    iterates: list  # (sup norm of v, residual sup norm) per iteration
    contraction_ratios: list
    converged: bool

    def last_residual(self):
        return self.iterates[-1][1] if self.iterates else float("nan")


def _sup(vals):
    return float(np.max(np.abs(vals)))


def tilde_v(v: PotentialProfile, cfg: RunConfig, M=None) -> PotentialProfile:
    """The variance profile C_v(x, x, 0) of the v-dynamics, as a band-2N
    real potential (not yet scaled by 3g)."""
    M = M if M is not None else cfg.M
    spec = solve_spectrum(cfg.coupling, v, cfg.N, cfg.root_tol, cfg.parallel_width)
    mc = mode_covariance(spec, cfg.temps)
    diag = CovarianceField(spec, mc, M).diag()
    c = from_grid(diag, 2 * cfg.N).c
    c = 0.5 * (c + c[::-1].conj())  # symmetrize rounding noise; profile is real
    vhat = CoeffSeq(2 * cfg.N, c, real_valued=True)
    return PotentialProfile.build(vhat, cfg.coupling, cfg.eps0, M)


def solve_fixed_point(g: float, cfg: RunConfig, max_iter: int = 20,
                      omega: float = 1.0):
    """Solve v = 3g C_v(x, x, 0) by damped iteration.

    Returns (v_star, trace).  Raises FixpointError (with the trace attached)
    when the first step already leaves the admissible ball, when an iterate
    escapes it, or when max_iter is exhausted.
    """
    v = cfg.zero_potential()
    ball = v.ball_radius
    trace = FixpointTrace([], [], False)
    tv0 = tilde_v(v, cfg)
    if 3.0 * abs(g) * tv0.sup_norm > ball:
        raise FixpointError(
            f"3g ||v~_0|| = {3 * abs(g) * tv0.sup_norm:.3e} exceeds the ball "
            f"radius {ball:.3e}; reduce the coupling g",
            trace,
        )
    tv = tv0
    prev_res = None
    for _ in range(max_iter):
        target = (3.0 * g) * tv.vhat
        target_grid = to_grid(target, cfg.M).values.real
        v_grid = to_grid(v.vhat.pad(2 * cfg.N), cfg.M).values.real
        res = _sup(target_grid - v_grid)
        trace.iterates.append((v.sup_norm, res))
        if prev_res is not None:
            trace.contraction_ratios.append(res / prev_res if prev_res > 0 else 0.0)
            if res > prev_res:
                omega *= 0.5
        prev_res = res
        if res <= cfg.fixpoint_tol:
            trace.converged = True
            return v, trace
        new_c = (1.0 - omega) * v.vhat.pad(2 * cfg.N).c + omega * target.c
        v = PotentialProfile.build(
            CoeffSeq(2 * cfg.N, new_c, real_valued=True), cfg.coupling, cfg.eps0, cfg.M
        )
        if v.sup_norm > ball:
            raise FixpointError(
                f"iterate left the ball: ||v|| = {v.sup_norm:.3e} > {ball:.3e}",
                trace,
            )
        tv = tilde_v(v, cfg)
    raise FixpointError(
        f"no convergence in {max_iter} iterations; last residual "
        f"{trace.last_residual():.3e}",
        trace,
    )


def lipschitz_probe(v1: PotentialProfile, v2: PotentialProfile,
                    cfg: RunConfig) -> float:
    """Observed ratio ||v~(v2) - v~(v1)||_C / ||v2 - v1||_C."""
    for v in (v1, v2):
        if not v.in_ball():
            raise BallViolationError(f"potential sup {v.sup_norm:.3e} outside ball")
    N2 = max(v1.vhat.N, v2.vhat.N)
    dv = to_grid(v2.vhat.pad(N2) - v1.vhat.pad(N2), cfg.M).values.real
    denom = _sup(dv)
    if denom == 0.0:
        warnings.warn("lipschitz_probe with identical potentials: returning 0")
        return 0.0
    t1 = tilde_v(v1, cfg)
    t2 = tilde_v(v2, cfg)
    dt = to_grid(t2.vhat - t1.vhat, cfg.M).values.real
    return _sup(dt) / denom
