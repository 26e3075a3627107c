"""Boundedness tests and stationary fixed points for constant schedules.

Boundedness here means the total decoder error mse(t) = sigma2(t) + vbar(t)
stays bounded as the horizon grows.  Thresholds:

* noiseless feedback: log2|a| < C, the channel capacity, equivalently
  a^2 N / (N + P) < 1;
* noisy or absent feedback (N_f > 0, including +inf): |a| < 1.  The
  residual vbar accumulates at rate a^2 with a strictly positive drive, so
  the spectral radius of the error system is |a| itself.  (For the
  no-feedback case the transmit-side variance sigma2 alone would stay
  bounded up to |a| < (P+N)/N, but the reported error includes the residual
  and diverges at |a| >= 1.)
* state-estimate feedback: existence of a solution to the coupled pair of
  stationary equations, located by damped fixed-point iteration of the time
  recursions with a Newton polish.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Optional

import numpy as np

from .model import SystemSchedule, ValidationError, validate_schedule
from .recursions import SIGBAR_FORMS, ntilde_variance, se_step
from .schemes import RegimeKind

__all__ = [
    "StationaryReport",
    "channel_capacity",
    "check_noiseless",
    "check_output_fb",
    "solve_state_estimate_fp",
]


@dataclass(frozen=True)
class StationaryReport:
    """Outcome of a stationarity check.

    ``fixed_point`` is (sigma2, sigbar2) when a bounded stationary solution
    exists (sigbar2 carries the feedback-residual variance; stationary mse
    is their sum); ``residuals`` are the absolute defects of the stationary
    equations at the reported point.
    """

    regime: RegimeKind
    bounded: bool
    condition: str
    capacity: float
    fixed_point: Optional[tuple[float, float]] = None
    residuals: tuple[float, ...] = ()
    iterations: int = 0

    @property
    def mse(self) -> Optional[float]:
        if self.fixed_point is None:
            return None
        return self.fixed_point[0] + self.fixed_point[1]

    def to_dict(self) -> dict:
        fp = None
        if self.fixed_point is not None:
            fp = {
                "sigma2": self.fixed_point[0],
                "sigbar2": self.fixed_point[1],
                "mse": self.mse,
            }
        return {
            "regime": self.regime.value,
            "bounded": self.bounded,
            "condition": self.condition,
            "capacity": self.capacity,
            "fixed_point": fp,
            "residuals": list(self.residuals),
        }


def channel_capacity(P: float, N: float) -> float:
    """Capacity of the scalar Gaussian channel, 0.5*log2(1 + P/N) bits."""
    if P <= 0.0 or N <= 0.0:
        raise ValidationError("P and N must be > 0")
    return 0.5 * math.log2(1.0 + P / N)


def _constants(s: SystemSchedule) -> tuple[float, float, float, float, float]:
    s = validate_schedule(s)
    if not s.is_constant():
        raise ValidationError("stationarity checks require a constant schedule")
    return s.constants()


def check_noiseless(s: SystemSchedule) -> StationaryReport:
    """Noiseless-feedback boundedness: log2|a| < C, strictly.

    Bounded case: sigma2* = b^2 / (1 - a^2 N/(N+P)), residual zero.
    """
    a, b, P, N, _ = _constants(s)
    C = channel_capacity(P, N)
    ratio = a * a * N / (N + P)
    bounded = ratio < 1.0
    cond = (
        f"log2|a| = {math.log2(abs(a)) if a != 0 else -math.inf:.6g} "
        f"{'<' if bounded else '>='} C = {C:.6g} (need strict inequality)"
    )
    if not bounded:
        return StationaryReport(
            regime=RegimeKind.NOISELESS_FEEDBACK,
            bounded=False,
            condition=cond,
            capacity=C,
        )
    sigma2 = b * b / (1.0 - ratio)
    res = abs(sigma2 - (ratio * sigma2 + b * b))
    return StationaryReport(
        regime=RegimeKind.NOISELESS_FEEDBACK,
        bounded=True,
        condition=cond,
        capacity=C,
        fixed_point=(sigma2, 0.0),
        residuals=(res,),
    )


def check_output_fb(s: SystemSchedule) -> StationaryReport:
    """Output-feedback boundedness and fixed point for a constant schedule.

    N_f = 0 delegates to the noiseless check.  For N_f > 0 (finite or
    +inf) a stationary solution exists iff |a| < 1; the fixed point solves
    the linear pair

        sigma2 = rho_s * sigma2 + b^2,   rho_s = a^2 (N^2 + P*Var(nhat-free))/...
        vbar   = a^2 vbar + K*^2 Var(ntilde)

    where rho_s = a^2 N^2 (P+N+N_f) / ((P+N)^2 (N+N_f)) for finite N_f and
    a^2 N^2/(P+N)^2 without feedback.
    """
    a, b, P, N, N_f = _constants(s)
    if N_f == 0.0:
        rep = check_noiseless(s)
        return StationaryReport(
            regime=RegimeKind.OUTPUT_FEEDBACK,
            bounded=rep.bounded,
            condition=rep.condition,
            capacity=rep.capacity,
            fixed_point=rep.fixed_point,
            residuals=rep.residuals,
        )
    C = channel_capacity(P, N)
    regime = (
        RegimeKind.NO_FEEDBACK if math.isinf(N_f) else RegimeKind.OUTPUT_FEEDBACK
    )
    bounded = abs(a) < 1.0
    cond = f"|a| = {abs(a):.6g} {'<' if bounded else '>='} 1 (residual accumulates at rate a^2 for N_f > 0)"
    if math.isinf(N_f):
        cond += (
            f"; transmit-side sigma2 alone is bounded iff |a| < (P+N)/N = {(P+N)/N:.6g}"
        )
    if not bounded:
        return StationaryReport(regime=regime, bounded=False, condition=cond, capacity=C)
    if math.isinf(N_f):
        rho_s = a * a * N * N / (P + N) ** 2
    else:
        rho_s = a * a * N * N * (P + N + N_f) / ((P + N) ** 2 * (N + N_f))
    sigma2 = b * b / (1.0 - rho_s)
    Kstar2 = a * a * P * sigma2 / (P + N) ** 2
    drive = Kstar2 * ntilde_variance(N, N_f)
    vbar = drive / (1.0 - a * a)
    residuals = (
        abs(sigma2 - (rho_s * sigma2 + b * b)),
        abs(vbar - (a * a * vbar + drive)),
    )
    return StationaryReport(
        regime=regime,
        bounded=True,
        condition=cond,
        capacity=C,
        fixed_point=(sigma2, vbar),
        residuals=residuals,
    )


def _se_residuals(
    v: tuple[float, float], a, b, P, N, N_f, form
) -> tuple[float, float]:
    f1, f2 = se_step(v[0], v[1], a, b, P, N, N_f, form)
    return (abs(f1 - v[0]), abs(f2 - v[1]))


def _se_jacobian(v, a, b, P, N, N_f, form) -> np.ndarray:
    """Jacobian of the one-step map at v (analytic)."""
    s2, sb = v
    a2 = a * a
    c_s = a2 * N * N / (P + N) ** 2
    c_v = a2 * P * N / (P + N) ** 2
    den = sb + N_f
    if den > 0.0:
        d11 = c_s
        d12 = a2 * sb * (sb + 2.0 * N_f) / den**2
        nf_fac = N_f if form == "proof" else N_f * N_f
        d22 = a2 * nf_fac * N_f / den**2
    else:
        d11, d12, d22 = c_s, 0.0, 0.0
    return np.array([[d11, d12], [c_v, d22]])


def solve_state_estimate_fp(
    s: SystemSchedule,
    form: str = "proof",
    damping: float = 0.5,
    max_iter: int = 100_000,
    ceiling: float = 1e12,
    tol: float = 1e-13,
) -> StationaryReport:
    """Stationary pair (sigma2, sigbar2) for state-estimate feedback.

    Damped fixed-point iteration of the time recursions from (0, 0), the
    physically reached solution, followed by a two-variable Newton polish
    on the stationary residuals.  Divergence past ``ceiling`` or failure to
    converge within ``max_iter`` iterations is reported as unbounded, not
    raised.
    """
    a, b, P, N, N_f = _constants(s)
    if math.isinf(N_f):
        raise ValidationError("state-estimate feedback requires finite N_f")
    if form not in SIGBAR_FORMS:
        raise ValidationError(f"form must be one of {SIGBAR_FORMS}, got {form!r}")
    C = channel_capacity(P, N)
    regime = RegimeKind.STATE_ESTIMATE_FEEDBACK

    v = np.zeros(2)
    iters = 0
    converged = False
    for iters in range(1, max_iter + 1):
        f = np.array(se_step(v[0], v[1], a, b, P, N, N_f, form))
        v_next = (1.0 - damping) * v + damping * f
        if not np.all(np.isfinite(v_next)) or np.max(v_next) > ceiling:
            return StationaryReport(
                regime=regime,
                bounded=False,
                condition=f"iteration diverged past {ceiling:g} after {iters} steps",
                capacity=C,
                iterations=iters,
            )
        if np.max(np.abs(v_next - v)) <= tol * (1.0 + np.max(np.abs(v_next))):
            v = v_next
            converged = True
            break
        v = v_next
    if not converged:
        return StationaryReport(
            regime=regime,
            bounded=False,
            condition=f"no convergence within {max_iter} iterations",
            capacity=C,
            iterations=iters,
        )

    # Newton polish on G(v) = F(v) - v.
    for _ in range(30):
        f = np.array(se_step(v[0], v[1], a, b, P, N, N_f, form))
        gvec = f - v
        if np.max(np.abs(gvec)) < 1e-15 * (1.0 + np.max(np.abs(v))):
            break
        J = _se_jacobian(v, a, b, P, N, N_f, form) - np.eye(2)
        try:
            step = np.linalg.solve(J, -gvec)
        except np.linalg.LinAlgError:
            break
        v_new = np.maximum(v + step, 0.0)
        if not np.all(np.isfinite(v_new)):
            break
        v = v_new

    residuals = _se_residuals((v[0], v[1]), a, b, P, N, N_f, form)
    return StationaryReport(
        regime=regime,
        bounded=True,
        condition=f"damped fixed-point iteration converged in {iters} steps (Newton-polished)",
        capacity=C,
        fixed_point=(float(v[0]), float(v[1])),
        residuals=residuals,
        iterations=iters,
    )
