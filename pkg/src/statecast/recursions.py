"""Deterministic gain and variance recursions for every regime.

All functions are pure: they consume a validated schedule (and, for the
separation pipeline, a measurement model) and produce gain or variance
series.  No sampling happens here; the Monte Carlo and exact-conditioning
modules validate these recursions independently.

Feedback-noise limits are explicit branches, never floating-point infinity
arithmetic: with feedback noise ``N_f`` the encoder's channel-noise estimate
``nhat`` has variance ``N^2/(N+N_f)`` (``N`` at ``N_f=0``, ``0`` at
``N_f=+inf``) and the unestimable remainder ``ntilde = n - nhat`` has
variance ``N*N_f/(N+N_f)`` (``0`` at ``N_f=0``, ``N`` at ``N_f=+inf``).

Residual recursion for state-estimate feedback
----------------------------------------------
Two variants of the feedback-residual update circulate.  Deriving the
variance directly from the filter's state equations gives

    sigbar2' = a^2 * N_f * sigbar2 / (sigbar2 + N_f)
             + a^2 * P * N / (P + N)^2 * sigma2

(``form="proof"``, the default), while the alternative carries an extra
``N_f`` factor on the first term (``form="stated"``).  The two match only at
``N_f = 0``; the "stated" form diverges as ``N_f -> inf`` instead of
recovering the no-feedback recursion, and only the default agrees with the
exact conditioning oracle and with Monte Carlo, so the default is the
correct update and "stated" is kept for comparison only.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .model import (
    Cov2,
    MeasurementModel,
    SystemSchedule,
    ValidationError,
    VariancePrediction,
    validate_measurement,
    validate_schedule,
)

__all__ = [
    "Gains",
    "KalmanPrefilter",
    "gains",
    "nhat_variance",
    "ntilde_variance",
    "propagate_cov_output_fb",
    "predict_output_fb",
    "predict_noiseless_fb",
    "predict_state_estimate_fb",
    "kalman_prefilter",
    "predict_separation",
    "separation_total",
    "SIGBAR_FORMS",
]

SIGBAR_FORMS = ("proof", "stated")


@dataclass(frozen=True)
class Gains:
    """Per-step filter gains derived from the transmit-side variance.

    K = a * kappa exactly; scale * sqrt(sigma2) = sqrt(P) whenever
    sigma2 > 0, and scale = 0 at the sigma2 = 0 degeneracy (nothing
    informative to send, so the encoder emits 0 and the decoder coasts).
    """

    K: float
    kappa: float
    scale: float


def gains(a: float, P: float, N: float, sigma2: float) -> Gains:
    """Decoder gain, conditioning gain and encoder scaling for one step."""
    if P <= 0.0 or N <= 0.0:
        raise ValidationError("P and N must be > 0")
    if sigma2 < 0.0:
        raise ValidationError(f"sigma2 must be >= 0, got {sigma2}")
    sigma = math.sqrt(sigma2)
    sqrtP = math.sqrt(P)
    kappa = sigma * sqrtP / (P + N)
    scale = sqrtP / sigma if sigma > 0.0 else 0.0
    return Gains(K=a * kappa, kappa=kappa, scale=scale)


def nhat_variance(N: float, N_f: float) -> float:
    """Variance of the encoder's channel-noise estimate from fed-back output."""
    if math.isinf(N_f):
        return 0.0
    return N * N / (N + N_f)


def ntilde_variance(N: float, N_f: float) -> float:
    """Variance of the channel-noise remainder the encoder cannot estimate."""
    if math.isinf(N_f):
        return N
    return N * N_f / (N + N_f)


def _transition(a: float, P: float, N: float) -> np.ndarray:
    return np.array([[a * N / (P + N), a * P / (P + N)], [0.0, a]])


def propagate_cov_output_fb(
    cov: Cov2, a: float, b: float, P: float, N: float, N_f: float, K: float
) -> Cov2:
    """One transmission step of the 2x2 covariance of (s, x).

    Update: A cov A' + diag(K^2 * N^2/(N+N_f), b^2) with
    A = [[aN/(P+N), aP/(P+N)], [0, a]].  PSD in, PSD out.
    """
    cov.check()
    A = _transition(a, P, N)
    m = A @ cov.as_matrix() @ A.T
    return Cov2(
        V_ss=m[0, 0] + K * K * nhat_variance(N, N_f),
        V_sx=m[0, 1],
        V_xx=m[1, 1] + b * b,
    )


def predict_output_fb(s: SystemSchedule) -> VariancePrediction:
    """Variance series for output feedback (any N_f, including 0 and +inf).

    Iterates the 2x2 covariance from (0, 0, V_xx0); step 0 is a pure plant
    propagation (no transmission), then each step t = 1..T-1 applies the
    transmission update with its own parameters.  vbar accumulates the
    unestimable channel-noise remainder: vbar(t+1) = a^2 vbar(t)
    + K(t)^2 * Var(ntilde).
    """
    s = validate_schedule(s)
    T = s.T
    sigma2 = np.empty(T)
    vbar = np.empty(T)
    cov = Cov2(0.0, 0.0, s.a[0] ** 2 * s.V_xx0 + s.b[0] ** 2)
    sigma2[0] = cov.sigma2()
    vbar[0] = 0.0
    for t in range(1, T):
        g = gains(s.a[t], s.P[t], s.N[t], sigma2[t - 1])
        cov = propagate_cov_output_fb(
            cov, s.a[t], s.b[t], s.P[t], s.N[t], s.N_f[t], g.K
        )
        sigma2[t] = cov.sigma2()
        vbar[t] = s.a[t] ** 2 * vbar[t - 1] + g.K**2 * ntilde_variance(
            s.N[t], s.N_f[t]
        )
    return VariancePrediction(sigma2=sigma2, vbar=vbar, mse=sigma2 + vbar)


def predict_noiseless_fb(s: SystemSchedule) -> VariancePrediction:
    """Variance series under noiseless output feedback (N_f entries ignored).

    sigma2(1) = a(0)^2 V_xx0 + b(0)^2, then
    sigma2(t+1) = (N/(N+P)) a^2 sigma2(t) + b^2.  The transmitter tracks the
    decoder exactly, so vbar = 0 and mse = sigma2.
    """
    s = validate_schedule(s)
    T = s.T
    sigma2 = np.empty(T)
    sigma2[0] = s.a[0] ** 2 * s.V_xx0 + s.b[0] ** 2
    for t in range(1, T):
        ratio = s.N[t] / (s.N[t] + s.P[t])
        sigma2[t] = ratio * s.a[t] ** 2 * sigma2[t - 1] + s.b[t] ** 2
    vbar = np.zeros(T)
    return VariancePrediction(sigma2=sigma2, vbar=vbar, mse=sigma2.copy())


def se_step(
    sigma2: float,
    sigbar2: float,
    a: float,
    b: float,
    P: float,
    N: float,
    N_f: float,
    form: str = "proof",
) -> tuple[float, float]:
    """One step of the coupled (sigma2, sigbar2) recursion for
    state-estimate feedback.  ``form`` selects the residual update variant
    (see the module docstring); 0/0 at sigbar2 = N_f = 0 resolves to 0.
    """
    if form not in SIGBAR_FORMS:
        raise ValidationError(f"form must be one of {SIGBAR_FORMS}, got {form!r}")
    a2 = a * a
    den = sigbar2 + N_f
    quart = a2 * sigbar2**2 / den if den > 0.0 else 0.0
    sigma2_next = a2 * N * N / (P + N) ** 2 * sigma2 + quart + b * b
    drive = a2 * P * N / (P + N) ** 2 * sigma2
    if den > 0.0:
        nf_fac = N_f if form == "proof" else N_f * N_f
        sigbar2_next = a2 * nf_fac * sigbar2 / den + drive
    else:
        sigbar2_next = drive
    return sigma2_next, sigbar2_next


def predict_state_estimate_fb(
    s: SystemSchedule, form: str = "proof"
) -> VariancePrediction:
    """Variance series when the decoder's state estimate is fed back.

    Starts from sigma2(1) = a(0)^2 V_xx0 + b(0)^2 and sigbar2(1) = 0 (the
    receiver's first estimate is deterministic, so the transmitter knows the
    full error), then iterates ``se_step``.  Requires finite N_f.
    """
    s = validate_schedule(s)
    if np.isinf(s.N_f).any():
        raise ValidationError(
            "state-estimate feedback requires finite N_f; use the no-feedback regime"
        )
    T = s.T
    sigma2 = np.empty(T)
    sigbar2 = np.empty(T)
    sigma2[0] = s.a[0] ** 2 * s.V_xx0 + s.b[0] ** 2
    sigbar2[0] = 0.0
    for t in range(1, T):
        sigma2[t], sigbar2[t] = se_step(
            sigma2[t - 1],
            sigbar2[t - 1],
            s.a[t],
            s.b[t],
            s.P[t],
            s.N[t],
            s.N_f[t],
            form,
        )
    return VariancePrediction(sigma2=sigma2, vbar=sigbar2, mse=sigma2 + sigbar2)


@dataclass(frozen=True, eq=False)
class KalmanPrefilter:
    """Transmitter-side filter sequences for the separation pipeline.

    L(t) and V_xixi(t) cover t = 0..T (prediction-error variance before the
    measurement at t), beta2(t) covers t = 0..T-1 (equivalent process-noise
    variance of the filtered-estimate chain), and V_xixi_filt(t) is the
    filtered error variance after the measurement at t.
    """

    L: np.ndarray
    V_xixi: np.ndarray
    beta2: np.ndarray
    V_xixi_filt: np.ndarray

    @property
    def beta(self) -> np.ndarray:
        return np.sqrt(self.beta2)


def kalman_prefilter(s: SystemSchedule, m: MeasurementModel) -> KalmanPrefilter:
    """Scalar Kalman filter for the transmitter's measurement chain.

    gamma(t) = c x(t) + d v(t) with jointly distributed (w(t), v(t)).
    Gains: L(t) = c V_xixi(t) / (c^2 V_xixi(t) + d^2 V_vv(t)); the error
    propagates as xi(t+1) = (a - aLc) xi(t) + b w(t) - a L d v(t), so the
    drive term is the quadratic form of [b, -aLd] with the joint noise
    covariance.  V_xixi(0) = V_xx0.  A zero innovation variance at any step
    is reported as an error.
    """
    s = validate_schedule(s)
    m = validate_measurement(m, s.T)
    T = s.T
    c, d = m.c, m.d
    L = np.empty(T + 1)
    V = np.empty(T + 1)
    V_filt = np.empty(T + 1)
    V[0] = s.V_xx0
    for t in range(T + 1):
        innov = c * c * V[t] + d * d * m.V_vv[t]
        if innov <= 0.0:
            raise ValidationError(f"degenerate innovation variance at step {t}")
        L[t] = V[t] * c / innov
        V_filt[t] = (1.0 - L[t] * c) ** 2 * V[t] + L[t] ** 2 * d * d * m.V_vv[t]
        if t < T:
            a, b = s.a[t], s.b[t]
            noise = np.array([b, -a * L[t] * d])
            V[t + 1] = (a - a * L[t] * c) ** 2 * V[t] + noise @ m.noise_cov(t) @ noise
    beta2 = np.empty(T)
    for t in range(T):
        innov_next = c * c * V[t + 1] + d * d * m.V_vv[t + 1]
        beta2[t] = L[t + 1] ** 2 * innov_next
    return KalmanPrefilter(L=L, V_xixi=V, beta2=beta2, V_xixi_filt=V_filt)


def separation_schedule(
    s: SystemSchedule, m: MeasurementModel
) -> tuple[SystemSchedule, KalmanPrefilter]:
    """Schedule of the filtered-estimate chain communicated in the
    separation pipeline: same pole, process gain beta(t), initial variance
    Var(xbreve(0|0))."""
    s = validate_schedule(s)
    kf = kalman_prefilter(s, m)
    m = validate_measurement(m, s.T)
    V0_breve = kf.L[0] ** 2 * (m.c**2 * s.V_xx0 + m.d**2 * m.V_vv[0])
    inner = SystemSchedule(
        T=s.T, a=s.a, b=kf.beta, P=s.P, N=s.N, N_f=s.N_f, V_xx0=V0_breve
    )
    return validate_schedule(inner), kf


def predict_separation(s: SystemSchedule, m: MeasurementModel) -> VariancePrediction:
    """Total decoder error when the transmitter only sees gamma(t).

    The communication stage is the output-feedback predictor applied to the
    filtered-estimate chain (b replaced by beta); the pre-filter's own
    filtered error is irreducible and adds on top:
    mse_total(t) = mse_comm(t) + V_xixi_filt(t).

    Exact when V_wv = 0; with cross-correlated (w, v) the stated filter is
    not the conditional mean, so the additive split is an approximation.
    """
    inner, kf = separation_schedule(s, m)
    comm = predict_output_fb(inner)
    extra = kf.V_xixi_filt[1:]
    return VariancePrediction(
        sigma2=comm.sigma2,
        vbar=comm.vbar + extra,
        mse=comm.mse + extra,
    )


def separation_total(
    s: SystemSchedule, m: MeasurementModel
) -> tuple[VariancePrediction, VariancePrediction, KalmanPrefilter]:
    """(total, communication-stage, prefilter) pieces of the separation prediction."""
    inner, kf = separation_schedule(s, m)
    comm = predict_output_fb(inner)
    extra = kf.V_xixi_filt[1:]
    total = VariancePrediction(
        sigma2=comm.sigma2, vbar=comm.vbar + extra, mse=comm.mse + extra
    )
    return total, comm, kf
