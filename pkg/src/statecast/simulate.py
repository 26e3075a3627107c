"""Seeded Monte Carlo harness and the exact joint-Gaussian conditioning
oracle used as an independent correctness reference.

Random numbers
--------------
Streams are counter-based and keyed: the sample for (seed, trial, stream, t)
is produced by a Philox generator keyed with (seed, stream, t) at position
``trial``, so it is a pure function of those four values, independent of
the trial count, of the horizon, and of any parallel execution layout.
Normal deviates come from numpy's ziggurat sampler (``standard_normal``);
golden files are tied to the numpy release documented in the README.

Aggregation sums each per-step statistic over the trial axis with numpy's
pairwise reduction, whose order is fixed by the array shape, so identical
configurations produce bitwise-identical summaries.

Oracle
------
``exact_conditioning_oracle`` unrolls the closed-loop linear system in the
basis of unit-variance noises and reports two exact per-step error series:

* ``mse``, the conditional-mean error ``E|x(t) - E[x(t)|y^{t-1}]|^2`` by
  block conditioning (the best estimate any decoder could produce from the
  realized transmissions), and
* ``scheme_mse``, the realized filter pair's error, evaluated from the
  same coefficients with no recourse to the variance recursions.

``scheme_mse`` reproduces the recursions' mse for every regime.  ``mse``
coincides with it only under noiseless output feedback: in every other
regime the transmissions are correlated with past channel outputs, so the
one-tap recursive decoder is not the exact conditional mean and the joint
conditioning is strictly better from t = 3 on.  See the README for the
worked 3-step example.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Optional

import numpy as np
from numpy.random import Generator, Philox

from .model import (
    MeasurementModel,
    SystemSchedule,
    TrajectoryRecord,
    ValidationError,
    VariancePrediction,
    validate_measurement,
    validate_schedule,
)
from .schemes import (
    ArrayRecorder,
    Recorder,
    RegimeKind,
    build_plan,
    check_regime_consistency,
    run_closed_loop,
)

__all__ = [
    "McConfig",
    "McSummary",
    "NoiseStreams",
    "OracleResult",
    "sample_gaussian_streams",
    "monte_carlo",
    "exact_conditioning_oracle",
    "summary_csv",
    "format_float",
    "CSV_HEADER",
    "ORACLE_HORIZON_MAX",
]

# Stream identifiers baked into generator keys; reordering would change
# every golden file.
_STREAM_X0 = 0
_STREAM_W = 1
_STREAM_N = 2
_STREAM_NF = 3
_STREAM_V = 4

ORACLE_HORIZON_MAX = 12

CSV_HEADER = "t,pred_sigma2,pred_vbar,pred_mse,emp_mse,emp_se,emp_zpow"


def format_float(x: float) -> str:
    """17 significant digits: enough to round-trip any double exactly."""
    return f"{x:.17g}"


@dataclass(frozen=True)
class McConfig:
    """Monte Carlo run configuration."""

    trials: int
    seed: int
    record_trajectories: bool = False

    def check(self) -> "McConfig":
        if self.trials < 1:
            raise ValidationError(f"trials must be >= 1, got {self.trials}")
        return self


def _row(seed: int, stream: int, t: int, m: int) -> np.ndarray:
    """m unit normals keyed by (seed, stream, t); entry i belongs to trial i."""
    key = np.array(
        [np.uint64(seed & 0xFFFFFFFFFFFFFFFF), np.uint64((stream << 48) | t)],
        dtype=np.uint64,
    )
    return Generator(Philox(key=key)).standard_normal(m)


@dataclass(frozen=True, eq=False)
class NoiseStreams:
    """Already-scaled noise samples, one trajectory per column.

    x0 has shape (M,), the others (T, M); row t holds the step-t samples.
    n rows carry variance N(t), n_f rows N_f(t) (zeros where N_f is 0 or
    +inf), and (w, v) rows are jointly drawn with the measurement-noise
    covariance when a measurement model is present.
    """

    seed: int
    x0: np.ndarray
    w: np.ndarray
    n: np.ndarray
    n_f: np.ndarray
    v: Optional[np.ndarray] = None

    @property
    def trials(self) -> int:
        return len(self.x0)

    def single(self, trial: int) -> "NoiseStreams":
        """One trajectory's streams as length-T rows (column ``trial``)."""
        pick = lambda arr: None if arr is None else arr[:, trial]
        return NoiseStreams(
            seed=self.seed,
            x0=self.x0[trial],
            w=pick(self.w),
            n=pick(self.n),
            n_f=pick(self.n_f),
            v=pick(self.v),
        )


def sample_gaussian_streams(
    s: SystemSchedule,
    cfg: McConfig,
    measurement: Optional[MeasurementModel] = None,
) -> NoiseStreams:
    """Draw all noise streams for ``cfg.trials`` trajectories.

    Identical (seed, trial, stream, t) always yields the identical sample;
    distinct streams use distinct generator keys and are independent.
    """
    s = validate_schedule(s)
    cfg = cfg.check()
    T, M = s.T, cfg.trials
    seed = cfg.seed

    x0 = math.sqrt(s.V_xx0) * _row(seed, _STREAM_X0, 0, M)

    w = np.zeros((T, M))
    v = None
    if measurement is not None:
        measurement = validate_measurement(measurement, T)
        v = np.zeros((T, M))
    for t in range(T):
        e1 = _row(seed, _STREAM_W, t, M)
        if measurement is None:
            w[t] = e1
        else:
            l11 = math.sqrt(measurement.V_ww[t])
            l21 = measurement.V_wv[t] / l11 if l11 > 0.0 else 0.0
            l22 = math.sqrt(max(measurement.V_vv[t] - l21 * l21, 0.0))
            e2 = _row(seed, _STREAM_V, t, M)
            w[t] = l11 * e1
            v[t] = l21 * e1 + l22 * e2

    n = np.zeros((T, M))
    n_f = np.zeros((T, M))
    need_nf = bool(np.any(np.isfinite(s.N_f[1:]) & (s.N_f[1:] > 0.0)))
    for t in range(1, T):
        n[t] = math.sqrt(s.N[t]) * _row(seed, _STREAM_N, t, M)
        if need_nf and math.isfinite(s.N_f[t]) and s.N_f[t] > 0.0:
            n_f[t] = math.sqrt(s.N_f[t]) * _row(seed, _STREAM_NF, t, M)
    return NoiseStreams(seed=seed, x0=x0, w=w, n=n, n_f=n_f, v=v)


class _MomentRecorder(Recorder):
    """Accumulates the 2nd and 4th sample moments of errors and transmissions."""

    def __init__(self, trials: int):
        self.M = trials

    def start(self, T, width):
        self.T = T
        self.s2_err = np.zeros(T)
        self.s4_err = np.zeros(T)
        self.s2_z = np.zeros(T)
        self.s4_z = np.zeros(T)
        self.transmitted = np.zeros(T, dtype=bool)

    def error(self, t, err):
        e2 = np.asarray(err) ** 2
        self.s2_err[t - 1] = np.sum(e2)
        self.s4_err[t - 1] = np.sum(e2 * e2)

    def transmit(self, t, x, z, y, y_f, xhat):
        z2 = np.asarray(z) ** 2
        self.s2_z[t - 1] = np.sum(z2)
        self.s4_z[t - 1] = np.sum(z2 * z2)
        self.transmitted[t - 1] = True


def _mean_se(s2: np.ndarray, s4: np.ndarray, M: int) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    mean = s2 / M
    if M > 1:
        var = np.maximum(s4 - M * mean**2, 0.0) / (M - 1)
    else:
        var = np.full_like(mean, np.nan)
    return mean, var, np.sqrt(var / M)


@dataclass(frozen=True, eq=False)
class McSummary:
    """Per-step Monte Carlo statistics next to the deterministic prediction.

    ``zpow_*`` entries are NaN at steps with no transmission (t = T).
    ``delta_mse`` is ``emp_mse - pred.mse``.
    """

    kind: RegimeKind
    trials: int
    seed: int
    pred: VariancePrediction
    emp_mse: np.ndarray
    emp_mse_var: np.ndarray
    emp_se: np.ndarray
    emp_zpow: np.ndarray
    emp_zpow_var: np.ndarray
    emp_zpow_se: np.ndarray
    delta_mse: np.ndarray
    trajectories: Optional[list] = None

    @property
    def t(self) -> np.ndarray:
        return self.pred.t

    def max_se_ratio(self) -> float:
        """Largest |empirical - predicted| mse deviation in standard errors."""
        with np.errstate(divide="ignore", invalid="ignore"):
            r = np.abs(self.delta_mse) / self.emp_se
        return float(np.nanmax(r))

    def to_csv(self) -> str:
        return summary_csv(self)


def summary_csv(summary: McSummary) -> str:
    """Fixed-format CSV; floats carry 17 significant digits."""
    lines = [CSV_HEADER]
    p = summary.pred
    for i in range(p.T):
        cells = [str(i + 1)] + [
            format_float(v)
            for v in (
                p.sigma2[i],
                p.vbar[i],
                p.mse[i],
                summary.emp_mse[i],
                summary.emp_se[i],
                summary.emp_zpow[i],
            )
        ]
        lines.append(",".join(cells))
    return "\n".join(lines) + "\n"


def monte_carlo(
    s: SystemSchedule,
    kind: RegimeKind,
    cfg: McConfig,
    measurement: Optional[MeasurementModel] = None,
    form: str = "proof",
) -> McSummary:
    """Simulate ``cfg.trials`` trajectories and summarize against the prediction.

    Deterministic for a fixed config: identical inputs produce
    bitwise-identical summaries.
    """
    s = validate_schedule(s)
    cfg = cfg.check()
    plan = build_plan(s, kind, measurement=measurement, form=form)
    streams = sample_gaussian_streams(s, cfg, measurement=measurement)
    rec = _MomentRecorder(cfg.trials)
    run_closed_loop(plan, streams, rec)

    M = cfg.trials
    emp_mse, emp_mse_var, emp_se = _mean_se(rec.s2_err, rec.s4_err, M)
    zpow, zpow_var, zpow_se = _mean_se(rec.s2_z, rec.s4_z, M)
    quiet = ~rec.transmitted
    zpow[quiet] = np.nan
    zpow_var[quiet] = np.nan
    zpow_se[quiet] = np.nan

    trajectories = None
    if cfg.record_trajectories:
        arr = ArrayRecorder()
        run_closed_loop(plan, streams, arr)
        trajectories = [
            TrajectoryRecord(
                seed=cfg.seed,
                x=arr.x[:, m],
                z=arr.z[:, m],
                y=arr.y[:, m],
                y_f=arr.y_f[:, m],
                xhat=arr.xhat[:, m],
                sq_err=arr.sq_err[:, m],
            )
            for m in range(M)
        ]

    return McSummary(
        kind=kind,
        trials=M,
        seed=cfg.seed,
        pred=plan.prediction,
        emp_mse=emp_mse,
        emp_mse_var=emp_mse_var,
        emp_se=emp_se,
        emp_zpow=zpow,
        emp_zpow_var=zpow_var,
        emp_zpow_se=zpow_se,
        delta_mse=emp_mse - plan.prediction.mse,
        trajectories=trajectories,
    )


# ---------------------------------------------------------------------------
# Exact joint-Gaussian conditioning oracle
# ---------------------------------------------------------------------------


@dataclass(frozen=True, eq=False)
class OracleResult:
    """Exact per-step error variances of the closed loop (no sampling).

    ``mse[t-1]``: error of the best (conditional-mean) estimate of x(t) from
    y(1..t-1).  ``scheme_mse[t-1]``: error of the realized recursive decoder.
    ``open_loop_var[t-1]``: unconditional Var x(t).  ``cond_cov[t-1]``: the
    conditioning covariance of y(1..t-1) used for step t.
    """

    kind: RegimeKind
    mse: np.ndarray
    scheme_mse: np.ndarray
    open_loop_var: np.ndarray
    cond_cov: list


class _Unroller:
    """Closed-loop signals as coefficient vectors over unit-variance noises.

    Gains are computed self-consistently from the coefficients (the output
    scaling is sqrt(P)/std(xcheck) with the *true* standard deviation), so a
    perturbed internal gain still yields a feasible, exactly power-respecting
    encoder.  For the nominal scheme these gains reproduce the recursions'
    gains to rounding.
    """

    def __init__(
        self,
        s: SystemSchedule,
        kind: RegimeKind,
        measurement: Optional[MeasurementModel],
        perturb: Optional[dict],
    ):
        self.s = s
        self.kind = kind
        self.m = measurement
        self.perturb = perturb or {}
        T = s.T
        self.sep = kind is RegimeKind.SEPARATION_OUTPUT_FEEDBACK
        self.D = 1 + T + 2 * (T - 1) + (T if self.sep else 0)
        self.i_x0 = 0
        self._i_w = 1
        self._i_n = 1 + T
        self._i_nf = 1 + T + (T - 1)
        self._i_v = 1 + T + 2 * (T - 1)

    def _unit(self, i: int) -> np.ndarray:
        e = np.zeros(self.D)
        e[i] = 1.0
        return e

    def w(self, t):  # process-noise basis entry
        return self._unit(self._i_w + t)

    def n(self, t):
        return math.sqrt(self.s.N[t]) * self._unit(self._i_n + t - 1)

    def nf(self, t):
        return math.sqrt(self.s.N_f[t]) * self._unit(self._i_nf + t - 1)

    def _factor(self, t: int) -> float:
        return float(self.perturb["factor"]) if self.perturb.get("t") == t else 1.0

    def run(self) -> tuple[list, list, list]:
        """Returns coefficient lists (x, y, xhat); x indexed t=1..T at [t-1],
        y indexed t=1..T-1 at [t-1]."""
        s, T = self.s, self.s.T
        if self.sep:
            return self._run_separation()

        x = math.sqrt(s.V_xx0) * self._unit(self.i_x0)
        x = s.a[0] * x + s.b[0] * self.w(0)
        xs, ys, xhats = [x], [], []
        xhat = np.zeros(self.D)
        if self.kind is RegimeKind.STATE_ESTIMATE_FEEDBACK:
            xck = x.copy()
            x_prev = x
            for t in range(1, T):
                sigma = float(np.linalg.norm(xck))
                scale = math.sqrt(s.P[t]) / sigma if sigma > 0.0 else 0.0
                z = scale * xck
                y = z + self.n(t)
                kappa = float(xck @ y) / float(y @ y)
                K = s.a[t] * kappa
                y_f = xhat + (self.nf(t) if math.isfinite(s.N_f[t]) else 0.0)
                xhat_next = s.a[t] * xhat + K * y
                x_next = s.a[t] * x + s.b[t] * self.w(t)
                xbar = (x - xhat) - xck
                sigbar2 = float(xbar @ xbar)
                den = sigbar2 + s.N_f[t]
                g = self._factor(t) * (
                    s.a[t] * sigbar2 / den if 0.0 < den < math.inf else 0.0
                )
                c1 = s.a[t] * s.N[t] / (s.P[t] + s.N[t])
                xck = c1 * xck + (x_next - s.a[t] * x) + g * (x - xck - y_f)
                ys.append(y)
                xhats.append(xhat)
                xhat, x, x_prev = xhat_next, x_next, x
                xs.append(x)
            xhats.append(xhat)
            return xs, ys, xhats

        strk = np.zeros(self.D)  # transmitter's tracker of the decoder state
        for t in range(1, T):
            xck = x - strk
            sigma = float(np.linalg.norm(xck))
            scale = math.sqrt(s.P[t]) / sigma if sigma > 0.0 else 0.0
            z = scale * xck
            y = z + self.n(t)
            kappa = float(xck @ y) / float(y @ y)
            K = s.a[t] * kappa
            if math.isinf(s.N_f[t]):
                nhat = np.zeros(self.D)
            else:
                rho = s.N[t] / (s.N[t] + s.N_f[t])
                nhat = rho * (self.n(t) + (self.nf(t) if s.N_f[t] > 0.0 else 0.0))
            K_enc = self._factor(t) * K
            strk = s.a[t] * strk + K_enc * (z + nhat)
            ys.append(y)
            xhats.append(xhat)
            xhat = s.a[t] * xhat + K * y
            x = s.a[t] * x + s.b[t] * self.w(t)
            xs.append(x)
        xhats.append(xhat)
        return xs, ys, xhats

    def _run_separation(self):
        s, T, m = self.s, self.s.T, self.m
        chol = []
        for t in range(T):
            l11 = math.sqrt(m.V_ww[t])
            l21 = m.V_wv[t] / l11 if l11 > 0.0 else 0.0
            l22 = math.sqrt(max(m.V_vv[t] - l21 * l21, 0.0))
            chol.append((l11, l21, l22))

        def wv(t):
            l11, l21, l22 = chol[t]
            e1 = self._unit(self._i_w + t)
            e2 = self._unit(self._i_v + t)
            return l11 * e1, l21 * e1 + l22 * e2

        x = math.sqrt(s.V_xx0) * self._unit(self.i_x0)
        # pre-filter warmup on gamma(0)
        _, v0 = wv(0)
        gamma = m.c * x + m.d * v0
        xi = x
        innov = gamma
        L = float(xi @ innov) / float(innov @ innov)
        xb_filt = L * innov
        xb_pred = s.a[0] * xb_filt
        w0, _ = wv(0)
        x = s.a[0] * x + s.b[0] * w0

        xs, ys, xhats = [x], [], []
        xhat = np.zeros(self.D)
        strk = np.zeros(self.D)
        for t in range(1, T):
            w_t, v_t = wv(t)
            gamma = m.c * x + m.d * v_t
            xi = x - xb_pred
            innov = gamma - m.c * xb_pred
            denom = float(innov @ innov)
            if denom <= 0.0:
                raise ValidationError(f"degenerate innovation variance at step {t}")
            L = float(xi @ innov) / denom
            xb_filt = xb_pred + L * innov
            xck = xb_filt - strk
            sigma = float(np.linalg.norm(xck))
            scale = math.sqrt(s.P[t]) / sigma if sigma > 0.0 else 0.0
            z = scale * xck
            y = z + self.n(t)
            kappa = float(xck @ y) / float(y @ y)
            K = s.a[t] * kappa
            if math.isinf(s.N_f[t]):
                nhat = np.zeros(self.D)
            else:
                rho = s.N[t] / (s.N[t] + s.N_f[t])
                nhat = rho * (self.n(t) + (self.nf(t) if s.N_f[t] > 0.0 else 0.0))
            K_enc = self._factor(t) * K
            strk = s.a[t] * strk + K_enc * (z + nhat)
            xb_pred = s.a[t] * xb_filt
            ys.append(y)
            xhats.append(xhat)
            xhat = s.a[t] * xhat + K * y
            x = s.a[t] * x + s.b[t] * w_t
            xs.append(x)
        xhats.append(xhat)
        return xs, ys, xhats


def exact_conditioning_oracle(
    s: SystemSchedule,
    kind: RegimeKind,
    measurement: Optional[MeasurementModel] = None,
    perturb: Optional[dict] = None,
    pinv_rcond: float = 1e-12,
) -> OracleResult:
    """Exact error variances of the closed loop for small horizons (T <= 12).

    ``perturb={"t": t0, "factor": f}`` scales one internal encoder gain (the
    decoder-tracking gain, or the residual-correction gain in the
    state-estimate regime) at step t0; the output scaling renormalizes to
    the true transmit variance, so the perturbed encoder still meets the
    per-symbol power constraint exactly.
    """
    s = check_regime_consistency(validate_schedule(s), kind)
    if s.T > ORACLE_HORIZON_MAX:
        raise ValidationError(
            f"oracle horizon T={s.T} exceeds the supported maximum {ORACLE_HORIZON_MAX}"
        )
    if kind is RegimeKind.SEPARATION_OUTPUT_FEEDBACK:
        if measurement is None:
            raise ValidationError("separation regime requires a measurement model")
        measurement = validate_measurement(measurement, s.T)

    xs, ys, xhats = _Unroller(s, kind, measurement, perturb).run()
    T = s.T
    mse = np.empty(T)
    scheme = np.empty(T)
    open_loop = np.empty(T)
    cond = []
    for t in range(1, T + 1):
        xc = xs[t - 1]
        open_loop[t - 1] = float(xc @ xc)
        err = xc - xhats[t - 1]
        scheme[t - 1] = float(err @ err)
        past = ys[: t - 1]
        if not past:
            mse[t - 1] = open_loop[t - 1]
            cond.append(np.zeros((0, 0)))
            continue
        Y = np.vstack(past)
        Syy = Y @ Y.T
        c = Y @ xc
        mse[t - 1] = open_loop[t - 1] - float(c @ np.linalg.pinv(Syy, rcond=pinv_rcond) @ c)
        cond.append(Syy)
    return OracleResult(
        kind=kind, mse=mse, scheme_mse=scheme, open_loop_var=open_loop, cond_cov=cond
    )
