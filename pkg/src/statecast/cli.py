"""Experiment runner: load a keyed config, run an analysis, emit CSV/JSON.

Config format (INI sections; scalars or comma-separated per-step lists)::

    [schedule]
    T = 50
    a = 0.5          ; scalar or comma list of length T
    b = 1.0
    P = 1.0
    N = 1.0
    N_f = 0          ; 0 = noiseless feedback, inf = no feedback
    V_xx0 = 1.0

    [measurement]    ; required only for the separation regime
    c = 1.0
    d = 0.0
    V_ww = 1.0       ; scalar or comma list of length T+1
    V_wv = 0.0
    V_vv = 0.0

    [experiment]
    mode = predict   ; predict | simulate | stationarity | oracle
    regime = noiseless_feedback
    output = out.csv
    trials = 100000  ; simulate mode
    seed = 12345     ; simulate mode
    form = proof     ; optional: proof | stated residual recursion

    [sweep]          ; optional; used by the `compare` command
    N_f = 0, 0.1, 1, inf

Flags override file keys (``--set section.key=value``).  Exit codes:
0 success, 1 I/O failure, 2 validation error, 3 stationarity mode reported
an unbounded system or a non-converged solver.

The environment variable ``STATECAST_MAX_THREADS``, when set, is exported
to the usual BLAS/OpenMP thread caps at startup (best effort; the hot loops
here are elementwise and single-threaded regardless).
"""

from __future__ import annotations

import argparse
import configparser
import json
import os
import sys
from dataclasses import dataclass
from typing import Optional

import numpy as np

from .model import (
    MeasurementModel,
    SystemSchedule,
    ValidationError,
    validate_schedule,
)
from .schemes import RegimeKind, check_regime_consistency
from .simulate import (
    CSV_HEADER,
    McConfig,
    ORACLE_HORIZON_MAX,
    exact_conditioning_oracle,
    format_float,
    monte_carlo,
    summary_csv,
)
from . import recursions, stationarity

__all__ = ["ExperimentSpec", "parse_config", "run", "compare", "main"]

EXIT_OK = 0
EXIT_IO = 1
EXIT_VALIDATION = 2
EXIT_NOT_STATIONARY = 3

MODES = ("predict", "simulate", "stationarity", "oracle")

_SCHEDULE_KEYS = ("t", "a", "b", "p", "n", "n_f", "v_xx0")
_MEASUREMENT_KEYS = ("c", "d", "v_ww", "v_wv", "v_vv")
_EXPERIMENT_KEYS = ("mode", "regime", "output", "trials", "seed", "form")
_SWEEP_KEYS = ("n_f",)


@dataclass
class ExperimentSpec:
    """Validated experiment manifest."""

    schedule: SystemSchedule
    mode: str
    regime: RegimeKind
    output: str
    measurement: Optional[MeasurementModel] = None
    trials: int = 0
    seed: int = 0
    form: str = "proof"
    sweep_N_f: Optional[list[float]] = None


def _floats(text: str) -> object:
    parts = [p.strip() for p in text.split(",") if p.strip() != ""]
    if not parts:
        raise ValidationError(f"empty numeric value {text!r}")
    vals = [float(p) for p in parts]
    return vals[0] if len(vals) == 1 else np.array(vals)


def _require(section, key: str, section_name: str) -> str:
    if key not in section:
        raise ValidationError(f"missing key '{key}' in [{section_name}]")
    return section[key]


def parse_config(path: str, overrides: Optional[dict] = None) -> ExperimentSpec:
    """Parse and validate a config file, applying ``{section.key: value}`` overrides."""
    cp = configparser.ConfigParser(inline_comment_prefixes=(";", "#"))
    try:
        with open(path) as fh:
            cp.read_file(fh)
    except OSError:
        raise
    except configparser.Error as exc:
        raise ValidationError(f"malformed config: {exc}") from exc

    for sec_key, value in (overrides or {}).items():
        if "." not in sec_key:
            raise ValidationError(f"override {sec_key!r} must look like section.key")
        sec, key = sec_key.split(".", 1)
        if not cp.has_section(sec):
            cp.add_section(sec)
        cp.set(sec, key, value)

    known = {"schedule", "measurement", "experiment", "sweep"}
    for sec in cp.sections():
        if sec not in known:
            raise ValidationError(f"unknown config section [{sec}]")
    for sec, keys in (
        ("schedule", _SCHEDULE_KEYS),
        ("measurement", _MEASUREMENT_KEYS),
        ("experiment", _EXPERIMENT_KEYS),
        ("sweep", _SWEEP_KEYS),
    ):
        if cp.has_section(sec):
            for key in cp[sec]:
                if key not in keys:
                    raise ValidationError(f"unknown key '{key}' in [{sec}]")

    if not cp.has_section("schedule"):
        raise ValidationError("missing [schedule] section")
    if not cp.has_section("experiment"):
        raise ValidationError("missing [experiment] section")
    sched_sec = cp["schedule"]
    exp = cp["experiment"]

    T_raw = _require(sched_sec, "t", "schedule")
    try:
        T = int(T_raw)
    except ValueError:
        raise ValidationError(f"T must be an integer, got {T_raw!r}")
    schedule = validate_schedule(
        SystemSchedule(
            T=T,
            a=_floats(_require(sched_sec, "a", "schedule")),
            b=_floats(_require(sched_sec, "b", "schedule")),
            P=_floats(_require(sched_sec, "p", "schedule")),
            N=_floats(_require(sched_sec, "n", "schedule")),
            N_f=_floats(_require(sched_sec, "n_f", "schedule")),
            V_xx0=float(_require(sched_sec, "v_xx0", "schedule")),
        )
    )

    measurement = None
    if cp.has_section("measurement"):
        msec = cp["measurement"]
        measurement = MeasurementModel(
            c=float(_require(msec, "c", "measurement")),
            d=float(_require(msec, "d", "measurement")),
            V_ww=_floats(msec.get("v_ww", "1.0")),
            V_wv=_floats(msec.get("v_wv", "0.0")),
            V_vv=_floats(msec.get("v_vv", "0.0")),
        )

    mode = _require(exp, "mode", "experiment").strip().lower()
    if mode not in MODES:
        raise ValidationError(f"mode must be one of {MODES}, got {mode!r}")
    regime_name = _require(exp, "regime", "experiment").strip().lower()
    try:
        regime = RegimeKind(regime_name)
    except ValueError:
        names = ", ".join(k.value for k in RegimeKind)
        raise ValidationError(f"regime must be one of: {names}; got {regime_name!r}")
    output = _require(exp, "output", "experiment").strip()
    form = exp.get("form", "proof").strip().lower()
    if form not in recursions.SIGBAR_FORMS:
        raise ValidationError(f"form must be one of {recursions.SIGBAR_FORMS}")

    trials = seed = 0
    if mode == "simulate":
        trials = int(_require(exp, "trials", "experiment"))
        seed = int(_require(exp, "seed", "experiment"))
        if trials < 1:
            raise ValidationError("trials must be >= 1")

    if regime is RegimeKind.SEPARATION_OUTPUT_FEEDBACK and measurement is None:
        raise ValidationError("separation regime requires a [measurement] section")

    sweep = None
    if cp.has_section("sweep"):
        raw = cp["sweep"].get("n_f", "")
        vals = [p.strip() for p in raw.split(",") if p.strip() != ""]
        sweep = [float(v) for v in vals]

    return ExperimentSpec(
        schedule=schedule,
        mode=mode,
        regime=regime,
        output=output,
        measurement=measurement,
        trials=trials,
        seed=seed,
        form=form,
        sweep_N_f=sweep,
    )


def _prediction(spec: ExperimentSpec):
    s, regime = spec.schedule, spec.regime
    check_regime_consistency(s, regime)
    if regime is RegimeKind.NOISELESS_FEEDBACK:
        return recursions.predict_noiseless_fb(s)
    if regime in (RegimeKind.OUTPUT_FEEDBACK, RegimeKind.NO_FEEDBACK):
        return recursions.predict_output_fb(s)
    if regime is RegimeKind.STATE_ESTIMATE_FEEDBACK:
        return recursions.predict_state_estimate_fb(s, form=spec.form)
    return recursions.predict_separation(s, spec.measurement)


def _predict_csv(pred) -> str:
    lines = ["t,pred_sigma2,pred_vbar,pred_mse"]
    for i in range(pred.T):
        lines.append(
            ",".join(
                [str(i + 1)]
                + [format_float(v) for v in (pred.sigma2[i], pred.vbar[i], pred.mse[i])]
            )
        )
    return "\n".join(lines) + "\n"


def _oracle_csv(spec: ExperimentSpec) -> str:
    pred = _prediction(spec)
    res = exact_conditioning_oracle(
        spec.schedule, spec.regime, measurement=spec.measurement
    )
    lines = ["t,oracle_mse,scheme_mse,pred_mse"]
    for i in range(pred.T):
        lines.append(
            ",".join(
                [str(i + 1)]
                + [
                    format_float(v)
                    for v in (res.mse[i], res.scheme_mse[i], pred.mse[i])
                ]
            )
        )
    return "\n".join(lines) + "\n"


def _stationarity_report(spec: ExperimentSpec):
    s, regime = spec.schedule, spec.regime
    check_regime_consistency(s, regime)
    if regime is RegimeKind.STATE_ESTIMATE_FEEDBACK:
        return stationarity.solve_state_estimate_fp(s, form=spec.form)
    if regime is RegimeKind.NOISELESS_FEEDBACK:
        return stationarity.check_noiseless(s)
    if regime in (RegimeKind.OUTPUT_FEEDBACK, RegimeKind.NO_FEEDBACK):
        return stationarity.check_output_fb(s)
    raise ValidationError(f"stationarity mode does not support regime {regime.value}")


def _write(path: str, text: str) -> None:
    with open(path, "w") as fh:
        fh.write(text)


def run(spec: ExperimentSpec) -> int:
    """Run the configured mode, write its artifact, return the exit code."""
    if spec.mode == "predict":
        _write(spec.output, _predict_csv(_prediction(spec)))
        return EXIT_OK
    if spec.mode == "simulate":
        summary = monte_carlo(
            spec.schedule,
            spec.regime,
            McConfig(trials=spec.trials, seed=spec.seed),
            measurement=spec.measurement,
            form=spec.form,
        )
        _write(spec.output, summary_csv(summary))
        return EXIT_OK
    if spec.mode == "oracle":
        _write(spec.output, _oracle_csv(spec))
        return EXIT_OK
    report = _stationarity_report(spec)
    _write(
        spec.output,
        json.dumps(report.to_dict(), indent=2, sort_keys=True) + "\n",
    )
    return EXIT_OK if report.bounded else EXIT_NOT_STATIONARY


def _sweep_csv(spec: ExperimentSpec) -> str:
    if not spec.sweep_N_f:
        raise ValidationError("empty N_f sweep")
    lines = ["N_f,bounded,sigma2,sigbar2,mse"]
    base = spec.schedule
    for nf in spec.sweep_N_f:
        sched = validate_schedule(
            SystemSchedule(
                T=base.T, a=base.a, b=base.b, P=base.P, N=base.N, N_f=nf,
                V_xx0=base.V_xx0,
            )
        )
        if spec.regime is RegimeKind.STATE_ESTIMATE_FEEDBACK:
            rep = stationarity.solve_state_estimate_fp(sched, form=spec.form)
        else:
            rep = stationarity.check_output_fb(sched)
        if rep.fixed_point is None:
            cells = [format_float(nf), "false", "nan", "nan", "nan"]
        else:
            cells = [
                format_float(nf),
                "true",
                format_float(rep.fixed_point[0]),
                format_float(rep.fixed_point[1]),
                format_float(rep.mse),
            ]
        lines.append(",".join(cells))
    return "\n".join(lines) + "\n"


def compare(spec: ExperimentSpec) -> int:
    """Join prediction, Monte Carlo and (for T <= 12) oracle columns.

    With a [sweep] section, emits the stationary-mse sweep table instead.
    Appends '#'-prefixed max-deviation summary lines.
    """
    if spec.sweep_N_f is not None:
        _write(spec.output, _sweep_csv(spec))
        return EXIT_OK
    if spec.mode != "simulate":
        raise ValidationError("compare requires mode = simulate")
    summary = monte_carlo(
        spec.schedule,
        spec.regime,
        McConfig(trials=spec.trials, seed=spec.seed),
        measurement=spec.measurement,
        form=spec.form,
    )
    oracle = None
    if spec.schedule.T <= ORACLE_HORIZON_MAX:
        oracle = exact_conditioning_oracle(
            spec.schedule, spec.regime, measurement=spec.measurement
        )
    header = CSV_HEADER + (",oracle_mse,scheme_mse" if oracle is not None else "")
    lines = [header]
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
        if oracle is not None:
            cells += [format_float(oracle.mse[i]), format_float(oracle.scheme_mse[i])]
        lines.append(",".join(cells))
    lines.append(
        "# max_abs_delta_mse = %s, max_se_ratio = %s"
        % (
            format_float(float(np.max(np.abs(summary.delta_mse)))),
            format_float(summary.max_se_ratio()),
        )
    )
    if oracle is not None:
        lines.append(
            "# max_abs_scheme_vs_pred = %s"
            % format_float(float(np.max(np.abs(oracle.scheme_mse - p.mse))))
        )
    _write(spec.output, "\n".join(lines) + "\n")
    return EXIT_OK


def _apply_thread_cap() -> None:
    cap = os.environ.get("STATECAST_MAX_THREADS")
    if cap:
        for var in ("OMP_NUM_THREADS", "OPENBLAS_NUM_THREADS", "MKL_NUM_THREADS"):
            os.environ.setdefault(var, cap)


def main(argv: Optional[list[str]] = None) -> int:
    _apply_thread_cap()
    parser = argparse.ArgumentParser(
        prog="statecast",
        description="Run channel-communication experiments from a config file.",
    )
    sub = parser.add_subparsers(dest="command", required=True)
    for name, help_text in (
        ("run", "run the configured mode and write its artifact"),
        ("compare", "join prediction, Monte Carlo and oracle columns"),
    ):
        p = sub.add_parser(name, help=help_text)
        p.add_argument("config", help="path to the experiment config file")
        p.add_argument(
            "--set",
            action="append",
            default=[],
            metavar="SECTION.KEY=VALUE",
            help="override a config key (repeatable)",
        )
        p.add_argument("--output", help="override [experiment] output")
        p.add_argument("--seed", type=int, help="override [experiment] seed")
        p.add_argument("--trials", type=int, help="override [experiment] trials")
    args = parser.parse_args(argv)

    overrides = {}
    for item in args.set:
        if "=" not in item:
            print(f"error: --set expects SECTION.KEY=VALUE, got {item!r}", file=sys.stderr)
            return EXIT_VALIDATION
        key, value = item.split("=", 1)
        overrides[key.strip()] = value.strip()
    if args.output is not None:
        overrides["experiment.output"] = args.output
    if args.seed is not None:
        overrides["experiment.seed"] = str(args.seed)
    if args.trials is not None:
        overrides["experiment.trials"] = str(args.trials)

    try:
        spec = parse_config(args.config, overrides)
        return run(spec) if args.command == "run" else compare(spec)
    except ValidationError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_VALIDATION
    except OSError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_IO


if __name__ == "__main__":  # pragma: no cover
    sys.exit(main())
