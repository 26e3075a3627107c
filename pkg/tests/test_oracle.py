"""Exact joint-Gaussian conditioning oracle.

The frozen expectations below were derived by hand from the closed-loop
signal algebra (3 steps, a=1, b=0, P=N=1, V_xx0=1) and come out as exact
rationals; they pin both error series and document that the realized
one-tap decoder is the conditional mean only under noiseless feedback.
"""

import math

import numpy as np
import pytest

from statecast import (
    MeasurementModel,
    RegimeKind,
    SystemSchedule,
    ValidationError,
    exact_conditioning_oracle,
    predict_noiseless_fb,
    predict_output_fb,
    predict_separation,
    predict_state_estimate_fb,
)

from conftest import random_measurement, random_schedule


def test_horizon_guard():
    s = SystemSchedule(T=13, a=0.5, b=1.0, P=1.0, N=1.0, N_f=0.1, V_xx0=1.0)
    with pytest.raises(ValidationError, match="horizon"):
        exact_conditioning_oracle(s, RegimeKind.OUTPUT_FEEDBACK)


def test_first_step_is_open_loop():
    s = SystemSchedule(T=1, a=0.7, b=1.3, P=1.0, N=1.0, N_f=0.1, V_xx0=0.9)
    r = exact_conditioning_oracle(s, RegimeKind.OUTPUT_FEEDBACK)
    expect = 0.7**2 * 0.9 + 1.3**2
    assert r.mse[0] == pytest.approx(expect, rel=1e-15)
    assert r.scheme_mse[0] == pytest.approx(expect, rel=1e-15)


def test_hand_case_no_feedback():
    # scheme error 3/8 at t=3; jointly re-weighting both channel outputs
    # (equal-gain combining of two looks at x0) reaches 1/3
    s = SystemSchedule(T=3, a=1.0, b=0.0, P=1.0, N=1.0, N_f=math.inf, V_xx0=1.0)
    r = exact_conditioning_oracle(s, RegimeKind.NO_FEEDBACK)
    assert r.scheme_mse == pytest.approx([1.0, 0.5, 3.0 / 8.0], abs=1e-14)
    assert r.mse == pytest.approx([1.0, 0.5, 1.0 / 3.0], abs=1e-14)
    assert np.array_equal(
        r.scheme_mse, predict_output_fb(s).mse
    )


def test_hand_case_noisy_feedback():
    s = SystemSchedule(T=3, a=1.0, b=0.0, P=1.0, N=1.0, N_f=1.0, V_xx0=1.0)
    r = exact_conditioning_oracle(s, RegimeKind.OUTPUT_FEEDBACK)
    assert r.scheme_mse == pytest.approx([1.0, 0.5, 5.0 / 16.0], abs=1e-14)
    assert r.mse == pytest.approx([1.0, 0.5, 7.0 / 23.0], abs=1e-14)


def test_conditional_mean_never_worse_and_below_open_loop():
    for nf in (0.0, 0.3, math.inf):
        s = SystemSchedule(T=8, a=0.9, b=1.0, P=1.0, N=1.0, N_f=nf, V_xx0=1.0)
        r = exact_conditioning_oracle(s, RegimeKind.OUTPUT_FEEDBACK)
        assert np.all(r.mse <= r.scheme_mse + 1e-12)
        assert np.all(r.mse <= r.open_loop_var + 1e-12)


def _oracle_case(rng, kind):
    meas = None
    if kind is RegimeKind.NOISELESS_FEEDBACK:
        s = random_schedule(rng, T=6, nf="zero")
        pred = predict_noiseless_fb(s)
    elif kind is RegimeKind.NO_FEEDBACK:
        s = random_schedule(rng, T=6, nf="inf")
        pred = predict_output_fb(s)
    elif kind is RegimeKind.OUTPUT_FEEDBACK:
        s = random_schedule(rng, T=6, nf="finite")
        pred = predict_output_fb(s)
    elif kind is RegimeKind.STATE_ESTIMATE_FEEDBACK:
        s = random_schedule(rng, T=6, nf="finite")
        pred = predict_state_estimate_fb(s)
    else:
        s = random_schedule(rng, T=6, nf="finite")
        meas = random_measurement(rng, s.T, correlated=False)
        pred = predict_separation(s, meas)
    return s, meas, pred


@pytest.mark.parametrize("kind", list(RegimeKind))
def test_scheme_mse_validates_recursions_20_draws(rng, kind):
    # fully independent computational path (coefficient algebra, no variance
    # recursion) reproduces the predicted mse in every regime
    for _ in range(20):
        s, meas, pred = _oracle_case(rng, kind)
        r = exact_conditioning_oracle(s, kind, measurement=meas)
        assert np.max(np.abs(r.scheme_mse - pred.mse)) < 1e-8


def test_conditional_mean_equals_prediction_only_for_noiseless(rng):
    for _ in range(10):
        s, meas, pred = _oracle_case(rng, RegimeKind.NOISELESS_FEEDBACK)
        r = exact_conditioning_oracle(s, RegimeKind.NOISELESS_FEEDBACK)
        assert np.max(np.abs(r.mse - pred.mse)) < 1e-9
    # under noisy feedback the transmissions correlate with past outputs, so
    # joint conditioning strictly improves on the recursive decoder
    s = SystemSchedule(T=6, a=0.9, b=1.0, P=1.0, N=1.0, N_f=0.1, V_xx0=1.0)
    r = exact_conditioning_oracle(s, RegimeKind.OUTPUT_FEEDBACK)
    gap = np.max(predict_output_fb(s).mse - r.mse)
    assert gap > 1e-4


def test_separation_with_correlated_noise_breaks_the_additive_split():
    # the pre-filter gain ignores the w-v cross term in its time update, so
    # the prediction is exact only for V_wv = 0 (documented caveat)
    s = SystemSchedule(T=6, a=0.8, b=1.0, P=1.0, N=1.0, N_f=0.2, V_xx0=1.0)
    m = MeasurementModel(c=1.0, d=1.0, V_ww=1.0, V_wv=0.6, V_vv=1.0)
    r = exact_conditioning_oracle(s, RegimeKind.SEPARATION_OUTPUT_FEEDBACK, measurement=m)
    assert np.max(np.abs(r.scheme_mse - predict_separation(s, m).mse)) > 1e-3


def test_transmit_power_is_exact_in_the_unrolled_loop(rng):
    # the coefficient norm of z equals sqrt(P) at every transmitting step
    from statecast.simulate import _Unroller
    from statecast import validate_schedule

    for kind in (RegimeKind.OUTPUT_FEEDBACK, RegimeKind.STATE_ESTIMATE_FEEDBACK):
        s = validate_schedule(random_schedule(rng, T=6, nf="finite"))
        un = _Unroller(s, kind, None, None)
        xs, ys, xhats = un.run()
        for t in range(1, s.T):
            y = ys[t - 1]
            n_var = s.N[t]
            z_power = float(y @ y) - n_var
            assert z_power == pytest.approx(s.P[t], rel=1e-10)


def test_perturbed_encoder_keeps_exact_power(rng):
    from statecast.simulate import _Unroller
    from statecast import validate_schedule

    s = validate_schedule(random_schedule(rng, T=6, nf="zero"))
    un = _Unroller(s, RegimeKind.NOISELESS_FEEDBACK, None, {"t": 2, "factor": 1.001})
    xs, ys, _ = un.run()
    for t in range(1, s.T):
        z_power = float(ys[t - 1] @ ys[t - 1]) - s.N[t]
        assert z_power == pytest.approx(s.P[t], rel=1e-10)


def test_perturbations_never_improve_noiseless_scheme(rng):
    # the noiseless-feedback filters are optimal among all power-feasible
    # causal encoders: internal-gain perturbations cannot reduce the
    # conditional-mean error
    for _ in range(10):
        s = random_schedule(rng, T=5, nf="zero")
        base = exact_conditioning_oracle(s, RegimeKind.NOISELESS_FEEDBACK).mse.mean()
        for t0 in (1, 2, 3):
            for factor in (1.001, 0.999):
                pert = exact_conditioning_oracle(
                    s,
                    RegimeKind.NOISELESS_FEEDBACK,
                    perturb={"t": t0, "factor": factor},
                ).mse.mean()
                assert pert >= base * (1.0 - 1e-6)


def test_perturbation_actually_changes_the_loop():
    s = SystemSchedule(T=5, a=0.8, b=1.0, P=1.0, N=1.0, N_f=0.0, V_xx0=1.0)
    base = exact_conditioning_oracle(s, RegimeKind.NOISELESS_FEEDBACK).mse
    pert = exact_conditioning_oracle(
        s, RegimeKind.NOISELESS_FEEDBACK, perturb={"t": 1, "factor": 1.2}
    ).mse
    assert np.max(np.abs(base - pert)) > 1e-6


def test_degenerate_transmissions_do_not_crash():
    s = SystemSchedule(T=4, a=0.9, b=1e-12, P=1.0, N=1.0, N_f=0.1, V_xx0=0.0)
    r = exact_conditioning_oracle(s, RegimeKind.OUTPUT_FEEDBACK)
    assert np.all(r.mse <= 1e-12)
