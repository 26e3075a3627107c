import numpy as np
import pytest

from statecast import MeasurementModel, SystemSchedule


@pytest.fixture
def rng():
    return np.random.default_rng(20240817)


def random_schedule(rng, T=None, nf="finite", stable=True, time_varying=False):
    """A valid random schedule; |a| <= 0.95 when stable."""
    if T is None:
        T = int(rng.integers(2, 9))
    size = T if time_varying else None

    def draw(lo, hi):
        return rng.uniform(lo, hi, size) if time_varying else float(rng.uniform(lo, hi))

    amax = 0.95 if stable else 1.6
    a = draw(-amax, amax)
    if nf == "finite":
        N_f = draw(0.05, 2.0)
    elif nf == "zero":
        N_f = 0.0
    elif nf == "inf":
        N_f = np.inf
    else:
        N_f = nf
    return SystemSchedule(
        T=T,
        a=a,
        b=draw(0.2, 2.0),
        P=draw(0.3, 3.0),
        N=draw(0.3, 3.0),
        N_f=N_f,
        V_xx0=float(rng.uniform(0.0, 2.0)),
    )


def random_measurement(rng, T, correlated=False):
    V_ww = rng.uniform(0.3, 2.0, T + 1)
    V_vv = rng.uniform(0.3, 2.0, T + 1)
    if correlated:
        V_wv = rng.uniform(-0.9, 0.9, T + 1) * np.sqrt(V_ww * V_vv)
    else:
        V_wv = np.zeros(T + 1)
    return MeasurementModel(
        c=float(rng.uniform(0.3, 2.0)),
        d=float(rng.uniform(0.2, 2.0)),
        V_ww=V_ww,
        V_wv=V_wv,
        V_vv=V_vv,
    )
