import math

import numpy as np
import pytest
from scipy.integrate import quad

from paulcrystal.fitting import (FitError, ForwardModel, ForwardModelError, Measurement,
                                 chi2_sf, fit, forward_model, initial_guess)

from conftest import RF_SPECTROSCOPY

TRUTH = np.array([0.2046, 0.004985, -0.01168])


def test_chi2_sf_closed_forms():
    assert chi2_sf(0.0, 2) == 1.0
    assert chi2_sf(2 * math.log(100), 2) == pytest.approx(0.01, rel=1e-14)


@pytest.mark.parametrize("x", [0.5, 3.0, 9.49, 20.0])
def test_chi2_sf_quadrature(x):
    density = lambda t: t * math.exp(-t / 2) / 4  # k = 4
    tail, _ = quad(density, x, x + 400, epsabs=1e-13, epsrel=1e-12, limit=200)
    assert chi2_sf(x, 4) == pytest.approx(tail, abs=1e-10)


def test_chi2_sf_rejects_bad_input():
    with pytest.raises(ValueError):
        chi2_sf(-1.0, 2)
    with pytest.raises(ValueError):
        chi2_sf(1.0, 0)


def test_bundled_data(measurements):
    f = {m.tag: (m.freq_hz / 1e3, m.sigma_hz / 1e3) for m in measurements}
    assert f == {"zz_b": (714, 2), "zz_a": (1078, 2), "cm_z": (1238, 2),
                 "cm_y": (1695, 3), "cm_x": (2940, 10)}


def test_measurement_validation():
    with pytest.raises(ValueError):
        Measurement("cm_z", 1e6, 0.0)
    with pytest.raises(ValueError):
        Measurement("cm_z", -1.0, 1.0)


def test_initial_guess_reproduces_cm(measurements):
    x0 = initial_guess(measurements, RF_SPECTROSCOPY)
    pred = forward_model(x0, RF_SPECTROSCOPY, model="ppt")
    for tag in ("cm_x", "cm_y", "cm_z"):
        m = next(m for m in measurements if m.tag == tag)
        assert pred[tag] == pytest.approx(m.freq_hz, rel=1e-9)


def test_cm_z_sensitivity():
    base = forward_model(TRUTH, RF_SPECTROSCOPY)
    bumped = forward_model(TRUTH * [1, 1.01, 1], RF_SPECTROSCOPY)
    assert bumped["cm_z"] / base["cm_z"] - 1 == pytest.approx(0.005, rel=0.01)


def test_forward_model_rejects_unstable_trap():
    # q_y = 0 cannot confine along x once a_x = -a_y - a_z
    with pytest.raises(ForwardModelError) as err:
        ForwardModel(RF_SPECTROSCOPY)([0.0, 0.005, -0.01])
    assert err.value.stage == "trap"


def test_flt_fit(flt_fit):
    expected = {"zz_b": 715.1, "zz_a": 1078.5, "cm_z": 1239.5, "cm_y": 1690.7}
    for tag, khz in expected.items():
        assert flt_fit.predicted[tag] / 1e3 == pytest.approx(khz, abs=0.5)
    assert flt_fit.dof == 2
    assert 0.10 <= flt_fit.p_value <= 0.40
    assert flt_fit.a_x == pytest.approx(-flt_fit.a_y - flt_fit.a_z)
    assert np.all(np.isfinite(flt_fit.param_sigma))


def test_ppt_fit_rejected(flt_fit, ppt_fit):
    assert ppt_fit.p_value < 1e-8
    assert ppt_fit.chi2 - flt_fit.chi2 > 25


def test_fit_input_checks(measurements):
    with pytest.raises(ValueError):
        fit(measurements[:3], RF_SPECTROSCOPY)
    with pytest.raises(ValueError):
        fit(measurements + measurements[:1], RF_SPECTROSCOPY)
    with pytest.raises(ValueError):
        fit(measurements, RF_SPECTROSCOPY, model="exact")


def test_missing_tag_reported(measurements):
    bogus = measurements[1:] + [Measurement("stretch", 2e6, 1e3)]
    with pytest.raises(FitError):
        fit(bogus, RF_SPECTROSCOPY, model="ppt")


@pytest.mark.slow
def test_monte_carlo_self_consistency(measurements):
    truth = forward_model(TRUTH, RF_SPECTROSCOPY, model="ppt")
    rng = np.random.default_rng(1)
    trials = 100
    inside = np.zeros(3)
    chi2 = []
    for _ in range(trials):
        data = [Measurement(m.tag, truth[m.tag] + rng.normal() * m.sigma_hz, m.sigma_hz)
                for m in measurements]
        res = fit(data, RF_SPECTROSCOPY, model="ppt")
        inside += np.abs(np.array(res.params) - TRUTH) <= 3 * res.param_sigma
        chi2.append(res.chi2)
    assert np.all(inside >= 0.97 * trials)
    # mean of chi-squared with 2 dof is 2; standard error over 100 trials is 0.2
    assert np.mean(chi2) == pytest.approx(2.0, abs=0.6)
