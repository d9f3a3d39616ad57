import math

import pytest

from paulcrystal.cli import bundled_dataset
from paulcrystal.fitting import fit, load_measurements
from paulcrystal.trap_model import trap_from_frequencies

RF_SPECTROSCOPY = 2 * math.pi * 35.07e6
RF_IMAGING = 2 * math.pi * 14.62e6


@pytest.fixture(scope="session")
def spectroscopy_trap():
    """Trap reproducing the measured c.m. frequencies (2940, 1695, 1238) kHz."""
    return trap_from_frequencies(RF_SPECTROSCOPY, 2940e3, 1695e3, 1238e3)


@pytest.fixture(scope="session")
def imaging_trap():
    # radial x frequency is not quoted; 1 MHz keeps the crystals planar in yz
    return trap_from_frequencies(RF_IMAGING, 1000e3, 316e3, 111e3)


@pytest.fixture(scope="session")
def measurements():
    return load_measurements(bundled_dataset())


@pytest.fixture(scope="session")
def flt_fit(measurements):
    return fit(measurements, RF_SPECTROSCOPY, model="flt")


@pytest.fixture(scope="session")
def ppt_fit(measurements):
    return fit(measurements, RF_SPECTROSCOPY, model="ppt")
