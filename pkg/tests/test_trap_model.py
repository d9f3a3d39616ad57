import math

import pytest
from numpy.testing import assert_allclose
from scipy import constants

from paulcrystal.trap_model import (CA40_MASS, PhysicalTrap, TrapConfig, UnstableTrapError,
                                    from_physical, length_scale, secular_frequency_hz,
                                    trap_from_frequencies)

from conftest import RF_IMAGING, RF_SPECTROSCOPY


def physical(omega=RF_IMAGING, u_rf=None, u_dc=None, q=0.2, a=-0.01):
    scale = constants.e / (CA40_MASS * omega**2)
    g_rf = 2.5e-7
    g_dc = 1e-6
    if u_rf is None:
        u_rf = q * g_rf / (2 * scale)
    if u_dc is None:
        u_dc = a * -2 * g_dc / (4 * scale)
    return PhysicalTrap(omega_rf=omega, u_rf=u_rf, u_dc=u_dc,
                        gamma=(-2 * g_dc, -2 * g_dc, g_dc),
                        gamma_prime=(-g_rf, g_rf, math.inf), ion_mass=CA40_MASS)


def test_laplace_relations():
    cfg = TrapConfig(omega_rf=RF_SPECTROSCOPY, q_y=0.2, a_y=-0.012, a_z=0.005)
    assert cfg.q_x == -0.2 and cfg.q_z == 0
    assert cfg.a_x == pytest.approx(0.007)
    assert_allclose(cfg.a.sum(), 0, atol=1e-18)


def test_zero_fields_rejected():
    with pytest.raises(UnstableTrapError):
        TrapConfig(omega_rf=RF_IMAGING, q_y=0.0, a_y=0.0, a_z=0.0)
    with pytest.raises(UnstableTrapError):
        from_physical(physical(u_rf=0.0, u_dc=0.0))


def test_from_physical_round_trip():
    cfg = from_physical(physical(q=0.2, a=-0.01))
    assert cfg.q_y == pytest.approx(0.2)
    assert cfg.a_y == pytest.approx(-0.01)
    assert cfg.a_z == pytest.approx(0.02)


def test_physical_homogeneity():
    p = physical()
    doubled = PhysicalTrap(omega_rf=2 * p.omega_rf, u_rf=4 * p.u_rf, u_dc=4 * p.u_dc,
                           gamma=p.gamma, gamma_prime=p.gamma_prime, ion_mass=p.ion_mass)
    a1, q1 = p.mathieu_parameters()
    a2, q2 = doubled.mathieu_parameters()
    assert_allclose(a1, a2, rtol=1e-14)
    assert_allclose(q1, q2, rtol=1e-14)


def test_laplace_violation_rejected():
    p = physical()
    bad = PhysicalTrap(omega_rf=p.omega_rf, u_rf=p.u_rf, u_dc=p.u_dc,
                       gamma=(1e-6, 1e-6, 1e-6), gamma_prime=p.gamma_prime,
                       ion_mass=p.ion_mass)
    with pytest.raises(ValueError):
        from_physical(bad)


def test_harmonic_secular_frequency():
    # a = 0.01 on a q = 0 axis gives beta = 0.1, i.e. 0.05 Omega/2pi
    cfg = TrapConfig(omega_rf=RF_SPECTROSCOPY, q_y=0.3, a_y=-0.02, a_z=0.01)
    assert secular_frequency_hz(cfg, 2) == pytest.approx(0.05 * RF_SPECTROSCOPY / (2 * math.pi),
                                                         rel=1e-10)


def test_frequency_vanishes_with_q():
    freqs = [secular_frequency_hz(TrapConfig(omega_rf=RF_SPECTROSCOPY, q_y=q, a_y=0.0,
                                             a_z=0.0005 * q * q), 1)
             for q in (0.1, 0.01, 0.001)]
    assert freqs[0] > freqs[1] > freqs[2]
    assert freqs[2] / freqs[0] < 0.02


def test_imaging_trap_frequencies(imaging_trap):
    f = imaging_trap.beta_to_hz(imaging_trap.betas)
    assert_allclose(f, [1000e3, 316e3, 111e3], rtol=1e-10)
    ax, ay = (f[2] / f[0]) ** 2, (f[2] / f[1]) ** 2
    assert ay == pytest.approx((111 / 316) ** 2, rel=1e-9)
    assert ax < ay


def test_spectroscopy_trap(spectroscopy_trap):
    f = spectroscopy_trap.beta_to_hz(spectroscopy_trap.betas)
    assert_allclose(f, [2940e3, 1695e3, 1238e3], rtol=1e-10)
    assert spectroscopy_trap.q_y == pytest.approx(0.2046, abs=2e-4)


def test_unreachable_frequencies():
    with pytest.raises(UnstableTrapError):
        trap_from_frequencies(RF_SPECTROSCOPY, 2940e3, 1695e3, 2e7)


def test_length_scale():
    ell = length_scale(RF_IMAGING, CA40_MASS)
    assert ell == pytest.approx(1.18e-6, rel=0.01)
