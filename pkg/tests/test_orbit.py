import math
from types import SimpleNamespace

import numpy as np
import pytest
from numpy.testing import assert_allclose
from scipy.integrate import solve_ivp

from paulcrystal.coulomb import coulomb_force
from paulcrystal.equilibrium import find_equilibrium
from paulcrystal.mathieu import a_for_target_beta
from paulcrystal.orbit import find_orbit, max_defect, orbit_average, orbit_state
from paulcrystal.trap_model import TrapConfig

from conftest import RF_SPECTROSCOPY


@pytest.fixture(scope="module")
def zigzag(spectroscopy_trap):
    conf = find_equilibrium(3, spectroscopy_trap)
    return conf, find_orbit(spectroscopy_trap, conf)


def fixed_beta_trap(q, by=0.02, bz=0.014):
    return TrapConfig(omega_rf=RF_SPECTROSCOPY, q_y=q, a_y=a_for_target_beta(q, by),
                      a_z=bz * bz)


def test_static_trap_gives_static_orbit():
    # pure dc confinement (not realisable with the quadrupole constraint,
    # but a valid input for the solver)
    a = np.array([0.03, 0.02, 0.005])
    cfg = SimpleNamespace(a=a, q=np.zeros(3), betas=np.sqrt(a))
    conf = find_equilibrium(3, cfg)
    orbit = find_orbit(cfg, conf)
    assert_allclose(orbit.coefficients[0], conf.positions, atol=1e-10)
    assert_allclose(orbit.coefficients[1:], 0, atol=1e-12)


def test_single_ion_orbit_is_zero(spectroscopy_trap):
    orbit = find_orbit(spectroscopy_trap, np.zeros((1, 3)))
    assert np.all(orbit.coefficients == 0)


def test_first_harmonic_ratio(zigzag, spectroscopy_trap):
    _, orbit = zigzag
    q = spectroscopy_trap.q_y
    ratio = orbit.coefficients[1, :, 1] / orbit.coefficients[0, :, 1]
    assert_allclose(ratio, -q / 2, atol=q * q)


def test_first_harmonic_ratio_scaling():
    errs = []
    for q in (0.2, 0.1, 0.05):
        cfg = fixed_beta_trap(q)
        orbit = find_orbit(cfg, find_equilibrium(3, cfg, seed_strategy="chains"))
        c = orbit.coefficients
        errs.append(np.max(np.abs(c[1, :, 1] / c[0, :, 1] + q / 2)))
    # relative correction is O(q^2): halving q cuts it by about 4
    assert errs[0] / errs[1] > 3 and errs[1] / errs[2] > 3


def test_small_defect(zigzag):
    _, orbit = zigzag
    assert max_defect(orbit) < 1e-9
    assert orbit.residual < 1e-9


def test_velocity_zero_at_origin_and_periodic(zigzag):
    _, orbit = zigzag
    pos0, vel0 = orbit_state(orbit, 0.0)
    pos1, vel1 = orbit_state(orbit, math.pi)
    assert_allclose(vel0, 0, atol=1e-15)
    assert_allclose(pos0, pos1, atol=1e-12)
    assert_allclose(vel1, 0, atol=1e-12)


def test_against_direct_integration(zigzag, spectroscopy_trap):
    _, orbit = zigzag
    cfg = spectroscopy_trap
    n = orbit.n_ions

    def rhs(xi, y):
        u = y[:3 * n].reshape(n, 3)
        acc = -(cfg.a - 2 * math.cos(2 * xi) * cfg.q) * u + coulomb_force(u)
        return np.concatenate([y[3 * n:], acc.ravel()])

    pos, vel = orbit_state(orbit, 0.0)
    sol = solve_ivp(rhs, (0, math.pi), np.concatenate([pos.ravel(), vel.ravel()]),
                    method="DOP853", rtol=1e-13, atol=1e-13)
    end_pos, end_vel = orbit_state(orbit, math.pi)
    assert np.max(np.abs(sol.y[:3 * n, -1] - end_pos.ravel())) < 1e-8
    assert np.max(np.abs(sol.y[3 * n:, -1] - end_vel.ravel())) < 1e-8


def test_linear_chain_axis(spectroscopy_trap):
    cfg = TrapConfig(omega_rf=RF_SPECTROSCOPY, q_y=0.2, a_y=-0.004, a_z=0.0008)
    orbit = find_orbit(cfg, find_equilibrium(3, cfg))
    avg = orbit_average(orbit)
    assert avg.classification == "linear"
    assert_allclose(avg.positions[:, :2], 0, atol=1e-30)
    assert orbit.axial_ripple < 1e-8


def test_zigzag_average_offset(zigzag, spectroscopy_trap):
    conf, orbit = zigzag
    avg = orbit_average(orbit).positions
    rel = np.max(np.abs(avg[:, 1] - conf.positions[:, 1])) / np.max(np.abs(conf.positions[:, 1]))
    q = spectroscopy_trap.q_y
    assert 0 < rel < q * q


def test_average_converges_quadratically():
    offsets = []
    for q in (0.2, 0.1, 0.05):
        cfg = fixed_beta_trap(q)
        conf = find_equilibrium(3, cfg, seed_strategy="chains")
        avg = orbit_average(find_orbit(cfg, conf)).positions
        offsets.append(np.max(np.abs(avg - conf.positions)) / np.max(np.abs(conf.positions)))
    slopes = np.log2(np.array(offsets[:-1]) / offsets[1:])
    assert_allclose(slopes, 2, atol=0.2)


def test_continuation_from_orbit(zigzag, spectroscopy_trap):
    _, orbit = zigzag
    again = find_orbit(spectroscopy_trap, orbit)
    assert_allclose(again.coefficients, orbit.coefficients, atol=1e-12)
