"""Floquet analysis of small oscillations about the periodic micromotion orbit.

Linearizing the equations of motion about the orbit gives
``phi'' + D(xi) phi = 0`` with a symmetric, pi-periodic stiffness matrix
``D``.  The monodromy of the first-order system over one period has
eigenvalues ``exp(+-i pi beta_k)`` for a dynamically stable crystal.
"""

from dataclasses import dataclass, field
import logging
import math

import numpy as np
from scipy.integrate import solve_ivp

from .coulomb import coulomb_hessian
from .equilibrium import find_equilibrium, EquilibriumError
from .mathieu import a_for_target_beta, MathieuError
from .modes_ppt import (Mode, ModeSet, ModeError, align_degenerate, degenerate_groups,
                        ppt_modes, tag_modes, _fix_sign)
from .orbit import find_orbit, orbit_average, orbit_state, OrbitError
from .trap_model import TrapConfig, UnstableTrapError

log = logging.getLogger(__name__)

RTOL = 1e-12
ATOL = 1e-12
SYMPLECTIC_TOL = 1e-8
UNIT_CIRCLE_TOL = 1e-6


class IntegratorAccuracyError(RuntimeError):
    pass


class DynamicalInstabilityError(RuntimeError):
    pass


@dataclass(frozen=True)
class FloquetSpectrum:
    monodromy: np.ndarray
    multipliers: np.ndarray
    exponents: np.ndarray
    vectors: np.ndarray  # (6N, 3N) complex Floquet eigenvectors at xi = 0
    mode_set: ModeSet = field(repr=False)


def symplectic_form(n):
    eye = np.eye(n)
    zero = np.zeros((n, n))
    return np.block([[zero, eye], [-eye, zero]])


def linearized_system(orbit):
    """Return ``D(xi)``, accepting scalar or array phases."""
    n3 = 3 * orbit.n_ions
    a = np.tile(orbit.cfg.a, orbit.n_ions)
    q = np.tile(orbit.cfg.q, orbit.n_ions)
    idx = np.arange(n3)

    def stiffness(xi):
        pos, _ = orbit_state(orbit, xi)
        d = coulomb_hessian(pos)
        d[..., idx, idx] += a - 2.0 * np.multiply.outer(np.cos(2.0 * np.asarray(xi)), q)
        return d

    return stiffness


def monodromy(orbit, full_period=False):
    """Monodromy over ``[0, pi]``.

    By default only ``[0, pi/2]`` is integrated: since ``D(-xi) = D(xi)``
    the fundamental matrix obeys ``Y(-xi) = R Y(xi) R`` with
    ``R = diag(I, -I)``, hence ``M = R Y(pi/2)^-1 R Y(pi/2)``.
    """
    n3 = 3 * orbit.n_ions
    stiffness = linearized_system(orbit)

    def rhs(xi, y):
        y = y.reshape(2 * n3, 2 * n3)
        return np.concatenate([y[n3:], -stiffness(xi) @ y[:n3]]).ravel()

    end = math.pi if full_period else math.pi / 2
    sol = solve_ivp(rhs, (0.0, end), np.eye(2 * n3).ravel(), method="DOP853",
                    rtol=RTOL, atol=ATOL)
    if not sol.success:
        raise IntegratorAccuracyError(sol.message)
    y = sol.y[:, -1].reshape(2 * n3, 2 * n3)
    if full_period:
        return y
    r = np.diag(np.r_[np.ones(n3), -np.ones(n3)])
    return r @ np.linalg.solve(y, r @ y)


def symplectic_defect(m):
    j = symplectic_form(m.shape[0] // 2)
    return float(np.max(np.abs(m.T @ j @ m - j)))


def floquet_multipliers(orbit):
    m = monodromy(orbit)
    lam, vec = np.linalg.eig(m)
    return m, lam, vec


def stability_margin(multipliers):
    """Largest ``|lambda| - 1``; positive values signal parametric instability."""
    return float(np.max(np.abs(multipliers)) - 1.0)


def flt_spectrum(orbit, tag=True):
    m, lam, vec = floquet_multipliers(orbit)
    defect = symplectic_defect(m)
    if defect > SYMPLECTIC_TOL:
        raise IntegratorAccuracyError(f"monodromy not symplectic (defect {defect:.3g})")
    if np.max(np.abs(np.abs(lam) - 1.0)) > UNIT_CIRCLE_TOL:
        raise DynamicalInstabilityError(
            f"crystal dynamically unstable at these parameters "
            f"(max |lambda| = {np.max(np.abs(lam)):.8f})")

    n3 = 3 * orbit.n_ions
    angle = np.angle(lam)
    keep = np.argsort(-angle, kind="stable")[:n3]
    beta = angle[keep] / math.pi
    order = np.argsort(beta, kind="stable")
    keep, beta = keep[order], beta[order]
    vecs = vec[:, keep]

    real_pos = np.empty((n3, n3))
    for j in range(n3):
        p = vecs[:n3, j]
        phase = 0.5 * np.angle(np.sum(p * p))
        real_pos[:, j] = np.real(p * np.exp(-1j * phase))
    groups = degenerate_groups(beta)
    real_pos = align_degenerate(real_pos / np.linalg.norm(real_pos, axis=0), groups,
                                orbit.n_ions)

    to_hz = orbit.cfg.omega_rf / (4 * math.pi)
    modes = tuple(Mode(beta=float(b), freq_hz=float(b * to_hz), vector=_fix_sign(v),
                       degenerate_group=g)
                  for b, v, g in zip(beta, real_pos.T, groups))
    config = orbit_average(orbit)
    ms = ModeSet(method="FLT", modes=modes, cfg=orbit.cfg, configuration=config)
    if tag:
        ms = tag_modes(ms, config)
    return FloquetSpectrum(monodromy=m, multipliers=lam[keep], exponents=beta,
                           vectors=vecs, mode_set=ms)


def flt_modes(n_ions, cfg, **equilibrium_kw):
    """Equilibrium -> orbit -> Floquet modes for a trap configuration."""
    config = find_equilibrium(n_ions, cfg, **equilibrium_kw)
    return flt_spectrum(find_orbit(cfg, config)).mode_set


@dataclass(frozen=True)
class SweepRow:
    q: float
    zz_a_hz: float = math.nan
    zz_b_hz: float = math.nan
    zz_a_ppt_hz: float = math.nan
    zz_b_ppt_hz: float = math.nan
    cm_x_hz: float = math.nan
    ok: bool = True
    error: str = ""


def constant_cm_trap(omega_rf, q, f_y, f_z):
    """Trap at ``q_y = q`` whose y and z c.m. frequencies equal ``f_y, f_z`` (Hz).

    The x axis follows from the Laplace constraint and is not held fixed.
    """
    to_beta = 4 * math.pi / omega_rf
    a_z = (f_z * to_beta) ** 2
    a_y = a_for_target_beta(q, f_y * to_beta)
    return TrapConfig(omega_rf=omega_rf, q_y=q, a_y=a_y, a_z=a_z)


def sweep_row(q, omega_rf, f_y, f_z, n_ions=3):
    try:
        cfg = constant_cm_trap(omega_rf, q, f_y, f_z)
        config = find_equilibrium(n_ions, cfg, seed_strategy="chains")
        if config.classification != "planar_yz":
            raise ModeError(f"crystal is {config.classification}, not planar")
        ppt = ppt_modes(config, cfg)
        flt = flt_spectrum(find_orbit(cfg, config)).mode_set
    except (MathieuError, UnstableTrapError, EquilibriumError, OrbitError, ModeError,
            DynamicalInstabilityError, IntegratorAccuracyError) as exc:
        return SweepRow(q=q, ok=False, error=f"{type(exc).__name__}: {exc}")
    return SweepRow(q=q, zz_a_hz=flt["zz_a"].freq_hz, zz_b_hz=flt["zz_b"].freq_hz,
                    zz_a_ppt_hz=ppt["zz_a"].freq_hz, zz_b_ppt_hz=ppt["zz_b"].freq_hz,
                    cm_x_hz=flt["cm_x"].freq_hz)


def zz_shift_vs_q(omega_rf, f_y, f_z, q_grid, n_ions=3, map_fn=map):
    """Zigzag frequencies versus q with the y and z c.m. frequencies held fixed.

    Failed rows are returned with ``ok=False`` and the sweep continues.
    ``map_fn`` may be a parallel map; row order follows ``q_grid``.
    """
    rows = map_fn(_row_star, [(float(q), omega_rf, f_y, f_z, n_ions) for q in q_grid])
    return list(rows)


def _row_star(args):
    return sweep_row(*args)
