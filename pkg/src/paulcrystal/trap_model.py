"""Linear Paul trap parameterization and dimensionless units.

Time is measured in ``xi = Omega t / 2`` and lengths in units of ``ell`` with
``ell**3 = e**2 / (4 pi eps0 m (Omega/2)**2)``.  In these units the equations
of motion of ion ``n`` along axis ``i`` read::

    u'' + (a_i - 2 q_i cos 2xi) u = sum_m (u_n - u_m)_i / |u_n - u_m|**3

The trap is a linear quadrupole: ``q_x = -q_y``, ``q_z = 0`` and the dc
parameters obey ``a_x + a_y + a_z = 0``.
"""

from dataclasses import dataclass
from functools import cached_property
import math

import numpy as np
from scipy import constants
from scipy.optimize import brentq

from .mathieu import a_for_target_beta, beta_exact, MathieuError

AXES = ("x", "y", "z")


class UnstableTrapError(ValueError):
    pass


@dataclass(frozen=True)
class TrapConfig:
    """Dimensionless trap parameters plus the angular rf frequency (rad/s)."""

    omega_rf: float
    q_y: float
    a_y: float
    a_z: float

    def __post_init__(self):
        if not self.omega_rf > 0:
            raise ValueError("omega_rf must be positive")
        unstable = [ax for ax, sol in zip(AXES, self.solutions) if not sol.stable]
        if unstable:
            raise UnstableTrapError(
                f"Mathieu-unstable axis {','.join(unstable)} for a={self.a.tolist()}, "
                f"q={self.q.tolist()}")

    @property
    def q_x(self):
        return -self.q_y

    @property
    def q_z(self):
        return 0.0

    @property
    def a_x(self):
        return -self.a_y - self.a_z

    @property
    def a(self):
        return np.array([self.a_x, self.a_y, self.a_z])

    @property
    def q(self):
        return np.array([self.q_x, self.q_y, self.q_z])

    @cached_property
    def solutions(self):
        return tuple(beta_exact(a, q) for a, q in zip(self.a, self.q))

    @cached_property
    def betas(self):
        """Exact characteristic exponents ``(beta_x, beta_y, beta_z)``."""
        return np.array([s.beta for s in self.solutions])

    @property
    def rf_hz(self):
        return self.omega_rf / (2 * math.pi)

    def beta_to_hz(self, beta):
        return np.asarray(beta) * self.omega_rf / (4 * math.pi)

    def hz_to_beta(self, freq_hz):
        return np.asarray(freq_hz) * 4 * math.pi / self.omega_rf

    def replace(self, **changes):
        fields = dict(omega_rf=self.omega_rf, q_y=self.q_y, a_y=self.a_y, a_z=self.a_z)
        fields.update(changes)
        return TrapConfig(**fields)


def secular_frequency_hz(cfg, axis):
    i = AXES.index(axis) if isinstance(axis, str) else int(axis)
    sol = cfg.solutions[i]
    if not sol.stable:
        raise UnstableTrapError(f"axis {AXES[i]} is unstable")
    return sol.beta * cfg.omega_rf / (4 * math.pi)


@dataclass(frozen=True)
class PhysicalTrap:
    """Electrode voltages and geometry.

    ``gamma`` and ``gamma_prime`` are the per-axis curvature factors in m^2
    entering ``a_i = 4 e U_dc / (gamma_i m Omega^2)`` and
    ``q_i = 2 e U_rf / (gamma'_i m Omega^2)``.  An infinite factor switches
    the corresponding term off.  The dc factors must satisfy
    ``sum(1/gamma) = 0`` and the rf factors ``1/gamma'_x = -1/gamma'_y``,
    ``1/gamma'_z = 0``.
    """

    omega_rf: float
    u_rf: float
    u_dc: float
    gamma: tuple
    gamma_prime: tuple
    ion_mass: float
    ion_charge: float = constants.e

    def mathieu_parameters(self):
        scale = self.ion_charge / (self.ion_mass * self.omega_rf**2)
        a = 4 * scale * self.u_dc / np.asarray(self.gamma, dtype=float)
        q = 2 * scale * self.u_rf / np.asarray(self.gamma_prime, dtype=float)
        return a, q


def from_physical(p: PhysicalTrap) -> TrapConfig:
    if not (p.omega_rf > 0 and p.ion_mass > 0 and p.ion_charge > 0):
        raise ValueError("omega_rf, ion_mass and ion_charge must be positive")
    a, q = p.mathieu_parameters()
    tol = 1e-12 * max(np.max(np.abs(a)), np.max(np.abs(q)), 1e-300)
    if abs(a.sum()) > tol or abs(q[0] + q[1]) > tol or abs(q[2]) > tol:
        raise ValueError("geometry violates the linear-quadrupole Laplace constraints")
    return TrapConfig(omega_rf=p.omega_rf, q_y=float(q[1]), a_y=float(a[1]), a_z=float(a[2]))


def length_scale(omega_rf, ion_mass, ion_charge=constants.e):
    """Unit of length ``ell`` in meters."""
    coulomb = ion_charge**2 / (4 * math.pi * constants.epsilon_0)
    return (coulomb / (ion_mass * (omega_rf / 2) ** 2)) ** (1.0 / 3.0)


def trap_from_frequencies(omega_rf, f_x, f_y, f_z):
    """Trap whose exact single-ion secular frequencies (Hz) are ``f_x, f_y, f_z``.

    ``a_z`` follows directly from ``f_z`` since ``q_z = 0``; for each trial
    ``q_y`` the value of ``a_y`` is pinned by ``f_y``, and ``q_y`` is then
    tuned until the Laplace-constrained x axis reproduces ``f_x``.
    """
    to_beta = 4 * math.pi / omega_rf
    bx, by, bz = f_x * to_beta, f_y * to_beta, f_z * to_beta
    if not all(0 < b < 1 for b in (bx, by, bz)):
        raise UnstableTrapError("requested frequencies exceed the first stability region")
    a_z = bz * bz

    def mismatch(q):
        a_y = a_for_target_beta(q, by)
        sol = beta_exact(-a_y - a_z, q)
        if sol.stable:
            return sol.beta - bx
        return -bx if sol.monodromy.trace() > 0 else 1.0 - bx

    lo = 1e-6
    hi = max(2 * math.sqrt(bx * bx + by * by + bz * bz), 1e-3)
    try:
        while mismatch(hi) < 0:
            hi *= 1.3
            if hi > 0.95:
                raise UnstableTrapError("no q_y reproduces the requested x frequency")
    except MathieuError as exc:
        raise UnstableTrapError(str(exc)) from exc
    if mismatch(lo) > 0:
        raise UnstableTrapError("x frequency too low for the Laplace constraint")
    q = brentq(mismatch, lo, hi, xtol=1e-15, rtol=4 * np.finfo(float).eps)
    return TrapConfig(omega_rf=omega_rf, q_y=q, a_y=a_for_target_beta(q, by), a_z=a_z)


CA40_MASS = 39.962590863 * constants.atomic_mass
