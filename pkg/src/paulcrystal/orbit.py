"""Periodic micromotion orbit of the crystal in the full time-dependent trap.

The orbit is sought as an even, pi-periodic cosine series::

    u(xi) = sum_{k=0..K} c_k cos(2 k xi)

and the coefficients are found by harmonic balance: the equation-of-motion
defect is sampled on a uniform grid in ``theta = 2 xi``, projected onto the
cosines, and driven to zero with Newton's method.
"""

from dataclasses import dataclass, field
import logging

import numpy as np

from .coulomb import coulomb_force, coulomb_hessian
from .equilibrium import CrystalConfiguration, classify, pseudo_energy, pseudo_gradient

log = logging.getLogger(__name__)

DEFAULT_ORDER = 8
MAX_ORDER = 48
DECAY_TOL = 1e-12
DEFECT_TOL = 1e-9
NEWTON_TOL = 1e-13


class OrbitError(RuntimeError):
    def __init__(self, message, coefficients=None, residual=None):
        super().__init__(message)
        self.coefficients = coefficients
        self.residual = residual


@dataclass(frozen=True)
class PeriodicOrbit:
    cfg: object
    coefficients: np.ndarray  # (K+1, N, 3)
    residual: float
    newton_iterations: int = field(default=0, compare=False)

    @property
    def n_ions(self):
        return self.coefficients.shape[1]

    @property
    def order(self):
        return self.coefficients.shape[0] - 1

    @property
    def axial_ripple(self):
        """Largest z micromotion coefficient relative to the crystal size."""
        scale = max(np.max(np.abs(self.coefficients[0])), 1e-300)
        if self.order == 0:
            return 0.0
        return float(np.max(np.abs(self.coefficients[1:, :, 2])) / scale)


def _grid(order):
    m = max(64, 8 * (order + 1))
    theta = 2 * np.pi * np.arange(m) / m
    k = np.arange(order + 1)
    basis = np.cos(np.outer(k, theta))  # (K+1, M)
    weights = np.where(k == 0, 1.0, 2.0)[:, None] / m
    return theta, basis, weights * basis


def _defect_samples(coeffs, cfg, theta, basis):
    k = np.arange(coeffs.shape[0])
    u = np.einsum("kj,kna->jna", basis, coeffs)
    acc = np.einsum("kj,kna->jna", -(k**2)[:, None] * 4.0 * basis, coeffs)
    stiff = cfg.a[None, :] - 2.0 * np.cos(theta)[:, None] * cfg.q[None, :]  # (M, 3)
    return acc + stiff[:, None, :] * u - coulomb_force(u), u, stiff


def _residual_and_jacobian(coeffs, cfg, theta, basis, proj):
    r, u, stiff = _defect_samples(coeffs, cfg, theta, basis)
    res = np.einsum("kj,jna->kna", proj, r)
    n = coeffs.shape[1]
    big_a = coulomb_hessian(u)  # (M, 3N, 3N)
    diag = np.tile(stiff, (1, n))  # (M, 3N)
    idx = np.arange(3 * n)
    big_a[:, idx, idx] += diag
    jac = np.einsum("kj,lj,jab->kalb", proj, basis, big_a)
    kk = np.arange(coeffs.shape[0])
    for l in kk:
        jac[l, idx, l, idx] -= 4.0 * l * l
    size = coeffs.size
    return res.reshape(-1), jac.reshape(size, size)


def _newton(coeffs, cfg, max_iter=50):
    theta, basis, proj = _grid(coeffs.shape[0] - 1)
    c = coeffs.copy()
    res, jac = _residual_and_jacobian(c, cfg, theta, basis, proj)
    norm = np.max(np.abs(res))
    for it in range(1, max_iter + 1):
        try:
            step = np.linalg.solve(jac, -res)
        except np.linalg.LinAlgError:
            step, *_ = np.linalg.lstsq(jac, -res, rcond=None)
        lam = 1.0
        for _ in range(30):
            trial = c + lam * step.reshape(c.shape)
            try:
                res_t, jac_t = _residual_and_jacobian(trial, cfg, theta, basis, proj)
            except ValueError:
                lam *= 0.5
                continue
            norm_t = np.max(np.abs(res_t))
            if norm_t < norm or norm_t < NEWTON_TOL:
                break
            lam *= 0.5
        else:
            raise OrbitError("Newton line search failed", c, norm)
        c, res, jac, norm = trial, res_t, jac_t, norm_t
        scale = max(np.max(np.abs(c[0])), 1.0)
        if norm < NEWTON_TOL * scale and lam * np.max(np.abs(step)) < 1e-11 * scale:
            return c, it
    if norm < 1e-11:
        return c, max_iter
    raise OrbitError("harmonic balance Newton iteration did not converge", c, norm)


def _initial_coefficients(cfg, seed, order):
    if isinstance(seed, PeriodicOrbit):
        c = np.zeros((order + 1,) + seed.coefficients.shape[1:])
        k = min(order, seed.order) + 1
        c[:k] = seed.coefficients[:k]
        return c
    pos = seed.positions if isinstance(seed, CrystalConfiguration) else np.asarray(seed, float)
    c = np.zeros((order + 1,) + pos.shape)
    c[0] = pos
    if order >= 1:
        c[1] = -0.5 * cfg.q[None, :] * pos
    return c


def max_defect(orbit, samples=64):
    """Largest equation-of-motion defect on an off-grid set of phases."""
    xi = np.pi * (np.arange(samples) + 0.371) / samples
    k = np.arange(orbit.order + 1)
    basis = np.cos(2 * np.outer(k, xi))
    r, _, _ = _defect_samples(orbit.coefficients, orbit.cfg, 2 * xi, basis)
    return float(np.max(np.abs(r)))


def find_orbit(cfg, seed, order=DEFAULT_ORDER, max_order=MAX_ORDER):
    """Solve for the symmetric periodic orbit continuing ``seed``.

    ``seed`` may be a static equilibrium (CrystalConfiguration or N x 3
    positions) or a previously computed PeriodicOrbit.  The truncation order
    is raised in steps of two until the last retained coefficient is below
    ``DECAY_TOL`` relative to the largest mean position.
    """
    if order < 2:
        raise ValueError("truncation order must be >= 2")
    c = _initial_coefficients(cfg, seed, order)
    iterations = 0
    prev_c0 = None
    while True:
        c, it = _newton(c, cfg)
        iterations += it
        scale = max(np.max(np.abs(c[0])), 1e-300)
        decayed = np.max(np.abs(c[-1])) < DECAY_TOL * scale or np.max(np.abs(c[0])) == 0
        stable_mean = prev_c0 is None or np.max(np.abs(c[0] - prev_c0)) <= 1e-10 * max(scale, 1)
        if decayed and stable_mean:
            break
        if c.shape[0] - 1 + 2 > max_order:
            raise OrbitError("Fourier series failed to converge within the maximum order",
                             c, None)
        log.debug("raising truncation order to %d", c.shape[0] + 1)
        prev_c0 = c[0].copy()
        c = np.concatenate([c, np.zeros((2,) + c.shape[1:])])
    orbit = PeriodicOrbit(cfg=cfg, coefficients=c, residual=0.0, newton_iterations=iterations)
    defect = max_defect(orbit)
    orbit = PeriodicOrbit(cfg=cfg, coefficients=c, residual=defect, newton_iterations=iterations)
    if defect > DEFECT_TOL:
        raise OrbitError(f"orbit defect {defect:.3g} exceeds tolerance", c, defect)
    return orbit


def orbit_state(orbit, xi):
    """Positions and d/dxi velocities at phase(s) ``xi``."""
    xi = np.asarray(xi, dtype=float)
    k = np.arange(orbit.order + 1)
    arg = 2.0 * np.multiply.outer(xi, k)
    pos = np.tensordot(np.cos(arg), orbit.coefficients, axes=(-1, 0))
    vel = np.tensordot(-2.0 * k * np.sin(arg), orbit.coefficients, axes=(-1, 0))
    return pos, vel


def orbit_average(orbit):
    u = orbit.coefficients[0].copy()
    return CrystalConfiguration(
        positions=u,
        classification=classify(u),
        energy=pseudo_energy(u, orbit.cfg),
        gradient_norm=float(np.linalg.norm(pseudo_gradient(u, orbit.cfg))),
    )
