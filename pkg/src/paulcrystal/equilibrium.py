"""Static (pseudopotential) equilibria of N-ion crystals.

The pseudopotential uses the exact Mathieu exponents of the trap::

    Phi = 1/2 sum_n sum_i beta_i**2 u_{n,i}**2 + sum_{n<m} 1/|u_n - u_m|
"""

from dataclasses import dataclass
import logging

import numpy as np
from scipy.optimize import minimize

from .coulomb import coulomb_energy, coulomb_force, coulomb_hessian

log = logging.getLogger(__name__)

GRAD_TOL = 1e-12
MAX_ITER = 10_000
CLASSIFY_TOL = 1e-5
NEG_EIG_TOL = 1e-8


class EquilibriumError(RuntimeError):
    def __init__(self, message, best=None, gradient_norm=None):
        super().__init__(message)
        self.best = best
        self.gradient_norm = gradient_norm


@dataclass(frozen=True)
class CrystalConfiguration:
    positions: np.ndarray
    classification: str
    energy: float
    gradient_norm: float

    @property
    def n_ions(self):
        return self.positions.shape[0]

    @property
    def labels(self):
        return np.arange(self.n_ions)

    def min_distance(self):
        if self.n_ions < 2:
            return np.inf
        d = self.positions[:, None, :] - self.positions[None, :, :]
        r = np.linalg.norm(d, axis=-1)
        return r[np.triu_indices(self.n_ions, 1)].min()


def _betas(cfg):
    return np.asarray(cfg.betas, dtype=float)


def pseudo_energy(positions, cfg):
    u = np.asarray(positions, dtype=float).reshape(-1, 3)
    b2 = _betas(cfg) ** 2
    return 0.5 * float(np.sum(b2 * u * u)) + float(coulomb_energy(u))


def pseudo_gradient(positions, cfg):
    u = np.asarray(positions, dtype=float).reshape(-1, 3)
    return _betas(cfg) ** 2 * u - coulomb_force(u)


def pseudo_hessian(positions, cfg):
    u = np.asarray(positions, dtype=float).reshape(-1, 3)
    n = u.shape[0]
    return np.diag(np.tile(_betas(cfg) ** 2, n)) + coulomb_hessian(u)


def extent(positions):
    u = np.asarray(positions, dtype=float)
    if u.shape[0] < 2:
        return 1.0
    return float(np.max(np.ptp(u, axis=0)))


def classify(positions, tol=CLASSIFY_TOL):
    u = np.asarray(positions, dtype=float).reshape(-1, 3)
    scale = tol * extent(u)
    if np.all(np.abs(u[:, :2]) < scale):
        return "linear"
    if np.all(np.abs(u[:, 0]) < scale):
        return "planar_yz"
    return "three_d"


def canonicalize(positions, tol=1e-9):
    """Sort ions by z (ties by y) and fix the mirror images.

    The trap is symmetric under x -> -x and y -> -y; among mirror images we
    keep the one whose first ion with a non-negligible coordinate is on the
    positive side.
    """
    u = np.array(positions, dtype=float).reshape(-1, 3)
    scale = tol * extent(u)
    for axis in (0, 1):
        order = _canonical_order(u, scale)
        col = u[order, axis]
        big = np.flatnonzero(np.abs(col) > scale)
        if big.size and col[big[0]] < 0:
            u[:, axis] = -u[:, axis]
    return u[_canonical_order(u, scale)]


def _canonical_order(u, scale):
    # z rounded to the tie tolerance so that near-equal z fall back on y
    key_z = np.round(u[:, 2] / max(scale, 1e-300))
    return np.lexsort((u[:, 1], key_z))


def linear_chain(n_ions, cfg):
    """Equilibrium with all ions on the trap axis (may be a saddle)."""
    bz2 = _betas(cfg)[2] ** 2
    if n_ions == 1:
        return np.zeros((1, 3))
    scale = bz2 ** (-1.0 / 3.0)
    z0 = scale * np.linspace(-1, 1, n_ions) * 0.9 * n_ions**0.56

    def energy(z):
        dz = z[:, None] - z[None, :]
        iu = np.triu_indices(n_ions, 1)
        return 0.5 * bz2 * z @ z + np.sum(1.0 / np.abs(dz[iu]))

    def grad(z):
        dz = z[:, None] - z[None, :]
        np.fill_diagonal(dz, np.inf)
        return bz2 * z - np.sum(np.sign(dz) / dz**2, axis=1)

    def hess(z):
        dz = np.abs(z[:, None] - z[None, :])
        np.fill_diagonal(dz, np.inf)
        h = -2.0 / dz**3
        np.fill_diagonal(h, 0.0)
        h[np.diag_indices(n_ions)] = bz2 - h.sum(axis=1)
        return h

    res = minimize(energy, z0, jac=grad, hess=hess, method="trust-exact",
                   options={"gtol": GRAD_TOL, "maxiter": MAX_ITER})
    z = np.sort(_newton_polish(res.x, grad, hess))
    u = np.zeros((n_ions, 3))
    u[:, 2] = z
    return u


def _newton_polish(x, grad, hess, steps=8):
    for _ in range(steps):
        g = grad(x)
        if np.linalg.norm(g) < GRAD_TOL:
            break
        dx, *_ = np.linalg.lstsq(hess(x), -g, rcond=None)
        if np.linalg.norm(grad(x + dx)) >= np.linalg.norm(g):
            break
        x = x + dx
    return x


def seed_positions(n_ions, cfg, n_random=20, rng_seed=0):
    """Initial guesses: linear chain, zigzag-perturbed chain, random clouds."""
    chain = linear_chain(n_ions, cfg)
    seeds = [chain]
    if n_ions > 1:
        spacing = extent(chain) / max(n_ions - 1, 1)
        zig = chain.copy()
        zig[:, 1] = 0.2 * spacing * (-1.0) ** np.arange(n_ions)
        zig[:, 0] = 0.01 * spacing * np.cos(np.arange(n_ions))
        seeds.append(zig)
        rng = np.random.default_rng(rng_seed)
        sigma = np.maximum(extent(chain) / 2, 1.0) / np.sqrt(_betas(cfg) / _betas(cfg)[2])
        for _ in range(n_random):
            seeds.append(rng.normal(size=(n_ions, 3)) * sigma)
    return seeds


def local_minimum(seed, cfg):
    """Minimize Phi from ``seed``; returns positions and final gradient norm."""
    x0 = np.asarray(seed, dtype=float).reshape(-1)

    def fun(x):
        return pseudo_energy(x, cfg)

    def jac(x):
        return pseudo_gradient(x, cfg).reshape(-1)

    def hess(x):
        return pseudo_hessian(x, cfg)

    res = minimize(fun, x0, jac=jac, hess=hess, method="trust-exact",
                   options={"gtol": GRAD_TOL, "maxiter": MAX_ITER})
    x = _newton_polish(res.x, jac, hess)
    return x.reshape(-1, 3), float(np.linalg.norm(jac(x)))


def make_configuration(positions, cfg):
    u = canonicalize(positions)
    return CrystalConfiguration(
        positions=u,
        classification=classify(u),
        energy=pseudo_energy(u, cfg),
        gradient_norm=float(np.linalg.norm(pseudo_gradient(u, cfg))),
    )


def is_stable_minimum(positions, cfg):
    if len(positions) < 2:
        return True
    return np.linalg.eigvalsh(pseudo_hessian(positions, cfg))[0] >= -NEG_EIG_TOL


def find_equilibrium(n_ions, cfg, seed_strategy="default", n_random=20, rng_seed=0,
                     extra_seeds=()):
    """Lowest-energy stable minimum over a set of starting configurations.

    ``seed_strategy`` is ``"default"`` (chain, zigzag chain and ``n_random``
    Gaussian clouds), ``"chains"`` (no random clouds) or ``"extra"`` (only
    ``extra_seeds``).
    """
    if n_ions < 1:
        raise ValueError("n_ions must be >= 1")
    if n_ions == 1:
        return make_configuration(np.zeros((1, 3)), cfg)
    if seed_strategy == "default":
        seeds = seed_positions(n_ions, cfg, n_random, rng_seed)
    elif seed_strategy == "chains":
        seeds = seed_positions(n_ions, cfg, 0, rng_seed)
    elif seed_strategy == "extra":
        seeds = []
    else:
        raise ValueError(f"unknown seed strategy {seed_strategy!r}")
    seeds = list(extra_seeds) + seeds

    best = None
    best_any = None
    for seed in seeds:
        try:
            x, gnorm = local_minimum(seed, cfg)
        except (ValueError, np.linalg.LinAlgError) as exc:
            log.debug("start failed: %s", exc)
            continue
        conf = make_configuration(x, cfg)
        if best_any is None or conf.gradient_norm < best_any.gradient_norm:
            best_any = conf
        if conf.gradient_norm > 1e-10 or not is_stable_minimum(conf.positions, cfg):
            continue
        if best is None or _better(conf, best):
            best = conf
    if best is None:
        raise EquilibriumError(
            "no start converged to a stable minimum",
            best=best_any,
            gradient_norm=None if best_any is None else best_any.gradient_norm)
    return best


def _better(c, ref):
    tol = 1e-12 * max(abs(ref.energy), 1.0)
    if c.energy < ref.energy - tol:
        return True
    if c.energy > ref.energy + tol:
        return False
    return tuple(c.positions.ravel()) < tuple(ref.positions.ravel())
