"""Structural transitions of the crystal as the anisotropy alpha is varied.

``alpha_y = (beta_z / beta_y)**2`` is swept by changing ``a_z`` while
``q_y`` and the radial dc split ``a_y - a_x`` stay fixed.  A crystal state is
labelled by its classification plus the sign pattern of the ions' y offsets;
critical values are located by bisection on that label.
"""

from dataclasses import dataclass, field, replace
import logging
import math

import numpy as np
from scipy.optimize import brentq

from .equilibrium import (CLASSIFY_TOL, EquilibriumError, classify, extent,
                          find_equilibrium, linear_chain, local_minimum,
                          is_stable_minimum, make_configuration, pseudo_hessian)
from .mathieu import extended_beta
from .modes_flt import floquet_multipliers, stability_margin
from .modes_ppt import ppt_modes
from .orbit import OrbitError, find_orbit, orbit_average
from .trap_model import TrapConfig, UnstableTrapError

log = logging.getLogger(__name__)

DEFAULT_RESOLUTION = 0.005
DEFAULT_GRID_STEP = 0.02
FLT_UNSTABLE_TOL = 1e-7


class TransitionError(RuntimeError):
    pass


def alpha_of(cfg):
    """``(alpha_x, alpha_y)`` from the exact exponents."""
    bx, by, bz = cfg.betas
    return (bz / bx) ** 2, (bz / by) ** 2


def trap_at_alpha(base, alpha):
    """Trap with ``alpha_y = alpha`` sharing ``q_y`` and ``a_y - a_x`` with ``base``."""
    if not alpha > 0:
        raise TransitionError(f"alpha must be positive, got {alpha}")
    split = base.a_y - base.a_x
    q = base.q_y

    def a_y_of(a_z):
        return 0.5 * (split - a_z)

    def g(a_z):
        by = max(extended_beta(a_y_of(a_z), q), 0.0)
        return a_z - alpha * by * by

    lo = 1e-14
    if g(lo) >= 0:
        raise TransitionError(f"alpha = {alpha} not reachable: y axis unstable at a_z = 0")
    hi = max(base.a_z, 1e-6)
    while g(hi) <= 0:
        hi *= 1.5
        if hi > 1.0:
            raise TransitionError(f"alpha = {alpha} not reachable")
    a_z = brentq(g, lo, hi, xtol=1e-16, rtol=4 * np.finfo(float).eps)
    try:
        return TrapConfig(omega_rf=base.omega_rf, q_y=q, a_y=a_y_of(a_z), a_z=a_z)
    except UnstableTrapError as exc:
        raise TransitionError(f"alpha = {alpha}: {exc}") from exc


def structure_label(positions, tol=CLASSIFY_TOL):
    """Classification plus a mirror-invariant y sign pattern, e.g. ``planar_yz:+-+``."""
    u = np.asarray(positions, dtype=float)
    kind = classify(u, tol)
    if kind == "three_d":
        return kind
    scale = tol * extent(u)
    order = np.argsort(u[:, 2], kind="stable")
    y = u[order, 1]
    signs = np.where(y > scale, 1, np.where(y < -scale, -1, 0))
    variants = [signs, -signs, signs[::-1], -signs[::-1]]
    best = min(tuple(v) for v in variants)
    pattern = "".join({1: "+", -1: "-", 0: "0"}[s] for s in best)
    return f"{kind}:{pattern}"


@dataclass(frozen=True)
class CriticalAlpha:
    alpha: float
    lower: float
    upper: float
    below: str
    above: str
    method: str
    first_order: bool = False
    soft_mode_alpha: float | None = None

    @property
    def kind(self):
        return f"{self.below} -> {self.above}"


@dataclass(frozen=True)
class TransitionScan:
    n_ions: int
    method: str
    alpha_grid: np.ndarray
    classifications: list
    lowest_mode_hz: list
    critical_alphas: list = field(default_factory=list)
    hysteresis: list = field(default_factory=list)


def _grid(alpha_range, step):
    lo, hi = alpha_range
    n = max(int(math.ceil((hi - lo) / step - 1e-9)), 1)
    return np.linspace(lo, hi, n + 1)


def _rescale(positions, cfg_from, cfg_to):
    return positions * (cfg_from.betas[2] / cfg_to.betas[2]) ** (2.0 / 3.0)


# -- pseudopotential scan ------------------------------------------------------

@dataclass
class _PPTState:
    cfg: TrapConfig
    config: object
    label: str
    hysteresis: bool


def _ppt_state(n_ions, base, alpha, n_random, rng_seed, previous=None):
    cfg = trap_at_alpha(base, alpha)
    best = find_equilibrium(n_ions, cfg, n_random=n_random, rng_seed=rng_seed)
    hyst = False
    if previous is not None and n_ions > 1:
        x, gnorm = local_minimum(_rescale(previous.config.positions, previous.cfg, cfg), cfg)
        if gnorm < 1e-10 and is_stable_minimum(x, cfg):
            cont = make_configuration(x, cfg)
            hyst = structure_label(cont.positions) != structure_label(best.positions)
    return _PPTState(cfg, best, structure_label(best.positions), hyst)


def transverse_soft_eigenvalue(n_ions, cfg):
    """Lowest radial Hessian eigenvalue of the on-axis chain."""
    chain = linear_chain(n_ions, cfg)
    h = pseudo_hessian(chain, cfg)
    radial = np.array([3 * i + k for i in range(n_ions) for k in (0, 1)])
    return float(np.linalg.eigvalsh(h[np.ix_(radial, radial)])[0])


def _soft_mode_alpha(n_ions, base, lo, hi):
    def f(alpha):
        return transverse_soft_eigenvalue(n_ions, trap_at_alpha(base, alpha))
    try:
        flo, fhi = f(lo), f(hi)
        if flo * fhi > 0:
            return None
        return brentq(f, lo, hi, xtol=1e-14)
    except (TransitionError, ValueError):
        return None


def _bisect(state_fn, lo_state, hi_state, lo, hi, resolution, depth=0):
    """Return a list of ``(lo, hi, lo_state, hi_state)`` brackets."""
    if hi - lo <= resolution or depth > 60:
        return [(lo, hi, lo_state, hi_state)]
    mid = 0.5 * (lo + hi)
    mid_state = state_fn(mid, lo_state, hi_state)
    if mid_state.label == lo_state.label:
        return _bisect(state_fn, mid_state, hi_state, mid, hi, resolution, depth + 1)
    if mid_state.label == hi_state.label:
        return _bisect(state_fn, lo_state, mid_state, lo, mid, resolution, depth + 1)
    return (_bisect(state_fn, lo_state, mid_state, lo, mid, resolution, depth + 1)
            + _bisect(state_fn, mid_state, hi_state, mid, hi, resolution, depth + 1))


def scan_alpha_ppt(n_ions, base, alpha_range, resolution=DEFAULT_RESOLUTION,
                   grid_step=DEFAULT_GRID_STEP, n_random=20, rng_seed=0):
    """Locate pseudopotential structural transitions in ``alpha_range``."""
    grid = _grid(alpha_range, grid_step)

    def state_fn(alpha, previous=None, other=None):
        return _ppt_state(n_ions, base, alpha, n_random, rng_seed, previous)

    states = []
    prev = None
    for alpha in grid:
        prev = state_fn(alpha, prev)
        states.append(prev)

    critical = []
    for i in range(len(grid) - 1):
        if states[i].label == states[i + 1].label:
            continue
        for lo, hi, s_lo, s_hi in _bisect(state_fn, states[i], states[i + 1],
                                          grid[i], grid[i + 1], resolution):
            soft = None
            if s_lo.label.startswith("linear") or s_hi.label.startswith("linear"):
                soft = _soft_mode_alpha(n_ions, base, lo, hi)
            critical.append(CriticalAlpha(
                alpha=soft if soft is not None else 0.5 * (lo + hi), lower=lo, upper=hi,
                below=s_lo.label, above=s_hi.label, method="PPT",
                first_order=s_lo.hysteresis or s_hi.hysteresis, soft_mode_alpha=soft))

    lowest = []
    for s in states:
        lowest.append(float(ppt_modes(s.config, s.cfg, tag=False).frequencies_hz[0]))
    return TransitionScan(
        n_ions=n_ions, method="PPT", alpha_grid=grid,
        classifications=[s.label for s in states], lowest_mode_hz=lowest,
        critical_alphas=critical,
        hysteresis=[float(a) for a, s in zip(grid, states) if s.hysteresis])


# -- time-dependent (Floquet) scan ----------------------------------------------

@dataclass
class _FLTState:
    cfg: TrapConfig
    orbit: object
    label: str
    lowest_beta: float
    hysteresis: bool = False


def _stable_orbit(cfg, seed):
    try:
        orbit = find_orbit(cfg, seed)
    except (OrbitError, ValueError) as exc:
        log.debug("orbit from seed failed: %s", exc)
        return None, None
    _, lam, vec = floquet_multipliers(orbit)
    return orbit, (lam, vec)


def _orbit_label(orbit):
    return structure_label(orbit_average(orbit).positions)


def _lowest_beta(lam):
    ang = np.abs(np.angle(lam))
    return float(np.min(ang[np.abs(lam) <= 1 + FLT_UNSTABLE_TOL]) / math.pi)


def _flt_state(n_ions, base, alpha, n_random, rng_seed, neighbours=()):
    cfg = trap_at_alpha(base, alpha)
    seeds = []
    for nb in neighbours:
        if nb is not None:
            scale = (nb.cfg.betas[2] / cfg.betas[2]) ** (2.0 / 3.0)
            seeds.append(replace(nb.orbit, cfg=cfg, coefficients=nb.orbit.coefficients * scale))
    try:
        ppt = find_equilibrium(n_ions, cfg, n_random=n_random, rng_seed=rng_seed)
        seeds.append(ppt)
    except EquilibriumError:
        pass
    chain = linear_chain(n_ions, cfg)
    seeds.append(chain)

    stable = []
    unstable_linear = None
    for seed in seeds:
        orbit, eig = _stable_orbit(cfg, seed)
        if orbit is None:
            continue
        lam, vec = eig
        if stability_margin(lam) <= FLT_UNSTABLE_TOL:
            stable.append(orbit)
        elif unstable_linear is None and _orbit_label(orbit).startswith("linear"):
            unstable_linear = (orbit, lam, vec)

    if not stable and unstable_linear is not None:
        # follow the growing Floquet direction off the unstable axis
        orbit, lam, vec = unstable_linear
        k = int(np.argmax(np.abs(lam)))
        direction = np.real(vec[: 3 * n_ions, k]).reshape(n_ions, 3)
        direction /= np.max(np.abs(direction))
        spacing = extent(chain) / max(n_ions - 1, 1)
        for amp in (0.3, 0.1, 0.03, 0.01):
            o, eig = _stable_orbit(cfg, chain + amp * spacing * direction)
            if o is not None and stability_margin(eig[0]) <= FLT_UNSTABLE_TOL:
                stable.append(o)
                break
    if not stable:
        raise TransitionError(f"no dynamically stable periodic orbit at alpha = {alpha}")

    labels = [_orbit_label(o) for o in stable]
    chosen = stable[0]
    hyst = len(set(labels)) > 1
    _, lam, _ = floquet_multipliers(chosen)
    return _FLTState(cfg, chosen, labels[0], _lowest_beta(lam), hyst)


def scan_alpha_flt(n_ions, base, alpha_range, resolution=DEFAULT_RESOLUTION,
                   grid_step=DEFAULT_GRID_STEP, n_random=20, rng_seed=0):
    """Locate transitions of the dynamically stable periodic orbit.

    At every alpha the orbit continued from the neighbouring state is tried
    first, so a transition is registered where that branch loses stability
    (a Floquet exponent reaching zero) or stops existing.
    """
    grid = _grid(alpha_range, grid_step)

    def state_fn(alpha, previous=None, other=None):
        return _flt_state(n_ions, base, alpha, n_random, rng_seed, (previous, other))

    states = []
    prev = None
    for alpha in grid:
        prev = state_fn(alpha, prev)
        states.append(prev)

    critical = []
    for i in range(len(grid) - 1):
        if states[i].label == states[i + 1].label:
            continue
        for lo, hi, s_lo, s_hi in _bisect(state_fn, states[i], states[i + 1],
                                          grid[i], grid[i + 1], resolution):
            critical.append(CriticalAlpha(
                alpha=0.5 * (lo + hi), lower=lo, upper=hi, below=s_lo.label,
                above=s_hi.label, method="FLT",
                first_order=s_lo.hysteresis or s_hi.hysteresis))

    to_hz = base.omega_rf / (4 * math.pi)
    return TransitionScan(
        n_ions=n_ions, method="FLT", alpha_grid=grid,
        classifications=[s.label for s in states],
        lowest_mode_hz=[s.lowest_beta * to_hz for s in states],
        critical_alphas=critical,
        hysteresis=[float(a) for a, s in zip(grid, states) if s.hysteresis])
