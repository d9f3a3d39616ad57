"""Weighted least-squares fit of (q_y, a_z, a_y) to measured mode frequencies."""

from dataclasses import dataclass, field
import csv
import logging
import math

import numpy as np
from scipy.optimize import least_squares
from scipy.special import gammaincc

from .equilibrium import find_equilibrium, EquilibriumError
from .mathieu import a_for_target_beta, MathieuError
from .modes_flt import flt_spectrum, DynamicalInstabilityError, IntegratorAccuracyError
from .modes_ppt import ppt_modes, ModeError
from .orbit import find_orbit, OrbitError
from .trap_model import TrapConfig, UnstableTrapError, trap_from_frequencies

log = logging.getLogger(__name__)

FD_STEP = 1e-6
PARAM_NAMES = ("q_y", "a_z", "a_y")
MODELS = ("flt", "ppt")
# residual assigned when the forward model fails inside the trust region
FAILED_RESIDUAL = 1e4


class ForwardModelError(RuntimeError):
    def __init__(self, stage, cause):
        super().__init__(f"{stage} stage failed: {cause}")
        self.stage = stage


class FitError(RuntimeError):
    def __init__(self, message, best=None):
        super().__init__(message)
        self.best = best


@dataclass(frozen=True)
class Measurement:
    tag: str
    freq_hz: float
    sigma_hz: float

    def __post_init__(self):
        if not self.freq_hz > 0:
            raise ValueError(f"{self.tag}: frequency must be positive")
        if not self.sigma_hz > 0:
            raise ValueError(f"{self.tag}: sigma must be positive")


@dataclass(frozen=True)
class FitResult:
    model: str
    params: tuple
    predicted: dict
    residuals: dict
    chi2: float
    dof: int
    p_value: float
    covariance: np.ndarray = field(repr=False)
    cfg: TrapConfig = field(repr=False)
    nfev: int = 0

    @property
    def q_y(self):
        return self.params[0]

    @property
    def a_z(self):
        return self.params[1]

    @property
    def a_y(self):
        return self.params[2]

    @property
    def a_x(self):
        return -self.params[1] - self.params[2]

    @property
    def param_sigma(self):
        return np.sqrt(np.diag(self.covariance))


def chi2_sf(x, k):
    """Survival function of the chi-squared distribution with ``k`` dof."""
    if k < 1 or int(k) != k:
        raise ValueError("degrees of freedom must be a positive integer")
    if x < 0 or not np.isfinite(x):
        raise ValueError("chi-squared value must be finite and non-negative")
    if k == 2:
        return math.exp(-0.5 * x)
    return float(gammaincc(0.5 * k, 0.5 * x))


def load_measurements(path):
    """Read a ``tag,freq_khz,sigma_khz`` CSV file."""
    with open(path, newline="") as fh:
        rows = list(csv.DictReader(fh))
    return [Measurement(r["tag"].strip(), float(r["freq_khz"]) * 1e3,
                        float(r["sigma_khz"]) * 1e3) for r in rows]


class ForwardModel:
    """Mode frequencies (Hz) as a function of ``(q_y, a_z, a_y)``.

    Remembers the last equilibrium so that nearby parameter points start from
    it; the result does not depend on that seed as long as the same minimum is
    reached.
    """

    def __init__(self, omega_rf, n_ions=3, model="flt"):
        if model not in MODELS:
            raise ValueError(f"model must be one of {MODELS}")
        self.omega_rf = omega_rf
        self.n_ions = n_ions
        self.model = model
        self._last = None
        self.calls = 0

    def trap(self, params):
        q_y, a_z, a_y = map(float, params)
        return TrapConfig(omega_rf=self.omega_rf, q_y=q_y, a_y=a_y, a_z=a_z)

    def __call__(self, params):
        self.calls += 1
        try:
            cfg = self.trap(params)
        except (UnstableTrapError, MathieuError) as exc:
            raise ForwardModelError("trap", exc) from exc
        extra = ()
        if self._last is not None:
            scale = (self._last[0][2] / cfg.betas[2]) ** (2.0 / 3.0)
            extra = (self._last[1] * scale,)
        try:
            config = find_equilibrium(self.n_ions, cfg, seed_strategy="chains",
                                      extra_seeds=extra)
        except EquilibriumError as exc:
            raise ForwardModelError("equilibrium", exc) from exc
        self._last = (cfg.betas, config.positions)
        if self.model == "ppt":
            try:
                return ppt_modes(config, cfg).by_tag()
            except ModeError as exc:
                raise ForwardModelError("modes", exc) from exc
        try:
            orbit = find_orbit(cfg, config)
        except OrbitError as exc:
            raise ForwardModelError("orbit", exc) from exc
        try:
            return flt_spectrum(orbit).mode_set.by_tag()
        except (ModeError, DynamicalInstabilityError, IntegratorAccuracyError) as exc:
            raise ForwardModelError("floquet", exc) from exc


def forward_model(params, omega_rf, n_ions=3, model="flt"):
    return ForwardModel(omega_rf, n_ions, model)(params)


def initial_guess(measurements, omega_rf, q_default=0.2):
    """Parameters reproducing the measured c.m. frequencies exactly.

    Without a cm_x measurement ``q_y`` cannot be pinned, and ``q_default`` is
    used together with the y and z c.m. modes.
    """
    f = {m.tag: m.freq_hz for m in measurements}
    if not {"cm_y", "cm_z"} <= f.keys():
        raise FitError("initial guess needs cm_y and cm_z measurements")
    if "cm_x" in f:
        cfg = trap_from_frequencies(omega_rf, f["cm_x"], f["cm_y"], f["cm_z"])
        return np.array([cfg.q_y, cfg.a_z, cfg.a_y])
    to_beta = 4 * math.pi / omega_rf
    a_z = (f["cm_z"] * to_beta) ** 2
    a_y = a_for_target_beta(q_default, f["cm_y"] * to_beta)
    return np.array([q_default, a_z, a_y])


def _scaled_gradient(jac, fun):
    # gradient of 0.5*chi2 per unit column norm, independent of parameter units
    norms = np.maximum(np.linalg.norm(jac, axis=0), 1e-300)
    return float(np.max(np.abs(jac.T @ fun) / norms) / max(np.linalg.norm(fun), 1.0))


def fit(measurements, omega_rf, n_ions=3, model="flt", x0=None, max_restarts=3):
    """Minimize the weighted chi-squared over ``(q_y, a_z, a_y)``.

    Uses a trust-region reflective least-squares solver with a central
    finite-difference Jacobian (absolute step ``FD_STEP`` per parameter).
    """
    measurements = list(measurements)
    tags = [m.tag for m in measurements]
    if len(set(tags)) != len(tags):
        raise ValueError("measurement tags must be distinct")
    if len(measurements) < 4:
        raise ValueError("need at least four measurements for a three-parameter fit")
    fm = ForwardModel(omega_rf, n_ions, model)
    freq = np.array([m.freq_hz for m in measurements])
    sigma = np.array([m.sigma_hz for m in measurements])

    def residuals(p):
        try:
            pred = fm(p)
        except ForwardModelError as exc:
            log.debug("forward model failed at %s: %s", p, exc)
            return np.full(len(measurements), FAILED_RESIDUAL)
        missing = [t for t in tags if t not in pred]
        if missing:
            raise FitError(f"model does not provide modes {missing}")
        return (np.array([pred[t] for t in tags]) - freq) / sigma

    def jacobian(p):
        jac = np.empty((len(measurements), 3))
        for i in range(3):
            dp = np.zeros(3)
            dp[i] = FD_STEP
            jac[:, i] = (residuals(p + dp) - residuals(p - dp)) / (2 * FD_STEP)
        return jac

    x = initial_guess(measurements, omega_rf) if x0 is None else np.asarray(x0, float)
    best = None
    for attempt in range(max_restarts + 1):
        sol = least_squares(residuals, x, jac=jacobian, method="trf", x_scale="jac",
                            xtol=1e-10, ftol=1e-15, gtol=1e-10, max_nfev=200)
        if best is None or sol.cost < best.cost:
            best = sol
        grad = _scaled_gradient(sol.jac, sol.fun)
        if sol.status in (1, 2, 3, 4) and np.all(np.abs(sol.fun) < FAILED_RESIDUAL) \
                and grad < 1e-6:
            break
        log.info("fit restart %d (status %d, gradient %.3g)", attempt + 1, sol.status, grad)
        x = sol.x
    else:
        raise FitError("least-squares fit did not converge", best=best.x)

    params = tuple(float(v) for v in best.x)
    pred = fm(best.x)
    res = {m.tag: (pred[m.tag] - m.freq_hz) / m.sigma_hz for m in measurements}
    chi2 = float(sum(r * r for r in res.values()))
    dof = len(measurements) - 3
    try:
        cov = np.linalg.inv(best.jac.T @ best.jac)
    except np.linalg.LinAlgError:
        cov = np.full((3, 3), np.nan)
    return FitResult(model=model, params=params,
                     predicted={m.tag: pred[m.tag] for m in measurements} | {
                         k: v for k, v in pred.items() if k in ("cm_x", "cm_y", "cm_z",
                                                                 "zz_a", "zz_b")},
                     residuals=res, chi2=chi2, dof=dof,
                     p_value=chi2_sf(chi2, dof) if dof > 0 else float("nan"),
                     covariance=cov, cfg=fm.trap(best.x), nfev=fm.calls)
