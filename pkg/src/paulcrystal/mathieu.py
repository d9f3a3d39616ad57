"""Single-axis Mathieu stability analysis.

The equation ``y'' + (a - 2 q cos 2xi) y = 0`` has coefficient period pi.
Its monodromy over one period gives the characteristic exponent through
``trace = 2 cos(pi beta)``; only the principal branch ``0 < beta < 1`` is
reported.
"""

from dataclasses import dataclass
from functools import lru_cache
import math

import numpy as np
from scipy.integrate import solve_ivp
from scipy.optimize import brentq

RTOL = 1e-12
ATOL = 1e-12


class MathieuError(ValueError):
    pass


@dataclass(frozen=True)
class MathieuSolution:
    a: float
    q: float
    beta: float | None
    stable: bool
    monodromy: np.ndarray

    @property
    def trace(self):
        return float(np.trace(self.monodromy))


def beta_approx(a, q):
    """Lowest-order exponent ``sqrt(a + q**2/2)``."""
    radicand = a + 0.5 * q * q
    if radicand < 0:
        raise MathieuError(f"a + q^2/2 = {radicand:g} < 0; approximation inapplicable")
    return math.sqrt(radicand)


def _rhs(xi, y, a, q):
    # y holds the two fundamental solutions as columns: [[u1, u2], [v1, v2]]
    c = a - 2.0 * q * math.cos(2.0 * xi)
    return np.array([y[2], y[3], -c * y[0], -c * y[1]])


@lru_cache(maxsize=65536)
def _monodromy(a, q):
    sol = solve_ivp(_rhs, (0.0, math.pi), np.array([1.0, 0.0, 0.0, 1.0]),
                    method="DOP853", rtol=RTOL, atol=ATOL, args=(a, q))
    m = sol.y[:, -1].reshape(2, 2)
    m.setflags(write=False)
    return m


def monodromy(a, q):
    return _monodromy(float(a), float(q))


def beta_exact(a, q):
    m = monodromy(a, q)
    half_trace = 0.5 * np.trace(m)
    stable = abs(half_trace) < 1.0
    beta = math.acos(half_trace) / math.pi if stable else None
    return MathieuSolution(float(a), float(q), beta, stable, m)


def extended_beta(a, q):
    """Continuous, monotone-in-``a`` extension of beta across the first tongue.

    Below the lower edge the value is ``-acosh(tr/2)/pi``; above the upper edge
    it is ``1 + acosh(-tr/2)/pi``.  Used as a root-finding target and as a
    signed stability margin.
    """
    half_trace = 0.5 * np.trace(monodromy(a, q))
    if abs(half_trace) < 1.0:
        return math.acos(half_trace) / math.pi
    if half_trace >= 1.0:
        return -math.acosh(half_trace) / math.pi
    return 1.0 + math.acosh(-half_trace) / math.pi


def a_for_target_beta(q, beta_target, xtol=1e-15):
    """Solve ``beta_exact(a, q).beta == beta_target`` for ``a``."""
    if not 0.0 < beta_target < 1.0:
        raise MathieuError("beta_target must lie in (0, 1)")

    def f(a):
        return extended_beta(a, q) - beta_target

    guess = beta_target**2 - 0.5 * q * q
    step = 0.05 * max(beta_target**2, 0.01)
    lo, hi = guess - step, guess + step
    for _ in range(60):
        flo, fhi = f(lo), f(hi)
        if flo < 0.0 < fhi:
            break
        if flo >= 0.0:
            lo -= step
        if fhi <= 0.0:
            hi += step
        step *= 1.6
    else:
        raise MathieuError(f"no stable root for q={q}, beta={beta_target}")
    a = brentq(f, lo, hi, xtol=xtol, rtol=4 * np.finfo(float).eps, maxiter=200)
    sol = beta_exact(a, q)
    if not sol.stable or abs(sol.beta - beta_target) > 1e-10:
        raise MathieuError(f"root finding failed for q={q}, beta={beta_target}")
    return a
