"""Pairwise Coulomb energy, force and Hessian in dimensionless trap units.

Positions are arrays of shape ``(..., N, 3)``; leading axes are treated as a
batch, which lets the orbit solver evaluate many time samples at once.
Flattened 3N vectors use ion-major ordering ``(x0, y0, z0, x1, ...)``.
"""

import numpy as np


class CoincidentIonsError(ValueError):
    pass


def _pairs(u):
    u = np.asarray(u, dtype=float)
    d = u[..., :, None, :] - u[..., None, :, :]
    r = np.sqrt(np.sum(d * d, axis=-1))
    n = u.shape[-2]
    offdiag = ~np.eye(n, dtype=bool)
    if n > 1 and np.any(r[..., offdiag] <= 0.0):
        raise CoincidentIonsError("two or more ions occupy the same position")
    r = np.where(offdiag, r, np.inf)
    return d, r


def coulomb_energy(u):
    u = np.asarray(u, dtype=float)
    n = u.shape[-2]
    if n < 2:
        return np.zeros(u.shape[:-2]) if u.ndim > 2 else 0.0
    _, r = _pairs(u)
    iu = np.triu_indices(n, 1)
    return np.sum(1.0 / r[..., iu[0], iu[1]], axis=-1)


def coulomb_force(u):
    """Force on each ion, ``sum_m (u_n - u_m) / |u_n - u_m|**3``."""
    d, r = _pairs(u)
    return np.sum(d / r[..., None] ** 3, axis=-2)


def coulomb_hessian(u):
    """Second derivatives of the pair energy, shape ``(..., 3N, 3N)``."""
    d, r = _pairs(u)
    n = d.shape[-2]
    inv3 = 1.0 / r**3
    inv5 = 1.0 / r**5
    eye = np.eye(3)
    k = (-inv3[..., None, None] * eye
         + 3.0 * inv5[..., None, None] * d[..., :, :, :, None] * d[..., :, :, None, :])
    blocks = -k
    idx = np.arange(n)
    blocks[..., idx, idx, :, :] = np.sum(k, axis=-3)
    # (..., N, N, 3, 3) -> (..., N, 3, N, 3)
    blocks = np.swapaxes(blocks, -3, -2)
    return blocks.reshape(blocks.shape[:-4] + (3 * n, 3 * n))
