"""Pseudopotential normal modes and mode identification."""

from dataclasses import dataclass, field, replace
import math

import numpy as np

from .equilibrium import find_equilibrium, pseudo_hessian, NEG_EIG_TOL
from .trap_model import trap_from_frequencies

CM_OVERLAP = 0.999
AMBIGUITY = 0.01
CM_TAGS = ("cm_x", "cm_y", "cm_z")


class ModeError(RuntimeError):
    pass


@dataclass(frozen=True)
class Mode:
    beta: float
    freq_hz: float
    vector: np.ndarray
    tag: str = ""
    degenerate_group: int | None = None


@dataclass(frozen=True)
class ModeSet:
    method: str
    modes: tuple
    cfg: object = field(repr=False)
    configuration: object = field(default=None, repr=False)

    def __len__(self):
        return len(self.modes)

    def __iter__(self):
        return iter(self.modes)

    def __getitem__(self, tag):
        for m in self.modes:
            if m.tag == tag:
                return m
        raise KeyError(tag)

    def __contains__(self, tag):
        return any(m.tag == tag for m in self.modes)

    @property
    def frequencies_hz(self):
        return np.array([m.freq_hz for m in self.modes])

    @property
    def betas(self):
        return np.array([m.beta for m in self.modes])

    @property
    def vectors(self):
        return np.array([m.vector for m in self.modes]).T

    def by_tag(self):
        return {m.tag: m.freq_hz for m in self.modes}


def ppt_modes(config, cfg, tag=True):
    """Diagonalize the pseudopotential Hessian at an equilibrium."""
    hess = pseudo_hessian(config.positions, cfg)
    lam, vec = np.linalg.eigh(hess)
    if lam[0] < -NEG_EIG_TOL:
        raise ModeError(f"not a stable equilibrium (Hessian eigenvalue {lam[0]:.3g})")
    groups = degenerate_groups(lam)
    vec = align_degenerate(vec, groups, config.n_ions)
    beta = np.sqrt(np.clip(lam, 0.0, None))
    to_hz = cfg.omega_rf / (4 * math.pi)
    modes = tuple(Mode(beta=float(b), freq_hz=float(b * to_hz), vector=_fix_sign(v),
                       degenerate_group=g)
                  for b, v, g in zip(beta, vec.T, groups))
    ms = ModeSet(method="PPT", modes=modes, cfg=cfg, configuration=config)
    return tag_modes(ms, config) if tag else ms


def degenerate_groups(values, tol=1e-9):
    """Group label per sorted value; ``None`` for non-degenerate entries."""
    values = np.asarray(values)
    labels = [None] * len(values)
    g = 0
    i = 0
    while i < len(values):
        j = i + 1
        while j < len(values) and abs(values[j] - values[j - 1]) < tol:
            j += 1
        if j - i > 1:
            for k in range(i, j):
                labels[k] = g
            g += 1
        i = j
    return labels


def align_degenerate(vec, groups, n_ions):
    """Rotate each degenerate eigenvector block so that any uniform
    translation lying in the block becomes one of its basis vectors."""
    vec = np.array(vec, dtype=float)
    for g in {x for x in groups if x is not None}:
        cols = [i for i, x in enumerate(groups) if x == g]
        block = vec[:, cols]
        basis = []
        for axis in range(3):
            t = _translation(n_ions, axis)
            proj = block @ (block.T @ t)
            if np.linalg.norm(proj) > CM_OVERLAP:
                basis.append(proj / np.linalg.norm(proj))
        for v in block.T:
            w = v - sum((b @ v) * b for b in basis)
            if np.linalg.norm(w) > 1e-6 and len(basis) < len(cols):
                basis.append(w / np.linalg.norm(w))
        vec[:, cols] = np.array(basis[:len(cols)]).T
    return vec


def _fix_sign(v):
    v = np.asarray(v, dtype=float)
    v = v / np.linalg.norm(v)
    i = np.argmax(np.abs(v) > 1e-8 * np.max(np.abs(v)))
    return -v if v[i] < 0 else v


def _translation(n_ions, axis):
    t = np.zeros((n_ions, 3))
    t[:, axis] = 1.0
    return t.reshape(-1) / math.sqrt(n_ions)


def tag_modes(modes, config):
    """Attach identity tags to the modes of ``modes``.

    c.m. modes are recognised by their overlap with uniform translations.
    For planar (yz) configurations the two lowest in-plane non-c.m. modes are
    the zigzag modes: ``zz_a`` is the one that better matches displacing
    every ion along its own equilibrium y offset, ``zz_b`` the other.  All
    remaining modes are ``other_<i>`` in order of increasing frequency.
    """
    pos = np.asarray(config.positions)
    n = pos.shape[0]
    vecs = [np.asarray(m.vector) / np.linalg.norm(m.vector) for m in modes.modes]
    tags = [None] * len(vecs)

    for axis, name in enumerate(CM_TAGS):
        t = _translation(n, axis)
        ov = np.array([abs(v @ t) for v in vecs])
        hits = [i for i in np.flatnonzero(ov > CM_OVERLAP) if tags[i] is None]
        if len(hits) != 1:
            raise ModeError(f"expected one {name} mode, found {len(hits)}")
        tags[hits[0]] = name

    if config.classification == "planar_yz" and n >= 3:
        pattern = np.zeros((n, 3))
        pattern[:, 1] = pos[:, 1] - pos[:, 1].mean()
        pattern = pattern.reshape(-1) / np.linalg.norm(pattern)
        planar = [i for i, v in enumerate(vecs)
                  if tags[i] is None and np.linalg.norm(v.reshape(n, 3)[:, 0]) < 0.5]
        if len(planar) < 2:
            raise ModeError("fewer than two in-plane modes available for zigzag tagging")
        lowest = sorted(planar, key=lambda i: modes.modes[i].freq_hz)[:2]
        ov = sorted(((abs(vecs[i] @ pattern), i) for i in lowest), reverse=True)
        if ov[0][0] - ov[1][0] < AMBIGUITY:
            raise ModeError(f"ambiguous zz_a candidates: modes {ov[0][1]} and {ov[1][1]} "
                            f"(overlaps {ov[0][0]:.4f}, {ov[1][0]:.4f})")
        tags[ov[0][1]] = "zz_a"
        tags[ov[1][1]] = "zz_b"

    k = 0
    for i in range(len(tags)):
        if tags[i] is None:
            tags[i] = f"other_{k}"
            k += 1
    new = tuple(replace(m, tag=t) for m, t in zip(modes.modes, tags))
    return replace(modes, modes=new)


def _zigzag_window_check(config, cfg):
    bx, by, bz = cfg.betas
    alpha = (bz / by) ** 2
    if config.classification != "planar_yz" or alpha > 1.0 - 1e-9 or bx <= by:
        raise ModeError(f"no planar zigzag at alpha_y = {alpha:.4f} "
                        f"(configuration is {config.classification})")


def ppt_zigzag_frequencies(omega_rf, f_z, f_y, f_x=None, n_ions=3):
    """zz_b and zz_a (Hz) predicted from the c.m. frequencies in the pseudopotential."""
    if f_x is None:
        f_x = 2.0 * f_y
    cfg = trap_from_frequencies(omega_rf, f_x, f_y, f_z)
    config = find_equilibrium(n_ions, cfg, seed_strategy="chains")
    _zigzag_window_check(config, cfg)
    ms = ppt_modes(config, cfg)
    return ms["zz_b"].freq_hz, ms["zz_a"].freq_hz


@dataclass(frozen=True)
class PPTPrediction:
    zz_b_hz: float
    zz_a_hz: float
    sigma_zz_b_hz: float
    sigma_zz_a_hz: float
    contributions: dict


def ppt_predict_from_cm(f_z, f_y, omega_rf, sigma_z=0.0, sigma_y=0.0, f_x=None, n_ions=3):
    """Predict the zigzag frequencies from measured c.m. frequencies (Hz).

    Each input is shifted forward by its 1-sigma uncertainty; the resulting
    frequency changes are added in absolute value, i.e. as worst-case linear
    error propagation.  The per-input changes are returned in
    ``contributions``.
    """
    zz_b, zz_a = ppt_zigzag_frequencies(omega_rf, f_z, f_y, f_x, n_ions)
    contributions = {}
    for name, fz, fy, s in (("f_z", f_z + sigma_z, f_y, sigma_z),
                            ("f_y", f_z, f_y + sigma_y, sigma_y)):
        if s > 0:
            b, a = ppt_zigzag_frequencies(omega_rf, fz, fy, f_x, n_ions)
            contributions[name] = (b - zz_b, a - zz_a)
        else:
            contributions[name] = (0.0, 0.0)
    sig_b = sum(abs(c[0]) for c in contributions.values())
    sig_a = sum(abs(c[1]) for c in contributions.values())
    return PPTPrediction(zz_b, zz_a, sig_b, sig_a, contributions)
