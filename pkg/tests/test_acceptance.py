"""Acceptance checks: one PASS/FAIL line per criterion."""

import numpy as np
import pytest

from paulcrystal.cli import Q_SWEEP_GRID, parse_range
from paulcrystal.equilibrium import find_equilibrium, pseudo_gradient, pseudo_hessian
from paulcrystal.mathieu import a_for_target_beta, beta_exact
from paulcrystal.modes_flt import flt_spectrum, symplectic_defect, zz_shift_vs_q
from paulcrystal.modes_ppt import CM_TAGS, ppt_modes, ppt_predict_from_cm
from paulcrystal.orbit import find_orbit
from paulcrystal.trap_model import TrapConfig
from paulcrystal.transitions import scan_alpha_flt, scan_alpha_ppt

from conftest import RF_SPECTROSCOPY

TABLE_FLT_KHZ = {"zz_b": 715.1, "zz_a": 1078.5, "cm_z": 1239.5, "cm_y": 1690.7}


@pytest.fixture
def report(capsys):
    def emit(number, ok, detail):
        with capsys.disabled():
            print(f"\n[{'PASS' if ok else 'FAIL'}] criterion {number}: {detail}")
        assert ok, detail
    return emit


def test_criterion_1_flt_table(flt_fit, report):
    got = {t: flt_fit.predicted[t] / 1e3 for t in TABLE_FLT_KHZ}
    worst = max(abs(got[t] - v) for t, v in TABLE_FLT_KHZ.items())
    shown = ", ".join(f"{t}={got[t]:.2f}" for t in TABLE_FLT_KHZ)
    report(1, worst <= 0.5, f"FLT fit {shown} kHz; max deviation {worst:.3f} kHz (tol 0.5)")


def test_criterion_2_ppt_prediction(report):
    p = ppt_predict_from_cm(1238e3, 1695e3, RF_SPECTROSCOPY, 2e3, 3e3)
    vals = (p.zz_b_hz / 1e3, p.zz_a_hz / 1e3, p.sigma_zz_b_hz / 1e3, p.sigma_zz_a_hz / 1e3)
    ok = (abs(vals[0] - 730) <= 2 and abs(vals[1] - 1041) <= 2
          and abs(vals[2] - 14) <= 3 and abs(vals[3] - 12) <= 3)
    report(2, ok, f"PPT zz_b={vals[0]:.1f}({vals[2]:.1f}) zz_a={vals[1]:.1f}({vals[3]:.1f}) "
                  "kHz; target 730(14), 1041(12)")


def test_criterion_3_model_discrimination(flt_fit, ppt_fit, report):
    gap = ppt_fit.chi2 - flt_fit.chi2
    ok = 0.10 <= flt_fit.p_value <= 0.40 and ppt_fit.p_value < 1e-8 and gap > 25
    report(3, ok, f"p(FLT)={flt_fit.p_value:.3f} (chi2 {flt_fit.chi2:.2f}), "
                  f"p(PPT)={ppt_fit.p_value:.2e} (chi2 {ppt_fit.chi2:.2f}), gap {gap:.1f}")


def test_criterion_4_discrepancy(measurements, report):
    f = {m.tag: m for m in measurements}
    p = ppt_predict_from_cm(f["cm_z"].freq_hz, f["cm_y"].freq_hz, RF_SPECTROSCOPY,
                            f["cm_z"].sigma_hz, f["cm_y"].sigma_hz)
    da = abs(p.zz_a_hz - f["zz_a"].freq_hz) / 1e3
    db = abs(p.zz_b_hz - f["zz_b"].freq_hz) / 1e3
    ok = abs(da - 37) <= 3 and abs(db - 15) <= 3
    report(4, ok, f"|PPT - exp|: zz_a {da:.1f} kHz (37 +- 3), zz_b {db:.1f} kHz (15 +- 3)")


def test_criterion_5_critical_alpha(report):
    q = 0.1
    by = 0.3 * q
    base = TrapConfig(omega_rf=RF_SPECTROSCOPY, q_y=q, a_y=a_for_target_beta(q, by),
                      a_z=0.35 * by * by)
    ppt = scan_alpha_ppt(3, base, (0.3, 0.6), resolution=1e-4).critical_alphas[0]
    flt = scan_alpha_flt(3, base, (0.3, 0.6), resolution=1e-4).critical_alphas[0]
    rel = abs(flt.alpha - ppt.alpha) / ppt.alpha
    brackets = ppt.lower <= 5 / 12 <= ppt.upper and ppt.upper - ppt.lower <= 1e-4
    report(5, brackets and rel <= 0.02,
           f"PPT bracket [{ppt.lower:.6f}, {ppt.upper:.6f}] vs 5/12; "
           f"FLT alpha_c={flt.alpha:.5f} at q=0.1, {100 * rel:.2f}% from PPT (tol 2%)")


def test_criterion_6_q_sweep(flt_fit, report):
    grid = sorted(set(parse_range(Q_SWEEP_GRID, with_step=True)) | {flt_fit.q_y})
    rows = zz_shift_vs_q(RF_SPECTROSCOPY, flt_fit.predicted["cm_y"],
                         flt_fit.predicted["cm_z"], grid)
    stable = []
    for r in rows:
        if not r.ok:
            break
        stable.append(r)
    zz_a = np.array([r.zz_a_hz for r in stable])
    monotone = bool(np.all(np.diff(zz_a) > 0))
    shift = max(r.zz_a_hz / r.zz_a_ppt_hz - 1 for r in stable)
    at_fit = next(r for r in stable if r.q == flt_fit.q_y)
    match = max(abs(at_fit.zz_a_hz - flt_fit.predicted["zz_a"]),
                abs(at_fit.zz_b_hz - flt_fit.predicted["zz_b"])) / 1e3
    ok = monotone and shift >= 0.10 and match <= 1.0
    report(6, ok, f"{len(stable)} stable rows up to q={stable[-1].q:.2f}, zz_a monotone: "
                  f"{monotone}; max FLT-PPT shift {100 * shift:.1f}%; "
                  f"q={at_fit.q:.4f} row off by {match:.4f} kHz")


def test_criterion_7_property_suites(spectroscopy_trap, imaging_trap, report):
    cfg = spectroscopy_trap
    conf = find_equilibrium(3, cfg)
    orbit = find_orbit(cfg, conf)
    spec = flt_spectrum(orbit)
    checks = {}

    checks["symplectic"] = symplectic_defect(spec.monodromy) < 1e-8
    lam = np.linalg.eigvals(spec.monodromy)
    checks["pairing"] = all(np.min(np.abs(lam - 1 / x)) < 1e-8 for x in lam)
    checks["cm_exponents"] = all(
        abs(spec.mode_set[t].beta - beta_exact(cfg.a[i], cfg.q[i]).beta) < 1e-9
        for i, t in enumerate(CM_TAGS))

    rel = []
    for q in (0.2, 0.1, 0.05):
        c = TrapConfig(omega_rf=RF_SPECTROSCOPY, q_y=q, a_y=a_for_target_beta(q, 0.02),
                       a_z=0.014**2)
        eq = find_equilibrium(3, c, seed_strategy="chains")
        p, f = ppt_modes(eq, c), flt_spectrum(find_orbit(c, eq)).mode_set
        rel.append([abs(f[t].beta / p[t].beta - 1) for t in ("zz_a", "zz_b")])
    slopes = np.log2(np.array(rel[:-1]) / np.array(rel[1:]))
    checks["richardson"] = bool(np.all(np.abs(slopes - 2) <= 0.2))

    rng = np.random.default_rng(11)
    worst_fd = 0.0
    for _ in range(10):
        u = rng.normal(size=(3, 3)) * 5
        h = 1e-5
        fd = np.column_stack([
            (pseudo_gradient(u.ravel() + h * e, cfg).ravel()
             - pseudo_gradient(u.ravel() - h * e, cfg).ravel()) / (2 * h)
            for e in np.eye(9)])
        worst_fd = max(worst_fd, np.max(np.abs(pseudo_hessian(u, cfg) - fd)))
    checks["hessian_fd"] = worst_fd < 1e-6

    gnorms = [find_equilibrium(n, imaging_trap).gradient_norm for n in range(1, 18)]
    checks["gradient_norms"] = max(gnorms) < 1e-10

    c = orbit.coefficients
    ratio = c[1, :, 1] / c[0, :, 1]
    checks["c1_over_c0"] = bool(np.all(np.abs(ratio + cfg.q_y / 2) <= cfg.q_y**2))

    failed = [k for k, v in checks.items() if not v]
    report(7, not failed,
           f"{len(checks) - len(failed)}/{len(checks)} property checks "
           f"(Richardson slopes {np.round(slopes.ravel(), 2).tolist()}, "
           f"max gradient norm {max(gnorms):.1e}, FD Hessian error {worst_fd:.1e})"
           + (f"; failed: {failed}" if failed else ""))
