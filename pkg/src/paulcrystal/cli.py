"""Command-line front end.

All frequencies on the command line and in output files are in kHz; the
library works in Hz and dimensionless units internally.
"""

import argparse
from concurrent.futures import ProcessPoolExecutor
import contextlib
import csv
import json
import logging
import math
import os
import sys
from importlib import resources

import numpy as np
from scipy import constants

from . import __version__
from .equilibrium import find_equilibrium
from .fitting import fit, load_measurements
from .mathieu import beta_exact
from .modes_flt import flt_spectrum, zz_shift_vs_q
from .modes_ppt import ppt_modes, ppt_predict_from_cm
from .orbit import find_orbit, orbit_state
from .trap_model import PhysicalTrap, TrapConfig, from_physical, trap_from_frequencies
from .transitions import alpha_of, scan_alpha_flt, scan_alpha_ppt

log = logging.getLogger("paulcrystal")

DEFAULT_SEED = 0
JOBS_ENV = "PAULCRYSTAL_JOBS"
# rf frequency and c.m. frequencies (kHz) of the trap behind the bundled data
DEFAULT_RF_KHZ = 35070.0
DEFAULT_CM_KHZ = (2940.0, 1695.0, 1238.0)
Q_SWEEP_GRID = "0.16:0.74:0.02"


class CLIError(Exception):
    pass


def bundled_dataset():
    return resources.files("paulcrystal") / "data" / "table1_fig3.csv"


def schema_path(name):
    return resources.files("paulcrystal") / "schemas" / f"{name}.schema.json"


# -- output helpers --------------------------------------------------------------

def _num(x, digits=12):
    x = float(x)
    if not math.isfinite(x):
        return None
    return float(f"{x:.{digits}g}")


def clean(obj):
    """Convert numpy containers to JSON-ready values with rounded floats."""
    if isinstance(obj, dict):
        return {str(k): clean(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [clean(v) for v in obj]
    if isinstance(obj, np.ndarray):
        return clean(obj.tolist())
    if isinstance(obj, (bool, np.bool_)):
        return bool(obj)
    if isinstance(obj, (int, np.integer)):
        return int(obj)
    if isinstance(obj, (float, np.floating)):
        return _num(obj)
    return obj


def _khz(hz):
    return _num(hz / 1e3)


@contextlib.contextmanager
def _sink(path):
    if path in (None, "-"):
        yield sys.stdout
    else:
        with open(path, "w", newline="") as fh:
            yield fh


def write_json(obj, path):
    with _sink(path) as fh:
        json.dump(clean(obj), fh, indent=2, sort_keys=True)
        fh.write("\n")


def write_csv(header, rows, path):
    with _sink(path) as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(header)
        for row in rows:
            w.writerow(["" if v is None else (repr(_num(v)) if isinstance(v, float) else v)
                        for v in row])


# -- trap sources ------------------------------------------------------------------

def parse_config_file(path):
    """Plain ``key = value`` lines; ``#`` starts a comment."""
    values = {}
    with open(path) as fh:
        for lineno, line in enumerate(fh, 1):
            line = line.split("#", 1)[0].strip()
            if not line:
                continue
            if "=" not in line:
                raise CLIError(f"{path}:{lineno}: expected 'key = value'")
            key, val = (s.strip() for s in line.split("=", 1))
            try:
                values[key] = float(val)
            except ValueError as exc:
                raise CLIError(f"{path}:{lineno}: {key} is not a number") from exc
    return values


def trap_from_mapping(values):
    keys = set(values)
    if {"omega_rf_hz", "q_y", "a_y", "a_z"} <= keys:
        return TrapConfig(omega_rf=2 * math.pi * values["omega_rf_hz"], q_y=values["q_y"],
                          a_y=values["a_y"], a_z=values["a_z"])
    if {"omega_rf_hz", "cm_x_khz", "cm_y_khz", "cm_z_khz"} <= keys:
        return trap_from_frequencies(2 * math.pi * values["omega_rf_hz"],
                                     values["cm_x_khz"] * 1e3, values["cm_y_khz"] * 1e3,
                                     values["cm_z_khz"] * 1e3)
    physical = {"omega_rf_hz", "u_rf", "u_dc", "gamma_x", "gamma_y", "gamma_z",
                "gamma_prime_x", "gamma_prime_y", "ion_mass_amu"}
    if physical <= keys:
        return from_physical(PhysicalTrap(
            omega_rf=2 * math.pi * values["omega_rf_hz"], u_rf=values["u_rf"],
            u_dc=values["u_dc"],
            gamma=(values["gamma_x"], values["gamma_y"], values["gamma_z"]),
            gamma_prime=(values["gamma_prime_x"], values["gamma_prime_y"],
                         values.get("gamma_prime_z", math.inf)),
            ion_mass=values["ion_mass_amu"] * constants.atomic_mass,
            ion_charge=values.get("ion_charge_e", 1.0) * constants.e))
    raise CLIError("config needs omega_rf_hz with q_y/a_y/a_z, cm_*_khz, "
                   "or the physical-trap key set")


def resolve_trap(args):
    """Trap from --config, --cm-khz or inline Mathieu parameters.

    ``--rf-khz`` may accompany the last two; a config file carries its own.
    """
    inline = [args.q_y, args.a_y, args.a_z]
    has_inline = any(v is not None for v in inline)
    sources = sum([args.config is not None, args.cm_khz is not None, has_inline])
    if sources > 1:
        raise CLIError("give exactly one trap source: --config, --cm-khz or inline parameters")
    if args.config is not None and args.rf_khz is not None:
        raise CLIError("--rf-khz conflicts with --config (use omega_rf_hz in the file)")
    rf = 2 * math.pi * (args.rf_khz if args.rf_khz is not None else DEFAULT_RF_KHZ) * 1e3
    if args.config is not None:
        return trap_from_mapping(parse_config_file(args.config))
    if args.cm_khz is not None:
        fx, fy, fz = _floats(args.cm_khz, 3, "--cm-khz")
        return trap_from_frequencies(rf, fx * 1e3, fy * 1e3, fz * 1e3)
    if has_inline:
        if any(v is None for v in inline):
            raise CLIError("inline trap needs --q-y, --a-y and --a-z")
        return TrapConfig(omega_rf=rf, q_y=args.q_y, a_y=args.a_y, a_z=args.a_z)
    return trap_from_frequencies(rf, *(f * 1e3 for f in DEFAULT_CM_KHZ))


def _floats(text, n, name):
    try:
        vals = [float(v) for v in text.split(",")]
    except ValueError as exc:
        raise CLIError(f"{name}: expected {n} comma-separated numbers") from exc
    if len(vals) != n:
        raise CLIError(f"{name}: expected {n} comma-separated numbers")
    return vals


def parse_range(text, with_step=False):
    parts = text.split(":")
    try:
        vals = [float(p) for p in parts]
    except ValueError as exc:
        raise CLIError(f"malformed range {text!r}") from exc
    if with_step:
        if len(vals) != 3 or vals[2] <= 0 or vals[1] < vals[0]:
            raise CLIError(f"range {text!r} must be start:stop:step with step > 0")
        n = int(round((vals[1] - vals[0]) / vals[2]))
        return [_num(vals[0] + i * vals[2]) for i in range(n + 1)]
    if len(vals) != 2 or vals[1] <= vals[0]:
        raise CLIError(f"range {text!r} must be lo:hi with lo < hi")
    return tuple(vals)


def trap_summary(cfg):
    ax, ay = alpha_of(cfg)
    return {
        "rf_khz": cfg.rf_hz / 1e3, "q_y": cfg.q_y, "a_x": cfg.a_x, "a_y": cfg.a_y,
        "a_z": cfg.a_z, "beta": cfg.betas, "cm_khz": cfg.beta_to_hz(cfg.betas) / 1e3,
        "alpha_x": ax, "alpha_y": ay,
    }


def _jobs(args):
    if args.jobs is not None:
        return max(args.jobs, 1)
    return max(int(os.environ.get(JOBS_ENV, "1")), 1)


@contextlib.contextmanager
def _mapper(jobs):
    if jobs <= 1:
        yield map
    else:
        with ProcessPoolExecutor(max_workers=jobs) as pool:
            yield pool.map


# -- subcommands ---------------------------------------------------------------------

def cmd_mathieu(args):
    sol = beta_exact(args.a, args.q)
    write_json({"a": args.a, "q": args.q, "beta": sol.beta, "stable": sol.stable},
               args.output)


def cmd_equilibrium(args):
    cfg = resolve_trap(args)
    conf = find_equilibrium(args.n, cfg, rng_seed=args.seed)
    write_json({"n_ions": args.n, "trap": trap_summary(cfg), "positions": conf.positions,
                "classification": conf.classification, "energy": conf.energy,
                "gradient_norm": conf.gradient_norm}, args.output)
    if args.csv:
        write_csv(["ion", "x", "y", "z"],
                  [[i, *map(float, p)] for i, p in enumerate(conf.positions)], args.csv)


def cmd_orbit(args):
    cfg = resolve_trap(args)
    conf = find_equilibrium(args.n, cfg, rng_seed=args.seed)
    orbit = find_orbit(cfg, conf)
    xi = np.pi * np.arange(args.xi_samples) / args.xi_samples
    pos, vel = orbit_state(orbit, xi)
    rows = [[float(x), i, *map(float, pos[j, i]), *map(float, vel[j, i])]
            for j, x in enumerate(xi) for i in range(args.n)]
    write_csv(["xi", "ion", "x", "y", "z", "vx", "vy", "vz"], rows, args.output)


def _modes_payload(ms):
    return [{"tag": m.tag, "freq_khz": m.freq_hz / 1e3, "beta": m.beta, "vector": m.vector}
            for m in ms]


def cmd_modes(args):
    cfg = resolve_trap(args)
    conf = find_equilibrium(args.n, cfg, rng_seed=args.seed)
    if args.method == "ppt":
        ms = ppt_modes(conf, cfg)
    else:
        ms = flt_spectrum(find_orbit(cfg, conf)).mode_set
    write_json({"method": ms.method, "n_ions": args.n, "trap": trap_summary(cfg),
                "classification": conf.classification, "modes": _modes_payload(ms)},
               args.output)


def _scan_payload(scan):
    return {
        "method": scan.method,
        "critical_alphas": [
            {"alpha": c.alpha, "lower": c.lower, "upper": c.upper, "below": c.below,
             "above": c.above, "first_order": c.first_order,
             "soft_mode_alpha": c.soft_mode_alpha} for c in scan.critical_alphas],
        "hysteresis_alphas": scan.hysteresis,
    }


def cmd_sweep_alpha(args):
    cfg = resolve_trap(args)
    lo, hi = parse_range(args.range)
    methods = ["ppt", "flt"] if args.method == "both" else [args.method]
    scans = []
    for m in methods:
        fn = scan_alpha_ppt if m == "ppt" else scan_alpha_flt
        scans.append(fn(args.n, cfg, (lo, hi), resolution=args.resolution,
                        grid_step=args.step, rng_seed=args.seed))
    if args.csv:
        rows = [[s.method, float(a), c, hz / 1e3]
                for s in scans for a, c, hz in zip(s.alpha_grid, s.classifications,
                                                   s.lowest_mode_hz)]
        write_csv(["method", "alpha", "classification", "lowest_mode_khz"], rows, args.csv)
    write_json({"n_ions": args.n, "trap": trap_summary(cfg), "range": [lo, hi],
                "resolution": args.resolution, "scans": [_scan_payload(s) for s in scans]},
               args.output)


def _sweep_rows(rows):
    return [[r.q, _khz(r.zz_a_hz), _khz(r.zz_b_hz), _khz(r.zz_a_ppt_hz), _khz(r.zz_b_ppt_hz),
             _khz(r.cm_x_hz), int(r.ok), r.error] for r in rows]


SWEEP_HEADER = ["q", "zz_a_khz", "zz_b_khz", "zz_a_ppt_khz", "zz_b_ppt_khz", "cm_x_khz",
                "ok", "error"]


def cmd_sweep_q(args):
    rf = 2 * math.pi * (args.rf_khz if args.rf_khz is not None else DEFAULT_RF_KHZ) * 1e3
    fy, fz = _floats(args.cm_yz_khz, 2, "--cm-yz-khz")
    grid = parse_range(args.grid, with_step=True)
    with _mapper(_jobs(args)) as mapper:
        rows = zz_shift_vs_q(rf, fy * 1e3, fz * 1e3, grid, n_ions=args.n, map_fn=mapper)
    write_csv(SWEEP_HEADER, _sweep_rows(rows), args.output)


def _fit_payload(res):
    return {
        "model": res.model,
        "params": dict(zip(("q_y", "a_z", "a_y"), res.params)) | {"a_x": res.a_x},
        "param_sigma": dict(zip(("q_y", "a_z", "a_y"), res.param_sigma)),
        "predicted_khz": {k: v / 1e3 for k, v in res.predicted.items()},
        "residuals": res.residuals, "chi2": res.chi2, "dof": res.dof,
        "p_value": res.p_value,
    }


def cmd_fit(args):
    rf = 2 * math.pi * (args.rf_khz if args.rf_khz is not None else DEFAULT_RF_KHZ) * 1e3
    data = args.data or bundled_dataset()
    res = fit(load_measurements(data), rf, n_ions=args.n, model=args.model)
    write_json(_fit_payload(res), args.output)


def compare_models(rf_khz=DEFAULT_RF_KHZ, data=None):
    rf = 2 * math.pi * rf_khz * 1e3
    meas = load_measurements(data or bundled_dataset())
    f = {m.tag: m for m in meas}
    flt = fit(meas, rf, model="flt")
    ppt_fit = fit(meas, rf, model="ppt")
    pred = ppt_predict_from_cm(f["cm_z"].freq_hz, f["cm_y"].freq_hz, rf,
                               f["cm_z"].sigma_hz, f["cm_y"].sigma_hz,
                               f_x=f["cm_x"].freq_hz if "cm_x" in f else None)
    return {
        "rf_khz": rf_khz,
        "experiment": {m.tag: {"freq_khz": m.freq_hz / 1e3, "sigma_khz": m.sigma_hz / 1e3}
                       for m in meas},
        "ppt_prediction": {"zz_b_khz": pred.zz_b_hz / 1e3, "zz_a_khz": pred.zz_a_hz / 1e3,
                           "sigma_zz_b_khz": pred.sigma_zz_b_hz / 1e3,
                           "sigma_zz_a_khz": pred.sigma_zz_a_hz / 1e3},
        "flt_fit": _fit_payload(flt),
        "ppt_fit": _fit_payload(ppt_fit),
    }


def format_comparison(t):
    cols = ["zz_b", "zz_a", "cm_z", "cm_y", "cm_x"]
    exp = t["experiment"]
    lines = [f"{'':6}" + "".join(f"{c:>14}" for c in cols)]
    lines.append(f"{'Exp.':6}" + "".join(
        f"{exp[c]['freq_khz']:>9.1f}({exp[c]['sigma_khz']:g})".rjust(14) if c in exp else " " * 14
        for c in cols))
    p = t["ppt_prediction"]
    lines.append(f"{'PPT':6}" + f"{p['zz_b_khz']:.1f}({p['sigma_zz_b_khz']:.0f})".rjust(14)
                 + f"{p['zz_a_khz']:.1f}({p['sigma_zz_a_khz']:.0f})".rjust(14))
    fl = t["flt_fit"]["predicted_khz"]
    lines.append(f"{'FLT':6}" + "".join(f"{fl[c]:>14.1f}" for c in cols))
    for name in ("flt_fit", "ppt_fit"):
        r = t[name]
        lines.append(f"{name}: chi2 = {r['chi2']:.3f}, dof = {r['dof']}, "
                     f"p = {r['p_value']:.3g}")
    return "\n".join(lines)


def cmd_reproduce_table1(args):
    t = compare_models(data=args.data)
    print(format_comparison(t))
    if args.output:
        write_json(t, args.output)


def cmd_reproduce_fig4(args):
    t = compare_models(data=args.data)
    fl = t["flt_fit"]
    q_fit = fl["params"]["q_y"]
    fy, fz = fl["predicted_khz"]["cm_y"], fl["predicted_khz"]["cm_z"]
    grid = sorted(set(parse_range(args.grid, with_step=True)) | {q_fit})
    rf = 2 * math.pi * DEFAULT_RF_KHZ * 1e3
    with _mapper(_jobs(args)) as mapper:
        rows = zz_shift_vs_q(rf, fy * 1e3, fz * 1e3, grid, map_fn=mapper)
    write_csv(SWEEP_HEADER, _sweep_rows(rows), args.output)


# -- parser --------------------------------------------------------------------------

def _add_trap(p):
    g = p.add_argument_group("trap source (exactly one; default: the bundled-data trap)")
    g.add_argument("--config", help="key = value trap file")
    g.add_argument("--cm-khz", help="c.m. frequencies fx,fy,fz in kHz")
    g.add_argument("--rf-khz", type=float, help="rf frequency Omega/2pi in kHz")
    g.add_argument("--q-y", type=float)
    g.add_argument("--a-y", type=float)
    g.add_argument("--a-z", type=float)


def _add_common(p):
    p.add_argument("--output", "-o", default=None, help="output file (default stdout)")
    p.add_argument("--seed", type=int, default=DEFAULT_SEED, help="PRNG seed")
    p.add_argument("--jobs", type=int, default=None,
                   help=f"worker processes for sweeps (env {JOBS_ENV})")


def build_parser():
    parser = argparse.ArgumentParser(prog="paulcrystal", description=__doc__.splitlines()[0])
    parser.add_argument("--version", action="version", version=__version__)
    parser.add_argument("-v", "--verbose", action="store_true")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("mathieu", help="exact Mathieu exponent")
    p.add_argument("--a", type=float, required=True)
    p.add_argument("--q", type=float, required=True)
    _add_common(p)
    p.set_defaults(func=cmd_mathieu)

    p = sub.add_parser("equilibrium", help="pseudopotential equilibrium")
    p.add_argument("--n", type=int, required=True)
    p.add_argument("--csv", help="also write positions as CSV")
    _add_trap(p)
    _add_common(p)
    p.set_defaults(func=cmd_equilibrium)

    p = sub.add_parser("orbit", help="sampled periodic micromotion orbit (CSV)")
    p.add_argument("--n", type=int, required=True)
    p.add_argument("--xi-samples", type=int, default=64)
    _add_trap(p)
    _add_common(p)
    p.set_defaults(func=cmd_orbit)

    p = sub.add_parser("modes", help="normal modes (JSON)")
    p.add_argument("--n", type=int, required=True)
    p.add_argument("--method", choices=("ppt", "flt"), default="flt")
    _add_trap(p)
    _add_common(p)
    p.set_defaults(func=cmd_modes)

    p = sub.add_parser("sweep-alpha", help="structural transitions versus alpha")
    p.add_argument("--n", type=int, required=True)
    p.add_argument("--range", required=True, help="lo:hi")
    p.add_argument("--method", choices=("ppt", "flt", "both"), default="ppt")
    p.add_argument("--resolution", type=float, default=0.005)
    p.add_argument("--step", type=float, default=0.02, help="coarse grid step")
    p.add_argument("--csv", help="per-alpha CSV output")
    _add_trap(p)
    _add_common(p)
    p.set_defaults(func=cmd_sweep_alpha)

    p = sub.add_parser("sweep-q", help="zigzag frequencies versus q at fixed c.m. (CSV)")
    p.add_argument("--grid", default="0.02:0.50:0.02", help="q0:q1:step")
    p.add_argument("--cm-yz-khz", default=f"{DEFAULT_CM_KHZ[1]},{DEFAULT_CM_KHZ[2]}")
    p.add_argument("--rf-khz", type=float)
    p.add_argument("--n", type=int, default=3)
    _add_common(p)
    p.set_defaults(func=cmd_sweep_q)

    p = sub.add_parser("fit", help="weighted least-squares trap fit (JSON)")
    p.add_argument("--data", help="CSV with tag,freq_khz,sigma_khz (default: bundled)")
    p.add_argument("--model", choices=("flt", "ppt"), default="flt")
    p.add_argument("--rf-khz", type=float)
    p.add_argument("--n", type=int, default=3)
    _add_common(p)
    p.set_defaults(func=cmd_fit)

    p = sub.add_parser("reproduce-table1", help="FLT/PPT comparison on the bundled data")
    p.add_argument("--data")
    _add_common(p)
    p.set_defaults(func=cmd_reproduce_table1)

    p = sub.add_parser("reproduce-fig4", help="constant-c.m. q sweep around the fitted trap")
    p.add_argument("--data")
    p.add_argument("--grid", default=Q_SWEEP_GRID)
    _add_common(p)
    p.set_defaults(func=cmd_reproduce_fig4)
    return parser


def run(argv=None):
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return int(exc.code or 0)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING)
    try:
        args.func(args)
    except Exception as exc:  # noqa: BLE001 - every failure becomes a diagnostic
        print(json.dumps({"error": type(exc).__name__, "message": str(exc)}),
              file=sys.stderr)
        print(f"paulcrystal {args.command}: {exc}", file=sys.stderr)
        if args.verbose:
            raise
        return 1
    return 0


def main():
    sys.exit(run())
