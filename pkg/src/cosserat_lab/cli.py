"""Command line front end: ``cosserat-lab {minimize,diagnose,sweep}``.

Exit codes: 0 success, 1 usage or configuration error, 2 partial result
(the solver stopped before reaching its tolerance; outputs are still written).
"""
import argparse
import csv
import json
import logging
import os
import sys
from concurrent.futures import ProcessPoolExecutor

import numpy as np

from . import __version__, config, snapshot
from .diagnostics import DivCurlReport, calibrate_C, detect_singular_set, divcurl_check, \
    monotonicity_scan, random_test_field, stability_rayleigh, stationarity_residual, \
    stationarity_tolerance
from .energy import State, el_residual
from .errors import ConfigError, CosseratError, PartialResult
from .solver import hedgehog_state, initial_state, minimize, trivial_state, twist_state

log = logging.getLogger("cosserat_lab")

EXIT_OK, EXIT_USAGE, EXIT_PARTIAL = 0, 1, 2


# ---------------------------------------------------------------- output helpers

def _write_json(path, obj):
    with open(path, "w") as fh:
        json.dump(obj, fh, indent=2, sort_keys=True, allow_nan=True)
        fh.write("\n")


def _write_csv(path, header, rows):
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(header)
        for row in rows:
            w.writerow([_fmt(v) for v in row])


def _fmt(v):
    if isinstance(v, (float, np.floating)):
        return repr(float(v))
    if isinstance(v, (np.integer, np.bool_)):
        return int(v)
    return v


def _header(cfg):
    return {"version": __version__, "config": config.public(cfg)}


# ---------------------------------------------------------------- minimize

def boundary_state(cfg, grid):
    b = cfg["boundary"]
    preset = b["preset"]
    if preset == "trivial":
        return trivial_state(grid)
    if preset == "twist":
        return twist_state(grid, rate=float(b["twist_rate"]), axis=int(b["twist_axis"]) - 1)
    if preset == "hedgehog":
        return hedgehog_state(grid)
    return read_state(cfg, b["phi"], b["rot"], grid)


def read_state(cfg, phi_path, rot_path, grid):
    """Load a snapshot pair and check it against ``grid``."""
    try:
        phi, g1, k1 = snapshot.read(config._path(cfg, phi_path), grid.origin)
        R, g2, k2 = snapshot.read(config._path(cfg, rot_path), grid.origin)
    except OSError as exc:
        raise ConfigError(f"cannot read snapshot: {exc.filename}: {exc.strerror}") from None
    if k1 != "vector" or k2 != "rotation":
        raise ConfigError(f"expected vector and rotation snapshots, got {k1} and {k2}")
    for g in (g1, g2):
        if g.dims != grid.dims or not np.isclose(g.h, grid.h, rtol=1e-12, atol=0.0):
            raise ConfigError(f"snapshot grid {g.dims}, h={g.h:.6g} does not match config grid "
                              f"{grid.dims}, h={grid.h:.6g}")
    return State(grid, phi, R)


def run_minimize(cfg, out):
    """Solve and write ``phi.csrf``, ``rot.csrf``, ``report.json`` and ``trace.csv``."""
    os.makedirs(out, exist_ok=True)
    grid = config.grid_of(cfg)
    prm = config.model_params(cfg, grid)
    scfg = config.solve_config(cfg)
    b = cfg["boundary"]
    s0 = initial_state(boundary_state(cfg, grid), b["init"], float(b["amplitude"]), cfg["seed"])
    status = "converged"
    try:
        state, rep = minimize(s0, prm, scfg)
    except PartialResult as exc:
        state, rep, status = exc.state, exc.report, "partial"
        log.warning("%s", exc)
    snapshot.write(os.path.join(out, "phi.csrf"), state.phi, grid, "vector")
    snapshot.write(os.path.join(out, "rot.csrf"), state.R, grid, "rotation")
    report = _header(cfg)
    report.update({"status": status, "solve": rep.to_dict(),
                   "solver_config": scfg.to_dict()})
    _write_json(os.path.join(out, "report.json"), report)
    schedule = rep.eps_stages
    rows = []
    for k, (e, st) in enumerate(zip(rep.energies, rep.stages)):
        rows.append([k, st, schedule[st], e])
    _write_csv(os.path.join(out, "trace.csv"), ["entry", "stage", "eps", "energy"], rows)
    log.info("minimize: %s, E=%.12g, residuals=%s", status, rep.final_energy, rep.residual)
    return state, rep, status


# ---------------------------------------------------------------- diagnose

def _default_radii(grid, center, n):
    d = grid.dist_to_boundary(center)
    rmin = 4.0 * grid.h
    rmax = 0.9 * d
    if rmax <= rmin:
        return []
    return list(np.linspace(rmin, rmax, n))


def run_diagnose(cfg, state, out):
    """Evaluate the enabled diagnostics on ``state`` and write their tables."""
    os.makedirs(out, exist_ok=True)
    grid = state.grid
    d = cfg["diagnostics"]
    prm = config.model_params(cfg, grid)
    p = prm.p
    enabled = set(d["enabled"])
    kappa = float(d["kappa"])
    residual = float(max(el_residual(state, prm)))
    C = calibrate_C(prm, kappa=kappa) if d["C"] == "auto" else float(d["C"])
    summary = _header(cfg)
    summary.update({"el_residual": residual, "C": C, "kappa": kappa})

    if "monotonicity" in enabled:
        centers = d["centers"] or [list(grid.center)]
        rows, count = [], 0
        for c in centers:
            radii = d["radii"] or _default_radii(grid, np.asarray(c, float), d["n_radii"])
            if len(radii) < 2:
                log.warning("center %s too close to the boundary for a scan", c)
                continue
            table = monotonicity_scan(state, c, radii, C, p, residual=residual, kappa=kappa)
            rows += table.rows()
            count += table.violation_count
            summary.setdefault("tau_mono", table.tau)
        _write_csv(os.path.join(out, "monotonicity.csv"),
                   ["center", "r1", "r2", "lhs_2_2", "radial_term", "rhs_2_2", "violation"], rows)
        summary["monotonicity_violations"] = count

    if "density" in enabled:
        dm = detect_singular_set(state, float(d["eps0"]), C, p)
        idx = np.argwhere(np.isfinite(dm.values))
        x = grid.lower + grid.h * idx
        rows = [[*i, *xx, dm.values[tuple(i)], int(dm.flags[tuple(i)])] for i, xx in zip(idx, x)]
        _write_csv(os.path.join(out, "density.csv"),
                   ["i", "j", "k", "x1", "x2", "x3", "density", "flagged"], rows)
        summary.update({"flagged_nodes": dm.count, "density_threshold": dm.threshold,
                        "r_min": dm.r_min})

    if "stability" in enabled:
        sr = stability_rayleigh(state, prm)
        stab = _header(cfg)
        stab.update({"minimum": sr.minimum, "iterations": sr.iterations, "probes": sr.probes,
                     "tau_stab": float(d["tau_stab"]),
                     "stable": bool(sr.minimum >= -float(d["tau_stab"]))})
        _write_json(os.path.join(out, "stability.json"), stab)
        snapshot.write(os.path.join(out, "stability_psi.csrf"), sr.minimizer, grid, "scalar")
        summary["min_rayleigh"] = sr.minimum

    if "stationarity" in enabled:
        rng = np.random.default_rng(cfg["seed"])
        rows = []
        for k in range(d["n_test_fields"]):
            Y = random_test_field(grid, rng)
            r = stationarity_residual(state, prm, Y)
            tau = stationarity_tolerance(grid, Y, residual, kappa)
            rows.append([k, r, tau, int(r <= tau)])
        _write_csv(os.path.join(out, "stationarity.csv"), ["field", "residual", "tau", "pass"],
                   rows)
        summary["stationarity_max"] = max((r[1] for r in rows), default=0.0)

    if "divcurl" in enabled:
        dc: DivCurlReport = divcurl_check(state, prm)
        rows = [[f"div_{i + 1}", v] for i, v in enumerate(dc.div_residual)]
        rows.append(["reconstruction", dc.reconstruction])
        _write_csv(os.path.join(out, "divcurl.csv"), ["quantity", "l2_residual"], rows)
        summary["divcurl_max"] = max(dc.max_div, dc.reconstruction)

    _write_json(os.path.join(out, "diagnostics.json"), summary)
    return summary


# ---------------------------------------------------------------- sweep

def _sweep_one(args):
    cfg, out = args
    logging.getLogger("cosserat_lab").setLevel(logging.WARNING)
    state, rep, status = run_minimize(cfg, out)
    summary = run_diagnose(cfg, state, out)
    return status, rep.final_energy, summary.get("min_rayleigh", float("nan")), \
        summary.get("flagged_nodes", -1)


def run_sweep(cfg, out, threads=1):
    points = config.sweep_points(cfg)
    os.makedirs(out, exist_ok=True)
    jobs = []
    for k, pt in enumerate(points):
        sub = config.apply_point(cfg, pt)
        jobs.append((sub, os.path.join(out, f"run_{k:04d}")))
    if threads > 1 and len(jobs) > 1:
        with ProcessPoolExecutor(max_workers=threads) as ex:
            results = list(ex.map(_sweep_one, jobs))
    else:
        results = [_sweep_one(j) for j in jobs]
    keys = list(points[0]) if points else []
    rows = []
    for k, (pt, (status, energy, rmin, flagged)) in enumerate(zip(points, results)):
        p = pt.get("model.p", cfg["model"]["p"])
        rows.append([f"run_{k:04d}", *[pt[key] for key in keys], p, rmin, flagged, energy,
                     status])
    _write_csv(os.path.join(out, "summary.csv"),
               ["run", *keys, "p", "min_rayleigh", "flagged_nodes", "energy_final", "status"],
               rows)
    return EXIT_PARTIAL if any(r[0] == "partial" for r in results) else EXIT_OK


# ---------------------------------------------------------------- entry point

def _parser():
    ap = argparse.ArgumentParser(prog="cosserat-lab", description=__doc__.splitlines()[0])
    ap.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("config", help="TOML run configuration")
    common.add_argument("--seed", type=int, default=None, help="override the config seed")
    common.add_argument("--out", default=None, help="output directory")
    common.add_argument("--threads", type=int,
                        default=int(os.environ.get("COSSERAT_LAB_THREADS", "1") or 1),
                        help="worker processes for sweeps (default $COSSERAT_LAB_THREADS or 1)")
    common.add_argument("--verbose", "-v", action="count", default=0)
    sub = ap.add_subparsers(dest="command", required=True)
    sub.add_parser("minimize", parents=[common], help="compute a critical point")
    dg = sub.add_parser("diagnose", parents=[common], help="check identities on a state")
    dg.add_argument("--phi", required=True, help="translation snapshot (.csrf)")
    dg.add_argument("--rot", required=True, help="rotation snapshot (.csrf)")
    sub.add_parser("sweep", parents=[common], help="run a parameter grid")
    return ap


def main(argv=None):
    ap = _parser()
    try:
        args = ap.parse_args(argv)
    except SystemExit as exc:
        return EXIT_OK if exc.code == 0 else EXIT_USAGE
    level = logging.WARNING - 10 * min(args.verbose, 2)
    logging.basicConfig(level=level, format="%(levelname)s %(name)s: %(message)s")
    if args.threads < 1:
        print("error: --threads must be >= 1", file=sys.stderr)
        return EXIT_USAGE
    try:
        cfg = config.load(args.config)
        if args.seed is not None:
            cfg["seed"] = args.seed
        out = args.out or config._path(cfg, cfg["out"])
        if args.command == "minimize":
            _, _, status = run_minimize(cfg, out)
            return EXIT_PARTIAL if status == "partial" else EXIT_OK
        if args.command == "diagnose":
            grid = config.grid_of(cfg)
            state = read_state({"_base_dir": os.getcwd()}, args.phi, args.rot, grid)
            run_diagnose(cfg, state, out)
            return EXIT_OK
        return run_sweep(cfg, out, args.threads)
    except ConfigError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except CosseratError as exc:
        print(f"error: {type(exc).__name__}: {exc}", file=sys.stderr)
        return EXIT_USAGE


if __name__ == "__main__":
    sys.exit(main())
