"""Run configuration: TOML parsing, defaults and validation."""
import copy
import itertools
import math
import os

try:
    import tomllib
except ModuleNotFoundError:  # Python < 3.11
    import tomli as tomllib

import numpy as np

from . import expr, snapshot
from .errors import ConfigError, CosseratError
from .fields import Grid
from .geometry import ModuliSet
from .solver import DEFAULT_SCHEDULE, SolveConfig

MAX_COMBINATIONS = 10_000

DEFAULTS = {
    "seed": 0,
    "out": "cosserat_out",
    "grid": {"n": 16, "dims": None, "length": 1.0, "origin": [0.0, 0.0, 0.0]},
    "model": {"p": 2.0, "mu": [1.0, 1.0, 1.0], "eps": 1e-3, "lam": 1.0, "f": None, "M": None},
    "boundary": {
        "preset": "trivial",
        "twist_rate": 0.5 * math.pi,
        "twist_axis": 3,
        "phi": None,
        "rot": None,
        "init": "perturb",
        "amplitude": 0.1,
    },
    "solver": {
        "tol": 1e-7,
        "max_outer": 2000,
        "max_inner": 40,
        "step0": 1.0,
        "armijo": [1e-4, 0.5],
        "eps_schedule": list(DEFAULT_SCHEDULE),
        "stage_tol": 1e-4,
        "precondition": True,
    },
    "diagnostics": {
        "enabled": ["monotonicity", "density", "stability", "stationarity", "divcurl"],
        "centers": None,
        "radii": None,
        "n_radii": 8,
        "eps0": 0.5,
        "C": "auto",
        "kappa": 10.0,
        "n_test_fields": 10,
        "tau_stab": 1e-6,
    },
    "sweep": {},
}

DIAGNOSTICS = ("monotonicity", "density", "stability", "stationarity", "divcurl")
PRESETS = ("trivial", "twist", "hedgehog", "snapshot")
INITS = ("perturb", "random", "extend")


def _merge(defaults, given, where):
    out = copy.deepcopy(defaults)
    for key, value in given.items():
        if key not in defaults:
            raise ConfigError(f"unknown key {where}{key!r}")
        if isinstance(defaults[key], dict) and key != "sweep":
            if not isinstance(value, dict):
                raise ConfigError(f"{where}{key!r} must be a table")
            out[key] = _merge(defaults[key], value, f"{where}{key}.")
        else:
            out[key] = value
    return out


def load(path):
    """Read and validate a config file; returns the resolved dict."""
    try:
        with open(path, "rb") as fh:
            raw = tomllib.load(fh)
    except FileNotFoundError:
        raise ConfigError(f"config file not found: {path}") from None
    except OSError as exc:
        raise ConfigError(f"cannot read config file {path}: {exc.strerror}") from None
    except tomllib.TOMLDecodeError as exc:
        raise ConfigError(f"{path}: {exc}") from None
    cfg = resolve(raw)
    cfg["_base_dir"] = os.path.dirname(os.path.abspath(path))
    return cfg


def resolve(raw):
    cfg = _merge(DEFAULTS, raw, "")
    validate(cfg)
    return cfg


def _number(v, name, lo=None, strict=False):
    if isinstance(v, bool) or not isinstance(v, (int, float)) or not math.isfinite(v):
        raise ConfigError(f"{name} must be a finite number, got {v!r}")
    if lo is not None and (v <= lo if strict else v < lo):
        raise ConfigError(f"{name} must be {'>' if strict else '>='} {lo}, got {v!r}")
    return v


def _int(v, name, lo=0):
    if isinstance(v, bool) or not isinstance(v, int) or v < lo:
        raise ConfigError(f"{name} must be an integer >= {lo}, got {v!r}")
    return v


def validate(cfg):
    _int(cfg["seed"], "seed")
    if not isinstance(cfg["out"], str):
        raise ConfigError("out must be a string path")
    g = cfg["grid"]
    if g["dims"] is not None:
        if not (isinstance(g["dims"], list) and len(g["dims"]) == 3):
            raise ConfigError("grid.dims must be a list of three integers")
        for n in g["dims"]:
            _int(n, "grid.dims entry", 3)
    else:
        _int(g["n"], "grid.n", 3)
    _number(g["length"], "grid.length", 0.0, strict=True)
    if not (isinstance(g["origin"], list) and len(g["origin"]) == 3):
        raise ConfigError("grid.origin must be a list of three numbers")
    for o in g["origin"]:
        _number(o, "grid.origin entry")

    m = cfg["model"]
    p = _number(m["p"], "model.p")
    if not 2.0 <= p < 3.0:
        raise ConfigError(f"model.p must lie in [2, 3), got {p}")
    if not (isinstance(m["mu"], list) and len(m["mu"]) == 3):
        raise ConfigError("model.mu must be a list [mu1, muc, mu2]")
    for v in m["mu"]:
        _number(v, "model.mu entry", 0.0, strict=True)
    _number(m["eps"], "model.eps", 0.0)
    _number(m["lam"], "model.lam", 0.0, strict=True)
    _check_load(m["f"], "model.f", 3)
    _check_load(m["M"], "model.M", 9)

    b = cfg["boundary"]
    if b["preset"] not in PRESETS:
        raise ConfigError(f"boundary.preset must be one of {PRESETS}, got {b['preset']!r}")
    if b["preset"] == "snapshot" and not (isinstance(b["phi"], str) and isinstance(b["rot"], str)):
        raise ConfigError("boundary.preset = 'snapshot' needs boundary.phi and boundary.rot paths")
    if b["init"] not in INITS:
        raise ConfigError(f"boundary.init must be one of {INITS}, got {b['init']!r}")
    _number(b["twist_rate"], "boundary.twist_rate")
    if b["twist_axis"] not in (1, 2, 3):
        raise ConfigError("boundary.twist_axis must be 1, 2 or 3")
    _number(b["amplitude"], "boundary.amplitude", 0.0)

    s = cfg["solver"]
    try:
        SolveConfig(**_solver_kwargs(s, cfg["seed"]))
    except (TypeError, CosseratError) as exc:
        raise ConfigError(f"solver: {exc}") from None

    d = cfg["diagnostics"]
    if not isinstance(d["enabled"], list) or any(x not in DIAGNOSTICS for x in d["enabled"]):
        raise ConfigError(f"diagnostics.enabled entries must be among {DIAGNOSTICS}")
    if d["centers"] is not None:
        if not isinstance(d["centers"], list) or any(
                not (isinstance(c, list) and len(c) == 3) for c in d["centers"]):
            raise ConfigError("diagnostics.centers must be a list of [x1, x2, x3] points")
    if d["radii"] is not None and (not isinstance(d["radii"], list) or len(d["radii"]) < 2):
        raise ConfigError("diagnostics.radii must list at least two radii")
    _int(d["n_radii"], "diagnostics.n_radii", 2)
    _number(d["eps0"], "diagnostics.eps0", 0.0, strict=True)
    if d["C"] != "auto":
        _number(d["C"], "diagnostics.C", 0.0)
    _number(d["kappa"], "diagnostics.kappa", 0.0, strict=True)
    _int(d["n_test_fields"], "diagnostics.n_test_fields", 0)
    _number(d["tau_stab"], "diagnostics.tau_stab", 0.0)

    sweep_points(cfg)


def _check_load(v, name, size):
    if v is None:
        return
    if isinstance(v, dict):
        if set(v) != {"snapshot"} or not isinstance(v["snapshot"], str):
            raise ConfigError(f"{name} table must be {{snapshot = \"path\"}}")
        return
    flat = list(np.ravel(np.array(v, dtype=object))) if isinstance(v, list) else None
    if flat is None or len(flat) != size:
        raise ConfigError(f"{name} must have {size} entries (numbers or expressions)")
    for item in flat:
        if isinstance(item, str):
            expr.compile_expr(item)
        else:
            _number(item, f"{name} entry")


def _solver_kwargs(s, seed):
    return dict(tol=s["tol"], max_outer=s["max_outer"], max_inner=s["max_inner"],
                step0=s["step0"], armijo=tuple(s["armijo"]),
                eps_schedule=tuple(s["eps_schedule"]), seed=seed,
                stage_tol=s["stage_tol"], precondition=s["precondition"])


def solve_config(cfg):
    return SolveConfig(**_solver_kwargs(cfg["solver"], cfg["seed"]))


def grid_of(cfg):
    g = cfg["grid"]
    dims = g["dims"] or [g["n"]] * 3
    h = g["length"] / (max(dims) - 1)
    return Grid(tuple(dims), h, tuple(g["origin"]))


def final_eps(cfg):
    sched = cfg["solver"]["eps_schedule"]
    return float(sched[-1]) if sched else float(cfg["model"]["eps"])


def _path(cfg, p):
    return p if os.path.isabs(p) else os.path.join(cfg.get("_base_dir", "."), p)


def load_field(cfg, spec, grid, size):
    """Materialize an ``f`` or ``M`` specification on ``grid``."""
    if spec is None:
        return None
    trailing = (3,) if size == 3 else (3, 3)
    if isinstance(spec, dict):
        values, g2, _ = snapshot.read(_path(cfg, spec["snapshot"]), grid.origin)
        if g2.dims != grid.dims or not np.isclose(g2.h, grid.h, rtol=1e-12, atol=0):
            raise ConfigError(f"load snapshot {spec['snapshot']} does not match the grid")
        if values.shape != grid.dims + trailing:
            raise ConfigError(f"load snapshot {spec['snapshot']} has the wrong field kind")
        return values
    flat = list(np.ravel(np.array(spec, dtype=object)))
    if all(not isinstance(v, str) for v in flat):
        return np.array(flat, dtype=float).reshape(trailing)
    x = grid.coords()
    comps = [expr.evaluate(v, x) if isinstance(v, str) else np.full(grid.dims, float(v))
             for v in flat]
    return np.stack(comps, axis=-1).reshape(grid.dims + trailing)


def model_params(cfg, grid, eps=None):
    from .energy import ModelParams

    m = cfg["model"]
    return ModelParams(
        p=float(m["p"]), mu=ModuliSet(*[float(v) for v in m["mu"]]),
        eps=final_eps(cfg) if eps is None else eps, lam=float(m["lam"]),
        f=load_field(cfg, m["f"], grid, 3), M=load_field(cfg, m["M"], grid, 9))


def sweep_points(cfg):
    """List of ``{dotted.key: value}`` dicts, one per combination (product order)."""
    sw = cfg["sweep"]
    if not isinstance(sw, dict):
        raise ConfigError("sweep must be a table of dotted keys to value lists")
    keys, lists = [], []
    for key, values in _flatten(sw).items():
        section, _, name = key.partition(".")
        if section not in DEFAULTS or not isinstance(DEFAULTS[section], dict) \
                or section == "sweep" or name not in DEFAULTS[section]:
            raise ConfigError(f"sweep key {key!r} does not name a config entry")
        if not isinstance(values, list) or not values:
            raise ConfigError(f"sweep.{key} must be a non-empty list")
        keys.append(key)
        lists.append(values)
    total = 1
    for v in lists:
        total *= len(v)
    if total > MAX_COMBINATIONS:
        raise ConfigError(f"sweep has {total} combinations, limit is {MAX_COMBINATIONS}")
    return [dict(zip(keys, combo)) for combo in itertools.product(*lists)]


def _flatten(d, prefix=""):
    out = {}
    for k, v in d.items():
        if isinstance(v, dict):
            out.update(_flatten(v, f"{prefix}{k}."))
        else:
            out[f"{prefix}{k}"] = v
    return out


def apply_point(cfg, point):
    new = copy.deepcopy(cfg)
    new["sweep"] = {}
    for key, value in point.items():
        section, _, name = key.partition(".")
        new[section][name] = value
    base = new.pop("_base_dir", None)
    out = resolve(new)
    if base is not None:
        out["_base_dir"] = base
    return out


def public(cfg):
    """The resolved config without private bookkeeping keys."""
    return {k: v for k, v in cfg.items() if not k.startswith("_")}
