"""Command-line front end: ``debye-bie <command> [options]``.

Every command reads an optional JSON config (``--config``), applies flag
overrides, validates the result against a JSON schema, runs, and writes CSV
and JSON artifacts plus ``manifest.json`` into the output directory.

Exit codes: 0 pass, 2 residual above tolerance, 3 ill-conditioned system,
4 invalid configuration.
"""

from __future__ import annotations

import argparse
import hashlib
import json
import math
import os
import platform
import sys
import time
from importlib import metadata
from pathlib import Path

import jsonschema
import numpy as np

from . import __version__
from .layerpot import build_single_layer
from .rootfinder import first_roots_mn, log_trend_correlation
from .solver import (ConditioningError, IncidentTraces, build_k_neumann, decouple_k_neumann,
                     jump_relation_test, low_frequency_limit_check, point_dipole, solve_pec)
from .specfun import sph_bessel_j, sph_hankel_h1
from .sphere_ops import (eval_field_sphere, multiplier_normal, multiplier_tangential, plane_wave,
                         project_tangential, solve_hybrid_sphere, sphere_frame)
from .surface import grid_from_config, inner, sphere_grid

EXIT_OK, EXIT_RESIDUAL, EXIT_CONDITIONING, EXIT_CONFIG = 0, 2, 3, 4

COMMANDS = ("multipliers", "roots", "sphere-scatter", "pec", "kneumann", "jump-test", "lowfreq",
            "nystrom-validate")

_NUM = {"type": "number"}
_VEC3 = {"type": "array", "items": _NUM, "minItems": 3, "maxItems": 3}
_CPLX_VEC3 = {"type": "array", "minItems": 3, "maxItems": 3,
              "items": {"oneOf": [_NUM, {"type": "array", "items": _NUM, "minItems": 2, "maxItems": 2}]}}

CONFIG_SCHEMA = {
    "type": "object",
    "additionalProperties": False,
    "properties": {
        "command": {"enum": list(COMMANDS)},
        "out": {"type": "string"},
        "seed": {"type": "integer", "minimum": 0},
        "k": _NUM,
        "k_values": {"type": "array", "items": _NUM},
        "kmin": _NUM,
        "kmax": _NUM,
        "nk": {"type": "integer", "minimum": 1},
        "l_range": {"type": "array", "items": {"type": "integer"}, "minItems": 2, "maxItems": 2},
        "l_values": {"type": "array", "items": {"type": "integer", "minimum": 1}},
        "lmax": {"type": "integer", "minimum": 0},
        "count": {"type": "integer", "minimum": 0},
        "exclude_hankel_zeros": {"type": "boolean"},
        "surface": {
            "type": "object",
            "additionalProperties": False,
            "required": ["shape"],
            "properties": {
                "shape": {"enum": ["sphere", "torus"]},
                "radius": {"type": "number", "exclusiveMinimum": 0},
                "R": {"type": "number", "exclusiveMinimum": 0},
                "r": {"type": "number", "exclusiveMinimum": 0},
                "resolution": {"type": "array", "items": {"type": "integer", "minimum": 4},
                               "minItems": 1, "maxItems": 2},
            },
        },
        "incident": {
            "type": "object",
            "required": ["type"],
            "additionalProperties": False,
            "properties": {
                "type": {"enum": ["plane_wave", "dipole", "zero", "traces"]},
                "direction": _VEC3,
                "polarization": _CPLX_VEC3,
                "position": _VEC3,
                "moment": _CPLX_VEC3,
                "path": {"type": "string"},
            },
        },
        "n_check": {"type": "integer", "minimum": 0},
        "sample_radius": {"type": "number", "exclusiveMinimum": 0},
        "n_samples": {"type": "integer", "minimum": 0},
        "tolerances": {
            "type": "object",
            "additionalProperties": False,
            "properties": {name: {"type": "number", "exclusiveMinimum": 0}
                           for name in ("pec", "system", "normal", "gram", "decouple", "jump",
                                        "lowfreq", "nystrom")},
        },
    },
}

DEFAULT_TOL = {"pec": 1e-4, "system": 1e-10, "normal": 1e-5, "gram": 1e6, "decouple": 1e-4,
               "jump": 1e-4, "lowfreq": 1e-5, "nystrom": 1e-8}


class ConfigError(ValueError):
    """Invalid configuration (exit code 4)."""


# ---------------------------------------------------------------------------
# configuration
# ---------------------------------------------------------------------------


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        raise ConfigError(message)


def build_parser() -> argparse.ArgumentParser:
    p = _Parser(prog="debye-bie", description="Generalized Debye-source Maxwell solvers.")
    p.add_argument("--version", action="version", version=f"debye-bie {__version__}")
    p.add_argument("command", choices=COMMANDS)
    p.add_argument("--config", help="JSON configuration file")
    p.add_argument("--out", help="output directory (default: out/<command>)")
    p.add_argument("--k", type=float, action="append", help="wavenumber (repeatable)")
    p.add_argument("--kmin", type=float)
    p.add_argument("--kmax", type=float)
    p.add_argument("--nk", type=int, help="number of wavenumbers between kmin and kmax")
    p.add_argument("--lmax", type=int, help="maximal degree")
    p.add_argument("--surface", choices=["sphere", "torus"])
    p.add_argument("--R", type=float, help="torus major radius")
    p.add_argument("--r", type=float, help="torus minor radius")
    p.add_argument("--res", type=int, nargs="+", help="grid resolution (one or two integers)")
    p.add_argument("--seed", type=int)
    return p


def _load_json(path) -> dict:
    try:
        with open(path) as fh:
            text = fh.read()
    except OSError as e:
        raise ConfigError(f"cannot read config {path}: {e}") from e
    try:
        return json.loads(text)
    except json.JSONDecodeError as e:
        raise ConfigError(f"{path}: line {e.lineno}, column {e.colno}: {e.msg}") from e


def resolve_config(args) -> dict:
    """Merge the config file with flag overrides and validate."""
    cfg = _load_json(args.config) if args.config else {}
    if not isinstance(cfg, dict):
        raise ConfigError("config must be a JSON object")
    if "command" in cfg and cfg["command"] != args.command:
        raise ConfigError(f"config is for command {cfg['command']!r}, not {args.command!r}")
    cfg["command"] = args.command
    if args.out:
        cfg["out"] = args.out
    if args.seed is not None:
        cfg["seed"] = args.seed
    if args.k:
        if len(args.k) == 1:
            cfg["k"] = args.k[0]
        cfg["k_values"] = list(args.k)
    for name in ("kmin", "kmax", "nk", "lmax"):
        if getattr(args, name) is not None:
            cfg[name] = getattr(args, name)
    if args.surface or args.R is not None or args.r is not None or args.res:
        surf = dict(cfg.get("surface", {}))
        if args.surface:
            if surf.get("shape") not in (None, args.surface):
                surf = {}
            surf["shape"] = args.surface
        if args.R is not None:
            surf["R"] = args.R
        if args.r is not None:
            surf["r"] = args.r
        if args.res:
            surf["resolution"] = list(args.res)
        cfg["surface"] = surf
    validate_config(cfg)
    return cfg


def validate_config(cfg: dict) -> None:
    v = jsonschema.Draft202012Validator(CONFIG_SCHEMA)
    errors = sorted(v.iter_errors(cfg), key=lambda e: list(e.absolute_path))
    if errors:
        msgs = [f"{'/'.join(map(str, e.absolute_path)) or '<root>'}: {e.message}" for e in errors]
        raise ConfigError("invalid configuration:\n  " + "\n  ".join(msgs))
    s = cfg.get("surface")
    if s and s["shape"] == "sphere" and ("R" in s or "r" in s):
        raise ConfigError("surface: R and r apply to the torus only")
    if s and s["shape"] == "torus" and s.get("r", 0.5) >= s.get("R", 2.0):
        raise ConfigError("surface: torus needs r < R")


def _k_values(cfg, default):
    if "k_values" in cfg:
        return [float(k) for k in cfg["k_values"]]
    if "kmin" in cfg or "kmax" in cfg:
        if not ("kmin" in cfg and "kmax" in cfg):
            raise ConfigError("kmin and kmax must be given together")
        return list(np.linspace(cfg["kmin"], cfg["kmax"], cfg.get("nk", 10)))
    if "k" in cfg:
        return [float(cfg["k"])]
    return list(default)


def _single_k(cfg, default):
    ks = _k_values(cfg, [default])
    if len(ks) != 1:
        raise ConfigError("this command takes a single wavenumber")
    return ks[0]


def _tol(cfg, name):
    return cfg.get("tolerances", {}).get(name, DEFAULT_TOL[name])


def _complex_vec(v):
    return np.array([complex(x[0], x[1]) if isinstance(x, list) else complex(x) for x in v])


def _grid(cfg, default_shape):
    surf = dict(cfg.get("surface", {"shape": default_shape}))
    try:
        return grid_from_config(surf)
    except jsonschema.ValidationError as e:
        raise ConfigError(f"surface: {e.message}") from e


# ---------------------------------------------------------------------------
# output helpers
# ---------------------------------------------------------------------------


def _fmt(x) -> str:
    return "%.15e" % x


def write_csv(path: Path, header, rows) -> None:
    """CSV with fixed scientific formatting of floats (byte-reproducible)."""
    with open(path, "w", newline="") as fh:
        fh.write(",".join(header) + "\n")
        for row in rows:
            fh.write(",".join(str(v) if isinstance(v, (int, np.integer)) else _fmt(v) for v in row) + "\n")


def _jsonable(x):
    if isinstance(x, dict):
        return {str(k): _jsonable(v) for k, v in x.items()}
    if isinstance(x, (list, tuple)):
        return [_jsonable(v) for v in x]
    if isinstance(x, np.ndarray):
        return _jsonable(x.tolist())
    if isinstance(x, (complex, np.complexfloating)):
        return [float(x.real), float(x.imag)]
    if isinstance(x, np.floating):
        return float(x)
    if isinstance(x, np.integer):
        return int(x)
    if isinstance(x, float) and not math.isfinite(x):
        return str(x)
    return x


def write_json(path: Path, obj) -> None:
    with open(path, "w") as fh:
        json.dump(_jsonable(obj), fh, indent=2, sort_keys=True)
        fh.write("\n")


def _field_rows(x, E, H):
    for p, e, h in zip(x, E, H):
        yield [*p, *(v for c in e for v in (c.real, c.imag)), *(v for c in h for v in (c.real, c.imag))]


_FIELD_HEADER = ["x", "y", "z", "re_Ex", "im_Ex", "re_Ey", "im_Ey", "re_Ez", "im_Ez",
                 "re_Hx", "im_Hx", "re_Hy", "im_Hy", "re_Hz", "im_Hz"]


def _sample_points(cfg, radius, seed):
    n = cfg.get("n_samples", 32)
    rng = np.random.default_rng(seed)
    d = rng.normal(size=(n, 3))
    d /= np.linalg.norm(d, axis=1)[:, None]
    return cfg.get("sample_radius", radius) * d


def _outer_radius(grid):
    return float(np.linalg.norm(grid.points, axis=1).max())


# ---------------------------------------------------------------------------
# commands; each returns (report dict, passed flag, list of written files)
# ---------------------------------------------------------------------------


def cmd_multipliers(cfg, out: Path):
    ks = _k_values(cfg, [1.0, 10.0, 100.0])
    lo, hi = cfg.get("l_range", [1, cfg.get("lmax", 200)])
    if lo < 1 and hi >= lo:
        raise ConfigError("l_range must start at 1 or above")
    ls = np.arange(lo, hi + 1)
    rows = []
    for k in ks:
        if ls.size:
            mn = multiplier_normal(k, ls)
            mt = multiplier_tangential(k, ls)
            for l, a, b in zip(ls, np.atleast_1d(mn), np.atleast_1d(mt)):
                rows.append([float(k), int(l), a.real, a.imag, abs(a), b.real, b.imag, abs(b)])
    write_csv(out / "multipliers.csv", ["k", "l", "re_mn", "im_mn", "abs_mn", "re_mt", "im_mt", "abs_mt"], rows)
    return {"k_values": ks, "l_range": [int(lo), int(hi)], "rows": len(rows)}, True, ["multipliers.csv"]


def cmd_roots(cfg, out: Path):
    ls = cfg.get("l_values", [1, 5, 7])
    count = cfg.get("count", 50)
    excl = cfg.get("exclude_hankel_zeros", False)
    rows, report, ok = [], {"count": count, "l_values": ls, "exclude_hankel_zeros": excl}, True
    corr = {}
    for l in ls:
        roots = first_roots_mn(l, count, seed=cfg.get("seed", 0), exclude_hankel_zeros=excl) if count else []
        if any(z.imag >= 0 for z in roots):
            ok = False
        if roots:
            fvals = np.abs(multiplier_normal(np.array(roots), l))
            rows += [[int(l), z.real, z.imag, float(fz)] for z, fz in zip(roots, fvals)]
        if len(roots) >= 3:
            corr[str(l)] = log_trend_correlation(roots)
    report["max_imag"] = max((r[2] for r in rows), default=None)
    report["log_trend_correlation"] = corr
    if not ok:
        report["error"] = "a root with Im k >= 0 was found"
        return report, False, []
    write_csv(out / "roots.csv", ["l", "re_k", "im_k", "abs_f"], rows)
    return report, True, ["roots.csv"]


def _incident(cfg, k, grid=None):
    inc = cfg.get("incident", {"type": "plane_wave"})
    t = inc["type"]
    if t == "plane_wave":
        return plane_wave(k, inc.get("direction", (0.0, 0.0, 1.0)),
                          _complex_vec(inc.get("polarization", (1.0, 0.0, 0.0))))
    if t == "dipole":
        if "position" not in inc:
            raise ConfigError("incident: dipole needs a position")
        return point_dipole(k, inc["position"], _complex_vec(inc.get("moment", (0.0, 0.0, 1.0))))
    if t == "zero":
        zero = lambda x: np.zeros(np.shape(x), complex)
        return zero, zero
    if grid is None:
        raise ConfigError("incident: trace files need a Nystrom grid")
    return _load_traces(inc, grid)


def _load_traces(inc, grid):
    """Trace file: CSV with columns re_Et1, im_Et1, re_Et2, im_Et2, re_nH, im_nH in node order."""
    if "path" not in inc:
        raise ConfigError("incident: traces need a path")
    try:
        data = np.loadtxt(inc["path"], delimiter=",", skiprows=1, ndmin=2)
    except (OSError, ValueError) as e:
        raise ConfigError(f"incident: cannot read {inc['path']}: {e}") from e
    if data.shape != (grid.n_nodes, 6):
        raise ConfigError(f"incident: trace file has shape {data.shape}, expected ({grid.n_nodes}, 6)")
    Et = np.stack([data[:, 0] + 1j * data[:, 1], data[:, 2] + 1j * data[:, 3]], axis=1)
    return IncidentTraces(Et, data[:, 4] + 1j * data[:, 5])


def cmd_sphere_scatter(cfg, out: Path):
    """Spectral backend on the unit sphere."""
    k = _single_k(cfg, 1.7)
    if k == 0:
        raise ConfigError("k must be nonzero")
    lmax = cfg.get("lmax", 30)
    E_in, H_in = _incident(cfg, k)
    p, q = project_tangential(E_in, lmax)
    sol = solve_hybrid_sphere(k, p, q)
    rng = np.random.default_rng(cfg.get("seed", 0))
    n = cfg.get("n_check", 64)
    th, ph = np.arccos(rng.uniform(-1, 1, n)), rng.uniform(0, 2 * np.pi, n)
    er, et, ep = sphere_frame(th, ph)
    E, H = eval_field_sphere(sol, er, on_surface=True)
    Ei, Hi = E_in(er), H_in(er)
    tan = np.abs(np.cross(er, E + Ei)).max()
    nrm = np.abs(((H + Hi) * er).sum(-1)).max()
    scale = max(np.abs(Ei).max(), np.abs(Hi).max(), 1e-300)
    zero = scale <= 1e-300
    res = {"pec_tan": float(tan if zero else tan / scale), "pec_norm": float(nrm if zero else nrm / scale)}
    x = _sample_points(cfg, 2.0, cfg.get("seed", 0) + 1)
    Es, Hs = eval_field_sphere(sol, x)
    write_csv(out / "fields.csv", _FIELD_HEADER, _field_rows(x, Es, Hs))
    sol.a.to_csv(out / "debye_r.csv")
    sol.b.to_csv(out / "debye_q.csv")
    tol = _tol(cfg, "pec")
    ok = max(res.values()) < tol
    return ({"k": k, "surface": "sphere", "resolution": [lmax], "residuals": res, "tolerance": tol,
             "source_norm": math.hypot(sol.a.norm(), sol.b.norm())},
            ok, ["fields.csv", "debye_r.csv", "debye_q.csv"])


def cmd_pec(cfg, out: Path):
    """Nystrom backend (sphere or torus)."""
    k = _single_k(cfg, 1.0)
    grid = _grid(cfg, "sphere")
    inc = _incident(cfg, k, grid)
    sol = solve_pec(grid, k, inc, n_check=cfg.get("n_check", 64), seed=cfg.get("seed", 0))
    rec = sol.record()
    rec["source_norm"] = sol.sources.norm()
    rec["harmonic_coefficients"] = sol.sources.harmonic
    zero_inc = isinstance(cfg.get("incident"), dict) and cfg["incident"]["type"] == "zero"
    tol, stol = _tol(cfg, "pec"), _tol(cfg, "system")
    checks = [rec["residuals"]["system"] < stol]
    if not zero_inc:
        checks += [rec["residuals"].get("pec_tan", 0) < tol, rec["residuals"].get("pec_norm", 0) < tol]
    rec["tolerances"] = {"pec": tol, "system": stol}
    files = []
    x = _sample_points(cfg, 1.5 * _outer_radius(grid), cfg.get("seed", 0) + 1)
    E, H = sol.sources.fields(x, upsample_factor=2)
    write_csv(out / "fields.csv", _FIELD_HEADER, _field_rows(x, E, H))
    files.append("fields.csv")
    s = sol.sources
    write_csv(out / "sources.csv", ["u", "v", "re_r", "im_r", "re_q", "im_q"],
              ([u, v, a.real, a.imag, b.real, b.imag] for (u, v), a, b in zip(grid.uv, s.r, s.q)))
    files.append("sources.csv")
    return rec, all(checks), files


def cmd_kneumann(cfg, out: Path):
    k = _single_k(cfg, 1.0)
    grid = _grid(cfg, "torus")
    fields = build_k_neumann(grid, k, gram_limit=_tol(cfg, "gram"))
    tol = _tol(cfg, "normal")
    rep = {"k": k, "surface": grid.describe(), "count": len(fields), "expected": 2 * grid.genus,
           "normal_residuals": [f.normal_residual for f in fields],
           "system_residuals": [f.system_residual for f in fields],
           "harmonic_coefficients": [f.sources.harmonic for f in fields]}
    ok = len(fields) == 2 * grid.genus and all(f.normal_residual < tol for f in fields)
    if fields and abs(k) <= 1e-6:
        coef, ratios = decouple_k_neumann(grid, fields)
        rep["decoupling"] = {"coefficients": coef, "ratios": ratios}
        ok = ok and max(ratios) < _tol(cfg, "decouple")
    rows = []
    for i, f in enumerate(fields):
        for (u, v), a, b in zip(grid.uv, f.sources.r, f.sources.q):
            rows.append([i, u, v, a.real, a.imag, b.real, b.imag])
    write_csv(out / "kneumann_sources.csv", ["field", "u", "v", "re_r", "im_r", "re_q", "im_q"], rows)
    return rep, ok, ["kneumann_sources.csv"]


def cmd_jump_test(cfg, out: Path):
    k = _single_k(cfg, 1.0)
    grid = _grid(cfg, "torus")
    rep = jump_relation_test(grid, k, seed=cfg.get("seed", 0))
    tol = _tol(cfg, "jump")
    return ({"k": k, "surface": grid.describe(), "residuals": rep.residuals, "eps": rep.eps,
             "tolerance": tol}, rep.max() < tol, [])


def cmd_lowfreq(cfg, out: Path):
    k = _single_k(cfg, 1e-8)
    grid = _grid(cfg, "sphere")
    rep = low_frequency_limit_check(k, grid, seed=cfg.get("seed", 0))
    tol = _tol(cfg, "lowfreq")
    d = dict(vars(rep))
    return {"report": d, "tolerance": tol}, rep.passed(tol), []


def cmd_nystrom_validate(cfg, out: Path):
    """Sphere single-layer eigenvalues against ``i k j_l(k) h_l(k)``."""
    ks = _k_values(cfg, [1.0, 2.0])
    lmax = cfg.get("lmax", 10)
    surf = cfg.get("surface", {"shape": "sphere", "resolution": [60, 120]})
    if surf["shape"] != "sphere":
        raise ConfigError("nystrom-validate runs on the sphere")
    grid = _grid({"surface": surf}, "sphere")
    if lmax >= grid.nu:
        raise ConfigError("lmax must be below the grid degree")
    from .specfun import sph_harm_Y

    rows, worst = [], 0.0
    th, ph = grid.uv.T
    for k in ks:
        S = build_single_layer(grid, k)
        for l in range(0, lmax + 1):
            exact = 1j * k * sph_bessel_j(l, k) * sph_hankel_h1(l, k)
            for m in range(-l, l + 1):
                Y = sph_harm_Y(l, m, th, ph)
                lam = inner(grid, S.apply(Y), Y) / inner(grid, Y, Y)
                err = abs(lam - exact) / abs(exact)
                worst = max(worst, err)
                rows.append([float(k), l, m, lam.real, lam.imag, exact.real, exact.imag, err])
    write_csv(out / "single_layer_eigenvalues.csv",
              ["k", "l", "m", "re_num", "im_num", "re_exact", "im_exact", "rel_err"], rows)
    tol = _tol(cfg, "nystrom")
    return ({"k_values": ks, "lmax": lmax, "resolution": [grid.nu, grid.nv], "max_rel_err": worst,
             "tolerance": tol}, worst < tol, ["single_layer_eigenvalues.csv"])


_DISPATCH = {
    "multipliers": cmd_multipliers,
    "roots": cmd_roots,
    "sphere-scatter": cmd_sphere_scatter,
    "pec": cmd_pec,
    "kneumann": cmd_kneumann,
    "jump-test": cmd_jump_test,
    "lowfreq": cmd_lowfreq,
    "nystrom-validate": cmd_nystrom_validate,
}


def _dist_version(name: str) -> str:
    try:
        return metadata.version(name)
    except metadata.PackageNotFoundError:
        return "unknown"


def _config_hash(cfg) -> str:
    core = {key: val for key, val in cfg.items() if key != "out"}
    return hashlib.sha256(json.dumps(core, sort_keys=True).encode()).hexdigest()


def main(argv=None) -> int:
    try:
        args = build_parser().parse_args(argv)
        cfg = resolve_config(args)
    except ConfigError as e:
        print(f"config error: {e}", file=sys.stderr)
        return EXIT_CONFIG
    out = Path(cfg.get("out", os.path.join("out", cfg["command"])))
    out.mkdir(parents=True, exist_ok=True)
    t0 = time.perf_counter()
    status, files, report = EXIT_OK, [], {}
    try:
        report, ok, files = _DISPATCH[cfg["command"]](cfg, out)
        status = EXIT_OK if ok else EXIT_RESIDUAL
    except ConfigError as e:
        print(f"config error: {e}", file=sys.stderr)
        status, report = EXIT_CONFIG, {"error": str(e)}
    except ConditioningError as e:
        print(f"ill-conditioned: {e}", file=sys.stderr)
        status, report = EXIT_CONDITIONING, {"error": str(e), "condition_estimate": e.condition}
    elapsed = time.perf_counter() - t0
    report["status"] = status
    write_json(out / "report.json", report)
    manifest = {"command": cfg["command"], "config": cfg, "config_sha256": _config_hash(cfg),
                "versions": {"debye_bie": __version__, "numpy": np.__version__,
                             "jsonschema": _dist_version("jsonschema"),
                             "python": platform.python_version()},
                "threads": os.environ.get("DEBYE_BIE_THREADS"),
                "timings": {"total_seconds": elapsed}, "outputs": files + ["report.json"],
                "exit_code": status}
    write_json(out / "manifest.json", manifest)
    print(f"{cfg['command']}: {'pass' if status == 0 else 'FAIL'} (exit {status}) -> {out}")
    return status


if __name__ == "__main__":  # pragma: no cover
    sys.exit(main())
