"""Batch command-line driver.

Runs a configured experiment and writes CSV/VTK artifacts::

    hfv stationary --config run.json [--out DIR] [flags]
    hfv transient  --config run.json ...
    hfv converge   --config run.json ...
    hfv longtime   --config run.json ...
    hfv positivity --config run.json ...

The configuration is a JSON document (schema documented in the README and
validated here; unknown keys are rejected).  Scalar fields may be given as
numbers or as expressions in ``x`` and ``y`` evaluated in a restricted
namespace of numpy functions.  Command-line flags override the
corresponding configuration entries.

Artifacts are written atomically (temp file + rename) into the output
directory: ``series.csv`` (one diagnostics row per recorded step),
``summary.csv`` (per-run scalars: errors, decay fits, positivity report),
``run.json`` (deterministic run metadata), and optionally
``solution_####.vtk`` (legacy VTK POLYDATA with cell data ``u_cell``).
Re-running an unchanged configuration reproduces the artifacts
byte-for-byte.

Exit codes: 0 success, 2 configuration error, 3 mesh error, 4 solver
failure, 5 output I/O error.  Failures print a single machine-readable
line ``error: <category>: <message>`` to stderr.
"""

import argparse
import csv
import io
import json
import os
import sys
import tempfile

import numpy as np

from . import discretization as disc
from . import experiments as exps
from . import mesh as meshmod
from . import schemes as sch
from . import solver as sol


class ConfigError(Exception):
    """Invalid run configuration."""


# ---------------------------------------------------------------------------
# Restricted expression evaluation for inline problem fields
# ---------------------------------------------------------------------------

_EVAL_NAMES = {
    "pi": np.pi, "e": np.e, "inf": np.inf,
    "abs": np.abs, "sign": np.sign, "floor": np.floor, "ceil": np.ceil,
    "sqrt": np.sqrt, "exp": np.exp, "log": np.log, "log10": np.log10,
    "sin": np.sin, "cos": np.cos, "tan": np.tan,
    "arcsin": np.arcsin, "arccos": np.arccos, "arctan": np.arctan,
    "arctan2": np.arctan2, "sinh": np.sinh, "cosh": np.cosh,
    "tanh": np.tanh, "hypot": np.hypot,
    "minimum": np.minimum, "maximum": np.maximum, "where": np.where,
    "ones_like": np.ones_like, "zeros_like": np.zeros_like,
}


def compile_field(expr, name):
    """Compile a config field into a scalar field (x, y) -> value.

    Numbers pass through unchanged; strings are parsed as expressions in x
    and y over a fixed namespace of numpy functions (no builtins).
    """
    if isinstance(expr, bool):
        raise ConfigError(f"field {name!r} must be a number or expression")
    if isinstance(expr, (int, float)):
        return float(expr)
    if not isinstance(expr, str):
        raise ConfigError(f"field {name!r} must be a number or expression")
    try:
        code = compile(expr, f"<config:{name}>", "eval")
    except SyntaxError as err:
        raise ConfigError(f"field {name!r}: bad expression: {err.msg}")

    def field(x, y):
        ns = dict(_EVAL_NAMES)
        ns["x"] = x
        ns["y"] = y
        return eval(code, {"__builtins__": {}}, ns)

    try:  # verify the expression actually evaluates on arrays
        probe = field(np.array([0.25, 0.75]), np.array([0.5, 0.5]))
        np.asarray(probe, dtype=float)
    except Exception as err:
        raise ConfigError(f"field {name!r}: cannot evaluate: {err}")
    return field


# ---------------------------------------------------------------------------
# Configuration schema
# ---------------------------------------------------------------------------

_TOP_KEYS = {"case", "problem", "mesh", "scheme", "dt", "tf", "levels",
             "schemes", "out", "vtk", "seed"}
_PROBLEM_KEYS = {"lambda", "phi", "f", "g_dirichlet", "g_neumann", "u_init",
                 "dirichlet", "mass", "rho_dirichlet"}
_MESH_KEYS = {"family", "n", "distortion", "tilt", "file"}
_MESH_PARAMS = {"cartesian": set(), "triangular": set(),
                "kershaw": {"distortion"}, "tilted_hexagonal": {"tilt"}}
_SCHEME_KEYS = {"kind", "flux", "eta", "m", "f_k",
                "newton_eps", "newton_tol", "newton_imax"}
_M_ALIASES = {"arithmetic": "arithmetic", "max": "max",
              "sqrt-mean": "sqrtmean", "log-mean": "logmean"}


def _require(cond, message):
    if not cond:
        raise ConfigError(message)


def _check_keys(section, allowed, where):
    _require(isinstance(section, dict), f"{where} section must be an object")
    unknown = set(section) - allowed
    _require(not unknown,
             f"unknown {where} keys: {', '.join(sorted(unknown))}")


def _number(value, name, positive=False):
    if isinstance(value, bool) or not isinstance(value, (int, float)):
        raise ConfigError(f"{name} must be a number")
    if positive and not value > 0:
        raise ConfigError(f"{name} must be positive")
    return float(value)


def normalize_scheme_kind(kind):
    """Accept both spellings of the harmonic variant."""
    if kind == "expfit_harmonic":
        return "expfit-harmonic"
    return kind


def load_config(path):
    try:
        with open(path, "r", encoding="utf-8") as fh:
            text = fh.read()
    except OSError as err:
        raise ConfigError(f"cannot read config file: {err}")
    try:
        cfg = json.loads(text)
    except json.JSONDecodeError as err:
        raise ConfigError(f"config is not valid JSON: {err}")
    _check_keys(cfg, _TOP_KEYS, "config")
    return cfg


def build_scheme_config(cfg, args):
    section = cfg.get("scheme", {})
    _check_keys(section, _SCHEME_KEYS, "scheme")
    kw = {}
    kind = section.get("kind")
    if args.scheme is not None:
        kind = args.scheme
    if kind is not None:
        _require(isinstance(kind, str), "scheme kind must be a string")
        kw["kind"] = normalize_scheme_kind(kind)
    flux = section.get("flux")
    if args.flux is not None:
        flux = args.flux
    if flux is not None:
        _require(isinstance(flux, str), "flux must be a string")
        kw["flux"] = flux
    eta = section.get("eta")
    if args.eta is not None:
        eta = args.eta
    if eta is not None:
        kw["eta"] = _number(eta, "eta", positive=True)
    if "m" in section:
        m = section["m"]
        _require(m in _M_ALIASES,
                 "scheme m must be one of " + ", ".join(sorted(_M_ALIASES)))
        kw["m_kind"] = _M_ALIASES[m]
    if "f_k" in section:
        _require(section["f_k"] in ("mean", "max"),
                 "scheme f_k must be 'mean' or 'max'")
        kw["f_kind"] = section["f_k"]
    for key, dest in (("newton_eps", "newton_eps"),
                      ("newton_tol", "newton_tol")):
        if key in section:
            kw[dest] = _number(section[key], key, positive=True)
    if "newton_imax" in section:
        imax = section["newton_imax"]
        _require(isinstance(imax, int) and not isinstance(imax, bool)
                 and imax >= 1, "newton_imax must be a positive integer")
        kw["newton_imax"] = imax
    return sch.SchemeConfig(**kw)


def build_problem(section):
    """Inline problem data from the config 'problem' section."""
    _check_keys(section, _PROBLEM_KEYS, "problem")
    _require("lambda" in section, "problem requires a 'lambda' entry")
    lam = section["lambda"]
    _require(isinstance(lam, (int, float, list)) and not isinstance(lam, bool),
             "lambda must be a number, a pair, or a 2x2 matrix")
    try:
        tensor = disc.DiffusionTensor(lam)
    except ValueError as err:
        raise ConfigError(f"lambda: {err}")

    fields = {}
    for key in ("phi", "f", "g_dirichlet", "g_neumann", "u_init"):
        if key in section:
            fields[key] = compile_field(section[key], key)

    dirichlet = section.get("dirichlet", [])
    if dirichlet == "all":
        dirichlet = [{}]
    _require(isinstance(dirichlet, list),
             "dirichlet must be 'all' or a list of box objects")
    for box in dirichlet:
        _require(isinstance(box, dict), "dirichlet entries must be objects")
        unknown = set(box) - {"xmin", "xmax", "ymin", "ymax"}
        _require(not unknown,
                 f"unknown dirichlet box keys: {', '.join(sorted(unknown))}")
        for value in box.values():
            _number(value, "dirichlet box bound")

    mass = section.get("mass")
    if mass is not None:
        mass = _number(mass, "mass")
    rho_d = section.get("rho_dirichlet")
    if rho_d is not None:
        rho_d = _number(rho_d, "rho_dirichlet")

    return sch.ProblemData(
        lam=tensor, phi=fields.get("phi"), f=fields.get("f", 0.0),
        g_dirichlet=fields.get("g_dirichlet"),
        g_neumann=fields.get("g_neumann", 0.0),
        u_init=fields.get("u_init"), dirichlet=dirichlet,
        mass=mass, rho_dirichlet=rho_d)


def build_mesh(cfg, args, case, data):
    """Generate or load the mesh and tag its boundary from the problem."""
    section = cfg.get("mesh", {})
    _check_keys(section, _MESH_KEYS, "mesh")
    mesh_file = args.mesh_file if args.mesh_file is not None \
        else section.get("file")
    if mesh_file is not None:
        _require(isinstance(mesh_file, str), "mesh file must be a path string")
        try:
            msh = meshmod.load_mesh(mesh_file)
        except OSError as err:
            raise meshmod.MeshError(f"cannot read mesh file: {err}")
        info = {"file": mesh_file}
    else:
        family = section.get("family", case.family if case else None)
        _require(family is not None, "mesh requires a family or a file")
        _require(isinstance(family, str), "mesh family must be a string")
        n = section.get("n", case.n if case else None)
        _require(isinstance(n, int) and not isinstance(n, bool) and n >= 1,
                 "mesh n must be a positive integer")
        allowed = _MESH_PARAMS.get(family)
        params = {k: _number(section[k], f"mesh {k}")
                  for k in ("distortion", "tilt") if k in section}
        if allowed is not None:
            unknown = set(params) - allowed
            _require(not unknown, f"mesh family {family!r} does not take "
                     + ", ".join(sorted(unknown)))
        if case is not None and family == case.family and not params:
            params = dict(case.mesh_params)
        msh = meshmod.generate(family, n, **params)
        info = {"family": family, "n": n}
        info.update(params)
    msh = data.tag(msh)
    info.update({"cells": msh.n_cells, "faces": msh.n_faces,
                 "h_tilde": msh.h_tilde, "theta": msh.theta})
    return msh, info


# ---------------------------------------------------------------------------
# Artifact writers
# ---------------------------------------------------------------------------

SERIES_HEADER = ["step", "t", "E", "D", "dist_L1_exact", "dist_L1_discrete",
                 "dist_L2", "min_cell", "min_face", "negatives_count",
                 "solves_cumulative"]
_SERIES_KEYS = ["step", "t", "entropy", "dissipation", "dist_l1_exact",
                "dist_l1_discrete", "dist_l2", "min_cell", "min_face",
                "negatives", "solves"]


def fmt_value(value):
    """CSV cell: empty for missing, plain for ints, 17 significant digits
    scientific for floats."""
    if value is None:
        return ""
    if isinstance(value, str):
        return value
    if isinstance(value, (int, np.integer)) and not isinstance(value, bool):
        return str(int(value))
    return f"{float(value):.16e}"


def atomic_write(path, text):
    """Write text to path via a temporary file in the same directory."""
    directory = os.path.dirname(path) or "."
    fd, tmp = tempfile.mkstemp(dir=directory, prefix=".tmp-hfv-")
    try:
        with os.fdopen(fd, "w", encoding="utf-8", newline="") as fh:
            fh.write(text)
        os.replace(tmp, path)
    except OSError:
        try:
            os.unlink(tmp)
        except OSError:
            pass
        raise


def write_csv(path, header, rows):
    buf = io.StringIO()
    writer = csv.writer(buf)
    writer.writerow(header)
    for row in rows:
        writer.writerow([fmt_value(v) for v in row])
    atomic_write(path, buf.getvalue())


def write_series(path, records):
    rows = [[record[key] for key in _SERIES_KEYS] for record in records]
    write_csv(path, SERIES_HEADER, rows)


def write_summary(path, summary):
    """Single-row summary: column per key, insertion order preserved."""
    write_csv(path, list(summary), [list(summary.values())])


def export_vtk(mesh, dof, path):
    """Legacy VTK POLYDATA file with the cell unknowns as cell data."""
    rings = meshmod.cell_rings(mesh)
    lines = ["# vtk DataFile Version 3.0", "hfv solution", "ASCII",
             "DATASET POLYDATA", f"POINTS {mesh.vertices.shape[0]} double"]
    for vx, vy in mesh.vertices:
        lines.append(f"{vx:.16e} {vy:.16e} 0.0")
    size = sum(len(ring) + 1 for ring in rings)
    lines.append(f"POLYGONS {len(rings)} {size}")
    for ring in rings:
        lines.append(" ".join([str(len(ring))] + [str(v) for v in ring]))
    lines.append(f"CELL_DATA {len(rings)}")
    lines.append("SCALARS u_cell double 1")
    lines.append("LOOKUP_TABLE default")
    for value in np.asarray(dof.cells, dtype=float):
        lines.append(f"{value:.16e}")
    atomic_write(path, "\n".join(lines) + "\n")


def write_run_json(path, payload):
    atomic_write(path, json.dumps(payload, indent=2, sort_keys=True) + "\n")


# ---------------------------------------------------------------------------
# Commands
# ---------------------------------------------------------------------------

def _resolve_case(cfg):
    """Return (case or None, problem data)."""
    has_case = "case" in cfg
    has_problem = "problem" in cfg
    _require(has_case != has_problem,
             "config needs exactly one of 'case' or 'problem'")
    if has_case:
        name = cfg["case"]
        _require(isinstance(name, str), "case must be a string")
        try:
            case = exps.get_case(name)
        except KeyError:
            raise ConfigError(
                f"unknown case {name!r}; expected one of "
                + ", ".join(sorted(exps.CASES)))
        return case, case.data
    return None, build_problem(cfg["problem"])


def _time_grid(cfg, args, case, required):
    dt = cfg.get("dt", case.dt if case else None)
    if args.dt is not None:
        dt = args.dt
    tf = cfg.get("tf", case.t_final if case else None)
    if args.tf is not None:
        tf = args.tf
    if required:
        _require(dt is not None, "command requires a time step 'dt'")
        _require(tf is not None, "command requires a final time 'tf'")
    if dt is not None:
        dt = _number(dt, "dt", positive=True)
    if tf is not None:
        tf = _number(tf, "tf")
        _require(tf >= 0, "tf must be nonnegative")
    return dt, tf


def _maybe_vtk(cfg, out, mesh, dof, step, artifacts):
    flag = cfg.get("vtk", False)
    _require(isinstance(flag, bool), "vtk must be true or false")
    if flag:
        name = f"solution_{step:04d}.vtk"
        export_vtk(mesh, dof, os.path.join(out, name))
        artifacts.append(name)


def cmd_stationary(cfg, args, out):
    case, data = _resolve_case(cfg)
    scheme_cfg = build_scheme_config(cfg, args)
    mesh, mesh_info = build_mesh(cfg, args, case, data)
    if case is not None:
        u, solves = exps.stationary_solution(mesh, case, scheme_cfg)
    else:
        u, solves = sol.solve_stationary(mesh, data, scheme_cfg)

    summary = {
        "case": case.name if case else "inline",
        "scheme": scheme_cfg.kind, "flux": scheme_cfg.flux,
        "cells": mesh.n_cells, "h_tilde": mesh.h_tilde, "theta": mesh.theta,
        "solves": solves, "mass": float(mesh.cell_area @ u.cells),
        "min_cell": float(u.cells.min()), "min_face": float(u.faces.min()),
        "l2_error": None, "h1_error": None,
    }
    exact = case.u_exact or case.uinf if case else None
    if exact is not None:
        ref = disc.interpolate(exact, mesh)
        diff = u - ref
        summary["l2_error"] = disc.norm_l2(mesh, diff.cells) \
            / disc.norm_l2(mesh, ref.cells)
        summary["h1_error"] = disc.seminorm_h1(mesh, diff) \
            / disc.seminorm_h1(mesh, ref)

    artifacts = ["summary.csv", "run.json"]
    write_summary(os.path.join(out, "summary.csv"), summary)
    _maybe_vtk(cfg, out, mesh, u, 0, artifacts)
    return summary, mesh_info, artifacts


def _run_study(cfg, args, out, command):
    """Shared driver of transient, longtime, and positivity commands."""
    case, data = _resolve_case(cfg)
    _require(data.u_init is not None,
             f"{command} requires an initial datum u_init")
    scheme_cfg = build_scheme_config(cfg, args)
    mesh, mesh_info = build_mesh(cfg, args, case, data)
    dt, tf = _time_grid(cfg, args, case, required=True)
    uinf = case.uinf if case else None
    result = exps.run_transient_study(mesh, data, scheme_cfg, dt, tf,
                                      uinf=uinf)
    rows = result.rows
    last = rows[-1]
    summary = {
        "case": case.name if case else "inline",
        "scheme": scheme_cfg.kind, "flux": scheme_cfg.flux,
        "cells": mesh.n_cells, "dt": dt, "tf": tf,
        "steps": last["step"], "cost": result.cost,
        "mass_initial": result.mass0,
        "mass_final": float(mesh.cell_area @ result.final.cells),
        "E_final": last["entropy"],
        "dist_L1_discrete_final": last["dist_l1_discrete"],
    }

    if command == "longtime":
        t = [r["t"] for r in rows]
        fit_disc = exps.decay_fit(t, [r["dist_l1_discrete"] for r in rows])
        summary.update(nu_discrete=fit_disc.rate,
                       plateau_discrete=fit_disc.plateau)
        if uinf is not None:
            fit = exps.decay_fit(t, [r["dist_l1_exact"] for r in rows])
            summary.update(nu_exact=fit.rate, plateau_exact=fit.plateau)
        if case is not None and case.alpha is not None:
            summary["alpha"] = case.alpha
    elif command == "positivity":
        report = exps.positivity_report(rows)
        summary.update(
            negatives_total=report["negatives_total"],
            min_cell=report["min_cell"], min_face=report["min_face"],
            min_value=report["min_value"],
            final_min_cell=report["final_min_cell"])

    artifacts = ["series.csv", "summary.csv", "run.json"]
    write_series(os.path.join(out, "series.csv"), rows)
    write_summary(os.path.join(out, "summary.csv"), summary)
    _maybe_vtk(cfg, out, mesh, result.final, last["step"], artifacts)
    return summary, mesh_info, artifacts


def cmd_converge(cfg, args, out):
    case, _ = _resolve_case(cfg)
    _require(case is not None and (case.u_exact is not None
                                   or case.uinf is not None),
             "converge requires a named case with an exact solution")
    scheme_cfg = build_scheme_config(cfg, args)
    levels = cfg.get("levels")
    _require(isinstance(levels, list) and levels
             and all(isinstance(n, int) and not isinstance(n, bool)
                     and n >= 1 for n in levels),
             "converge requires 'levels': a list of positive integers")
    kinds = cfg.get("schemes", [scheme_cfg.kind])
    _require(isinstance(kinds, list) and kinds
             and all(isinstance(k, str) for k in kinds),
             "'schemes' must be a list of scheme kinds")
    kinds = [normalize_scheme_kind(k) for k in kinds]
    if args.scheme is not None:
        kinds = [scheme_cfg.kind]

    section = cfg.get("mesh", {})
    _check_keys(section, _MESH_KEYS, "mesh")
    _require("file" not in section and args.mesh_file is None,
             "converge generates its own mesh levels; 'file' is not allowed")
    family = section.get("family")

    table = exps.run_convergence(case, kinds, levels, family=family,
                                 flux=scheme_cfg.flux, eta=scheme_cfg.eta)
    header = ["scheme", "n", "cells", "h_tilde", "theta",
              "l2_error", "h1_error", "eoc_l2", "eoc_h1"]
    rows = []
    for kind in kinds:
        res = table["schemes"][kind]
        for i, n in enumerate(levels):
            rows.append([
                kind, n, table["cells"][i], table["h"][i], table["theta"][i],
                res["l2"][i], res["h1"][i],
                None if i == 0 else res["eoc_l2"][i - 1],
                None if i == 0 else res["eoc_h1"][i - 1]])
    write_csv(os.path.join(out, "summary.csv"), header, rows)

    summary = {"case": case.name, "levels": levels, "schemes": {}}
    for kind in kinds:
        res = table["schemes"][kind]
        summary["schemes"][kind] = {
            "l2": res["l2"], "h1": res["h1"],
            "eoc_l2": res["eoc_l2"], "eoc_h1": res["eoc_h1"]}
    mesh_info = {"family": family or case.family, "levels": levels,
                 "cells": table["cells"], "h_tilde": table["h"],
                 "theta": table["theta"]}
    return summary, mesh_info, ["summary.csv", "run.json"]


_COMMANDS = {
    "stationary": cmd_stationary,
    "transient": lambda cfg, args, out: _run_study(cfg, args, out, "transient"),
    "converge": cmd_converge,
    "longtime": lambda cfg, args, out: _run_study(cfg, args, out, "longtime"),
    "positivity": lambda cfg, args, out: _run_study(cfg, args, out,
                                                    "positivity"),
}


# ---------------------------------------------------------------------------
# Entry point
# ---------------------------------------------------------------------------

def _parser():
    parser = argparse.ArgumentParser(
        prog="hfv",
        description="Hybrid finite volume schemes for anisotropic "
                    "advection-diffusion on polygonal meshes.")
    sub = parser.add_subparsers(dest="command", required=True)
    for name in _COMMANDS:
        cmd = sub.add_parser(name)
        cmd.add_argument("--config", required=True,
                         help="JSON run configuration")
        cmd.add_argument("--out", help="output directory (default: config "
                                       "'out' entry or current directory)")
        cmd.add_argument("--mesh-file", help="polymesh file overriding the "
                                             "configured mesh")
        cmd.add_argument("--scheme",
                         choices=["hmm", "expfit", "expfit-harmonic",
                                  "expfit_harmonic", "nonlinear"])
        cmd.add_argument("--flux", choices=["centred", "upwind", "sg"])
        cmd.add_argument("--eta", type=float)
        cmd.add_argument("--dt", type=float)
        cmd.add_argument("--tf", type=float)
    return parser


def _fail(category, message):
    print(f"error: {category}: {message}", file=sys.stderr)
    return {"config": 2, "mesh": 3, "solver": 4, "io": 5}[category]


def main(argv=None):
    args = _parser().parse_args(argv)
    if args.scheme is not None:
        args.scheme = normalize_scheme_kind(args.scheme)
    try:
        cfg = load_config(args.config)
        out = args.out if args.out is not None else cfg.get("out", ".")
        _require(isinstance(out, str) and out, "out must be a directory path")
        seed = cfg.get("seed", 0)
        _require(isinstance(seed, int) and not isinstance(seed, bool),
                 "seed must be an integer")
    except (ConfigError, sch.SchemeError) as err:
        return _fail("config", err)

    try:
        os.makedirs(out, exist_ok=True)
    except OSError as err:
        return _fail("io", err)

    try:
        summary, mesh_info, artifacts = _COMMANDS[args.command](
            cfg, args, out)
    except (ConfigError, sch.SchemeError) as err:
        return _fail("config", err)
    except meshmod.MeshError as err:
        return _fail("mesh", err)
    except sol.SolverError as err:
        return _fail("solver", err)
    except OSError as err:
        return _fail("io", err)

    payload = {"command": args.command, "config": cfg, "seed": seed,
               "mesh": mesh_info, "summary": summary,
               "artifacts": sorted(artifacts)}
    try:
        write_run_json(os.path.join(out, "run.json"), payload)
    except OSError as err:
        return _fail("io", err)
    return 0


if __name__ == "__main__":
    sys.exit(main())
