"""Command-line driver: mesh summaries, operator checks, solves, convergence
studies, and exterior evaluation.

Configuration comes from a TOML file; every key can be overridden by a flag.
All artifacts land in the configured output directory:

    report.json           per-command summary (checks, residuals, rates)
    system_manifest.json  block layout and symmetry flags of the assembled system
    errors.csv            per-level error/discrepancy table
    solution.vtk          cell fields (velocity, pressure, vorticity)
    exterior_samples.csv  evaluated exterior velocity/pressure samples

Runs are deterministic: the same config and seed reproduce the CSV/JSON
artifacts byte for byte.
"""

from __future__ import annotations

import argparse
import json
import sys
from pathlib import Path

try:
    import tomllib
except ImportError:                      # Python < 3.11
    import tomli as tomllib

import numpy as np

from . import forms, solve as slv, verify as vf
from .geometry import GAMMA, GAMMA0, MeshHierarchy, build_cube_annulus

KIND_NAMES = {
    "jn": "JN_NeumannHomog",
    "ch-dirichlet": "CH_Dirichlet",
    "ch-neumann": "CH_Neumann",
    "ch-neumann-homog": "CH_NeumannHomog",
}

# flat defaults; the TOML sections [run], [geometry], [quadrature], [data],
# [exterior] are flattened onto these keys
DEFAULTS = {
    "formulation": "ch-dirichlet",
    "levels": [0, 1],
    "trace_ratio": 2,
    "seed": 0,
    "output_dir": "out",
    "threads": 1,
    "inner_half_width": 0.5,
    "outer_half_width": 1.0,
    "sing_order": 6,
    "reg_order": 2,
    "near_order": 4,
    "near_factor": 2.0,
    "volume_degree": 4,
    "f": "zero",
    "g_d": "none",
    "g_n": "none",
    "stokeslet_source": [0.1, -0.05, 0.13],
    "stokeslet_strength": [1.0, 0.5, -0.25],
    "exterior_points": [[3.0, 0.0, 0.0], [0.0, 3.0, 0.0], [0.0, 0.0, 3.0]],
    "points_file": "",
}

_SECTIONS = ("run", "geometry", "quadrature", "data", "exterior")


class ConfigError(Exception):
    def __init__(self, field, message):
        self.field = field
        super().__init__(f"config error [{field}]: {message}")


# ------------------------------------------------------------- configuration

def load_config(path=None, overrides=None, need_data=True):
    """Merge defaults <- TOML file <- flag overrides into one flat dict.

    `need_data` controls whether formulation/data compatibility is enforced;
    commands that assemble nothing (mesh-info, check) skip it.
    """
    cfg = dict(DEFAULTS)
    if path:
        with open(path, "rb") as fh:
            raw = tomllib.load(fh)
        for section, body in raw.items():
            if section not in _SECTIONS:
                raise ConfigError(section, "unknown config section")
            if not isinstance(body, dict):
                raise ConfigError(section, "sections must be TOML tables")
            for key, value in body.items():
                if key not in DEFAULTS:
                    raise ConfigError(f"{section}.{key}", "unknown config key")
                cfg[key] = value
    for key, value in (overrides or {}).items():
        if value is not None:
            cfg[key] = value
    validate_config(cfg, need_data=need_data)
    return cfg


def validate_config(cfg, need_data=True):
    kind_name = cfg["formulation"]
    if kind_name not in KIND_NAMES:
        raise ConfigError("run.formulation",
                          f"unknown formulation {kind_name!r}; choose from "
                          f"{sorted(KIND_NAMES)}")
    if cfg["inner_half_width"] != 0.5 or cfg["outer_half_width"] != 1.0:
        raise ConfigError("geometry", "the cube-annulus generator is fixed at "
                          "inner_half_width = 0.5, outer_half_width = 1.0")
    levels = cfg["levels"]
    if (not levels or any(not isinstance(l, int) or l < 0 for l in levels)
            or list(levels) != sorted(set(levels))):
        raise ConfigError("run.levels",
                          "levels must be strictly increasing nonneg integers")
    if cfg["trace_ratio"] not in (1, 2):
        raise ConfigError("run.trace_ratio", "trace_ratio must be 1 or 2")
    if not need_data:
        return
    kind = KIND_NAMES[kind_name]
    if kind in ("JN_NeumannHomog", "CH_NeumannHomog"):
        if cfg["g_d"] != "none":
            raise ConfigError("data.g_d",
                              f"formulation {kind_name} takes no g_d datum")
        if cfg["g_n"] != "none":
            raise ConfigError("data.g_n",
                              f"formulation {kind_name} takes no g_n datum")
    if kind == "CH_Dirichlet":
        if cfg["g_d"] == "none":
            raise ConfigError("data.g_d",
                              "formulation ch-dirichlet requires a g_d datum")
        if cfg["g_n"] != "none":
            raise ConfigError("data.g_n",
                              "formulation ch-dirichlet takes no g_n datum")
    if kind == "CH_Neumann":
        if cfg["g_n"] == "none":
            raise ConfigError("data.g_n",
                              "formulation ch-neumann requires a g_n datum")
        if cfg["g_d"] != "none":
            raise ConfigError("data.g_d",
                              "formulation ch-neumann takes no g_d datum")
    for key in ("g_d", "g_n"):
        if cfg[key] not in ("none", "zero", "stokeslet"):
            raise ConfigError(f"data.{key}",
                              "selector must be none | zero | stokeslet")
    if cfg["f"] not in ("zero", "constant", "smooth"):
        raise ConfigError("data.f", "selector must be zero | constant | smooth")


def _smooth_f(p):
    return np.stack([np.sin(np.pi * p[:, 0]) * p[:, 1],
                     np.cos(np.pi * p[:, 2]),
                     p[:, 0] * p[:, 1]], axis=1)


def problem_data(cfg):
    """Turn the data selectors into a ProblemData, validating the Stokeslet
    fields against the finite-difference oracle when they are used."""
    exact = None
    if "stokeslet" in (cfg["g_d"], cfg["g_n"]):
        exact = vf.stokeslet_manufactured(cfg["stokeslet_source"],
                                          cfg["stokeslet_strength"])
    if cfg["f"] == "zero":
        f = None
    elif cfg["f"] == "constant":
        f = lambda p: np.tile([0.5, -1.0, 0.25], (len(p), 1))
    else:
        f = _smooth_f
    gD = {"none": None, "zero": lambda p: np.zeros_like(p),
          "stokeslet": (lambda p: exact.velocity(p)) if exact else None}
    gN = {"none": None, "zero": lambda p, n: np.zeros_like(np.atleast_2d(p)),
          "stokeslet": (lambda p, n: exact.traction(p, n)) if exact else None}
    data = forms.ProblemData(f=f, gD=gD[cfg["g_d"]], gN=gN[cfg["g_n"]])
    return data, exact


def make_quad(cfg):
    return forms.QuadratureOptions(sing_order=cfg["sing_order"],
                                   reg_order=cfg["reg_order"],
                                   near_order=cfg["near_order"],
                                   near_factor=cfg["near_factor"],
                                   volume_degree=cfg["volume_degree"])


def make_hierarchy(cfg):
    return MeshHierarchy(build_cube_annulus(level=0), max(cfg["levels"]) + 1)


def _apply_threads(cfg):
    try:
        import numba
        numba.set_num_threads(max(1, int(cfg["threads"])))
    except (ImportError, ValueError):
        pass


def _effective_ratio(cfg, kind, level):
    # the two-mesh kinds fall back to the same-partition variant on the
    # coarsest level, where no once-coarsened surface exists
    if (cfg["trace_ratio"] == 2 and level == 0
            and kind in ("JN_NeumannHomog", "CH_Neumann")):
        return 1
    return cfg["trace_ratio"]


# ----------------------------------------------------------------- artifacts

def _write_json(path, payload):
    with open(path, "w") as fh:
        json.dump(payload, fh, indent=2, sort_keys=True)
        fh.write("\n")


def _write_csv(path, header, rows):
    with open(path, "w") as fh:
        fh.write(",".join(header) + "\n")
        for row in rows:
            cells = ["%.16e" % v if isinstance(v, float) else str(v)
                     for v in row]
            fh.write(",".join(cells) + "\n")


def _outdir(cfg):
    out = Path(cfg["output_dir"])
    out.mkdir(parents=True, exist_ok=True)
    return out


def _config_echo(cfg):
    return {k: cfg[k] for k in sorted(DEFAULTS)}


def _solve_summary(rep):
    # wall time varies run to run; everything else must reproduce exactly
    return {k: v for k, v in rep.as_dict().items() if k != "wall_time"}


# ------------------------------------------------------------------ commands

def cmd_mesh_info(cfg):
    hier = make_hierarchy(cfg)
    rows = []
    for level in cfg["levels"]:
        mesh = hier.mesh(level)
        gamma = hier.surface(GAMMA, level)
        gamma0 = hier.surface(GAMMA0, level)
        vols = np.abs(np.linalg.det(
            mesh.vertices[mesh.tets[:, 1:]]
            - mesh.vertices[mesh.tets[:, :1]])) / 6.0
        rows.append(dict(level=level,
                         tets=int(len(mesh.tets)),
                         vertices=int(len(mesh.vertices)),
                         h=float(hier.diameters()[level]),
                         outer_triangles=int(gamma.num_tris),
                         inner_triangles=int(gamma0.num_tris),
                         volume=float(vols.sum())))
    report = dict(command="mesh-info", config=_config_echo(cfg), levels=rows)
    _write_json(_outdir(cfg) / "report.json", report)
    print(json.dumps(rows, indent=2, sort_keys=True))
    return 0


def cmd_check(cfg):
    hier = make_hierarchy(cfg)
    checks = vf.operator_checks(hier, sing_order=max(cfg["sing_order"], 8),
                                reg_order=max(cfg["reg_order"], 6),
                                near_order=max(cfg["near_order"], 8),
                                near_factor=max(cfg["near_factor"], 4.0))
    passed = all(c["passed"] for c in checks.values())
    report = dict(command="check", config=_config_echo(cfg), checks=checks,
                  passed=passed)
    _write_json(_outdir(cfg) / "report.json", report)
    for name, c in sorted(checks.items()):
        print(f"{'PASS' if c['passed'] else 'FAIL'} {name}: {c['value']}")
    if not passed:
        failing = [n for n, c in checks.items() if not c["passed"]]
        print(f"failed checks: {', '.join(failing)}", file=sys.stderr)
        return 1
    return 0


def _solve_once(cfg, out):
    kind = KIND_NAMES[cfg["formulation"]]
    level = max(cfg["levels"])
    hier = make_hierarchy(cfg)
    data, exact = problem_data(cfg)
    system = forms.build_system(kind, hier, level, data, quad=make_quad(cfg),
                                trace_ratio=_effective_ratio(cfg, kind, level))
    bundle, rep = slv.solve_direct(system, release_dense=False)
    _write_json(out / "system_manifest.json", system.manifest())
    slv.export_vtk(out / "solution.vtk", system, bundle)
    if exact is not None:
        errs = slv.energy_errors(system, bundle, exact)
        header = sorted(errs)
        _write_csv(out / "errors.csv", ["level"] + header,
                   [[level] + [float(errs[k]) for k in header]])
    return system, bundle, rep, exact


def cmd_solve(cfg):
    out = _outdir(cfg)
    system, bundle, rep, _ = _solve_once(cfg, out)
    report = dict(command="solve", config=_config_echo(cfg),
                  level=int(system.meta["level"]), kind=system.kind,
                  unknowns=int(system.size), solve=_solve_summary(rep))
    ok = rep.residual <= 1e-9 and rep.rm_residual <= 1e-9
    report["passed"] = bool(ok)
    _write_json(out / "report.json", report)
    print(f"{'PASS' if ok else 'FAIL'} solve {system.kind} level "
          f"{system.meta['level']}: residual {rep.residual:.3e}")
    if not ok:
        print("failed check: linear solve residual", file=sys.stderr)
    return 0 if ok else 1


def cmd_converge(cfg):
    out = _outdir(cfg)
    kind = KIND_NAMES[cfg["formulation"]]
    hier = make_hierarchy(cfg)
    quad = make_quad(cfg)
    if kind in ("CH_Dirichlet", "CH_Neumann"):
        data, exact = problem_data(cfg)
        table = vf.run_convergence(kind, hier, cfg["levels"], data=data,
                                   quad=quad, exact=exact)
        keys = ["level", "h", "sigma_l2", "u_l2", "chi_l2", "p_l2",
                "phi_energy", "residual"]
        rows = [[r[k] if k == "level" else float(r[k]) for k in keys]
                for r in table["rows"]]
        ok = all(r["residual"] <= 1e-9 for r in table["rows"])
    else:
        data, _ = problem_data(cfg)
        table = vf.cross_formulation_check(hier, cfg["levels"], f=data.f,
                                           quad=quad)
        keys = ["level", "sigma_discrepancy", "u_discrepancy"]
        rows = [[r[k] if k == "level" else float(r[k]) for k in keys]
                for r in table["rows"]]
        ok = True
    _write_csv(out / "errors.csv", keys, rows)
    report = dict(command="converge", config=_config_echo(cfg), kind=kind,
                  table=table, passed=bool(ok))
    _write_json(out / "report.json", report)
    print(f"{'PASS' if ok else 'FAIL'} converge {kind} levels {cfg['levels']}")
    if not ok:
        print("failed check: linear solve residual", file=sys.stderr)
    return 0 if ok else 1


def _read_points(cfg):
    if cfg["points_file"]:
        raw = np.loadtxt(cfg["points_file"], delimiter=",", skiprows=1,
                         ndmin=2)
        return np.asarray(raw, dtype=float)[:, :3]
    return np.asarray(cfg["exterior_points"], dtype=float).reshape(-1, 3)


def cmd_eval_exterior(cfg):
    out = _outdir(cfg)
    pts = _read_points(cfg)
    system, bundle, rep, exact = _solve_once(cfg, out)
    vel, press = slv.eval_exterior(system, bundle, pts)
    slv.export_exterior_csv(out / "exterior_samples.csv", pts, vel, press)
    report = dict(command="eval-exterior", config=_config_echo(cfg),
                  kind=system.kind, level=int(system.meta["level"]),
                  points=int(len(pts)), solve=_solve_summary(rep))
    if exact is not None:
        vref = exact.velocity(pts)
        report["velocity_relative_error"] = float(
            np.linalg.norm(vel - vref) / np.linalg.norm(vref))
    ok = rep.residual <= 1e-9
    report["passed"] = bool(ok)
    _write_json(out / "report.json", report)
    print(f"{'PASS' if ok else 'FAIL'} eval-exterior: {len(pts)} points")
    if not ok:
        print("failed check: linear solve residual", file=sys.stderr)
    return 0 if ok else 1


# ---------------------------------------------------------------- entrypoint

def _int_list(text):
    return [int(tok) for tok in text.split(",") if tok]


def _float_list(text):
    return [float(tok) for tok in text.split(",") if tok]


def build_parser():
    parser = argparse.ArgumentParser(
        prog="exstokes",
        description=__doc__,
        formatter_class=argparse.RawDescriptionHelpFormatter)
    sub = parser.add_subparsers(dest="command", required=True)
    for name in ("mesh-info", "check", "solve", "converge", "eval-exterior"):
        p = sub.add_parser(name)
        p.add_argument("--config", help="TOML config file")
        p.add_argument("--formulation", choices=sorted(KIND_NAMES),
                       help=f"default: {DEFAULTS['formulation']}")
        p.add_argument("--levels", type=_int_list,
                       help=f"comma list, default: {DEFAULTS['levels']}")
        p.add_argument("--trace-ratio", dest="trace_ratio", type=int,
                       help="boundary-partition coarsening ratio (1 or 2, "
                            f"default {DEFAULTS['trace_ratio']})")
        p.add_argument("--seed", type=int,
                       help=f"default: {DEFAULTS['seed']}")
        p.add_argument("--output-dir", dest="output_dir",
                       help=f"default: {DEFAULTS['output_dir']}")
        p.add_argument("--threads", type=int,
                       help=f"default: {DEFAULTS['threads']}")
        for key in ("sing_order", "reg_order", "near_order", "volume_degree"):
            p.add_argument(f"--{key.replace('_', '-')}", dest=key, type=int,
                           help=f"default: {DEFAULTS[key]}")
        p.add_argument("--near-factor", dest="near_factor", type=float,
                       help=f"default: {DEFAULTS['near_factor']}")
        p.add_argument("--f", choices=("zero", "constant", "smooth"),
                       help=f"volume force selector, default {DEFAULTS['f']}")
        p.add_argument("--g-d", dest="g_d",
                       choices=("none", "zero", "stokeslet"),
                       help="velocity datum selector, default none")
        p.add_argument("--g-n", dest="g_n",
                       choices=("none", "zero", "stokeslet"),
                       help="traction datum selector, default none")
        p.add_argument("--stokeslet-source", dest="stokeslet_source",
                       type=_float_list,
                       help=f"default: {DEFAULTS['stokeslet_source']}")
        p.add_argument("--stokeslet-strength", dest="stokeslet_strength",
                       type=_float_list,
                       help=f"default: {DEFAULTS['stokeslet_strength']}")
        if name == "eval-exterior":
            p.add_argument("--points-file", dest="points_file",
                           help="CSV of sample points (x,y,z header row)")
    return parser


_COMMANDS = {
    "mesh-info": cmd_mesh_info,
    "check": cmd_check,
    "solve": cmd_solve,
    "converge": cmd_converge,
    "eval-exterior": cmd_eval_exterior,
}


def main(argv=None):
    args = build_parser().parse_args(argv)
    overrides = {k: v for k, v in vars(args).items()
                 if k not in ("command", "config")}
    try:
        cfg = load_config(args.config, overrides,
                          need_data=args.command not in ("mesh-info",
                                                         "check"))
    except ConfigError as exc:
        print(str(exc), file=sys.stderr)
        return 2
    except FileNotFoundError as exc:
        print(f"config error [config]: {exc}", file=sys.stderr)
        return 2
    _apply_threads(cfg)
    try:
        return _COMMANDS[args.command](cfg)
    except (ValueError, RuntimeError, AssertionError) as exc:
        print(f"run failed [{args.command}]: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
