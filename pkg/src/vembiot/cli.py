"""
Command-line front end.

Exit codes: 0 success, 1 numerical or rate-regression failure, 2 bad
arguments or configuration.
"""
from __future__ import annotations

import argparse
import configparser
import csv
import sys
from dataclasses import dataclass, field
from importlib import resources
from pathlib import Path

import numpy as np

from .assembly import export_matrix_market
from .dofspace import BoundaryData, ConfigurationError
from .mesh import MeshError, check_regularity, footing_tagger, generate, side_tagger, write_mesh
from .projectors import dump_pack_csv
from .stepper import SolverError, TimeGrid, initialize, run, solve_steady
from .verify import (
    BUILTIN,
    ManufacturedCase,
    Scenario,
    system_for,
    builtin_case,
    convergence_study,
    rate_regressions,
)
from .vtk import write_state

EXIT_OK, EXIT_NUMERIC, EXIT_CONFIG = 0, 1, 2

PARAM_KEYS = ("mu", "lam", "alpha", "c0", "eta", "kappa", "rho", "s1", "s2", "s0")


@dataclass
class ExperimentConfig:
    case: str
    family: str | None = None
    levels: list = field(default_factory=list)
    n: int | None = None
    distortion: float = 0.0
    seed: int = 0
    t_final: float | None = None
    steps: list = field(default_factory=list)
    params: dict = field(default_factory=dict)
    out: str = "out"
    vtk: bool = False
    warp: float = 0.0
    dump_projectors: bool = False
    solver: str = "direct"
    zero_load: bool = False

    def validate(self) -> None:
        if self.case not in BUILTIN:
            raise ConfigurationError(f"unknown case {self.case!r}")
        if self.family is not None and self.family not in ("tri", "quad", "hex"):
            raise ConfigurationError(f"unknown mesh family {self.family!r}")
        if any(n < 1 for n in self.levels) or (self.n is not None and self.n < 1):
            raise ConfigurationError("mesh levels must be positive integers")
        if any(s < 1 for s in self.steps):
            raise ConfigurationError("step counts must be positive")
        if self.solver not in ("direct", "minres"):
            raise ConfigurationError(f"unknown solver {self.solver!r}")
        unknown = set(self.params) - set(PARAM_KEYS)
        if unknown:
            raise ConfigurationError(f"unknown parameters {sorted(unknown)}")


def _ints(text: str) -> list:
    return [int(s) for s in text.replace(",", " ").split()]


def _floats(text: str) -> list:
    return [float(s) for s in text.replace(",", " ").split()]


def read_config(source, case_hint: str | None = None) -> ExperimentConfig:
    """Parse an INI preset (path, or text when it contains a newline)."""
    cp = configparser.ConfigParser()
    try:
        if "\n" in str(source):
            cp.read_string(str(source))
        else:
            path = Path(source)
            if not path.exists():
                raise ConfigurationError(f"config file {source} not found")
            cp.read(path)
        case = cp.get("case", "id", fallback=case_hint)
        if case is None:
            raise ConfigurationError("config has no [case] id")
        cfg = ExperimentConfig(case=case)
        if cp.has_section("mesh"):
            m = cp["mesh"]
            cfg.family = m.get("family")
            cfg.levels = _ints(m.get("levels", ""))
            cfg.n = m.getint("n") if "n" in m else None
            cfg.distortion = m.getfloat("distortion", 0.0)
            cfg.seed = m.getint("seed", 0)
        if cp.has_section("time"):
            t = cp["time"]
            cfg.t_final = t.getfloat("t_final") if "t_final" in t else None
            cfg.steps = _ints(t.get("steps", ""))
        if cp.has_section("params"):
            cfg.params = {k: float(v) for k, v in cp["params"].items()}
        if cp.has_section("output"):
            o = cp["output"]
            cfg.out = o.get("dir", cfg.out)
            cfg.vtk = o.getboolean("vtk", False)
            cfg.warp = o.getfloat("warp", 0.0)
            cfg.dump_projectors = o.getboolean("dump_projectors", False)
        if cp.has_section("solver"):
            cfg.solver = cp["solver"].get("kind", "direct")
    except (configparser.Error, ValueError) as exc:
        if isinstance(exc, ConfigurationError):
            raise
        raise ConfigurationError(f"malformed config: {exc}") from exc
    cfg.validate()
    return cfg


def preset_text(case: str) -> str:
    return resources.files("vembiot").joinpath("presets", f"{case}.ini").read_text()


def load_config(args) -> ExperimentConfig:
    if args.config:
        cfg = read_config(args.config, args.case)
    else:
        if args.case is None:
            raise ConfigurationError("give --case or --config")
        if args.case not in BUILTIN:
            raise ConfigurationError(f"unknown case {args.case!r}; choose from {sorted(BUILTIN)}")
        cfg = read_config(preset_text(args.case))
    if args.case and args.config and args.case != cfg.case:
        raise ConfigurationError(f"--case {args.case} conflicts with config case {cfg.case}")
    if args.mesh_family:
        cfg.family = args.mesh_family
    if args.levels:
        lv = _ints(args.levels)
        if cfg.levels or len(lv) > 1:
            cfg.levels = lv
        else:
            cfg.n = lv[0]
    if args.dt:
        t_final = cfg.t_final or 1.0
        steps = []
        for dt in _floats(args.dt):
            if not dt > 0:
                raise ConfigurationError("dt must be positive")
            N = round(t_final / dt)
            if N < 1 or abs(N * dt - t_final) > 1e-9 * t_final:
                raise ConfigurationError(f"dt={dt} does not divide t_final={t_final}")
            steps.append(N)
        cfg.steps = steps
    if args.lam is not None:
        cfg.params["lam"] = args.lam
    if args.out:
        cfg.out = args.out
    if args.vtk:
        cfg.vtk = True
    if args.seed is not None:
        cfg.seed = args.seed
    if args.solver:
        cfg.solver = "minres" if args.solver == "iterative" else "direct"
    if getattr(args, "zero_load", False):
        cfg.zero_load = True
    if getattr(args, "dump_projectors", False):
        cfg.dump_projectors = True
    cfg.validate()
    return cfg


def _case(cfg: ExperimentConfig):
    try:
        case = builtin_case(cfg.case, **cfg.params)
    except ValueError as exc:
        raise ConfigurationError(str(exc)) from exc
    if cfg.family:
        case.family = cfg.family
    if cfg.t_final is not None and isinstance(case, ManufacturedCase):
        case.t_final = cfg.t_final
    return case


def _mesh(cfg, family, n, tagger=side_tagger):
    return generate(family, n, distortion=cfg.distortion, seed=cfg.seed, tagger=tagger)


def cmd_mesh(args) -> int:
    try:
        mesh = generate(args.family, args.n, distortion=args.distortion, seed=args.seed,
                        tagger=footing_tagger if args.footing_tags else side_tagger)
    except (ValueError, TypeError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    out = Path(args.out)
    out.parent.mkdir(parents=True, exist_ok=True)
    write_mesh(mesh, out)
    print(check_regularity(mesh, args.threshold).summary())
    return EXIT_OK


def cmd_convergence(args) -> int:
    cfg = load_config(args)
    case = _case(cfg)
    if not isinstance(case, ManufacturedCase):
        raise ConfigurationError(f"case {cfg.case} is not a manufactured solution")
    out = Path(cfg.out)
    out.mkdir(parents=True, exist_ok=True)
    family = cfg.family or case.family
    if case.transient and not cfg.levels:
        if cfg.n is None:
            raise ConfigurationError("a time study needs [mesh] n")
        report = convergence_study(case, _mesh(cfg, family, cfg.n), cfg.steps, cfg.solver, log=print)
    else:
        meshes = [_mesh(cfg, family, n) for n in cfg.levels]
        report = convergence_study(case, meshes, cfg.steps or None, cfg.solver, log=print)
    csv_path = out / f"{cfg.case}.csv"
    report.write_csv(csv_path)
    print(report.format())
    print(f"wrote {csv_path}")
    fails = rate_regressions(report)
    if fails:
        print("rate regression failures:", file=sys.stderr)
        for f in fails:
            print("  " + f, file=sys.stderr)
        return EXIT_NUMERIC
    return EXIT_OK


def cmd_run(args) -> int:
    cfg = load_config(args)
    case = _case(cfg)
    out = Path(cfg.out)
    out.mkdir(parents=True, exist_ok=True)
    if isinstance(case, Scenario):
        n = cfg.n or (cfg.levels[-1] if cfg.levels else case.n)
        mesh = _mesh(cfg, cfg.family or case.family, n, tagger=case.tagger)
        t_final = cfg.t_final or case.grid.t_final
        grid = TimeGrid(t_final, cfg.steps[0] if cfg.steps else case.grid.n_steps)
        problem = case.problem()
        if cfg.zero_load:
            problem.boundary = BoundaryData()
        system = system_for(case, mesh)
        init = initialize(system)
    else:
        n = cfg.n or (cfg.levels[-1] if cfg.levels else 8)
        mesh = _mesh(cfg, cfg.family or case.family, n)
        system = system_for(case, mesh)
        problem = case.problem()
        grid = None
        if case.transient:
            grid = TimeGrid(case.t_final, cfg.steps[-1] if cfg.steps else 10)
            init = initialize(system, lambda x: case.u(x, 0.0), lambda x: case.p(x, 0.0),
                              lambda x: case.psi(x, 0.0))
    if cfg.dump_projectors:
        export_matrix_market(system, out / "matrices")
        for c in range(min(4, len(system.packs))):
            dump_pack_csv(out / f"projectors_cell{c}.csv", system.packs[c])
    rows = []

    def record(state):
        k = len(rows)
        rows.append([k, f"{state.t:.6g}", f"{np.abs(state.u).max():.6g}", f"{state.p.min():.6g}",
                     f"{state.p.max():.6g}", f"{state.psi.min():.6g}", f"{state.psi.max():.6g}"])
        if cfg.vtk:
            write_state(out / f"{cfg.case}_{k:04d}.vtk", system, state, cfg.warp)

    if grid is None:
        record(solve_steady(system, problem, cfg.solver))
    else:
        run(system, grid, problem, init, observers=[record], solver=cfg.solver, keep_history=False)
    with open(out / f"{cfg.case}_summary.csv", "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["step", "t", "max|u|", "min p", "max p", "min psi", "max psi"])
        w.writerows(rows)
    print(f"{len(rows)} states written to {out}")
    return EXIT_OK


def build_parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(prog="vembiot", description="Lowest-order virtual elements for three-field poroelasticity")
    sub = ap.add_subparsers(dest="command", required=True)

    m = sub.add_parser("mesh", help="generate and write a mesh")
    m.add_argument("--family", choices=("tri", "quad", "hex"), required=True)
    m.add_argument("--n", type=int, required=True)
    m.add_argument("--distortion", type=float, default=0.0)
    m.add_argument("--seed", type=int, default=0)
    m.add_argument("--threshold", type=float, default=0.05, help="shortest-edge / diameter bound")
    m.add_argument("--footing-tags", action="store_true")
    m.add_argument("--out", required=True)
    m.set_defaults(func=cmd_mesh)

    for name, func, helptext in (("convergence", cmd_convergence, "run a convergence study"),
                                 ("run", cmd_run, "run a single simulation")):
        p = sub.add_parser(name, help=helptext)
        p.add_argument("--config")
        p.add_argument("--case")
        p.add_argument("--mesh-family", choices=("tri", "quad", "hex"))
        p.add_argument("--levels", help="comma separated mesh sizes n")
        p.add_argument("--dt", help="comma separated time steps")
        p.add_argument("--lambda", dest="lam", type=float)
        p.add_argument("--out")
        p.add_argument("--vtk", action="store_true")
        p.add_argument("--solver", choices=("direct", "iterative"))
        p.add_argument("--seed", type=int)
        p.add_argument("--dump-projectors", action="store_true")
        if name == "run":
            p.add_argument("--zero-load", action="store_true", help="drop all loads (rest state)")
        p.set_defaults(func=func)
    return ap


def main(argv=None) -> int:
    ap = build_parser()
    try:
        args = ap.parse_args(argv)
    except SystemExit as exc:
        return EXIT_CONFIG if exc.code else EXIT_OK
    try:
        return args.func(args)
    except (ConfigurationError, KeyError) as exc:
        print(f"configuration error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except (SolverError, MeshError, np.linalg.LinAlgError, ValueError) as exc:
        print(f"numerical error: {exc}", file=sys.stderr)
        return EXIT_NUMERIC


if __name__ == "__main__":
    sys.exit(main())
