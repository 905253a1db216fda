"""Command line front end: ``nehari-sym {solve,reduce,diagnose,seed,check}``.

Configuration files are flat ``dotted.key = value`` lines; ``#`` starts a
comment.  See README.md for the full key list.  Exit codes: 0 success,
1 configuration or I/O error, 2 no converged solution, 3 invariant failure.
"""

from __future__ import annotations

import argparse
import csv
import json
import math
import os
import sys
from dataclasses import dataclass, field, fields
from pathlib import Path

import numpy as np

from .checks import CheckSettings, run_invariants
from .energy import InfeasibleRetraction, nehari_residuals
from .grid import GridSpec, PolarGrid
from .reduction import (ReducedProblem, foliated_schwarz_defect, ground_state_reduced,
                        minimal_period_theorem_check, pullback_consistency, psi_k)
from .solver import SeedSpec, SolverConfig, make_seed, multistart
from .symmetry import (SymmetryClass, SystemParams, defect_table, minimal_period,
                       validate_params)

SCHEMA = "nehari-sym/summary"
SCHEMA_VERSION = 1
OUT_ENV = "NEHARI_SYM_OUT"

EXIT_OK, EXIT_CONFIG, EXIT_NO_CONVERGENCE, EXIT_INVARIANT = 0, 1, 2, 3


class ConfigError(ValueError):
    pass


@dataclass
class RunConfig:
    grid: GridSpec
    params: SystemParams
    cls: SymmetryClass
    solver: SolverConfig
    out: Path
    seed: int = 0
    seed_m: int = 1
    field_path: Path | None = None
    check: CheckSettings = field(default_factory=CheckSettings)
    raw: dict = field(default_factory=dict)


def parse_pairs(text: str) -> dict[str, str]:
    out: dict[str, str] = {}
    for lineno, line in enumerate(text.splitlines(), 1):
        line = line.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ConfigError(f"line {lineno}: expected 'key = value'")
        key, value = (part.strip() for part in line.split("=", 1))
        if not key:
            raise ConfigError(f"line {lineno}: empty key")
        if key in out:
            raise ConfigError(f"line {lineno}: duplicate key {key!r}")
        out[key] = value
    return out


def _floats(value: str) -> list[float]:
    try:
        return [float(x) for x in value.replace(";", ",").split(",") if x.strip()]
    except ValueError as exc:
        raise ConfigError(f"cannot parse numbers from {value!r}") from exc


def _broadcast(values: list[float], n: int, name: str) -> list[float]:
    if len(values) == 1:
        return values * n
    if len(values) != n:
        raise ConfigError(f"{name} needs 1 or {n} values, got {len(values)}")
    return values


def _beta_matrix(value: str, N: int) -> np.ndarray:
    rows = [r for r in value.split(";") if r.strip()]
    if len(rows) == 1 and len(_floats(rows[0])) == 1:
        return np.full((N, N), _floats(rows[0])[0])
    mat = np.array([_floats(r) for r in rows])
    if mat.shape != (N, N):
        raise ConfigError(f"system.beta must be a scalar or an {N}x{N} matrix (rows split by ';')")
    return mat


_SOLVER_KEYS = {f.name: f.type for f in fields(SolverConfig)}


def build_config(pairs: dict[str, str], out: str | None = None, seed: int | None = None,
                 field_path: str | None = None) -> RunConfig:
    known = set()

    def get(key, default=None, conv=str):
        known.add(key)
        if key not in pairs:
            return default
        try:
            return conv(pairs[key])
        except (TypeError, ValueError) as exc:
            raise ConfigError(f"{key}: cannot parse {pairs[key]!r}") from exc

    domain = get("domain.type", "ball")
    r_outer = get("domain.r_outer", 1.0, float)
    r_inner = get("domain.r_inner", 0.0 if domain == "ball" else None, float)
    if domain not in ("ball", "annulus"):
        raise ConfigError("domain.type must be 'ball' or 'annulus'")
    if r_inner is None:
        raise ConfigError("an annulus needs domain.r_inner")
    if domain == "ball" and r_inner != 0.0:
        raise ConfigError("a ball has domain.r_inner = 0")

    N = get("system.N", 2, int)
    p = get("system.p", 2, int)
    lam = _broadcast(get("system.lambda", [1.0], _floats), N, "system.lambda")
    mu = _broadcast(get("system.mu", [1.0], _floats), N, "system.mu")
    beta = get("system.beta", np.full((N, N), -1.0), lambda v: _beta_matrix(v, N))
    try:
        params = SystemParams(N, p, lam, mu, beta)
    except ValueError as exc:
        raise ConfigError(str(exc)) from exc
    problems = validate_params(params)
    if problems:
        raise ConfigError("assumption violations:\n  " + "\n  ".join(problems))

    try:
        cls = SymmetryClass(get("class.branch", "positive"), get("class.k", 1, int), p)
    except ValueError as exc:
        raise ConfigError(str(exc)) from exc

    n_theta = get("grid.n_theta", 48, int)
    align = get("grid.alignment_order", math.gcd(n_theta, 2 * cls.order), int)
    try:
        spec = GridSpec(r_inner, r_outer, get("grid.n_r", 32, int), n_theta, align)
        PolarGrid(spec)
    except ValueError as exc:
        raise ConfigError(str(exc)) from exc

    run_seed = seed if seed is not None else get("run.seed", 0, int)
    solver_kw = {}
    for name, typ in _SOLVER_KEYS.items():
        key = f"solver.{name}"
        if key in pairs:
            conv = {"int": int, "float": float, "bool": _bool}.get(str(typ).replace("'", ""), str)
            solver_kw[name] = get(key, conv=conv)
    solver_kw.setdefault("seed", run_seed)
    if seed is not None:
        solver_kw["seed"] = seed
    try:
        solver = SolverConfig(**solver_kw)
    except (TypeError, ValueError) as exc:
        raise ConfigError(str(exc)) from exc

    check = CheckSettings(n_r=get("check.n_r", 16, int), n_theta=get("check.n_theta", 48, int),
                          samples=get("check.samples", 5, int), seed=run_seed,
                          inject=get("check.inject", ""))
    out_dir = out or os.environ.get(OUT_ENV) or get("output.dir", "out")
    fpath = field_path or get("diagnose.field")
    cfg = RunConfig(spec, params, cls, solver, Path(out_dir), run_seed,
                    get("seed.m", 1, int), Path(fpath) if fpath else None, check, dict(pairs))
    unknown = sorted(set(pairs) - known)
    if unknown:
        raise ConfigError("unknown keys: " + ", ".join(unknown))
    return cfg


def _bool(v: str) -> bool:
    if v.lower() in ("1", "true", "yes", "on"):
        return True
    if v.lower() in ("0", "false", "no", "off"):
        return False
    raise ValueError(v)


# ---------------------------------------------------------------------------
# output

def _clean(obj):
    if isinstance(obj, dict):
        return {str(k): _clean(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_clean(v) for v in obj]
    if isinstance(obj, np.ndarray):
        return _clean(obj.tolist())
    if isinstance(obj, (np.floating, float)):
        v = float(obj)
        return v if math.isfinite(v) else str(v)
    if isinstance(obj, (np.integer,)):
        return int(obj)
    if isinstance(obj, (np.bool_,)):
        return bool(obj)
    return obj


def write_json(path: Path, payload: dict):
    path.write_text(json.dumps(_clean(payload), indent=2, sort_keys=True) + "\n")


def write_fields(path: Path, grid: PolarGrid, U: np.ndarray):
    with path.open("w", newline="") as fh:
        fh.write("r,theta,component,value\n")
        for j, comp in enumerate(U):
            for i, r in enumerate(grid.r):
                for m, th in enumerate(grid.theta):
                    fh.write(f"{r:.17g},{th:.17g},{j},{comp[i, m]:.17g}\n")


def read_fields(path: Path, grid: PolarGrid) -> np.ndarray:
    with path.open(newline="") as fh:
        reader = csv.reader(fh)
        header = next(reader, None)
        if header != ["r", "theta", "component", "value"]:
            raise ConfigError(f"{path}: header must be r,theta,component,value")
        rows = [(int(c), float(v)) for _, _, c, v in reader]
    ncomp = max(c for c, _ in rows) + 1 if rows else 0
    per = grid.n_r * grid.n_theta
    if len(rows) != ncomp * per:
        raise ConfigError(f"{path}: {len(rows)} rows do not fit a {grid.n_r}x{grid.n_theta} grid")
    return np.array([v for _, v in rows]).reshape(ncomp, grid.n_r, grid.n_theta)


def _header(cfg: RunConfig, command: str) -> dict:
    return {
        "schema": SCHEMA, "schema_version": SCHEMA_VERSION, "command": command,
        "seed": cfg.seed,
        "grid": {"r_inner": cfg.grid.r_inner, "r_outer": cfg.grid.r_outer, "n_r": cfg.grid.n_r,
                 "n_theta": cfg.grid.n_theta, "alignment_order": cfg.grid.alignment_order},
        "params": cfg.params.as_dict(),
        "class": {"branch": cfg.cls.branch, "k": cfg.cls.k, "p": cfg.cls.p},
    }


def _periods(grid: PolarGrid, U: np.ndarray, tol: float = 1e-6) -> list[str]:
    return [str(minimal_period(grid, u, tol)) for u in U]


# ---------------------------------------------------------------------------
# subcommands

def run_solve(cfg: RunConfig, jobs: int = 1) -> int:
    grid = PolarGrid(cfg.grid)
    sols = multistart(grid, cfg.params, cfg.cls, cfg.solver, jobs=jobs)
    cfg.out.mkdir(parents=True, exist_ok=True)
    entries = []
    for n, rep in enumerate(sols.reports):
        entry = rep.summary()
        entry["index"] = n
        entry["min_value"] = float(rep.state.min())
        entry["periods"] = _periods(grid, rep.state)
        entries.append(entry)
        write_fields(cfg.out / f"fields_{n}.csv", grid, rep.state)
    payload = _header(cfg, "solve")
    payload.update({"solver": cfg.solver.__dict__, "attempted": sols.attempted,
                    "failures": [{"start": s, "reason": r} for s, r in sols.failures],
                    "solutions": entries, "distances": sols.distances})
    write_json(cfg.out / "summary.json", payload)
    print(f"{len(sols)} distinct converged solution(s) written to {cfg.out}")
    return EXIT_OK if len(sols) else EXIT_NO_CONVERGENCE


def run_reduce(cfg: RunConfig) -> int:
    if cfg.params.N != 2 or cfg.params.p != 2:
        raise ConfigError("reduction requires 2-coupled system (N = 2, p = 2)")
    beta = float(cfg.params.beta[0, 1])
    if not (np.all(cfg.params.lam == 1.0) and np.all(cfg.params.mu == 1.0)):
        raise ConfigError("reduction requires lambda = mu = 1")
    grid = PolarGrid(cfg.grid)
    try:
        prob = ReducedProblem(grid, cfg.cls.k, beta)
    except ValueError as exc:
        raise ConfigError(str(exc)) from exc
    rep = ground_state_reduced(prob, cfg.solver)
    period = minimal_period_theorem_check(prob, cfg.solver, ground_state=rep)
    u = rep.state[0]
    fs, axis = foliated_schwarz_defect(grid, u)
    cfg.out.mkdir(parents=True, exist_ok=True)
    write_fields(cfg.out / "fields_0.csv", grid, rep.state)
    fg = prob.full_grid()
    write_fields(cfg.out / "fields_1.csv", fg, psi_k(u, prob.k))
    payload = _header(cfg, "reduce")
    payload.update({
        "ground_state": rep.summary(),
        "minimal_period": period.as_dict(),
        "foliated_schwarz": {"defect": fs, "axis": axis},
        "pullback": pullback_consistency(prob, u).as_dict(),
        "full_grid_n_theta": fg.n_theta,
    })
    write_json(cfg.out / "summary.json", payload)
    print(f"reduced ground state energy {rep.energy:.12g}, "
          f"minimal period check {'passed' if period.passed else 'FAILED'}")
    if not rep.converged:
        return EXIT_NO_CONVERGENCE
    return EXIT_OK if period.passed else EXIT_INVARIANT


def run_diagnose(cfg: RunConfig) -> int:
    if cfg.field_path is None:
        raise ConfigError("diagnose needs --field or diagnose.field")
    grid = PolarGrid(cfg.grid)
    try:
        U = read_fields(cfg.field_path, grid)
    except OSError as exc:
        raise ConfigError(f"cannot read {cfg.field_path}: {exc}") from exc
    payload = _header(cfg, "diagnose")
    comps = []
    for j, u in enumerate(U):
        comps.append({"component": j, "period": str(minimal_period(grid, u, 1e-6)),
                      "defects": defect_table(grid, u),
                      "foliated_schwarz": foliated_schwarz_defect(grid, u)[0],
                      "min": float(u.min()), "max": float(u.max())})
    payload["components"] = comps
    if U.shape[0] == cfg.params.N:
        rep = nehari_residuals(grid, cfg.params, U, cfg.cls.branch)
        payload["nehari_residuals"] = rep.residuals
    cfg.out.mkdir(parents=True, exist_ok=True)
    write_json(cfg.out / "summary.json", payload)
    print(f"diagnosed {U.shape[0]} component(s) from {cfg.field_path}")
    return EXIT_OK


def run_seed(cfg: RunConfig) -> int:
    grid = PolarGrid(cfg.grid)
    rng = np.random.default_rng([cfg.seed])
    spec = SeedSpec.random(cfg.seed_m, rng)
    try:
        U = make_seed(grid, cfg.params, cfg.cls, spec)
    except (InfeasibleRetraction, ValueError) as exc:
        raise ConfigError(f"seed construction failed: {exc}") from exc
    cfg.out.mkdir(parents=True, exist_ok=True)
    write_fields(cfg.out / "fields_0.csv", grid, U)
    payload = _header(cfg, "seed")
    payload["z"] = [[c.real, c.imag] for c in spec.point]
    payload["nehari_residuals"] = nehari_residuals(grid, cfg.params, U, cfg.cls.branch).residuals
    write_json(cfg.out / "summary.json", payload)
    print(f"seed with m={cfg.seed_m} written to {cfg.out}")
    return EXIT_OK


def run_check(cfg: RunConfig) -> int:
    results = run_invariants(cfg.check)
    cfg.out.mkdir(parents=True, exist_ok=True)
    payload = {"schema": "nehari-sym/invariants", "schema_version": SCHEMA_VERSION,
               "all_passed": all(r.passed for r in results),
               "results": [r.as_dict() for r in results]}
    write_json(cfg.out / "invariants.json", payload)
    for r in results:
        print(f"{'PASS' if r.passed else 'FAIL'} {r.name}")
    return EXIT_OK if payload["all_passed"] else EXIT_INVARIANT


COMMANDS = {"solve": run_solve, "reduce": run_reduce, "diagnose": run_diagnose,
            "seed": run_seed, "check": run_check}


def make_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="nehari-sym", description=__doc__.splitlines()[0])
    parser.add_argument("command", choices=sorted(COMMANDS))
    parser.add_argument("--config", help="key = value configuration file")
    parser.add_argument("--out", help="output directory")
    parser.add_argument("--seed", type=int, help="RNG seed (non-negative)")
    parser.add_argument("--jobs", type=int, default=1, help="worker processes for solve")
    parser.add_argument("--field", help="fields CSV for diagnose")
    return parser


def main(argv: list[str] | None = None) -> int:
    args = make_parser().parse_args(argv)
    try:
        if args.seed is not None and args.seed < 0:
            raise ConfigError("--seed must be non-negative")
        if args.jobs < 1:
            raise ConfigError("--jobs must be at least 1")
        text = ""
        if args.config:
            try:
                text = Path(args.config).read_text()
            except OSError as exc:
                raise ConfigError(f"cannot read config: {exc}") from exc
        cfg = build_config(parse_pairs(text), args.out, args.seed, args.field)
        if args.command == "solve":
            return run_solve(cfg, args.jobs)
        return COMMANDS[args.command](cfg)
    except ConfigError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except OSError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_CONFIG


if __name__ == "__main__":
    sys.exit(main())
