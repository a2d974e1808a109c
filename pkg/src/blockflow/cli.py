"""Case runner: parse configuration, build grids and plans, dispatch serial or
distributed runs, write solutions, histories and reports.

Run configs are flat `key = value` text files (# comments allowed); every key
has a default and unknown keys are rejected with the offending line number.
``blockflow run --help`` lists the keys.
"""

from __future__ import annotations

import argparse
import json
import os
import sys
from dataclasses import dataclass, fields as dc_fields, replace

import numpy as np

from . import bench, exchange, mesh, physics, solver
from .decomp import (aggregate, decompose, deadlock_demo_plan, detect_deadlock,
                     naive_schedule, plan_to_json, reorder_boundaries)
from .errors import BlockflowError, ConfigError, DeadlockError

EXIT_OK = 0
EXIT_ERROR = 1
EXIT_CONFIG = 2
EXIT_DEADLOCK = 3

_BOOL = {"true": True, "false": False, "yes": True, "no": False,
         "1": True, "0": False}

# Inflow/farfield tables of the bundled cases.
CASE_TABLES = {
    "inlet_ramp_2d": dict(mach=4.0, pressure=12270.0, temperature=217.0,
                          alpha_deg=0.0),
    "c_annulus_2d": dict(mach=0.25, pressure=84307.0, temperature=300.0,
                         alpha_deg=5.0),
    "multiblock_box_3d": dict(mach=0.8395, pressure=315979.763,
                              temperature=255.556, alpha_deg=3.06),
    "cartesian_box": dict(mach=0.3, pressure=1.0e5, temperature=300.0,
                          alpha_deg=0.0),
    "deadlock_demo": dict(mach=0.25, pressure=84307.0, temperature=300.0,
                          alpha_deg=5.0),
}

# The deadlock demo rides on the annulus geometry with a ring decomposition.
CLI_CASES = mesh.CASE_PRESETS + ("deadlock_demo",)


@dataclass
class RunConfig:
    case: str | None = None
    grid_file: str | None = None
    level: int = 0
    physics: str = "euler"            # euler | laminar_ns
    flux: str = "van_leer"
    limiter: str = "van_albada"
    epsilon: float = 1.0
    kappa: float = -1.0
    rk_stages: int = 2
    cfl: float = 0.8
    limiter_freeze_at: int | None = None
    entropy_fix_coeff: float = 0.1
    max_steps: int = 200
    residual_target: float | None = None
    np: int = 1
    split_dims: int | None = None     # defaults to the grid dimension
    aggregation: bool = False
    granularity: str = "packed"
    buffers: str = "transient"
    transport: str = "direct"
    wait_policy: str = "per_block"
    reorder: bool = True
    mach: float | None = None
    pressure: float | None = None
    temperature: float | None = None
    alpha_deg: float | None = None
    mu: float = 1.8e-5
    prandtl: float = 0.72
    wall_temperature: float | None = None
    mms_levels: str | None = None     # e.g. "16,32,64" switches to an order study
    scaling_np: str = "1,2,4"
    scaling_steps: int = 20
    output_dir: str = "out"
    write_solution: bool = True
    compare_serial: bool = False
    scaling: str | None = None        # strong | weak
    timeout_s: float = 5.0

    def validate(self):
        if (self.case is None) == (self.grid_file is None):
            raise ConfigError("exactly one of 'case' or 'grid_file' is required")
        if self.case is not None and self.case not in CLI_CASES:
            raise ConfigError(f"unknown case {self.case!r}; "
                              f"choose from {CLI_CASES}")
        if self.physics not in ("euler", "laminar_ns"):
            raise ConfigError(f"physics must be euler or laminar_ns, "
                              f"got {self.physics!r}")
        if self.np < 1:
            raise ConfigError(f"np must be >= 1, got {self.np}")
        if self.max_steps < 1:
            raise ConfigError(f"max_steps must be >= 1, got {self.max_steps}")
        if self.scaling not in (None, "strong", "weak"):
            raise ConfigError(f"scaling must be strong or weak, got {self.scaling!r}")
        if self.timeout_s <= 0:
            raise ConfigError("timeout_s must be positive")
        return self

    def dump(self) -> str:
        lines = []
        for f in dc_fields(self):
            value = getattr(self, f.name)
            if value is None:
                continue
            lines.append(f"{f.name} = {value}")
        return "\n".join(lines) + "\n"


def _coerce(name, text, target_type):
    if target_type is bool:
        if text.lower() not in _BOOL:
            raise ValueError(f"expected a boolean for {name}, got {text!r}")
        return _BOOL[text.lower()]
    if target_type is int:
        return int(text)
    if target_type is float:
        return float(text)
    return text


_FIELD_TYPES = {
    "case": str, "grid_file": str, "level": int, "physics": str, "flux": str,
    "limiter": str, "epsilon": float, "kappa": float, "rk_stages": int,
    "cfl": float, "limiter_freeze_at": int, "entropy_fix_coeff": float,
    "max_steps": int, "residual_target": float, "np": int, "split_dims": int,
    "aggregation": bool, "granularity": str, "buffers": str, "transport": str,
    "wait_policy": str, "reorder": bool, "mach": float, "pressure": float,
    "temperature": float, "alpha_deg": float, "mu": float, "prandtl": float,
    "wall_temperature": float, "mms_levels": str, "scaling_np": str,
    "scaling_steps": int, "output_dir": str, "write_solution": bool,
    "compare_serial": bool, "scaling": str, "timeout_s": float,
}


def parse_config(source) -> RunConfig:
    """Parse a key = value config file (path or open file)."""
    if hasattr(source, "read"):
        text = source.read()
        name = getattr(source, "name", "<config>")
    else:
        name = str(source)
        with open(source) as f:
            text = f.read()
    values = {}
    for lineno, raw in enumerate(text.splitlines(), start=1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ConfigError(f"{name}:{lineno}: expected 'key = value', got {raw!r}")
        key, _, val = line.partition("=")
        key, val = key.strip(), val.strip()
        if key not in _FIELD_TYPES:
            raise ConfigError(f"{name}:{lineno}: unknown key {key!r}")
        if key in values:
            raise ConfigError(f"{name}:{lineno}: duplicate key {key!r}")
        if val.lower() == "none":
            values[key] = None
            continue
        try:
            values[key] = _coerce(key, val, _FIELD_TYPES[key])
        except ValueError as e:
            raise ConfigError(f"{name}:{lineno}: {e}") from None
    cfg = RunConfig(**values)
    return cfg.validate()


# ---------------------------------------------------------------------------
# Case assembly
# ---------------------------------------------------------------------------

def build_gas(cfg: RunConfig) -> physics.GasModel:
    mu = cfg.mu if cfg.physics == "laminar_ns" else 0.0
    return physics.GasModel(mu=mu, prandtl=cfg.prandtl)


def build_grid(cfg: RunConfig):
    if cfg.case is not None:
        name = "c_annulus_2d" if cfg.case == "deadlock_demo" else cfg.case
        grid = mesh.generate_case_grid(name, cfg.level)
        if name == "c_annulus_2d" and cfg.physics == "laminar_ns":
            # The inner circle is a viscous wall for NS runs.
            grid.boundaries = [
                s if not (s.kind == "physical" and s.bc_type == "slip_wall")
                else replace(s, bc_type="noslip_wall")
                for s in grid.boundaries
            ]
        return grid
    grid = mesh.load_grid(cfg.grid_file)
    # Grid files carry geometry only; treat every face as farfield.
    for b in grid.blocks:
        faces = ("i_min", "i_max", "j_min", "j_max") if b.ndim == 2 else \
            ("i_min", "i_max", "j_min", "j_max", "k_min", "k_max")
        for face in faces:
            grid.boundaries.append(mesh._physical(b.id, face, b.dims, "farfield"))
    grid.validate_boundaries()
    return grid


def build_freestream(cfg: RunConfig, gas, ndim) -> solver.FreestreamState:
    table = dict(CASE_TABLES.get(cfg.case or "", CASE_TABLES["cartesian_box"]))
    for key in ("mach", "pressure", "temperature", "alpha_deg"):
        if getattr(cfg, key) is not None:
            table[key] = getattr(cfg, key)
    return solver.FreestreamState.from_mach(
        gas, table["mach"], table["pressure"], table["temperature"],
        table["alpha_deg"], ndim)


def build_scheme(cfg: RunConfig, mms_id=None) -> solver.SchemeConfig:
    return solver.SchemeConfig(
        flux=cfg.flux, epsilon=cfg.epsilon, kappa=cfg.kappa, limiter=cfg.limiter,
        rk_stages=cfg.rk_stages, cfl=cfg.cfl,
        limiter_freeze_at=cfg.limiter_freeze_at,
        entropy_fix_coeff=cfg.entropy_fix_coeff,
        viscous=(cfg.physics == "laminar_ns"), mms_id=mms_id,
        wall_temperature=cfg.wall_temperature)


def build_strategy(cfg: RunConfig) -> exchange.ExchangeStrategy:
    return exchange.ExchangeStrategy(granularity=cfg.granularity,
                                     buffers=cfg.buffers,
                                     transport=cfg.transport,
                                     wait_policy=cfg.wait_policy)


def build_plan(cfg: RunConfig, grid):
    if cfg.case == "deadlock_demo":
        return deadlock_demo_plan(grid, cfg.np)
    split = cfg.split_dims if cfg.split_dims is not None else grid.ndim
    if cfg.aggregation or cfg.np < grid.parent_count:
        return aggregate(grid, cfg.np)
    return decompose(grid, cfg.np, split)


# ---------------------------------------------------------------------------
# Output writers
# ---------------------------------------------------------------------------

def write_solution_vtk(path, block, fields):
    """Legacy structured-grid visualization text file for one block."""
    ni, nj, nk = block.dims
    g = block.ghost_depth
    if block.ndim == 2:
        xs = block.nodes[0][g:g + ni + 1, g:g + nj + 1]
        ys = block.nodes[1][g:g + ni + 1, g:g + nj + 1]
        zs = np.zeros_like(xs)
        npts = (ni + 1) * (nj + 1)
        dims = (ni + 1, nj + 1, 1)
    else:
        sl = tuple(slice(g, g + n + 1) for n in block.dims)
        xs, ys, zs = (block.nodes[c][sl] for c in range(3))
        npts = (ni + 1) * (nj + 1) * (nk + 1)
        dims = (ni + 1, nj + 1, nk + 1)
    with open(path, "w") as f:
        f.write("# vtk DataFile Version 3.0\n")
        f.write(f"blockflow solution block {block.id}\n")
        f.write("ASCII\nDATASET STRUCTURED_GRID\n")
        f.write(f"DIMENSIONS {dims[0]} {dims[1]} {dims[2]}\n")
        f.write(f"POINTS {npts} double\n")
        for x, y, z in zip(xs.ravel(order="F"), ys.ravel(order="F"),
                           zs.ravel(order="F")):
            f.write(f"{x!r} {y!r} {z!r}\n")
        ncells = ni * nj * nk
        f.write(f"CELL_DATA {ncells}\n")
        for name in ("rho", "p", "T"):
            f.write(f"SCALARS {name} double 1\nLOOKUP_TABLE default\n")
            for v in fields[name].ravel(order="F"):
                f.write(f"{v!r}\n")
        f.write("VECTORS velocity double\n")
        for u, v, w in zip(fields["u"].ravel(order="F"),
                           fields["v"].ravel(order="F"),
                           fields["w"].ravel(order="F")):
            f.write(f"{u!r} {v!r} {w!r}\n")


def write_solution_npy(path, fields):
    stacked = np.stack([fields[n] for n in ("rho", "u", "v", "w", "p", "T")])
    np.save(path, stacked)


def _interior_fields(block_solver):
    sl = block_solver.block.interior()
    return {n: np.array(block_solver.fields[n][sl])
            for n in ("rho", "u", "v", "w", "p", "T")}


# ---------------------------------------------------------------------------
# Run orchestration
# ---------------------------------------------------------------------------

def _max_rel_primitive_diff(fields_a, fields_b, freestream):
    """Max over blocks/cells/variables of |a-b| / freestream reference."""
    refs = {"rho": abs(freestream.rho), "u": None, "v": None, "w": None,
            "p": abs(freestream.p), "T": abs(freestream.T)}
    vmag = float(np.sqrt(freestream.u ** 2 + freestream.v ** 2
                         + freestream.w ** 2))
    for n in ("u", "v", "w"):
        refs[n] = vmag if vmag > 0 else 1.0
    worst = 0.0
    for bid in fields_a:
        for n, ref in refs.items():
            d = np.max(np.abs(fields_a[bid][n] - fields_b[bid][n])) / ref
            worst = max(worst, float(d))
    return worst


def run(cfg: RunConfig, stdout=sys.stdout):
    """Execute one configuration; returns the exit status."""
    cfg.validate()
    os.makedirs(cfg.output_dir, exist_ok=True)
    gas = build_gas(cfg)
    grid = build_grid(cfg)
    fs = build_freestream(cfg, gas, grid.ndim)
    timeout = float(os.environ.get("BLOCKFLOW_TIMEOUT_S", cfg.timeout_s))

    if cfg.mms_levels:
        return _run_mms_study(cfg, gas, stdout)

    if cfg.scaling:
        scheme = build_scheme(cfg)
        report = bench.run_scaling_suite(
            cfg.case, gas, scheme, fs,
            [int(v) for v in cfg.scaling_np.split(",")], cfg.scaling,
            steps=cfg.scaling_steps, level=cfg.level,
            strategy=build_strategy(cfg))
        jpath = os.path.join(cfg.output_dir, "scaling.json")
        cpath = os.path.join(cfg.output_dir, "scaling.csv")
        with open(jpath, "w") as f:
            f.write(report.to_json())
        with open(cpath, "w") as f:
            f.write(report.to_csv())
        print(f"scaling report written to {jpath} and {cpath}", file=stdout)
        for row in report.rows():
            print(f"  np={row['np']} time={row['time_s']:.3f}s "
                  f"ssspnt={row['ssspnt']:.4f} speedup={row['speedup']:.3f} "
                  f"efficiency={row['efficiency']:.3f}", file=stdout)
        return EXIT_OK

    scheme = build_scheme(cfg)
    plan = build_plan(cfg, grid)
    schedule = reorder_boundaries(plan) if cfg.reorder else naive_schedule(plan)
    strategy = build_strategy(cfg)

    if not cfg.reorder:
        cycles = detect_deadlock(schedule)
        if cycles:
            print("deadlock detected: circular wait dependencies", file=stdout)
            for cyc in cycles:
                chain = " -> ".join(f"rank {r} (boundary {t})" for r, t in cyc)
                print(f"  cycle: {chain} -> rank {cyc[0][0]}", file=stdout)
            return EXIT_DEADLOCK

    out = exchange.run_distributed(plan, schedule, gas, scheme, fs, strategy,
                                   max_steps=cfg.max_steps,
                                   residual_target=cfg.residual_target,
                                   timeout_s=timeout)

    # Residual history CSV.
    hist_path = os.path.join(cfg.output_dir, "residuals.csv")
    rel = out.relative_history()
    with open(hist_path, "w") as f:
        f.write("step,r_mass,r_xmom,r_ymom,r_zmom,r_energy\n")
        for i, row in enumerate(rel):
            f.write(f"{i + 1}," + ",".join(f"{v:.16e}" for v in row) + "\n")

    # Counters.
    with open(os.path.join(cfg.output_dir, "counters.json"), "w") as f:
        f.write(exchange.counters_to_json(out.counters))

    # Plan export.
    with open(os.path.join(cfg.output_dir, "plan.json"), "w") as f:
        f.write(plan_to_json(plan, schedule))

    if cfg.write_solution:
        for b in grid.blocks:
            vtk = os.path.join(cfg.output_dir, f"block_{b.id}.vtk")
            write_solution_vtk(vtk, b, out.fields[b.id])
            write_solution_npy(os.path.join(cfg.output_dir, f"block_{b.id}.npy"),
                               out.fields[b.id])

    base = out.history[0]
    active = base > 1e-12 * np.max(base)
    final = float(np.max(out.relative_history()[-1][active])) if np.any(active) else 0.0
    print(f"ran {out.steps} steps on np={cfg.np}; final relative residual "
          f"{final:.3e}; solver time {out.solve_seconds:.3f}s", file=stdout)

    if cfg.compare_serial and cfg.np > 1:
        plan1 = decompose(grid, 1, grid.ndim)
        sched1 = reorder_boundaries(plan1)
        ref = exchange.run_distributed(plan1, sched1, gas, scheme, fs, strategy,
                                       max_steps=out.steps, timeout_s=timeout)
        diff = _max_rel_primitive_diff(ref.fields, out.fields, fs)
        print(f"serial comparison: max relative primitive difference "
              f"{diff:.3e}", file=stdout)

    return EXIT_OK


def _run_mms_study(cfg: RunConfig, gas, stdout):
    if cfg.case != "cartesian_box":
        raise ConfigError("mms_levels requires case = cartesian_box")
    sizes = [int(s) for s in cfg.mms_levels.split(",")]
    ms_id = "ns_2d" if cfg.physics == "laminar_ns" else "euler_2d"
    fs = build_freestream(cfg, gas, 2)
    errs = []
    for n in sizes:
        level = _cartesian_level_for(n)
        grid = mesh.generate_case_grid("cartesian_box", level)
        plan = decompose(grid, 1, 2)
        schedule = reorder_boundaries(plan)
        scheme = build_scheme(cfg, mms_id=ms_id)
        res = solver.iterate(plan, schedule, gas, scheme, fs,
                             max_steps=cfg.max_steps,
                             residual_target=cfg.residual_target,
                             init="manufactured")
        err = mms_solution_error(res)
        errs.append(err)
        print(f"mms {ms_id} {n}x{n}: L2 error {err:.6e} "
              f"({res.steps} steps, converged={res.converged})", file=stdout)
    for a, b, na, nb in zip(errs, errs[1:], sizes, sizes[1:]):
        order = np.log(a / b) / np.log(nb / na)
        print(f"observed order {na}->{nb}: {order:.3f}", file=stdout)
    return EXIT_OK


def _cartesian_level_for(n):
    level, size = 0, 8
    while size < n:
        level += 2   # cyclic doubling: two levels double both dims
        size *= 2
    if size != n:
        raise ConfigError(f"mms grid size {n} is not 8 * 2^k")
    return level


def mms_solution_error(result):
    """RMS of the relative primitive-variable error against the manufactured
    fields, over all blocks and cells."""
    err2, count = 0.0, 0
    for s in result.solvers.values():
        sol = physics.manufactured_solution(s.config.mms_id)
        c = s.metrics.centers
        sl = s.block.interior()
        x, y, z = (c[i][sl] for i in range(3))
        for name in ("rho", "u", "v", "p"):
            exact = sol[name](x, y, z)
            e = (s.fields[name][sl] - exact) / np.abs(exact).max()
            err2 += float(np.sum(e * e))
            count += e.size
    return float(np.sqrt(err2 / count))


# ---------------------------------------------------------------------------
# Entry point
# ---------------------------------------------------------------------------

def _apply_cli_overrides(cfg: RunConfig, args) -> RunConfig:
    updates = {}
    if args.np is not None:
        updates["np"] = args.np
    if args.strategy is not None:
        updates["granularity"] = args.strategy
    if args.wait is not None:
        updates["wait_policy"] = {"per-block": "per_block",
                                  "deferred": "deferred_all"}[args.wait]
    if args.transport is not None:
        updates["transport"] = args.transport
    if args.no_reorder:
        updates["reorder"] = False
    if args.compare_serial:
        updates["compare_serial"] = True
    if args.scaling is not None:
        updates["scaling"] = args.scaling
    if args.output_dir is not None:
        updates["output_dir"] = args.output_dir
    return replace(cfg, **updates) if updates else cfg


def make_parser():
    parser = argparse.ArgumentParser(
        prog="blockflow",
        description="Multi-block structured-grid compressible flow solver "
                    "with simulated-rank halo exchange.")
    sub = parser.add_subparsers(dest="command", required=True)
    runp = sub.add_parser(
        "run", help="run a case from a config file",
        epilog="Config keys and defaults: "
               + "; ".join(f"{f.name}={f.default}" for f in dc_fields(RunConfig)))
    runp.add_argument("config", help="path to a key = value config file")
    runp.add_argument("--np", type=int, default=None, help="rank count override")
    runp.add_argument("--strategy", choices=("sliced", "packed"), default=None,
                      help="exchange granularity override")
    runp.add_argument("--wait", choices=("per-block", "deferred"), default=None,
                      help="wait policy override")
    runp.add_argument("--transport", choices=("staged", "direct"), default=None,
                      help="transport override")
    runp.add_argument("--no-reorder", action="store_true",
                      help="keep the naive boundary order (deadlock analysis)")
    runp.add_argument("--compare-serial", action="store_true",
                      help="also run np=1 and print the max relative difference")
    runp.add_argument("--scaling", choices=("strong", "weak"), default=None,
                      help="run a scaling suite instead of a single case")
    runp.add_argument("--output-dir", default=None)
    return parser


def main(argv=None):
    parser = make_parser()
    args = parser.parse_args(argv)
    try:
        cfg = parse_config(args.config)
        cfg = _apply_cli_overrides(cfg, args)
        return run(cfg)
    except ConfigError as e:
        print(f"config error: {e}", file=sys.stderr)
        return EXIT_CONFIG
    except DeadlockError as e:
        print(f"deadlock detected: {e}", file=sys.stderr)
        return EXIT_DEADLOCK
    except BlockflowError as e:
        print(f"error: {e}", file=sys.stderr)
        return EXIT_ERROR


if __name__ == "__main__":
    sys.exit(main())
