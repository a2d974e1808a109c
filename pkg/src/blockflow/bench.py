"""Timing harness and scaling metrics (ssspnt, speedup, efficiency).

Timing covers the iteration loop only: grid construction, decomposition and
output are excluded. Each configuration is measured over at least three
consecutive runs; the reported time is the median and records whose spread
exceeds 1% of the median are flagged rather than rejected.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, field

import numpy as np

from . import exchange as exchange_mod
from . import solver as solver_mod
from .decomp import aggregate, decompose, reorder_boundaries
from .errors import ConfigError
from .mesh import generate_case_grid

SSSPNT_SCALE = 1e-6

# Cell-count growth factor per refinement level, per case (weak scaling).
WEAK_GROWTH = {
    "cartesian_box": 2,
    "multiblock_box_3d": 2,
    "inlet_ramp_2d": 4,
    "c_annulus_2d": 4,
}


def ssspnt(size, steps, np_ranks, time_s, s=SSSPNT_SCALE):
    """Scaled size.steps per (np.time): s * size * steps / (np * time)."""
    if min(size, steps, np_ranks) <= 0 or time_s <= 0:
        raise ConfigError("ssspnt needs positive size, steps, np and time")
    return s * size * steps / (np_ranks * time_s)


def speedup(t_serial, t_parallel):
    if t_serial <= 0 or t_parallel <= 0:
        raise ConfigError("speedup needs positive times")
    return t_serial / t_parallel


def efficiency(speedup_value, np_ranks):
    if np_ranks <= 0:
        raise ConfigError("efficiency needs positive np")
    return speedup_value / np_ranks


@dataclass
class TimingRecord:
    case: str
    np_ranks: int
    size: int
    steps: int
    seconds: float               # median of the samples
    samples: tuple
    spread_ok: bool

    @classmethod
    def from_samples(cls, case, np_ranks, size, steps, samples, tolerance=0.01):
        samples = tuple(samples)
        med = float(np.median(samples))
        spread = (max(samples) - min(samples)) / med if med > 0 else math.inf
        return cls(case=case, np_ranks=np_ranks, size=size, steps=steps,
                   seconds=med, samples=samples, spread_ok=spread < tolerance)


@dataclass
class ScalingReport:
    case: str
    mode: str                    # "strong" | "weak"
    records: list = field(default_factory=list)   # TimingRecord, baseline first

    def rows(self):
        base = self.records[0]
        out = []
        for r in self.records:
            # Strong: plain t_base/t. Weak: the problem grows with np, so the
            # speedup is work-normalized; efficiency = speedup/np either way
            # and sits near 1 for ideal scaling in both modes.
            sp = speedup(base.seconds, r.seconds)
            if self.mode == "weak":
                sp *= r.size / base.size
            eff = efficiency(sp, r.np_ranks)
            out.append({
                "np": r.np_ranks, "size": r.size, "steps": r.steps,
                "time_s": r.seconds,
                "ssspnt": ssspnt(r.size, r.steps, r.np_ranks, r.seconds),
                "speedup": sp, "efficiency": eff,
                "spread_ok": r.spread_ok,
            })
        return out

    def to_json(self):
        return json.dumps({"case": self.case, "mode": self.mode,
                           "rows": self.rows()}, indent=2)

    def to_csv(self):
        lines = ["np,size,steps,time_s,ssspnt,speedup,efficiency"]
        for row in self.rows():
            lines.append(
                f"{row['np']},{row['size']},{row['steps']},{row['time_s']:.6f},"
                f"{row['ssspnt']:.6f},{row['speedup']:.6f},{row['efficiency']:.6f}")
        return "\n".join(lines) + "\n"


def _timed_run(grid, np_ranks, gas, config, freestream, strategy, steps,
               use_aggregation=False, split_dims=None):
    split = split_dims if split_dims is not None else grid.ndim
    if use_aggregation or np_ranks < grid.parent_count:
        plan = aggregate(grid, np_ranks)
    else:
        plan = decompose(grid, np_ranks, split)
    schedule = reorder_boundaries(plan)
    out = exchange_mod.run_distributed(plan, schedule, gas, config, freestream,
                                       strategy, max_steps=steps)
    return out.solve_seconds


def run_scaling_suite(case, gas, config, freestream, np_list, mode,
                      steps=50, level=0, strategy=None, repeats=3,
                      split_dims=None):
    """Strong: fixed grid across np. Weak: per-rank cells fixed, the grid grows
    with np by the case's refinement factor."""
    if mode not in ("strong", "weak"):
        raise ConfigError(f"mode must be 'strong' or 'weak', got {mode!r}")
    if not np_list:
        raise ConfigError("np_list must not be empty")
    strategy = strategy or exchange_mod.ExchangeStrategy()

    levels = {}
    if mode == "weak":
        growth = WEAK_GROWTH.get(case)
        if growth is None:
            raise ConfigError(f"case {case!r} is not growable for weak scaling")
        base = np_list[0]
        for np_ranks in np_list:
            ratio = np_ranks / base
            k = math.log(ratio, growth) if ratio > 0 else -1
            if abs(k - round(k)) > 1e-9:
                raise ConfigError(
                    f"weak scaling with case {case!r} needs np ratios that are "
                    f"powers of {growth}; got {np_ranks}/{base}")
            levels[np_ranks] = level + int(round(k))
    else:
        levels = {np_ranks: level for np_ranks in np_list}

    records = []
    for np_ranks in np_list:
        grid = generate_case_grid(case, levels[np_ranks])
        size = grid.total_cells()
        samples = []
        for _ in range(max(3, repeats)):
            samples.append(_timed_run(grid, np_ranks, gas, config, freestream,
                                      strategy, steps, split_dims=split_dims))
        records.append(TimingRecord.from_samples(case, np_ranks, size, steps,
                                                 samples))
    return ScalingReport(case=case, mode=mode, records=records)
