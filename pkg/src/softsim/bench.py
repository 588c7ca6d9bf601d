"""Physics-rate benchmark and scene runner.

    python -m softsim.bench bunny_756 --period 0.0051 --slack 0.002 --steps 1000 --subdivision 2 --out run.csv

``scene`` is a YAML path or the name of a shipped scene.  Raw records go to
``--out`` (one ``step,dt_seconds,wall_period_seconds`` line per step) and a
summary is printed.  Setting ``SOFTSIM_DETERMINISTIC=1`` is equivalent to
``--deterministic``.

Exit codes: 0 success, 1 validation error, 2 clamp violation, 3 asset error.
"""
from __future__ import annotations

import argparse
import logging
import math
import os
import sys
from dataclasses import dataclass
from typing import Optional

from .runtime.scheduler import RateStats, SchedulerConfig, summarize, write_records
from .runtime.simulation import run_deterministic, run_realtime
from .scene import AssetError, SceneConfigError, build_scene, load_scene_config, scene_path

logger = logging.getLogger(__name__)

__all__ = ["BenchmarkSpec", "BenchmarkResult", "run_benchmark", "main", "EXIT_OK", "EXIT_VALIDATION",
           "EXIT_CLAMP", "EXIT_ASSET"]

EXIT_OK, EXIT_VALIDATION, EXIT_CLAMP, EXIT_ASSET = 0, 1, 2, 3


@dataclass(frozen=True)
class BenchmarkSpec:
    scene: str
    period: Optional[float] = None
    slack: Optional[float] = None
    steps: Optional[int] = None
    duration: Optional[float] = None
    subdivision: Optional[int] = None
    deterministic: bool = False
    out: Optional[str] = None
    visual: bool = True

    def __post_init__(self):
        if self.steps is not None and self.steps <= 0:
            raise ValueError("steps must be > 0")
        if self.duration is not None and not self.duration > 0:
            raise ValueError("duration must be > 0")
        if self.steps is None and self.duration is None:
            raise ValueError("give a step count or a duration")


@dataclass
class BenchmarkResult:
    stats: RateStats
    records: list
    scheduler: SchedulerConfig
    out: Optional[str]


def _resolve_scene(name: str) -> str:
    if os.path.isfile(name):
        return name
    shipped = scene_path(name)
    if os.path.isfile(shipped):
        return shipped
    raise AssetError("scene", f"scene not found: {name!r}")


def run_benchmark(spec: BenchmarkSpec) -> BenchmarkResult:
    cfg = load_scene_config(_resolve_scene(spec.scene))
    sched = dict(cfg.data.get("scheduler") or {})
    if spec.period is not None:
        sched["period"] = spec.period
    if spec.slack is not None:
        sched["slack"] = spec.slack
    sched.setdefault("period", 0.005)
    steps = spec.steps if spec.steps is not None else max(1, int(math.ceil(spec.duration / sched["period"])))
    sched["max_steps"] = steps
    sched["deterministic"] = spec.deterministic
    cfg.data["scheduler"] = sched
    if spec.subdivision is not None:
        for b in cfg.data.get("bodies") or []:
            if b.get("visual") is not None:
                b["visual"]["subdivision"] = spec.subdivision
    scene = build_scene(cfg)
    sc = scene.scheduler
    if sc.deterministic:
        stats = run_deterministic(scene, steps, sc.period)
    else:
        stats = run_realtime(scene, sc, visual=spec.visual)
    records = stats.records
    if spec.out:
        write_records(spec.out, records)
    rate = summarize(records, sc.period, sc.slack)
    return BenchmarkResult(rate, records, sc, spec.out)


def _parser():
    p = argparse.ArgumentParser(prog="softsim-bench", description="Run a scene and report the physics update rate.")
    p.add_argument("scene", help="scene YAML path or shipped scene name (bunny_756, bunny_1492, bunny_3004, ...)")
    p.add_argument("--period", type=float, help="physics period T in seconds")
    p.add_argument("--slack", type=float, help="slack t_s in seconds")
    g = p.add_mutually_exclusive_group()
    g.add_argument("--steps", type=int, help="number of physics steps")
    g.add_argument("--duration", type=float, help="run length in seconds of simulated time")
    p.add_argument("--subdivision", type=int, choices=range(0, 4), help="visual subdivision level")
    p.add_argument("--deterministic", action="store_true", help="fixed dt = T, no real-time pacing")
    p.add_argument("--out", default="bench_records.csv", help="raw record file")
    p.add_argument("-v", "--verbose", action="store_true")
    return p


def main(argv=None) -> int:
    p = _parser()
    try:
        args = p.parse_args(argv)
    except SystemExit as exc:
        return EXIT_OK if exc.code == 0 else EXIT_VALIDATION
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    deterministic = args.deterministic or os.environ.get("SOFTSIM_DETERMINISTIC", "") not in ("", "0")
    try:
        spec = BenchmarkSpec(args.scene, args.period, args.slack, args.steps, args.duration, args.subdivision,
                             deterministic, args.out)
        result = run_benchmark(spec)
    except AssetError as exc:
        print(f"asset error: {exc}", file=sys.stderr)
        return EXIT_ASSET
    except (SceneConfigError, ValueError) as exc:
        print(f"validation error: {exc}", file=sys.stderr)
        return EXIT_VALIDATION
    sc = result.scheduler
    print(f"scene: {args.scene}\nperiod_s: {sc.period!r}\nslack_s: {sc.slack!r}\n"
          f"deterministic: {str(sc.deterministic).lower()}\n" + result.stats.summary() + f"records: {args.out}")
    return EXIT_CLAMP if result.stats.clamp_violations else EXIT_OK


def main_exit():
    """Console-script entry point."""
    sys.exit(main())


if __name__ == "__main__":
    main_exit()
