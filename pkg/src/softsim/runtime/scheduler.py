"""Fixed-rate loop with a slack-clamped timestep.

The loop wakes on an absolute grid ``t0 + k*T``.  The delay ``t_d`` between
the planned and the actual wake-up stretches the step, but never beyond the
slack: ``dt = min(T + t_d, T + t_s)``.
"""
from __future__ import annotations

import logging
import math
import threading
import time
from dataclasses import dataclass, field
from typing import Callable, List, Optional

import numpy as np

logger = logging.getLogger(__name__)

__all__ = [
    "SchedulerConfig",
    "StepRecord",
    "LoopStats",
    "RateStats",
    "compute_timestep",
    "run_loop",
    "summarize",
    "write_records",
    "read_records",
    "MIN_RECORDS",
    "STEADY_STATE_DISCARD",
]

MIN_RECORDS = 100
STEADY_STATE_DISCARD = 0.05
# overload warnings are rate limited to one per this many seconds
OVERLOAD_LOG_INTERVAL = 1.0


def compute_timestep(period: float, delay: float, slack: float) -> float:
    """``min(T + t_d, T + t_s)``; a zero delay gives exactly ``T``."""
    return min(period + delay, period + slack)


@dataclass(frozen=True)
class SchedulerConfig:
    period: float
    slack: float = 0.0
    max_steps: Optional[int] = None
    deterministic: bool = False

    def __post_init__(self):
        if not self.period > 0:
            raise ValueError(f"period must be > 0, got {self.period}")
        if not self.slack >= 0:
            raise ValueError(f"slack must be >= 0, got {self.slack}")
        if self.max_steps is not None and self.max_steps < 1:
            raise ValueError("max_steps must be >= 1")


@dataclass(frozen=True)
class StepRecord:
    step: int
    dt: float
    wall_period: float


@dataclass
class LoopStats:
    records: List[StepRecord] = field(default_factory=list)
    overloaded_steps: int = 0
    wall_time: float = 0.0

    @property
    def dts(self):
        return np.array([r.dt for r in self.records])

    @property
    def periods(self):
        return np.array([r.wall_period for r in self.records])

    def clamp_violations(self, cfg: SchedulerConfig) -> int:
        dt = self.dts
        return int(((dt < cfg.period) | (dt > cfg.period + cfg.slack)).sum())

    @property
    def achieved_rate(self):
        return len(self.records) / self.wall_time if self.wall_time > 0 else 0.0


def run_loop(step_fn: Callable[[float, int], None], cfg: SchedulerConfig, stop: Optional[threading.Event] = None,
             clock=time.perf_counter, sleep=time.sleep, stall: Optional[Callable[[int], float]] = None) -> LoopStats:
    """Drive ``step_fn(dt, k)`` until ``max_steps`` or ``stop``.

    ``stall(k)`` optionally returns extra seconds to burn inside step ``k``
    (test hook for overload).  In deterministic mode every ``dt`` is exactly
    ``T`` and the loop never sleeps.  When the loop falls more than a whole
    period behind, missed grid slots are skipped instead of replayed.
    """
    stats = LoopStats()
    T, ts = cfg.period, cfg.slack
    start = clock()
    planned = start
    last = start
    last_warn = -math.inf
    k = 0
    while (cfg.max_steps is None or k < cfg.max_steps) and not (stop is not None and stop.is_set()):
        if cfg.deterministic:
            now = clock()
            dt = T
        else:
            wait = planned - clock()
            if wait > 0:
                sleep(wait)
            now = clock()
            delay = max(0.0, now - planned)
            dt = compute_timestep(T, delay, ts)
            if delay > ts:
                stats.overloaded_steps += 1
                if now - last_warn > OVERLOAD_LOG_INTERVAL:
                    logger.warning("physics overload: wake-up %.2f ms late (slack %.2f ms)", 1e3 * delay, 1e3 * ts)
                    last_warn = now
            if delay >= T:
                # skip the grid slots that were missed; the next wake-up is back on the grid
                planned += math.floor(delay / T) * T
        # the first period is measured from loop start and falls in the warm-up window
        stats.records.append(StepRecord(k, dt, now - last))
        last = now
        step_fn(dt, k)
        if stall is not None:
            extra = stall(k)
            if extra:
                _burn(extra, clock, sleep)
        k += 1
        planned += T
    stats.wall_time = clock() - start
    return stats


def _burn(seconds, clock, sleep):
    end = clock() + seconds
    sleep(seconds)
    while clock() < end:
        pass


@dataclass(frozen=True)
class RateStats:
    """Statistics over the steady-state window of per-step wall periods."""

    periods: np.ndarray
    median_rate: float
    spread: float
    clamp_violations: int
    n_steps: int

    def summary(self) -> str:
        return (f"steps: {self.n_steps}\nmedian_rate_hz: {self.median_rate:.3f}\n"
                f"spread_hz: {self.spread:.3f}\nclamp_violations: {self.clamp_violations}\n")


def summarize(records, period: Optional[float] = None, slack: Optional[float] = None) -> RateStats:
    """Median rate ``1/median(period)`` and the interdecile range of instantaneous rates.

    The first 5% of steps are discarded as warm-up.  Clamp violations are
    counted over all records when ``period`` and ``slack`` are given.
    """
    recs = list(records)
    if len(recs) < MIN_RECORDS:
        raise ValueError(f"need at least {MIN_RECORDS} records, got {len(recs)}")
    arr = np.array([(r.step, r.dt, r.wall_period) if isinstance(r, StepRecord) else tuple(r) for r in recs],
                   dtype=float)
    skip = int(math.ceil(STEADY_STATE_DISCARD * len(arr)))
    steady = arr[skip:, 2]
    if (steady <= 0).any():
        raise ValueError("wall periods must be positive")
    rates = 1.0 / steady
    q10, q90 = np.percentile(rates, [10, 90])
    violations = 0
    if period is not None and slack is not None:
        dt = arr[:, 1]
        violations = int(((dt < period) | (dt > period + slack)).sum())
    return RateStats(steady, float(1.0 / np.median(steady)), float(q90 - q10), violations, len(arr))


def write_records(path_or_file, records):
    """One line per step: ``step,dt_seconds,wall_period_seconds`` (no header)."""
    lines = "".join(f"{r.step},{r.dt!r},{r.wall_period!r}\n" for r in records)
    if hasattr(path_or_file, "write"):
        path_or_file.write(lines)
    else:
        with open(path_or_file, "w") as fh:
            fh.write(lines)


def read_records(path) -> List[StepRecord]:
    out = []
    with open(path) as fh:
        for lineno, line in enumerate(fh, 1):
            if not line.strip():
                continue
            try:
                s, dt, wp = line.split(",")
                out.append(StepRecord(int(s), float(dt), float(wp)))
            except ValueError as exc:
                raise ValueError(f"{path}:{lineno}: bad record {line.strip()!r}") from exc
    return out
