"""Physics tick, mapping synchronization and the threaded / replay runners.

Threads in a real-time run:

* physics: the only writer of body states; publishes a snapshot after
  every completed step;
* visual: at its own cadence copies the latest snapshot and maps it onto
  visual bodies (the single synchronization point);
* dispatcher: delivers queued events to observers.
"""
from __future__ import annotations

import hashlib
import logging
import threading
import time
from dataclasses import dataclass, field
from typing import Dict, List, Optional

import numpy as np

from .. import collision
from ..dynamics.state import IntegrationError
from ..topology import propagate_topology, rupture_step
from .events import Event, EventDispatcher
from .scheduler import LoopStats, SchedulerConfig, StepRecord, run_loop

logger = logging.getLogger(__name__)

__all__ = ["PHASES", "Scene", "StepReport", "physics_tick", "mapping_sync", "run_realtime", "run_deterministic",
           "state_checksum"]

PHASES = ("collision-detection", "collision-response", "force-integration", "linear-solve", "haptic-feedback")


@dataclass
class StepReport:
    step: int
    time: float
    dt: float
    contacts: int = 0
    contact_force: float = 0.0
    separations: list = field(default_factory=list)
    iterations: Dict[str, int] = field(default_factory=dict)
    failures: List[str] = field(default_factory=list)
    phase_times: Dict[str, float] = field(default_factory=dict)
    wall_time: float = 0.0
    snapshots: Dict[str, np.ndarray] = field(default_factory=dict, repr=False)
    applied_force: Dict[str, float] = field(default_factory=dict)


class Scene:
    """Everything a run needs; built by :func:`softsim.scene.build_scene` or by hand."""

    def __init__(self, gravity=(0.0, -9.81, 0.0), contact_stiffness: float = 500.0,
                 scheduler: Optional[SchedulerConfig] = None, visual_rate: float = 60.0):
        self.gravity = np.asarray(gravity, dtype=float)
        self.contact_stiffness = contact_stiffness
        self.scheduler = scheduler or SchedulerConfig(period=0.005, slack=0.002)
        self.visual_rate = visual_rate
        self.bodies: Dict[str, object] = {}
        self.attachments = []
        self.articulations = []
        self.instruments = []
        self.endoscopes = []
        self.devices = []
        self.visuals = []
        self.trackers = []
        self.scripts = []  # callables f(scene, t) run at the start of each tick
        self.dispatcher = EventDispatcher()
        self.time = 0.0
        self.step = 0
        self.lock = threading.Lock()
        self._published = (-1, {})
        self.last_report: Optional[StepReport] = None

    def add_body(self, body):
        if body.name in self.bodies:
            raise ValueError(f"duplicate body name {body.name!r}")
        self.bodies[body.name] = body
        return body

    @property
    def collision_models(self):
        return [m for b in self.bodies.values() for m in b.collision_models]

    def snapshot(self) -> Dict[str, np.ndarray]:
        return {name: b.snapshot() for name, b in self.bodies.items()}

    def publish(self):
        with self.lock:
            self._published = (self.step, self.snapshot())

    def latest(self):
        with self.lock:
            return self._published


def physics_tick(scene: Scene, dt: float) -> StepReport:
    """One physics step: the five phases, then rupture, then the update event."""
    t0 = time.perf_counter()
    t = scene.time
    report = StepReport(scene.step, t + dt, dt)
    bodies = list(scene.bodies.values())
    for b in bodies:
        b.begin_tick()
    for script in scene.scripts:
        script(scene, t)
    for inst in scene.instruments:
        inst.articulation.apply()
    for art in scene.articulations:
        art.apply()

    def mark(phase, since):
        now = time.perf_counter()
        report.phase_times[phase] = now - since
        return now

    # 1. collision detection
    tp = time.perf_counter()
    models = scene.collision_models
    contacts = collision.detect(models) if len(models) > 1 or any(m.params.self_collision for m in models) else []
    report.contacts = len(contacts)
    tp = mark(PHASES[0], tp)

    # 2. collision response (plus the coupling inputs evaluated at the same state)
    by_id = {m.id: m for m in models}
    response = collision.penalty_response(contacts, scene.contact_stiffness, by_id) if contacts else {}
    for name, f in response.items():
        body = scene.bodies[name]
        if body.kind == "soft":
            body.external += f
        else:
            body.forces += f[:, :3]
            body.torques += f[:, 3:]
        report.contact_force += float(np.abs(f[:, :3]).sum())
    cutting = [c for c in contacts if by_id[c.model_a].params.cutting or by_id[c.model_b].params.cutting]
    if cutting:
        for b in bodies:
            if getattr(b, "topology", None) is not None:
                b.topology.report_contacts(scene.step, cutting)
    for att in scene.attachments:
        att.apply()
    for dev in scene.devices:
        dev.apply(t)
    tp = mark(PHASES[1], tp)

    # 3. force integration: assemble per-body force models
    for b in bodies:
        if b.kind == "soft":
            report.applied_force[b.name] = float(np.linalg.norm(b.external.sum(axis=0)))
        else:
            report.applied_force[b.name] = float(np.linalg.norm(b.forces.sum(axis=0)))
    tp = mark(PHASES[2], tp)

    # 4. linear solves (integrator steps)
    for b in bodies:
        try:
            stats = b.step(dt)
            report.iterations[b.name] = int(stats.get("iterations", 0))
        except IntegrationError as exc:
            report.failures.append(b.name)
            logger.error("integration failed for %s: %s", b.name, exc)
            scene.dispatcher.post(Event("error", t + dt, {"source": "integrator", "body": b.name,
                                                          "error": str(exc)}))
    tp = mark(PHASES[3], tp)

    # 5. haptic feedback
    for dev in scene.devices:
        dev.compute_feedback(t + dt)
    mark(PHASES[4], tp)

    # exclusive mutation phase
    with scene.lock:
        for b in bodies:
            if getattr(b, "topology", None) is not None:
                report.separations += rupture_step(b, step=scene.step)
        scene.time = t + dt
        scene.step += 1
        report.snapshots = scene.snapshot()
        scene._published = (scene.step, report.snapshots)
    report.wall_time = time.perf_counter() - t0
    scene.last_report = report
    scene.dispatcher.post(Event("physics-update", scene.time, report))
    return report


def mapping_sync(scene: Scene) -> int:
    """Map the latest complete physics snapshot onto every visual body.

    Returns the step counter of the snapshot used (-1 before the first step,
    in which case live states are read before any physics thread starts).
    Stale topology is propagated first; a barycentric visual on a torn body
    is a configuration error raised by :func:`propagate_topology`.
    """
    with scene.lock:
        step, snaps = scene._published
        for vis in scene.visuals:
            if _stale(vis.mapping):
                propagate_topology(vis.mapping.body, vis)
        bases = []
        for vis in scene.visuals:
            m = vis.mapping
            if m is None:
                continue
            snap = snaps[m.body.name] if snaps else m.body.snapshot()
            bases.append((vis, m.apply(snap)))
    for vis, base in bases:
        vis.update(base, step)
    scene.dispatcher.post(Event("visual-update", scene.time, {"step": step}))
    return step


def _stale(m):
    if m is None:
        return False
    if getattr(m, "stale", False):
        return True
    bm = getattr(m, "map", None)
    return bm is not None and bm.stale


def state_checksum(snapshots: Dict[str, np.ndarray]) -> str:
    h = hashlib.sha256()
    for name in sorted(snapshots):
        h.update(name.encode())
        h.update(np.ascontiguousarray(snapshots[name]).tobytes())
    return h.hexdigest()


def run_deterministic(scene: Scene, n_steps: int, dt: Optional[float] = None, sync_every: Optional[int] = None,
                      checksums: bool = False):
    """Replay mode: fixed ``dt``, sequential phases, events dispatched after each step."""
    dt = scene.scheduler.period if dt is None else dt
    if sync_every is None:
        sync_every = max(1, int(round(1.0 / (scene.visual_rate * dt))))
    sums = []
    scene.dispatcher.post(Event("simulation-start", scene.time))
    scene.dispatcher.dispatch_pending()
    stats = LoopStats()
    t0 = time.perf_counter()
    last = t0
    for k in range(n_steps):
        now = time.perf_counter()
        stats.records.append(StepRecord(k, dt, now - last))
        last = now
        physics_tick(scene, dt)
        if checksums:
            sums.append(state_checksum(scene.last_report.snapshots))
        if scene.visuals and (k + 1) % sync_every == 0:
            mapping_sync(scene)
        scene.dispatcher.dispatch_pending()
    stats.wall_time = time.perf_counter() - t0
    scene.dispatcher.post(Event("simulation-stop", scene.time))
    scene.dispatcher.dispatch_pending()
    return (stats, sums) if checksums else stats


def run_realtime(scene: Scene, cfg: Optional[SchedulerConfig] = None, stall=None, visual: bool = True,
                 stop: Optional[threading.Event] = None) -> LoopStats:
    """Run physics, visual and dispatcher tasks until ``cfg.max_steps`` or ``stop``."""
    cfg = cfg or scene.scheduler
    stop = stop or threading.Event()
    physics_done = threading.Event()
    synced = []

    def visual_task():
        period = 1.0 / scene.visual_rate
        nxt = time.perf_counter()
        while not physics_done.is_set():
            nxt += period
            try:
                synced.append(mapping_sync(scene))
            except Exception:  # noqa: BLE001 - keep the physics thread alive
                logger.exception("mapping sync failed")
            wait = nxt - time.perf_counter()
            if wait > 0:
                physics_done.wait(wait)
            else:
                nxt = time.perf_counter()

    dispatcher_stop = threading.Event()
    threads = [threading.Thread(target=scene.dispatcher.run, args=(dispatcher_stop,), name="dispatcher", daemon=True)]
    if visual and scene.visuals:
        threads.append(threading.Thread(target=visual_task, name="visual", daemon=True))
    scene.dispatcher.post(Event("simulation-start", scene.time))
    for th in threads:
        th.start()
    try:
        stats = run_loop(lambda dt, k: physics_tick(scene, dt), cfg, stop=stop, stall=stall)
    finally:
        physics_done.set()
        for th in threads[1:]:
            th.join()
        scene.dispatcher.post(Event("simulation-stop", scene.time))
        dispatcher_stop.set()
        threads[0].join()
    stats.synced_steps = synced
    return stats
