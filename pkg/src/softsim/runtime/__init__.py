"""Physics loop, scheduling, events, mapping synchronization and haptics."""
from .events import CUSTOM_KINDS, EVENT_KINDS, Event, EventDispatcher, dispatch_pending, post_event
from .haptics import VirtualHapticDevice, Waypoint, coupling_wrench, virtual_haptic_pose
from .scheduler import (LoopStats, RateStats, SchedulerConfig, StepRecord, compute_timestep, read_records, run_loop,
                        summarize, write_records)
from .simulation import (PHASES, Scene, StepReport, mapping_sync, physics_tick, run_deterministic, run_realtime,
                         state_checksum)

__all__ = [
    "CUSTOM_KINDS", "EVENT_KINDS", "Event", "EventDispatcher", "dispatch_pending", "post_event",
    "VirtualHapticDevice", "Waypoint", "coupling_wrench", "virtual_haptic_pose",
    "LoopStats", "RateStats", "SchedulerConfig", "StepRecord", "compute_timestep", "read_records", "run_loop",
    "summarize", "write_records",
    "PHASES", "Scene", "StepReport", "mapping_sync", "physics_tick", "run_deterministic", "run_realtime",
    "state_checksum",
]
