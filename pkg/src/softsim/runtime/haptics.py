"""Scripted 6-DOF haptic device coupled to a rigid body by a spring wrench."""
from __future__ import annotations

import logging
from dataclasses import dataclass, field
from typing import List, Sequence

import numpy as np
from scipy.spatial.transform import Rotation, Slerp

from ..transforms import Pose, rotvec_between

logger = logging.getLogger(__name__)

__all__ = ["Waypoint", "VirtualHapticDevice", "virtual_haptic_pose", "coupling_wrench"]


@dataclass(frozen=True)
class Waypoint:
    t: float
    position: tuple
    orientation: tuple = (0.0, 0.0, 0.0, 1.0)  # xyzw


def coupling_wrench(device_pose: Pose, body_pose: Pose, k_lin: float, k_ang: float):
    """``(k_lin (p_dev - p_body), k_ang rotvec(q_dev q_body^-1))``."""
    force = k_lin * (device_pose.translation - body_pose.translation)
    torque = k_ang * rotvec_between(device_pose.quat, body_pose.quat)
    return force, torque


@dataclass
class VirtualHapticDevice:
    """Waypoint trajectory played back in place of a hardware device.

    Positions are linearly interpolated, orientations slerped.  Before the
    first waypoint the first pose is held, after the last one the last pose.
    The world pose is ``origin * scaled trajectory`` where ``scale`` applies
    to translations only.
    """

    name: str
    waypoints: Sequence[Waypoint]
    body: object = None
    frame: int = 0
    stiffness_linear: float = 100.0
    stiffness_angular: float = 1.0
    scale: float = 1.0
    origin: Pose = field(default_factory=Pose)
    log: List[tuple] = field(default_factory=list)

    def __post_init__(self):
        wps = sorted(self.waypoints, key=lambda w: w.t)
        if not wps:
            raise ValueError(f"device {self.name!r} needs at least one waypoint")
        self.waypoints = wps
        self._t = np.array([w.t for w in wps])
        if (np.diff(self._t) <= 0).any():
            raise ValueError(f"device {self.name!r}: waypoint times must be strictly increasing")
        self._p = np.array([w.position for w in wps], dtype=float)
        rots = Rotation.from_quat(np.array([w.orientation for w in wps], dtype=float))
        self._rots = rots
        self._slerp = Slerp(self._t, rots) if len(wps) > 1 else None
        self.last_wrench = (np.zeros(3), np.zeros(3))
        self.feedback = (np.zeros(3), np.zeros(3))

    def local_pose(self, t: float) -> Pose:
        tc = float(np.clip(t, self._t[0], self._t[-1]))
        p = np.array([np.interp(tc, self._t, self._p[:, c]) for c in range(3)])
        r = self._slerp([tc])[0] if self._slerp is not None else self._rots[0]
        return Pose(self.scale * p, r)

    def pose(self, t: float) -> Pose:
        return self.origin @ self.local_pose(t)

    def apply(self, t: float):
        """Push the coupling wrench onto the controlled body; returns it."""
        force, torque = coupling_wrench(self.pose(t), self.body.pose(self.frame),
                                        self.stiffness_linear, self.stiffness_angular)
        self.body.apply_force(self.frame, force)
        self.body.apply_torque(self.frame, torque)
        self.last_wrench = (force, torque)
        return force, torque

    def compute_feedback(self, t: float):
        """Wrench rendered to the operator after the step: reaction of the coupling."""
        force, torque = coupling_wrench(self.pose(t), self.body.pose(self.frame),
                                        self.stiffness_linear, self.stiffness_angular)
        self.feedback = (-force, -torque)
        self.log.append((t, *self.feedback[0], *self.feedback[1]))
        return self.feedback


def virtual_haptic_pose(device: VirtualHapticDevice, t: float) -> Pose:
    return device.pose(t)
