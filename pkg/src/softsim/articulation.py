"""1-DOF joint trees driving rigid-body frames, and the prefab modalities built on them."""
from __future__ import annotations

import csv
import logging
import math
from dataclasses import dataclass, field
from typing import List, Optional, Sequence

import numpy as np
from scipy.spatial.transform import Rotation

from .dynamics.bodies import RigidBody
from .dynamics.state import RigidBodyState
from .runtime.events import Event
from .transforms import Pose
from .visual import Camera, Light

logger = logging.getLogger(__name__)

__all__ = [
    "ArticulationError",
    "JointConfiguration",
    "Articulation",
    "joint_motion",
    "forward_kinematics",
    "ArticulatedInstrument",
    "make_articulated_instrument",
    "endoscope_view_pose",
    "Endoscope",
    "MetricTracker",
    "metric_tracker",
]


class ArticulationError(ValueError):
    pass


@dataclass(frozen=True)
class JointConfiguration:
    joint_type: str
    parent_index: int
    child_index: int
    axis: tuple = (0.0, 0.0, 1.0)
    parent_offset: Pose = field(default_factory=Pose)
    child_offset: Pose = field(default_factory=Pose)
    limits: Optional[tuple] = None

    def __post_init__(self):
        if self.joint_type not in ("prismatic", "revolute"):
            raise ArticulationError(f"joint type must be prismatic or revolute, got {self.joint_type!r}")
        a = np.asarray(self.axis, dtype=float)
        n = np.linalg.norm(a)
        if n == 0:
            raise ArticulationError("joint axis must be non-zero")
        object.__setattr__(self, "axis", tuple(a / n))
        if self.parent_index == self.child_index:
            raise ArticulationError("joint connects a frame to itself")


def joint_motion(joint: JointConfiguration, value: float) -> Pose:
    axis = np.asarray(joint.axis)
    if joint.joint_type == "prismatic":
        return Pose(value * axis)
    return Pose(np.zeros(3), Rotation.from_rotvec(value * axis))


class Articulation:
    """Joint tree over the frames of ``controlled_body``.

    The root frame is the only frame that is nobody's child.  Its pose comes
    from ``attachment_body`` (frame ``attachment_frame``) when given, else from
    the controlled body's own state.  Child frames are driven kinematically.
    """

    def __init__(self, controlled_body: RigidBody, joints: Sequence[JointConfiguration],
                 attachment_body: Optional[RigidBody] = None, attachment_frame: int = 0, values=None):
        self.body = controlled_body
        self.joints = list(joints)
        self.attachment_body = attachment_body
        self.attachment_frame = attachment_frame
        self.order = self._validate()
        self.values = np.zeros(len(self.joints)) if values is None else np.asarray(values, dtype=float).copy()
        if len(self.values) != len(self.joints):
            raise ArticulationError(f"{len(self.values)} values for {len(self.joints)} joints")
        self.body.driven_frames.update(j.child_index for j in self.joints)

    def _validate(self) -> List[int]:
        n = self.body.n_frames
        parent_of = {}
        for i, j in enumerate(self.joints):
            for f in (j.parent_index, j.child_index):
                if not 0 <= f < n:
                    raise ArticulationError(f"joint {i}: frame {f} out of range ({n} frames)")
            if j.child_index in parent_of:
                raise ArticulationError(f"frame {j.child_index} has two parent joints")
            parent_of[j.child_index] = i
        children = {c for c in parent_of}
        roots = sorted({j.parent_index for j in self.joints} - children)
        if self.joints and len(roots) != 1:
            raise ArticulationError(f"joint graph must have exactly one root, found {roots or 'a cycle'}")
        # breadth-first order from the root; any joint left over sits on a cycle
        order, frontier = [], list(roots)
        while frontier:
            f = frontier.pop(0)
            for i, j in enumerate(self.joints):
                if j.parent_index == f:
                    order.append(i)
                    frontier.append(j.child_index)
        if len(order) != len(self.joints):
            raise ArticulationError("cycle detected in joint graph")
        self.root = roots[0] if roots else 0
        return order

    def set_values(self, values):
        values = np.asarray(values, dtype=float)
        if values.shape != self.values.shape:
            raise ArticulationError(f"expected {len(self.values)} values")
        for v, j in zip(values, self.joints):
            if j.limits is not None and not (j.limits[0] <= v <= j.limits[1]):
                raise ArticulationError(f"value {v} outside joint limits {j.limits}")
        self.values = values.copy()

    def root_pose(self) -> Pose:
        if self.attachment_body is not None:
            return self.attachment_body.pose(self.attachment_frame)
        return self.body.pose(self.root)

    def apply(self, values=None):
        """Evaluate FK and write the child frames into the controlled body."""
        poses = forward_kinematics(self, self.values if values is None else values)
        for f, pose in poses.items():
            if f != self.root or self.attachment_body is not None:
                self.body.set_pose(f, pose)
                self.body.state.linear[f] = 0.0
                self.body.state.angular[f] = 0.0
        return poses


def forward_kinematics(art: Articulation, values) -> dict:
    """``{frame: Pose}``; child = parent * parent_offset * motion(value) * child_offset."""
    values = np.asarray(values, dtype=float)
    poses = {art.root: art.root_pose()}
    for i in art.order:
        j = art.joints[i]
        poses[j.child_index] = poses[j.parent_index] @ j.parent_offset @ joint_motion(j, values[i]) @ j.child_offset
    return poses


class ArticulatedInstrument:
    """Rigid shaft (frame 0, along local +z) with one or two jaws hinged at the tip.

    Jaw frames sit at the jaw tips.  Both jaws of the two-jaw variant are
    driven by a single opening value: ``+theta`` and ``-theta`` about the
    hinge axis.
    """

    def __init__(self, name: str, jaws: int = 2, shaft_length: float = 0.3, jaw_length: float = 0.015,
                 hinge_axis=(1.0, 0.0, 0.0), mass: float = 0.1, pose: Pose = Pose(), gravity=(0.0, 0.0, 0.0)):
        if jaws not in (1, 2):
            raise ArticulationError(f"an instrument has 1 or 2 jaws, got {jaws}")
        n = 1 + jaws
        state = RigidBodyState(np.tile(pose.translation, (n, 1)), np.tile(pose.quat, (n, 1)),
                               np.zeros((n, 3)), np.zeros((n, 3)), np.full(n, mass / n),
                               np.tile(np.eye(3) * 1e-4, (n, 1, 1)))
        self.body = RigidBody(name, state, gravity=gravity)
        self.jaws = jaws
        self.jaw_length = jaw_length
        tip = Pose(np.array([0.0, 0.0, shaft_length]))
        joints = [JointConfiguration("revolute", 0, 1 + k, hinge_axis, tip, Pose(np.array([0.0, 0.0, jaw_length])))
                  for k in range(jaws)]
        self.articulation = Articulation(self.body, joints)
        self.opening = 0.0
        self.set_opening(0.0)

    def set_opening(self, theta: float):
        self.opening = float(theta)
        vals = [theta] if self.jaws == 1 else [theta, -theta]
        self.articulation.set_values(vals)
        return self.articulation.apply()

    def jaw_tips(self):
        return np.array([self.body.pose(1 + k).translation for k in range(self.jaws)])


def make_articulated_instrument(config: dict) -> ArticulatedInstrument:
    cfg = dict(config)
    name = cfg.pop("name", "instrument")
    return ArticulatedInstrument(name, **cfg)


def endoscope_view_pose(scope_frame: Pose, inclination: float, roll: float, tip_distance: float = 0.0) -> Pose:
    """Camera pose at the distal tip of a scope whose axis is the frame's local +z.

    The view axis is tilted by ``inclination`` about the local y axis, and the
    tilt plane is then rolled by ``roll`` about the scope axis (right-handed).
    """
    rot = Rotation.from_rotvec([0.0, 0.0, roll]) * Rotation.from_rotvec([0.0, inclination, 0.0])
    return scope_frame @ Pose(np.array([0.0, 0.0, tip_distance]), rot)


class Endoscope:
    """Rigid scope with a camera and a light at the distal tip."""

    def __init__(self, name: str = "endoscope", length: float = 0.3, inclination: float = math.radians(30.0),
                 roll: float = 0.0, pose: Pose = Pose(), mass: float = 0.2, gravity=(0.0, 0.0, 0.0)):
        self.body = RigidBody(name, RigidBodyState.single(pose.translation, pose.quat, mass), gravity=gravity)
        self.length = length
        self.inclination = inclination
        self.roll = roll
        self.camera = Camera(f"{name}.camera")
        self.light = Light(f"{name}.light")
        self.camera.map_to_body(self.body, 0)
        self.light.set_parent(self.camera)
        self.update_optics()

    def update_optics(self, inclination=None, roll=None):
        if inclination is not None:
            self.inclination = inclination
        if roll is not None:
            self.roll = roll
        local = endoscope_view_pose(Pose(), self.inclination, self.roll, self.length)
        self.camera.local = local

    def view_axis(self):
        return self.camera.view_axis()


class MetricTracker:
    """Writes one CSV row per physics update for one body.

    Columns: ``time`` (simulation seconds), position (``x,y,z``; rigid bodies
    add the frame orientation ``qx,qy,qz,qw``; soft bodies report the centroid
    or one chosen node) and ``force`` (magnitude of the net applied force).
    Rows come from the snapshot carried by each event, never the live body.
    """

    def __init__(self, body, sink, node: Optional[int] = None, frame: int = 0, dispatcher=None):
        self.body = body
        self.name = body.name
        self.kind = body.kind
        self.node = node
        self.frame = frame
        self.enabled = True
        self.records = 0
        self.dispatcher = dispatcher
        self._own = not hasattr(sink, "write")
        self._path = None if not self._own else sink
        try:
            self._fh = open(sink, "w", newline="") if self._own else sink
            self._writer = csv.writer(self._fh)
            self._writer.writerow(self.header())
        except OSError as exc:
            self._fail(exc)

    def header(self):
        cols = ["time", "x", "y", "z"]
        if self.kind == "rigid":
            cols += ["qx", "qy", "qz", "qw"]
        return cols + ["force"]

    def attach(self, dispatcher):
        self.dispatcher = dispatcher
        dispatcher.attach("simulation-start", self.on_start)
        dispatcher.attach("physics-update", self.on_physics_update)
        dispatcher.attach("simulation-stop", self.on_stop)
        return self

    def row(self, time, snap, force):
        if self.kind == "rigid":
            pos = list(snap[self.frame, :7])
        elif self.node is not None:
            pos = list(snap[self.node])
        else:
            pos = list(snap.mean(axis=0))
        return [time] + [float(p) for p in pos] + [float(force)]

    def on_physics_update(self, event: Event):
        if not self.enabled:
            return
        report = event.payload
        try:
            snap = report.snapshots[self.name]
            force = report.applied_force.get(self.name, 0.0)
            self._writer.writerow(self.row(report.time, snap, force))
            self.records += 1
        except (OSError, ValueError) as exc:
            self._fail(exc)

    def on_start(self, event: Event = None):
        """A file closed by an earlier stop is reopened for appending (no second header)."""
        if self.enabled and self._own and self._fh.closed:
            try:
                self._fh = open(self._path, "a", newline="")
                self._writer = csv.writer(self._fh)
            except OSError as exc:
                self._fail(exc)

    def on_stop(self, event: Event = None):
        if self.enabled:
            try:
                self._fh.flush()
            except (OSError, ValueError) as exc:
                self._fail(exc)
        if self._own and hasattr(self, "_fh"):
            self._fh.close()

    def _fail(self, exc):
        self.enabled = False
        logger.error("metric tracker for %s disabled: %s", self.name, exc)
        if self.dispatcher is not None:
            self.dispatcher.post(Event("error", 0.0, {"source": "metric_tracker", "body": self.name,
                                                      "error": str(exc)}))


def metric_tracker(body, sink, dispatcher=None, **kw) -> MetricTracker:
    tracker = MetricTracker(body, sink, dispatcher=dispatcher, **kw)
    if dispatcher is not None:
        tracker.attach(dispatcher)
    return tracker
