"""Declarative scene description (YAML) and the builder that turns it into a :class:`Scene`.

Every error names the offending location, e.g. ``bodies[1].mechanics.poisson_ratio``.
See the README for the full schema.
"""
from __future__ import annotations

import logging
import math
import os
from dataclasses import dataclass
from typing import Any, Dict, Optional

import numpy as np
import yaml

from .articulation import (Articulation, ArticulatedInstrument, Endoscope, JointConfiguration, MetricTracker,
                           ArticulationError)
from .attachment import AttachmentConfig, AttachmentError, create_attachment, select_mapping
from .collision import CollisionParams, attach_collision_model
from .dynamics.bodies import RigidBody, SoftBody
from .dynamics.state import MechanicalParams, RigidBodyState, SolverConfig
from .mesh import DATA_DIR, MeshError, SurfaceMesh, TetMesh, boundary_surface, load_surface_mesh, load_tet_mesh
from .runtime.haptics import VirtualHapticDevice, Waypoint
from .runtime.scheduler import SchedulerConfig
from .runtime.simulation import Scene
from .transforms import Pose
from .visual import VisualBody

logger = logging.getLogger(__name__)

__all__ = ["SceneConfigError", "AssetError", "SceneConfig", "load_scene_config", "build_scene", "scene_path",
           "DEFAULT_GRAVITY"]

DEFAULT_GRAVITY = (0.0, -9.81, 0.0)
SCENES_DIR = os.path.join(DATA_DIR, "scenes")


class SceneConfigError(ValueError):
    def __init__(self, location: str, msg: str):
        self.location = location
        super().__init__(f"{location}: {msg}")


class AssetError(SceneConfigError):
    """A referenced mesh file is missing or unreadable."""


def scene_path(name: str) -> str:
    """Path of a shipped scene (``"bunny_benchmark"`` or ``"bunny_benchmark.yaml"``)."""
    if not name.endswith((".yaml", ".yml")):
        name += ".yaml"
    return os.path.join(SCENES_DIR, name)


@dataclass
class SceneConfig:
    data: Dict[str, Any]
    base_dir: str = "."

    @classmethod
    def from_yaml(cls, text: str, base_dir: str = ".") -> "SceneConfig":
        data = yaml.safe_load(text) or {}
        if not isinstance(data, dict):
            raise SceneConfigError("<root>", "scene document must be a mapping")
        return cls(data, base_dir)

    def validate(self):
        """Check cross-references before anything is built."""
        d = self.data
        names = []
        for i, b in enumerate(_list(d, "bodies", "<root>")):
            loc = f"bodies[{i}]"
            if not isinstance(b, dict) or "name" not in b:
                raise SceneConfigError(loc, "body needs a name")
            if b.get("type", "soft") not in ("soft", "rigid"):
                raise SceneConfigError(f"{loc}.type", f"must be soft or rigid, got {b.get('type')!r}")
            names.append(b["name"])
        for key in ("instruments", "endoscopes"):
            for i, p in enumerate(_list(d, key, "<root>")):
                names.append(p.get("name", key[:-1]))
        dup = {n for n in names if names.count(n) > 1}
        if dup:
            raise SceneConfigError("bodies", f"duplicate body names {sorted(dup)}")
        known = set(names)

        def ref(loc, name):
            if name not in known:
                raise SceneConfigError(loc, f"unknown body {name!r}")

        for i, a in enumerate(_list(d, "attachments", "<root>")):
            ref(f"attachments[{i}].body", a.get("body"))
            tgt = a.get("target")
            if isinstance(tgt, str):
                ref(f"attachments[{i}].target", tgt)
        for i, a in enumerate(_list(d, "articulations", "<root>")):
            ref(f"articulations[{i}].body", a.get("body"))
            if a.get("attachment_body") is not None:
                ref(f"articulations[{i}].attachment_body", a["attachment_body"])
        for i, h in enumerate(_list(d, "haptics", "<root>")):
            ref(f"haptics[{i}].body", h.get("body"))
        for i, t in enumerate(_list(d, "trackers", "<root>")):
            ref(f"trackers[{i}].body", t.get("body"))
        return self


def load_scene_config(path) -> SceneConfig:
    try:
        with open(path) as fh:
            text = fh.read()
    except OSError as exc:
        raise AssetError(str(path), f"cannot read scene file: {exc}") from exc
    return SceneConfig.from_yaml(text, os.path.dirname(os.path.abspath(path)))


def _list(d, key, loc):
    v = d.get(key) or []
    if not isinstance(v, list):
        raise SceneConfigError(f"{loc}.{key}" if loc != "<root>" else key, "must be a list")
    return v


def _vec(v, loc, n=3):
    try:
        a = np.asarray(v, dtype=float).reshape(n)
    except (TypeError, ValueError) as exc:
        raise SceneConfigError(loc, f"expected {n} numbers, got {v!r}") from exc
    return a


def _pose(d, loc) -> Pose:
    if not d:
        return Pose()
    t = _vec(d.get("translation", (0, 0, 0)), f"{loc}.translation")
    if "quaternion" in d:
        return Pose.from_quat(t, _vec(d["quaternion"], f"{loc}.quaternion", 4))
    if "rotation_deg" in d:
        from scipy.spatial.transform import Rotation

        return Pose(t, Rotation.from_euler("xyz", _vec(d["rotation_deg"], f"{loc}.rotation_deg"), degrees=True))
    return Pose(t)


def _stiffness(v, loc):
    if v in (None, "inf", "infinity", ".inf") or (isinstance(v, float) and math.isinf(v)):
        return math.inf
    try:
        return float(v)
    except (TypeError, ValueError) as exc:
        raise SceneConfigError(loc, f"stiffness must be a number or inf, got {v!r}") from exc


def _resolve(path, base_dir, loc):
    for cand in (path, os.path.join(base_dir, path), os.path.join(DATA_DIR, path)):
        if os.path.isfile(cand):
            return cand
    raise AssetError(loc, f"mesh file not found: {path!r}")


def _load_tet(path, base_dir, loc, pose: Optional[Pose]) -> TetMesh:
    p = _resolve(path, base_dir, loc)
    try:
        m = load_tet_mesh(p)
    except (MeshError, OSError) as exc:
        raise AssetError(loc, str(exc)) from exc
    return m if pose is None else TetMesh(pose.apply(m.vertices), m.tetrahedra)


def _load_surface(path, base_dir, loc) -> SurfaceMesh:
    p = _resolve(path, base_dir, loc)
    try:
        return load_surface_mesh(p)
    except (MeshError, OSError) as exc:
        raise AssetError(loc, str(exc)) from exc


def _select_nodes(sel, x, loc):
    """Node indices from a list, ``{box: {min, max}}`` or ``{all: true}``."""
    if sel is None:
        return np.zeros(0, dtype=np.int64)
    if isinstance(sel, list):
        idx = np.asarray(sel, dtype=np.int64)
    elif isinstance(sel, dict) and "box" in sel:
        lo = _vec(sel["box"].get("min"), f"{loc}.box.min")
        hi = _vec(sel["box"].get("max"), f"{loc}.box.max")
        idx = np.nonzero(((x >= lo) & (x <= hi)).all(axis=1))[0]
    elif isinstance(sel, dict) and sel.get("all"):
        idx = np.arange(len(x))
    else:
        raise SceneConfigError(loc, "node selection must be a list of indices, {box: {min, max}} or {all: true}")
    if idx.size and (idx.min() < 0 or idx.max() >= len(x)):
        raise SceneConfigError(loc, f"node index out of range ({len(x)} nodes)")
    return idx


def _params(cls, d, loc):
    try:
        return cls(**(d or {}))
    except TypeError as exc:
        raise SceneConfigError(loc, str(exc)) from exc
    except ValueError as exc:
        raise SceneConfigError(loc, str(exc)) from exc


def _collision_params(c, loc):
    kw = {k: c[k] for k in ("proximity", "group", "self_collision", "cutting") if k in c}
    if "primitives" in c:
        kw["primitives"] = frozenset(c["primitives"])
    return _params(CollisionParams, kw, loc)


def _build_soft(scene, b, loc, base_dir, gravity):
    pose = _pose(b["pose"], f"{loc}.pose") if b.get("pose") else None
    mesh = _load_tet(b.get("mesh", ""), base_dir, f"{loc}.mesh", pose)
    mech = dict(b.get("mechanics") or {})
    if mech.get("tearing_threshold") is not None:
        mech["tearing_threshold"] = float(mech["tearing_threshold"])
    params = _params(MechanicalParams, mech, f"{loc}.mechanics")
    solver = _params(SolverConfig, b.get("solver"), f"{loc}.solver")
    pinned = _select_nodes(b.get("pinned"), mesh.vertices, f"{loc}.pinned")
    try:
        body = SoftBody(b["name"], mesh, params, solver, pinned, gravity, bool(b.get("dynamic_topology", False)))
    except ValueError as exc:
        raise SceneConfigError(loc, str(exc)) from exc
    scene.add_body(body)
    surface = None
    for j, c in enumerate(b.get("collision") or []):
        cl = f"{loc}.collision[{j}]"
        src = c.get("surface", "boundary")
        surf = boundary_surface(mesh) if src == "boundary" else _load_surface(src, base_dir, cl)
        try:
            attach_collision_model(body, surf, _collision_params(c, cl))
        except ValueError as exc:
            raise SceneConfigError(cl, str(exc)) from exc
    vis = b.get("visual")
    if vis is not None:
        vl = f"{loc}.visual"
        src = vis.get("mesh", "boundary")
        surface = boundary_surface(mesh) if src == "boundary" else _load_surface(src, base_dir, f"{vl}.mesh")
        _add_visual(scene, body, surface, vis, vl)
    return body


def _add_visual(scene, body, surface, vis, loc, frame=0):
    level = vis.get("subdivision", 0)
    try:
        mapping = select_mapping(body, surface, frame)
        if mapping.scheme == "dynamic-topology":
            surface = mapping.surface
        scene.visuals.append(VisualBody(f"{body.name}.visual", surface, level, mapping))
    except ValueError as exc:
        raise SceneConfigError(loc, str(exc)) from exc


def _build_rigid(scene, b, loc, base_dir, gravity):
    pose = _pose(b.get("pose"), f"{loc}.pose")
    mass = float(b.get("mass", 1.0))
    inertia = b.get("inertia")
    I = None if inertia is None else np.diag(_vec(inertia, f"{loc}.inertia"))
    try:
        state = RigidBodyState.single(pose.translation, pose.quat, mass, I)
        body = RigidBody(b["name"], state, gravity, float(b.get("linear_damping", 1.0)),
                         float(b.get("angular_damping", 1.0)), bool(b.get("kinematic", False)))
    except ValueError as exc:
        raise SceneConfigError(loc, str(exc)) from exc
    scene.add_body(body)
    _rigid_extras(scene, body, b, loc, base_dir)
    return body


def _rigid_extras(scene, body, b, loc, base_dir):
    for j, c in enumerate(b.get("collision") or []):
        cl = f"{loc}.collision[{j}]"
        surf = _load_surface(c.get("surface", ""), base_dir, cl)
        try:
            attach_collision_model(body, surf, _collision_params(c, cl), frame=int(c.get("frame", 0)))
        except ValueError as exc:
            raise SceneConfigError(cl, str(exc)) from exc
    vis = b.get("visual")
    if vis is not None:
        surf = _load_surface(vis.get("mesh", ""), base_dir, f"{loc}.visual.mesh")
        _add_visual(scene, body, surf, vis, f"{loc}.visual", int(vis.get("frame", 0)))


def _opening_script(inst, waypoints):
    t = np.array([w[0] for w in waypoints], dtype=float)
    v = np.array([w[1] for w in waypoints], dtype=float)

    def script(scene, time):
        inst.set_opening(float(np.interp(time, t, v)))

    return script


def build_scene(config) -> Scene:
    """Build a scene from a :class:`SceneConfig`, a mapping or a YAML path."""
    if isinstance(config, (str, os.PathLike)):
        config = load_scene_config(config)
    elif isinstance(config, dict):
        config = SceneConfig(config)
    config.validate()
    d, base = config.data, config.base_dir
    gravity = _vec(d.get("gravity", DEFAULT_GRAVITY), "gravity")
    sched = _params(SchedulerConfig, d.get("scheduler") or {"period": 0.005, "slack": 0.002}, "scheduler")
    scene = Scene(gravity, float(d.get("contact_stiffness", 500.0)), sched, float(d.get("visual_rate", 60.0)))

    for i, b in enumerate(_list(d, "bodies", "<root>")):
        loc = f"bodies[{i}]"
        if b.get("type", "soft") == "soft":
            _build_soft(scene, b, loc, base, gravity)
        else:
            _build_rigid(scene, b, loc, base, gravity)

    for i, p in enumerate(_list(d, "instruments", "<root>")):
        loc = f"instruments[{i}]"
        kw = {k: p[k] for k in ("jaws", "shaft_length", "jaw_length", "mass") if k in p}
        try:
            inst = ArticulatedInstrument(p.get("name", "instrument"), pose=_pose(p.get("pose"), f"{loc}.pose"),
                                         gravity=_vec(p.get("gravity", (0, 0, 0)), f"{loc}.gravity"), **kw)
        except (ArticulationError, TypeError) as exc:
            raise SceneConfigError(loc, str(exc)) from exc
        inst.body.linear_damping = float(p.get("linear_damping", 1.0))
        inst.body.angular_damping = float(p.get("angular_damping", 1.0))
        scene.add_body(inst.body)
        scene.instruments.append(inst)
        _rigid_extras(scene, inst.body, p, loc, base)
        if p.get("opening"):
            scene.scripts.append(_opening_script(inst, p["opening"]))

    for i, p in enumerate(_list(d, "endoscopes", "<root>")):
        loc = f"endoscopes[{i}]"
        endo = Endoscope(p.get("name", "endoscope"), float(p.get("length", 0.3)),
                         math.radians(float(p.get("inclination_deg", 30.0))), math.radians(float(p.get("roll_deg", 0.0))),
                         _pose(p.get("pose"), f"{loc}.pose"))
        scene.add_body(endo.body)
        scene.endoscopes.append(endo)

    for i, a in enumerate(_list(d, "attachments", "<root>")):
        loc = f"attachments[{i}]"
        body = scene.bodies[a["body"]]
        x = body.state.x if body.kind == "soft" else body.state.translations
        nodes = _select_nodes(a.get("nodes"), x, f"{loc}.nodes")
        tgt = a.get("target")
        target = scene.bodies[tgt] if isinstance(tgt, str) else (None if tgt is None else np.asarray(tgt, float))
        k = _stiffness(a.get("stiffness"), f"{loc}.stiffness")
        try:
            cfg = AttachmentConfig(tuple(nodes), k,
                                   bool(a.get("barycentric", False)))
            scene.attachments.append(create_attachment(body, target, cfg, a.get("name", f"attachment{i}")))
        except (AttachmentError, ValueError) as exc:
            raise SceneConfigError(loc, str(exc)) from exc

    for i, a in enumerate(_list(d, "articulations", "<root>")):
        loc = f"articulations[{i}]"
        try:
            joints = [JointConfiguration(j["type"], int(j["parent"]), int(j["child"]), tuple(j.get("axis", (0, 0, 1))),
                                         _pose(j.get("parent_offset"), f"{loc}.joints[{k}].parent_offset"),
                                         _pose(j.get("child_offset"), f"{loc}.joints[{k}].child_offset"),
                                         tuple(j["limits"]) if j.get("limits") else None)
                      for k, j in enumerate(a.get("joints") or [])]
            att = scene.bodies[a["attachment_body"]] if a.get("attachment_body") else None
            scene.articulations.append(Articulation(scene.bodies[a["body"]], joints, att,
                                                    int(a.get("attachment_frame", 0)), a.get("values")))
        except (ArticulationError, KeyError) as exc:
            raise SceneConfigError(loc, str(exc)) from exc

    for i, h in enumerate(_list(d, "haptics", "<root>")):
        loc = f"haptics[{i}]"
        try:
            wps = [Waypoint(float(w["t"]), tuple(_vec(w["position"], f"{loc}.waypoints[{k}].position")),
                            tuple(_vec(w.get("orientation", (0, 0, 0, 1)), f"{loc}.waypoints[{k}].orientation", 4)))
                   for k, w in enumerate(h.get("waypoints") or [])]
            dev = VirtualHapticDevice(h.get("name", f"device{i}"), wps, scene.bodies[h["body"]], int(h.get("frame", 0)),
                                      float(h.get("stiffness_linear", 100.0)), float(h.get("stiffness_angular", 1.0)),
                                      float(h.get("scale", 1.0)), _pose(h.get("origin"), f"{loc}.origin"))
        except (ValueError, KeyError) as exc:
            raise SceneConfigError(loc, str(exc)) from exc
        scene.devices.append(dev)

    for i, t in enumerate(_list(d, "trackers", "<root>")):
        loc = f"trackers[{i}]"
        path = t.get("path", f"{t['body']}_metrics.csv")
        path = path if os.path.isabs(path) else os.path.join(base, path)
        tr = MetricTracker(scene.bodies[t["body"]], path, node=t.get("node"), frame=int(t.get("frame", 0)))
        scene.trackers.append(tr.attach(scene.dispatcher))

    logger.info("scene built: %d bodies, %d attachments, %d visuals", len(scene.bodies), len(scene.attachments),
                len(scene.visuals))
    return scene
