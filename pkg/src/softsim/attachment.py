"""Barycentric embedding, inter-body attachments and body-to-visual mappings."""
from __future__ import annotations

import logging
import math
from dataclasses import dataclass, field
from typing import Optional

import numpy as np
from scipy.spatial import cKDTree

from .dynamics.forces import ForceField
from .mesh import DegenerateElementError, MeshError, SurfaceMesh, TetMesh, boundary_surface
from .transforms import Pose

logger = logging.getLogger(__name__)

__all__ = [
    "INSIDE_TOL",
    "StaleMapError",
    "AttachmentError",
    "BarycentricMap",
    "barycentric_coords",
    "bind_points",
    "apply_map",
    "rebind",
    "EmbeddedSpring",
    "AttachmentConfig",
    "Attachment",
    "create_attachment",
    "RigidMapping",
    "IdentityMapping",
    "BarycentricMapping",
    "DynamicTopologyMapping",
    "select_mapping",
]

# weights down to -INSIDE_TOL still count as inside (points on faces)
INSIDE_TOL = 1e-9


class StaleMapError(RuntimeError):
    """The source mesh changed topology since the map was bound."""


class AttachmentError(ValueError):
    pass


def barycentric_coords(point, tet) -> np.ndarray:
    """Weights ``w`` with ``sum(w) = 1`` and ``sum(w_i * tet_i) = point``."""
    tet = np.asarray(tet, dtype=float).reshape(4, 3)
    D = (tet[1:] - tet[0]).T
    scale = max(np.abs(D).max(), 1e-300)
    if abs(np.linalg.det(D / scale)) < 1e-12:
        raise DegenerateElementError("degenerate tetrahedron", [])
    w123 = np.linalg.solve(D, np.asarray(point, dtype=float) - tet[0])
    return np.concatenate([[1.0 - w123.sum()], w123])


def _inverse_shapes(vertices, tets):
    D = np.swapaxes(vertices[tets[:, 1:]] - vertices[tets[:, :1]], 1, 2)
    return np.linalg.inv(D)


@dataclass(frozen=True)
class BarycentricMap:
    """Points embedded in a tet mesh: ``target_i = sum_j w_ij x[nodes_ij]``."""

    tet_index: np.ndarray
    weights: np.ndarray
    nodes: np.ndarray
    inside: np.ndarray
    mesh: TetMesh = field(repr=False)
    version: int = 0

    def __len__(self):
        return len(self.tet_index)

    @property
    def stale(self):
        return self.version != self.mesh.topology_version


def bind_points(points, mesh: TetMesh, chunk: int = 128) -> BarycentricMap:
    """Embed ``points`` in the rest configuration of ``mesh``.

    A point goes to the lowest-indexed tet containing it.  Points outside
    every tet go to the tet with the nearest centroid; their weights are
    clamped at zero and renormalized.
    """
    if mesh.n_elements == 0:
        raise MeshError("cannot bind points to an empty mesh")
    P = np.asarray(points, dtype=float).reshape(-1, 3)
    V, T = mesh.vertices, mesh.tetrahedra
    inv = _inverse_shapes(V, T)
    origin = V[T[:, 0]]
    tet_index = np.empty(len(P), dtype=np.int64)
    weights = np.empty((len(P), 4))
    inside = np.zeros(len(P), dtype=bool)
    for s in range(0, len(P), chunk):
        p = P[s:s + chunk]
        w123 = np.einsum("eij,pej->pei", inv, p[:, None, :] - origin[None])
        w = np.concatenate([1.0 - w123.sum(axis=2, keepdims=True), w123], axis=2)
        ok = (w >= -INSIDE_TOL).all(axis=2)
        hit = ok.any(axis=1)
        first = ok.argmax(axis=1)
        rows = np.arange(len(p))
        tet_index[s:s + chunk] = first
        weights[s:s + chunk] = w[rows, first]
        inside[s:s + chunk] = hit
    out = np.nonzero(~inside)[0]
    if out.size:
        centroids = V[T].mean(axis=1)
        d2 = ((P[out, None, :] - centroids[None]) ** 2).sum(axis=2)
        nearest = d2.argmin(axis=1)  # first minimum = lowest index
        w = np.array([barycentric_coords(P[i], V[T[e]]) for i, e in zip(out, nearest)])
        w = np.clip(w, 0.0, None)
        w /= w.sum(axis=1, keepdims=True)
        tet_index[out] = nearest
        weights[out] = w
    return BarycentricMap(tet_index, weights, T[tet_index].copy(), inside, mesh, mesh.topology_version)


def rebind(bmap: BarycentricMap) -> BarycentricMap:
    """Refresh node indices after vertex duplication.

    Rupture keeps element indices and rest positions, so tet ids and weights
    stay valid; only the element-to-node table changes.
    """
    mesh = bmap.mesh
    return BarycentricMap(bmap.tet_index, bmap.weights, mesh.tetrahedra[bmap.tet_index].copy(),
                          bmap.inside, mesh, mesh.topology_version)


def apply_map(bmap: BarycentricMap, source) -> np.ndarray:
    """Mapped target positions for a source state (``SoftBodyState`` or ``(N, 3)`` array)."""
    if bmap.stale:
        raise StaleMapError(f"map bound at topology version {bmap.version}, "
                            f"mesh is at {bmap.mesh.topology_version}; rebind required")
    x = getattr(source, "x", source)
    return np.einsum("pk,pkc->pc", bmap.weights, x[bmap.nodes])


class EmbeddedSpring(ForceField):
    """Zero-length springs pulling weighted node combinations toward fixed targets.

    Point ``q_i = sum_k w_ik x[nodes_ik]`` feels ``k (t_i - q_i)``, spread to its
    nodes by the weights.  Targets are refreshed every tick by the owning
    attachment; within a solve they are constant.
    """

    def __init__(self, nodes, weights, stiffness: float):
        self.nodes = np.asarray(nodes, dtype=np.int64).reshape(len(nodes), -1)
        self.weights = np.asarray(weights, dtype=float).reshape(self.nodes.shape)
        self.stiffness = float(stiffness)
        self.targets = None
        self.enabled = True

    def points(self, x):
        return np.einsum("pk,pkc->pc", self.weights, x[self.nodes])

    def add_force(self, x, v, f):
        if not self.enabled or self.targets is None:
            return
        g = self.stiffness * (self.targets - self.points(x))
        np.add.at(f, self.nodes, self.weights[..., None] * g[:, None, :])

    def add_dforce(self, dx, df):
        if not self.enabled or self.targets is None:
            return
        s = self.points(dx)
        np.add.at(df, self.nodes, -self.stiffness * self.weights[..., None] * s[:, None, :])

    def add_kmatrix(self, K):
        if not self.enabled or self.targets is None:
            return
        eye = np.eye(3)
        for nodes, w in zip(self.nodes, self.weights):
            for a, wa in zip(nodes, w):
                for b, wb in zip(nodes, w):
                    K[3 * a:3 * a + 3, 3 * b:3 * b + 3] -= self.stiffness * wa * wb * eye

    def energy(self, x):
        if not self.enabled or self.targets is None:
            return 0.0
        return 0.5 * self.stiffness * float(((self.targets - self.points(x)) ** 2).sum())


@dataclass(frozen=True)
class AttachmentConfig:
    """``stiffness = inf`` pins the selected nodes instead of using springs."""

    node_indices: tuple
    stiffness: float = math.inf
    barycentric: bool = False

    def __post_init__(self):
        idx = tuple(int(i) for i in np.atleast_1d(self.node_indices))
        object.__setattr__(self, "node_indices", idx)
        if not idx:
            raise AttachmentError("node_indices must be non-empty")
        if not self.stiffness > 0:
            raise AttachmentError("attachment stiffness must be positive (use inf to pin)")

    @property
    def pinned(self):
        return math.isinf(self.stiffness)


class _Side:
    """One end of an attachment: embedded soft points, rigid-frame points or world points."""

    def __init__(self, body=None, nodes=None, weights=None, frames=None, local=None, world=None, bmap=None):
        self.body = body
        self.nodes = nodes
        self.weights = weights
        self.frames = frames
        self.local = local
        self.world = world
        self.bmap = bmap
        self.spring: Optional[EmbeddedSpring] = None

    @property
    def kind(self):
        return "world" if self.body is None else self.body.kind

    def refresh(self):
        if self.bmap is not None and self.bmap.stale:
            self.bmap = rebind(self.bmap)
            self.nodes = self.bmap.nodes
            if self.spring is not None:
                self.spring.nodes = self.nodes

    def positions(self):
        if self.kind == "world":
            return self.world
        if self.kind == "soft":
            self.refresh()
            return np.einsum("pk,pkc->pc", self.weights, self.body.state.x[self.nodes])
        return np.array([self.body.pose(f).apply(p) for f, p in zip(self.frames, self.local)])


class Attachment:
    """Couples points of ``side_a`` to points of ``side_b``.

    Finite stiffness: ``f_a = k (p_b - p_a - offset)`` and ``f_b = -f_a`` with
    the rest offset captured at creation (so the initial state is force-free).
    Soft sides receive the force through an implicit :class:`EmbeddedSpring`;
    rigid sides as a force at the attachment point.  Pin mode drives side a
    onto side b kinematically (one way: side b feels no reaction).
    """

    def __init__(self, name, cfg: AttachmentConfig, side_a: _Side, side_b: _Side, mode: str):
        self.name = name
        self.cfg = cfg
        self.a = side_a
        self.b = side_b
        self.mode = mode
        # world targets are where the points should be; body targets keep the initial gap
        self.offset = np.zeros_like(self.b.positions()) if self.b.kind == "world" \
            else self.b.positions() - self.a.positions()
        self.last_forces = np.zeros_like(self.offset)
        if not cfg.pinned:
            for side in (self.a, self.b):
                if side.kind == "soft":
                    side.spring = EmbeddedSpring(side.nodes, side.weights, cfg.stiffness)
                    side.body.couplings.append(side.spring)
        elif self.a.kind == "rigid":
            self.a.body.driven_frames.update(int(f) for f in self.a.frames)

    @property
    def stiffness(self):
        return self.cfg.stiffness

    def apply(self):
        """Refresh targets / driven positions for the coming step."""
        pa, pb = self.a.positions(), self.b.positions()
        if self.cfg.pinned:
            goal = pb - self.offset
            if self.a.kind == "soft":
                self.a.body.drive(self.a.nodes[:, 0], goal)
            elif self.a.kind == "rigid":
                for f, p, g in zip(self.a.frames, self.a.local, goal):
                    pose = self.a.body.pose(f)
                    self.a.body.set_pose(f, Pose(g - pose.rotation.apply(p), pose.rotation))
            self.last_forces = np.zeros_like(pa)
            return self.last_forces
        self.last_forces = self.cfg.stiffness * (pb - pa - self.offset)
        for side, target, sign, point in ((self.a, pb - self.offset, 1.0, pa),
                                          (self.b, pa + self.offset, -1.0, pb)):
            if side.kind == "soft":
                side.spring.targets = target
            elif side.kind == "rigid":
                for f, p, fi in zip(side.frames, point, self.last_forces):
                    side.body.apply_force(int(f), sign * fi, p)
        return self.last_forces

    def detach(self):
        for side in (self.a, self.b):
            if side.spring is not None:
                side.spring.enabled = False
        if self.cfg.pinned and self.a.kind == "rigid":
            self.a.body.driven_frames.difference_update(int(f) for f in self.a.frames)


def _select_side_a(body, cfg):
    idx = np.asarray(cfg.node_indices, dtype=np.int64)
    if body.kind == "soft":
        if idx.min() < 0 or idx.max() >= body.n_nodes:
            raise AttachmentError(f"node index out of range for body {body.name!r} ({body.n_nodes} nodes)")
        return _Side(body, nodes=idx[:, None], weights=np.ones((len(idx), 1)))
    if idx.min() < 0 or idx.max() >= body.n_frames:
        raise AttachmentError(f"frame index out of range for body {body.name!r} ({body.n_frames} frames)")
    return _Side(body, frames=idx, local=np.zeros((len(idx), 3)))


def create_attachment(body_a, target, cfg: AttachmentConfig, name: str = "attachment") -> Attachment:
    """Attach ``cfg.node_indices`` of ``body_a`` to ``target``.

    ``target`` is another body or world points (``(3,)`` or ``(P, 3)``).
    Direct mode couples each node to the nearest node of a soft target, or to
    the coincident point in frame 0 of a rigid target.  Barycentric mode
    clones the nodes as massless proxies embedded in the soft target's mesh.
    """
    if target is body_a:
        raise AttachmentError("a body cannot be attached to itself")
    side_a = _select_side_a(body_a, cfg)
    pa = side_a.positions()
    if cfg.barycentric:
        if getattr(target, "kind", None) != "soft":
            raise AttachmentError("barycentric attachment requires a soft target body with a tet mesh")
        bmap = bind_points(pa, target.mesh)
        side_b = _Side(target, nodes=bmap.nodes, weights=bmap.weights, bmap=bmap)
        mode = "barycentric"
    elif target is None or isinstance(target, (list, tuple, np.ndarray)):
        world = pa.copy() if target is None else np.broadcast_to(np.asarray(target, float), pa.shape).copy()
        side_b = _Side(world=world)
        mode = "world"
    elif target.kind == "soft":
        _, near = cKDTree(target.state.x).query(pa)
        side_b = _Side(target, nodes=np.asarray(near, dtype=np.int64)[:, None], weights=np.ones((len(pa), 1)))
        mode = "direct"
    else:
        pose = target.pose(0)
        side_b = _Side(target, frames=np.zeros(len(pa), dtype=np.int64), local=pose.inverse().apply(pa))
        mode = "direct"
    att = Attachment(name, cfg, side_a, side_b, mode)
    logger.debug("attachment %s: %s, %d points, k=%s", name, mode, len(pa), cfg.stiffness)
    return att


# -- mapping schemes ---------------------------------------------------------

class RigidMapping:
    """Visual vertices fixed in one frame of a rigid body."""

    scheme = "rigid"

    def __init__(self, body, local_points, frame: int = 0):
        self.body = body
        self.frame = frame
        self.local = np.asarray(local_points, dtype=float)

    def apply(self, snapshot):
        row = snapshot[self.frame]
        return Pose.from_quat(row[:3], row[3:7]).apply(self.local)


class IdentityMapping:
    """Visual vertices share the soft body's node indexing."""

    scheme = "identity"

    def __init__(self, body):
        self.body = body

    def apply(self, snapshot):
        return snapshot.copy()


class BarycentricMapping:
    scheme = "barycentric"

    def __init__(self, body, points):
        self.body = body
        self.map = bind_points(points, body.mesh)

    def apply(self, snapshot):
        return apply_map(self.map, snapshot)


class DynamicTopologyMapping:
    """Boundary surface of a tearable body, re-extracted after each topology change."""

    scheme = "dynamic-topology"

    def __init__(self, body):
        self.body = body
        self.version = body.mesh.topology_version
        self.surface = boundary_surface(body.mesh)

    @property
    def stale(self):
        return self.version != self.body.mesh.topology_version

    def apply(self, snapshot):
        if self.stale:
            raise StaleMapError("body topology changed; propagate_topology required")
        return snapshot.copy()


def select_mapping(body, surface: SurfaceMesh, frame: int = 0):
    """Pick the mapping scheme from the body type.

    Rigid body: rigid transform of the surface given in the frame's local
    coordinates.  Soft body with dynamic topology: boundary re-extraction.
    Soft body whose surface uses the volume's vertex array: identity.
    Any other soft surface: barycentric embedding.
    """
    if body.kind == "rigid":
        return RigidMapping(body, surface.vertices, frame)
    if getattr(body, "topology", None) is not None:
        return DynamicTopologyMapping(body)
    if len(surface.vertices) == body.mesh.n_vertices and np.array_equal(surface.vertices, body.mesh.vertices):
        return IdentityMapping(body)
    return BarycentricMapping(body, surface.vertices)
