"""Proximity collision detection and penalty contact response.

A collision model is a triangle surface bound to a body.  Soft bodies share
node indexing with the surface; rigid bodies carry the surface in the local
frame of one of their frames.
"""
from __future__ import annotations

import logging
from dataclasses import dataclass, field
from typing import FrozenSet, List, Tuple

import numpy as np

from .mesh import SurfaceMesh

logger = logging.getLogger(__name__)

__all__ = [
    "WILDCARD_GROUP",
    "CollisionParams",
    "CollisionModel",
    "CollisionBindingError",
    "Contact",
    "attach_collision_model",
    "broad_phase",
    "brute_force_pairs",
    "narrow_phase",
    "detect",
    "penalty_response",
    "closest_point_triangle",
    "closest_points_segments",
]

PRIMITIVES = frozenset({"point", "line", "triangle"})
# a model in this group is tested against every group
WILDCARD_GROUP = -1


class CollisionBindingError(ValueError):
    pass


@dataclass(frozen=True)
class CollisionParams:
    primitives: FrozenSet[str] = PRIMITIVES
    proximity: float = 0.0
    group: int = 0
    self_collision: bool = False
    cutting: bool = False

    def __post_init__(self):
        prims = frozenset(self.primitives)
        object.__setattr__(self, "primitives", prims)
        if not prims:
            raise ValueError("at least one collision primitive is required")
        if not prims <= PRIMITIVES:
            raise ValueError(f"unknown primitives {sorted(prims - PRIMITIVES)}")
        if self.proximity < 0:
            raise ValueError("proximity must be >= 0")


class CollisionModel:
    def __init__(self, model_id: int, body, surface: SurfaceMesh, params: CollisionParams, frame: int = 0):
        self.id = model_id
        self.body = body
        self.params = params
        self.frame = frame
        self.set_surface(surface)

    def set_surface(self, surface: SurfaceMesh):
        self.surface = surface
        self.triangles = surface.triangles
        self.edges = surface.edges()
        self.points = np.unique(self.triangles)

    def positions(self) -> np.ndarray:
        if self.body.kind == "soft":
            return self.body.state.x
        return self.body.pose(self.frame).apply(self.surface.vertices)

    def aabb(self, positions=None):
        x = self.positions() if positions is None else positions
        p = x[self.points]
        r = self.params.proximity
        return p.min(axis=0) - r, p.max(axis=0) + r


def attach_collision_model(body, surface: SurfaceMesh, params: CollisionParams = CollisionParams(),
                           frame: int = 0, model_id=None) -> CollisionModel:
    """Register a collision model on ``body``; repeated calls add more models."""
    if body.kind == "soft":
        if surface.triangles.size and surface.triangles.max() >= body.n_nodes:
            raise CollisionBindingError(
                f"surface references node {int(surface.triangles.max())} but body {body.name!r} "
                f"has {body.n_nodes} nodes")
    else:
        if not 0 <= frame < body.n_frames:
            raise CollisionBindingError(f"frame {frame} out of range for body {body.name!r}")
    if model_id is None:
        model_id = _next_id()
    model = CollisionModel(model_id, body, surface, params, frame)
    body.collision_models.append(model)
    return model


_ids = iter(range(1 << 62))


def _next_id():
    return next(_ids)


def _groups_match(a: CollisionParams, b: CollisionParams):
    return a.group == b.group or WILDCARD_GROUP in (a.group, b.group)


def _pair_allowed(ma: CollisionModel, mb: CollisionModel):
    if not _groups_match(ma.params, mb.params):
        return False
    if ma.body is mb.body:
        return ma.params.self_collision and mb.params.self_collision
    return True


def _boxes(models):
    return [m.aabb() for m in models]


def broad_phase(models: List[CollisionModel], boxes=None) -> List[Tuple[int, int]]:
    """Candidate pairs ``(i, j)``, ``i <= j``, as indices into ``models``.

    Sweep and prune on x, confirmed on all axes, then filtered by group and
    self-collision rules.  ``i == j`` appears only for self-colliding models.
    """
    if boxes is None:
        boxes = _boxes(models)
    lo = np.array([b[0] for b in boxes]).reshape(-1, 3)
    hi = np.array([b[1] for b in boxes]).reshape(-1, 3)
    order = np.argsort(lo[:, 0], kind="stable")
    pairs = []
    active = []
    for i in order:
        active = [j for j in active if hi[j, 0] >= lo[i, 0]]
        for j in active:
            if np.all(lo[i] <= hi[j]) and np.all(lo[j] <= hi[i]):
                a, b = (i, j) if i < j else (j, i)
                if _pair_allowed(models[a], models[b]):
                    pairs.append((int(a), int(b)))
        active.append(i)
    for i, m in enumerate(models):
        if m.params.self_collision and _pair_allowed(m, m):
            pairs.append((i, i))
    return sorted(pairs)


def brute_force_pairs(models, boxes=None):
    """O(n^2) reference for :func:`broad_phase`."""
    if boxes is None:
        boxes = _boxes(models)
    out = []
    for i in range(len(models)):
        for j in range(i, len(models)):
            if i == j:
                if models[i].params.self_collision and _pair_allowed(models[i], models[i]):
                    out.append((i, i))
                continue
            (la, ha), (lb, hb) = boxes[i], boxes[j]
            if np.all(la <= hb) and np.all(lb <= ha) and _pair_allowed(models[i], models[j]):
                out.append((i, j))
    return out


@dataclass
class Contact:
    """``normal`` points from side a to side b; ``distance = (p_b - p_a) . normal``.

    ``nodes_*``/``weights_*`` spread a force at ``p_*`` over the primitive's
    vertices (surface vertex ids).
    """

    model_a: int
    model_b: int
    prim_a: Tuple[str, int]
    prim_b: Tuple[str, int]
    p_a: np.ndarray
    p_b: np.ndarray
    normal: np.ndarray
    distance: float
    proximity: float
    nodes_a: np.ndarray = field(repr=False, default=None)
    weights_a: np.ndarray = field(repr=False, default=None)
    nodes_b: np.ndarray = field(repr=False, default=None)
    weights_b: np.ndarray = field(repr=False, default=None)

    @property
    def key(self):
        return (self.model_a, self.model_b, self.prim_a, self.prim_b)


def closest_point_triangle(p, a, b, c):
    """Closest points on triangles ``abc`` to points ``p`` (all ``(n, 3)``).

    Returns ``(q, w)`` with barycentric weights ``w`` so ``q = w0 a + w1 b + w2 c``.
    Uses the Voronoi-region classification from Ericson, Real-Time Collision Detection.
    """
    p, a, b, c = (np.atleast_2d(np.asarray(t, dtype=float)) for t in (p, a, b, c))
    n = np.broadcast_shapes(p.shape, a.shape)[0]
    ab, ac, ap = b - a, c - a, p - a
    d1 = np.einsum("ij,ij->i", ab, ap)
    d2 = np.einsum("ij,ij->i", ac, ap)
    bp = p - b
    d3 = np.einsum("ij,ij->i", ab, bp)
    d4 = np.einsum("ij,ij->i", ac, bp)
    cp = p - c
    d5 = np.einsum("ij,ij->i", ab, cp)
    d6 = np.einsum("ij,ij->i", ac, cp)
    va = d3 * d6 - d5 * d4
    vb = d5 * d2 - d1 * d6
    vc = d1 * d4 - d3 * d2

    w = np.zeros((n, 3))
    done = np.zeros(n, dtype=bool)

    def assign(mask, w0, w1, w2):
        m = mask & ~done
        w[m, 0], w[m, 1], w[m, 2] = w0[m], w1[m], w2[m]
        done[m] = True

    one, zero = np.ones(n), np.zeros(n)
    with np.errstate(divide="ignore", invalid="ignore"):
        assign((d1 <= 0) & (d2 <= 0), one, zero, zero)
        assign((d3 >= 0) & (d4 <= d3), zero, one, zero)
        t = d1 / (d1 - d3)
        assign((vc <= 0) & (d1 >= 0) & (d3 <= 0), 1 - t, t, zero)
        assign((d6 >= 0) & (d5 <= d6), zero, zero, one)
        t = d2 / (d2 - d6)
        assign((vb <= 0) & (d2 >= 0) & (d6 <= 0), 1 - t, zero, t)
        t = (d4 - d3) / ((d4 - d3) + (d5 - d6))
        assign((va <= 0) & ((d4 - d3) >= 0) & ((d5 - d6) >= 0), zero, 1 - t, t)
        denom = 1.0 / (va + vb + vc)
        v_, w_ = vb * denom, vc * denom
        assign(np.ones(n, dtype=bool), 1 - v_ - w_, v_, w_)
    q = w[:, :1] * a + w[:, 1:2] * b + w[:, 2:] * c
    return q, w


def closest_points_segments(p1, q1, p2, q2, eps=1e-300):
    """Closest points between segments ``p1q1`` and ``p2q2`` (vectorized).

    Returns ``(s, t, c1, c2)`` with ``c1 = p1 + s (q1 - p1)``.
    """
    p1, q1, p2, q2 = (np.atleast_2d(np.asarray(t, dtype=float)) for t in (p1, q1, p2, q2))
    d1, d2, r = q1 - p1, q2 - p2, p1 - p2
    a = np.einsum("ij,ij->i", d1, d1)
    e = np.einsum("ij,ij->i", d2, d2)
    f = np.einsum("ij,ij->i", d2, r)
    c = np.einsum("ij,ij->i", d1, r)
    b = np.einsum("ij,ij->i", d1, d2)
    denom = a * e - b * b
    with np.errstate(divide="ignore", invalid="ignore"):
        s = np.where(denom > eps * np.maximum(a * e, 1.0), np.clip((b * f - c * e) / denom, 0, 1), 0.0)
        t = np.where(e > eps, (b * s + f) / e, 0.0)
        s = np.where(t < 0, np.where(a > eps, np.clip(-c / a, 0, 1), 0.0), s)
        s = np.where(t > 1, np.where(a > eps, np.clip((b - c) / a, 0, 1), 0.0), s)
        t = np.clip(t, 0, 1)
    c1 = p1 + s[:, None] * d1
    c2 = p2 + t[:, None] * d2
    return s, t, c1, c2


def _box_filter(lo_a, hi_a, lo_b, hi_b):
    """Index pairs of overlapping boxes (dense broadcast)."""
    ok = np.all((lo_a[:, None] <= hi_b[None]) & (lo_b[None] <= hi_a[:, None]), axis=2)
    return np.nonzero(ok)


def _shared_node(body_a, body_b, nodes_a, nodes_b):
    """Mask of pairs whose primitives share a soft-body node (self-contact exclusion)."""
    if body_a is not body_b:
        return np.zeros(len(nodes_a), dtype=bool)
    return (nodes_a[:, :, None] == nodes_b[:, None, :]).any(axis=(1, 2))


def _point_triangle(mp, mt, xp, xt, dprox, pid):
    """Points of ``mp`` against triangles of ``mt``; contacts have a = triangle side."""
    pts = mp.points
    tris = mt.triangles
    if not len(pts) or not len(tris):
        return []
    P = xp[pts]
    T = xt[tris]
    pi, ti = _box_filter(P - dprox, P + dprox, T.min(axis=1), T.max(axis=1))
    if mp.body is mt.body:
        keep = ~_shared_node(mp.body, mt.body, pts[pi][:, None], tris[ti])
        pi, ti = pi[keep], ti[keep]
    if not len(pi):
        return []
    q, w = closest_point_triangle(P[pi], T[ti, 0], T[ti, 1], T[ti, 2])
    dist = np.linalg.norm(P[pi] - q, axis=1)
    hit = dist < dprox
    out = []
    tn = np.cross(T[:, 1] - T[:, 0], T[:, 2] - T[:, 0])
    tn /= np.linalg.norm(tn, axis=1, keepdims=True)
    for k in np.nonzero(hit)[0]:
        p_idx, t_idx = int(pts[pi[k]]), int(ti[k])
        n = tn[t_idx]
        out.append(Contact(mt.id, mp.id, ("triangle", t_idx), ("point", p_idx), q[k], P[pi[k]], n,
                           float((P[pi[k]] - q[k]) @ n), dprox,
                           tris[t_idx], w[k], np.array([p_idx]), np.ones(1)))
    return out


def _edge_edge(ma, mb, xa, xb, dprox):
    ea, eb = ma.edges, mb.edges
    if not len(ea) or not len(eb):
        return []
    A0, A1, B0, B1 = xa[ea[:, 0]], xa[ea[:, 1]], xb[eb[:, 0]], xb[eb[:, 1]]
    lo_a, hi_a = np.minimum(A0, A1) - dprox, np.maximum(A0, A1) + dprox
    lo_b, hi_b = np.minimum(B0, B1), np.maximum(B0, B1)
    i, j = _box_filter(lo_a, hi_a, lo_b, hi_b)
    if ma is mb:
        keep = i < j
        i, j = i[keep], j[keep]
    if ma.body is mb.body:
        keep = ~_shared_node(ma.body, mb.body, ea[i], eb[j])
        i, j = i[keep], j[keep]
    if not len(i):
        return []
    s, t, c1, c2 = closest_points_segments(A0[i], A1[i], B0[j], B1[j])
    d = c2 - c1
    dist = np.linalg.norm(d, axis=1)
    hit = (dist < dprox) & (dist > 0)
    out = []
    for k in np.nonzero(hit)[0]:
        n = d[k] / dist[k]
        out.append(Contact(ma.id, mb.id, ("line", int(i[k])), ("line", int(j[k])), c1[k], c2[k], n,
                           float(d[k] @ n), dprox, ea[i[k]], np.array([1 - s[k], s[k]]),
                           eb[j[k]], np.array([1 - t[k], t[k]])))
    return out


def narrow_phase(ma: CollisionModel, mb: CollisionModel, xa=None, xb=None) -> List[Contact]:
    """All primitive contacts closer than the summed proximities.

    Point-triangle is tested in both directions when the declared primitive
    sets allow it; line-line when both models declare lines.
    """
    dprox = ma.params.proximity + mb.params.proximity
    if dprox <= 0:
        return []
    xa = ma.positions() if xa is None else xa
    xb = mb.positions() if xb is None else xb
    contacts = []
    if "point" in ma.params.primitives and "triangle" in mb.params.primitives:
        contacts += _point_triangle(ma, mb, xa, xb, dprox, 0)
    if ma is not mb and "point" in mb.params.primitives and "triangle" in ma.params.primitives:
        contacts += _point_triangle(mb, ma, xb, xa, dprox, 1)
    if "line" in ma.params.primitives and "line" in mb.params.primitives:
        contacts += _edge_edge(ma, mb, xa, xb, dprox)
    contacts.sort(key=lambda c: c.key)
    return contacts


def detect(models: List[CollisionModel]):
    """Broad + narrow phase over ``models``; contacts sorted by pair ids."""
    positions = [m.positions() for m in models]
    boxes = [m.aabb(x) for m, x in zip(models, positions)]
    pairs = broad_phase(models, boxes)
    contacts = []
    for i, j in pairs:
        contacts += narrow_phase(models[i], models[j], positions[i], positions[j])
    contacts.sort(key=lambda c: c.key)
    return contacts


def penalty_response(contacts: List[Contact], contact_stiffness: float, models_by_id):
    """Penalty forces ``k (d_prox - d) n`` on side b and the opposite on side a.

    Returns ``{body_name: forces}`` where soft bodies get per-node ``(N, 3)``
    arrays and rigid bodies per-frame ``(F, 6)`` wrenches (force, torque
    about the frame origin).  Contacts touching a cutting model are skipped.
    """
    if not contact_stiffness > 0:
        raise ValueError("contact_stiffness must be positive")
    out = {}

    def target(body):
        if body.name not in out:
            shape = (body.n_nodes, 3) if body.kind == "soft" else (body.n_frames, 6)
            out[body.name] = np.zeros(shape)
        return out[body.name]

    for c in contacts:
        ma, mb = models_by_id[c.model_a], models_by_id[c.model_b]
        if ma.params.cutting or mb.params.cutting:
            continue
        mag = contact_stiffness * (c.proximity - c.distance)
        if mag <= 0:
            continue
        f = mag * c.normal
        for model, nodes, weights, point, sign in ((ma, c.nodes_a, c.weights_a, c.p_a, -1.0),
                                                   (mb, c.nodes_b, c.weights_b, c.p_b, 1.0)):
            arr = target(model.body)
            if model.body.kind == "soft":
                np.add.at(arr, nodes, sign * weights[:, None] * f)
            else:
                origin = model.body.state.translations[model.frame]
                arr[model.frame, :3] += sign * f
                arr[model.frame, 3:] += np.cross(point - origin, sign * f)
    return out
