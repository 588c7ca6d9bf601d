"""Headless visual side: transform tree, visual bodies and online Loop subdivision.

Subdivision topology is built once.  Every refined vertex is stored as a
fixed sparse stencil over the *base* vertices, so a frame update is one
sparse product whatever the level.
"""
from __future__ import annotations

import logging
import math
from dataclasses import dataclass
from typing import Optional

import numpy as np
import scipy.sparse as sp
from numba import njit
from scipy.spatial.transform import Rotation

from .mesh import SurfaceMesh
from .transforms import Pose

logger = logging.getLogger(__name__)

__all__ = [
    "MAX_LEVEL",
    "NonManifoldError",
    "TransformCycleError",
    "Transform",
    "Camera",
    "Light",
    "VisualBody",
    "SubdivisionCache",
    "loop_beta",
    "loop_level",
    "build_subdivision",
    "refresh_positions",
    "vertex_normals",
    "vertex_normals_fast",
]

MAX_LEVEL = 3


class NonManifoldError(ValueError):
    def __init__(self, edges):
        self.edges = [tuple(int(i) for i in e) for e in edges]
        super().__init__(f"non-manifold edges (more than 2 triangles): {self.edges[:10]}")


class TransformCycleError(ValueError):
    pass


class Transform:
    """Local pose plus an optional parent (another transform or a rigid-body frame)."""

    def __init__(self, name: str = "", translation=(0.0, 0.0, 0.0), orientation=(0.0, 0.0, 0.0, 1.0)):
        self.name = name
        self.local = Pose.from_quat(translation, _unit(orientation))
        self.parent: Optional[Transform] = None
        self.body = None
        self.frame = 0

    def set_parent(self, parent: Optional["Transform"]):
        node = parent
        while node is not None:
            if node is self:
                raise TransformCycleError(f"attaching {self.name!r} under {parent.name!r} creates a cycle")
            node = node.parent
        self.parent = parent
        self.body = None

    def map_to_body(self, body, frame: int = 0):
        """Follow a rigid-body frame instead of a parent transform."""
        self.parent = None
        self.body = body
        self.frame = frame

    def set_local(self, translation=None, orientation=None):
        t = self.local.translation if translation is None else translation
        r = self.local.rotation if orientation is None else Rotation.from_quat(_unit(orientation))
        self.local = Pose(t, r)

    def world(self, snapshot=None) -> Pose:
        """World pose; ``snapshot`` maps body names to rigid frame rows ``(t, q)``."""
        if self.body is not None:
            if snapshot is not None and self.body.name in snapshot:
                row = snapshot[self.body.name][self.frame]
                base = Pose.from_quat(row[:3], row[3:7])
            else:
                base = self.body.pose(self.frame)
            return base @ self.local
        if self.parent is not None:
            return self.parent.world(snapshot) @ self.local
        return self.local


def _unit(q):
    q = np.asarray(q, dtype=float)
    n = np.linalg.norm(q)
    if abs(n - 1.0) > 1e-9:
        raise ValueError(f"orientation must be a unit quaternion (norm {n})")
    return q / n


class Camera(Transform):
    """Posed camera; looks along its local +z axis."""

    def __init__(self, name="camera", fov_deg: float = 70.0, **kw):
        super().__init__(name, **kw)
        self.fov_deg = fov_deg

    def view_axis(self, snapshot=None):
        return self.world(snapshot).rotation.apply([0.0, 0.0, 1.0])


class Light(Transform):
    def __init__(self, name="light", intensity: float = 1.0, **kw):
        super().__init__(name, **kw)
        self.intensity = intensity


# -- Loop subdivision -------------------------------------------------------

def loop_beta(n: int) -> float:
    """Loop's interior even-vertex neighbour weight for valence ``n``."""
    return (5.0 / 8.0 - (3.0 / 8.0 + 0.25 * math.cos(2.0 * math.pi / n)) ** 2) / n


def _edge_table(tris):
    """Unique edges, per-triangle edge ids (sides ab, bc, ca) and incidence counts."""
    sides = np.stack([tris[:, [0, 1]], tris[:, [1, 2]], tris[:, [2, 0]]], axis=1)
    keys = np.sort(sides.reshape(-1, 2), axis=1)
    edges, inv, counts = np.unique(keys, axis=0, return_inverse=True, return_counts=True)
    return edges, inv.reshape(-1, 3), counts


def loop_level(n_vertices: int, tris: np.ndarray):
    """One Loop refinement step.

    Returns ``(S, children)`` where ``S`` is the ``(V + E) x V`` sparse
    stencil (even vertices first, then one odd vertex per edge) and
    ``children`` the refined triangles.
    """
    tris = np.asarray(tris, dtype=np.int64)
    edges, tri_edges, counts = _edge_table(tris)
    if (counts > 2).any():
        raise NonManifoldError(edges[counts > 2])
    V, E = n_vertices, len(edges)
    boundary = counts == 1

    # opposite vertex of each (triangle, side)
    opp = tris[:, [2, 0, 1]]
    first_opp = np.full(E, -1)
    second_opp = np.full(E, -1)
    for t in range(len(tris)):
        for s in range(3):
            e = tri_edges[t, s]
            if first_opp[e] < 0:
                first_opp[e] = opp[t, s]
            else:
                second_opp[e] = opp[t, s]

    rows, cols, vals = [], [], []
    # odd vertices
    eid = np.arange(E)
    b = boundary
    rows += [V + eid[b], V + eid[b]]
    cols += [edges[b, 0], edges[b, 1]]
    vals += [np.full(b.sum(), 0.5)] * 2
    i = ~b
    for c, w in ((edges[i, 0], 3 / 8), (edges[i, 1], 3 / 8), (first_opp[i], 1 / 8), (second_opp[i], 1 / 8)):
        rows.append(V + eid[i])
        cols.append(c)
        vals.append(np.full(i.sum(), w))

    # even vertices
    nbr = sp.coo_matrix((np.ones(2 * E), (np.r_[edges[:, 0], edges[:, 1]], np.r_[edges[:, 1], edges[:, 0]])),
                        shape=(V, V)).tocsr()
    bnbr = sp.coo_matrix((np.ones(2 * b.sum()), (np.r_[edges[b, 0], edges[b, 1]], np.r_[edges[b, 1], edges[b, 0]])),
                         shape=(V, V)).tocsr()
    valence = np.diff(nbr.indptr)
    bcount = np.diff(bnbr.indptr)
    for v in range(V):
        if bcount[v] == 0:
            n = valence[v]
            if n == 0:  # unreferenced vertex
                rows.append([v]), cols.append([v]), vals.append([1.0])
                continue
            beta = loop_beta(n)
            nb = nbr.indices[nbr.indptr[v]:nbr.indptr[v + 1]]
            rows.append(np.r_[v, np.full(n, v)])
            cols.append(np.r_[v, nb])
            vals.append(np.r_[1.0 - n * beta, np.full(n, beta)])
        elif bcount[v] == 2:
            nb = bnbr.indices[bnbr.indptr[v]:bnbr.indptr[v + 1]]
            rows.append([v, v, v])
            cols.append(np.r_[v, nb])
            vals.append([0.75, 0.125, 0.125])
        else:  # boundary corner where several boundary loops meet: keep fixed
            rows.append([v]), cols.append([v]), vals.append([1.0])
    S = sp.csr_matrix((np.concatenate(vals), (np.concatenate(rows), np.concatenate(cols))), shape=(V + E, V))

    a, bb, c = tris[:, 0], tris[:, 1], tris[:, 2]
    ab, bc, ca = (V + tri_edges[:, k] for k in range(3))
    children = np.concatenate([np.stack([a, ab, ca], 1), np.stack([ab, bb, bc], 1),
                               np.stack([ca, bc, c], 1), np.stack([ab, bc, ca], 1)])
    # keep the four children of a parent together
    children = children.reshape(4, -1, 3).transpose(1, 0, 2).reshape(-1, 3)
    return S, children


@njit(cache=True, nogil=True)
def _csr_matmul3(indptr, indices, data, x, out):
    for r in range(out.shape[0]):
        a0 = 0.0
        a1 = 0.0
        a2 = 0.0
        for k in range(indptr[r], indptr[r + 1]):
            j = indices[k]
            w = data[k]
            a0 += w * x[j, 0]
            a1 += w * x[j, 1]
            a2 += w * x[j, 2]
        out[r, 0] = a0
        out[r, 1] = a1
        out[r, 2] = a2


@dataclass
class SubdivisionCache:
    level: int
    n_base: int
    stencil: sp.csr_matrix
    triangles: np.ndarray
    rest_positions: np.ndarray
    out: np.ndarray
    incidence: sp.csr_matrix = None  # refined vertex x triangle, for normals
    refreshes: int = 0
    flops: int = 0

    @property
    def n_vertices(self):
        return self.stencil.shape[0]

    @property
    def flops_per_refresh(self):
        return 6 * self.stencil.nnz


def build_subdivision(mesh: SurfaceMesh, level: int) -> SubdivisionCache:
    """Refined connectivity plus the composed stencil over base vertices."""
    if not (isinstance(level, (int, np.integer)) and 0 <= level <= MAX_LEVEL):
        raise ValueError(f"subdivision level must be an integer in 0..{MAX_LEVEL}, got {level!r}")
    n = len(mesh.vertices)
    S = sp.identity(n, format="csr")
    tris = mesh.triangles
    for _ in range(level):
        S_l, tris = loop_level(S.shape[0], tris)
        S = (S_l @ S).tocsr()
    S.sum_duplicates()
    S.sort_indices()
    rest = S @ mesh.vertices
    nv = S.shape[0]
    inc = sp.csr_matrix((np.ones(tris.size), (tris.ravel(), np.repeat(np.arange(len(tris)), 3))),
                        shape=(nv, len(tris)))
    return SubdivisionCache(level, n, S, tris, rest, np.empty_like(rest), inc)


def refresh_positions(cache: SubdivisionCache, base_positions, out=None) -> np.ndarray:
    """``stencil @ base_positions`` into the cache buffer (or ``out``)."""
    x = np.ascontiguousarray(base_positions, dtype=float)
    if x.shape != (cache.n_base, 3):
        raise ValueError(f"expected {cache.n_base} base positions, got {x.shape[0]}")
    out = cache.out if out is None else out
    S = cache.stencil
    _csr_matmul3(S.indptr, S.indices, S.data, x, out)
    cache.refreshes += 1
    cache.flops += cache.flops_per_refresh
    return out


@njit(cache=True, nogil=True)
def _normals_kernel(x, tris, out):
    out[:] = 0.0
    for t in range(tris.shape[0]):
        i, j, k = tris[t, 0], tris[t, 1], tris[t, 2]
        ux, uy, uz = x[j, 0] - x[i, 0], x[j, 1] - x[i, 1], x[j, 2] - x[i, 2]
        vx, vy, vz = x[k, 0] - x[i, 0], x[k, 1] - x[i, 1], x[k, 2] - x[i, 2]
        nx, ny, nz = uy * vz - uz * vy, uz * vx - ux * vz, ux * vy - uy * vx
        for v in (i, j, k):
            out[v, 0] += nx
            out[v, 1] += ny
            out[v, 2] += nz
    for v in range(out.shape[0]):
        n = np.sqrt(out[v, 0] ** 2 + out[v, 1] ** 2 + out[v, 2] ** 2)
        if n > 0.0:
            out[v, 0] /= n
            out[v, 1] /= n
            out[v, 2] /= n


def vertex_normals_fast(positions, triangles, out=None) -> np.ndarray:
    """Compiled :func:`vertex_normals`, writing into ``out`` when given."""
    x = np.ascontiguousarray(positions, dtype=float)
    out = np.empty_like(x) if out is None else out
    _normals_kernel(x, np.ascontiguousarray(triangles, dtype=np.int64), out)
    return out


def vertex_normals(positions, triangles, incidence=None) -> np.ndarray:
    """Area-weighted vertex normals (sum of unnormalized face normals)."""
    p = positions[triangles]
    fn = np.cross(p[:, 1] - p[:, 0], p[:, 2] - p[:, 0])
    if incidence is None:
        n = np.zeros_like(positions)
        for k in range(3):
            np.add.at(n, triangles[:, k], fn)
    else:
        n = incidence @ fn
    norm = np.linalg.norm(n, axis=1, keepdims=True)
    return np.divide(n, norm, out=np.zeros_like(n), where=norm > 0)


class VisualBody(Transform):
    """Triangle mesh shown at a subdivision level, optionally driven by a mapping."""

    def __init__(self, name: str, mesh: SurfaceMesh, level: int = 0, mapping=None, **kw):
        super().__init__(name, **kw)
        self.mapping = mapping
        self.level = level
        self.set_base_mesh(mesh)

    def set_base_mesh(self, mesh: SurfaceMesh):
        self.base_mesh = mesh
        self.cache = build_subdivision(mesh, self.level)
        self.base_positions = mesh.vertices.copy()
        self.positions = self.cache.rest_positions.copy()
        self.cache.triangles = np.ascontiguousarray(self.cache.triangles, dtype=np.int64)
        self.normals = vertex_normals(self.positions, self.cache.triangles)
        self.synced_step = -1

    @property
    def triangles(self):
        return self.cache.triangles

    def update(self, base_positions, step: int = -1):
        self.base_positions = np.array(base_positions, dtype=float)
        self.positions = refresh_positions(self.cache, self.base_positions)
        self.normals = vertex_normals_fast(self.positions, self.cache.triangles)
        self.synced_step = step
        return self.positions

    def export(self) -> SurfaceMesh:
        """Refined geometry in world coordinates (posed by the transform when unmapped)."""
        pts = self.positions if self.mapping is not None else self.world().apply(self.positions)
        return SurfaceMesh(pts.copy(), self.cache.triangles.copy())
