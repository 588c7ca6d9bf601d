"""Triangle surface meshes and tetrahedral volume meshes.

Two plain-text formats are supported:

* surfaces: OFF (``OFF`` header, ``V F E`` counts, vertex lines, ``3 i j k``
  face lines).  Wavefront OBJ ``v``/``f`` lines are also read.
* volumes: ``.tet`` -- vertex count, one ``x y z`` line per vertex, element
  count, one ``i j k l`` line per tetrahedron.  ``#`` starts a comment.

Floats are written with ``repr`` so a save/load round trip is bit-exact.
"""
from __future__ import annotations

import os
from dataclasses import dataclass, field
from typing import Optional

import numpy as np
from scipy.sparse import coo_matrix
from scipy.sparse.csgraph import connected_components

__all__ = [
    "MeshError",
    "MeshFormatError",
    "DegenerateElementError",
    "SurfaceMesh",
    "TetMesh",
    "load_surface_mesh",
    "save_surface_mesh",
    "load_tet_mesh",
    "save_tet_mesh",
    "boundary_surface",
    "signed_volumes",
    "tet_edges",
    "component_labels",
    "asset_path",
]

DATA_DIR = os.path.join(os.path.dirname(os.path.abspath(__file__)), "data")

# faces of a positively oriented tet (a, b, c, d), each wound outward
TET_FACES = np.array([[1, 2, 3], [0, 3, 2], [0, 1, 3], [0, 2, 1]])


class MeshError(ValueError):
    """Invalid mesh topology or geometry."""


class MeshFormatError(MeshError):
    def __init__(self, path, line, msg):
        super().__init__(f"{path}:{line}: {msg}")
        self.path = path
        self.line = line


class DegenerateElementError(MeshError):
    def __init__(self, msg, indices):
        super().__init__(f"{msg}: {list(indices)}")
        self.indices = list(indices)


def asset_path(name: str) -> str:
    """Absolute path of a shipped asset (``bunny_756.tet``, ``scenes/...``)."""
    return os.path.join(DATA_DIR, name)


def signed_volumes(vertices: np.ndarray, tets: np.ndarray) -> np.ndarray:
    p = vertices[tets]
    d = p[:, 1:] - p[:, :1]
    return np.einsum("ei,ei->e", d[:, 0], np.cross(d[:, 1], d[:, 2])) / 6.0


def _check_indices(idx: np.ndarray, n: int, what: str):
    if idx.size and (idx.min() < 0 or idx.max() >= n):
        bad = np.unique(np.nonzero((idx < 0) | (idx >= n))[0])
        raise MeshError(f"{what} index out of range (vertex count {n}) in elements {bad.tolist()}")


@dataclass
class SurfaceMesh:
    vertices: np.ndarray
    triangles: np.ndarray
    normals: Optional[np.ndarray] = None

    def __post_init__(self):
        self.vertices = np.asarray(self.vertices, dtype=float).reshape(-1, 3)
        self.triangles = np.asarray(self.triangles, dtype=np.int64).reshape(-1, 3)
        _check_indices(self.triangles, len(self.vertices), "triangle")
        t = self.triangles
        deg = (t[:, 0] == t[:, 1]) | (t[:, 1] == t[:, 2]) | (t[:, 0] == t[:, 2])
        if deg.any():
            raise DegenerateElementError("degenerate triangles", np.nonzero(deg)[0])

    @property
    def counts(self):
        return len(self.vertices), len(self.triangles)

    def edges(self) -> np.ndarray:
        """Unique undirected edges, sorted."""
        e = np.concatenate([self.triangles[:, [0, 1]], self.triangles[:, [1, 2]], self.triangles[:, [2, 0]]])
        return np.unique(np.sort(e, axis=1), axis=0)

    def face_normals(self, positions=None) -> np.ndarray:
        x = self.vertices if positions is None else positions
        p = x[self.triangles]
        n = np.cross(p[:, 1] - p[:, 0], p[:, 2] - p[:, 0])
        return n / np.linalg.norm(n, axis=1, keepdims=True)


@dataclass
class TetMesh:
    vertices: np.ndarray
    tetrahedra: np.ndarray
    rest_volumes: np.ndarray = field(init=False)
    # bumped by the topology module whenever connectivity changes
    topology_version: int = field(default=0, compare=False)

    def __post_init__(self):
        self.vertices = np.asarray(self.vertices, dtype=float).reshape(-1, 3)
        self.tetrahedra = np.array(self.tetrahedra, dtype=np.int64).reshape(-1, 4)
        _check_indices(self.tetrahedra, len(self.vertices), "tetrahedron")
        vol = signed_volumes(self.vertices, self.tetrahedra)
        scale = max(np.ptp(self.vertices, axis=0).max() if len(self.vertices) else 1.0, 1e-300)
        zero = np.abs(vol) <= 1e-14 * scale ** 3
        if zero.any():
            raise DegenerateElementError("zero-volume tetrahedra", np.nonzero(zero)[0])
        neg = vol < 0
        if neg.any():
            t = self.tetrahedra
            t[neg, 2], t[neg, 3] = t[neg, 3].copy(), t[neg, 2].copy()
            vol = np.abs(vol)
        self.rest_volumes = vol

    @property
    def n_vertices(self):
        return len(self.vertices)

    @property
    def n_elements(self):
        return len(self.tetrahedra)


def _data_lines(path):
    with open(path) as fh:
        for lineno, raw in enumerate(fh, 1):
            line = raw.split("#", 1)[0].strip()
            if line:
                yield lineno, line.split()


def _floats(path, lineno, tok, n):
    if len(tok) < n:
        raise MeshFormatError(path, lineno, f"expected {n} coordinates, got {len(tok)}")
    try:
        return [float(t) for t in tok[:n]]
    except ValueError as exc:
        raise MeshFormatError(path, lineno, str(exc)) from None


def _ints(path, lineno, tok, n):
    if len(tok) != n:
        raise MeshFormatError(path, lineno, f"expected {n} indices, got {len(tok)}")
    try:
        return [int(t) for t in tok]
    except ValueError as exc:
        raise MeshFormatError(path, lineno, str(exc)) from None


def _next(path, it, what):
    try:
        return next(it)
    except StopIteration:
        raise MeshFormatError(path, "EOF", f"unexpected end of file, expected {what}") from None


def load_surface_mesh(path) -> SurfaceMesh:
    path = os.fspath(path)
    if not os.path.exists(path):
        raise FileNotFoundError(path)
    if path.lower().endswith(".obj"):
        return _load_obj(path)
    it = _data_lines(path)
    lineno, tok = _next(path, it, "OFF header")
    if tok[0] != "OFF":
        raise MeshFormatError(path, lineno, "missing OFF header")
    tok = tok[1:]
    if not tok:
        lineno, tok = _next(path, it, "counts")
    nv, nf = _ints(path, lineno, tok[:2], 2)
    verts = [_floats(path, *_next(path, it, "vertex"), 3) for _ in range(nv)]
    tris = []
    for _ in range(nf):
        lineno, tok = _next(path, it, "face")
        if tok[0] != "3":
            raise MeshFormatError(path, lineno, "only triangular faces are supported")
        tris.append(_ints(path, lineno, tok[1:4], 3))
    return SurfaceMesh(np.array(verts).reshape(-1, 3), np.array(tris, dtype=np.int64).reshape(-1, 3))


def _load_obj(path) -> SurfaceMesh:
    verts, tris = [], []
    for lineno, tok in _data_lines(path):
        if tok[0] == "v":
            verts.append(_floats(path, lineno, tok[1:], 3))
        elif tok[0] == "f":
            idx = [t.split("/")[0] for t in tok[1:]]
            if len(idx) != 3:
                raise MeshFormatError(path, lineno, "only triangular faces are supported")
            tris.append([i - 1 for i in _ints(path, lineno, idx, 3)])
    return SurfaceMesh(np.array(verts).reshape(-1, 3), np.array(tris, dtype=np.int64).reshape(-1, 3))


def save_surface_mesh(path, mesh: SurfaceMesh):
    with open(path, "w") as fh:
        fh.write(f"OFF\n{len(mesh.vertices)} {len(mesh.triangles)} 0\n")
        for v in mesh.vertices:
            fh.write(f"{float(v[0])!r} {float(v[1])!r} {float(v[2])!r}\n")
        for t in mesh.triangles:
            fh.write(f"3 {t[0]} {t[1]} {t[2]}\n")


def load_tet_mesh(path) -> TetMesh:
    path = os.fspath(path)
    if not os.path.exists(path):
        raise FileNotFoundError(path)
    it = _data_lines(path)
    lineno, tok = _next(path, it, "vertex count")
    (nv,) = _ints(path, lineno, tok, 1)
    verts = [_floats(path, *_next(path, it, "vertex"), 3) for _ in range(nv)]
    lineno, tok = _next(path, it, "tetrahedron count")
    (ne,) = _ints(path, lineno, tok, 1)
    tets = [_ints(path, *_next(path, it, "tetrahedron"), 4) for _ in range(ne)]
    return TetMesh(np.array(verts).reshape(-1, 3), np.array(tets, dtype=np.int64).reshape(-1, 4))


def save_tet_mesh(path, mesh: TetMesh):
    with open(path, "w") as fh:
        fh.write(f"{len(mesh.vertices)}\n")
        for v in mesh.vertices:
            fh.write(f"{float(v[0])!r} {float(v[1])!r} {float(v[2])!r}\n")
        fh.write(f"{len(mesh.tetrahedra)}\n")
        for t in mesh.tetrahedra:
            fh.write(f"{t[0]} {t[1]} {t[2]} {t[3]}\n")


def oriented_faces(tets: np.ndarray) -> np.ndarray:
    """All 4*E outward-wound faces, face ``4*e + k`` lies opposite corner ``k``."""
    return tets[:, TET_FACES].reshape(-1, 3)


def face_pairs(tets: np.ndarray):
    """Group the 4*E tet faces by vertex set.

    Returns ``(keys, inverse, counts)`` where ``keys`` are sorted vertex
    triples, ``inverse`` maps each oriented face to its key and ``counts``
    holds the multiplicity of each key.
    """
    faces = np.sort(oriented_faces(tets), axis=1)
    keys, inverse, counts = np.unique(faces, axis=0, return_inverse=True, return_counts=True)
    return keys, inverse.ravel(), counts


def boundary_surface(mesh: TetMesh) -> SurfaceMesh:
    """Faces owned by exactly one tetrahedron, wound outward.

    The returned surface reuses the volume vertex array and indexing.
    """
    faces = oriented_faces(mesh.tetrahedra)
    _, inverse, counts = face_pairs(mesh.tetrahedra)
    single = counts[inverse] == 1
    return SurfaceMesh(mesh.vertices, faces[single])


def tet_edges(tets: np.ndarray) -> np.ndarray:
    pairs = [(0, 1), (0, 2), (0, 3), (1, 2), (1, 3), (2, 3)]
    e = np.concatenate([tets[:, list(p)] for p in pairs])
    return np.unique(np.sort(e, axis=1), axis=0)


def component_labels(n_vertices: int, cells: np.ndarray):
    """Connected components of vertices linked through ``cells`` (tets or triangles).

    Vertices not referenced by any cell are ignored: their label is -1.
    Returns ``(n_components, labels)``.
    """
    cells = np.asarray(cells)
    k = cells.shape[1]
    rows = np.repeat(cells[:, 0], k - 1)
    cols = cells[:, 1:].ravel()
    g = coo_matrix((np.ones(len(rows)), (rows, cols)), shape=(n_vertices, n_vertices))
    _, labels = connected_components(g, directed=False)
    used = np.zeros(n_vertices, dtype=bool)
    used[cells.ravel()] = True
    labels = np.where(used, labels, -1)
    uniq = np.unique(labels[used])
    remap = {int(u): i for i, u in enumerate(uniq)}
    labels = np.array([remap.get(int(l), -1) for l in labels])
    return len(uniq), labels
