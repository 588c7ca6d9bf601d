"""Stress-driven rupture of tetrahedral soft bodies.

A rupture wave cuts interior faces whose two elements both exceed the
tearing threshold, then duplicates every vertex whose element fan is no
longer connected across uncut faces.  Elements are never deleted, so rest
volumes, masses and the FEM element data stay valid.
"""
from __future__ import annotations

import logging
from dataclasses import dataclass, field
from typing import List, Optional, Tuple

import numpy as np
from scipy.sparse import coo_matrix
from scipy.sparse.csgraph import connected_components

from .dynamics.forces import CorotationalFEM
from .dynamics.state import MechanicalParams, SoftBodyState
from .mesh import TET_FACES, TetMesh, boundary_surface, face_pairs, signed_volumes

logger = logging.getLogger(__name__)

__all__ = [
    "TopologyConfigError",
    "Separation",
    "DynamicTopologyState",
    "element_stress",
    "faces_to_cut",
    "rupture_step",
    "propagate_topology",
]


class TopologyConfigError(ValueError):
    pass


@dataclass(frozen=True)
class Separation:
    step: int
    faces: Tuple[Tuple[int, int, int], ...]  # sorted vertex triples before duplication
    elements: Tuple[Tuple[int, int], ...]    # element pair per face
    duplicated: Tuple[Tuple[int, int], ...]  # (original vertex, new vertex)


@dataclass
class DynamicTopologyState:
    enabled: bool = True
    tearing_threshold: Optional[float] = None
    log: List[Separation] = field(default_factory=list)
    # (element, local face) pairs already cut; both sides are recorded
    cut: set = field(default_factory=set)
    cut_contacts: list = field(default_factory=list)

    def record(self, sep: Separation):
        if self.log and sep.step < self.log[-1].step:
            raise ValueError("separation log steps must be nondecreasing")
        self.log.append(sep)

    def report_contacts(self, step: int, contacts):
        """Cutting-model contacts are logged only; no topology change follows."""
        for c in contacts:
            self.cut_contacts.append((step, c.model_a, c.model_b, c.prim_a, c.prim_b))

    def export(self) -> str:
        """One line per separation: ``step;faces;elements;duplicated``."""
        lines = []
        for s in self.log:
            faces = " ".join("-".join(map(str, f)) for f in s.faces)
            elems = " ".join(f"{a}-{b}" for a, b in s.elements)
            dups = " ".join(f"{a}>{b}" for a, b in s.duplicated)
            lines.append(f"{s.step};{faces};{elems};{dups}")
        return "\n".join(lines) + ("\n" if lines else "")


def element_stress(mesh: TetMesh, state: SoftBodyState, params: MechanicalParams, elements=None) -> np.ndarray:
    """Largest principal stress of each element's corotated stress tensor (Pa, >= 0)."""
    fem = CorotationalFEM(mesh.vertices, mesh.tetrahedra, params.young_modulus, params.poisson_ratio)
    s = fem.principal_stress(state.x)
    return s if elements is None else s[np.asarray(elements)]


def _interior_faces(tets):
    """``(keys, elem_a, face_a, elem_b, face_b)`` for faces shared by two elements."""
    keys, inverse, counts = face_pairs(tets)
    order = np.argsort(inverse, kind="stable")
    grouped = inverse[order]
    starts = np.searchsorted(grouped, np.arange(len(keys)))
    shared = np.nonzero(counts == 2)[0]
    f1 = order[starts[shared]]
    f2 = order[starts[shared] + 1]
    return keys[shared], f1 // 4, f1 % 4, f2 // 4, f2 % 4


def faces_to_cut(tets, stress, threshold, already_cut=frozenset()):
    """Interior faces whose two elements both exceed ``threshold``, sorted by vertex key.

    Returns ``(keys, ea, fa, eb, fb)`` restricted to faces not in ``already_cut``.
    """
    keys, ea, fa, eb, fb = _interior_faces(tets)
    hit = (stress[ea] > threshold) & (stress[eb] > threshold)
    if already_cut:
        hit &= np.array([(int(a), int(f)) not in already_cut for a, f in zip(ea, fa)], dtype=bool)
    return keys[hit], ea[hit], fa[hit], eb[hit], fb[hit]


def _split_vertices(tets, n_vertices, cut, touched):
    """Duplicate vertices whose fan is disconnected across uncut faces.

    The fan component holding the lowest element index keeps the original id.
    Returns the new connectivity and the list of ``(original, new)`` ids.
    """
    tets = tets.copy()
    dup = []
    keys, ea, fa, eb, fb = _interior_faces(tets)
    # adjacency through uncut faces, per shared vertex
    links = {}
    for k, a, f_a, b in zip(keys, ea, fa, eb):
        if (int(a), int(f_a)) in cut:
            continue
        for v in k:
            links.setdefault(int(v), []).append((int(a), int(b)))
    next_id = n_vertices
    for v in sorted(touched):
        fan = np.nonzero((tets == v).any(axis=1))[0]
        if len(fan) < 2:
            continue
        local = {int(e): i for i, e in enumerate(fan)}
        pairs = np.array([(local[a], local[b]) for a, b in links.get(v, [])
                          if a in local and b in local], dtype=np.int64).reshape(-1, 2)
        g = coo_matrix((np.ones(len(pairs)), (pairs[:, 0], pairs[:, 1])), shape=(len(fan), len(fan)))
        n_comp, labels = connected_components(g, directed=False)
        if n_comp < 2:
            continue
        keep = labels[0]  # fan is sorted, so index 0 is the lowest element
        for c in range(n_comp):
            if c == keep:
                continue
            elems = fan[labels == c]
            rows = tets[elems]
            rows[rows == v] = next_id
            tets[elems] = rows
            dup.append((v, next_id))
            next_id += 1
    return tets, dup


def rupture_step(body, topo: Optional[DynamicTopologyState] = None, step: int = 0,
                 stress: Optional[np.ndarray] = None) -> List[Separation]:
    """Run one separation wave on ``body``; returns the separations performed.

    ``stress`` overrides the per-element stress (used by tests); by default
    it is evaluated at the body's current positions.
    """
    topo = topo if topo is not None else body.topology
    if topo is None or not topo.enabled:
        return []
    if body.params.model != "fem":
        raise TopologyConfigError("rupture requires the fem model")
    thr = topo.tearing_threshold
    if thr is None:
        return []
    mesh: TetMesh = body.mesh
    if stress is None:
        stress = body.internal.principal_stress(body.state.x)
    keys, ea, fa, eb, fb = faces_to_cut(mesh.tetrahedra, stress, thr, topo.cut)
    if not len(keys):
        return []
    for a, f_a, b, f_b in zip(ea, fa, eb, fb):
        topo.cut.add((int(a), int(f_a)))
        topo.cut.add((int(b), int(f_b)))
    # earlier cuts may become separable once their neighbours are cut too
    touched = {int(v) for e, f in topo.cut for v in mesh.tetrahedra[e, TET_FACES[f]]}
    new_tets, dup = _split_vertices(mesh.tetrahedra, mesh.n_vertices, topo.cut, touched)
    sep = Separation(step, tuple(tuple(int(i) for i in k) for k in keys),
                     tuple((int(a), int(b)) for a, b in zip(ea, eb)), tuple(dup))
    topo.record(sep)
    if dup:
        _apply_duplication(body, new_tets, dup)
    logger.info("body %s: cut %d faces, duplicated %d vertices", body.name, len(keys), len(dup))
    return [sep]


def _apply_duplication(body, new_tets, dup):
    mesh: TetMesh = body.mesh
    src = np.array([a for a, _ in dup], dtype=np.int64)
    mesh.vertices = np.concatenate([mesh.vertices, mesh.vertices[src]])
    mesh.tetrahedra = new_tets
    vol = signed_volumes(mesh.vertices, mesh.tetrahedra)
    if not np.allclose(vol, mesh.rest_volumes, rtol=1e-12, atol=0):
        raise AssertionError("rupture changed element rest volumes")
    mesh.topology_version += 1
    body.internal.set_topology(new_tets, mesh.n_vertices)
    body.resize(mesh.n_vertices, src)
    surface = boundary_surface(mesh)
    for model in body.collision_models:
        model.set_surface(surface)


def propagate_topology(body, visual) -> bool:
    """Bring a visual body mapped with the dynamic-topology scheme up to date.

    Returns True when the visual mesh changed.
    """
    mapping = getattr(visual, "mapping", None)
    if getattr(mapping, "scheme", None) != "dynamic-topology":
        raise TopologyConfigError(
            f"visual {getattr(visual, 'name', visual)!r} must use the dynamic-topology mapping to follow "
            "topology changes; set dynamic_topology on the body so the scheme is selected")
    if not mapping.stale:
        return False
    mapping.surface = boundary_surface(body.mesh)
    mapping.version = body.mesh.topology_version
    visual.set_base_mesh(mapping.surface)
    return True


# face k of a tet is opposite corner k; exported for tests that need it
LOCAL_FACES = TET_FACES
