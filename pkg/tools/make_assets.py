"""Regenerate the shipped mesh assets under src/softsim/data.

Build-time only; needs ``pymeshlab`` (its wheel bundles the Stanford bunny
as test data).  The runtime package never imports this script.

Volume meshes are voxelized with a Kuhn 6-tetrahedra split per cube, so any
exact element count ``6*n + r`` is reached by searching the voxel size for
``n`` cubes and then splitting boundary edges whose incident-tet count adds
the remaining ``r`` elements without changing the geometry.

    python tools/make_assets.py
"""
import itertools
import os
import sys
from collections import defaultdict

import numpy as np

HERE = os.path.dirname(os.path.abspath(__file__))
sys.path.insert(0, os.path.join(HERE, "..", "src"))

from softsim.mesh import SurfaceMesh, TetMesh, boundary_surface, save_surface_mesh, save_tet_mesh  # noqa: E402

DATA = os.path.join(HERE, "..", "src", "softsim", "data")
BUNNY_SCALE = 0.25

# corner bit patterns along each axis permutation; all six share 000 and 111
KUHN = []
for perm in itertools.permutations(range(3)):
    c = [0, 0, 0]
    path = [tuple(c)]
    for ax in perm:
        c[ax] = 1
        path.append(tuple(c))
    KUHN.append(path)


def winding_number(points, verts, tris, chunk=256):
    """Generalized winding number of each point w.r.t. a closed triangle mesh."""
    a = verts[tris[:, 0]]
    b = verts[tris[:, 1]]
    c = verts[tris[:, 2]]
    out = np.empty(len(points))
    for s in range(0, len(points), chunk):
        p = points[s:s + chunk, None, :]
        ra, rb, rc = a[None] - p, b[None] - p, c[None] - p
        la = np.linalg.norm(ra, axis=-1)
        lb = np.linalg.norm(rb, axis=-1)
        lc = np.linalg.norm(rc, axis=-1)
        num = np.einsum("pfi,pfi->pf", ra, np.cross(rb, rc))
        den = (la * lb * lc + np.einsum("pfi,pfi->pf", ra, rb) * lc
               + np.einsum("pfi,pfi->pf", rb, rc) * la + np.einsum("pfi,pfi->pf", rc, ra) * lb)
        out[s:s + chunk] = 2.0 * np.arctan2(num, den).sum(axis=1) / (4.0 * np.pi)
    return out


def _fix_nonmanifold(cells, score):
    """Fill cells until no lattice edge or vertex is shared by only diagonal cubes."""
    cells = set(cells)
    changed = True
    while changed:
        changed = False
        # edge-diagonal pairs
        for ax in range(3):
            o1, o2 = [d for d in range(3) if d != ax]
            edges = set()
            for c in cells:
                for d1 in (0, 1):
                    for d2 in (0, 1):
                        e = list(c)
                        e[o1] += d1
                        e[o2] += d2
                        edges.add(tuple(e))
            for e in edges:
                around = []
                for d1 in (0, 1):
                    for d2 in (0, 1):
                        q = list(e)
                        q[o1] -= d1
                        q[o2] -= d2
                        around.append(tuple(q))
                filled = [q in cells for q in around]
                if sum(filled) == 2 and filled[0] == filled[3]:
                    empty = [q for q, f in zip(around, filled) if not f]
                    cells.add(max(empty, key=lambda q: score(q)))
                    changed = True
        # vertex-only contacts: the 8 cells around a lattice vertex must form
        # one face-connected group among the filled ones
        corners = set()
        for c in cells:
            for d in itertools.product((0, 1), repeat=3):
                corners.add((c[0] + d[0], c[1] + d[1], c[2] + d[2]))
        for v in corners:
            around = [(v[0] - d[0], v[1] - d[1], v[2] - d[2]) for d in itertools.product((0, 1), repeat=3)]
            filled = [q for q in around if q in cells]
            if len(filled) < 2:
                continue
            comps = _components(filled)
            if len(comps) > 1:
                empty = [q for q in around if q not in cells]
                cells.add(max(empty, key=lambda q: score(q)))
                changed = True
    return cells


def _components(cells):
    cells = set(cells)
    comps = []
    while cells:
        seed = cells.pop()
        stack, comp = [seed], {seed}
        while stack:
            c = stack.pop()
            for ax in range(3):
                for s in (-1, 1):
                    q = list(c)
                    q[ax] += s
                    q = tuple(q)
                    if q in cells:
                        cells.remove(q)
                        comp.add(q)
                        stack.append(q)
        comps.append(comp)
    return comps


def voxel_cells(inside, lo, hi, h, offset):
    ranges = [np.arange(lo[d] + offset[d] * h, hi[d] + h, h) for d in range(3)]
    grid = np.stack(np.meshgrid(*ranges, indexing="ij"), axis=-1).reshape(-1, 3)
    centers = grid + 0.5 * h
    val = inside(centers)
    shape = [len(r) for r in ranges]
    idx = np.stack(np.unravel_index(np.arange(len(grid)), shape), axis=-1)
    value = {tuple(i): v for i, v in zip(idx, val)}
    cells = {tuple(i) for i, v in zip(idx, val) if v > 0.5}
    origin = np.array([r[0] for r in ranges])
    return cells, value, origin


def clean_cells(cells, value):
    def score(q):
        return value.get(q, -1.0)

    cells = _fix_nonmanifold(cells, score)
    comps = _components(cells)
    return max(comps, key=len) if comps else set()


def kuhn_mesh(cells, origin, h):
    index = {}
    verts = []
    tets = []

    def vid(p):
        if p not in index:
            index[p] = len(verts)
            verts.append(p)
        return index[p]

    for c in sorted(cells):
        for path in KUHN:
            tets.append([vid((c[0] + b[0], c[1] + b[1], c[2] + b[2])) for b in path])
    verts = origin + h * np.asarray(verts, dtype=float)
    tets = np.asarray(tets)
    # orient positively
    d = verts[tets[:, 1:]] - verts[tets[:, :1]]
    neg = np.linalg.det(d) < 0
    tets[neg, 2], tets[neg, 3] = tets[neg, 3].copy(), tets[neg, 2].copy()
    return verts, tets


def split_boundary_edges(verts, tets, extra):
    """Add exactly ``extra`` elements by bisecting boundary edges."""
    verts = [np.asarray(v) for v in verts]
    tets = [list(t) for t in tets]
    while extra > 0:
        mesh = TetMesh(np.asarray(verts), np.asarray(tets))
        surf = boundary_surface(mesh)
        bedges = set()
        for tri in surf.triangles:
            for i in range(3):
                a, b = sorted((int(tri[i]), int(tri[(i + 1) % 3])))
                bedges.add((a, b))
        incident = defaultdict(list)
        for ti, t in enumerate(tets):
            for a, b in itertools.combinations(sorted(t), 2):
                if (a, b) in bedges:
                    incident[(a, b)].append(ti)
        choices = sorted((e for e, ts in incident.items() if len(ts) <= extra),
                         key=lambda e: (-len(incident[e]), e))
        if not choices:
            raise RuntimeError("no boundary edge fits the remainder")
        a, b = choices[0]
        m = len(verts)
        verts.append(0.5 * (verts[a] + verts[b]))
        for ti in incident[(a, b)]:
            t = tets[ti]
            t_a = [m if i == b else i for i in t]
            t_b = [m if i == a else i for i in t]
            tets[ti] = t_a
            tets.append(t_b)
        extra -= len(incident[(a, b)])
    return np.asarray(verts), np.asarray(tets)


def exact_tet_mesh(inside, lo, hi, target, h_range, offsets=(0.0, 0.25, 0.5)):
    want_cells, rem = divmod(target, 6)
    for h in np.linspace(*h_range, 400):
        for off in offsets:
            cells, value, origin = voxel_cells(inside, lo, hi, h, (off, off, off))
            if abs(len(cells) - want_cells) > max(6, 0.15 * want_cells):
                continue
            cells = clean_cells(cells, value)
            if len(cells) != want_cells:
                continue
            verts, tets = kuhn_mesh(cells, origin, h)
            if rem:
                verts, tets = split_boundary_edges(verts, tets, rem)
            mesh = TetMesh(verts, tets)
            surf = boundary_surface(mesh)
            if _edge_manifold(surf) and len(mesh.tetrahedra) == target:
                print(f"  target {target}: h={h:.5f} offset={off} verts={len(verts)}")
                return mesh
    raise RuntimeError(f"no voxelization hits {target} tets")


def _edge_manifold(surf):
    count = defaultdict(int)
    for tri in surf.triangles:
        for i in range(3):
            count[tuple(sorted((int(tri[i]), int(tri[(i + 1) % 3]))))] += 1
    return all(c == 2 for c in count.values())


def load_bunny():
    import pymeshlab

    path = os.path.join(os.path.dirname(pymeshlab.__file__), "tests", "sample_meshes", "bunny.obj")
    ms = pymeshlab.MeshSet()
    ms.load_new_mesh(path)
    v = ms.current_mesh().vertex_matrix()
    shift = -0.5 * (v.min(0) + v.max(0))
    shift[1] = -v[:, 1].min()
    ms.compute_matrix_from_translation(axisx=shift[0], axisy=shift[1], axisz=shift[2])
    ms.compute_matrix_from_scaling_or_normalization(axisx=BUNNY_SCALE, uniformflag=True)
    return ms


def decimated(ms, faces):
    import pymeshlab  # noqa: F401

    ms.generate_copy_of_current_mesh()
    ms.meshing_decimation_quadric_edge_collapse(targetfacenum=faces, preservetopology=True,
                                                preservenormal=True, qualitythr=0.5)
    m = ms.current_mesh()
    out = m.vertex_matrix().copy(), m.face_matrix().copy()
    ms.set_current_mesh(0)
    return out


def _sampled_winding(verts, tris, lo, hi, n):
    """Winding number tabulated on an ``n^3`` lattice, trilinearly interpolated."""
    from scipy.interpolate import RegularGridInterpolator

    pad = 0.05 * (hi - lo)
    axes = [np.linspace(lo[d] - pad[d], hi[d] + pad[d], n) for d in range(3)]
    grid = np.stack(np.meshgrid(*axes, indexing="ij"), axis=-1).reshape(-1, 3)
    w = winding_number(grid, verts, tris).reshape(n, n, n)
    return RegularGridInterpolator(axes, w, bounds_error=False, fill_value=0.0)


def make_bunny():
    ms = load_bunny()
    coarse_v, coarse_f = decimated(ms, 4000)
    vis_v, vis_f = decimated(ms, 1000)
    save_surface_mesh(os.path.join(DATA, "bunny_surface.off"), SurfaceMesh(vis_v, vis_f))
    print("bunny_surface.off", len(vis_v), len(vis_f))

    lo, hi = coarse_v.min(0), coarse_v.max(0)
    inside = _sampled_winding(coarse_v, coarse_f, lo, hi, n=72)

    vol = abs(np.einsum("fi,fi->f", coarse_v[coarse_f[:, 0]],
                        np.cross(coarse_v[coarse_f[:, 1]], coarse_v[coarse_f[:, 2]])).sum() / 6.0)
    for target in (756, 1492, 3004):
        path = os.path.join(DATA, f"bunny_{target}.tet")
        if os.path.exists(path):
            continue
        h0 = (vol / (target / 6.0)) ** (1.0 / 3.0)
        mesh = exact_tet_mesh(inside, lo, hi, target, (0.9 * h0, 1.15 * h0))
        save_tet_mesh(path, mesh)


def uterus_inside(p):
    x, y, z = p[:, 0], p[:, 1], p[:, 2]
    body = (x / 0.026) ** 2 + (y / 0.034) ** 2 + (z / 0.021) ** 2 <= 1.0
    cervix = (x ** 2 + z ** 2 <= 0.012 ** 2) & (y <= 0.0) & (y >= -0.05)
    cavity = (x / 0.016) ** 2 + (y / 0.022) ** 2 + (z / 0.010) ** 2 <= 1.0
    canal = (x ** 2 + z ** 2 <= 0.004 ** 2) & (y <= 0.0)
    return ((body | cervix) & ~cavity & ~canal).astype(float)


def make_uterus():
    lo = np.array([-0.03, -0.055, -0.025])
    hi = np.array([0.03, 0.04, 0.025])
    mesh = exact_tet_mesh(uterus_inside, lo, hi, 1702, (0.0045, 0.0065))
    save_tet_mesh(os.path.join(DATA, "uterus_1702.tet"), mesh)


def make_polyp():
    """Mushroom-shaped polyp: a one-cube stalk under a 3x3x2 head, base at z=0."""
    h = 0.002
    cells = {(0, 0, 0), (0, 0, 1)}
    cells |= {(i, j, k) for i in (-1, 0, 1) for j in (-1, 0, 1) for k in (2, 3)}
    verts, tets = kuhn_mesh(cells, np.array([-0.5 * h, -0.5 * h, 0.0]), h)
    mesh = TetMesh(verts, tets)
    save_tet_mesh(os.path.join(DATA, "polyp.tet"), mesh)
    print("polyp.tet", len(verts), len(tets))


if __name__ == "__main__":
    os.makedirs(DATA, exist_ok=True)
    if not os.path.exists(os.path.join(DATA, "polyp.tet")):
        make_polyp()
    if not os.path.exists(os.path.join(DATA, "uterus_1702.tet")):
        make_uterus()
    make_bunny()
