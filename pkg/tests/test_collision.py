import numpy as np
import pytest
from hypothesis import given, strategies as st

from helpers import cube, grid, icosahedron
from softsim.collision import (WILDCARD_GROUP, CollisionBindingError, CollisionParams, attach_collision_model,
                               broad_phase, brute_force_pairs, closest_point_triangle, closest_points_segments,
                               detect, narrow_phase, penalty_response)
from softsim.dynamics import MechanicalParams, RigidBody, RigidBodyState, SoftBody
from softsim.mesh import SurfaceMesh, TetMesh, boundary_surface
from softsim.runtime import Scene, SchedulerConfig, physics_tick
from softsim.transforms import Pose


def rigid(name, pos=(0, 0, 0), **kw):
    return RigidBody(name, RigidBodyState.single(pos), gravity=(0, 0, 0), **kw)


def closest_point_oracle(p, a, b, c):
    """Independent closest point: interior projection, else best of three segment projections."""
    n = np.cross(b - a, c - a)
    n = n / np.linalg.norm(n)
    q = p - ((p - a) @ n) * n
    # inside test with edge normals
    inside = all(np.cross(v1 - v0, q - v0) @ n >= 0 for v0, v1 in ((a, b), (b, c), (c, a)))
    if inside:
        return q
    best = None
    for v0, v1 in ((a, b), (b, c), (c, a)):
        t = np.clip((p - v0) @ (v1 - v0) / ((v1 - v0) @ (v1 - v0)), 0, 1)
        cand = v0 + t * (v1 - v0)
        if best is None or np.linalg.norm(p - cand) < np.linalg.norm(p - best):
            best = cand
    return best


# ---------------------------------------------------------------- params / binding

def test_params_validation():
    with pytest.raises(ValueError):
        CollisionParams(primitives=frozenset())
    with pytest.raises(ValueError):
        CollisionParams(proximity=-1)
    with pytest.raises(ValueError):
        CollisionParams(primitives={"sphere"})


def test_soft_boundary_model_tracks_nodes(two_tets):
    body = SoftBody("s", two_tets)
    m = attach_collision_model(body, boundary_surface(two_tets), CollisionParams(proximity=0.1))
    body.state.x[4] += 1.0
    np.testing.assert_array_equal(m.positions()[4], two_tets.vertices[4] + 1.0)


def test_second_model_with_cutting(two_tets):
    body = SoftBody("s", two_tets)
    attach_collision_model(body, boundary_surface(two_tets), CollisionParams(proximity=0.1))
    attach_collision_model(body, boundary_surface(two_tets), CollisionParams(cutting=True))
    assert len(body.collision_models) == 2
    assert body.collision_models[0].id != body.collision_models[1].id


def test_binding_error(two_tets):
    body = SoftBody("s", two_tets)
    with pytest.raises(CollisionBindingError):
        attach_collision_model(body, SurfaceMesh(np.zeros((10, 3)) + np.arange(10)[:, None] * [1, 0.3, 0.1],
                                                 [[0, 1, 9]]))
    with pytest.raises(CollisionBindingError):
        attach_collision_model(rigid("r"), cube(), frame=3)


# ---------------------------------------------------------------- broad phase

def test_far_cubes_no_pairs():
    a, b = rigid("a"), rigid("b", (10, 0, 0))
    ms = [attach_collision_model(a, cube(), CollisionParams(proximity=0.1)),
          attach_collision_model(b, cube(), CollisionParams(proximity=0.1))]
    assert broad_phase(ms) == []


def test_group_filter_and_wildcard():
    a, b, c = rigid("a"), rigid("b", (0.5, 0, 0)), rigid("c", (0.2, 0, 0))
    ms = [attach_collision_model(a, cube(), CollisionParams(proximity=0.1, group=1)),
          attach_collision_model(b, cube(), CollisionParams(proximity=0.1, group=2))]
    assert broad_phase(ms) == []
    ms.append(attach_collision_model(c, cube(), CollisionParams(proximity=0.1, group=WILDCARD_GROUP)))
    assert broad_phase(ms) == [(0, 2), (1, 2)]


def test_self_collision_pairs():
    a = rigid("a")
    m1 = attach_collision_model(a, cube(), CollisionParams(proximity=0.1))
    m2 = attach_collision_model(a, cube((0.3, 0, 0)), CollisionParams(proximity=0.1))
    assert broad_phase([m1, m2]) == []
    a2 = rigid("a2")
    n1 = attach_collision_model(a2, cube(), CollisionParams(proximity=0.1, self_collision=True))
    n2 = attach_collision_model(a2, cube((0.3, 0, 0)), CollisionParams(proximity=0.1, self_collision=True))
    assert broad_phase([n1, n2]) == [(0, 0), (0, 1), (1, 1)]


@given(st.integers(0, 100_000))
def test_broad_phase_matches_brute_force(seed):
    r = np.random.default_rng(seed)
    ms = []
    for i in range(50):
        body = rigid(f"b{i}", r.uniform(0, 10, 3))
        ms.append(attach_collision_model(body, cube(size=r.uniform(0.2, 2.0)),
                                         CollisionParams(proximity=r.uniform(0, 0.5), group=int(r.integers(0, 3)),
                                                         self_collision=bool(r.random() < 0.2))))
    assert broad_phase(ms) == brute_force_pairs(ms)


# ---------------------------------------------------------------- primitives

@given(st.integers(0, 100_000))
def test_closest_point_triangle_oracle(seed):
    r = np.random.default_rng(seed)
    a, b, c = r.standard_normal((3, 3))
    if np.linalg.norm(np.cross(b - a, c - a)) < 1e-2:
        return
    p = r.standard_normal((1, 3)) * 2
    q, w = closest_point_triangle(p, a[None], b[None], c[None])
    np.testing.assert_allclose(q[0], closest_point_oracle(p[0], a, b, c), atol=1e-12)
    np.testing.assert_allclose(w[0] @ np.array([a, b, c]), q[0], atol=1e-12)
    assert abs(w.sum() - 1) < 1e-12 and (w >= -1e-12).all()


@given(st.integers(0, 100_000))
def test_closest_points_segments_brute(seed):
    r = np.random.default_rng(seed)
    p1, q1, p2, q2 = r.standard_normal((4, 1, 3))
    s, t, c1, c2 = closest_points_segments(p1, q1, p2, q2)
    d = np.linalg.norm(c1 - c2)
    grid_ = np.linspace(0, 1, 201)
    A = p1[0] + grid_[:, None] * (q1[0] - p1[0])
    B = p2[0] + grid_[:, None] * (q2[0] - p2[0])
    brute = np.linalg.norm(A[:, None] - B[None], axis=2).min()
    assert d <= brute + 1e-12
    assert d >= brute - 0.02 * max(np.linalg.norm(q1 - p1), np.linalg.norm(q2 - p2))


# ---------------------------------------------------------------- narrow phase

def _point_and_triangle(h, prox=0.05):
    tri = rigid("tri")
    pt = rigid("pt", (0.2, 0.2, h))
    mt = attach_collision_model(tri, SurfaceMesh([[0, 0, 0], [1, 0, 0], [0, 1, 0]], [[0, 1, 2]]),
                                CollisionParams(primitives={"triangle"}, proximity=prox))
    single = SurfaceMesh([[0, 0, 0], [1e-3, 5, 5], [5, 1e-3, 5]], [[0, 1, 2]])
    mp = attach_collision_model(pt, single, CollisionParams(primitives={"point"}, proximity=prox))
    return mt, mp


def test_point_above_triangle():
    mt, mp = _point_and_triangle(0.07)
    cs = [c for c in narrow_phase(mt, mp) if c.p_b[2] == pytest.approx(0.07)]
    assert len(cs) == 1
    c = cs[0]
    np.testing.assert_allclose(c.normal, [0, 0, 1])
    assert c.distance == pytest.approx(0.07)
    assert abs(c.distance - (c.p_b - c.p_a) @ c.normal) < 1e-12


def test_point_beyond_proximity():
    mt, mp = _point_and_triangle(0.11)
    assert [c for c in narrow_phase(mt, mp) if c.prim_b == ("point", 0)] == []


def test_zero_proximity_reports_nothing():
    mt, mp = _point_and_triangle(0.0, prox=0.0)
    assert narrow_phase(mt, mp) == []


def _exhaustive(ma, mb):
    """All point-triangle (both directions) and edge-edge pairs under the summed proximity."""
    d = ma.params.proximity + mb.params.proximity
    xa, xb = ma.positions(), mb.positions()
    found = set()
    for (m1, x1, m2, x2, flip) in ((ma, xa, mb, xb, False), (mb, xb, ma, xa, True)):
        for p in np.unique(m1.triangles):
            for t, tri in enumerate(m2.triangles):
                q = closest_point_oracle(x1[p], *x2[tri])
                if np.linalg.norm(x1[p] - q) < d:
                    found.add((m2.id, m1.id, ("triangle", t), ("point", int(p))))
    for i, (a0, a1) in enumerate(ma.edges):
        for j, (b0, b1) in enumerate(mb.edges):
            _, _, c1, c2 = closest_points_segments(xa[[a0]], xa[[a1]], xb[[b0]], xb[[b1]])
            dd = np.linalg.norm(c1 - c2)
            if 0 < dd < d:
                found.add((ma.id, mb.id, ("line", i), ("line", j)))
    return found


@pytest.mark.parametrize("seed", range(5))
def test_narrow_phase_exhaustive_oracle(seed):
    r = np.random.default_rng(seed)
    a, b = rigid("a"), rigid("b")
    sa = icosahedron(0.5)
    sb = SurfaceMesh(sa.vertices + r.uniform(-0.3, 0.3, 3) + [0.9, 0, 0], sa.triangles)
    ma = attach_collision_model(a, sa, CollisionParams(proximity=0.1))
    mb = attach_collision_model(b, sb, CollisionParams(proximity=0.15))
    got = {(c.model_a, c.model_b, c.prim_a, c.prim_b) for c in narrow_phase(ma, mb)}
    assert got == _exhaustive(ma, mb)


def test_pipeline_never_misses(rng):
    for _ in range(200):
        bodies = [rigid(f"s{i}", rng.uniform(0, 2.5, 3)) for i in range(3)]
        ms = [attach_collision_model(b, cube(size=0.6), CollisionParams(proximity=rng.uniform(0, 0.2)))
              for b in bodies]
        pipeline = {c.key for c in detect(ms)}
        everything = set()
        for i in range(3):
            for j in range(i + 1, 3):
                everything |= {c.key for c in narrow_phase(ms[i], ms[j])}
        assert everything <= pipeline


def test_group_partition_no_cross_contacts(rng):
    ms = []
    for i in range(6):
        b = rigid(f"g{i}", rng.uniform(0, 1, 3))
        ms.append(attach_collision_model(b, cube(size=0.8), CollisionParams(proximity=0.1, group=i % 2)))
    by_id = {m.id: m for m in ms}
    for c in detect(ms):
        assert by_id[c.model_a].params.group == by_id[c.model_b].params.group


# ---------------------------------------------------------------- response

def test_penalty_zero_contacts():
    assert penalty_response([], 100.0, {}) == {}


def test_penalty_action_reaction(two_tets):
    soft = SoftBody("soft", TetMesh(two_tets.vertices + [0.3, 0.3, 0.05], two_tets.tetrahedra))
    floor = rigid("floor", (0, 0, 0))
    mf = attach_collision_model(floor, grid(2, 2.0), CollisionParams(primitives={"triangle"}, proximity=0.1))
    ms = attach_collision_model(soft, boundary_surface(soft.mesh), CollisionParams(primitives={"point"},
                                                                                     proximity=0.1))
    contacts = detect([mf, ms])
    assert contacts
    out = penalty_response(contacts, 100.0, {mf.id: mf, ms.id: ms})
    total = out["soft"].sum(axis=0) + out["floor"][:, :3].sum(axis=0)
    assert np.linalg.norm(total) <= 1e-9 * np.abs(out["soft"]).max()
    assert (out["soft"][:, 2] >= 0).all()
    # rigid torque equals the moment of the reaction about the frame origin
    ref = sum(np.cross(c.p_a, -100.0 * (c.proximity - c.distance) * c.normal) for c in contacts)
    np.testing.assert_allclose(out["floor"][0, 3:], ref, atol=1e-12)


def test_cutting_models_skip_response(two_tets):
    soft = SoftBody("soft", TetMesh(two_tets.vertices + [0.3, 0.3, 0.05], two_tets.tetrahedra))
    blade = rigid("blade")
    mb = attach_collision_model(blade, grid(2, 2.0), CollisionParams(primitives={"triangle"}, proximity=0.1,
                                                                     cutting=True))
    ms = attach_collision_model(soft, boundary_surface(soft.mesh), CollisionParams(proximity=0.1))
    contacts = detect([mb, ms])
    assert contacts and penalty_response(contacts, 100.0, {mb.id: mb, ms.id: ms}) == {}


def test_rigid_sphere_rests_on_floor():
    k, mass, g = 2000.0, 0.5, 9.81
    scene = Scene(gravity=(0, 0, -g), contact_stiffness=k, scheduler=SchedulerConfig(0.002))
    floor = scene.add_body(RigidBody("floor", RigidBodyState.single((-1, -1, 0)), kinematic=True))
    ball = scene.add_body(RigidBody("ball", RigidBodyState.single((0.3, 0.6, 0.12), mass=mass), gravity=(0, 0, -g),
                                    linear_damping=20.0, angular_damping=50.0))
    attach_collision_model(floor, grid(2, 2.0), CollisionParams(primitives={"triangle"}, proximity=0.05))
    ico = icosahedron(0.1)
    # put one vertex straight down
    v = ico.vertices - 0
    from scipy.spatial.transform import Rotation
    rot = Rotation.align_vectors([[0, 0, -1]], [v[2]])[0]
    attach_collision_model(ball, SurfaceMesh(rot.apply(v), ico.triangles), CollisionParams(primitives={"point"},
                                                                                          proximity=0.0))
    for _ in range(3000):
        physics_tick(scene, 0.002)
    lowest = ball.pose().apply(rot.apply(v))[:, 2].min()
    penetration = 0.05 - lowest
    assert penetration > 0
    assert penetration <= mass * g / k * 1.05
