"""The ten acceptance criteria, each at its stated tolerance.

Every test records a PASS or FAIL line that is printed in the pytest terminal
summary (see ``conftest.py``).  Run this file alone with
``pytest tests/test_acceptance.py -v``.
"""
import functools
import random
import time

import numpy as np
import pytest
from scipy.spatial.transform import Rotation

from conftest import ACCEPTANCE_RESULTS
from helpers import icosahedron
from softsim.attachment import apply_map, bind_points
from softsim.bench import BenchmarkSpec, run_benchmark
from softsim.dynamics import (CompositeForce, CorotationalFEM, GravityForce, SoftBodyState, SolverConfig,
                              SpringForceField, solve_cg, solve_cholesky, step_explicit_euler, step_implicit_euler)
from softsim.mesh import SurfaceMesh, TetMesh, asset_path, component_labels, load_surface_mesh, load_tet_mesh
from softsim.runtime import Scene, SchedulerConfig, compute_timestep, run_deterministic, run_realtime
from softsim.scene import build_scene, scene_path
from softsim.topology import rupture_step
from softsim.visual import build_subdivision, refresh_positions
from test_dynamics import central_gradient, rel_err, two_node_dense_oracle
from test_runtime import random_schedule, reference_dispatch, run_schedule
from test_topology import _alpha_for, _min_stress, bar, stretch


def criterion(number, title):
    """Record PASS or FAIL for one criterion; failures still fail the test."""

    def deco(fn):
        @functools.wraps(fn)
        def wrapper(*args, **kwargs):
            try:
                detail = fn(*args, **kwargs)
            except BaseException as exc:
                ACCEPTANCE_RESULTS[number] = (title, False, f"{type(exc).__name__}: {str(exc).splitlines()[0][:120]}"
                                              if str(exc) else type(exc).__name__)
                raise
            ACCEPTANCE_RESULTS[number] = (title, True, detail or "")

        return wrapper

    return deco


# ---------------------------------------------------------------- 1

@criterion(1, "slack clamp T <= dt <= T + t_s over 10000 real-clock steps with stalls")
def test_criterion_01_slack_clamp():
    assert compute_timestep(0.005, 0.0, 0.002) == 0.005
    assert compute_timestep(0.005, 0.001, 0.002) == 0.006
    assert compute_timestep(0.005, 0.010, 0.002) == 0.007

    T, ts = 0.001, 0.0005
    stalled = {k for k in range(10_000) if k % 250 == 17}
    cfg = SchedulerConfig(period=T, slack=ts, max_steps=10_000)
    t0 = time.perf_counter()
    stats = run_realtime(Scene(gravity=(0, 0, 0)), cfg, stall=lambda k: 0.003 if k in stalled else 0.0)
    elapsed = time.perf_counter() - t0
    dts = stats.dts
    assert len(dts) == 10_000
    assert ((dts >= T) & (dts <= T + ts)).all()
    assert stats.clamp_violations(cfg) == 0
    # a 3 ms stall is far beyond the slack: the following step is clamped exactly
    after = np.array(sorted(stalled)) + 1
    assert (dts[after] == T + ts).all()
    assert stats.overloaded_steps >= len(stalled)
    assert elapsed < 60.0
    return f"{len(stalled)} stalls, {stats.overloaded_steps} overloaded steps, {elapsed:.1f} s"


# ---------------------------------------------------------------- 2

@criterion(2, "implicit Euler vs dense solve (1e-10), explicit Euler recurrence bit-exact over 1000 steps")
def test_criterion_02_integrators():
    x = np.array([[0.0, 0.0, 0.0], [1.3, 0.2, -0.1]])
    v = np.array([[0.1, -0.2, 0.0], [0.0, 0.3, 0.1]])
    m = np.array([0.5, 0.8])
    g = np.array([0.0, -9.81, 0.0])
    k, L0, dt = 40.0, 1.0, 0.05
    model = CompositeForce([SpringForceField([[0, 1]], [L0], k), GravityForce(m, g)])
    for solver in ("cg", "cholesky"):
        cfg = SolverConfig(linear_solver=solver, cg_tolerance=1e-14, cg_max_iterations=100)
        for alpha, beta in ((0.0, 0.0), (0.3, 0.02)):
            s = step_implicit_euler(SoftBodyState(x, v, m), model, dt, cfg, alpha, beta)
            xo, vo = two_node_dense_oracle(x, v, m, k, L0, g, dt, alpha, beta)
            assert np.abs(s.x - xo).max() <= 1e-10
            assert np.abs(s.v - vo).max() <= 1e-10

    # explicit: x_{n+1} = x_n + dt v_n, v_{n+1} = v_n + dt f(x_n) / m
    spring = SpringForceField([[0, 1]], [L0], k)
    h = 1e-3
    s = SoftBodyState(x.copy(), v.copy(), m)
    xr, vr = x.copy(), v.copy()
    for _ in range(1000):
        f = np.zeros_like(xr)
        spring.add_force(xr, vr, f)
        f = f + m[:, None] * g
        d = xr[1] - xr[0]
        ln = np.linalg.norm(d)
        hand = k * (ln - L0) * d / ln
        assert np.allclose(f - m[:, None] * g, [hand, -hand], rtol=1e-12, atol=1e-12)
        s = step_explicit_euler(s, f, h)
        xr, vr = xr + h * vr, vr + h * (f / m[:, None])
        assert np.array_equal(s.x, xr) and np.array_equal(s.v, vr)
    return "both linear solvers, damped and undamped"


# ---------------------------------------------------------------- 3

@criterion(3, "CG and Cholesky agree to 1e-8 on 100 random SPD systems (n <= 300)")
def test_criterion_03_solver_equivalence():
    r = np.random.default_rng(2024)
    t0 = time.perf_counter()
    worst = 0.0
    for i in range(100):
        n = int(r.integers(2, 301))
        Q, _ = np.linalg.qr(r.standard_normal((n, n)))
        eig = np.logspace(0, r.uniform(0, 3), n)
        A = (Q * eig) @ Q.T
        A = 0.5 * (A + A.T)
        b = r.standard_normal(n)
        cg = solve_cg(lambda p: A @ p, b, SolverConfig(cg_tolerance=1e-13, cg_max_iterations=20 * n))
        ch = solve_cholesky(A, b)
        err = np.linalg.norm(cg.x - ch) / np.linalg.norm(ch)
        worst = max(worst, err)
        assert err <= 1e-8, (i, n, err)
    elapsed = time.perf_counter() - t0
    assert elapsed < 10.0
    return f"worst relative difference {worst:.1e}, {elapsed:.1f} s"


# ---------------------------------------------------------------- 4

def kuhn_grid(n, size=1.0):
    """Cube of n^3 cells, each split into the six Kuhn tetrahedra."""
    idx = lambda i, j, k: (i * (n + 1) + j) * (n + 1) + k  # noqa: E731
    g = np.linspace(0, size, n + 1)
    verts = np.array([[a, b, c] for a in g for b in g for c in g])
    paths = [(1, 2, 4), (1, 4, 2), (2, 1, 4), (2, 4, 1), (4, 1, 2), (4, 2, 1)]
    tets = []
    for i in range(n):
        for j in range(n):
            for k in range(n):
                corner = lambda bits: idx(i + (bits >> 2 & 1), j + (bits >> 1 & 1), k + (bits & 1))  # noqa: E731
                for p in paths:
                    acc, chain = 0, [corner(0)]
                    for bit in p:
                        acc |= bit
                        chain.append(corner(acc))
                    tets.append(chain)
    return TetMesh(verts, tets)


@criterion(4, "corotational forces equal FD energy gradients (rel < 1e-4), rigid rotation force-free at 1e-8")
def test_criterion_04_fem_validity(bunny756):
    E, nu = 1e4, 0.3
    worst = 0.0
    for seed in range(50):
        r = np.random.default_rng(seed)
        X = r.uniform(-1, 1, (4, 3))
        while abs(np.linalg.det(X[1:] - X[0])) < 0.05:
            X = r.uniform(-1, 1, (4, 3))
        mesh = TetMesh(X, [[0, 1, 2, 3]])
        fem = CorotationalFEM(mesh.vertices, mesh.tetrahedra, E, nu)
        x = mesh.vertices @ Rotation.random(random_state=seed).as_matrix().T + r.normal(0, 0.05, (4, 3))
        f = np.zeros_like(x)
        fem.add_force(x, None, f)
        err = rel_err(f, -central_gradient(fem.energy, x))
        worst = max(worst, err)
        assert err < 1e-4, (seed, err)
    for seed in range(10):
        r = np.random.default_rng(1000 + seed)
        base = kuhn_grid(2)
        mesh = TetMesh(base.vertices + r.uniform(-0.08, 0.08, base.vertices.shape), base.tetrahedra)
        fem = CorotationalFEM(mesh.vertices, mesh.tetrahedra, E, nu)
        x = mesh.vertices @ Rotation.random(random_state=seed).as_matrix().T + r.normal(0, 0.03, mesh.vertices.shape)
        f = np.zeros_like(x)
        fem.add_force(x, None, f)
        err = rel_err(f, -central_gradient(fem.energy, x))
        worst = max(worst, err)
        assert err < 1e-4, (seed, err)

    fem = CorotationalFEM(bunny756.vertices, bunny756.tetrahedra, E, nu)
    for seed in range(5):
        R = Rotation.random(random_state=seed).as_matrix()
        x = bunny756.vertices @ R.T + np.random.default_rng(seed).normal(0, 1, 3)
        f = np.zeros_like(x)
        fem.add_force(x, None, f)
        assert np.abs(f).max() <= 1e-8 * E * bunny756.rest_volumes.max()
    return f"worst gradient error {worst:.1e} over 50 single-tet and 10 x 48-tet cases"


# ---------------------------------------------------------------- 5

BENCH_MESHES = ("bunny_756", "bunny_1492", "bunny_3004")
FLATNESS = 0.05
SHORT_PERIOD = 0.0005
MIN_COMMON_PERIOD = 0.0051


def _step_cost(name):
    scene = build_scene(scene_path(name))
    stats = run_deterministic(scene, 40, sync_every=1)
    return float(np.median(stats.periods[5:]))


@criterion(5, "median rate flat within 5% across subdivision 0/1/2 per mesh; monotone drop with tet count at T = 0.5 ms")
def test_criterion_05_benchmark_trend():
    t0 = time.perf_counter()
    # the common period leaves headroom above the heaviest per-step cost, visual sync included
    cost = max(_step_cost(name) for name in BENCH_MESHES)
    period = max(MIN_COMMON_PERIOD, float(np.ceil(1.6 * cost / 5e-4) * 5e-4))
    rates = {}
    for name in BENCH_MESHES:
        for level in (0, 1, 2):
            res = run_benchmark(BenchmarkSpec(name, steps=300, period=period, slack=0.4 * period, subdivision=level))
            assert res.stats.clamp_violations == 0
            assert len(res.records) == 300
            rates[name, level] = res.stats.median_rate
    for name in BENCH_MESHES:
        r = np.array([rates[name, lvl] for lvl in (0, 1, 2)])
        dev = np.abs(r - np.median(r)).max() / np.median(r)
        assert dev <= FLATNESS, (name, r, dev)

    short = [run_benchmark(BenchmarkSpec(name, steps=200, period=SHORT_PERIOD, slack=SHORT_PERIOD,
                                         subdivision=0)).stats.median_rate for name in BENCH_MESHES]
    assert short[0] > short[1] > short[2], short
    elapsed = time.perf_counter() - t0
    assert elapsed < 300.0
    flat = ", ".join(f"{n}: " + "/".join(f"{rates[n, lvl]:.1f}" for lvl in (0, 1, 2)) for n in BENCH_MESHES)
    return (f"T = {1e3 * period:.1f} ms -> {flat} Hz; T = 0.5 ms -> "
            + " > ".join(f"{s:.0f}" for s in short) + f" Hz; {elapsed:.0f} s")


# ---------------------------------------------------------------- 6

@criterion(6, "Loop subdivision counts, refresh equals rebuild (1e-12), affine invariance")
def test_criterion_06_subdivision():
    ico = icosahedron()
    c = build_subdivision(ico, 1)
    assert len(c.triangles) == 80 and c.n_vertices == 42

    surf = load_surface_mesh(asset_path("bunny_surface.off"))
    cache = build_subdivision(surf, 2)
    r = np.random.default_rng(6)
    worst = 0.0
    for _ in range(20):
        x = surf.vertices + r.normal(0, 0.005, surf.vertices.shape)
        fresh = build_subdivision(SurfaceMesh(x, surf.triangles), 2).rest_positions
        diff = np.abs(refresh_positions(cache, x) - fresh).max()
        worst = max(worst, diff)
        assert diff <= 1e-12

    for level in (1, 2, 3):
        cl = build_subdivision(ico, level)
        for _ in range(20):
            A, b = r.standard_normal((3, 3)), r.standard_normal(3)
            lhs = refresh_positions(cl, ico.vertices @ A.T + b).copy()
            rhs = refresh_positions(cl, ico.vertices) @ A.T + b
            assert np.abs(lhs - rhs).max() <= 1e-10
    return f"worst refresh difference {worst:.1e}"


# ---------------------------------------------------------------- 7

def points_inside(mesh, n, rng):
    """Volume-uniform random points: pick tets by volume, then uniform barycentric weights."""
    tet = rng.choice(mesh.n_elements, n, p=mesh.rest_volumes / mesh.rest_volumes.sum())
    w = rng.dirichlet(np.ones(4), n)
    return np.einsum("pk,pkc->pc", w, mesh.vertices[mesh.tetrahedra[tet]])


@criterion(7, "barycentric map on 1000 points in bunny-756: unity 1e-12, affine 1e-10, exact reconstruction")
def test_criterion_07_barycentric(bunny756):
    r = np.random.default_rng(7)
    P = points_inside(bunny756, 1000, r)
    m = bind_points(P, bunny756)
    assert m.inside.all()
    assert np.abs(m.weights.sum(axis=1) - 1).max() <= 1e-12
    assert np.abs(apply_map(m, bunny756.vertices) - P).max() <= 1e-12
    base = apply_map(m, bunny756.vertices)
    for _ in range(20):
        A, b = r.standard_normal((3, 3)), r.standard_normal(3)
        assert np.abs(apply_map(m, bunny756.vertices @ A.T + b) - (base @ A.T + b)).max() <= 1e-10
    return "1000 of 1000 points inside"


# ---------------------------------------------------------------- 8

@criterion(8, "rupture brackets the threshold within 1%, conserves mass, tears the polyp off in the hysteroscopy scene")
def test_criterion_08_rupture():
    thr = 1000.0
    below, above = _alpha_for(0.99 * thr), _alpha_for(1.01 * thr)
    assert _min_stress(below) == pytest.approx(0.99 * thr, rel=1e-6)
    assert _min_stress(above) == pytest.approx(1.01 * thr, rel=1e-6)
    b = bar(thr)
    mass0 = b.state.masses.sum()
    b.state.x = stretch(below)
    assert rupture_step(b) == []
    b.state.x = stretch(above)
    assert len(rupture_step(b)) == 1
    assert component_labels(b.mesh.n_vertices, b.mesh.tetrahedra)[0] == 2
    assert abs(b.state.masses.sum() - mass0) <= 1e-12 * mass0

    scene = build_scene(scene_path("hysteroscopy"))
    polyp = scene.bodies["polyp"]
    pmass0 = polyp.state.masses.sum()
    assert component_labels(polyp.n_nodes, polyp.mesh.tetrahedra)[0] == 1
    run_deterministic(scene, 350)
    n, labels = component_labels(polyp.n_nodes, polyp.mesh.tetrahedra)
    base = next(a for a in scene.attachments if a.name == "polyp_base").a.nodes[:, 0]
    grasp = next(a for a in scene.attachments if a.name == "grasp").a.nodes[:, 0]
    head = set(labels[grasp].tolist())
    assert n >= 2
    assert len(head) == 1 and head.isdisjoint(labels[base].tolist())
    assert abs(polyp.state.masses.sum() - pmass0) <= 1e-12 * pmass0
    assert scene.bodies["uterus"].mesh.n_elements == 1702
    piece = int(np.sum(labels[polyp.mesh.tetrahedra[:, 0]] == labels[grasp[0]]))
    return f"{len(polyp.topology.log)} separation waves, head piece has {piece} of {polyp.mesh.n_elements} tets"


# ---------------------------------------------------------------- 9

@criterion(9, "dispatcher FIFO and exactly-once delivery match the sequential oracle on 1000 schedules")
def test_criterion_09_dispatcher():
    delivered = 0
    for seed in range(1000):
        ops = random_schedule(random.Random(seed), n=80)
        got = run_schedule(ops)
        assert got == reference_dispatch(ops), seed
        assert len(got) == len(set(got))
        delivered += len(got)
    return f"{delivered} deliveries checked"


# ---------------------------------------------------------------- 10

@criterion(10, "two deterministic runs of the benchmark scene give bit-identical checksums per step")
def test_criterion_10_determinism():
    runs = []
    for _ in range(2):
        scene = build_scene(scene_path("bunny_756"))
        _, sums = run_deterministic(scene, 200, checksums=True)
        runs.append(sums)
    assert len(runs[0]) == 200
    assert runs[0] == runs[1]
    assert len(set(runs[0])) == 200
    return "200 steps"
