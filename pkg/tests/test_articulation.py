import csv
import io
import math

import numpy as np
import pytest
from hypothesis import given, strategies as st
from scipy.spatial.transform import Rotation

from softsim.articulation import (Articulation, ArticulationError, Endoscope, JointConfiguration,
                                  endoscope_view_pose, forward_kinematics, make_articulated_instrument,
                                  metric_tracker)
from softsim.dynamics import RigidBody, RigidBodyState
from softsim.runtime import Event, Scene, physics_tick
from softsim.transforms import Pose


def frames(n, pos=(0, 0, 0)):
    return RigidBodyState(np.tile(pos, (n, 1)), np.tile([0, 0, 0, 1.0], (n, 1)), np.zeros((n, 3)),
                          np.zeros((n, 3)), np.ones(n), np.tile(np.eye(3), (n, 1, 1)))


def H(t=(0, 0, 0), R=np.eye(3)):
    m = np.eye(4)
    m[:3, :3] = R
    m[:3, 3] = t
    return m


def rot_matrix(axis, angle):
    """Rodrigues formula, written out."""
    k = np.asarray(axis, float) / np.linalg.norm(axis)
    K = np.array([[0, -k[2], k[1]], [k[2], 0, -k[0]], [-k[1], k[0], 0]])
    return np.eye(3) + math.sin(angle) * K + (1 - math.cos(angle)) * K @ K


def random_pose(r):
    return Pose(r.standard_normal(3), Rotation.from_rotvec(r.standard_normal(3)))


# ---------------------------------------------------------------- joints and FK

def test_joint_validation():
    with pytest.raises(ArticulationError):
        JointConfiguration("ball", 0, 1)
    with pytest.raises(ArticulationError):
        JointConfiguration("revolute", 0, 1, axis=(0, 0, 0))
    with pytest.raises(ArticulationError):
        JointConfiguration("revolute", 1, 1)
    j = JointConfiguration("prismatic", 0, 1, axis=(3, 4, 12))
    assert abs(np.linalg.norm(j.axis) - 1) <= 1e-12


def test_graph_errors():
    body = RigidBody("b", frames(3))
    with pytest.raises(ArticulationError, match="two parent"):
        Articulation(body, [JointConfiguration("revolute", 0, 1), JointConfiguration("revolute", 2, 1)])
    with pytest.raises(ArticulationError):
        Articulation(body, [JointConfiguration("revolute", 1, 2), JointConfiguration("revolute", 2, 1)])
    with pytest.raises(ArticulationError):
        Articulation(body, [JointConfiguration("revolute", 0, 5)])
    with pytest.raises(ArticulationError):
        Articulation(body, [JointConfiguration("revolute", 0, 1)], values=[0.0, 1.0])
    art = Articulation(body, [JointConfiguration("prismatic", 0, 1, limits=(0.0, 0.1))])
    with pytest.raises(ArticulationError):
        art.set_values([0.2])


def test_zero_values_compose_offsets(rng):
    po, co = random_pose(rng), random_pose(rng)
    body = RigidBody("b", frames(2))
    art = Articulation(body, [JointConfiguration("revolute", 0, 1, (0, 1, 0), po, co)])
    np.testing.assert_allclose(forward_kinematics(art, [0.0])[1].as_matrix(), (po @ co).as_matrix(), atol=1e-12)


def test_revolute_quarter_turn():
    body = RigidBody("b", frames(2))
    art = Articulation(body, [JointConfiguration("revolute", 0, 1, (0, 0, 1))])
    child = forward_kinematics(art, [math.pi / 2])[1]
    np.testing.assert_allclose(child.rotation.apply([1, 0, 0]), [0, 1, 0], atol=1e-15)


def _chain(r):
    types = ["revolute", "prismatic", "revolute"]
    joints = [JointConfiguration(types[i], i, i + 1, tuple(r.standard_normal(3)), random_pose(r), random_pose(r))
              for i in range(3)]
    body = RigidBody("b", frames(4, r.standard_normal(3)))
    return body, joints


@given(st.integers(0, 10**6))
def test_chain_matches_matrix_product(seed):
    r = np.random.default_rng(seed)
    body, joints = _chain(r)
    art = Articulation(body, joints)
    vals = r.uniform(-3, 3, 3)
    poses = forward_kinematics(art, vals)
    M = body.pose(0).as_matrix()
    for i, j in enumerate(joints):
        a = np.asarray(j.axis)
        motion = H(vals[i] * a) if j.joint_type == "prismatic" else H(R=rot_matrix(a, vals[i]))
        M = M @ j.parent_offset.as_matrix() @ motion @ j.child_offset.as_matrix()
        np.testing.assert_allclose(poses[i + 1].as_matrix(), M, atol=1e-10)
    again = forward_kinematics(art, vals)
    for f in poses:
        assert np.array_equal(poses[f].as_matrix(), again[f].as_matrix())


@given(st.integers(0, 10**6))
def test_length_preserving(seed):
    r = np.random.default_rng(seed)
    body, joints = _chain(r)
    joints = [JointConfiguration("revolute", j.parent_index, j.child_index, j.axis, j.parent_offset,
                                 j.child_offset) for j in joints]
    art = Articulation(body, joints)
    for _ in range(3):
        poses = forward_kinematics(art, r.uniform(-3, 3, 3))
        for j in joints:
            pivot = (poses[j.parent_index] @ j.parent_offset).translation
            d = np.linalg.norm(poses[j.child_index].translation - pivot)
            assert abs(d - np.linalg.norm(j.child_offset.translation)) <= 1e-12 * max(1, d)


def test_apply_writes_frames_and_follows_attachment_body(rng):
    holder = RigidBody("holder", RigidBodyState.single((1, 2, 3), Rotation.from_euler("y", 20, degrees=True).as_quat()))
    body = RigidBody("b", frames(2), gravity=(0, 0, 0))
    art = Articulation(body, [JointConfiguration("prismatic", 0, 1, (0, 0, 1))], attachment_body=holder,
                       values=[0.5])
    art.apply()
    np.testing.assert_allclose(body.pose(0).as_matrix(), holder.pose().as_matrix(), atol=1e-12)
    np.testing.assert_allclose(body.pose(1).translation, holder.pose().apply([0, 0, 0.5]), atol=1e-12)
    assert 1 in body.driven_frames


# ---------------------------------------------------------------- instrument

def test_instrument_jaw_count():
    with pytest.raises(ArticulationError):
        make_articulated_instrument({"jaws": 3})
    assert make_articulated_instrument({"name": "g", "jaws": 1}).body.n_frames == 2


def test_jaws_closed_and_symmetric():
    inst = make_articulated_instrument({"jaws": 2, "hinge_axis": (1, 0, 0)})
    for k in (1, 2):
        np.testing.assert_allclose(inst.body.pose(k).rotation.as_matrix(), inst.body.pose(0).rotation.as_matrix(),
                                   atol=1e-15)
    theta = 0.4
    inst.set_opening(theta)
    r1 = inst.body.pose(0).rotation.inv() * inst.body.pose(1).rotation
    r2 = inst.body.pose(0).rotation.inv() * inst.body.pose(2).rotation
    np.testing.assert_allclose(r1.as_rotvec(), [theta, 0, 0], atol=1e-12)
    np.testing.assert_allclose(r2.as_rotvec(), [-theta, 0, 0], atol=1e-12)


def test_jaw_tip_arc():
    pose = Pose(np.array([0.1, 0.2, 0.3]), Rotation.from_euler("xz", [10, 50], degrees=True))
    inst = make_articulated_instrument({"jaws": 1, "jaw_length": 0.02, "shaft_length": 0.3, "pose": pose})
    hinge = pose.apply([0, 0, 0.3])
    for th in np.linspace(-1, 1, 15):
        inst.set_opening(th)
        tip = inst.jaw_tips()[0]
        assert abs(np.linalg.norm(tip - hinge) - 0.02) <= 1e-12
        expected = pose.apply([0, -0.02 * math.sin(th), 0.3 + 0.02 * math.cos(th)])
        np.testing.assert_allclose(tip, expected, atol=1e-12)


# ---------------------------------------------------------------- endoscope

@pytest.mark.parametrize("roll", np.linspace(0, 2 * math.pi, 9))
def test_zero_inclination_view_equals_scope(roll):
    scope = Pose(np.zeros(3), Rotation.random(random_state=1))
    cam = endoscope_view_pose(scope, 0.0, roll)
    np.testing.assert_allclose(cam.rotation.apply([0, 0, 1]), scope.rotation.apply([0, 0, 1]), atol=1e-15)


def test_inclination_cone():
    scope = Pose(np.array([1.0, 0, 0]), Rotation.random(random_state=2))
    axis = scope.rotation.apply([0, 0, 1])
    rolls = np.linspace(0, 2 * math.pi, 37)[:-1]
    dirs = []
    for roll in rolls:
        v = endoscope_view_pose(scope, math.radians(30), roll, 0.2).rotation.apply([0, 0, 1])
        assert abs(math.acos(np.clip(v @ axis, -1, 1)) - math.radians(30)) <= 1e-12
        dirs.append(v - (v @ axis) * axis)
    dirs = np.array(dirs)
    # azimuths advance with the roll (right-handed about the scope axis)
    ref = dirs[0] / np.linalg.norm(dirs[0])
    perp = np.cross(axis, ref)
    az = np.unwrap(np.arctan2(dirs @ perp, dirs @ ref))
    np.testing.assert_allclose(az, rolls, atol=1e-12)


def test_endoscope_prefab():
    scope = Endoscope(pose=Pose(np.array([0, 0, 0.1]), Rotation.from_euler("x", 15, degrees=True)))
    axis = scope.body.pose().rotation.apply([0, 0, 1])
    assert math.degrees(math.acos(scope.view_axis() @ axis)) == pytest.approx(30, abs=1e-9)
    np.testing.assert_allclose(scope.light.world().as_matrix(), scope.camera.world().as_matrix())
    np.testing.assert_allclose(scope.camera.world().translation, scope.body.pose().apply([0, 0, 0.3]), atol=1e-12)
    scope.update_optics(inclination=0.0)
    np.testing.assert_allclose(scope.view_axis(), axis, atol=1e-12)


# ---------------------------------------------------------------- metric tracker

def _run(scene, n, history=None, body=None):
    for _ in range(n):
        physics_tick(scene, 0.01)
        if history is not None:
            history.append(body.state.translations[0].copy())
        scene.dispatcher.dispatch_pending()


def _rows(buf):
    return list(csv.DictReader(io.StringIO(buf.getvalue())))


def test_tracker_static_body():
    scene = Scene(gravity=(0, 0, 0))
    body = scene.add_body(RigidBody("still", RigidBodyState.single((1, 2, 3)), gravity=(0, 0, 0)))
    buf = io.StringIO()
    tr = metric_tracker(body, buf, scene.dispatcher)
    _run(scene, 100)
    tr.on_stop()
    rows = _rows(buf)
    assert len(rows) == 100 and tr.records == 100
    assert {(r["x"], r["y"], r["z"], r["qw"]) for r in rows} == {("1.0", "2.0", "3.0", "1.0")}
    assert list(rows[0]) == ["time", "x", "y", "z", "qx", "qy", "qz", "qw", "force"]


def test_tracker_falling_body_matches_state_history():
    scene = Scene(gravity=(0, 0, -9.81))
    body = scene.add_body(RigidBody("fall", RigidBodyState.single(), gravity=(0, 0, -9.81), linear_damping=0.0))
    buf = io.StringIO()
    metric_tracker(body, buf, scene.dispatcher)
    hist = []
    _run(scene, 50, hist, body)
    z = [float(r["z"]) for r in _rows(buf)]
    assert z == [h[2] for h in hist]
    assert [float(r["time"]) for r in _rows(buf)][:2] == [0.01, 0.02]


def test_tracker_instrument_path_length(tmp_path):
    scene = Scene(gravity=(0, 0, 0))
    inst = make_articulated_instrument({"jaws": 1})
    scene.add_body(inst.body)
    path = tmp_path / "jaw.csv"
    tr = metric_tracker(inst.body, str(path), scene.dispatcher, frame=1)
    logged = []
    for th in np.linspace(0, 1, 40):
        scene.scripts = [lambda s, t, th=th: inst.set_opening(th)]
        physics_tick(scene, 0.01)
        logged.append(inst.body.pose(1).translation.copy())
        scene.dispatcher.dispatch_pending()
    scene.dispatcher.post(Event("simulation-stop", scene.time))
    scene.dispatcher.dispatch_pending()
    with open(path) as fh:
        rows = list(csv.DictReader(fh))
    pts = np.array([[float(r[c]) for c in "xyz"] for r in rows])
    oracle = sum(np.linalg.norm(b - a) for a, b in zip(logged, logged[1:]))
    assert np.sum(np.linalg.norm(np.diff(pts, axis=0), axis=1)) == pytest.approx(oracle, rel=1e-12)
    assert tr._fh.closed


class FailingSink:
    def __init__(self, ok):
        self.ok = ok

    def write(self, s):
        if self.ok == 0:
            raise OSError("disk full")
        self.ok -= 1
        return len(s)

    def flush(self):
        pass


def test_tracker_sink_failure_posts_error():
    scene = Scene(gravity=(0, 0, 0))
    body = scene.add_body(RigidBody("r", RigidBodyState.single(), gravity=(0, 0, 0)))
    errors = []
    scene.dispatcher.attach("error", errors.append)
    tr = metric_tracker(body, FailingSink(3), scene.dispatcher)
    _run(scene, 10)
    scene.dispatcher.dispatch_pending()
    assert not tr.enabled and tr.records == 2
    assert len(errors) == 1 and errors[0].payload["source"] == "metric_tracker"


def test_tracker_soft_body_centroid(two_tets):
    from softsim.dynamics import SoftBody
    scene = Scene(gravity=(0, 0, 0))
    body = scene.add_body(SoftBody("s", two_tets, gravity=(0, 0, 0)))
    buf = io.StringIO()
    metric_tracker(body, buf, scene.dispatcher)
    _run(scene, 3)
    rows = _rows(buf)
    assert list(rows[0]) == ["time", "x", "y", "z", "force"]
    np.testing.assert_allclose([float(rows[-1][c]) for c in "xyz"], body.state.x.mean(axis=0), rtol=1e-15)


def test_tracker_file_survives_chunked_runs(tmp_path):
    from softsim.runtime import run_deterministic
    scene = Scene(gravity=(0, -9.81, 0))
    body = scene.add_body(RigidBody("box", RigidBodyState.single(np.zeros(3), mass=1.0), gravity=(0, -9.81, 0)))
    path = tmp_path / "box.csv"
    tr = metric_tracker(body, str(path), scene.dispatcher)
    for _ in range(3):
        run_deterministic(scene, 10, 0.01)
    assert tr.enabled and tr._fh.closed
    with open(path) as fh:
        rows = list(csv.DictReader(fh))
    assert len(rows) == 30 == tr.records
    np.testing.assert_allclose([float(r["time"]) for r in rows], 0.01 * np.arange(1, 31), rtol=1e-12)
