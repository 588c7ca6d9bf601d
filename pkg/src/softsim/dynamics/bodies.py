"""Simulated entities: soft (3-DOF nodes) and rigid (6-DOF frames) bodies."""
from __future__ import annotations

import logging
from typing import Optional

import numpy as np

from ..mesh import TetMesh, tet_edges
from ..transforms import Pose
from .forces import CompositeForce, ConstantForce, CorotationalFEM, GravityForce, SpringForceField, lumped_masses
from .integrators import step_explicit_euler, step_implicit_euler
from .rigid import step_rigid
from .state import IntegrationError, MechanicalParams, RigidBodyState, SoftBodyState, SolverConfig

logger = logging.getLogger(__name__)

__all__ = ["SoftBody", "RigidBody"]


class SoftBody:
    """Deformable body built on a tetrahedral mesh.

    ``mesh.vertices`` is the rest shape; ``state.x`` the current positions.
    Per-tick inputs (contact forces, coupling springs, driven nodes) are
    cleared by :meth:`begin_tick`.
    """

    kind = "soft"

    def __init__(self, name: str, mesh: TetMesh, params: MechanicalParams = MechanicalParams(),
                 solver: SolverConfig = SolverConfig(), pinned=(), gravity=(0.0, -9.81, 0.0),
                 dynamic_topology: bool = False):
        self.name = name
        self.mesh = mesh
        self.params = params
        self.solver = solver
        self.gravity = np.asarray(gravity, dtype=float)
        if params.model == "fem":
            masses = lumped_masses(mesh, params.density)
            self.internal = CorotationalFEM(mesh.vertices, mesh.tetrahedra, params.young_modulus,
                                            params.poisson_ratio)
        else:
            masses = np.full(mesh.n_vertices, params.total_mass / mesh.n_vertices)
            edges = tet_edges(mesh.tetrahedra)
            rest = np.linalg.norm(mesh.vertices[edges[:, 1]] - mesh.vertices[edges[:, 0]], axis=1)
            self.internal = SpringForceField(edges, rest, params.stiffness)
        self.state = SoftBodyState.at_rest(mesh.vertices, masses, pinned)
        self.collision_models = []
        self.topology = None
        if dynamic_topology:
            if params.model != "fem":
                raise ValueError(f"body {name!r}: dynamic topology requires the fem model")
            from ..topology import DynamicTopologyState

            self.topology = DynamicTopologyState(enabled=True, tearing_threshold=params.tearing_threshold)
        self.couplings = []  # force fields added by attachments, persistent
        self.last_stats = {}
        self.begin_tick()

    @property
    def n_nodes(self):
        return self.state.n_nodes

    def begin_tick(self):
        self.external = np.zeros((self.n_nodes, 3))
        self._driven_idx = np.zeros(0, dtype=np.int64)
        self._driven_pos = np.zeros((0, 3))

    def drive(self, idx, positions):
        """Kinematically place nodes for this step (infinite-stiffness attachments)."""
        self._driven_idx = np.concatenate([self._driven_idx, np.asarray(idx, dtype=np.int64)])
        self._driven_pos = np.concatenate([self._driven_pos, np.asarray(positions, dtype=float).reshape(-1, 3)])

    def force_model(self) -> CompositeForce:
        fields = [self.internal, GravityForce(self.state.masses, self.gravity)]
        if self.external.any():
            fields.append(ConstantForce(self.external))
        fields.extend(self.couplings)
        return CompositeForce(fields)

    def total_force(self) -> np.ndarray:
        f = np.zeros((self.n_nodes, 3))
        self.force_model().add_force(self.state.x, self.state.v, f)
        return f

    def step(self, dt: float):
        """Integrate one step; on failure the previous state is kept and the error re-raised."""
        prev = self.state
        stats = {}
        model = self.force_model()
        driven = self._driven_idx
        try:
            if self.solver.integrator == "explicit-euler":
                f = np.zeros((self.n_nodes, 3))
                model.add_force(prev.x, prev.v, f)
                new = step_explicit_euler(prev, f, dt, self.params.rayleigh_mass, fixed=driven)
                stats.update(iterations=0, residual=0.0, converged=True)
            else:
                new = step_implicit_euler(prev, model, dt, self.solver, self.params.rayleigh_mass,
                                          self.params.rayleigh_stiffness, fixed=driven, stats=stats)
        except IntegrationError:
            self.state = prev
            raise
        if driven.size:
            new.v[driven] = (self._driven_pos - prev.x[driven]) / dt
            new.x[driven] = self._driven_pos
        self.state = new
        self.last_stats = stats
        return stats

    def snapshot(self):
        return self.state.x.copy()

    def resize(self, n_new: int, source_of_new):
        """Append duplicated nodes copying state from ``source_of_new``; masses from elements."""
        st = self.state
        src = np.asarray(source_of_new, dtype=np.int64)
        x = np.concatenate([st.x, st.x[src]])
        v = np.concatenate([st.v, st.v[src]])
        dup_pinned = np.nonzero(np.isin(src, st.pinned))[0] + st.n_nodes
        masses = lumped_masses(self.mesh, self.params.density)
        self.state = SoftBodyState(x, v, masses, np.concatenate([st.pinned, dup_pinned]))
        self.external = np.concatenate([self.external, np.zeros((len(src), 3))])


class RigidBody:
    """One or more 6-DOF frames.  Frame 0 carries collision surfaces by default."""

    kind = "rigid"

    def __init__(self, name: str, state: Optional[RigidBodyState] = None, gravity=(0.0, -9.81, 0.0),
                 linear_damping: float = 1.0, angular_damping: float = 1.0, kinematic: bool = False):
        self.name = name
        self.state = state if state is not None else RigidBodyState.single()
        self.gravity = np.asarray(gravity, dtype=float)
        self.linear_damping = linear_damping
        self.angular_damping = angular_damping
        self.kinematic = kinematic
        self.driven_frames = set()
        self.collision_models = []
        self.last_stats = {}
        self.begin_tick()

    @property
    def n_frames(self):
        return self.state.n_frames

    def begin_tick(self):
        self.forces = np.zeros((self.n_frames, 3))
        self.torques = np.zeros((self.n_frames, 3))

    def pose(self, frame: int = 0) -> Pose:
        return Pose.from_quat(self.state.translations[frame], self.state.orientations[frame])

    def set_pose(self, frame: int, pose: Pose):
        self.state.translations[frame] = pose.translation
        self.state.orientations[frame] = pose.quat

    def apply_force(self, frame: int, force, point=None):
        """World-frame force, optionally at a world point (adds the induced torque)."""
        force = np.asarray(force, dtype=float)
        self.forces[frame] += force
        if point is not None:
            self.torques[frame] += np.cross(np.asarray(point) - self.state.translations[frame], force)

    def apply_torque(self, frame: int, torque):
        self.torques[frame] += np.asarray(torque, dtype=float)

    def net_force(self):
        return self.forces + self.state.masses[:, None] * self.gravity

    def step(self, dt: float):
        if self.kinematic:
            self.last_stats = {"iterations": 0}
            return self.last_stats
        kin = sorted(self.driven_frames)
        self.state = step_rigid(self.state, self.net_force(), self.torques, dt, self.linear_damping,
                                self.angular_damping, kinematic=kin)
        self.last_stats = {"iterations": 0}
        return self.last_stats

    def snapshot(self):
        return np.concatenate([self.state.translations, self.state.orientations], axis=1)
