"""6-DOF rigid frames: semi-implicit Euler integration."""
from __future__ import annotations

import numpy as np
from scipy.spatial.transform import Rotation

from .state import IntegrationError, RigidBodyState

__all__ = ["step_rigid"]


def step_rigid(state: RigidBodyState, forces, torques, dt: float, linear_damping: float = 0.0,
               angular_damping: float = 0.0, kinematic=()) -> RigidBodyState:
    """Advance twists from wrenches, then frames from the new twists.

    ``forces``/``torques`` are world-frame, applied at each frame origin.
    Frames listed in ``kinematic`` are left untouched (they are driven from
    outside, e.g. by an articulation).  Orientations are renormalized.
    """
    if not dt > 0:
        raise ValueError(f"dt must be positive, got {dt}")
    forces = np.asarray(forces, dtype=float).reshape(-1, 3)
    torques = np.asarray(torques, dtype=float).reshape(-1, 3)
    if not (np.isfinite(forces).all() and np.isfinite(torques).all()):
        raise IntegrationError("non-finite wrench input")
    out = state.copy()
    rot = Rotation.from_quat(state.orientations)
    Rm = rot.as_matrix()
    I_world = Rm @ state.inertia @ np.swapaxes(Rm, 1, 2)
    w = state.angular
    gyro = np.cross(w, np.einsum("fab,fb->fa", I_world, w))
    alpha = np.linalg.solve(I_world, (torques - gyro)[..., None])[..., 0]
    out.linear = state.linear + dt * (forces / state.masses[:, None] - linear_damping * state.linear)
    out.angular = w + dt * (alpha - angular_damping * w)
    out.translations = state.translations + dt * out.linear
    out.orientations = (Rotation.from_rotvec(dt * out.angular) * rot).as_quat()
    kin = np.asarray(kinematic, dtype=np.int64)
    if kin.size:
        out.translations[kin] = state.translations[kin]
        out.orientations[kin] = state.orientations[kin]
        out.linear[kin] = state.linear[kin]
        out.angular[kin] = state.angular[kin]
    out.normalize()
    return out
