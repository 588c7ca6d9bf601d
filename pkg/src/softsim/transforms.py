"""Rigid transforms (translation + rotation) shared by rigid bodies, joints and visuals."""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
from scipy.spatial.transform import Rotation

__all__ = ["Pose", "rotvec_between"]


def _identity():
    return Rotation.identity()


@dataclass(frozen=True)
class Pose:
    """``p -> rotation.apply(p) + translation``; composition with ``@``."""

    translation: np.ndarray = field(default_factory=lambda: np.zeros(3))
    rotation: Rotation = field(default_factory=_identity)

    def __post_init__(self):
        object.__setattr__(self, "translation", np.asarray(self.translation, dtype=float).reshape(3))

    @classmethod
    def from_quat(cls, translation, quat):
        """``quat`` is scalar-last ``(x, y, z, w)``."""
        return cls(translation, Rotation.from_quat(quat))

    @classmethod
    def from_matrix(cls, m):
        m = np.asarray(m, dtype=float)
        return cls(m[:3, 3], Rotation.from_matrix(m[:3, :3]))

    @property
    def quat(self):
        return self.rotation.as_quat()

    def __matmul__(self, other: "Pose") -> "Pose":
        return Pose(self.rotation.apply(other.translation) + self.translation, self.rotation * other.rotation)

    def inverse(self) -> "Pose":
        inv = self.rotation.inv()
        return Pose(-inv.apply(self.translation), inv)

    def apply(self, points):
        return self.rotation.apply(points) + self.translation

    def as_matrix(self):
        m = np.eye(4)
        m[:3, :3] = self.rotation.as_matrix()
        m[:3, 3] = self.translation
        return m


def rotvec_between(q_target, q_current):
    """Rotation vector of ``q_target * q_current^-1`` (scalar-last quaternions)."""
    return (Rotation.from_quat(q_target) * Rotation.from_quat(q_current).inv()).as_rotvec()
