from __future__ import annotations

from dataclasses import dataclass, field, replace
from typing import Optional

import numpy as np

__all__ = [
    "SoftBodyState",
    "RigidBodyState",
    "MechanicalParams",
    "SolverConfig",
    "IntegrationError",
    "SolverDivergedError",
    "NotPositiveDefiniteError",
]


class IntegrationError(RuntimeError):
    """A time step could not be completed; the caller keeps the previous state."""


class SolverDivergedError(IntegrationError):
    pass


class NotPositiveDefiniteError(IntegrationError):
    def __init__(self, pivot: int):
        super().__init__(f"matrix is not positive definite (pivot {pivot})")
        self.pivot = pivot


@dataclass
class SoftBodyState:
    """Per-node positions (m), velocities (m/s) and lumped masses (kg)."""

    x: np.ndarray
    v: np.ndarray
    masses: np.ndarray
    pinned: np.ndarray = field(default_factory=lambda: np.zeros(0, dtype=np.int64))

    def __post_init__(self):
        self.x = np.asarray(self.x, dtype=float).reshape(-1, 3)
        self.v = np.asarray(self.v, dtype=float).reshape(-1, 3)
        self.masses = np.asarray(self.masses, dtype=float).reshape(-1)
        self.pinned = np.unique(np.asarray(self.pinned, dtype=np.int64).reshape(-1))
        n = len(self.x)
        if len(self.v) != n or len(self.masses) != n:
            raise ValueError(f"node count mismatch: x {n}, v {len(self.v)}, masses {len(self.masses)}")
        if n and not (self.masses > 0).all():
            raise ValueError("all node masses must be positive")
        if self.pinned.size and (self.pinned.min() < 0 or self.pinned.max() >= n):
            raise ValueError("pinned index out of range")

    @classmethod
    def at_rest(cls, x, masses, pinned=()):
        x = np.array(x, dtype=float)
        return cls(x, np.zeros_like(x), masses, np.asarray(pinned, dtype=np.int64))

    @property
    def n_nodes(self):
        return len(self.x)

    def copy(self) -> "SoftBodyState":
        return SoftBodyState(self.x.copy(), self.v.copy(), self.masses.copy(), self.pinned.copy())


@dataclass
class RigidBodyState:
    """6-DOF frames.  Quaternions are stored scalar-last ``(x, y, z, w)``."""

    translations: np.ndarray
    orientations: np.ndarray
    linear: np.ndarray
    angular: np.ndarray
    masses: np.ndarray
    inertia: np.ndarray

    def __post_init__(self):
        self.translations = np.asarray(self.translations, dtype=float).reshape(-1, 3)
        n = len(self.translations)
        self.orientations = np.asarray(self.orientations, dtype=float).reshape(-1, 4)
        self.linear = np.asarray(self.linear, dtype=float).reshape(-1, 3)
        self.angular = np.asarray(self.angular, dtype=float).reshape(-1, 3)
        self.masses = np.asarray(self.masses, dtype=float).reshape(-1)
        self.inertia = np.asarray(self.inertia, dtype=float).reshape(-1, 3, 3)
        for name in ("orientations", "linear", "angular", "masses", "inertia"):
            if len(getattr(self, name)) != n:
                raise ValueError(f"{name} count does not match frame count {n}")
        self.normalize()

    @classmethod
    def single(cls, translation=(0, 0, 0), orientation=(0, 0, 0, 1), mass=1.0, inertia=None):
        inertia = np.eye(3) * mass * 1e-3 if inertia is None else inertia
        return cls([translation], [orientation], [[0, 0, 0]], [[0, 0, 0]], [mass], [inertia])

    @property
    def n_frames(self):
        return len(self.translations)

    def normalize(self):
        self.orientations /= np.linalg.norm(self.orientations, axis=1, keepdims=True)

    def copy(self) -> "RigidBodyState":
        return RigidBodyState(self.translations.copy(), self.orientations.copy(), self.linear.copy(),
                              self.angular.copy(), self.masses.copy(), self.inertia.copy())


MODELS = ("fem", "mass-spring")


@dataclass(frozen=True)
class MechanicalParams:
    model: str = "fem"
    stiffness: float = 100.0  # N/m, mass-spring
    young_modulus: float = 5e4  # Pa, fem
    poisson_ratio: float = 0.3
    rayleigh_mass: float = 0.1  # 1/s
    rayleigh_stiffness: float = 0.01  # s
    tearing_threshold: Optional[float] = None  # Pa
    density: float = 1000.0  # kg/m^3, fem lumped mass
    total_mass: float = 1.0  # kg, mass-spring uniform mass

    def __post_init__(self):
        if self.model not in MODELS:
            raise ValueError(f"model must be one of {MODELS}, got {self.model!r}")
        if not 0.0 <= self.poisson_ratio < 0.5:
            raise ValueError(f"poisson_ratio must lie in [0, 0.5), got {self.poisson_ratio}")
        if self.young_modulus <= 0 or self.stiffness <= 0:
            raise ValueError("young_modulus and stiffness must be positive")
        if self.rayleigh_mass < 0 or self.rayleigh_stiffness < 0:
            raise ValueError("rayleigh coefficients must be non-negative")
        if self.density <= 0 or self.total_mass <= 0:
            raise ValueError("density and total_mass must be positive")
        if self.tearing_threshold is not None and self.tearing_threshold <= 0:
            raise ValueError("tearing_threshold must be positive")

    @property
    def lame(self):
        """(mu, lambda) from Young's modulus and Poisson ratio."""
        e, nu = self.young_modulus, self.poisson_ratio
        return e / (2 * (1 + nu)), e * nu / ((1 + nu) * (1 - 2 * nu))

    def with_(self, **kw) -> "MechanicalParams":
        return replace(self, **kw)


INTEGRATORS = ("explicit-euler", "implicit-euler")
LINEAR_SOLVERS = ("cg", "cholesky")


@dataclass(frozen=True)
class SolverConfig:
    integrator: str = "implicit-euler"
    linear_solver: str = "cg"
    cg_tolerance: float = 1e-5
    cg_max_iterations: int = 25

    def __post_init__(self):
        if self.integrator not in INTEGRATORS:
            raise ValueError(f"integrator must be one of {INTEGRATORS}, got {self.integrator!r}")
        if self.linear_solver not in LINEAR_SOLVERS:
            raise ValueError(f"linear_solver must be one of {LINEAR_SOLVERS}, got {self.linear_solver!r}")
        if not self.cg_tolerance > 0:
            raise ValueError("cg_tolerance must be positive")
        if self.cg_max_iterations < 1:
            raise ValueError("cg_max_iterations must be >= 1")
