"""State, force models, integrators and linear solvers."""
from .bodies import RigidBody, SoftBody
from .forces import (
    CompositeForce,
    ConstantForce,
    CorotationalFEM,
    ForceField,
    GravityForce,
    SpringForceField,
    fem_forces,
    lumped_masses,
    spring_energy,
    spring_forces,
)
from .integrators import step_explicit_euler, step_implicit_euler
from .rigid import step_rigid
from .solvers import CGResult, solve_cg, solve_cholesky
from .state import (
    IntegrationError,
    MechanicalParams,
    NotPositiveDefiniteError,
    RigidBodyState,
    SoftBodyState,
    SolverConfig,
    SolverDivergedError,
)
