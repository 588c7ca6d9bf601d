"""Explicit and implicit Euler steps for soft bodies."""
from __future__ import annotations

import numpy as np

from .forces import ForceField
from .solvers import CHOLESKY_MAX_DOF, solve_cg, solve_cholesky
from .state import IntegrationError, SoftBodyState, SolverConfig

__all__ = ["step_explicit_euler", "step_implicit_euler", "free_mask"]


def free_mask(n: int, fixed) -> np.ndarray:
    mask = np.ones((n, 3), dtype=bool)
    fixed = np.asarray(fixed, dtype=np.int64)
    if fixed.size:
        mask[fixed] = False
    return mask


def step_explicit_euler(state: SoftBodyState, forces, dt: float, rayleigh_mass: float = 0.0,
                        fixed=()) -> SoftBodyState:
    """One forward Euler step: ``x += dt*v_old`` then ``v += dt*f/m``.

    Only mass-proportional Rayleigh damping is applied.  Pinned nodes (and any
    extra ``fixed`` indices) keep their position and get zero velocity.
    """
    if not dt > 0:
        raise ValueError(f"dt must be positive, got {dt}")
    forces = np.asarray(forces, dtype=float)
    if not np.isfinite(forces).all():
        raise IntegrationError("non-finite force input")
    m = state.masses[:, None]
    f = forces - rayleigh_mass * m * state.v if rayleigh_mass else forces
    x = state.x + dt * state.v
    v = state.v + dt * (f / m)
    held = np.union1d(state.pinned, np.asarray(fixed, dtype=np.int64))
    if held.size:
        x[held] = state.x[held]
        v[held] = 0.0
    return SoftBodyState(x, v, state.masses, state.pinned)


def step_implicit_euler(state: SoftBodyState, force_model: ForceField, dt: float,
                        solver: SolverConfig = SolverConfig(), rayleigh_mass: float = 0.0,
                        rayleigh_stiffness: float = 0.0, fixed=(), stats=None) -> SoftBodyState:
    """One linearized backward Euler step.

    Solves ``(M - dt*D - dt^2*K) dv = dt*(f + dt*K*v)`` with Rayleigh damping
    ``D = -a*M + b*K`` (``K = df/dx``), then ``v += dv`` and ``x += dt*v``.
    Rows of pinned/fixed nodes are removed from the system.
    """
    if not dt > 0:
        raise ValueError(f"dt must be positive, got {dt}")
    n = state.n_nodes
    held = np.union1d(state.pinned, np.asarray(fixed, dtype=np.int64))
    mask = free_mask(n, held)
    m = np.repeat(state.masses, 3).reshape(n, 3)

    f = np.zeros((n, 3))
    force_model.add_force(state.x, state.v, f)
    if not np.isfinite(f).all():
        raise IntegrationError("non-finite force")
    v = np.where(mask, state.v, 0.0)
    Kv = np.zeros((n, 3))
    force_model.add_dforce(v, Kv)
    rhs = dt * (f - rayleigh_mass * m * v + (rayleigh_stiffness + dt) * Kv)
    rhs[~mask] = 0.0

    m_coef = 1.0 + dt * rayleigh_mass
    k_coef = dt * rayleigh_stiffness + dt * dt

    if solver.linear_solver == "cg":
        def apply_A(p):
            p = p.reshape(n, 3)
            out = np.zeros((n, 3))
            force_model.add_dforce(p, out)
            out = m_coef * m * p - k_coef * out
            out[~mask] = 0.0
            return out.reshape(-1)

        res = solve_cg(apply_A, rhs.reshape(-1), solver)
        dv = res.x.reshape(n, 3)
        if stats is not None:
            stats.update(iterations=res.iterations, residual=res.residual, converged=res.converged)
    else:
        if 3 * n > CHOLESKY_MAX_DOF:
            raise ValueError(f"Cholesky solver limited to {CHOLESKY_MAX_DOF} DOF, system has {3 * n}")
        K = np.zeros((3 * n, 3 * n))
        force_model.add_kmatrix(K)
        A = -k_coef * K
        A[np.diag_indices_from(A)] += m_coef * m.reshape(-1)
        free = mask.reshape(-1)
        dv = np.zeros(3 * n)
        if free.any():
            dv[free] = solve_cholesky(A[np.ix_(free, free)], rhs.reshape(-1)[free])
        dv = dv.reshape(n, 3)
        if stats is not None:
            stats.update(iterations=1, residual=0.0, converged=True)

    v_new = v + dv
    v_new[~mask] = 0.0
    if not np.isfinite(v_new).all():
        raise IntegrationError("non-finite velocity after solve")
    x_new = state.x + dt * v_new
    x_new[~mask[:, 0]] = state.x[~mask[:, 0]]
    return SoftBodyState(x_new, v_new, state.masses, state.pinned)
