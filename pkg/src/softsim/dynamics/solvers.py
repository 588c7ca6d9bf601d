"""Linear solvers for the implicit integrator."""
from __future__ import annotations

from typing import Callable, NamedTuple

import numpy as np
from scipy.linalg import lapack

from .state import NotPositiveDefiniteError, SolverConfig, SolverDivergedError

__all__ = ["CGResult", "solve_cg", "solve_cholesky", "CHOLESKY_MAX_DOF"]

CHOLESKY_MAX_DOF = 3000


class CGResult(NamedTuple):
    x: np.ndarray
    iterations: int
    residual: float  # ||A x - b|| / ||b||
    converged: bool


def solve_cg(apply_A: Callable[[np.ndarray], np.ndarray], b: np.ndarray, cfg: SolverConfig = SolverConfig(),
             x0=None) -> CGResult:
    """Conjugate gradient on an SPD operator given only as ``apply_A(p) -> A p``.

    Stops when the recursive residual ratio drops below ``cfg.cg_tolerance``.
    If the iteration budget runs out the iterate with the smallest residual
    is returned with ``converged=False``.
    """
    b = np.asarray(b, dtype=float)
    bnorm = np.linalg.norm(b)
    if not np.isfinite(bnorm):
        raise SolverDivergedError("non-finite right-hand side")
    if bnorm == 0.0:
        return CGResult(np.zeros_like(b), 0, 0.0, True)

    if x0 is None:
        x = np.zeros_like(b)
        r = b.copy()
    else:
        x = np.array(x0, dtype=float)
        r = b - apply_A(x)
    p = r.copy()
    rr = r @ r
    tol2 = (cfg.cg_tolerance * bnorm) ** 2
    best_x, best_rr = x.copy(), rr
    if rr <= tol2:
        return CGResult(x, 0, float(np.sqrt(rr) / bnorm), True)

    for it in range(1, cfg.cg_max_iterations + 1):
        q = apply_A(p)
        pq = p @ q
        if not np.isfinite(pq):
            raise SolverDivergedError(f"non-finite value at iteration {it}")
        if pq <= 0.0:
            # operator not positive definite along p: keep what we have
            break
        alpha = rr / pq
        x += alpha * p
        r -= alpha * q
        rr_new = r @ r
        if not np.isfinite(rr_new):
            raise SolverDivergedError(f"non-finite residual at iteration {it}")
        if rr_new < best_rr:
            best_x, best_rr = x.copy(), rr_new
        if rr_new <= tol2:
            return CGResult(x, it, float(np.sqrt(rr_new) / bnorm), True)
        p *= rr_new / rr
        p += r
        rr = rr_new
    return CGResult(best_x, it, float(np.sqrt(best_rr) / bnorm), False)


def solve_cholesky(A: np.ndarray, b: np.ndarray) -> np.ndarray:
    """Direct SPD solve through a Cholesky factorization.

    Raises NotPositiveDefiniteError carrying the (0-based) failing pivot.
    """
    A = np.asarray(A, dtype=float)
    b = np.asarray(b, dtype=float)
    if A.ndim != 2 or A.shape[0] != A.shape[1] or A.shape[0] != b.shape[0]:
        raise ValueError(f"shape mismatch: A {A.shape}, b {b.shape}")
    if not (np.isfinite(A).all() and np.isfinite(b).all()):
        raise SolverDivergedError("non-finite input to Cholesky solve")
    c, info = lapack.dpotrf(A, lower=True, clean=True, overwrite_a=False)
    if info > 0:
        raise NotPositiveDefiniteError(info - 1)
    if info < 0:
        raise ValueError(f"dpotrf: illegal argument {-info}")
    x, info = lapack.dpotrs(c, b, lower=True)
    if info != 0:
        raise ValueError(f"dpotrs: illegal argument {-info}")
    return x
