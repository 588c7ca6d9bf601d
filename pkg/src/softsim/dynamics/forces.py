"""Force models.

Every force field follows the same small protocol used by the integrators:

``add_force(x, v, f)``
    accumulate forces at the given state and remember the linearization point;
``add_dforce(dx, df)``
    accumulate ``K @ dx`` with ``K = df/dx`` at the last linearization point;
``add_kmatrix(K)``
    accumulate the dense ``K`` (used by the direct solver);
``energy(x)``
    potential energy, for conservative fields.
"""
from __future__ import annotations

import logging

import numpy as np
import scipy.sparse as sp

from ..mesh import TetMesh
from . import _kernels
from .state import MechanicalParams, SoftBodyState

logger = logging.getLogger(__name__)

__all__ = [
    "ForceField",
    "CompositeForce",
    "ConstantForce",
    "GravityForce",
    "SpringForceField",
    "CorotationalFEM",
    "spring_forces",
    "spring_energy",
    "fem_forces",
    "lumped_masses",
    "scatter_rows",
]


def scatter_rows(n: int, idx: np.ndarray, vals: np.ndarray) -> np.ndarray:
    """Sum 3-vectors ``vals`` into an ``(n, 3)`` array at rows ``idx``."""
    out = np.empty((n, 3))
    for c in range(3):
        out[:, c] = np.bincount(idx, vals[:, c], minlength=n)
    return out


class ForceField:
    def add_force(self, x, v, f):
        raise NotImplementedError

    def add_dforce(self, dx, df):
        pass

    def add_kmatrix(self, K):
        pass

    def energy(self, x) -> float:
        return 0.0


class CompositeForce(ForceField):
    def __init__(self, fields):
        self.fields = list(fields)

    def add_force(self, x, v, f):
        for ff in self.fields:
            ff.add_force(x, v, f)

    def add_dforce(self, dx, df):
        for ff in self.fields:
            ff.add_dforce(dx, df)

    def add_kmatrix(self, K):
        for ff in self.fields:
            ff.add_kmatrix(K)

    def energy(self, x):
        return sum(ff.energy(x) for ff in self.fields)


class ConstantForce(ForceField):
    def __init__(self, forces):
        self.forces = np.asarray(forces, dtype=float)

    def add_force(self, x, v, f):
        f += self.forces

    def energy(self, x):
        return -float(np.sum(self.forces * x))


class GravityForce(ForceField):
    def __init__(self, masses, gravity=(0.0, -9.81, 0.0)):
        self.masses = np.asarray(masses, dtype=float)
        self.gravity = np.asarray(gravity, dtype=float)

    def add_force(self, x, v, f):
        f += self.masses[:, None] * self.gravity

    def energy(self, x):
        return -float(self.masses @ (x @ self.gravity))


def spring_energy(x, edges, rest_lengths, stiffness) -> float:
    d = x[edges[:, 1]] - x[edges[:, 0]]
    l = np.linalg.norm(d, axis=1)
    return 0.5 * stiffness * float(np.sum((l - rest_lengths) ** 2))


class SpringForceField(ForceField):
    """Hookean springs on index pairs.

    The tangent stiffness drops the compressive geometric term so that the
    implicit system stays positive definite.
    """

    def __init__(self, edges, rest_lengths, stiffness):
        self.edges = np.asarray(edges, dtype=np.int64).reshape(-1, 2)
        self.rest_lengths = np.asarray(rest_lengths, dtype=float).reshape(-1)
        if (self.rest_lengths <= 0).any():
            raise ValueError("spring rest lengths must be positive")
        self.stiffness = float(stiffness)
        self.coincident = 0
        self._H = np.zeros((len(self.edges), 3, 3))

    def add_force(self, x, v, f):
        i, j = self.edges[:, 0], self.edges[:, 1]
        d = x[j] - x[i]
        l = np.linalg.norm(d, axis=1)
        ok = l > 0
        self.coincident = int((~ok).sum())
        if self.coincident:
            logger.debug("%d springs with coincident end nodes", self.coincident)
        safe_l = np.where(ok, l, 1.0)
        n = d / safe_l[:, None]
        fi = (self.stiffness * (l - self.rest_lengths) * ok)[:, None] * n
        np.add.at(f, i, fi)
        np.add.at(f, j, -fi)
        c = np.clip(1.0 - self.rest_lengths / safe_l, 0.0, None)
        nn = n[:, :, None] * n[:, None, :]
        H = self.stiffness * (c[:, None, None] * (np.eye(3) - nn) + nn)
        H[~ok] = 0.0
        self._H = H

    def add_dforce(self, dx, df):
        i, j = self.edges[:, 0], self.edges[:, 1]
        w = np.einsum("eab,eb->ea", self._H, dx[j] - dx[i])
        np.add.at(df, i, w)
        np.add.at(df, j, -w)

    def add_kmatrix(self, K):
        for (i, j), H in zip(self.edges, self._H):
            si, sj = slice(3 * i, 3 * i + 3), slice(3 * j, 3 * j + 3)
            K[si, si] -= H
            K[sj, sj] -= H
            K[si, sj] += H
            K[sj, si] += H

    def energy(self, x):
        return spring_energy(x, self.edges, self.rest_lengths, self.stiffness)


def spring_forces(state: SoftBodyState, edges, rest_lengths, stiffness, diagnostics=None) -> np.ndarray:
    """Per-node spring forces; ``diagnostics['coincident_edges']`` counts zero-length springs."""
    ff = SpringForceField(edges, rest_lengths, stiffness)
    f = np.zeros_like(state.x)
    ff.add_force(state.x, state.v, f)
    if diagnostics is not None:
        diagnostics["coincident_edges"] = ff.coincident
    return f


def lumped_masses(mesh: TetMesh, density: float) -> np.ndarray:
    """Per-node mass: a quarter of each incident element's mass."""
    corner = np.repeat(density * mesh.rest_volumes / 4.0, 4)
    return np.bincount(mesh.tetrahedra.ravel(), corner, minlength=mesh.n_vertices)


class CorotationalFEM(ForceField):
    """Linear tetrahedra evaluated in a per-element rotated frame.

    The rotation is the polar factor of the deformation gradient, so the
    force ``-V * R * sigma(S - I) * grad N`` is the exact gradient of the
    corotated energy ``V * (mu |F - R|^2 + lambda/2 tr(S - I)^2)``.  An
    inverted element keeps its last valid rotation and ``S = sym(R^T F)``;
    the force is then the exact gradient of the energy at that held rotation.
    """

    def __init__(self, rest_positions, tets, young_modulus, poisson_ratio):
        X = np.asarray(rest_positions, dtype=float)
        self.tets = np.asarray(tets, dtype=np.int64)
        self.n_nodes = len(X)
        e, nu = young_modulus, poisson_ratio
        self.mu = e / (2 * (1 + nu))
        self.lam = e * nu / ((1 + nu) * (1 - 2 * nu))
        P = X[self.tets]
        Dm = P[:, 1:] - P[:, :1]  # rows are edge vectors
        self.volumes = np.abs(np.linalg.det(Dm)) / 6.0
        # F = sum_k x_k (x) g_k with g_k the shape-function gradients
        Bm = np.linalg.inv(np.swapaxes(Dm, 1, 2))
        g = np.empty((len(self.tets), 4, 3))
        g[:, 1:] = Bm
        g[:, 0] = -Bm.sum(axis=1)
        self.grads = g
        gg = np.einsum("eia,eja->eij", g, g)
        I3 = np.eye(3)
        # explicit block assembly keeps the index bookkeeping readable
        K0 = np.empty((len(self.tets), 4, 3, 4, 3))
        for i in range(4):
            for j in range(4):
                K0[:, i, :, j, :] = (self.mu * gg[:, i, j, None, None] * I3
                                     + self.mu * g[:, j, :, None] * g[:, i, None, :]
                                     + self.lam * g[:, i, :, None] * g[:, j, None, :])
        self.K0 = (K0 * self.volumes[:, None, None, None, None]).reshape(-1, 12, 12)
        self.R = np.tile(np.eye(3), (len(self.tets), 1, 1))
        self.inverted = 0
        self._build_scatter()

    def _build_scatter(self):
        self._rows = (self.tets[:, :, None] * 3 + np.arange(3)).reshape(-1)
        # sparsity pattern of the assembled stiffness; ``_slot`` maps every
        # element-matrix entry to its position in the CSR data array
        idx = self._rows.reshape(-1, 12)
        n = 3 * self.n_nodes
        keys = (idx[:, :, None] * n + idx[:, None, :]).reshape(-1)
        uniq, inv = np.unique(keys, return_inverse=True)
        self._slot = inv.reshape(-1, 12, 12).astype(np.int64)
        indptr = np.concatenate([[0], np.cumsum(np.bincount(uniq // n, minlength=n))])
        self._K = sp.csr_matrix((np.zeros(len(uniq)), uniq % n, indptr), shape=(n, n))
        self._assembled = False

    def set_topology(self, tets, n_nodes):
        """Swap connectivity after a rupture; element shapes are unchanged."""
        self.tets = np.asarray(tets, dtype=np.int64)
        self.n_nodes = int(n_nodes)
        self._build_scatter()

    def deformation_gradient(self, x):
        xs = x[self.tets]
        return np.einsum("eka,ekb->eab", xs, self.grads)

    def rotations(self, F, update=True):
        """Polar rotations of ``F``; inverted elements reuse the last valid one."""
        R = self.R.copy()
        ok = _kernels.polar_batch(np.ascontiguousarray(F), R)
        if update:
            self._note_inverted(int((~ok).sum()))
            self.R = R
        return R

    def _note_inverted(self, n_bad):
        if n_bad:
            self.inverted += n_bad
            logger.debug("%d inverted elements, reusing last valid rotation", n_bad)

    def rotated_stress(self, F, R):
        """Linear stress in the element frame, ``sigma(sym(R^T F) - I)``."""
        S = np.einsum("eba,ebc->eac", R, F)
        S = 0.5 * (S + np.swapaxes(S, 1, 2))
        strain = S - np.eye(3)
        tr = np.trace(strain, axis1=1, axis2=2)
        return 2 * self.mu * strain + self.lam * tr[:, None, None] * np.eye(3)

    def element_forces(self, x, update=True):
        F = self.deformation_gradient(x)
        R = self.rotations(F, update=update)
        P = R @ self.rotated_stress(F, R)
        return -self.volumes[:, None, None] * np.einsum("eab,ekb->eka", P, self.grads)

    def add_force(self, x, v, f):
        n_bad = _kernels.fem_forces_kernel(np.ascontiguousarray(x), self.tets, self.grads, self.volumes,
                                           self.mu, self.lam, self.R, f)
        self._note_inverted(n_bad)
        self._assembled = False

    def assembled_stiffness(self) -> sp.csr_matrix:
        """Sparse ``sum_e R_e K0_e R_e^T`` at the last linearization point (``-df/dx``)."""
        if not self._assembled:
            _kernels.fem_assemble_kernel(self.tets, self.R, self.K0, self._slot, self._K.data)
            self._assembled = True
        return self._K

    def add_dforce(self, dx, df):
        df -= (self.assembled_stiffness() @ np.asarray(dx).reshape(-1)).reshape(df.shape)

    def add_dforce_elementwise(self, dx, df):
        """Matrix-free variant of :meth:`add_dforce` (same operator, no assembly)."""
        _kernels.fem_dforce_kernel(np.ascontiguousarray(dx), self.tets, self.R, self.K0, df)

    def stiffness_blocks(self):
        """Per-element 12x12 ``R K0 R^T`` (positive semi-definite)."""
        Rb = np.zeros((len(self.tets), 12, 12))
        for k in range(4):
            Rb[:, 3 * k:3 * k + 3, 3 * k:3 * k + 3] = self.R
        return Rb @ self.K0 @ np.swapaxes(Rb, 1, 2)

    def add_kmatrix(self, K):
        Ke = self.stiffness_blocks()
        idx = self._rows.reshape(-1, 12)
        np.add.at(K, (idx[:, :, None], idx[:, None, :]), -Ke)

    def energy(self, x):
        F = self.deformation_gradient(x)
        R = self.rotations(F, update=False)
        # sym(R^T F) - I equals R^T F - I for a polar rotation; for an inverted
        # element it keeps the energy consistent with the force under the held rotation
        S = np.einsum("eba,ebc->eac", R, F)
        strain = 0.5 * (S + np.swapaxes(S, 1, 2)) - np.eye(3)
        tr = np.trace(strain, axis1=1, axis2=2)
        dev = np.sum(strain ** 2, axis=(1, 2))
        return float(self.volumes @ (self.mu * dev + 0.5 * self.lam * tr ** 2))

    def principal_stress(self, x):
        """Largest principal stress per element, clamped at 0 (tension positive)."""
        F = self.deformation_gradient(x)
        R = self.rotations(F, update=False)
        sig = self.rotated_stress(F, R)
        return np.clip(np.linalg.eigvalsh(sig)[:, -1], 0.0, None)


def fem_forces(state: SoftBodyState, mesh: TetMesh, params: MechanicalParams, stiffness=False):
    """Corotational forces at ``state``; rest shape is ``mesh.vertices``.

    Returns ``(forces, blocks)`` where ``blocks`` are the per-element 12x12
    stiffness matrices when requested, else None.
    """
    if params.model != "fem":
        raise ValueError("fem_forces requires params.model == 'fem'")
    fem = CorotationalFEM(mesh.vertices, mesh.tetrahedra, params.young_modulus, params.poisson_ratio)
    f = np.zeros_like(state.x)
    fem.add_force(state.x, state.v, f)
    return f, (fem.stiffness_blocks() if stiffness else None)
