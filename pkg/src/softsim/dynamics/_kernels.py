"""Compiled per-element loops for the corotational FEM.

Loops run sequentially in element order, so results are bit-reproducible.
"""
import numpy as np
from numba import njit

POLAR_MAX_ITER = 40


@njit(cache=True, nogil=True)
def _det3(a):
    return (a[0, 0] * (a[1, 1] * a[2, 2] - a[1, 2] * a[2, 1])
            - a[0, 1] * (a[1, 0] * a[2, 2] - a[1, 2] * a[2, 0])
            + a[0, 2] * (a[1, 0] * a[2, 1] - a[1, 1] * a[2, 0]))


@njit(cache=True, nogil=True)
def _cofactor(a, out):
    out[0, 0] = a[1, 1] * a[2, 2] - a[1, 2] * a[2, 1]
    out[0, 1] = a[1, 2] * a[2, 0] - a[1, 0] * a[2, 2]
    out[0, 2] = a[1, 0] * a[2, 1] - a[1, 1] * a[2, 0]
    out[1, 0] = a[0, 2] * a[2, 1] - a[0, 1] * a[2, 2]
    out[1, 1] = a[0, 0] * a[2, 2] - a[0, 2] * a[2, 0]
    out[1, 2] = a[0, 1] * a[2, 0] - a[0, 0] * a[2, 1]
    out[2, 0] = a[0, 1] * a[1, 2] - a[0, 2] * a[1, 1]
    out[2, 1] = a[0, 2] * a[1, 0] - a[0, 0] * a[1, 2]
    out[2, 2] = a[0, 0] * a[1, 1] - a[0, 1] * a[1, 0]


@njit(cache=True, nogil=True)
def polar3(F, R):
    """Rotation factor of ``F`` (det > 0) by scaled Newton iteration, written to R.

    Returns False when ``det(F) <= 0``.
    """
    X = F.copy()
    C = np.empty((3, 3))
    if _det3(X) <= 0.0:
        return False
    scaled = True
    for _ in range(POLAR_MAX_ITER):
        d = _det3(X)
        _cofactor(X, C)  # X^{-T} = C / d
        if scaled:
            nx = 0.0
            ni = 0.0
            for i in range(3):
                for j in range(3):
                    nx += X[i, j] * X[i, j]
                    ni += C[i, j] * C[i, j]
            g = np.sqrt(np.sqrt(ni) / abs(d) / np.sqrt(nx))
        else:
            g = 1.0
        diff = 0.0
        for i in range(3):
            for j in range(3):
                xn = 0.5 * (g * X[i, j] + C[i, j] / (g * d))
                diff += (xn - X[i, j]) ** 2
                X[i, j] = xn
        if diff < 1e-6:
            scaled = False
        if diff < 1e-26:
            break
    for i in range(3):
        for j in range(3):
            R[i, j] = X[i, j]
    return True


@njit(cache=True, nogil=True)
def fem_forces_kernel(x, tets, grads, vols, mu, lam, R, f):
    """Accumulate corotational element forces into ``f``; refreshes ``R``.

    Inverted elements keep their previous rotation.  Returns their count.
    """
    n_inv = 0
    F = np.empty((3, 3))
    Rn = np.empty((3, 3))
    S = np.empty((3, 3))
    P = np.empty((3, 3))
    for e in range(tets.shape[0]):
        for a in range(3):
            for b in range(3):
                s = 0.0
                for k in range(4):
                    s += x[tets[e, k], a] * grads[e, k, b]
                F[a, b] = s
        if polar3(F, Rn):
            for a in range(3):
                for b in range(3):
                    R[e, a, b] = Rn[a, b]
        else:
            n_inv += 1
        # S = sym(R^T F)
        for a in range(3):
            for b in range(3):
                s = 0.0
                for c in range(3):
                    s += R[e, c, a] * F[c, b]
                S[a, b] = s
        tr = 0.0
        for a in range(3):
            tr += S[a, a] - 1.0
        for a in range(3):
            for b in range(a + 1, 3):
                sym = 0.5 * (S[a, b] + S[b, a])
                S[a, b] = sym
                S[b, a] = sym
        # P = R * sigma, sigma = 2 mu (S - I) + lam tr I
        for a in range(3):
            for b in range(3):
                s = 0.0
                for c in range(3):
                    sig = 2.0 * mu * (S[c, b] - (1.0 if c == b else 0.0))
                    if c == b:
                        sig += lam * tr
                    s += R[e, a, c] * sig
                P[a, b] = s
        v = vols[e]
        for k in range(4):
            node = tets[e, k]
            for a in range(3):
                s = 0.0
                for b in range(3):
                    s += P[a, b] * grads[e, k, b]
                f[node, a] -= v * s
    return n_inv


@njit(cache=True, nogil=True)
def fem_dforce_kernel(dx, tets, R, K0, df):
    """``df -= sum_e R_e K0_e R_e^T dx_e`` (block-diagonal rotation)."""
    loc = np.empty(12)
    out = np.empty(12)
    for e in range(tets.shape[0]):
        for k in range(4):
            node = tets[e, k]
            for a in range(3):
                s = 0.0
                for b in range(3):
                    s += R[e, b, a] * dx[node, b]
                loc[3 * k + a] = s
        for i in range(12):
            s = 0.0
            for j in range(12):
                s += K0[e, i, j] * loc[j]
            out[i] = s
        for k in range(4):
            node = tets[e, k]
            for a in range(3):
                s = 0.0
                for b in range(3):
                    s += R[e, a, b] * out[3 * k + b]
                df[node, a] -= s


@njit(cache=True, nogil=True)
def polar_batch(F, R):
    """Polar rotations of a stack of 3x3 matrices; rows with det <= 0 are left untouched."""
    ok = np.zeros(F.shape[0], dtype=np.bool_)
    Rn = np.empty((3, 3))
    for e in range(F.shape[0]):
        if polar3(F[e], Rn):
            ok[e] = True
            for a in range(3):
                for b in range(3):
                    R[e, a, b] = Rn[a, b]
    return ok


@njit(cache=True, nogil=True)
def fem_assemble_kernel(tets, R, K0, slot, data):
    """Scatter the rotated element matrices ``R_e K0_e R_e^T`` into CSR ``data``."""
    data[:] = 0.0
    T = np.empty((3, 3))
    for e in range(tets.shape[0]):
        for k in range(4):
            for l in range(4):
                # T = K0_kl R^T, block = R T
                for a in range(3):
                    for b in range(3):
                        s = 0.0
                        for c in range(3):
                            s += K0[e, 3 * k + a, 3 * l + c] * R[e, b, c]
                        T[a, b] = s
                for a in range(3):
                    for b in range(3):
                        s = 0.0
                        for c in range(3):
                            s += R[e, a, c] * T[c, b]
                        data[slot[e, 3 * k + a, 3 * l + b]] += s
