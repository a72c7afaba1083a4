"""Compiled CSR kernels.

All kernels take a right-hand side of shape (n, m) (one column per chain) and
operate on the full symmetric pattern. ``part`` selects which entries of each
row participate: bit 1 strictly lower, bit 2 diagonal, bit 4 strictly upper.
"""
import numba
import numpy as np

LOWER = 1
DIAG = 2
UPPER = 4
FULL = LOWER | DIAG | UPPER


@numba.njit(cache=True, nogil=True)
def csr_matmat(indptr, indices, data, x, part):
    n, m = x.shape
    out = np.zeros((n, m))
    for i in range(n):
        for p in range(indptr[i], indptr[i + 1]):
            j = indices[p]
            if j < i:
                if not (part & 1):
                    continue
            elif j == i:
                if not (part & 2):
                    continue
            elif not (part & 4):
                continue
            a = data[p]
            for c in range(m):
                out[i, c] += a * x[j, c]
    return out


@numba.njit(cache=True, nogil=True)
def forward_solve(indptr, indices, data, diag, r):
    # (diag + strictly lower) u = r
    n, m = r.shape
    u = np.empty((n, m))
    acc = np.empty(m)
    for i in range(n):
        for c in range(m):
            acc[c] = r[i, c]
        for p in range(indptr[i], indptr[i + 1]):
            j = indices[p]
            if j < i:
                a = data[p]
                for c in range(m):
                    acc[c] -= a * u[j, c]
        d = diag[i]
        for c in range(m):
            u[i, c] = acc[c] / d
    return u


@numba.njit(cache=True, nogil=True)
def backward_solve(indptr, indices, data, diag, r):
    # (diag + strictly upper) u = r
    n, m = r.shape
    u = np.empty((n, m))
    acc = np.empty(m)
    for i in range(n - 1, -1, -1):
        for c in range(m):
            acc[c] = r[i, c]
        for p in range(indptr[i], indptr[i + 1]):
            j = indices[p]
            if j > i:
                a = data[p]
                for c in range(m):
                    acc[c] -= a * u[j, c]
        d = diag[i]
        for c in range(m):
            u[i, c] = acc[c] / d
    return u


@numba.njit(cache=True, nogil=True)
def gibbs_sweep(indptr, indices, data, diag, y, z):
    """In-place natural-order component sweep with pre-drawn standard normals z."""
    n, m = y.shape
    for i in range(n):
        d = diag[i]
        s = np.sqrt(d)
        for c in range(m):
            acc = 0.0
            for p in range(indptr[i], indptr[i + 1]):
                j = indices[p]
                if j != i:
                    acc += data[p] * y[j, c]
            y[i, c] = z[i, c] / s - acc / d
