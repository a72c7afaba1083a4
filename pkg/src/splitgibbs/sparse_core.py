"""Sparse SPD storage, views, products, triangular solves and banded Cholesky.

Flop accounting is an analytic model, not a hardware count:

* product with a matrix or view: ``2 * nnz``
* triangular solve: ``2 * nnz - n`` (``n**2`` for a dense triangle)
* banded Cholesky with bandwidth ``b``: ``b**2 * n``
"""
from __future__ import annotations

import csv
from dataclasses import dataclass

import numpy as np
import scipy.io
import scipy.linalg
import scipy.sparse as sp

from . import _kernels as K
from .errors import (
    ContractError,
    DimensionError,
    NotPositiveDefiniteError,
    NumericError,
    ParameterError,
    ResourceError,
    SingularTriangularError,
)

DENSE_LIMIT = 400
BANDED_MAX_ENTRIES = 50_000_000

_PARTS = {
    "lower": K.LOWER,
    "diag": K.DIAG,
    "upper": K.UPPER,
    "lower+diag": K.LOWER | K.DIAG,
    "upper+diag": K.UPPER | K.DIAG,
    "full": K.FULL,
}


class FlopCounter:
    """Accumulates modelled flops for one chain or one solve."""

    def __init__(self, count=0):
        self.count = int(count)

    def add(self, k):
        self.count += int(k)

    def merge(self, other):
        return FlopCounter(self.count + other.count)

    def __int__(self):
        return self.count

    def __repr__(self):
        return f"FlopCounter({self.count})"


def _count(flops, k):
    if flops is not None:
        flops.add(k)


def as_columns(x, n):
    """View ``x`` as an (n, m) float array; report whether it was 1-D."""
    x = np.asarray(x, dtype=float)
    if x.ndim == 1:
        if x.shape[0] != n:
            raise DimensionError(f"vector of length {x.shape[0]} given, expected {n}")
        return np.ascontiguousarray(x.reshape(n, 1)), True
    if x.ndim != 2 or x.shape[0] != n:
        raise DimensionError(f"array of shape {x.shape} given, expected ({n}, m)")
    return np.ascontiguousarray(x), False


def _restore(u, was_1d):
    return u[:, 0] if was_1d else u


class SparseSpd:
    """Immutable CSR matrix with the full symmetric pattern stored.

    Construction checks that the pattern and values are exactly symmetric and
    that every diagonal entry is present and positive. Positive definiteness
    itself is only checked on request (:meth:`check_definite`).
    """

    def __init__(self, n, row_offsets, col_indices, values):
        self.n = int(n)
        self.row_offsets = np.ascontiguousarray(row_offsets, dtype=np.int64)
        self.col_indices = np.ascontiguousarray(col_indices, dtype=np.int64)
        self.values = np.ascontiguousarray(values, dtype=float)
        for arr in (self.row_offsets, self.col_indices, self.values):
            arr.setflags(write=False)
        self._validate()
        rows = np.repeat(np.arange(self.n), np.diff(self.row_offsets))
        diag = np.zeros(self.n)
        on_diag = rows == self.col_indices
        diag[rows[on_diag]] = self.values[on_diag]
        diag.setflags(write=False)
        self.diagonal = diag
        self.nnz_lower = int(np.count_nonzero(self.col_indices < rows))
        self.nnz_upper = self.nnz_lower
        self.bandwidth = int(np.max(np.abs(rows - self.col_indices))) if self.nnz else 0

    def _validate(self):
        n = self.n
        if self.row_offsets.shape != (n + 1,) or self.row_offsets[0] != 0:
            raise ParameterError("row_offsets must have length n + 1 and start at 0")
        if self.row_offsets[-1] != len(self.col_indices) or len(self.col_indices) != len(self.values):
            raise ParameterError("inconsistent CSR array lengths")
        if len(self.col_indices) and (self.col_indices.min() < 0 or self.col_indices.max() >= n):
            raise ParameterError("column index out of range")
        m = sp.csr_matrix((self.values, self.col_indices, self.row_offsets), shape=(n, n))
        diff = m - m.T
        if diff.nnz and np.any(diff.data != 0):
            raise ParameterError("matrix is not exactly symmetric")
        if (m != 0).astype(np.int8).sum() != (m.T != 0).astype(np.int8).sum():
            raise ParameterError("pattern is not structurally symmetric")
        d = m.diagonal()
        present = np.zeros(n, dtype=bool)
        rows = np.repeat(np.arange(n), np.diff(self.row_offsets))
        present[rows[rows == self.col_indices]] = True
        if not present.all():
            raise ParameterError("a diagonal entry is missing from the pattern")
        if np.any(d <= 0):
            raise NotPositiveDefiniteError("diagonal entries must be strictly positive")

    # constructors

    @classmethod
    def from_scipy(cls, m):
        m = sp.csr_matrix(m, dtype=float)
        if m.shape[0] != m.shape[1]:
            raise DimensionError("matrix must be square")
        m.sum_duplicates()
        m.sort_indices()
        n = m.shape[0]
        # explicit zeros on the diagonal must survive; off-diagonal zeros are dropped
        coo = m.tocoo()
        keep = (coo.data != 0) | (coo.row == coo.col)
        coo = sp.coo_matrix((coo.data[keep], (coo.row[keep], coo.col[keep])), shape=(n, n))
        m = coo.tocsr()
        m.sort_indices()
        return cls(n, m.indptr, m.indices, m.data)

    @classmethod
    def from_dense(cls, a):
        a = np.asarray(a, dtype=float)
        return cls.from_scipy(sp.csr_matrix(a))

    # conversions

    @property
    def nnz(self):
        return len(self.values)

    @property
    def shape(self):
        return (self.n, self.n)

    def to_scipy(self):
        return sp.csr_matrix(
            (self.values.copy(), self.col_indices.copy(), self.row_offsets.copy()), shape=self.shape
        )

    def todense(self):
        return self.to_scipy().toarray()

    def view(self, part, diag_scale=1.0):
        return TriangularView(self, part, diag_scale)

    def permuted(self, perm):
        """Return P A P^T for the permutation that puts row ``perm[i]`` at position i."""
        perm = np.asarray(perm)
        if sorted(perm.tolist()) != list(range(self.n)):
            raise ParameterError("not a permutation of 0..n-1")
        m = self.to_scipy()[perm][:, perm]
        return SparseSpd.from_scipy(m)

    def check_definite(self):
        """Dense eigenvalue check, test scale only."""
        if self.n > 2000:
            raise ContractError("dense definiteness check is limited to n <= 2000")
        lam = np.linalg.eigvalsh(self.todense())
        if lam[0] <= 0:
            raise NotPositiveDefiniteError(f"smallest eigenvalue {lam[0]:.3e} is not positive")
        return lam[0]

    def __matmul__(self, x):
        return spmv(self, x)

    def __repr__(self):
        return f"SparseSpd(n={self.n}, nnz={self.nnz}, bandwidth={self.bandwidth})"


@dataclass(frozen=True)
class TriangularView:
    """A part of a :class:`SparseSpd` (L, D, U or L+D, U+D).

    ``diag_scale`` multiplies the diagonal, so ``view("lower+diag", 1/w)`` is
    the SOR matrix D/w + L.
    """

    base: SparseSpd
    part: str
    diag_scale: float = 1.0

    def __post_init__(self):
        if self.part not in _PARTS:
            raise ParameterError(f"unknown part {self.part!r}; expected one of {sorted(_PARTS)}")

    @property
    def n(self):
        return self.base.n

    @property
    def flags(self):
        return _PARTS[self.part]

    @property
    def has_diagonal(self):
        return bool(self.flags & K.DIAG)

    @property
    def nnz(self):
        f, b = self.flags, self.base
        return (b.nnz_lower if f & K.LOWER else 0) + (b.n if f & K.DIAG else 0) + (
            b.nnz_upper if f & K.UPPER else 0
        )

    @property
    def diag(self):
        return self.base.diagonal * self.diag_scale

    @property
    def T(self):
        swap = {"lower": "upper", "upper": "lower", "lower+diag": "upper+diag", "upper+diag": "lower+diag"}
        return TriangularView(self.base, swap.get(self.part, self.part), self.diag_scale)

    def todense(self):
        a = self.base.todense()
        f = self.flags
        out = np.zeros_like(a)
        if f & K.LOWER:
            out += np.tril(a, -1)
        if f & K.UPPER:
            out += np.triu(a, 1)
        if f & K.DIAG:
            out += np.diag(self.diag)
        return out


def spmv(A, x, flops=None):
    """Product of a matrix or view with a vector, or with an (n, m) block of columns."""
    if isinstance(A, SparseSpd):
        A = TriangularView(A, "full")
    base = A.base
    x2, was_1d = as_columns(x, base.n)
    f = A.flags
    off = f & ~K.DIAG
    if off:
        out = K.csr_matmat(base.row_offsets, base.col_indices, base.values, x2, off | (f & K.DIAG if A.diag_scale == 1.0 else 0))
        if f & K.DIAG and A.diag_scale != 1.0:
            out += A.diag[:, None] * x2
    elif f & K.DIAG:
        out = A.diag[:, None] * x2
    _count(flops, 2 * A.nnz)
    return _restore(out, was_1d)


def tri_solve(T, r, flops=None):
    """Solve T u = r for a view that includes the diagonal."""
    if not T.has_diagonal:
        raise ContractError("triangular solve needs a view that includes the diagonal")
    if T.flags & K.LOWER and T.flags & K.UPPER:
        raise ContractError("view is not triangular")
    diag = T.diag
    if np.any(diag == 0):
        raise SingularTriangularError("zero diagonal entry in triangular solve")
    base = T.base
    r2, was_1d = as_columns(r, base.n)
    if T.flags & K.LOWER:
        u = K.forward_solve(base.row_offsets, base.col_indices, base.values, diag, r2)
    elif T.flags & K.UPPER:
        u = K.backward_solve(base.row_offsets, base.col_indices, base.values, diag, r2)
    else:
        u = r2 / diag[:, None]
    _count(flops, 2 * T.nnz - base.n)
    return _restore(u, was_1d)


class BandedCholesky:
    """Lower factor B with A = B B^T in LAPACK lower band storage.

    ``factor[d, j]`` holds ``B[j + d, j]``.
    """

    def __init__(self, factor, bandwidth):
        self.factor = factor
        self.bandwidth = int(bandwidth)
        self.n = factor.shape[1]

    def dense(self):
        n, b = self.n, self.bandwidth
        B = np.zeros((n, n))
        for d in range(b + 1):
            idx = np.arange(n - d)
            B[idx + d, idx] = self.factor[d, : n - d]
        return B

    def _upper_of_transpose(self):
        n, b = self.n, self.bandwidth
        ab = np.zeros((b + 1, n))
        for d in range(b + 1):
            ab[b - d, d:] = self.factor[d, : n - d]
        return ab

    def solve_transpose(self, z, flops=None):
        """Back substitution for B^T y = z."""
        z2, was_1d = as_columns(z, self.n)
        y = scipy.linalg.solve_banded((0, self.bandwidth), self._upper_of_transpose(), z2)
        _count(flops, (2 * self.bandwidth + 1) * self.n)
        return _restore(y, was_1d)

    def solve(self, r, flops=None):
        """Solve A x = r using both triangular factors."""
        r2, was_1d = as_columns(r, self.n)
        x = scipy.linalg.cho_solve_banded((self.factor, True), r2)
        _count(flops, 2 * (2 * self.bandwidth + 1) * self.n)
        return _restore(x, was_1d)

    def matvec(self, z, flops=None):
        """B z."""
        z2, was_1d = as_columns(z, self.n)
        out = np.zeros_like(z2)
        for d in range(self.bandwidth + 1):
            out[d:] += self.factor[d, : self.n - d, None] * z2[: self.n - d]
        _count(flops, (2 * self.bandwidth + 1) * self.n)
        return _restore(out, was_1d)


def banded_cholesky(A, flops=None, max_entries=BANDED_MAX_ENTRIES):
    if isinstance(A, np.ndarray):
        A = SparseSpd.from_dense(A)
    n, b = A.n, A.bandwidth
    if (b + 1) * n > max_entries:
        raise ResourceError(
            f"banded Cholesky needs {(b + 1) * n:.3g} stored entries, cap is {max_entries:.3g}"
        )
    m = A.to_scipy().tocoo()
    lower = m.row >= m.col
    ab = np.zeros((b + 1, n))
    ab[(m.row - m.col)[lower], m.col[lower]] = m.data[lower]
    try:
        factor = scipy.linalg.cholesky_banded(ab, lower=True)
    except np.linalg.LinAlgError as exc:
        raise NotPositiveDefiniteError(f"non-positive pivot in banded Cholesky: {exc}") from exc
    _count(flops, b * b * n)
    return BandedCholesky(factor, b)


def dense_spectral_radius(G, max_n=DENSE_LIMIT):
    G = np.asarray(G, dtype=float)
    if G.ndim != 2 or G.shape[0] != G.shape[1]:
        raise DimensionError("spectral radius needs a square matrix")
    if G.shape[0] > max_n:
        raise ContractError(f"dense spectral radius is limited to n <= {max_n}")
    try:
        return float(np.max(np.abs(np.linalg.eigvals(G)))) if G.size else 0.0
    except np.linalg.LinAlgError as exc:
        raise NumericError(f"eigensolver failed: {exc}") from exc


def _power_iteration(apply, n, tol, maxiter, seed):
    v = np.random.default_rng(seed).standard_normal(n)
    v /= np.linalg.norm(v)
    lam = 0.0
    for _ in range(maxiter):
        w = apply(v)
        lam = float(v @ w)
        res = np.linalg.norm(w - lam * v)
        nw = np.linalg.norm(w)
        if nw == 0:
            return 0.0
        if res <= tol * abs(lam):
            return lam
        v = w / nw
    raise NumericError(f"power iteration did not converge in {maxiter} steps")


def spectral_norm(A, tol=1e-6, maxiter=100_000, seed=0):
    """Largest eigenvalue of an SPD matrix by power iteration."""
    return _power_iteration(lambda v: spmv(A, v), A.n, tol, maxiter, seed)


def inverse_spectral_norm(A, tol=1e-6, maxiter=100_000, seed=0):
    """Largest eigenvalue of A^{-1} by inverse power iteration."""
    chol = banded_cholesky(A)
    return _power_iteration(chol.solve, A.n, tol, maxiter, seed)


# file formats


def read_matrix_market(path):
    m = scipy.io.mmread(path)
    return SparseSpd.from_scipy(sp.csr_matrix(m))


def write_matrix_market(path, A, comment=""):
    scipy.io.mmwrite(str(path), sp.coo_matrix(A.to_scipy()), comment=comment, symmetry="symmetric")


def read_vector_csv(path):
    with open(path, newline="") as fh:
        rows = [r for r in csv.reader(fh) if r]
    if rows and len(rows[0]) > 1:
        return np.array([[float(v) for v in r] for r in rows])
    return np.array([float(r[0]) for r in rows])


def write_vector_csv(path, x):
    x = np.asarray(x)
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        for row in x.reshape(x.shape[0], -1):
            w.writerow([repr(float(v)) for v in row])
