"""Model builders: the 2-D lattice GMRF and the 3-D deconvolution problem.

3-D node ``(i, j, k)`` sits at the voxel centre ``((i + 1/2) h, (j + 1/2) h,
(k + 1/2) h)`` with ``h = 1 / nx`` and is stored at flat index
``(i * ny + j) * nz + k``, so z varies fastest.
"""
from __future__ import annotations

import json
from dataclasses import dataclass
from pathlib import Path

import numpy as np
import scipy.sparse as sp

from .errors import ModelAssemblyError, NotPositiveDefiniteError, ParameterError
from .samplers import TargetSpec
from .sparse_core import SparseSpd

DENSE_CHECK_LIMIT = 2000


def _path_laplacian(m):
    """Graph Laplacian of a path with m nodes (end nodes have degree 1)."""
    main = np.full(m, 2.0)
    main[0] = main[-1] = 1.0
    if m == 1:
        main[:] = 0.0
    off = -np.ones(m - 1)
    return sp.diags([off, main, off], [-1, 0, 1], format="csr")


def _grid_laplacian(dims):
    mats = [_path_laplacian(m) for m in dims]
    eyes = [sp.identity(m, format="csr") for m in dims]
    total = None
    for axis in range(len(dims)):
        term = None
        for j in range(len(dims)):
            f = mats[j] if j == axis else eyes[j]
            term = f if term is None else sp.kron(term, f, format="csr")
        total = term if total is None else total + term
    return total


def lattice2d_precision(m, delta=1e-4):
    """First-order locally linear precision on an m x m unit grid.

    ``A[i, i] = delta + (number of neighbours)``, ``A[i, j] = -1`` for grid
    neighbours, so ``A @ 1 = delta * 1``.
    """
    if m < 2:
        raise ParameterError("lattice side must be at least 2")
    if not delta > 0:
        raise ParameterError("delta must be positive")
    L = _grid_laplacian((m, m))
    return SparseSpd.from_scipy(L + delta * sp.identity(m * m))


def _check_dims(dims, minimum=1):
    dims = tuple(int(d) for d in dims)
    if len(dims) != 3 or min(dims) < minimum:
        raise ParameterError(f"dims must be three integers >= {minimum}, got {dims}")
    return dims


def helmholtz3d_operator(dims, R, robin=None):
    """Finite-difference H for the energy (R/4)|grad x|^2 + x^2/(4R) on the unit-width box.

    Boundary faces use a ghost node to impose ``x + c dx/dn = 0`` on the
    domain wall, half a cell beyond the outer voxel centres, with ``c = R``
    unless ``robin`` is given.
    """
    dims = _check_dims(dims, 4)
    if not R > 0:
        raise ParameterError("R must be positive")
    c = R if robin is None else float(robin)
    h = 1.0 / dims[0]
    boundary = np.zeros(dims)
    for axis, m in enumerate(dims):
        idx = [slice(None)] * 3
        idx[axis] = 0
        boundary[tuple(idx)] += 1
        idx[axis] = m - 1
        boundary[tuple(idx)] += 1
    diag = h**3 / (4 * R) + boundary.ravel() * (R / 4) * h**2 / (c + h / 2)
    H = (R / 4) * h * _grid_laplacian(dims) + sp.diags(diag)
    return SparseSpd.from_scipy(H)


def helmholtz3d_precision(dims, R, robin=None):
    """Q_R = H @ H for the operator of :func:`helmholtz3d_operator`."""
    H = helmholtz3d_operator(dims, R, robin).to_scipy()
    Q = H @ H
    Q = 0.5 * (Q + Q.T)
    try:
        out = SparseSpd.from_scipy(Q)
    except (NotPositiveDefiniteError, ParameterError) as exc:
        raise ModelAssemblyError(f"squared Helmholtz operator is invalid: {exc}") from exc
    if out.n <= DENSE_CHECK_LIMIT:
        try:
            out.check_definite()
        except NotPositiveDefiniteError as exc:
            raise ModelAssemblyError(str(exc)) from exc
    return out


def node_positions(dims):
    """(n, 3) voxel-centre coordinates in domain-width units."""
    dims = _check_dims(dims)
    h = 1.0 / dims[0]
    axes = [(np.arange(m) + 0.5) * h for m in dims]
    X, Y, Z = np.meshgrid(*axes, indexing="ij")
    return np.column_stack([X.ravel(), Y.ravel(), Z.ravel()])


@dataclass
class ForwardModel:
    """Vertical block averaging: ``F`` maps a (nx, ny, nz) image to (nx, ny, nz / v) data."""

    dims: tuple
    v: int
    F: sp.csr_matrix
    P: np.ndarray

    @property
    def data_dims(self):
        nx, ny, nz = self.dims
        return (nx, ny, nz // self.v)


def biofilm_forward(dims, v, P=1.0):
    dims = _check_dims(dims)
    nx, ny, nz = dims
    v = int(v)
    if v < 1 or nz % v:
        raise ParameterError(f"nz = {nz} is not divisible by v = {v}")
    slabs = nz // v
    n = nx * ny * nz
    rows = np.repeat(np.arange(nx * ny * slabs), v)
    cols = np.arange(n)
    F = sp.csr_matrix((np.full(n, 1.0 / v), (rows, cols)), shape=(nx * ny * slabs, n))
    Pv = np.broadcast_to(np.asarray(P, dtype=float), (F.shape[0],)).copy()
    if np.any(Pv <= 0):
        raise ParameterError("observation precision must be positive")
    return ForwardModel(dims, v, F, Pv)


def phantom_ellipsoid(dims, semi_axes=None, value=10.0):
    """Half-ellipsoid column standing on the z = 0 face, ``value`` inside and 0 outside.

    Semi-axes are in voxels and default to (0.35 nx, 0.35 ny, 0.9 nz), a column 0.9 of the domain height.
    """
    dims = _check_dims(dims)
    nx, ny, nz = dims
    a, b, c = semi_axes if semi_axes is not None else (0.35 * nx, 0.35 * ny, 0.9 * nz)
    X, Y, Z = np.meshgrid(
        np.arange(nx) + 0.5, np.arange(ny) + 0.5, np.arange(nz) + 0.5, indexing="ij"
    )
    inside = ((X - nx / 2) / a) ** 2 + ((Y - ny / 2) / b) ** 2 + (Z / c) ** 2 <= 1.0
    return np.where(inside, float(value), 0.0).ravel()


def synth_data(x_true, fm: ForwardModel, rng=None, noise=True):
    """y = F x_true + P^{-1/2} z."""
    x_true = np.asarray(x_true, dtype=float)
    if x_true.shape != (fm.F.shape[1],):
        raise ParameterError(f"x_true has shape {x_true.shape}, expected ({fm.F.shape[1]},)")
    y = fm.F @ x_true
    if noise:
        if rng is None:
            raise ParameterError("noisy data needs an rng")
        y = y + rng.standard_normal(y.shape[0]) / np.sqrt(fm.P)
    return y


def posterior_spec(F, P, Q, y):
    """Posterior precision A = F^T P F + Q and noise mean nu = F^T P y."""
    F = sp.csr_matrix(F)
    y = np.asarray(y, dtype=float)
    m, n = F.shape
    if y.shape != (m,):
        raise ParameterError(f"y has shape {y.shape}, expected ({m},)")
    Pv = np.broadcast_to(np.asarray(P, dtype=float), (m,))
    if Q is None:
        Qs = sp.csr_matrix((n, n))
    else:
        Qs = Q.to_scipy() if isinstance(Q, SparseSpd) else sp.csr_matrix(Q)
    if Qs.shape != (n, n):
        raise ParameterError(f"Q has shape {Qs.shape}, expected ({n}, {n})")
    FtP = F.T @ sp.diags(Pv)
    A = (FtP @ F + Qs).tocsr()
    A = 0.5 * (A + A.T)
    if Qs.count_nonzero() == 0 and m < n:
        raise ModelAssemblyError("F^T P F is rank deficient and there is no prior precision")
    try:
        As = SparseSpd.from_scipy(A)
        if n <= DENSE_CHECK_LIMIT:
            As.check_definite()
    except (NotPositiveDefiniteError, ParameterError) as exc:
        raise ModelAssemblyError(f"posterior precision is not SPD: {exc}") from exc
    return TargetSpec(As, np.asarray(FtP @ y).ravel(), "implicit-mean")


def write_grid(path, values, dims, spacing=None):
    """Raw little-endian float64 grid plus a JSON header at ``path + '.json'``."""
    path = Path(path)
    dims = tuple(int(d) for d in dims)
    values = np.asarray(values, dtype="<f8")
    if values.size != int(np.prod(dims)):
        raise ParameterError(f"{values.size} values do not fill a grid of {dims}")
    values.tofile(path)
    header = {"dims": list(dims), "spacing": spacing if spacing is not None else 1.0 / dims[0],
              "dtype": "<f8", "order": "z-fastest"}
    path.with_name(path.name + ".json").write_text(json.dumps(header, indent=2))


def read_grid(path):
    path = Path(path)
    header = json.loads(path.with_name(path.name + ".json").read_text())
    values = np.fromfile(path, dtype=header.get("dtype", "<f8"))
    return values, header
