"""Matrix splittings A = M - N and their noise vectors.

Five kinds are supported:

=============  ==============================  =============================
kind           M                               M^T + N
=============  ==============================  =============================
richardson:w   I / w                           2/w I - A
jacobi         D                               2D - A
gs             D + L                           D
sor:w          D/w + L                         (2 - w)/w D
ssor:w         w/(2-w) M_sor D^-1 M_sor^T      M + N, both symmetric
=============  ==============================  =============================

SSOR matrices are never assembled; every action is a forward sweep, a
diagonal scaling and a backward sweep.
"""
from __future__ import annotations

import math
import warnings
from dataclasses import dataclass, field

import numpy as np

from .errors import NoiseCovarianceError, ParameterError, ResourceError
from .sparse_core import SparseSpd, _count, as_columns, spmv, tri_solve
from .streams import ChainStreams, normals

KINDS = ("richardson", "jacobi", "gs", "sor", "ssor")
DENSE_NOISE_LIMIT = 2000


@dataclass(frozen=True)
class SplittingKind:
    tag: str
    omega: float = 1.0

    def __post_init__(self):
        if self.tag not in KINDS:
            raise ParameterError(f"unknown splitting {self.tag!r}; expected one of {KINDS}")
        w = self.omega
        if not math.isfinite(w):
            raise ParameterError("omega must be finite")
        if self.tag == "richardson" and not w > 0:
            raise ParameterError(f"richardson needs omega > 0, got {w}")
        if self.tag in ("sor", "ssor") and not 0 < w < 2:
            raise ParameterError(f"{self.tag} needs 0 < omega < 2, got {w}")
        if self.tag in ("jacobi", "gs") and w != 1.0:
            raise ParameterError(f"{self.tag} takes no relaxation parameter")

    @classmethod
    def parse(cls, text):
        """Parse ``gs``, ``jacobi``, ``richardson:0.1``, ``sor:1.9852`` or ``ssor:1.6641``."""
        tag, _, rest = str(text).strip().lower().partition(":")
        aliases = {"gauss-seidel": "gs", "gaussseidel": "gs"}
        tag = aliases.get(tag, tag)
        if tag in ("richardson", "sor", "ssor"):
            if not rest:
                raise ParameterError(f"{tag} needs a relaxation parameter, e.g. {tag}:1.0")
            try:
                w = float(rest)
            except ValueError:
                raise ParameterError(f"bad relaxation parameter {rest!r}") from None
            return cls(tag, w)
        if rest:
            raise ParameterError(f"{tag} takes no relaxation parameter")
        return cls(tag)

    @property
    def symmetric(self):
        return self.tag in ("richardson", "jacobi", "ssor")

    def __str__(self):
        return self.tag if self.tag in ("gs", "jacobi") else f"{self.tag}:{self.omega:g}"


class Splitting:
    """A = M - N for one :class:`SplittingKind`.

    With ``perm`` the splitting is built on P A P^T, which changes the sweep
    order; vectors passed in and out stay in the original ordering.
    """

    def __init__(self, A, kind, perm=None):
        if isinstance(kind, str):
            kind = SplittingKind.parse(kind)
        self.kind = kind
        self.original = A
        if perm is not None:
            perm = np.asarray(perm, dtype=np.int64)
            A = A.permuted(perm)
        self.perm = perm
        self.A = A
        self.n = A.n
        self.omega = kind.omega
        d = A.diagonal
        self.d = d
        self.d_sqrt = np.sqrt(d)
        self.d_inv = 1.0 / d
        w = self.omega
        self.gamma = math.sqrt(2.0 / w - 1.0) if kind.tag in ("sor", "ssor") else None
        # SOR pieces: M_sor = D/w + L, N_sor = (1/w - 1) D - U
        self._msor = A.view("lower+diag", 1.0 / w)
        self._ssor_c = w / (2.0 - w) if kind.tag == "ssor" else None

    @property
    def symmetric(self):
        return self.kind.symmetric

    # ordering helpers

    def _in(self, x):
        x2, was_1d = as_columns(x, self.n)
        if self.perm is not None:
            x2 = x2[self.perm]
        return x2, was_1d

    def _out(self, y, was_1d):
        if self.perm is not None:
            out = np.empty_like(y)
            out[self.perm] = y
            y = out
        return y[:, 0] if was_1d else y

    # SOR building blocks, in the internal ordering

    def sor_solve(self, r, transpose=False, flops=None):
        """M_sor^{-1} r, or M_sor^{-T} r."""
        T = self._msor.T if transpose else self._msor
        return tri_solve(T, r, flops)

    def sor_M(self, x, transpose=False, flops=None):
        T = self._msor.T if transpose else self._msor
        return spmv(T, x, flops)

    def sor_N(self, x, transpose=False, flops=None):
        """N_sor x = (1/w - 1) D x - U x, or its transpose."""
        part = "lower" if transpose else "upper"
        out = ((1.0 / self.omega - 1.0) * self.d)[:, None] * x - spmv(self.A.view(part), x, flops)
        _count(flops, 2 * self.n)
        return out

    def _scale(self, v, x, flops):
        _count(flops, self.n)
        return v[:, None] * x

    # actions

    def apply_A(self, x, flops=None):
        x2, was_1d = self._in(x)
        return self._out(spmv(self.A, x2, flops), was_1d)

    def apply_M(self, x, flops=None):
        x2, was_1d = self._in(x)
        return self._out(self._M(x2, flops), was_1d)

    def _M(self, x, flops=None):
        tag, w = self.kind.tag, self.omega
        if tag == "richardson":
            _count(flops, self.n)
            return x / w
        if tag == "jacobi":
            return self._scale(self.d, x, flops)
        if tag in ("gs", "sor"):
            return self.sor_M(x, False, flops)
        y = self.sor_M(x, True, flops)
        y = self._scale(self.d_inv, y, flops)
        y = self.sor_M(y, False, flops)
        _count(flops, self.n)
        return self._ssor_c * y

    def apply_M_inverse(self, r, flops=None):
        r2, was_1d = self._in(r)
        return self._out(self._Minv(r2, flops), was_1d)

    def _Minv(self, r, flops=None):
        tag, w = self.kind.tag, self.omega
        if tag == "richardson":
            _count(flops, self.n)
            return w * r
        if tag == "jacobi":
            return self._scale(self.d_inv, r, flops)
        if tag in ("gs", "sor"):
            return self.sor_solve(r, False, flops)
        u = self.sor_solve(r, False, flops)
        u = self._scale(self.d / self._ssor_c, u, flops)
        return self.sor_solve(u, True, flops)

    def apply_N(self, x, flops=None, direct=True):
        """N x, either from the explicit form of N or as M x - A x."""
        x2, was_1d = self._in(x)
        return self._out(self._N(x2, flops, direct), was_1d)

    def _N(self, x, flops=None, direct=True):
        tag = self.kind.tag
        if not direct or tag == "richardson":
            out = self._M(x, flops) - spmv(self.A, x, flops)
            _count(flops, self.n)
            return out
        if tag == "jacobi":
            out = -spmv(self.A.view("lower"), x, flops) - spmv(self.A.view("upper"), x, flops)
            _count(flops, self.n)
            return out
        if tag in ("gs", "sor"):
            return self.sor_N(x, False, flops)
        y = self.sor_N(x, False, flops)
        y = self._scale(self.d_inv, y, flops)
        y = self.sor_N(y, True, flops)
        _count(flops, self.n)
        return self._ssor_c * y

    def iterate(self, x, b, flops=None):
        """One stationary step x + M^{-1}(b - A x), in the internal ordering."""
        return x + self._Minv(b - spmv(self.A, x, flops), flops)

    # dense forms, for tests and oracles

    def _dense_check(self):
        if self.n > DENSE_NOISE_LIMIT:
            raise ResourceError(f"dense splitting matrices are limited to n <= {DENSE_NOISE_LIMIT}")

    def dense_M(self):
        self._dense_check()
        return self.apply_M(np.eye(self.n))

    def dense_N(self):
        self._dense_check()
        return self.apply_N(np.eye(self.n))

    def dense_M_inverse(self):
        self._dense_check()
        return self.apply_M_inverse(np.eye(self.n))

    def iteration_matrix(self):
        """G = M^{-1} N as a dense array."""
        self._dense_check()
        return self.apply_M_inverse(self.dense_N())

    def noise_covariance(self):
        """M^T + N as a dense array."""
        return self.dense_M().T + self.dense_N()

    def __repr__(self):
        return f"Splitting({self.kind}, n={self.n})"


def make_splitting(A: SparseSpd, kind, perm=None):
    return Splitting(A, kind, perm)


@dataclass
class NoiseSpec:
    """Noise vector c ~ N(nu, M^T + N) for a splitting."""

    splitting: Splitting
    nu: np.ndarray | None = None
    method: str = ""
    _chol: np.ndarray | None = field(default=None, repr=False)

    def __post_init__(self):
        s = self.splitting
        if self.nu is not None:
            self.nu = np.asarray(self.nu, dtype=float)
            if self.nu.shape != (s.n,):
                raise ParameterError(f"nu has shape {self.nu.shape}, expected ({s.n},)")
        tag = s.kind.tag
        expected = {"gs": "diagonal-scale", "sor": "diagonal-scale", "ssor": "two-factor-ssor"}.get(
            tag, "dense-cholesky-fallback"
        )
        if self.method and self.method != expected:
            raise ParameterError(f"{tag} noise uses {expected}, not {self.method}")
        self.method = expected
        if expected == "dense-cholesky-fallback":
            if s.n > DENSE_NOISE_LIMIT:
                raise ResourceError(
                    f"{tag} noise needs a dense Cholesky factor, limited to n <= {DENSE_NOISE_LIMIT}"
                )
            warnings.warn(
                f"{tag} noise uses a dense Cholesky factor; this sampler does not scale",
                RuntimeWarning,
                stacklevel=3,
            )
            cov = s.noise_covariance()
            cov = 0.5 * (cov + cov.T)
            try:
                self._chol = np.linalg.cholesky(cov)
            except np.linalg.LinAlgError:
                raise NoiseCovarianceError(
                    f"M^T + N is not positive definite for {s.kind}; the sampler cannot converge"
                ) from None


def ssor_m_factor(s: Splitting, z, flops=None):
    """sqrt(w/(2-w)) M_sor D^{-1/2} z, a draw with covariance M_ssor."""
    c = math.sqrt(s.omega / (2.0 - s.omega))
    y = s.sor_M((1.0 / s.d_sqrt)[:, None] * z, False, flops)
    _count(flops, 2 * s.n)
    return c * y


def ssor_n_factor(s: Splitting, z, flops=None):
    """sqrt(w/(2-w)) N_sor^T D^{-1/2} z, a draw with covariance N_ssor."""
    c = math.sqrt(s.omega / (2.0 - s.omega))
    y = s.sor_N((1.0 / s.d_sqrt)[:, None] * z, True, flops)
    _count(flops, 2 * s.n)
    return c * y


def _noise_internal(spec: NoiseSpec, rng, m=None, flops=None):
    """Zero-mean noise in the splitting's internal ordering, shape (n, C)."""
    s = spec.splitting
    n = s.n
    z = normals(rng, n, m)
    z = z.reshape(n, -1)
    if spec.method == "diagonal-scale":
        _count(flops, n)
        return (math.sqrt((2.0 - s.omega) / s.omega) * s.d_sqrt)[:, None] * z
    if spec.method == "two-factor-ssor":
        z2 = normals(rng, n, m).reshape(n, -1)
        return ssor_m_factor(s, z, flops) + ssor_n_factor(s, z2, flops)
    _count(flops, n * n)
    return spec._chol @ z


def sample_noise(spec: NoiseSpec, rng, m=None, flops=None):
    """Draw nu + xi with Var(xi) = M^T + N.

    ``rng`` is a numpy Generator (one draw, or ``m`` columns) or a
    :class:`~splitgibbs.streams.ChainStreams` block (one column per chain).
    """
    s = spec.splitting
    xi = _noise_internal(spec, rng, m, flops)
    if s.perm is not None:
        out = np.empty_like(xi)
        out[s.perm] = xi
        xi = out
    if spec.nu is not None:
        xi = xi + spec.nu[:, None]
    if m is None and not isinstance(rng, ChainStreams):
        return xi[:, 0]
    return xi
