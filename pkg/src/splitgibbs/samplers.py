"""Samplers for N(A^{-1} nu, A^{-1}) given a sparse precision A.

Every sampler works on blocks of chains stored as (n, C) arrays, one column
per chain. Randomness comes from a numpy ``Generator`` (one chain, or ``m``
columns) or from :class:`~splitgibbs.streams.ChainStreams` (one stream per
chain, used by :func:`run_chains`).
"""
from __future__ import annotations

import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field

import numpy as np

from . import _kernels as K
from .diagnostics import MomentTracker
from .errors import CoefficientBreakdownError, ContractError, NotPositiveDefiniteError, ParameterError
from .solvers import ChebyState, EigEstimate, cheby_params_next
from .sparse_core import BandedCholesky, FlopCounter, SparseSpd, _count, as_columns, banded_cholesky, spmv
from .splittings import NoiseSpec, Splitting, _noise_internal, ssor_m_factor, ssor_n_factor
from .streams import ChainStreams, normals


@dataclass
class TargetSpec:
    """Precision A and noise mean nu; the target mean A^{-1} nu is never formed."""

    A: SparseSpd
    nu: np.ndarray | None = None
    mode: str = "zero-mean"

    def __post_init__(self):
        if self.mode not in ("zero-mean", "implicit-mean"):
            raise ParameterError(f"unknown target mode {self.mode!r}")
        if self.mode == "zero-mean":
            if self.nu is not None and np.any(np.asarray(self.nu) != 0):
                raise ParameterError("zero-mean targets cannot carry a nonzero nu")
            self.nu = None
        else:
            if self.nu is None:
                raise ParameterError("implicit-mean targets need nu")
            self.nu = np.asarray(self.nu, dtype=float)
            if self.nu.shape != (self.A.n,):
                raise ParameterError(f"nu has shape {self.nu.shape}, expected ({self.A.n},)")

    @classmethod
    def with_mean(cls, A, nu):
        return cls(A, nu, "implicit-mean")


@dataclass(frozen=True)
class ChebyNoiseCoeffs:
    """Var(c_k) = a M + b N at iteration k.

    ``kappa`` is kappa_k and ``kappa_next`` is kappa_{k+1}.
    """

    a: float
    b: float
    kappa: float
    kappa_next: float
    k: int = 0


def cheby_noise_coeffs_next(prev: ChebyNoiseCoeffs | None, st: ChebyState) -> ChebyNoiseCoeffs:
    """Noise coefficients for the iteration described by ``st``.

    ``prev`` is the previous iteration's coefficients, or None at k = 0,
    where kappa_1 = tau_0.
    """
    alpha, tau = st.alpha, st.tau
    if prev is None:
        if alpha != 1.0:
            raise ContractError("the first Chebyshev step must have alpha = 1")
        kappa = tau
    else:
        kappa = prev.kappa_next
    if not kappa > 0:
        raise CoefficientBreakdownError(f"kappa_{st.k} = {kappa:.6g} is not positive")
    b = 2.0 * (1.0 - alpha) / alpha * (kappa / tau) + 1.0
    a = (2.0 - tau) / tau + (b - 1.0) * (1.0 / tau + 1.0 / kappa - 1.0)
    if not a > 0 or not b > 0:
        raise CoefficientBreakdownError(
            f"noise coefficients broke down at k = {st.k}: a = {a:.6g}, b = {b:.6g}, "
            f"alpha = {alpha:.6g}, tau = {tau:.6g}, kappa = {kappa:.6g}"
        )
    kappa_next = alpha * tau + (1.0 - alpha) * kappa
    return ChebyNoiseCoeffs(a, b, kappa, kappa_next, st.k)


@dataclass
class SampleChain:
    """State of a block of chains. Arrays are (n,) for one chain, else (n, C)."""

    y_curr: np.ndarray
    y_prev: np.ndarray | None
    k: int
    flops: FlopCounter
    trace: list = field(default_factory=list)
    rng: object = None


# reference samplers


def cholesky_sample_cov(Sigma, rng, m=None, flops=None):
    """C z with Sigma = C C^T."""
    if isinstance(Sigma, SparseSpd):
        B = banded_cholesky(Sigma, flops)
        z = normals(rng, Sigma.n, m)
        return B.matvec(z, flops)
    Sigma = np.asarray(Sigma, dtype=float)
    try:
        C = np.linalg.cholesky(Sigma)
    except np.linalg.LinAlgError as exc:
        raise NotPositiveDefiniteError(f"covariance is not positive definite: {exc}") from exc
    n = Sigma.shape[0]
    _count(flops, n**3 // 3)
    z = normals(rng, n, m)
    _count(flops, n * n)
    return C @ z


def cholesky_sample_prec(A: SparseSpd, rng, m=None, factor: BandedCholesky | None = None, flops=None):
    """Solve B^T y = z with A = B B^T, so Var(y) = A^{-1}."""
    B = factor if factor is not None else banded_cholesky(A, flops)
    z = normals(rng, A.n, m)
    return B.solve_transpose(z, flops)


def gibbs_sweep_componentwise(A: SparseSpd, y, rng=None, z=None, flops=None):
    """One natural-order Gibbs sweep, in place on ``y`` (float64, (n,) or (n, C))."""
    if not isinstance(y, np.ndarray) or y.dtype != np.float64 or not y.flags.c_contiguous:
        raise ParameterError("y must be a C-contiguous float64 array to be updated in place")
    y2 = y.reshape(A.n, -1)
    if z is None:
        z = normals(rng, A.n, None if y.ndim == 1 and not isinstance(rng, ChainStreams) else y2.shape[1])
    z2, _ = as_columns(z, A.n)
    if z2.shape != y2.shape:
        raise ParameterError("noise and state shapes differ")
    K.gibbs_sweep(A.row_offsets, A.col_indices, A.values, A.diagonal, y2, z2)
    _count(flops, 2 * A.nnz + 2 * A.n)
    return y


# iteration engines: each works in the splitting's internal ordering on (n, C) blocks


class _Engine:
    second_order = False

    def __init__(self, s: Splitting, target: TargetSpec | None):
        if target is not None and target.A.n != s.n:
            raise ParameterError("target and splitting have different dimensions")
        self.s = s
        nu = None if target is None else target.nu
        if nu is not None and s.perm is not None:
            nu = nu[s.perm]
        self.nu = nu

    def _add_nu(self, c):
        if self.nu is not None:
            c = c + self.nu[:, None]
        return c


class StationaryEngine(_Engine):
    """y <- M^{-1}(N y + c), c ~ N(nu, M^T + N)."""

    def __init__(self, s, target=None, mean_only=False):
        super().__init__(s, target)
        self.mean_only = mean_only
        self.noise = None if mean_only else NoiseSpec(s)

    def step(self, y, y_prev, k, rng, flops):
        s = self.s
        if self.mean_only:
            c = np.zeros_like(y)
        else:
            c = _noise_internal(self.noise, rng, y.shape[1], flops)
        c = self._add_nu(c)
        out = s._Minv(s._N(y, flops) + c, flops)
        _count(flops, s.n)
        return out, None


class SSOREngine(_Engine):
    """Forward SOR sweep then backward SOR sweep, each with its own noise."""

    def __init__(self, s, target=None, mean_only=False):
        if s.kind.tag != "ssor":
            raise ContractError(f"SSOR sampling needs an SSOR splitting, got {s.kind}")
        super().__init__(s, target)
        self.mean_only = mean_only
        self.scale = s.gamma * s.d_sqrt

    def _half_noise(self, y, rng, flops):
        if self.mean_only:
            c = np.zeros_like(y)
        else:
            c = self.scale[:, None] * normals(rng, self.s.n, y.shape[1]).reshape(y.shape)
            _count(flops, self.s.n)
        return self._add_nu(c)

    def step(self, y, y_prev, k, rng, flops):
        s = self.s
        x = s.sor_solve(s.sor_N(y, False, flops) + self._half_noise(y, rng, flops), False, flops)
        y = s.sor_solve(s.sor_N(x, True, flops) + self._half_noise(y, rng, flops), True, flops)
        _count(flops, 2 * s.n)
        return y, None


class ChebyEngine(_Engine):
    """Second-order Chebyshev sampler.

    c_k = nu + sqrt(a_k) m + sqrt(b_k) n, where m and n are independent draws
    with covariances M and N built from SOR sweeps.
    """

    second_order = True

    def __init__(self, s, target=None, eig: EigEstimate | None = None, schedule=None, mean_only=False,
                 minimax=True):
        if s.kind.tag != "ssor":
            raise ContractError(f"Chebyshev sampling needs a symmetric SSOR splitting, got {s.kind}")
        if eig is None and schedule is None:
            raise ParameterError("need eigenvalue bounds or an explicit schedule")
        super().__init__(s, target)
        self.eig = eig
        self.schedule = list(schedule) if schedule is not None else None
        self.mean_only = mean_only
        self._params = []
        self._coeffs = []
        self._st = ChebyState.from_eig(eig, minimax) if eig is not None else None

    def params(self, k):
        """(alpha_k, tau_k, coefficients_k), computed lazily and shared by all blocks."""
        while len(self._params) <= k:
            j = len(self._params)
            if self.schedule is not None:
                if j >= len(self.schedule):
                    raise ParameterError("schedule is shorter than the requested run")
                alpha, tau = self.schedule[j]
                st = ChebyState(0.0, 0.0, tau, 0.0, alpha, j)
            else:
                st = self._st
                self._st = cheby_params_next(st)
            prev = self._coeffs[-1] if self._coeffs else None
            coeffs = cheby_noise_coeffs_next(prev, st)
            self._params.append((st.alpha, st.tau))
            self._coeffs.append(coeffs)
        alpha, tau = self._params[k]
        return alpha, tau, self._coeffs[k]

    def step(self, y, y_prev, k, rng, flops):
        s = self.s
        alpha, tau, co = self.params(k)
        C = y.shape[1]
        if self.mean_only:
            c = np.zeros_like(y)
        else:
            z1 = normals(rng, s.n, C).reshape(y.shape)
            z2 = normals(rng, s.n, C).reshape(y.shape)
            c = math.sqrt(co.a) * ssor_m_factor(s, z1, flops) + math.sqrt(co.b) * ssor_n_factor(s, z2, flops)
            _count(flops, 3 * s.n)
        c = self._add_nu(c)
        u = s._Minv(c - spmv(s.A, y, flops), flops)
        prev = y if y_prev is None else y_prev
        y_new = (1.0 - alpha) * prev + alpha * y + (alpha * tau) * u
        _count(flops, 6 * s.n)
        return y_new, y


def _to_internal(s, y):
    return y if s.perm is None else y[s.perm]


def _to_original(s, y):
    if s.perm is None:
        return y
    out = np.empty_like(y)
    out[s.perm] = y
    return out


def _run(engine: _Engine, y0, kmax, rng, record, m=None, flops=None):
    s = engine.s
    flops = flops if flops is not None else FlopCounter()
    single = m is None and not isinstance(rng, ChainStreams)
    C = len(rng) if isinstance(rng, ChainStreams) else (m or 1)
    if y0 is None:
        y = np.zeros((s.n, C))
    else:
        y0 = np.asarray(y0, dtype=float)
        y = np.repeat(y0[:, None], C, axis=1) if y0.ndim == 1 else y0.copy()
        if y.shape != (s.n, C):
            raise ParameterError(f"y0 has shape {y0.shape}, expected ({s.n},) or ({s.n}, {C})")
    y = _to_internal(s, y)
    y_prev = None

    def out(v):
        if v is None:
            return None
        v = _to_original(s, v)
        return v[:, 0].copy() if single else v.copy()

    trace = [out(y)] if record else []
    for k in range(kmax):
        y, y_prev = engine.step(y, y_prev, k, rng, flops)
        if record:
            trace.append(out(y))
    return SampleChain(out(y), out(y_prev), kmax, flops, trace, rng)


def _as_splitting(A, kind):
    return kind if isinstance(kind, Splitting) else Splitting(A, kind)


def stationary_sample(s: Splitting, target: TargetSpec | None = None, y0=None, kmax=1, rng=None, record=False,
                      m=None, mean_only=False, flops=None):
    """Run y_{k+1} = M^{-1}(N y_k + c_k) for ``kmax`` iterations."""
    return _run(StationaryEngine(s, target, mean_only), y0, kmax, rng, record, m, flops)


def ssor_sample(A: SparseSpd, omega, target: TargetSpec | None = None, y0=None, kmax=1, rng=None, record=False,
                m=None, mean_only=False, flops=None):
    """Forward and backward SOR sweeps with noise gamma D^{1/2} z, gamma = sqrt(2/w - 1)."""
    s = _as_splitting(A, f"ssor:{float(omega)!r}")
    return _run(SSOREngine(s, target, mean_only), y0, kmax, rng, record, m, flops)


def cheby_sample(A: SparseSpd, omega, target: TargetSpec | None = None, eig: EigEstimate | None = None, y0=None,
                 kmax=1, rng=None, record=False, m=None, schedule=None, mean_only=False, minimax=True,
                 flops=None):
    """Chebyshev-accelerated SSOR sampler.

    ``mean_only`` switches the noise off, which propagates the chain mean
    exactly (it is then a Chebyshev solve of A x = nu).
    """
    s = _as_splitting(A, f"ssor:{float(omega)!r}")
    return _run(ChebyEngine(s, target, eig, schedule, mean_only, minimax), y0, kmax, rng, record, m, flops)


# many chains


@dataclass
class MultiChainResult:
    """Final states (n, chains) and, per iteration, a merged MomentTracker."""

    y: np.ndarray
    trackers: list
    flops_per_chain: int
    seed: int


def run_chains(engine: _Engine, chains, iters, seed, y0=None, threads=1, block=None, track=True):
    """Run ``chains`` independent chains for ``iters`` iterations.

    Chain i always uses the stream ``SeedSequence(seed, spawn_key=(i,))``, so
    the result is the same for any ``threads`` and ``block``.
    """
    if chains < 1 or iters < 0:
        raise ParameterError("need chains >= 1 and iters >= 0")
    s = engine.s
    block = block or max(1, math.ceil(chains / max(1, threads)))
    starts = list(range(0, chains, block))

    def work(start):
        ids = range(start, min(start + block, chains))
        rng = ChainStreams(seed, ids)
        C = len(ids)
        if y0 is None:
            y = np.zeros((s.n, C))
        else:
            y = np.repeat(_to_internal(s, np.asarray(y0, dtype=float))[:, None], C, axis=1)
        y_prev = None
        flops = FlopCounter()
        trackers = []
        if track:
            trackers.append(MomentTracker.from_batch(_to_original(s, y)))
        for k in range(iters):
            counted = flops if start == 0 else None
            y, y_prev = engine.step(y, y_prev, k, rng, counted)
            if track:
                trackers.append(MomentTracker.from_batch(_to_original(s, y)))
        return start, _to_original(s, y), trackers, flops

    if iters and engine.second_order:
        engine.params(iters - 1)  # fill the shared schedule before threads start
    if threads > 1 and len(starts) > 1:
        with ThreadPoolExecutor(max_workers=threads) as ex:
            results = list(ex.map(work, starts))
    else:
        results = [work(st) for st in starts]
    results.sort(key=lambda r: r[0])
    y = np.concatenate([r[1] for r in results], axis=1)
    trackers = []
    if track:
        for k in range(iters + 1):
            t = results[0][2][k]
            for r in results[1:]:
                t = t.merge(r[2][k])
            trackers.append(t)
    # the flop model counts one chain's work per block step
    return MultiChainResult(y, trackers, results[0][3].count, seed)


def cholesky_draws(A: SparseSpd, chains, seed, threads=1, block=None):
    """Exact draws from N(0, A^{-1}), one per chain stream, shape (n, chains)."""
    B = banded_cholesky(A)
    block = block or chains
    out = []
    for start in range(0, chains, block):
        rng = ChainStreams(seed, range(start, min(start + block, chains)))
        out.append(cholesky_sample_prec(A, rng, factor=B))
    return np.concatenate(out, axis=1)
