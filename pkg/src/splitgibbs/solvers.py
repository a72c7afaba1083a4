"""Stationary, Chebyshev-accelerated and conjugate-gradient linear solvers.

All solvers record the residual norm ``||b - A x_k||`` at every iteration,
starting with the initial guess, so ``residual_history[k]`` belongs to x_k.
"""
from __future__ import annotations

import math
from dataclasses import asdict, dataclass, replace

import numpy as np
import scipy.linalg

from .errors import ContractError, NumericError, ParameterError
from .sparse_core import FlopCounter, SparseSpd, _count, dense_spectral_radius, spmv
from .splittings import Splitting

DIVERGENCE_FACTOR = 1e6
LANCZOS_CAP = 200
LANCZOS_RTOL = 1e-3


@dataclass
class SolveReport:
    x: np.ndarray
    iterations: int
    residual_history: list
    flops: int
    estimated_factor: float | None = None
    converged: bool = False
    diverged: bool = False
    method: str = ""

    def to_dict(self):
        d = asdict(self)
        d.pop("x")
        d["residual_history"] = [float(v) for v in self.residual_history]
        return d


@dataclass(frozen=True)
class EigEstimate:
    lam_min: float
    lam_max: float
    lanczos_dim: int = 0
    source: str = "explicit"

    def __post_init__(self):
        if not (0 < self.lam_min <= self.lam_max) or not math.isfinite(self.lam_max):
            raise ParameterError(
                f"need 0 < lam_min <= lam_max, got ({self.lam_min}, {self.lam_max})"
            )

    @property
    def sigma(self):
        return chebyshev_sigma(self.lam_min, self.lam_max)


@dataclass(frozen=True)
class ChebyState:
    """Chebyshev acceleration scalars at iteration k.

    Each step applies beta_k = (1/tau - beta_{k-1} ((lam_max - lam_min)/4)^2)^{-1}
    and alpha_k = beta_k / tau, with alpha_0 = 1. Seeding the recursion with
    beta_0 = tau_0 gives alpha_1 = 1/(1 - rho^2/4), where
    rho = (lam_max - lam_min)/(lam_max + lam_min); the scaled Chebyshev
    (minimax) polynomial needs alpha_1 = 1/(1 - rho^2/2), i.e. beta_0 = 2 tau_0.
    Both starts share the asymptotic rate, but the beta_0 = tau_0 start
    carries an error factor that grows roughly like k. ``minimax=True`` (the
    default) uses beta_0 = 2 tau_0; ``minimax=False`` uses beta_0 = tau_0.
    """

    lam_min: float
    lam_max: float
    tau: float
    beta: float
    alpha: float
    k: int = 0

    @classmethod
    def start(cls, lam_min, lam_max, minimax=True):
        if lam_min + lam_max == 0:
            raise ParameterError("lam_min + lam_max must be nonzero")
        tau = 2.0 / (lam_max + lam_min)
        return cls(lam_min, lam_max, tau, 2.0 * tau if minimax else tau, 1.0, 0)

    @classmethod
    def from_eig(cls, eig, minimax=True):
        return cls.start(eig.lam_min, eig.lam_max, minimax)


def cheby_params_next(st: ChebyState) -> ChebyState:
    s = st.lam_max + st.lam_min
    if s == 0:
        raise ParameterError("lam_min + lam_max must be nonzero")
    tau = 2.0 / s
    denom = 1.0 / tau - st.beta * ((st.lam_max - st.lam_min) / 4.0) ** 2
    if denom == 0:
        raise ParameterError("Chebyshev recursion hit a zero denominator")
    beta = 1.0 / denom
    return replace(st, tau=tau, beta=beta, alpha=beta / tau, k=st.k + 1)


def cheby_schedule(eig, k, minimax=True):
    """The first ``k`` (alpha, tau) pairs."""
    st = ChebyState.from_eig(eig, minimax)
    out = []
    for _ in range(k):
        out.append((st.alpha, st.tau))
        st = cheby_params_next(st)
    return out


def chebyshev_sigma(lam_min, lam_max):
    """sigma = (1 - sqrt(r)) / (1 + sqrt(r)) with r = lam_min / lam_max."""
    r = math.sqrt(lam_min / lam_max)
    return (1.0 - r) / (1.0 + r)


def stationary_rho_bound(lam_min, lam_max):
    """Convergence factor of the best stationary step on [lam_min, lam_max]."""
    return (lam_max - lam_min) / (lam_max + lam_min)


def _prepare(s, b, x0):
    b2 = np.asarray(b, dtype=float)
    if b2.shape != (s.n,):
        raise ParameterError(f"b has shape {b2.shape}, expected ({s.n},)")
    x = np.zeros(s.n) if x0 is None else np.asarray(x0, dtype=float).copy()
    if x.shape != (s.n,):
        raise ParameterError(f"x0 has shape {x.shape}, expected ({s.n},)")
    if s.perm is not None:
        b2, x = b2[s.perm], x[s.perm]
    return b2[:, None].copy(), x[:, None].copy()


def _finish(s, x):
    x = x[:, 0]
    if s.perm is not None:
        out = np.empty_like(x)
        out[s.perm] = x
        x = out
    return x


def _check_tol(tol, kmax):
    if not tol > 0:
        raise ParameterError("tol must be positive")
    if kmax < 0:
        raise ParameterError("kmax must be non-negative")


def stationary_solve(s: Splitting, b, x0=None, tol=1e-8, kmax=1_000_000, flops=None):
    """x_{k+1} = x_k + M^{-1}(b - A x_k) until ||b - A x_k|| < tol.

    Hitting ``kmax`` or diverging returns a report with ``converged=False``.
    """
    _check_tol(tol, kmax)
    flops = flops if flops is not None else FlopCounter()
    b, x = _prepare(s, b, x0)
    A = s.A
    hist = []
    converged = diverged = False
    k = 0
    while True:
        r = b - spmv(A, x, flops)
        _count(flops, s.n)
        rn = float(np.linalg.norm(r))
        hist.append(rn)
        if rn < tol:
            converged = True
            break
        if not math.isfinite(rn) or rn > DIVERGENCE_FACTOR * max(hist[0], tol):
            diverged = True
            break
        if k >= kmax:
            break
        x += s._Minv(r, flops)
        _count(flops, s.n)
        k += 1
    return SolveReport(
        _finish(s, x), k, hist, flops.count, _safe_factor(hist), converged, diverged, f"stationary-{s.kind}"
    )


def chebyshev_solve(s: Splitting, b, eig: EigEstimate | None = None, x0=None, tol=1e-8, kmax=1_000_000,
                    schedule=None, minimax=True, flops=None):
    """Second-order Chebyshev iteration.

    ``schedule`` may replace the Chebyshev parameters with any iterable of
    (alpha, tau) pairs; constant (1, 1) gives back the stationary method.
    """
    if not s.symmetric:
        raise ContractError(f"Chebyshev acceleration needs a symmetric splitting, got {s.kind}")
    if eig is None and schedule is None:
        raise ParameterError("need eigenvalue bounds or an explicit schedule")
    _check_tol(tol, kmax)
    flops = flops if flops is not None else FlopCounter()
    b, x = _prepare(s, b, x0)
    x_prev = x.copy()
    A = s.A
    params = iter(schedule) if schedule is not None else None
    st = ChebyState.from_eig(eig, minimax) if eig is not None else None
    hist = []
    converged = diverged = False
    k = 0
    while True:
        r = b - spmv(A, x, flops)
        _count(flops, s.n)
        rn = float(np.linalg.norm(r))
        hist.append(rn)
        if rn < tol:
            converged = True
            break
        if not math.isfinite(rn) or rn > DIVERGENCE_FACTOR * max(hist[0], tol):
            diverged = True
            break
        if k >= kmax:
            break
        if params is not None:
            alpha, tau = next(params)
        else:
            alpha, tau = st.alpha, st.tau
            st = cheby_params_next(st)
        u = s._Minv(r, flops)
        x_new = (1.0 - alpha) * x_prev + alpha * x + (alpha * tau) * u
        _count(flops, 5 * s.n)
        x_prev, x = x, x_new
        k += 1
    return SolveReport(
        _finish(s, x), k, hist, flops.count, _safe_factor(hist), converged, diverged, f"chebyshev-{s.kind}"
    )


def _lanczos_extremes(alphas, betas):
    """Extreme Ritz values from CG step lengths ``alphas`` and ratios ``betas``."""
    j = len(alphas)
    diag = np.empty(j)
    off = np.empty(max(j - 1, 0))
    for i in range(j):
        diag[i] = 1.0 / alphas[i] + (betas[i - 1] / alphas[i - 1] if i > 0 else 0.0)
        if i < j - 1:
            off[i] = math.sqrt(betas[i]) / alphas[i]
    if j == 1:
        return diag[0], diag[0]
    ev = scipy.linalg.eigvalsh_tridiagonal(diag, off)
    return float(ev[0]), float(ev[-1])


def _pcg(A, b, precond, tol, kmax, x0, flops, on_step=None):
    n = A.n
    Minv = (lambda r: precond.apply_M_inverse(r, flops)) if precond is not None else (lambda r: r.copy())
    x = np.zeros(n) if x0 is None else np.asarray(x0, dtype=float).copy()
    r = b - spmv(A, x, flops)
    z = Minv(r)
    p = z.copy()
    rz = float(r @ z)
    hist = [float(np.linalg.norm(r))]
    alphas, betas = [], []
    converged = hist[0] < tol
    k = 0
    while not converged and k < kmax:
        Ap = spmv(A, p, flops)
        pAp = float(p @ Ap)
        if pAp <= 0 or rz <= 0:
            raise NumericError(f"CG breakdown at iteration {k}: p'Ap = {pAp:.3e}, r'z = {rz:.3e}")
        a = rz / pAp
        x += a * p
        r -= a * Ap
        z = Minv(r)
        rz_new = float(r @ z)
        beta = rz_new / rz
        p = z + beta * p
        _count(flops, 10 * n)
        alphas.append(a)
        betas.append(beta)
        rz = rz_new
        k += 1
        hist.append(float(np.linalg.norm(r)))
        converged = hist[-1] < tol
        if on_step is not None and on_step(alphas, betas):
            break
    return x, hist, alphas, betas, converged


def _upper(known_upper, precond):
    if known_upper == "auto":
        return 1.0 if precond is not None and precond.kind.tag == "ssor" else None
    return known_upper


def cg_solve(A: SparseSpd, b, precond: Splitting | None = None, tol=1e-8, kmax=10_000, x0=None,
             known_upper=None, flops=None):
    """Preconditioned CG; the Lanczos tridiagonal built from its scalars gives an EigEstimate.

    ``known_upper`` works as in :func:`estimate_eigenvalues`.
    """
    if precond is not None and not precond.symmetric:
        raise ContractError(f"CG needs a symmetric preconditioner, got {precond.kind}")
    _check_tol(tol, kmax)
    flops = flops if flops is not None else FlopCounter()
    b = np.asarray(b, dtype=float)
    if b.shape != (A.n,):
        raise ParameterError(f"b has shape {b.shape}, expected ({A.n},)")
    x, hist, alphas, betas, converged = _pcg(A, b, precond, tol, kmax, x0, flops)
    if alphas:
        lo, hi = _lanczos_extremes(alphas, betas)
        up = _upper(known_upper, precond)
        eig = EigEstimate(lo, hi if up is None else max(hi, float(up)), len(alphas), "cg-lanczos")
    else:
        eig = None
    name = "cg" if precond is None else f"cg-{precond.kind}"
    report = SolveReport(x, len(alphas), hist, flops.count, _safe_factor(hist), converged, False, name)
    return report, eig


def estimate_eigenvalues(A: SparseSpd, precond: Splitting | None = None, seed=0, rtol=LANCZOS_RTOL,
                         cap=LANCZOS_CAP, known_upper=None, flops=None):
    """Lanczos estimates of the extreme eigenvalues of M^{-1} A from a CG run on a random system.

    Stops once the smallest Ritz value moves by less than ``rtol`` relative
    between iterations, or after ``cap`` steps. Ritz values lie inside the
    spectrum, so the top estimate is low; ``known_upper`` replaces it with a
    bound known a priori. For an SSOR preconditioner N is positive
    semidefinite and the spectrum lies in (0, 1], so ``known_upper="auto"``
    uses 1 there and the raw estimate otherwise.
    """
    flops = flops if flops is not None else FlopCounter()
    b = np.random.default_rng(seed).standard_normal(A.n)
    state = {"prev": None, "est": None}

    def on_step(alphas, betas):
        lo, hi = _lanczos_extremes(alphas, betas)
        prev = state["prev"]
        state["prev"] = lo
        state["est"] = (lo, hi, len(alphas))
        return prev is not None and abs(lo - prev) < rtol * abs(lo)

    _pcg(A, b, precond, 1e-14 * float(np.linalg.norm(b)), cap, None, flops, on_step)
    if state["est"] is None:
        raise NumericError("Lanczos produced no estimate")
    lo, hi, j = state["est"]
    known_upper = _upper(known_upper, precond)
    if known_upper is not None:
        hi = max(hi, float(known_upper))
    return EigEstimate(lo, hi, j, "cg-lanczos")


def cg_auto_eigenvalues(A: SparseSpd, precond: Splitting | None, b=None, rtol=1e-8, kmax=10_000, seed=0,
                        flops=None):
    """Run CG once on A x = b to ``rtol * ||b||`` and keep its Lanczos estimate.

    A zero or missing ``b`` is replaced by a seeded standard normal vector.
    The SSOR upper bound of 1 is applied as in :func:`estimate_eigenvalues`.
    """
    if b is None or not np.any(b):
        b = np.random.default_rng(seed).standard_normal(A.n)
    b = np.asarray(b, dtype=float)
    report, eig = cg_solve(A, b, precond, rtol * float(np.linalg.norm(b)), kmax, known_upper="auto", flops=flops)
    if eig is None:
        raise NumericError("CG took no steps, so there is no Lanczos estimate")
    return eig


def dense_eigenvalues(s: Splitting, max_n=400):
    """Exact extreme eigenvalues of M^{-1} A for small problems."""
    if s.n > max_n:
        raise ContractError(f"dense eigenvalues are limited to n <= {max_n}")
    T = s.apply_M_inverse(s.A.todense() if s.perm is None else s.original.todense())
    ev = np.linalg.eigvals(T).real
    return EigEstimate(float(ev.min()), float(ev.max()), 0, "dense-exact")


def estimate_convergence_factor(history):
    """(e_k / e_j)^{1/(k - j)} over the last half of ``history``."""
    h = np.asarray(history, dtype=float)
    if h.size < 10:
        raise ContractError("need at least 10 history entries")
    if np.any(~(h > 0)):
        raise ContractError("history entries must be positive")
    k = h.size - 1
    j = k // 2
    return float((h[k] / h[j]) ** (1.0 / (k - j)))


def _safe_factor(hist):
    try:
        return estimate_convergence_factor(hist)
    except ContractError:
        return None


def predict_iterations(sigma, eps):
    """k* = ceil(ln(eps/2) / ln sigma)."""
    if not 0 < sigma < 1 or not 0 < eps < 1:
        raise ParameterError("need 0 < sigma < 1 and 0 < eps < 1")
    return math.ceil(math.log(eps / 2.0) / math.log(sigma))


def predict_variance_iterations(sigma, eps):
    """k** = k*/2, the iteration count after which the covariance error is below eps."""
    return math.ceil(predict_iterations(sigma, eps) / 2)


def spectral_radius(s: Splitting):
    return dense_spectral_radius(s.iteration_matrix())


def optimal_ssor_omega(A: SparseSpd, grid):
    """Grid minimiser of the SSOR spectral radius; ties go to the smaller omega."""
    grid = sorted(float(w) for w in grid)
    if not grid:
        raise ParameterError("empty omega grid")
    if A.n > 400:
        raise ContractError("optimal_ssor_omega uses dense eigenvalues, n <= 400")
    best = None
    for w in grid:
        rho = spectral_radius(Splitting(A, f"ssor:{w!r}"))
        if best is None or rho < best[1]:
            best = (w, rho)
    return best
