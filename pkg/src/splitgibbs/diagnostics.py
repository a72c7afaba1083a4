"""Moment tracking, covariance errors, exact moment propagation and error polynomials."""
from __future__ import annotations

import csv
from dataclasses import dataclass

import numpy as np

from .errors import ContractError, ParameterError, ResourceError
from .solvers import ChebyState, EigEstimate, cheby_params_next

TRACK_LIMIT = 2000
ORACLE_LIMIT = 200


class MomentTracker:
    """Running mean and covariance with a mergeable one-pass update.

    Stores the count, the mean and the matrix of summed squared deviations.
    """

    def __init__(self, n, count=0, mean=None, m2=None):
        if n > TRACK_LIMIT:
            raise ResourceError(f"dense covariance tracking is limited to n <= {TRACK_LIMIT}")
        self.n = n
        self.count = count
        self.mean = np.zeros(n) if mean is None else mean
        self.m2 = np.zeros((n, n)) if m2 is None else m2

    @classmethod
    def from_batch(cls, X):
        """Tracker for the columns of an (n, C) array."""
        X = np.asarray(X, dtype=float)
        if X.ndim == 1:
            X = X[:, None]
        n, c = X.shape
        mean = X.mean(axis=1)
        D = X - mean[:, None]
        return cls(n, c, mean, D @ D.T)

    def update(self, draw):
        """Add one draw (n,) or a batch (n, C)."""
        draw = np.asarray(draw, dtype=float)
        if draw.shape[0] != self.n:
            raise ParameterError(f"draw has length {draw.shape[0]}, expected {self.n}")
        other = MomentTracker.from_batch(draw)
        merged = self.merge(other)
        self.count, self.mean, self.m2 = merged.count, merged.mean, merged.m2
        return self

    def merge(self, other):
        """Combine two trackers (pairwise update for mean and deviation sums)."""
        if other.n != self.n:
            raise ParameterError("trackers have different dimensions")
        if self.count == 0:
            return MomentTracker(other.n, other.count, other.mean.copy(), other.m2.copy())
        if other.count == 0:
            return MomentTracker(self.n, self.count, self.mean.copy(), self.m2.copy())
        na, nb = self.count, other.count
        nt = na + nb
        delta = other.mean - self.mean
        mean = self.mean + delta * (nb / nt)
        m2 = self.m2 + other.m2 + np.outer(delta, delta) * (na * nb / nt)
        return MomentTracker(self.n, nt, mean, m2)

    @property
    def cov(self):
        if self.count < 2:
            return np.zeros((self.n, self.n))
        return self.m2 / (self.count - 1)


def update_moments(t: MomentTracker, draw):
    return t.update(draw)


def _sym_norm(X):
    X = 0.5 * (X + X.T)
    return float(np.max(np.abs(np.linalg.eigvalsh(X)))) if X.size else 0.0


def cov_rel_error(S, Sigma, Sigma_norm=None):
    """||Sigma - S||_2 / ||Sigma||_2 from a dense symmetric eigensolver."""
    S = np.asarray(S, dtype=float)
    Sigma = np.asarray(Sigma, dtype=float)
    if S.shape != Sigma.shape or S.ndim != 2 or S.shape[0] != S.shape[1]:
        raise ParameterError("matrices must be square and of equal size")
    if S.shape[0] > TRACK_LIMIT:
        raise ResourceError(f"covariance error is limited to n <= {TRACK_LIMIT}")
    denom = Sigma_norm if Sigma_norm is not None else _sym_norm(Sigma)
    return _sym_norm(Sigma - S) / denom


# exact moment propagation


class ExactMomentOracle:
    """Exact mean, covariance and lag-one cross covariance of a splitting sampler.

    With no schedule the chain is first order, y' = G y + M^{-1} c. A
    Chebyshev schedule (an EigEstimate, or (alpha, tau) pairs) gives the
    second-order chain, propagated through the 2n x 2n block recursion with
    Var(c_k) = a_k M + b_k N.

    ``cross`` holds Cov(y_k, y_{k-1}).
    """

    def __init__(self, splitting, schedule=None, nu=None, mean0=None, cov0=None, noise_cov=None, minimax=True):
        s = splitting
        if s.n > ORACLE_LIMIT:
            raise ContractError(f"exact oracles are limited to n <= {ORACLE_LIMIT}")
        if s.perm is not None:
            raise ContractError("exact oracles work in the natural ordering")
        self.s = s
        n = s.n
        self.A = s.A.todense()
        self.M = s.dense_M()
        self.N = s.dense_N()
        self.Minv = s.dense_M_inverse()
        self.G = self.Minv @ self.N
        self.T = self.Minv @ self.A
        self.nu = np.zeros(n) if nu is None else np.asarray(nu, dtype=float)
        self.mean = np.zeros(n) if mean0 is None else np.asarray(mean0, dtype=float).copy()
        self.cov = np.zeros((n, n)) if cov0 is None else np.asarray(cov0, dtype=float).copy()
        self.mean_prev = self.mean.copy()
        self.cross = self.cov.copy()
        self.cov_prev = self.cov.copy()
        self.k = 0
        self.noise_cov = noise_cov
        self.second_order = schedule is not None
        self.coeffs = []
        if self.second_order:
            if not s.symmetric:
                raise ContractError("second-order propagation needs a symmetric splitting")
            self._schedule = schedule
            self._st = ChebyState.from_eig(schedule, minimax) if isinstance(schedule, EigEstimate) else None
            self._prev_coeffs = None
        elif noise_cov is None:
            self.noise_cov = self.M.T + self.N

    def _next_params(self):
        from .samplers import cheby_noise_coeffs_next

        if self._st is not None:
            st = self._st
            self._st = cheby_params_next(st)
        else:
            alpha, tau = self._schedule[self.k]
            st = ChebyState(0.0, 0.0, tau, 0.0, alpha, self.k)
        co = cheby_noise_coeffs_next(self._prev_coeffs, st)
        self._prev_coeffs = co
        self.coeffs.append(co)
        return st.alpha, st.tau, co

    def step(self):
        n = self.A.shape[0]
        if not self.second_order:
            G, Minv = self.G, self.Minv
            new_mean = G @ self.mean + Minv @ self.nu
            new_cov = G @ self.cov @ G.T + Minv @ self.noise_cov @ Minv.T
            cross = G @ self.cov
        else:
            alpha, tau, co = self._next_params()
            Ga = alpha * (np.eye(n) - tau * self.T)
            V = co.a * self.M + co.b * self.N if self.noise_cov is None else self.noise_cov
            W = (alpha * tau) ** 2 * self.Minv @ V @ self.Minv.T
            prev_mean = self.mean_prev if self.k > 0 else self.mean
            prev_cov = self.cov_prev if self.k > 0 else self.cov
            prev_cross = self.cross if self.k > 0 else self.cov
            # y' = Ga y + (1 - alpha) y_prev + noise
            b = 1.0 - alpha
            new_mean = Ga @ self.mean + b * prev_mean + alpha * tau * (self.Minv @ self.nu)
            GK = Ga @ prev_cross
            new_cov = Ga @ self.cov @ Ga.T + b * (GK + GK.T) + b * b * prev_cov + W
            cross = Ga @ self.cov + b * prev_cross.T
        self.mean_prev, self.cov_prev = self.mean, self.cov
        self.mean = new_mean
        self.cov = 0.5 * (new_cov + new_cov.T)
        self.cross = cross
        self.k += 1
        return self


def propagate_exact(o: ExactMomentOracle, steps):
    for _ in range(steps):
        o.step()
    return o


# error polynomials


@dataclass
class ErrorPolynomial:
    """P_0 = 1, P_{k+1} = alpha_k (1 - tau_k x) P_k + (1 - alpha_k) P_{k-1}."""

    schedule: list

    @classmethod
    def chebyshev(cls, lam_min, lam_max, k, minimax=True):
        st = ChebyState.start(lam_min, lam_max, minimax)
        sched = []
        for _ in range(k):
            sched.append((st.alpha, st.tau))
            st = cheby_params_next(st)
        return cls(sched)

    @classmethod
    def stationary(cls, k):
        return cls([(1.0, 1.0)] * k)


def eval_error_polynomial(p: ErrorPolynomial, lam, k):
    if k > len(p.schedule):
        raise ContractError(f"schedule has {len(p.schedule)} entries, asked for P_{k}")
    lam = np.asarray(lam, dtype=float)
    prev = np.ones_like(lam)
    cur = np.ones_like(lam)
    for j in range(k):
        alpha, tau = p.schedule[j]
        nxt = alpha * (1.0 - tau * lam) * cur + (1.0 - alpha) * prev
        prev, cur = cur, nxt
    return cur if cur.ndim else float(cur)


def error_polynomial_matrix(p: ErrorPolynomial, T, k):
    """P_k(T) through an eigendecomposition of T (assumed to have real spectrum)."""
    lam, V = np.linalg.eig(T)
    lam, V = lam.real, V.real
    return V @ np.diag(eval_error_polynomial(p, lam, k)) @ np.linalg.inv(V)


def fit_decay_factor(errors, start=None, stop=None):
    """exp of the least-squares slope of log(errors) over iterations [start, stop].

    Defaults to the late window [k/2, k].
    """
    e = np.asarray(errors, dtype=float)
    k = e.size - 1
    start = k // 2 if start is None else start
    stop = k if stop is None else stop
    idx = np.arange(start, stop + 1)
    if idx.size < 2 or np.any(~(e[idx] > 0)):
        raise ContractError("need at least two positive errors in the fit window")
    slope = np.polyfit(idx, np.log(e[idx]), 1)[0]
    return float(np.exp(slope))


def write_moment_csv(path, rows):
    """Rows of (k, flops, rel_cov_error, mean_error); None is written as an empty field."""
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["k", "flops", "rel_cov_error", "mean_error"])
        for r in rows:
            w.writerow([int(r[0]), int(r[1])] + ["" if v is None else repr(float(v)) for v in r[2:4]])
