"""Reproduction recipes: lattice solver table, lattice sampler curves, 3-D inverse problem."""
from __future__ import annotations

import logging
import math

import numpy as np
import scipy.sparse.linalg as spla

from .diagnostics import cov_rel_error
from .errors import ResourceError
from .gmrf_models import (
    biofilm_forward,
    helmholtz3d_operator,
    helmholtz3d_precision,
    lattice2d_precision,
    node_positions,
    phantom_ellipsoid,
    posterior_spec,
    synth_data,
)
from .samplers import ChebyEngine, SSOREngine, cheby_sample, cholesky_draws, run_chains
from .solvers import (
    cg_auto_eigenvalues,
    cg_solve,
    chebyshev_solve,
    predict_iterations,
    predict_variance_iterations,
    spectral_radius,
    stationary_solve,
)
from .sparse_core import FlopCounter, banded_cholesky
from .splittings import Splitting

log = logging.getLogger(__name__)

SOR_OMEGA = 1.9852
SSOR_OMEGA = 1.6641
MAX_NNZ = 20_000_000


def lattice_rhs(A, rhs="ones", seed=0):
    """``ones`` gives b = A 1; ``random`` a seeded standard normal b."""
    if rhs == "ones":
        return A @ np.ones(A.n)
    if rhs == "random":
        return np.random.default_rng(seed).standard_normal(A.n)
    raise ValueError(f"unknown right-hand side {rhs!r}")


def table3(m=10, rhs="ones", seed=0, tol=1e-8, kmax=2_000_000, include_slow=True):
    """Solver comparison on the m x m lattice; one dict per row."""
    A = lattice2d_precision(m)
    b = lattice_rhs(A, rhs, seed)
    rows = []

    def add(name, omega, rho, rep):
        rows.append({
            "solver": name,
            "omega": omega,
            "rho": rho,
            "iterations": rep.iterations if rep is not None else None,
            "flops": rep.flops if rep is not None else None,
            "converged": bool(rep.converged) if rep is not None else None,
            "diverged": bool(rep.diverged) if rep is not None else None,
            "estimated_factor": rep.estimated_factor if rep is not None else None,
        })
        log.info("%s done", name)

    stationary = [("richardson", 1.0), ("jacobi", None), ("gs", None), ("ssor", SSOR_OMEGA), ("sor", SOR_OMEGA)]
    for tag, w in stationary:
        if not include_slow and tag in ("jacobi",):
            continue
        s = Splitting(A, tag if w is None else f"{tag}:{w}")
        rep = stationary_solve(s, b, tol=tol, kmax=kmax)
        add(tag, w, spectral_radius(s), rep)
    for w in (1.0, SSOR_OMEGA):
        s = Splitting(A, f"ssor:{w}")
        eig = cg_auto_eigenvalues(A, s, seed=seed)
        rep = chebyshev_solve(s, b, eig, tol=tol, kmax=kmax)
        add("cheby-ssor", w, eig.sigma, rep)
    rep, _ = cg_solve(A, b, None, tol=tol)
    add("cg", None, rep.estimated_factor, rep)
    rep, _ = cg_solve(A, b, Splitting(A, f"ssor:{SSOR_OMEGA}"), tol=tol)
    add("cg-ssor", SSOR_OMEGA, rep.estimated_factor, rep)
    fl = FlopCounter()
    B = banded_cholesky(A, fl)
    B.solve(b, fl)
    rows.append({"solver": "cholesky", "omega": None, "rho": None, "iterations": None, "flops": fl.count,
                 "converged": True, "diverged": False, "estimated_factor": None})
    return rows


def figure2(m=10, chains=10_000, iters=200, seed=1, threads=1, omegas=(SSOR_OMEGA, 1.0), stationary_omega=SSOR_OMEGA):
    """Covariance error curves of the lattice samplers against the Cholesky floor.

    Returns ``floor``, per-sampler ``curves`` of (k, flops, rel_cov_error,
    mean_error) and ``hits``, the first iteration at or below the floor.
    """
    A = lattice2d_precision(m)
    Ad = A.todense()
    Sigma = np.linalg.inv(Ad)
    Sigma_norm = float(np.linalg.eigvalsh(Sigma)[-1])
    Y = cholesky_draws(A, chains, seed)
    floor = cov_rel_error(np.cov(Y), Sigma, Sigma_norm)
    runs = []
    for w in omegas:
        s = Splitting(A, f"ssor:{w}")
        eig = cg_auto_eigenvalues(A, s, seed=seed)
        runs.append((f"cheby-ssor:{w:g}", ChebyEngine(s, eig=eig)))
    runs.append((f"ssor:{stationary_omega:g}", SSOREngine(Splitting(A, f"ssor:{stationary_omega}"))))
    curves, hits = {}, {}
    for name, engine in runs:
        res = run_chains(engine, chains, iters, seed, threads=threads)
        per_iter = res.flops_per_chain / iters if iters else 0.0
        curve = []
        for k, t in enumerate(res.trackers):
            curve.append((k, int(round(k * per_iter)), cov_rel_error(t.cov, Sigma, Sigma_norm),
                          float(np.linalg.norm(t.mean))))
        curves[name] = curve
        hits[name] = next((k for k, _, e, _ in curve if e <= floor), None)
        log.info("%s: first at floor %s", name, hits[name])
    return {"floor": floor, "curves": curves, "hits": hits, "chains": chains, "iters": iters, "seed": seed}


def estimate_posterior_nnz(dims, v):
    """Upper bound on nnz of F^T P F + H^2 before assembly."""
    n = int(np.prod(dims))
    return n * (25 + 2 * (int(v) - 1))


def inverse3d(dims=(24, 24, 24), v=4, R=0.25, omega=1.0, eps=1e-8, seed=7, max_nnz=MAX_NNZ, sample=True,
              direct_check=True):
    """Posterior mean and one posterior draw for the 3-D deconvolution problem."""
    dims = tuple(int(d) for d in dims)
    est = estimate_posterior_nnz(dims, v)
    if est > max_nnz:
        raise ResourceError(
            f"posterior precision for dims {dims} needs about {est:.3g} nonzeros, above the cap "
            f"max_nnz = {max_nnz:.3g}; raise --max-nnz if the machine has the memory"
        )
    Q = helmholtz3d_precision(dims, R)
    fm = biofilm_forward(dims, v)
    rng = np.random.default_rng(seed)
    x_true = phantom_ellipsoid(dims)
    y = synth_data(x_true, fm, rng)
    target = posterior_spec(fm.F, fm.P, Q, y)
    A = target.A
    s = Splitting(A, f"ssor:{omega}")
    eig = cg_auto_eigenvalues(A, s, target.nu, rtol=eps, seed=seed)
    k_star = predict_iterations(eig.sigma, eps)
    k_2star = predict_variance_iterations(eig.sigma, eps)
    log.info("eigenvalues %.4g..%.4g, sigma %.6f, k* %d", eig.lam_min, eig.lam_max, eig.sigma, k_star)
    fl = FlopCounter()
    mean_run = cheby_sample(A, omega, target, eig, kmax=k_star, mean_only=True, flops=fl)
    out = {
        "dims": list(dims), "v": v, "R": R, "omega": omega, "eps": eps, "n": A.n, "nnz": A.nnz,
        "lam_min": eig.lam_min, "lam_max": eig.lam_max, "lanczos_dim": eig.lanczos_dim,
        "sigma": eig.sigma, "sigma2": eig.sigma**2, "k_star": k_star, "k_2star": k_2star,
        "flops_per_iteration": fl.count / max(k_star, 1),
        "x_true": x_true, "data": y, "mean": mean_run.y_curr,
    }
    if direct_check:
        mu = spla.spsolve(A.to_scipy().tocsc(), target.nu)
        out["mean_rel_error"] = float(np.linalg.norm(mean_run.y_curr - mu) / np.linalg.norm(mu))
    if sample:
        draw = cheby_sample(A, omega, target, eig, kmax=k_star, rng=np.random.default_rng(seed + 1))
        out["sample"] = draw.y_curr
    return out


def prior_covariance_column(dims, R, node=None):
    """Column of Q_R^{-1} = H^{-2} through the centre node, from two sparse solves."""
    H = helmholtz3d_operator(dims, R).to_scipy().tocsc()
    nx, ny, nz = dims
    if node is None:
        node = ((nx // 2) * ny + ny // 2) * nz + nz // 2
    e = np.zeros(H.shape[0])
    e[node] = 1.0
    lu = spla.splu(H)
    return lu.solve(lu.solve(e)), node


def covariance_decay(dims=(24, 24, 24), R=0.25, rmin=0.1, rmax=0.4):
    """Fit c exp(-r/R) to the normalised prior covariance over rmin <= r <= rmax.

    Returns the fitted constant, the max relative deviation of the data from
    the fit and a free-slope decay length for reference.
    """
    col, node = prior_covariance_column(dims, R)
    pos = node_positions(dims)
    r = np.linalg.norm(pos - pos[node], axis=1)
    v = col / col[node]
    sel = (r >= rmin) & (r <= rmax)
    logc = float(np.mean(np.log(v[sel]) + r[sel] / R))
    rel = np.abs(v[sel] / np.exp(logc - r[sel] / R) - 1.0)
    slope = np.polyfit(r[sel], np.log(v[sel]), 1)[0]
    return {"c": math.exp(logc), "max_rel_error": float(rel.max()), "mean_rel_error": float(rel.mean()),
            "fitted_length": float(-1.0 / slope), "points": int(sel.sum())}


def contour_spacing(dims=(24, 24, 24), R=0.25, levels=5, rmin=0.1, rmax=0.4):
    """Radii where the covariance along the x axis crosses log-spaced levels.

    Returns the radii and the largest deviation of their successive gaps
    from the mean gap, relative to the mean gap.
    """
    col, node = prior_covariance_column(dims, R)
    nx, ny, nz = dims
    line = col.reshape(dims)[:, ny // 2, nz // 2]
    h = 1.0 / nx
    i0 = nx // 2
    r = (np.arange(nx) - i0) * h
    keep = r >= 0
    r, lv = r[keep], np.log(line[keep] / line[i0])
    lo = np.interp(rmin, r, lv)
    hi = np.interp(rmax, r, lv)
    targets = np.linspace(lo, hi, levels)
    radii = np.interp(-targets, -lv, r)
    gaps = np.diff(radii)
    dev = float(np.max(np.abs(gaps - gaps.mean())) / gaps.mean())
    return {"radii": radii.tolist(), "gap_deviation": dev}
