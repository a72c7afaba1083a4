"""Command-line entry point: ``solve``, ``sample``, ``model`` and ``reproduce``.

Exit codes: 0 success, 2 parameter error, 3 divergence or non-convergence,
4 resource cap, 5 numeric breakdown.
"""
from __future__ import annotations

import argparse
import csv
import json
import logging
import sys
from dataclasses import asdict, dataclass, fields
from pathlib import Path

import numpy as np

from . import experiments as ex
from .diagnostics import cov_rel_error, write_moment_csv
from .errors import NonConvergenceError, ParameterError, SplitGibbsError
from .gmrf_models import (
    biofilm_forward,
    helmholtz3d_precision,
    lattice2d_precision,
    phantom_ellipsoid,
    posterior_spec,
    synth_data,
    write_grid,
)
from .samplers import ChebyEngine, SSOREngine, StationaryEngine, TargetSpec, run_chains
from .solvers import (
    EigEstimate,
    cg_auto_eigenvalues,
    cg_solve,
    chebyshev_solve,
    dense_eigenvalues,
    estimate_eigenvalues,
    stationary_solve,
)
from .sparse_core import read_matrix_market, read_vector_csv, write_matrix_market, write_vector_csv
from .splittings import Splitting, SplittingKind

log = logging.getLogger("splitgibbs")

ACCELS = ("none", "chebyshev", "cg")


@dataclass
class RunConfig:
    """Every setting of one command; ``seed`` determines all randomness."""

    command: str = ""
    matrix: str | None = None
    model: str | None = None
    splitting: str = "gs"
    accel: str = "none"
    eig: str = "cg-auto"
    tol: float = 1e-8
    kmax: int = 1_000_000
    chains: int = 1
    iters: int = 0
    seed: int = 0
    threads: int = 1
    rhs: str = "ones"
    nu: str = "zero"
    out: str | None = None
    kind: str | None = None
    m: int = 10
    dims: str = "24,24,24"
    R: float = 0.25
    v: int = 4
    which: str | None = None
    max_nnz: int = ex.MAX_NNZ
    omega: float = 1.0
    eps: float = 1e-8

    def to_json(self):
        return json.dumps(asdict(self), indent=2, sort_keys=True)

    @classmethod
    def from_json(cls, text):
        data = json.loads(text)
        known = {f.name for f in fields(cls)}
        extra = set(data) - known
        if extra:
            raise ParameterError(f"unknown config keys: {sorted(extra)}")
        return cls(**data)


def _dims(text):
    try:
        dims = tuple(int(t) for t in str(text).split(","))
    except ValueError:
        raise ParameterError(f"dims must look like 24,24,24, got {text!r}") from None
    if len(dims) != 3:
        raise ParameterError(f"dims must have three entries, got {text!r}")
    return dims


def load_matrix(cfg):
    """The precision from ``--matrix`` or ``--model`` (``lattice2d:M`` or ``helmholtz3d:NX,NY,NZ``)."""
    if (cfg.matrix is None) == (cfg.model is None):
        raise ParameterError("give exactly one of --matrix and --model")
    if cfg.matrix is not None:
        return read_matrix_market(cfg.matrix)
    name, _, arg = cfg.model.partition(":")
    if name == "lattice2d":
        return lattice2d_precision(int(arg or 10))
    if name == "helmholtz3d":
        return helmholtz3d_precision(_dims(arg or "24,24,24"), cfg.R)
    raise ParameterError(f"unknown model {cfg.model!r}")


def make_eig(cfg, A, s, b=None):
    src = cfg.eig
    if src == "cg-auto":
        return cg_auto_eigenvalues(A, s, b, seed=cfg.seed)
    if src == "lanczos":
        return estimate_eigenvalues(A, s, seed=cfg.seed, known_upper="auto")
    if src == "dense-exact":
        return dense_eigenvalues(s)
    if src.startswith("explicit:"):
        try:
            lo, hi = (float(t) for t in src[len("explicit:"):].split(","))
        except ValueError:
            raise ParameterError(f"explicit eigenvalues must look like explicit:LMIN,LMAX, got {src!r}") from None
        return EigEstimate(lo, hi, 0, "explicit")
    raise ParameterError(f"unknown eigenvalue source {src!r}")


def _vector(spec, A, what):
    if spec in ("zero", "0"):
        return np.zeros(A.n)
    if spec == "ones":
        return A @ np.ones(A.n)
    if spec == "random":
        return None
    v = read_vector_csv(spec)
    if v.shape != (A.n,):
        raise ParameterError(f"{what} in {spec} has shape {v.shape}, expected ({A.n},)")
    return v


def _write_json(path, obj):
    Path(path).parent.mkdir(parents=True, exist_ok=True)
    Path(path).write_text(json.dumps(obj, indent=2, default=_json_default) + "\n", encoding="utf-8")


def _json_default(o):
    if isinstance(o, np.integer):
        return int(o)
    if isinstance(o, np.floating):
        return float(o)
    if isinstance(o, np.ndarray):
        return o.tolist()
    raise TypeError(f"cannot serialise {type(o).__name__}")


def cmd_solve(cfg):
    A = load_matrix(cfg)
    if cfg.accel not in ACCELS:
        raise ParameterError(f"--accel must be one of {ACCELS}")
    b = _vector(cfg.rhs, A, "rhs")
    if b is None:
        b = np.random.default_rng(cfg.seed).standard_normal(A.n)
    eig = None
    if cfg.accel == "cg":
        pre = None if cfg.splitting in ("none", "") else Splitting(A, cfg.splitting)
        report, eig = cg_solve(A, b, pre, cfg.tol, min(cfg.kmax, 10 * A.n + 100))
    else:
        s = Splitting(A, cfg.splitting)
        if cfg.accel == "chebyshev":
            eig = make_eig(cfg, A, s, b)
            report = chebyshev_solve(s, b, eig, tol=cfg.tol, kmax=cfg.kmax)
        else:
            report = stationary_solve(s, b, tol=cfg.tol, kmax=cfg.kmax)
    out = report.to_dict()
    out.pop("x", None)
    out.pop("residual_history", None)
    out["eig"] = asdict(eig) if eig is not None else None
    out["n"] = A.n
    out["nnz"] = A.nnz
    if cfg.out:
        _write_json(cfg.out, out)
        with open(Path(cfg.out).with_suffix(".residuals.csv"), "w", newline="", encoding="utf-8") as fh:
            w = csv.writer(fh)
            w.writerow(["k", "residual"])
            for k, r in enumerate(report.residual_history):
                w.writerow([k, repr(float(r))])
    print(json.dumps(out, default=_json_default))
    if report.diverged:
        raise NonConvergenceError(f"{report.method} diverged after {report.iterations} iterations")
    if not report.converged:
        raise NonConvergenceError(f"{report.method} did not reach tol {cfg.tol} in {cfg.kmax} iterations")
    return 0


def cmd_sample(cfg):
    A = load_matrix(cfg)
    s = Splitting(A, cfg.splitting)
    nu = _vector(cfg.nu, A, "nu")
    if nu is None:
        raise ParameterError("--nu must be zero or a CSV file")
    target = TargetSpec.with_mean(A, nu) if np.any(nu) else None
    if cfg.accel == "chebyshev":
        engine = ChebyEngine(s, target, eig=make_eig(cfg, A, s))
    elif cfg.accel == "none":
        engine = SSOREngine(s, target) if s.kind.tag == "ssor" else StationaryEngine(s, target)
    else:
        raise ParameterError("sampling supports --accel none or chebyshev")
    track = A.n <= 2000
    res = run_chains(engine, cfg.chains, cfg.iters, cfg.seed, threads=cfg.threads, track=track)
    rows = []
    if track:
        Ad = A.todense()
        Sigma = np.linalg.inv(Ad)
        mu = np.linalg.solve(Ad, nu)
        norm = float(np.linalg.eigvalsh(Sigma)[-1])
        per = res.flops_per_chain / cfg.iters if cfg.iters else 0.0
        for k, t in enumerate(res.trackers):
            err = cov_rel_error(t.cov, Sigma, norm) if t.count > 1 else None
            rows.append((k, int(round(k * per)), err, float(np.linalg.norm(t.mean - mu))))
    summary = {"n": A.n, "chains": cfg.chains, "iters": cfg.iters, "seed": cfg.seed,
               "flops_per_chain": res.flops_per_chain, "splitting": str(s.kind), "accel": cfg.accel}
    if rows:
        summary["final_rel_cov_error"] = rows[-1][2]
        summary["final_mean_error"] = rows[-1][3]
    if cfg.out:
        out = Path(cfg.out)
        out.mkdir(parents=True, exist_ok=True)
        if rows:
            write_moment_csv(out / "moments.csv", rows)
        write_vector_csv(out / "draws.csv", res.y)
        _write_json(out / "summary.json", summary)
        (out / "config.json").write_text(cfg.to_json() + "\n", encoding="utf-8")
    print(json.dumps(summary, default=_json_default))
    return 0


def cmd_model(cfg):
    if not cfg.out:
        raise ParameterError("model needs --out")
    if cfg.kind == "lattice2d":
        write_matrix_market(cfg.out, lattice2d_precision(cfg.m))
    elif cfg.kind == "helmholtz3d":
        write_matrix_market(cfg.out, helmholtz3d_precision(_dims(cfg.dims), cfg.R))
    elif cfg.kind == "posterior":
        parts = cfg.out.split(",")
        if len(parts) != 2:
            raise ParameterError("posterior needs --out A.mtx,nu.csv")
        dims = _dims(cfg.dims)
        fm = biofilm_forward(dims, cfg.v)
        x_true = phantom_ellipsoid(dims)
        y = synth_data(x_true, fm, np.random.default_rng(cfg.seed))
        target = posterior_spec(fm.F, fm.P, helmholtz3d_precision(dims, cfg.R), y)
        write_matrix_market(parts[0], target.A)
        write_vector_csv(parts[1], target.nu)
        base = Path(parts[0]).with_suffix("")
        write_grid(str(base) + ".phantom.f64", x_true, dims)
        write_grid(str(base) + ".data.f64", y, fm.data_dims, spacing=1.0 / dims[0])
    else:
        raise ParameterError(f"unknown model kind {cfg.kind!r}")
    print(json.dumps({"model": cfg.kind, "out": cfg.out}))
    return 0


def cmd_reproduce(cfg):
    out = Path(cfg.out or f"reproduce-{cfg.which}")
    out.mkdir(parents=True, exist_ok=True)
    if cfg.which == "table3":
        if cfg.rhs not in ("ones", "random"):
            raise ParameterError(f"table3 takes --rhs ones or random, got {cfg.rhs!r}")
        rows = ex.table3(rhs=cfg.rhs, seed=cfg.seed, tol=cfg.tol)
        keys = ["solver", "omega", "rho", "iterations", "flops", "converged", "diverged", "estimated_factor"]
        with open(out / "table3.csv", "w", newline="", encoding="utf-8") as fh:
            w = csv.DictWriter(fh, keys)
            w.writeheader()
            w.writerows(rows)
        _write_json(out / "table3.json", rows)
        for r in rows:
            print(f"{r['solver']:>11} {r['omega'] or '':>7} rho={r['rho']} iters={r['iterations']} flops={r['flops']}")
    elif cfg.which == "figure2":
        res = ex.figure2(chains=cfg.chains if cfg.chains > 1 else 10_000, iters=cfg.iters or 200,
                         seed=cfg.seed, threads=cfg.threads)
        with open(out / "figure2.csv", "w", newline="", encoding="utf-8") as fh:
            w = csv.writer(fh)
            w.writerow(["sampler", "k", "flops", "rel_cov_error", "mean_error"])
            for name, curve in res["curves"].items():
                for k, fl, e, me in curve:
                    w.writerow([name, k, fl, repr(float(e)), repr(float(me))])
        summary = {k: res[k] for k in ("floor", "hits", "chains", "iters", "seed")}
        _write_json(out / "figure2.json", summary)
        print(json.dumps(summary, default=_json_default))
    elif cfg.which == "inverse3d":
        dims = _dims(cfg.dims)
        res = ex.inverse3d(dims, cfg.v, cfg.R, cfg.omega, cfg.eps, cfg.seed, cfg.max_nnz)
        data_dims = (dims[0], dims[1], dims[2] // cfg.v)
        write_grid(out / "phantom.f64", res.pop("x_true"), dims)
        write_grid(out / "data.f64", res.pop("data"), data_dims, spacing=1.0 / dims[0])
        write_grid(out / "mean.f64", res.pop("mean"), dims)
        write_grid(out / "sample.f64", res.pop("sample"), dims)
        _write_json(out / "inverse3d.json", res)
        print(json.dumps(res, default=_json_default))
    else:
        raise ParameterError(f"unknown reproduction {cfg.which!r}")
    return 0


COMMANDS = {"solve": cmd_solve, "sample": cmd_sample, "model": cmd_model, "reproduce": cmd_reproduce}


def build_parser():
    p = argparse.ArgumentParser(prog="splitgibbs", description=__doc__.splitlines()[0])
    p.add_argument("-v", "--verbose", action="store_true")
    sub = p.add_subparsers(dest="command", required=True)
    S = argparse.SUPPRESS

    def common(q):
        q.add_argument("--config", help="JSON RunConfig; explicit flags override it")
        q.add_argument("--seed", type=int, default=S)
        q.add_argument("--threads", type=int, default=S)
        q.add_argument("--out", default=S)

    def matrix(q):
        q.add_argument("--matrix", default=S, help="Matrix Market file")
        q.add_argument("--model", default=S, help="lattice2d:M or helmholtz3d:NX,NY,NZ")
        q.add_argument("--splitting", default=S, help="gs, jacobi, richardson:w, sor:w or ssor:w")
        q.add_argument("--accel", default=S, choices=ACCELS)
        q.add_argument("--eig", default=S, help="cg-auto, lanczos, dense-exact or explicit:LMIN,LMAX")
        q.add_argument("--R", type=float, default=S)

    q = sub.add_parser("solve", help="solve A x = b")
    common(q)
    matrix(q)
    q.add_argument("--tol", type=float, default=S)
    q.add_argument("--kmax", type=int, default=S)
    q.add_argument("--rhs", default=S, help="ones (b = A 1), random, zero or a CSV file")

    q = sub.add_parser("sample", help="run sampler chains")
    common(q)
    matrix(q)
    q.add_argument("--chains", type=int, default=S)
    q.add_argument("--iters", type=int, default=S)
    q.add_argument("--nu", default=S, help="zero or a CSV file")

    q = sub.add_parser("model", help="write a model precision matrix")
    common(q)
    q.add_argument("kind", choices=("lattice2d", "helmholtz3d", "posterior"))
    q.add_argument("--m", type=int, default=S)
    q.add_argument("--dims", default=S)
    q.add_argument("--R", type=float, default=S)
    q.add_argument("--v", type=int, default=S)

    q = sub.add_parser("reproduce", help="rerun a reference experiment")
    common(q)
    q.add_argument("which", choices=("table3", "figure2", "inverse3d"))
    q.add_argument("--rhs", default=S)
    q.add_argument("--tol", type=float, default=S)
    q.add_argument("--chains", type=int, default=S)
    q.add_argument("--iters", type=int, default=S)
    q.add_argument("--dims", default=S)
    q.add_argument("--R", type=float, default=S)
    q.add_argument("--v", type=int, default=S)
    q.add_argument("--omega", type=float, default=S)
    q.add_argument("--eps", type=float, default=S)
    q.add_argument("--max-nnz", dest="max_nnz", type=int, default=S)
    return p


def parse_config(argv):
    args = vars(build_parser().parse_args(argv))
    verbose = args.pop("verbose", False)
    path = args.pop("config", None)
    cfg = RunConfig.from_json(Path(path).read_text(encoding="utf-8")) if path else RunConfig()
    for k, v in args.items():
        setattr(cfg, k, v)
    if cfg.command == "solve" and "splitting" not in args and args.get("accel") == "cg":
        cfg.splitting = "none"
    if cfg.splitting not in ("none", ""):
        SplittingKind.parse(cfg.splitting)
    return cfg, verbose


def main(argv=None):
    try:
        cfg, verbose = parse_config(argv)
    except SplitGibbsError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return exc.exit_code
    logging.basicConfig(level=logging.INFO if verbose else logging.WARNING, format="%(name)s: %(message)s")
    try:
        return COMMANDS[cfg.command](cfg)
    except SplitGibbsError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return exc.exit_code
    except (OSError, ValueError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
