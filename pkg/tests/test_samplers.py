import numpy as np
import pytest

from splitgibbs.diagnostics import ExactMomentOracle
from splitgibbs.errors import CoefficientBreakdownError, ContractError, NotPositiveDefiniteError, ParameterError
from splitgibbs.samplers import (
    ChebyEngine,
    ChebyNoiseCoeffs,
    SSOREngine,
    StationaryEngine,
    TargetSpec,
    cheby_noise_coeffs_next,
    cheby_sample,
    cholesky_draws,
    cholesky_sample_cov,
    cholesky_sample_prec,
    gibbs_sweep_componentwise,
    run_chains,
    ssor_sample,
    stationary_sample,
)
from splitgibbs.solvers import ChebyState, EigEstimate, cheby_params_next, dense_eigenvalues
from splitgibbs.sparse_core import SparseSpd
from splitgibbs.splittings import Splitting

from conftest import FIG1, small_lattice, tridiag


def within_se(draws, target, k=5.0):
    """Entrywise sample covariance of (n, N) draws against ``target``, k standard errors."""
    N = draws.shape[1]
    X = draws - draws.mean(axis=1, keepdims=True)
    S = X @ X.T / (N - 1)
    se = (X[:, None, :] * X[None, :, :]).std(axis=2) / np.sqrt(N)
    return np.all(np.abs(S - target) <= k * se + 1e-12)


def test_target_spec_modes():
    A = small_lattice(3)
    assert TargetSpec(A).nu is None
    with pytest.raises(ParameterError):
        TargetSpec(A, np.ones(A.n), "zero-mean")
    with pytest.raises(ParameterError):
        TargetSpec(A, None, "implicit-mean")
    with pytest.raises(ParameterError):
        TargetSpec.with_mean(A, np.ones(3))


def test_cholesky_cov_identity():
    y = cholesky_sample_cov(np.eye(3), np.random.default_rng(0), m=100_000)
    assert np.allclose(y.mean(axis=1), 0, atol=5 / np.sqrt(1e5))
    assert within_se(y, np.eye(3))


def test_cholesky_cov_fig1():
    y = cholesky_sample_cov(FIG1, np.random.default_rng(1), m=100_000)
    assert within_se(y, FIG1)


def test_cholesky_cov_sparse_input(fig1):
    y = cholesky_sample_cov(fig1, np.random.default_rng(1), m=100_000)
    assert within_se(y, FIG1)


def test_cholesky_cov_deterministic():
    a = cholesky_sample_cov(FIG1, np.random.default_rng(7), m=5)
    b = cholesky_sample_cov(FIG1, np.random.default_rng(7), m=5)
    assert np.array_equal(a, b)


def test_cholesky_cov_not_pd():
    with pytest.raises(NotPositiveDefiniteError):
        cholesky_sample_cov(np.array([[1.0, 2.0], [2.0, 1.0]]), np.random.default_rng(0))


def test_cholesky_prec():
    y = cholesky_sample_prec(SparseSpd.from_dense(np.eye(2)), np.random.default_rng(2), m=100_000)
    assert within_se(y, np.eye(2))
    y = cholesky_sample_prec(SparseSpd.from_dense(np.diag([4.0, 9.0])), np.random.default_rng(3), m=100_000)
    assert within_se(y, np.diag([0.25, 1 / 9]))


def test_cholesky_draws_independent_of_block():
    A = small_lattice(4)
    assert np.array_equal(cholesky_draws(A, 50, 3), cholesky_draws(A, 50, 3, block=7))


def test_gibbs_sweep_identity():
    A = SparseSpd.from_dense(np.eye(4))
    y = np.full(4, 9.0)
    z = np.array([0.1, -0.2, 0.3, 2.0])
    gibbs_sweep_componentwise(A, y, z=z)
    assert np.allclose(y, z)


def test_gibbs_sweep_diagonal():
    A = SparseSpd.from_dense(np.diag(np.full(3, 4.0)))
    y = np.zeros(3)
    z = np.array([1.0, 2.0, -4.0])
    gibbs_sweep_componentwise(A, y, z=z)
    assert np.allclose(y, z / 2)


def test_gibbs_sweep_is_gauss_seidel_step():
    A = tridiag(20, 2.5, -1.0)
    s = Splitting(A, "gs")
    rng = np.random.default_rng(4)
    y0 = rng.standard_normal(20)
    z = rng.standard_normal(20)
    expect = np.linalg.solve(s.dense_M(), s.dense_N() @ y0 + np.sqrt(A.diagonal) * z)
    y = y0.copy()
    gibbs_sweep_componentwise(A, y, z=z)
    assert np.allclose(y, expect, atol=1e-12)


def test_gibbs_sweep_needs_float_array():
    with pytest.raises(ParameterError):
        gibbs_sweep_componentwise(small_lattice(2), np.zeros(4, dtype=np.float32), z=np.zeros(4))


def test_stationary_fixed_point_identity():
    A = small_lattice(4, 0.3)
    s = Splitting(A, "gs")
    Ainv = np.linalg.inv(A.todense())
    G = s.iteration_matrix()
    Minv = s.dense_M_inverse()
    V = s.noise_covariance()
    assert np.allclose(G @ Ainv @ G.T + Minv @ V @ Minv.T, Ainv, atol=1e-12 * np.abs(Ainv).max())


def test_stationary_sampler_mean():
    A = small_lattice(3, 0.5)
    nu = A @ np.ones(A.n)
    res = stationary_sample(Splitting(A, "gs"), TargetSpec.with_mean(A, nu), kmax=200,
                            rng=np.random.default_rng(5), m=4000)
    assert np.allclose(res.y_curr.mean(axis=1), 1.0, atol=5 * np.sqrt(np.diag(np.linalg.inv(A.todense())) / 4000).max())


def test_ssor_one_diagonal_exact():
    d = np.array([1.0, 4.0, 0.25])
    A = SparseSpd.from_dense(np.diag(d))
    y0 = np.array([100.0, -50.0, 3.0])
    res = ssor_sample(A, 1.0, y0=y0, kmax=1, rng=np.random.default_rng(6), m=100_000)
    assert within_se(res.y_curr, np.diag(1 / d))
    assert np.allclose(res.y_curr.mean(axis=1), 0, atol=5 * np.sqrt(1 / d / 1e5))


def test_ssor_noise_free_is_solver_step():
    A = small_lattice(4, 0.2)
    s = Splitting(A, "ssor:1.3")
    y0 = np.random.default_rng(7).standard_normal(A.n)
    res = ssor_sample(A, 1.3, y0=y0, kmax=1, mean_only=True)
    step = s.iterate(y0[:, None], np.zeros((A.n, 1)))[:, 0]
    assert np.allclose(res.y_curr, step, atol=1e-12)


def test_ssor_sampler_matches_ssor_splitting_oracle():
    A = tridiag(20, 2.5, -1.0)
    w = 1.3
    s = Splitting(A, f"ssor:{w}")
    Ad = A.todense()
    Mf = np.tril(Ad, -1) + np.diag(A.diagonal / w)
    Nf = Mf - Ad
    Vh = (2 / w - 1) * np.diag(A.diagonal)
    Gf, Gb = np.linalg.solve(Mf, Nf), np.linalg.solve(Mf.T, Nf.T)
    Cf, Cb = np.linalg.solve(Mf, Vh) @ np.linalg.inv(Mf).T, np.linalg.solve(Mf.T, Vh) @ np.linalg.inv(Mf)
    cov = np.zeros_like(Ad)
    oracle = ExactMomentOracle(s)
    for _ in range(10):
        cov = Gb @ (Gf @ cov @ Gf.T + Cf) @ Gb.T + Cb
        oracle.step()
        assert np.allclose(cov, oracle.cov, atol=1e-10)


def test_noise_coeffs_first_step():
    st0 = ChebyState.start(0.3, 1.0)
    co = cheby_noise_coeffs_next(None, st0)
    assert co.b == 1.0
    assert co.a == pytest.approx((2 - st0.tau) / st0.tau)
    assert co.kappa == st0.tau


def test_noise_coeffs_degenerate():
    st_ = ChebyState.start(1.0, 1.0)
    co = cheby_noise_coeffs_next(None, st_)
    for _ in range(5):
        assert co.a == pytest.approx(1.0) and co.b == pytest.approx(1.0)
        st_ = cheby_params_next(st_)
        co = cheby_noise_coeffs_next(co, st_)


def test_noise_coeffs_hand_values():
    prev = ChebyNoiseCoeffs(a=1.0, b=1.0, kappa=1.0, kappa_next=1.0, k=0)
    st1 = ChebyState(0.5, 1.5, 1.0, 16 / 15, 16 / 15, 1)
    co = cheby_noise_coeffs_next(prev, st1)
    assert co.b == pytest.approx(7 / 8, rel=1e-14)
    assert co.a == pytest.approx(7 / 8, rel=1e-14)
    assert co.kappa_next == pytest.approx(1.0, rel=1e-14)


def test_noise_coeffs_breakdown():
    prev = ChebyNoiseCoeffs(1.0, 1.0, 1.0, 1.0, 0)
    with pytest.raises(CoefficientBreakdownError):
        cheby_noise_coeffs_next(prev, ChebyState(0.5, 1.5, 1.0, 3.0, 3.0, 1))
    with pytest.raises(CoefficientBreakdownError):
        cheby_noise_coeffs_next(ChebyNoiseCoeffs(1.0, 1.0, 1.0, -1.0, 0), ChebyState(0.5, 1.5, 1.0, 1.0, 1.0, 1))


def test_noise_coeffs_first_alpha_contract():
    with pytest.raises(ContractError):
        cheby_noise_coeffs_next(None, ChebyState(0.5, 1.5, 1.0, 1.0, 1.2, 0))


def test_cheby_engine_rejects_non_ssor():
    A = small_lattice(3)
    with pytest.raises(ContractError):
        ChebyEngine(Splitting(A, "gs"), eig=EigEstimate(0.1, 1.0))
    with pytest.raises(ContractError):
        SSOREngine(Splitting(A, "gs"))


def test_cheby_forced_unit_schedule_is_ssor_sampler():
    A = tridiag(6, 2.5, -1.0)
    eng = ChebyEngine(Splitting(A, "ssor:1.2"), schedule=[(1.0, 1.0)] * 3)
    for k in range(3):
        _, _, co = eng.params(k)
        assert co.a == pytest.approx(1.0) and co.b == pytest.approx(1.0)
    res = cheby_sample(A, 1.2, schedule=[(1.0, 1.0)] * 3, kmax=3, rng=np.random.default_rng(8), m=100_000)
    s = Splitting(A, "ssor:1.2")
    oracle = ExactMomentOracle(s)
    for _ in range(3):
        oracle.step()
    assert within_se(res.y_curr, oracle.cov)


def test_cheby_mean_only_is_solver():
    A = small_lattice(5, 0.05)
    s = Splitting(A, "ssor:1.4")
    eig = dense_eigenvalues(s)
    nu = A @ np.ones(A.n)
    res = cheby_sample(A, 1.4, TargetSpec.with_mean(A, nu), eig, kmax=200, mean_only=True)
    assert np.allclose(res.y_curr, 1.0, atol=1e-8)


def test_trace_and_lag():
    A = small_lattice(3)
    res = cheby_sample(A, 1.0, eig=EigEstimate(0.05, 1.0), kmax=4, rng=np.random.default_rng(9), record=True)
    assert len(res.trace) == 5
    assert np.array_equal(res.y_prev, res.trace[-2])
    assert np.array_equal(res.y_curr, res.trace[-1])
    assert res.k == 4


def test_sampler_deterministic():
    A = small_lattice(4)
    a = ssor_sample(A, 1.5, kmax=5, rng=np.random.default_rng(10))
    b = ssor_sample(A, 1.5, kmax=5, rng=np.random.default_rng(10))
    assert np.array_equal(a.y_curr, b.y_curr)


def test_stationary_engine_y0_shape():
    A = small_lattice(3)
    with pytest.raises(ParameterError):
        stationary_sample(Splitting(A, "gs"), y0=np.zeros(5), kmax=1, rng=np.random.default_rng(0))


def test_run_chains_independent_of_threads_and_blocks():
    A = small_lattice(4)
    s = Splitting(A, "ssor:1.3")
    eig = dense_eigenvalues(s)
    ref = run_chains(ChebyEngine(s, eig=eig), 40, 15, seed=11)
    for threads, block in [(1, 7), (4, None), (3, 5)]:
        res = run_chains(ChebyEngine(s, eig=eig), 40, 15, seed=11, threads=threads, block=block)
        assert np.array_equal(res.y, ref.y)
        assert np.allclose(res.trackers[-1].cov, ref.trackers[-1].cov, rtol=1e-12, atol=1e-14)
    assert res.flops_per_chain == ref.flops_per_chain


def test_run_chains_zero_iterations():
    A = small_lattice(3)
    res = run_chains(SSOREngine(Splitting(A, "ssor:1.0")), 1, 0, seed=0)
    assert np.array_equal(res.y, np.zeros((A.n, 1)))
    assert len(res.trackers) == 1


def test_run_chains_rejects_bad_counts():
    A = small_lattice(3)
    with pytest.raises(ParameterError):
        run_chains(SSOREngine(Splitting(A, "ssor:1.0")), 0, 3, seed=0)


def test_stationary_engine_matches_oracle_moments():
    A = tridiag(5, 2.5, -1.0)
    s = Splitting(A, "sor:1.2")
    res = run_chains(StationaryEngine(s), 100_000, 3, seed=12)
    oracle = ExactMomentOracle(s)
    for _ in range(3):
        oracle.step()
    assert within_se(res.y, oracle.cov)
