import warnings

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from splitgibbs.errors import NoiseCovarianceError, ParameterError, ResourceError
from splitgibbs.sparse_core import FlopCounter, SparseSpd, dense_spectral_radius
from splitgibbs.splittings import NoiseSpec, Splitting, SplittingKind, make_splitting, sample_noise

from conftest import random_spd, small_lattice

KINDS = ["richardson:0.1", "jacobi", "gs", "sor:1.3", "ssor:1.2"]


def test_parse_kinds():
    assert SplittingKind.parse("gs") == SplittingKind("gs")
    assert SplittingKind.parse("ssor:1.6641") == SplittingKind("ssor", 1.6641)
    assert str(SplittingKind.parse("richardson:0.1")) == "richardson:0.1"


@pytest.mark.parametrize("text", ["sor:2", "sor:0", "ssor:-1", "ssor:2.5", "richardson:0", "richardson:-1",
                                  "sor", "jacobi:1.2", "cholesky", "ssor:abc"])
def test_parse_rejects(text):
    with pytest.raises(ParameterError):
        SplittingKind.parse(text)


def test_sor_one_is_gauss_seidel():
    rng = np.random.default_rng(0)
    A = SparseSpd.from_dense(random_spd(12, rng))
    x = rng.standard_normal(12)
    assert np.array_equal(Splitting(A, "sor:1").apply_M(x), Splitting(A, "gs").apply_M(x))


def test_gauss_seidel_fig1(fig1):
    s = make_splitting(fig1, "gs")
    assert np.allclose(s.dense_M(), [[5.5, 0], [4.5, 5.5]])
    assert np.allclose(s.dense_N(), [[0, -4.5], [0, 0]])
    assert np.allclose(s.apply_M_inverse(np.array([5.5, 10.0])), [1, 1])
    assert np.allclose(s.apply_N(np.array([0.0, 1.0])), [-4.5, 0])


def test_jacobi_fig1(fig1):
    s = Splitting(fig1, "jacobi")
    assert np.allclose(s.noise_covariance(), [[5.5, -4.5], [-4.5, 5.5]])
    assert np.allclose(s.apply_N(np.array([1.0, 0.0])), [0, -4.5])


def test_richardson_inverse():
    A = SparseSpd.from_dense(random_spd(5, np.random.default_rng(1)))
    r = np.arange(5.0)
    assert np.allclose(Splitting(A, "richardson:0.3").apply_M_inverse(r), 0.3 * r)


@pytest.mark.parametrize("w", [0.5, 1.0, 1.7])
def test_ssor_diagonal_inverse(w):
    d = np.array([1.0, 2.0, 5.0])
    s = Splitting(SparseSpd.from_dense(np.diag(d)), f"ssor:{w}")
    r = np.array([1.0, -1.0, 3.0])
    assert np.allclose(s.apply_M_inverse(r), w * (2 - w) * r / d)


@pytest.mark.parametrize("kind", KINDS)
def test_splitting_identity_and_inverse(kind):
    rng = np.random.default_rng(2)
    a = random_spd(15, rng)
    s = Splitting(SparseSpd.from_dense(a), kind)
    normA = np.linalg.norm(a, 2)
    for _ in range(100):
        x = rng.standard_normal(15)
        gap = s.apply_M(x) - s.apply_N(x) - s.apply_A(x)
        assert np.linalg.norm(gap) <= 1e-12 * normA * np.linalg.norm(x)
    x = rng.standard_normal(15)
    assert np.allclose(s.apply_M_inverse(s.apply_M(x)), x, atol=1e-12 * np.linalg.norm(x))
    assert np.allclose(s.apply_N(x, direct=True), s.apply_N(x, direct=False), atol=1e-12 * normA)
    assert np.allclose(s.apply_N(np.zeros(15)), 0)


def test_symmetry_bilinear():
    rng = np.random.default_rng(3)
    A = SparseSpd.from_dense(random_spd(10, rng))
    ssor = Splitting(A, "ssor:1.4")
    gs = Splitting(A, "gs")
    x, y = rng.standard_normal(10), rng.standard_normal(10)
    assert ssor.apply_M(x) @ y == pytest.approx(x @ ssor.apply_M(y), rel=1e-12)
    assert ssor.apply_N(x) @ y == pytest.approx(x @ ssor.apply_N(y), rel=1e-12, abs=1e-12)
    # Gauss-Seidel M is not symmetric
    assert abs(gs.apply_M(x) @ y - x @ gs.apply_M(y)) > 1e-6


@pytest.mark.parametrize("kind", ["gs", "sor:0.5", "sor:1.5", "sor:1.9", "ssor:0.5", "ssor:1.0", "ssor:1.9"])
def test_fixed_point_and_convergence(kind):
    A = small_lattice(6, 0.1)
    s = Splitting(A, kind)
    b = np.random.default_rng(4).standard_normal(A.n)
    x = np.linalg.solve(A.todense(), b)
    assert np.allclose(s.apply_M_inverse(s.apply_N(x) + b), x, atol=1e-10 * np.linalg.norm(x))
    assert dense_spectral_radius(s.iteration_matrix()) < 1


def test_jacobi_converges_on_diagonally_dominant():
    a = np.diag(np.full(8, 4.0)) + np.diag(np.ones(7), 1) + np.diag(np.ones(7), -1)
    s = Splitting(SparseSpd.from_dense(a), "jacobi")
    assert dense_spectral_radius(s.iteration_matrix()) < 1


def test_permuted_splitting_changes_sweep_only():
    rng = np.random.default_rng(5)
    A = SparseSpd.from_dense(random_spd(8, rng))
    perm = rng.permutation(8)
    s = Splitting(A, "gs", perm=perm)
    x = rng.standard_normal(8)
    assert np.allclose(s.apply_M(x) - s.apply_N(x), A.todense() @ x)
    assert not np.allclose(s.dense_M(), Splitting(A, "gs").dense_M())


def test_flop_counts_ssor():
    A = small_lattice(5)
    s = Splitting(A, "ssor:1.2")
    fl = FlopCounter()
    s.apply_M_inverse(np.ones(A.n), fl)
    # two triangular sweeps plus a diagonal scale
    tri = 2 * (A.nnz_lower + A.n) - A.n
    assert fl.count == 2 * tri + A.n


def _cov(draws):
    return np.cov(draws)


def _within_se(draws, target, k=5.0):
    """Entrywise check of the sample covariance of (n, N) draws against ``target``."""
    n, N = draws.shape
    X = draws - draws.mean(axis=1, keepdims=True)
    S = X @ X.T / (N - 1)
    prods = X[:, None, :] * X[None, :, :]
    se = prods.std(axis=2) / np.sqrt(N)
    return np.all(np.abs(S - target) <= k * se + 1e-12)


def test_noise_sor_diagonal():
    A = SparseSpd.from_dense(np.diag(np.full(3, 4.0)) + np.diag([0.5, 0.5], 1) + np.diag([0.5, 0.5], -1))
    spec = NoiseSpec(Splitting(A, "sor:1"))
    assert spec.method == "diagonal-scale"
    draws = sample_noise(spec, np.random.default_rng(0), m=100_000)
    assert _within_se(draws, 4 * np.eye(3))


def test_noise_jacobi_fig1(fig1):
    with pytest.warns(RuntimeWarning):
        spec = NoiseSpec(Splitting(fig1, "jacobi"))
    draws = sample_noise(spec, np.random.default_rng(1), m=100_000)
    assert _within_se(draws, np.array([[5.5, -4.5], [-4.5, 5.5]]))


@pytest.mark.parametrize("kind", ["gs", "sor:1.6", "ssor:1.3"])
def test_noise_covariance_matches(kind):
    A = small_lattice(3, 0.5)
    s = Splitting(A, kind)
    draws = sample_noise(NoiseSpec(s), np.random.default_rng(2), m=100_000)
    assert _within_se(draws, s.noise_covariance())


def test_noise_mean():
    A = small_lattice(3, 0.5)
    nu = np.arange(9.0)
    draws = sample_noise(NoiseSpec(Splitting(A, "gs"), nu), np.random.default_rng(3), m=20_000)
    assert np.allclose(draws.mean(axis=1), nu, atol=0.1)


def test_richardson_noise_not_spd(lattice):
    with warnings.catch_warnings():
        warnings.simplefilter("ignore", RuntimeWarning)
        with pytest.raises(NoiseCovarianceError):
            NoiseSpec(Splitting(lattice, "richardson:1"))


def test_dense_fallback_cap():
    from splitgibbs.gmrf_models import lattice2d_precision

    with pytest.raises(ResourceError):
        NoiseSpec(Splitting(lattice2d_precision(50), "jacobi"))


def test_noise_method_mismatch(fig1):
    with pytest.raises(ParameterError):
        NoiseSpec(Splitting(fig1, "gs"), method="two-factor-ssor")


@settings(max_examples=25, deadline=None)
@given(st.sampled_from(KINDS), st.integers(2, 20), st.integers(0, 10_000))
def test_property_split_identity(kind, n, seed):
    rng = np.random.default_rng(seed)
    a = random_spd(n, rng)
    s = Splitting(SparseSpd.from_dense(a), kind)
    assert np.allclose(s.dense_M() - s.dense_N(), a, atol=1e-11 * np.linalg.norm(a))


@settings(max_examples=25, deadline=None)
@given(st.floats(0.05, 1.95), st.integers(2, 15), st.integers(0, 10_000))
def test_property_ssor_noise_covariance_is_m_plus_n(w, n, seed):
    a = random_spd(n, np.random.default_rng(seed))
    s = Splitting(SparseSpd.from_dense(a), f"ssor:{w!r}")
    V = s.noise_covariance()
    assert np.allclose(V, V.T, atol=1e-9 * np.abs(V).max())
    assert np.linalg.eigvalsh(0.5 * (V + V.T))[0] > 0
