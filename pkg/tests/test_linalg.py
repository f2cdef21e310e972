import numpy as np
import pytest
import scipy.sparse

from biharmonic_mg.assembly import assemble_univariate, parameter_operators
from biharmonic_mg.linalg import (BandedMatrix, IndefinitePreconditionerError, KroneckerSum,
                                  NotSPDError, banded_cholesky, kron_apply, pcg)
from biharmonic_mg.splines import make_space


def test_identity_factor():
    F = banded_cholesky(BandedMatrix(np.ones((1, 6))))
    assert np.allclose(F.lower_dense(), np.eye(6))
    rhs = np.arange(6.0)
    assert np.allclose(F.solve(rhs), rhs)


def test_hat_mass_solve_matches_dense():
    uni = assemble_univariate(make_space(1, 1))
    M = uni.M.to_dense()
    rhs = np.array([1.0, -2.0, 0.5])
    x = banded_cholesky(uni.M).solve(rhs)
    assert np.allclose(x, np.linalg.solve(M, rhs), atol=1e-13)


def test_kac_matrix_first_column():
    n = 4
    A = 2 * np.eye(n) - np.eye(n, k=1) - np.eye(n, k=-1)
    x = banded_cholesky(BandedMatrix.from_dense(A, bandwidth=1)).solve(np.eye(n)[:, 0])
    # (A^{-1})_{i1} = (n + 1 - i) / (n + 1) for the [-1, 2, -1] matrix
    closed = np.array([(n + 1 - i) / (n + 1) for i in range(1, n + 1)])
    assert np.allclose(x, closed, atol=1e-14)


def test_not_spd_reports_pivot():
    A = np.diag([1.0, 2.0, -1.0, 4.0])
    with pytest.raises(NotSPDError) as err:
        banded_cholesky(BandedMatrix.from_dense(A, bandwidth=1))
    assert err.value.pivot == 2


def test_banded_roundtrip_and_matvec():
    rng = np.random.default_rng(0)
    B = rng.standard_normal((8, 8))
    A = np.triu(np.tril(B + B.T, 2), -2)
    bm = BandedMatrix.from_dense(A)
    assert bm.bandwidth == 2
    assert np.allclose(bm.to_dense(), A)
    X = rng.standard_normal((8, 3))
    assert np.allclose(bm @ X, A @ X)


def test_kron_identity_unchanged():
    K = KroneckerSum().add(1.0, [np.eye(3), np.eye(4)])
    x = np.arange(12.0)
    assert np.allclose(kron_apply(K, x), x)


def test_kron_matches_explicit_expansion():
    rng = np.random.default_rng(3)
    A, B, C, D = (rng.standard_normal((2, 2)) for _ in range(4))
    K = KroneckerSum().add(1.0, [A, B]).add(-0.5, [C, D])
    x = rng.standard_normal(4)
    ref = (np.kron(A, B) - 0.5 * np.kron(C, D)) @ x
    assert np.max(np.abs(kron_apply(K, x) - ref)) < 1e-13


def test_kron_shape_mismatch():
    K = KroneckerSum().add(1.0, [np.eye(2), np.eye(3)])
    with pytest.raises(ValueError):
        kron_apply(K, np.ones(5))


def test_kron_sum_applied_to_constant_matches_2d_operator():
    s = make_space(3, 2)
    uni = assemble_univariate(s)
    free = np.arange(s.n)
    Bbar, _ = parameter_operators([uni, uni], [free, free])
    M, B = uni.M.to_dense(), uni.B.to_dense()
    dense = np.kron(B, M) + np.kron(M, B)
    x = np.ones(s.n ** 2)
    assert np.allclose(kron_apply(Bbar, x), dense @ x, atol=1e-10)


def test_pcg_identity_one_iteration():
    rhs = np.array([1.0, 2.0, 3.0])
    res = pcg(lambda x: x, lambda r: r, rhs)
    assert res.iterations == 1 and res.converged
    assert np.allclose(res.x, rhs)


def test_pcg_random_spd():
    rng = np.random.default_rng(5)
    Q = rng.standard_normal((10, 10))
    A = Q @ Q.T + 1e-1 * np.eye(10)
    b = rng.standard_normal(10)
    res = pcg(lambda x: A @ x, lambda r: r, b, rel_tol=1e-12, max_iter=200)
    assert res.converged
    assert np.allclose(res.x, np.linalg.solve(A, b), rtol=1e-8, atol=1e-8)


def test_pcg_a_norm_error_monotone():
    rng = np.random.default_rng(6)
    Q = rng.standard_normal((10, 10))
    A = Q @ Q.T + np.eye(10)
    b = rng.standard_normal(10)
    xs = np.linalg.solve(A, b)
    errs = []
    for k in range(1, 11):
        r = pcg(lambda x: A @ x, lambda r: r, b, rel_tol=0.0, max_iter=k)
        e = r.x - xs
        errs.append(e @ A @ e)
    assert all(b_ <= a_ * (1 + 1e-10) + 1e-20 for a_, b_ in zip(errs, errs[1:]))


def test_pcg_stopping_rule_and_flag():
    A = np.diag(np.linspace(1, 1e4, 50))
    b = np.ones(50)
    res = pcg(lambda x: A @ x, lambda r: r, b, max_iter=3)
    assert not res.converged and res.iterations == 3 and len(res.residuals) == 4
    res = pcg(lambda x: A @ x, lambda r: r, b, rel_tol=1e-8)
    assert res.converged
    assert res.residuals[-1] <= 1e-8 * res.residuals[0]
    assert res.residuals[-2] > 1e-8 * res.residuals[0]


def test_pcg_zero_rhs():
    res = pcg(lambda x: x, lambda r: r, np.zeros(4))
    assert res.iterations == 0 and res.converged


def test_pcg_indefinite_preconditioner():
    with pytest.raises(IndefinitePreconditionerError):
        pcg(lambda x: x, lambda r: -r, np.ones(3))


def test_sparse_factor_in_kron():
    S = scipy.sparse.identity(3, format="csr")
    K = KroneckerSum().add(2.0, [S, np.eye(2)])
    assert np.allclose(K.to_dense(), 2 * np.eye(6))
