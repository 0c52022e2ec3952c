import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from oomsvd.comm import CommGroup
from oomsvd.errors import ConfigError, DegenerateInputError, NumericError, ShapeError
from oomsvd.linalg import CsrMatrix
from oomsvd.partition import COLLINEAR, ORTHOGONAL, choose_partition, plan_batches
from oomsvd.power import (
    SvdConfig,
    dist_compute_v,
    residual_gram_apply,
    svd_1d,
    svd_truncated_dense,
    svd_truncated_sparse,
)
from oomsvd.solver import truncated_svd
from oomsvd.store import TieredStore
from oracles import constructed, explicit_residual, explicit_residual_gram_apply, jacobi_svd, orthonormal, sign_align


class TestSvd1d:
    def test_dominant_of_diag(self):
        B = np.diag([9.0, 1.0])
        v, info = svd_1d(lambda x: B @ x, 2, eps=1e-14, seed=3)
        assert info.converged
        assert abs(abs(v[0]) - 1.0) < 1e-6
        assert v @ B @ v == pytest.approx(9.0, rel=1e-12)

    def test_identity_fixed_point(self):
        v, info = svd_1d(lambda x: x.copy(), 5, eps=1e-12, seed=7)
        x = np.random.default_rng(7).standard_normal(5)
        assert info.iterations == 1 and info.converged
        np.testing.assert_allclose(v, x / np.linalg.norm(x), atol=1e-15)

    def test_degenerate_eigenspace(self):
        B = np.diag([4.0, 4.0])
        v, info = svd_1d(lambda x: B @ x, 2, eps=1e-12, seed=1)
        assert info.iterations == 1 and info.converged
        assert np.linalg.norm(v) == pytest.approx(1.0)

    def test_non_convergence_is_reported(self):
        B = np.diag([1.0, 0.999999])
        v, info = svd_1d(lambda x: B @ x, 2, eps=1e-15, max_iter=5, seed=0)
        assert not info.converged and info.iterations == 5

    def test_fixed_iterations(self):
        calls = []
        B = np.diag([9.0, 1.0])
        _, info = svd_1d(lambda x: calls.append(1) or B @ x, 2, eps=0.5, fixed_iters=17)
        assert len(calls) == 17 and info.iterations == 17

    def test_errors(self):
        with pytest.raises(NumericError):
            svd_1d(lambda x: np.full(2, np.nan), 2)
        with pytest.raises(DegenerateInputError):
            svd_1d(lambda x: np.zeros(2), 2)
        with pytest.raises(ShapeError):
            svd_1d(lambda x: np.zeros(3), 2)

    def test_seeded(self):
        B = np.diag([3.0, 2.0, 1.0])
        a = svd_1d(lambda x: B @ x, 3, seed=4)[0]
        b = svd_1d(lambda x: B @ x, 3, seed=4)[0]
        assert np.array_equal(a, b)


class TestConfig:
    @pytest.mark.parametrize(
        "kwargs", [dict(eps=0), dict(eps=1), dict(max_iter=0), dict(path="qr"), dict(fixed_iters=0), dict(k=-2)]
    )
    def test_rejects(self, kwargs):
        with pytest.raises(ConfigError):
            SvdConfig(**kwargs)

    def test_resolve_k(self):
        assert SvdConfig().resolve_k(5, 3) == 3
        assert SvdConfig(k=2).resolve_k(5, 3) == 2
        with pytest.raises(ConfigError):
            SvdConfig(k=4).resolve_k(5, 3)


class TestResidualGramApply:
    def test_no_deflation(self, rng):
        X = rng.standard_normal((7, 5))
        v = rng.standard_normal(5)
        np.testing.assert_allclose(
            residual_gram_apply(X, np.zeros((7, 0)), [], np.zeros((5, 0)), 1, v), X.T @ X @ v, atol=1e-12
        )

    def test_diag_example(self):
        X = np.diag([3.0, 2.0, 1.0])
        U = V = np.eye(3)[:, :1]
        v0 = np.ones(3) / np.sqrt(3)
        got = residual_gram_apply(X, U, [3.0], V, 2, v0)
        np.testing.assert_allclose(got, np.array([0.0, 4.0, 1.0]) / np.sqrt(3), atol=1e-15)

    @pytest.mark.parametrize("shape", [(10, 7), (7, 10)])
    def test_random_with_three_components(self, rng, shape):
        m, n = shape
        X = rng.standard_normal(shape)
        U, V = orthonormal(rng, m, 3), orthonormal(rng, n, 3)
        sigma = np.array([3.0, 2.0, 0.5])
        v0 = rng.standard_normal(min(m, n) if False else (n if m >= n else m))
        got = residual_gram_apply(X, U, sigma, V, 4, v0)
        np.testing.assert_allclose(got, explicit_residual_gram_apply(X, U, sigma, V, 4, v0), atol=1e-10)

    def test_sparse_operand(self, rng):
        X = rng.standard_normal((9, 6)) * (rng.random((9, 6)) < 0.4)
        U, V = orthonormal(rng, 9, 2), orthonormal(rng, 6, 2)
        v0 = rng.standard_normal(6)
        got = residual_gram_apply(CsrMatrix.from_dense(X), U, [2.0, 1.0], V, 3, v0)
        np.testing.assert_allclose(got, explicit_residual_gram_apply(X, U, [2.0, 1.0], V, 3, v0), atol=1e-10)

    def test_shape_errors(self):
        with pytest.raises(ShapeError):
            residual_gram_apply(np.eye(3), np.eye(3), [1, 1, 1], np.eye(2), 2, np.ones(3))
        with pytest.raises(ShapeError):
            residual_gram_apply(np.eye(3), np.eye(3), [1, 1, 1], np.eye(3), 2, np.ones(4))

    @pytest.mark.parametrize("m, n", [(8, 5), (5, 8)])
    def test_four_term_expansion_as_matrices(self, rng, m, n):
        X = rng.standard_normal((m, n))
        p = 3
        U, V = orthonormal(rng, m, p), orthonormal(rng, n, p)
        S = np.diag(rng.random(p) + 0.5)
        R = X - U @ S @ V.T
        dim = n if m >= n else m
        explicit = R.T @ R if m >= n else R @ R.T
        if m >= n:
            four = X.T @ X - V @ S @ U.T @ X - X.T @ U @ S @ V.T + V @ S @ S @ V.T
        else:
            four = X @ X.T - U @ S @ V.T @ X.T - X @ V @ S @ U.T + U @ S @ S @ U.T
        assert np.max(np.abs(explicit - four)) <= 1e-10
        cols = np.column_stack(
            [residual_gram_apply(X, U, np.diag(S), V, p + 1, e) for e in np.eye(dim)]
        )
        assert np.max(np.abs(cols - explicit)) <= 1e-10


def run_dist_compute_v(X, U, sigma, V, v0, workers, n_b, q_s, orientation=ORTHOGONAL, sparse=False, budget=None):
    plan = choose_partition(*X.shape, workers)
    bp = plan_batches(plan, orientation, n_b, q_s)
    group = CommGroup(workers)

    def fn(c):
        a, b = plan.slabs[c.rank]
        slab = CsrMatrix.from_dense(X[a:b]) if sparse else X[a:b]
        placement = {"A": "host", "V": "host"} if budget else None
        return dist_compute_v(slab, U[a:b], sigma, V, v0, c, TieredStore(budget), bp, placement)

    return group.run(fn), group.stats()


class TestDistComputeV:
    def test_single_rank_matches_serial(self, rng):
        X = rng.standard_normal((10, 6))
        U, V = orthonormal(rng, 10, 2), orthonormal(rng, 6, 2)
        sigma = np.array([2.0, 1.0])
        v0 = rng.standard_normal(6)
        (out,), _ = run_dist_compute_v(X, U, sigma, V, v0, 1, 1, 1)
        np.testing.assert_allclose(out, residual_gram_apply(X, U, sigma, V, 3, v0), atol=1e-12)

    @pytest.mark.parametrize("orientation", [ORTHOGONAL, COLLINEAR])
    @pytest.mark.parametrize("sparse", [False, True])
    def test_two_ranks_four_batches(self, rng, orientation, sparse):
        X = rng.standard_normal((24, 16)) * (rng.random((24, 16)) < (0.3 if sparse else 2))
        U, V = orthonormal(rng, 24, 2), orthonormal(rng, 16, 2)
        sigma = np.array([5.0, 2.0])
        v0 = rng.standard_normal(16)
        outs, stats = run_dist_compute_v(X, U, sigma, V, v0, 2, 4, 2, orientation, sparse)
        expected = explicit_residual_gram_apply(X, U, sigma, V, 3, v0)
        for out in outs:
            assert np.max(np.abs(out - expected)) <= 1e-10
        assert stats.all_reduce_calls == 2
        assert stats.reduce_calls == 0

    def test_two_all_reduces_even_without_deflation(self, rng):
        X = rng.standard_normal((12, 6))
        _, stats = run_dist_compute_v(X, np.zeros((12, 0)), np.zeros(0), np.zeros((6, 0)),
                                      rng.standard_normal(6), 2, 2, 1)
        assert stats.all_reduce_calls == 2

    def test_host_placed_v_under_budget(self, rng):
        X = rng.standard_normal((24, 16))
        U, V = orthonormal(rng, 24, 3), orthonormal(rng, 16, 3)
        sigma = np.array([3.0, 2.0, 1.0])
        v0 = rng.standard_normal(16)
        budget = 12 * 4 * 8 + 12 * 3 * 8 + 4 * 3 * 8
        outs, _ = run_dist_compute_v(X, U, sigma, V, v0, 2, 4, 1, budget=budget)
        np.testing.assert_allclose(outs[0], explicit_residual_gram_apply(X, U, sigma, V, 4, v0), atol=1e-10)


def local_run(driver, A, k, workers=1, n_b=1, q_s=1, eps=1e-12, seed=0, **kw):
    plan = choose_partition(*A.shape, workers)
    assert plan.axis == "row"
    bp = plan_batches(plan, ORTHOGONAL, n_b, q_s)
    config = SvdConfig(k=k, eps=eps, seed=seed, **kw)

    def fn(c):
        a, b = plan.slabs[c.rank]
        slab = A.row_block(a, b) if isinstance(A, CsrMatrix) else A[a:b]
        return driver(slab, config, c, TieredStore(), bp)

    return CommGroup(workers).run(fn)


@pytest.mark.parametrize("driver", [svd_truncated_dense, svd_truncated_sparse])
class TestDrivers:
    def test_diag_321(self, driver):
        (res,) = local_run(driver, np.diag([3.0, 2.0, 1.0]), 3)
        np.testing.assert_allclose(res.sigma, [3, 2, 1], atol=1e-9)
        # eps=1e-12 at gap 1.5 bounds the angle near sqrt(2e-12) / (1 - (2/3)**2) ~ 2.5e-6
        np.testing.assert_allclose(np.abs(res.U), np.eye(3), atol=1e-5)
        np.testing.assert_allclose(np.abs(res.V), np.eye(3), atol=1e-5)

    def test_zero_matrix(self, driver):
        (res,) = local_run(driver, np.zeros((4, 3)), 3)
        assert res.sigma.size == 0 and res.report.truncated and res.report.notice

    def test_rank_deficient_truncates(self, driver, rng):
        A = np.outer(rng.standard_normal(6), rng.standard_normal(5))
        (res,) = local_run(driver, A, 4)
        assert res.sigma.size == 1 and res.report.truncated
        assert res.sigma[0] == pytest.approx(np.linalg.norm(A), rel=1e-10)

    def test_jacobi_oracle_32x24(self, driver, rng):
        A, *_ = constructed(rng, 32, 24)
        _, s, _ = jacobi_svd(A)
        (res,) = local_run(driver, A, 8)
        np.testing.assert_allclose(res.sigma, s[:8], rtol=1e-6)
        assert len(res.report.iterations) == 8 and all(res.report.converged)

    def test_sharded_matches_single(self, driver, rng):
        A, *_ = constructed(rng, 30, 12)
        single = local_run(driver, A, 4)[0]
        multi = local_run(driver, A, 4, workers=3, n_b=3, q_s=2)
        np.testing.assert_allclose(multi[0].sigma, single.sigma, rtol=1e-10)
        U = np.vstack([r.U for r in multi])
        # both runs stop within the eps=1e-12 angle bound (~8e-6 at gap 1.1), not bitwise together
        np.testing.assert_allclose(np.abs(U.T @ single.U), np.eye(4), atol=1e-5)


def test_sparse_diag():
    run = truncated_svd(CsrMatrix.from_dense(np.diag([5.0, 3.0])), eps=1e-12)
    np.testing.assert_allclose(run.factors.sigma, [5, 3], atol=1e-12)


def test_sparse_random_against_densified_oracle(rng):
    dense = rng.standard_normal((200, 150)) * (rng.random((200, 150)) < 0.05)
    _, s, _ = jacobi_svd(dense)
    run = truncated_svd(CsrMatrix.from_dense(dense), k=10, eps=1e-12, path="residual-free", workers=2, n_b=2)
    np.testing.assert_allclose(run.factors.sigma, s[:10], rtol=1e-5)
    # the CSR operand is never densified: nothing of size m x n or n x n goes to the device
    for st_ in run.store_stats:
        assert st_.peak_device_used < 150 * 150 * 8 // 2


def test_dense_gram_places_b_and_x(rng):
    A, *_ = constructed(rng, 20, 10)
    run = truncated_svd(A, k=3, eps=1e-12, path="dense-gram")
    # A copy, its residual and the n x n Gram coexist on the device
    assert run.store_stats[0].peak_device_used >= (2 * 20 * 10 + 10 * 10) * 8
