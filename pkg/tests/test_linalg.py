import warnings

import numpy as np
import pytest
import scipy.sparse as sp
from hypothesis import given, strategies as st
from hypothesis.extra.numpy import arrays

from tos_spdhg.linalg import (
    BlockLinearOperator, FiniteDifference2D, as_metric, block_sqnorm,
    finite_difference_2d, finite_difference_2d_adjoint, power_method_norm,
    read_triplets, write_triplets,
)

finite = st.floats(-1e3, 1e3, allow_nan=False)


def random_sparse_blocks(rng, shapes, density=0.5):
    return [sp.random(m, d, density=density, random_state=rng, format="csr")
            for m, d in shapes]


def test_identity_apply_and_adjoint():
    A = BlockLinearOperator.identity(3)
    out = A.apply([1.0, 2.0, 3.0])
    assert len(out) == 1
    np.testing.assert_array_equal(out[0], [1, 2, 3])
    np.testing.assert_array_equal(A.adjoint([np.array([1.0, 2.0, 3.0])]), [1, 2, 3])
    np.testing.assert_array_equal(A.adjoint_block(0, [4.0, 5.0, 6.0]), [4, 5, 6])


def test_zero_operator():
    A = BlockLinearOperator.zero(4, [2, 3])
    for blk in A.apply(np.arange(4.0)):
        assert not blk.any()
    assert not A.adjoint([np.ones(2), np.ones(3)]).any()


def test_two_sparse_blocks_match_dense(rng):
    blocks = random_sparse_blocks(rng, [(4, 3), (4, 3)])
    A = BlockLinearOperator(blocks)
    dense = np.vstack([b.toarray() for b in blocks])
    x = rng.standard_normal(3)
    np.testing.assert_allclose(np.concatenate(A.apply(x)), dense @ x, rtol=0, atol=1e-12)
    y = [rng.standard_normal(4), rng.standard_normal(4)]
    np.testing.assert_allclose(A.adjoint(y), dense.T @ np.concatenate(y), rtol=0, atol=1e-12)


def test_block_adjoint_equals_full_adjoint_with_other_blocks_zeroed(rng):
    A = BlockLinearOperator([rng.standard_normal((m, 6)) for m in (2, 3, 4)])
    yi = rng.standard_normal(3)
    full = A.adjoint([np.zeros(2), yi, np.zeros(4)])
    np.testing.assert_allclose(A.adjoint_block(1, yi), full, atol=1e-14)
    assert not A.adjoint_block(2, np.zeros(4)).any()


def test_dense_sparse_and_procedural_blocks_agree(rng):
    mats = [rng.standard_normal((3, 5)), rng.standard_normal((2, 5))]
    dense = BlockLinearOperator(mats)
    sparse = BlockLinearOperator([sp.csr_matrix(m) for m in mats])
    proc = BlockLinearOperator([sp.linalg.aslinearoperator(m) for m in mats])
    x = rng.standard_normal(5)
    y = [rng.standard_normal(3), rng.standard_normal(2)]
    for op in (sparse, proc):
        for a, b in zip(dense.apply(x), op.apply(x)):
            np.testing.assert_allclose(a, b, atol=1e-13)
        np.testing.assert_allclose(dense.adjoint(y), op.adjoint(y), atol=1e-13)


def test_from_matrix_splits_rows(rng):
    M = rng.standard_normal((7, 4))
    A = BlockLinearOperator.from_matrix(M, [3, 4])
    assert A.block_dims == (3, 4)
    np.testing.assert_allclose(A.to_dense(), M, atol=1e-14)
    with pytest.raises(ValueError, match="sum to 6"):
        BlockLinearOperator.from_matrix(M, [3, 3])


def test_dimension_errors_name_both_dims():
    A = BlockLinearOperator([np.ones((2, 3))])
    with pytest.raises(ValueError, match="3.*\\(4,\\)"):
        A.apply(np.ones(4))
    with pytest.raises(ValueError, match="block 0 has dim 2"):
        A.adjoint_block(0, np.ones(5))
    with pytest.raises(ValueError, match="expected 1 dual blocks"):
        A.adjoint([np.ones(2), np.ones(2)])
    with pytest.raises(IndexError):
        A.apply_block(1, np.ones(3))
    with pytest.raises(ValueError, match="disagree"):
        BlockLinearOperator([np.ones((2, 3)), np.ones((2, 4))])


def test_split_roundtrip(rng):
    A = BlockLinearOperator([np.ones((2, 3)), np.ones((4, 3))])
    flat = rng.standard_normal(6)
    parts = A.split(flat)
    assert [p.size for p in parts] == [2, 4]
    np.testing.assert_array_equal(np.concatenate(parts), flat)


@given(st.integers(1, 4), st.integers(1, 6), st.integers(0, 2 ** 32 - 1))
def test_adjoint_identity_random_operators(n, d, seed):
    rng = np.random.default_rng(seed)
    dims = rng.integers(1, 5, n)
    A = BlockLinearOperator([rng.standard_normal((m, d)) for m in dims])
    x = rng.standard_normal(d)
    y = [rng.standard_normal(m) for m in dims]
    lhs = sum(float(a @ b) for a, b in zip(A.apply(x), y))
    rhs = float(x @ A.adjoint(y))
    assert lhs == pytest.approx(rhs, rel=1e-12, abs=1e-12)


# --- power method ---------------------------------------------------------

def test_power_method_identity():
    assert power_method_norm(np.eye(3), tol=1e-10) == pytest.approx(1.0, abs=1e-10)


def test_power_method_diagonal():
    assert power_method_norm(np.diag([3.0, 1.0]), tol=1e-10) == pytest.approx(3.0, rel=1e-8)


def test_power_method_matches_svd(rng):
    M = rng.standard_normal((20, 10))
    est = power_method_norm(M, tol=1e-12, max_iter=10000)
    assert est == pytest.approx(np.linalg.norm(M, 2), rel=1e-6)


def test_power_method_is_deterministic_given_seed(rng):
    M = rng.standard_normal((8, 8))
    a = power_method_norm(M, tol=1e-3, seed=5, full_output=True)
    b = power_method_norm(M, tol=1e-3, seed=5, full_output=True)
    assert a[0] == b[0]
    np.testing.assert_array_equal(a[2], b[2])


def test_power_method_nonconvergence_warns_and_returns_estimate():
    # two nearly equal singular values: convergence is very slow
    M = np.diag([1.0, 0.999999, 0.5])
    with pytest.warns(RuntimeWarning, match="did not reach"):
        est, converged, hist = power_method_norm(M, tol=1e-15, max_iter=3,
                                                 full_output=True)
    assert not converged
    assert len(hist) == 3
    assert 0.5 <= est <= 1.0


def test_power_method_zero_operator():
    assert power_method_norm(np.zeros((3, 2))) == 0.0


def test_power_method_rejects_bad_tol():
    with pytest.raises(ValueError):
        power_method_norm(np.eye(2), tol=0)


def test_block_norms_match_svd(rng):
    mats = [rng.standard_normal((4, 6)) for _ in range(3)]
    A = BlockLinearOperator(mats)
    np.testing.assert_allclose(A.block_norms(tol=1e-12, max_iter=5000),
                               [np.linalg.norm(m, 2) for m in mats], rtol=1e-6)
    assert A.norm(tol=1e-12, max_iter=5000) == pytest.approx(
        np.linalg.norm(np.vstack(mats), 2), rel=1e-6)


# --- finite differences ---------------------------------------------------

def test_constant_image_has_zero_differences():
    assert not finite_difference_2d(np.full(12, 3.0), 3, 4).any()


def test_hand_checked_two_by_two():
    img = np.array([[0.0, 1.0], [0.0, 1.0]]).ravel()
    out = finite_difference_2d(img, 2, 2)
    horiz, vert = out[:4].reshape(2, 2), out[4:].reshape(2, 2)
    np.testing.assert_array_equal(horiz[:, 0], [1, 1])
    np.testing.assert_array_equal(horiz[:, 1], [0, 0])
    assert not vert.any()


def test_finite_difference_adjoint(rng):
    x = rng.standard_normal(64)
    z = rng.standard_normal(128)
    lhs = finite_difference_2d(x, 8, 8) @ z
    rhs = x @ finite_difference_2d_adjoint(z, 8, 8)
    assert lhs == pytest.approx(rhs, rel=1e-12)


def test_finite_difference_norm_below_bound():
    D = FiniteDifference2D(9, 7)
    assert power_method_norm(D, tol=1e-10, max_iter=5000) ** 2 <= 8.0


def test_finite_difference_shape_check():
    with pytest.raises(ValueError):
        finite_difference_2d(np.ones(10), 3, 3)


# --- metrics and helpers --------------------------------------------------

@given(arrays(float, st.integers(1, 5), elements=st.floats(1e-6, 1e6)))
def test_as_metric_accepts_positive(diag):
    np.testing.assert_array_equal(as_metric(diag, diag.size), diag)


@pytest.mark.parametrize("bad", [0.0, -1.0, np.inf, np.nan])
def test_as_metric_rejects_nonpositive(bad):
    with pytest.raises(ValueError, match="strictly positive"):
        as_metric([1.0, bad], 2)


def test_block_sqnorm_weights():
    assert block_sqnorm([np.array([1.0, 2.0]), np.array([3.0])], [2.0, 0.5]) == 2 * 5 + 4.5


# --- triplet I/O ----------------------------------------------------------

def test_triplet_roundtrip(tmp_path, rng):
    M = sp.random(6, 5, density=0.4, random_state=rng, format="csr")
    path = tmp_path / "m.txt"
    write_triplets(path, M)
    back = read_triplets(path)
    assert back.shape == M.shape
    assert abs(back - M).max() == 0


def test_triplet_errors(tmp_path):
    path = tmp_path / "bad.txt"
    path.write_text("2 2\n")
    with pytest.raises(ValueError, match="bad header"):
        read_triplets(path)
    path.write_text("2 2 2\n0 0 1.0\n")
    with pytest.raises(ValueError, match="header says 2"):
        read_triplets(path)
    path.write_text("2 2 1\n5 0 1.0\n")
    with pytest.raises(ValueError, match="out of bounds"):
        read_triplets(path)
    with pytest.raises(OSError):
        read_triplets(tmp_path / "missing.txt")


def test_no_warning_for_converged_run():
    with warnings.catch_warnings():
        warnings.simplefilter("error")
        power_method_norm(np.eye(4))
