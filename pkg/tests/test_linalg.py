import numpy as np
import numpy.testing as npt
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from flashnorm.linalg import (
    ShapeError,
    add,
    as_tensor1,
    as_tensor2,
    dot,
    hadamard,
    identity,
    row_sums,
    scale,
    sum_last,
    vec_mat,
)


def brute_vec_mat(a, W):
    out = []
    for j in range(len(W[0])):
        acc = 0.0
        for i in range(len(a)):
            acc += a[i] * W[i][j]
        out.append(acc)
    return out


def test_vec_mat_examples():
    W = [[1.0, 2.0], [3.0, 4.0]]
    npt.assert_array_equal(vec_mat([1.0, 0.0], W), [1.0, 2.0])
    npt.assert_array_equal(vec_mat([1.0, 1.0], W), [4.0, 6.0])


def test_vec_mat_identity():
    a = np.random.default_rng(0).uniform(-1, 1, 8)
    npt.assert_array_equal(vec_mat(a, identity(8)), a)


def test_vec_mat_matches_ascending_loop_bitwise():
    rng = np.random.default_rng(1)
    a, W = rng.normal(size=37), rng.normal(size=(37, 11))
    assert vec_mat(a, W).tolist() == brute_vec_mat(a.tolist(), W.tolist())


def test_vec_mat_batch_rows_match_single():
    rng = np.random.default_rng(2)
    A, W = rng.normal(size=(5, 9)), rng.normal(size=(9, 4))
    batched = vec_mat(A, W)
    for r in range(5):
        assert batched[r].tolist() == vec_mat(A[r], W).tolist()


def test_vec_mat_mismatch_names_shapes():
    with pytest.raises(ShapeError, match=r"\(3,\).*\(2, 2\)"):
        vec_mat(np.ones(3), np.ones((2, 2)))


def test_row_sums_examples():
    npt.assert_array_equal(row_sums([[1.0, 2.0], [3.0, 4.0]]), [3.0, 7.0])
    npt.assert_array_equal(row_sums(np.zeros((3, 4))), np.zeros(3))
    npt.assert_array_equal(row_sums(identity(3)), [1.0, 1.0, 1.0])


def test_elementwise_examples():
    npt.assert_array_equal(scale([1.0, 2.0], 2.0), [2.0, 4.0])
    npt.assert_array_equal(hadamard([1.0, 2.0], [3.0, 4.0]), [3.0, 8.0])
    assert dot([1.0, 2.0], [3.0, 4.0]) == 11.0
    npt.assert_array_equal(add([1.0, 2.0], [3.0, 4.0]), [4.0, 6.0])


@pytest.mark.parametrize("op", [hadamard, dot, add])
def test_pairwise_length_mismatch(op):
    with pytest.raises(ShapeError):
        op(np.ones(2), np.ones(3))


def test_sum_last_is_left_to_right():
    # (1e16 + 1) + -1e16 loses the 1; pairwise or sorted summation would not
    assert sum_last(np.array([1e16, 1.0, -1e16, 1.0])) == 1.0


def test_tensor_constructors_validate():
    with pytest.raises(ValueError):
        as_tensor1([1.0, np.nan])
    with pytest.raises(ShapeError):
        as_tensor1([[1.0]])
    with pytest.raises(ShapeError):
        as_tensor2([1.0, 2.0])
    assert as_tensor2([[1, 2]], dtype=np.float32).dtype == np.float32


@settings(max_examples=60, deadline=None)
@given(n=st.integers(1, 256), seed=st.integers(0, 2**32 - 1))
def test_identity_property(n, seed):
    a = np.random.default_rng(seed).uniform(-10, 10, n)
    npt.assert_array_equal(vec_mat(a, identity(n)), a)


@settings(max_examples=60, deadline=None)
@given(n=st.integers(1, 64), k=st.integers(1, 64), s=st.floats(-1e3, 1e3), seed=st.integers(0, 2**32 - 1))
def test_scalar_commutes_with_vec_mat(n, k, s, seed):
    rng = np.random.default_rng(seed)
    a, W = rng.uniform(-1, 1, n), rng.uniform(-1, 1, (n, k))
    lhs, rhs = vec_mat(scale(a, s), W), scale(vec_mat(a, W), s)
    # relative to sum |s a_i W_ij|, the natural scale of a rounded dot product
    mag = np.abs(s) * vec_mat(np.abs(a), np.abs(W))
    assert np.all(np.abs(lhs - rhs) <= 1e-12 * mag)


@settings(max_examples=60, deadline=None)
@given(n=st.integers(1, 64), k=st.integers(1, 64), seed=st.integers(0, 2**32 - 1))
def test_row_sums_convention(n, k, seed):
    rng = np.random.default_rng(seed)
    x, V = rng.uniform(-1, 1, n), rng.uniform(-1, 1, (n, k))
    lhs = dot(x, row_sums(V))
    rhs = float(sum_last(vec_mat(x, V)))
    mag = float(np.sum(np.abs(x[:, None] * V)))
    assert abs(lhs - rhs) <= 1e-12 * max(abs(rhs), mag)
