import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from hypothesis.extra import numpy as hnp

from oncf import tensor
from oncf.errors import DimensionError


def test_matvec_examples():
    np.testing.assert_array_equal(tensor.matvec([[1, 0], [0, 1]], [5, 7]), [5, 7])
    np.testing.assert_array_equal(tensor.matvec([[1, 2], [3, 4]], [1, 1]), [3, 7])
    np.testing.assert_array_equal(tensor.matvec(np.zeros((3, 2)), [2.5, -1]), np.zeros(3))


def test_matvec_shape_mismatch():
    with pytest.raises(DimensionError):
        tensor.matvec(np.ones((2, 3)), np.ones(2))


def test_ewise():
    np.testing.assert_array_equal(tensor.ewise([1, 2], [3, 4], "mul"), [3, 8])
    np.testing.assert_array_equal(tensor.ewise([1, 2], [3, 4], "add"), [4, 6])
    a = np.array([0.25, -3.0])
    np.testing.assert_array_equal(tensor.ewise(a, np.zeros(2)), a)
    with pytest.raises(DimensionError):
        tensor.ewise([1, 2], [1, 2, 3])


def test_flatten():
    np.testing.assert_array_equal(tensor.flatten([[1, 2], [3, 4]]), [1, 2, 3, 4])
    np.testing.assert_array_equal(tensor.flatten(np.ones((2, 2, 2))), np.ones(8))
    v = np.array([3.0, 1.0, 2.0])
    np.testing.assert_array_equal(tensor.flatten(v), v)


def test_as_tensor_contract():
    with pytest.raises(DimensionError):
        tensor.as_tensor(np.arange(6), (4, 2))
    with pytest.raises(DimensionError):
        tensor.as_tensor(np.zeros((1, 1, 1, 1, 1)))
    with pytest.raises(IndexError):
        tensor.as_tensor(np.zeros((2, 2)))[2, 0]


shapes = hnp.array_shapes(min_dims=1, max_dims=4, max_side=5)


@given(hnp.arrays(np.float64, shapes, elements=st.floats(-1e6, 1e6)))
def test_flatten_reshape_round_trip(a):
    np.testing.assert_array_equal(tensor.reshape(tensor.flatten(a), a.shape), a)


@settings(max_examples=50)
@given(st.integers(1, 6), st.integers(1, 6), st.integers(0, 2**32 - 1))
def test_matvec_distributes_over_add(m, n, seed):
    r = np.random.default_rng(seed)
    M, v, w = r.normal(size=(m, n)), r.normal(size=n), r.normal(size=n)
    lhs = tensor.matvec(M, tensor.ewise(v, w))
    rhs = tensor.ewise(tensor.matvec(M, v), tensor.matvec(M, w))
    scale = np.abs(M) @ (np.abs(v) + np.abs(w))
    assert np.all(np.abs(lhs - rhs) <= 1e-12 * np.maximum(scale, 1e-300))


def test_rowwise_matmul_independent_of_batch(rng):
    x = rng.normal(size=(300, 32))
    w = rng.normal(size=(32, 8))
    full = tensor.rowwise_matmul(x, w)
    for r in (0, 17, 299):
        assert np.array_equal(tensor.rowwise_matmul(x[r:r + 1], w)[0], full[r])


def test_storage_round_trip(rng):
    t = rng.normal(size=(3, 4))
    raw = tensor.to_storage(t).tobytes()
    back = tensor.from_storage(raw, (3, 4))
    assert back.dtype == np.float64
    assert tensor.to_storage(back).tobytes() == raw
