"""Dense float64 tensor helpers.

Tensors are plain ``numpy.ndarray`` objects in C (row-major) order.  Training
math runs in float64; :func:`to_storage` / :func:`from_storage` convert to and
from the little-endian float32 layout used in checkpoints.
"""

import numpy as np

from .errors import DimensionError

DTYPE = np.float64
STORAGE_DTYPE = np.dtype("<f4")
MAX_RANK = 4


def as_tensor(data, shape=None):
    """Return a contiguous float64 array, optionally reshaped to `shape`."""
    t = np.ascontiguousarray(data, dtype=DTYPE)
    if shape is not None:
        shape = tuple(int(s) for s in shape)
        if int(np.prod(shape, dtype=np.int64)) != t.size:
            raise DimensionError(f"cannot view {t.size} values as shape {shape}")
        t = t.reshape(shape)
    if t.ndim > MAX_RANK:
        raise DimensionError(f"rank {t.ndim} exceeds supported maximum {MAX_RANK}")
    return t


def zeros(shape):
    return np.zeros(shape, dtype=DTYPE)


def matvec(m, v):
    m = np.asarray(m, dtype=DTYPE)
    v = np.asarray(v, dtype=DTYPE)
    if m.ndim != 2 or v.ndim != 1 or m.shape[1] != v.shape[0]:
        raise DimensionError(f"matvec shapes {m.shape} and {v.shape} do not align")
    return m @ v


def ewise(a, b, op="add"):
    a = np.asarray(a, dtype=DTYPE)
    b = np.asarray(b, dtype=DTYPE)
    if a.shape != b.shape:
        raise DimensionError(f"element-wise shapes differ: {a.shape} vs {b.shape}")
    if op == "add":
        return a + b
    if op == "mul":
        return a * b
    raise ValueError(f"unknown element-wise op {op!r}")


def flatten(t):
    return np.ascontiguousarray(t, dtype=DTYPE).reshape(-1)


def reshape(t, shape):
    return as_tensor(t, shape)


def rowwise_matmul(x, w):
    """``x @ w`` over the last axis of `x`, batch-size independent.

    BLAS picks different kernels (and summation orders) depending on the
    number of rows, so a row scored alone can differ in the last bit from the
    same row scored inside a batch.  ``einsum`` without path optimisation
    reduces each output element the same way regardless of the batch.
    """
    if x.shape[-1] != w.shape[0]:
        raise DimensionError(f"cannot multiply {x.shape} by {w.shape}")
    return np.einsum("...d,dh->...h", x, w)


def to_storage(t):
    return np.ascontiguousarray(t, dtype=STORAGE_DTYPE)


def from_storage(buf, shape):
    return np.frombuffer(buf, dtype=STORAGE_DTYPE).astype(DTYPE).reshape(shape)
