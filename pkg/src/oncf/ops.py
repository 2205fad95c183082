"""Differentiable building blocks with hand-written backward passes.

All functions accept optional leading batch axes, so ``p`` may be a single
embedding of shape ``(K,)`` or a batch of shape ``(B, K)``.  Backward
functions return gradients summed over those batch axes for shared
parameters (filters, weights, biases) and per-example gradients for inputs.
"""

from dataclasses import dataclass

import numpy as np

from .errors import DimensionError
from .tensor import DTYPE, rowwise_matmul


@dataclass
class EmbeddingTable:
    """User (``P``, M x K) and item (``Q``, N x K) embedding matrices."""

    P: np.ndarray
    Q: np.ndarray

    def __post_init__(self):
        self.P = np.ascontiguousarray(self.P, dtype=DTYPE)
        self.Q = np.ascontiguousarray(self.Q, dtype=DTYPE)
        if self.P.ndim != 2 or self.Q.ndim != 2 or self.P.shape[1] != self.Q.shape[1]:
            raise DimensionError(f"embedding shapes {self.P.shape} and {self.Q.shape} are incompatible")

    @property
    def K(self):
        return self.P.shape[1]

    @property
    def n_users(self):
        return self.P.shape[0]

    @property
    def n_items(self):
        return self.Q.shape[0]


@dataclass
class ConvLayerParams:
    """2x2 stride-2 convolution layer.

    `filters` is ``(2, 2, C)`` for a layer reading the single-channel
    interaction map and ``(2, 2, C_in, C)`` for deeper layers.  One bias per
    output feature map.
    """

    filters: np.ndarray
    bias: np.ndarray

    @property
    def channels(self):
        return self.filters.shape[-1]

    @property
    def reads_map(self):
        return self.filters.ndim == 3


def _check_ids(ids, n, what):
    ids = np.asarray(ids)
    if ids.size and (ids.min() < 0 or ids.max() >= n):
        raise IndexError(f"{what} id out of range [0, {n})")
    return ids


def lookup(table, u, i):
    """Rows ``P[u]`` and ``Q[i]``; `u` and `i` may be scalars or arrays."""
    u = _check_ids(u, table.n_users, "user")
    i = _check_ids(i, table.n_items, "item")
    return table.P[u], table.Q[i]


def _same_length(p, q):
    if p.shape[-1] != q.shape[-1]:
        raise DimensionError(f"embedding lengths differ: {p.shape[-1]} vs {q.shape[-1]}")


def outer_product(p, q):
    """Interaction map ``E[k1, k2] = p[k1] * q[k2]``."""
    p = np.asarray(p, dtype=DTYPE)
    q = np.asarray(q, dtype=DTYPE)
    _same_length(p, q)
    return p[..., :, None] * q[..., None, :]


def outer_product_backward(grad_e, p, q):
    p = np.asarray(p, dtype=DTYPE)
    q = np.asarray(q, dtype=DTYPE)
    _same_length(p, q)
    k = p.shape[-1]
    if grad_e.shape[-2:] != (k, k):
        raise DimensionError(f"gradient map shape {grad_e.shape} does not match K={k}")
    grad_p = np.einsum("...ab,...b->...a", grad_e, q)
    grad_q = np.einsum("...ab,...a->...b", grad_e, p)
    return grad_p, grad_q


def ewise_product(p, q):
    p = np.asarray(p, dtype=DTYPE)
    q = np.asarray(q, dtype=DTYPE)
    _same_length(p, q)
    return p * q


def concat(p, q):
    p = np.asarray(p, dtype=DTYPE)
    q = np.asarray(q, dtype=DTYPE)
    _same_length(p, q)
    return np.concatenate([p, q], axis=-1)


def relu(x):
    return np.maximum(x, 0.0)


# -- convolution ------------------------------------------------------------


def _kernel_matrix(params):
    """Flipped filters laid out as a ``(4 * C_in, C)`` matrix.

    Output ``(i, j, c)`` reads input ``(2i+a, 2j+b)`` against filter tap
    ``(1-a, 1-b)``; flipping both spatial axes lets the patch index ``(a, b)``
    address the kernel directly.
    """
    t = params.filters
    if params.reads_map:
        t = t[:, :, None, :]
    return t[::-1, ::-1].reshape(-1, t.shape[-1])


def _to_patches(x, reads_map):
    """``(..., s, s[, C_in])`` -> ``(..., s/2, s/2, 4 * C_in)`` non-overlapping tiles."""
    if reads_map:
        x = x[..., None]
    if x.ndim < 3:
        raise DimensionError(f"convolution input of shape {x.shape} has no spatial grid")
    s, s2, cin = x.shape[-3:]
    if s != s2 or s < 2 or s % 2:
        raise DimensionError(f"convolution input must be square with even side, got {s}x{s2}")
    lead = x.shape[:-3]
    nb = len(lead)
    h = s // 2
    x = x.reshape(lead + (h, 2, h, 2, cin))
    x = x.transpose(tuple(range(nb)) + (nb, nb + 2, nb + 1, nb + 3, nb + 4))
    return x.reshape(lead + (h, h, 4 * cin))


def _from_patches(patches, cin, reads_map):
    lead = patches.shape[:-3]
    nb = len(lead)
    h = patches.shape[-3]
    x = patches.reshape(lead + (h, h, 2, 2, cin))
    x = x.transpose(tuple(range(nb)) + (nb, nb + 2, nb + 1, nb + 3, nb + 4))
    x = x.reshape(lead + (2 * h, 2 * h, cin))
    return x[..., 0] if reads_map else x


def _check_channels(x, params):
    if not params.reads_map and x.shape[-1] != params.filters.shape[2]:
        raise DimensionError(f"input has {x.shape[-1]} channels, filters expect {params.filters.shape[2]}")
    if params.bias.shape != (params.channels,):
        raise DimensionError(f"bias shape {params.bias.shape} does not match {params.channels} feature maps")


def conv_forward(x, params):
    """One ReLU(2x2, stride 2) layer; halves each spatial side."""
    x = np.asarray(x, dtype=DTYPE)
    _check_channels(x, params)
    patches = _to_patches(x, params.reads_map)
    return relu(rowwise_matmul(patches, _kernel_matrix(params)) + params.bias)


def conv_backward(grad_out, x, params, out):
    """Gradients of :func:`conv_forward` given its input `x` and output `out`.

    The ReLU gate is ``out > 0``, i.e. strictly positive pre-activation.
    Returns ``(grad_x, grad_filters, grad_bias)``.
    """
    x = np.asarray(x, dtype=DTYPE)
    _check_channels(x, params)
    if grad_out.shape != out.shape:
        raise DimensionError(f"gradient shape {grad_out.shape} != output shape {out.shape}")
    cin = 1 if params.reads_map else x.shape[-1]
    kernel = _kernel_matrix(params)
    c = kernel.shape[1]
    gz = grad_out * (out > 0)
    patches = _to_patches(x, params.reads_map)
    gz2 = gz.reshape(-1, c)
    grad_bias = gz2.sum(axis=0)
    grad_kernel = patches.reshape(-1, kernel.shape[0]).T @ gz2
    grad_t = grad_kernel.reshape(2, 2, cin, c)[::-1, ::-1]
    grad_filters = np.ascontiguousarray(grad_t[:, :, 0, :] if params.reads_map else grad_t)
    grad_x = _from_patches(gz @ kernel.T, cin, params.reads_map)
    return grad_x, grad_filters, grad_bias


# -- fully connected ----------------------------------------------------------


def dense(x, W, b, activation="relu"):
    """``activation(x @ W + b)`` with `W` of shape ``(D, H)``."""
    x = np.asarray(x, dtype=DTYPE)
    if W.ndim != 2 or x.shape[-1] != W.shape[0] or b.shape != (W.shape[1],):
        raise DimensionError(f"dense shapes x{x.shape} W{W.shape} b{b.shape} do not align")
    z = rowwise_matmul(x, W) + b
    if activation == "relu":
        return relu(z)
    if activation == "none":
        return z
    raise ValueError(f"unknown activation {activation!r}")


def dense_backward(grad_out, x, W, out, activation="relu"):
    """Returns ``(grad_x, grad_W, grad_b)``."""
    x = np.asarray(x, dtype=DTYPE)
    if grad_out.shape != out.shape:
        raise DimensionError(f"gradient shape {grad_out.shape} != output shape {out.shape}")
    gz = grad_out * (out > 0) if activation == "relu" else grad_out
    gz2 = gz.reshape(-1, W.shape[1])
    grad_W = x.reshape(-1, W.shape[0]).T @ gz2
    grad_b = gz2.sum(axis=0)
    grad_x = gz @ W.T
    return grad_x, grad_W, grad_b
