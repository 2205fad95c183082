"""
The interaction map and the convolution tower
=============================================

Builds one outer-product map, walks it through the 2x2 stride-2 stack and
shows how far one entry's influence spreads at each layer.
"""

import numpy as np

from oncf import ops
from oncf.models import ModelConfig, count_params, init_model

rng = np.random.default_rng(0)
K = 16
p, q = rng.normal(size=K), rng.normal(size=K)

# every entry is one pairwise product; the diagonal holds the MF terms
E = ops.outer_product(p, q)
print("map shape", E.shape)
print("trace == dot:", np.isclose(np.trace(E), p @ q))
print("rank", np.linalg.matrix_rank(E))

# a small stack with positive weights, so nothing gets clipped by ReLU
C = 4
layers = [ops.ConvLayerParams(rng.uniform(0.5, 1.5, (2, 2, C)), np.ones(C))]
layers += [ops.ConvLayerParams(rng.uniform(0.5, 1.5, (2, 2, C, C)), np.ones(C)) for _ in range(3)]

base = np.abs(E)
poked = base.copy()
poked[5, 9] += 1.0
a, b = base, poked
for l, layer in enumerate(layers, 1):
    a, b = ops.conv_forward(a, layer), ops.conv_forward(b, layer)
    where = np.argwhere(np.any(a != b, axis=-1)).tolist()
    print(f"layer {l}: {a.shape[0]}x{a.shape[1]} map, change at {where}, covers {2 ** l}x{2 ** l} inputs")

# parameter budget at the usual size
m = init_model(ModelConfig("convncf", K=64, C=32), 1, 1)
print("ConvNCF hidden+output parameters:", count_params(m, {"hidden", "output"}))
