"""Recommender models sharing one scoring interface.

Every model keeps its trainable tensors in ``params`` (an insertion-ordered
dict) with a regularisation group tag per tensor in ``groups``:
``embedding`` for P/Q, ``hidden`` for convolution and tower layers, and
``output`` for the prediction vector ``w``.  ``forward`` caches what
``backward`` needs, so a training step is one forward over the positive and
negative items followed by one backward.
"""

from dataclasses import asdict, dataclass

import numpy as np

from . import ops
from .errors import ConfigError
from .ops import ConvLayerParams, EmbeddingTable
from .tensor import DTYPE, rowwise_matmul

KINDS = ("convncf", "oncf_mlp", "mf_bpr", "gmf", "jrl", "mlp", "itempop")
GROUPS = ("embedding", "hidden", "output")
CONVNCF_SIZES = (4, 8, 16, 32, 64, 128)
EMBEDDING_STD = 0.01
OUTPUT_STD = 0.01
SCORE_CHUNK = 256


@dataclass
class ModelConfig:
    kind: str = "convncf"
    K: int = 64
    C: int = 32
    mlp_layers: int = 3
    seed: int = 0

    def validate(self):
        if self.kind not in KINDS:
            raise ConfigError(f"unknown model kind {self.kind!r}; choose from {', '.join(KINDS)}")
        if self.K < 1 or self.C < 1:
            raise ConfigError("K and C must be positive")
        if self.kind == "convncf" and self.K not in CONVNCF_SIZES:
            raise ConfigError(f"convncf needs K in {CONVNCF_SIZES}, got {self.K}")
        if self.kind in ("oncf_mlp", "jrl", "mlp"):
            if not 1 <= self.mlp_layers <= 3:
                raise ConfigError(f"mlp_layers must be 1..3, got {self.mlp_layers}")
            if tower_input_size(self) >> self.mlp_layers < 1:
                raise ConfigError(f"K={self.K} is too small for a {self.mlp_layers}-layer tower")
        return self

    def to_dict(self):
        return asdict(self)


def tower_input_size(config):
    return {"oncf_mlp": config.K * config.K, "jrl": config.K, "mlp": 2 * config.K}[config.kind]


def tower_sizes(config):
    """Input width followed by each hidden width, halving layer by layer."""
    d = tower_input_size(config)
    return [d >> k for k in range(config.mlp_layers + 1)]


def conv_depth(K):
    return int(K).bit_length() - 1


class Model:
    def __init__(self, config, n_users, n_items):
        self.config = config.validate()
        self.kind = config.kind
        self.n_users = int(n_users)
        self.n_items = int(n_items)
        self.params = {}
        self.groups = {}
        self.buffers = {}

    def add(self, name, tensor, group):
        if group not in GROUPS:
            raise ConfigError(f"unknown parameter group {group!r}")
        self.params[name] = np.ascontiguousarray(tensor, dtype=DTYPE)
        self.groups[name] = group

    @property
    def registry(self):
        """``(name, tensor, group)`` for every trainable tensor."""
        return [(n, t, self.groups[n]) for n, t in self.params.items()]

    @property
    def conv_layers(self):
        n = sum(1 for k in self.params if k.endswith(".filters"))
        return [ConvLayerParams(self.params[f"conv{l}.filters"], self.params[f"conv{l}.bias"])
                for l in range(1, n + 1)]

    @property
    def dense_layers(self):
        n = sum(1 for k in self.params if k.startswith("dense") and k.endswith(".W"))
        return [(self.params[f"dense{l}.W"], self.params[f"dense{l}.b"]) for l in range(1, n + 1)]

    @property
    def embeddings(self):
        return EmbeddingTable(self.params["P"].copy(), self.params["Q"].copy())

    def copy(self):
        other = Model(self.config, self.n_users, self.n_items)
        for name, t, group in self.registry:
            other.add(name, t.copy(), group)
        other.buffers = {k: v.copy() for k, v in self.buffers.items()}
        return other

    # -- scoring ----------------------------------------------------------

    def _check(self, users, items):
        users = np.asarray(users, dtype=np.int64)
        items = np.asarray(items, dtype=np.int64)
        if users.size and (users.min() < 0 or users.max() >= self.n_users):
            raise IndexError(f"user id out of range [0, {self.n_users})")
        if items.size and (items.min() < 0 or items.max() >= self.n_items):
            raise IndexError(f"item id out of range [0, {self.n_items})")
        return users, items

    def forward(self, users, items):
        """Scores for aligned 1-D arrays of user and item ids, plus a backward cache."""
        users, items = self._check(users, items)
        cache = {"users": users, "items": items}
        if self.kind == "itempop":
            return self.buffers["popularity"][items].astype(DTYPE), cache

        P, Q = self.params["P"], self.params["Q"]
        p, q = P[users], Q[items]
        cache["p"], cache["q"] = p, q
        if self.kind == "mf_bpr":
            return np.einsum("bk,bk->b", p, q), cache

        if self.kind == "convncf":
            h = [ops.outer_product(p, q)]
            for layer in self.conv_layers:
                h.append(ops.conv_forward(h[-1], layer))
            g = h[-1].reshape(len(users), -1)
            cache["acts"] = h
        elif self.kind == "gmf":
            g = ops.ewise_product(p, q)
        else:
            if self.kind == "oncf_mlp":
                x = ops.outer_product(p, q).reshape(len(users), -1)
            elif self.kind == "jrl":
                x = ops.ewise_product(p, q)
            else:
                x = ops.concat(p, q)
            h = [x]
            for W, b in self.dense_layers:
                h.append(ops.dense(h[-1], W, b, "relu"))
            g = h[-1]
            cache["acts"] = h
        cache["g"] = g
        return rowwise_matmul(g, self.params["w"][:, None])[:, 0], cache

    def backward(self, cache, grad_scores):
        """Gradients of ``sum(grad_scores * scores)`` w.r.t. every trainable tensor."""
        grads = {name: np.zeros_like(t) for name, t in self.params.items()}
        if self.kind == "itempop":
            return grads
        gs = np.asarray(grad_scores, dtype=DTYPE)
        p, q = cache["p"], cache["q"]

        if self.kind == "mf_bpr":
            gp, gq = gs[:, None] * q, gs[:, None] * p
        else:
            g = cache["g"]
            grads["w"] = g.T @ gs
            gg = gs[:, None] * self.params["w"][None, :]
            if self.kind == "gmf":
                gp, gq = gg * q, gg * p
            elif self.kind == "convncf":
                h = cache["acts"]
                layers = self.conv_layers
                gh = gg.reshape(h[-1].shape)
                for l in range(len(layers), 0, -1):
                    gh, gf, gb = ops.conv_backward(gh, h[l - 1], layers[l - 1], h[l])
                    grads[f"conv{l}.filters"] = gf
                    grads[f"conv{l}.bias"] = gb
                gp, gq = ops.outer_product_backward(gh, p, q)
            else:
                h = cache["acts"]
                layers = self.dense_layers
                gh = gg
                for l in range(len(layers), 0, -1):
                    W, _ = layers[l - 1]
                    gh, gW, gb = ops.dense_backward(gh, h[l - 1], W, h[l], "relu")
                    grads[f"dense{l}.W"] = gW
                    grads[f"dense{l}.b"] = gb
                if self.kind == "oncf_mlp":
                    K = p.shape[1]
                    gp, gq = ops.outer_product_backward(gh.reshape(-1, K, K), p, q)
                elif self.kind == "jrl":
                    gp, gq = gh * q, gh * p
                else:
                    K = p.shape[1]
                    gp, gq = gh[:, :K], gh[:, K:]
        np.add.at(grads["P"], cache["users"], gp)
        np.add.at(grads["Q"], cache["items"], gq)
        return grads

    def score(self, u, i):
        return float(self.forward([u], [i])[0][0])

    def score_items(self, u, items):
        """Scores of `items` for one user; each entry equals ``score(u, i)`` exactly."""
        items = np.asarray(items, dtype=np.int64)
        out = np.empty(len(items), dtype=DTYPE)
        for start in range(0, len(items), SCORE_CHUNK):
            chunk = items[start:start + SCORE_CHUNK]
            out[start:start + len(chunk)] = self.forward(np.full(len(chunk), u), chunk)[0]
        return out

    def count_params(self, groups=GROUPS):
        groups = set(groups)
        return int(sum(t.size for _, t, g in self.registry if g in groups))


def init_model(config, n_users, n_items, rng=None, pretrained=None, popularity=None):
    """Build a model with freshly drawn parameters.

    Embeddings come from `pretrained` when given, else N(0, 0.01^2); conv
    filters and tower weights use He scaling ``sqrt(2 / fan_in)``; biases
    start at 0 and ``w`` at N(0, 0.01^2).  With no `rng`, one is seeded from
    ``config.seed``.  ``itempop`` needs the training `popularity` counts.
    """
    config.validate()
    rng = np.random.default_rng(config.seed) if rng is None else rng
    model = Model(config, n_users, n_items)
    K, C = config.K, config.C

    if config.kind == "itempop":
        if popularity is None:
            raise ConfigError("itempop needs item popularity counts")
        pop = np.asarray(popularity, dtype=DTYPE)
        if pop.shape != (n_items,):
            raise ConfigError(f"popularity has shape {pop.shape}, expected ({n_items},)")
        model.buffers["popularity"] = pop
        return model

    if pretrained is not None:
        if pretrained.K != K or pretrained.n_users != n_users or pretrained.n_items != n_items:
            raise ConfigError(
                f"pretrained embeddings are {pretrained.n_users}x{pretrained.K} / "
                f"{pretrained.n_items}x{pretrained.K}, model needs {n_users}x{K} / {n_items}x{K}")
        model.add("P", pretrained.P.copy(), "embedding")
        model.add("Q", pretrained.Q.copy(), "embedding")
    else:
        model.add("P", rng.normal(0.0, EMBEDDING_STD, (n_users, K)), "embedding")
        model.add("Q", rng.normal(0.0, EMBEDDING_STD, (n_items, K)), "embedding")

    if config.kind == "mf_bpr":
        return model
    if config.kind == "convncf":
        cin = None
        for l in range(1, conv_depth(K) + 1):
            shape = (2, 2, C) if cin is None else (2, 2, cin, C)
            fan_in = 4 * (cin or 1)
            model.add(f"conv{l}.filters", rng.normal(0.0, np.sqrt(2.0 / fan_in), shape), "hidden")
            model.add(f"conv{l}.bias", np.zeros(C), "hidden")
            cin = C
        width = C
    elif config.kind == "gmf":
        width = K
    else:
        sizes = tower_sizes(config)
        for l, (d, h) in enumerate(zip(sizes[:-1], sizes[1:]), 1):
            model.add(f"dense{l}.W", rng.normal(0.0, np.sqrt(2.0 / d), (d, h)), "hidden")
            model.add(f"dense{l}.b", np.zeros(h), "hidden")
        width = sizes[-1]
    model.add("w", rng.normal(0.0, OUTPUT_STD, width), "output")
    return model


def param_groups(config):
    """Name -> group for every trainable tensor a model of `config` holds."""
    config.validate()
    if config.kind == "itempop":
        return {}
    out = {"P": "embedding", "Q": "embedding"}
    if config.kind == "mf_bpr":
        return out
    if config.kind == "convncf":
        for l in range(1, conv_depth(config.K) + 1):
            out[f"conv{l}.filters"] = out[f"conv{l}.bias"] = "hidden"
    elif config.kind != "gmf":
        for l in range(1, config.mlp_layers + 1):
            out[f"dense{l}.W"] = out[f"dense{l}.b"] = "hidden"
    out["w"] = "output"
    return out


def count_params(model, groups=GROUPS):
    return model.count_params(groups)
