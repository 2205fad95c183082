"""Binary checkpoint format.

Layout (all integers little-endian)::

    magic     4s   b"ONCF"
    version   u16
    kind      u8   index into models.KINDS
    K, C      u32, u32
    layers    u32  conv layers for convncf, tower layers for MLP kinds, else 0
    M, N      u32, u32
    count     u32  number of tensor records

followed by `count` records of ``name_len u16, name utf-8, rank u8,
extents u32 * rank, data <f4 * prod(extents)`` in registry order, with
non-trainable buffers (ItemPop counts) after the trainable tensors.
Values are rounded to float32 on save and promoted to float64 on load, so
save -> load -> save reproduces the same bytes.
"""

import struct

import numpy as np

from .errors import ConfigError, DatasetError
from .models import KINDS, Model, ModelConfig, conv_depth, param_groups
from .tensor import from_storage, to_storage

MAGIC = b"ONCF"
VERSION = 1
_HEADER = struct.Struct("<4sHBIIIIII")


def _layer_count(config):
    if config.kind == "convncf":
        return conv_depth(config.K)
    if config.kind in ("oncf_mlp", "jrl", "mlp"):
        return config.mlp_layers
    return 0


def dumps(model):
    cfg = model.config
    tensors = [(n, t) for n, t, _ in model.registry] + list(model.buffers.items())
    parts = [_HEADER.pack(MAGIC, VERSION, KINDS.index(cfg.kind), cfg.K, cfg.C,
                          _layer_count(cfg), model.n_users, model.n_items, len(tensors))]
    for name, t in tensors:
        raw = name.encode()
        parts.append(struct.pack("<H", len(raw)) + raw + struct.pack("<B", t.ndim))
        parts.append(struct.pack(f"<{t.ndim}I", *t.shape))
        parts.append(to_storage(t).tobytes())
    return b"".join(parts)


def save(path, model):
    with open(path, "wb") as fh:
        fh.write(dumps(model))


def read_header(buf):
    if len(buf) < _HEADER.size:
        raise DatasetError("checkpoint truncated before end of header")
    magic, version, kind, K, C, layers, M, N, count = _HEADER.unpack_from(buf)
    if magic != MAGIC:
        raise DatasetError(f"not an ONCF checkpoint (magic {magic!r})")
    if version != VERSION:
        raise DatasetError(f"unsupported checkpoint version {version}")
    if kind >= len(KINDS):
        raise DatasetError(f"unknown model kind index {kind}")
    return {"kind": KINDS[kind], "K": K, "C": C, "layers": layers, "M": M, "N": N, "count": count}


def loads(buf):
    head = read_header(buf)
    kind = head["kind"]
    mlp_layers = head["layers"] if kind in ("oncf_mlp", "jrl", "mlp") else ModelConfig.mlp_layers
    config = ModelConfig(kind=kind, K=head["K"], C=head["C"], mlp_layers=mlp_layers)
    model = Model(config, head["M"], head["N"])
    group_of = param_groups(config)

    off = _HEADER.size
    try:
        for _ in range(head["count"]):
            (n,) = struct.unpack_from("<H", buf, off)
            off += 2
            name = buf[off:off + n].decode()
            off += n
            (rank,) = struct.unpack_from("<B", buf, off)
            off += 1
            shape = struct.unpack_from(f"<{rank}I", buf, off)
            off += 4 * rank
            size = 4 * int(np.prod(shape, dtype=np.int64))
            if off + size > len(buf):
                raise DatasetError(f"checkpoint truncated inside tensor {name!r}")
            t = from_storage(buf[off:off + size], shape)
            off += size
            if name in group_of:
                model.add(name, t, group_of[name])
            else:
                model.buffers[name] = t
    except struct.error as exc:
        raise DatasetError(f"checkpoint truncated: {exc}") from None
    missing = set(group_of) - set(model.params)
    if missing:
        raise DatasetError(f"checkpoint lacks tensors {sorted(missing)}")
    return model


def load(path, expect_K=None):
    with open(path, "rb") as fh:
        model = loads(fh.read())
    if expect_K is not None and model.kind != "itempop" and model.config.K != expect_K:
        raise ConfigError(f"checkpoint {path} has K={model.config.K}, configuration asks for K={expect_K}")
    return model
