"""Leave-one-out ranking metrics (HR@k, NDCG@k) and their per-epoch history."""

import hashlib
import json
import os
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from typing import NamedTuple

import numpy as np

from .errors import ProtocolError

DEFAULT_KS = (5, 10, 20)
TAIL_WINDOW = 10


class RankResult(NamedTuple):
    user: int
    rank: int


def rank_from_scores(test_score, negative_scores):
    """1-based rank of the test item; negatives tying it are ranked ahead."""
    return 1 + int(np.count_nonzero(np.asarray(negative_scores) >= test_score))


def rank_test_item(model, ds, u):
    if not 0 <= u < ds.n_users:
        raise ProtocolError(f"user {u} has no held-out test item")
    scores = model.score_items(u, ds.candidates(u))
    return RankResult(u, rank_from_scores(scores[0], scores[1:]))


def hr_at_k(rank, k):
    return (np.asarray(rank) <= k).astype(np.float64) if np.ndim(rank) else float(rank <= k)


def ndcg_at_k(rank, k):
    """``1 / log2(rank + 1)`` inside the top k, else 0 (one relevant item)."""
    r = np.asarray(rank, dtype=np.float64)
    out = np.where(r <= k, 1.0 / np.log2(r + 1.0), 0.0)
    return out if np.ndim(rank) else float(out)


def user_ranks(model, ds, threads=1):
    """Test-item rank of every user, in user-id order."""
    def one(u):
        return rank_test_item(model, ds, u).rank

    users = range(ds.n_users)
    if threads > 1:
        with ThreadPoolExecutor(max_workers=threads) as pool:
            return np.array(list(pool.map(one, users)), dtype=np.int64)
    return np.array([one(u) for u in users], dtype=np.int64)


def metrics_from_ranks(ranks, ks=DEFAULT_KS):
    out = {}
    for k in ks:
        out[f"HR@{k}"] = float(np.mean(hr_at_k(ranks, k)))
    for k in ks:
        out[f"NDCG@{k}"] = float(np.mean(ndcg_at_k(ranks, k)))
    return out


def evaluate(model, ds, ks=DEFAULT_KS, threads=1):
    """Mean HR@k and NDCG@k over all users, keyed ``"HR@10"`` etc."""
    return metrics_from_ranks(user_ranks(model, ds, threads), ks)


def top_k_items(model, ds, u, k):
    """Best `k` items not in u's training positives: ``[(item, score), ...]``.

    Ordered by descending score, ties broken by ascending item id.
    """
    if not 0 <= u < ds.n_users:
        raise IndexError(f"unknown user {u}")
    items = np.setdiff1d(np.arange(ds.n_items), ds.train[u])
    scores = model.score_items(u, items)
    order = np.lexsort((items, -scores))[:k]
    return [(int(items[o]), float(scores[o])) for o in order]


@dataclass
class MetricsHistory:
    ks: tuple = DEFAULT_KS
    tail_window: int = TAIL_WINDOW
    epochs: list = field(default_factory=list)

    @property
    def names(self):
        return [f"HR@{k}" for k in self.ks] + [f"NDCG@{k}" for k in self.ks]

    def append(self, metrics):
        self.epochs.append({n: float(metrics[n]) for n in self.names})

    def series(self, name):
        return [e[name] for e in self.epochs]

    def __len__(self):
        return len(self.epochs)

    def tail_average(self):
        return tail_average(self)

    def to_dict(self, model_kind, config):
        return {
            "model": model_kind,
            "config_digest": config_digest(config),
            "per_epoch": {n: self.series(n) for n in self.names},
            "tail_window": self.tail_window,
            "tail_average": self.tail_average(),
        }


def tail_average(history):
    """Mean of each metric over the final ``tail_window`` epochs (or all, if fewer)."""
    if not history.epochs:
        raise ProtocolError("no epochs recorded")
    tail = history.epochs[-history.tail_window:]
    return {n: float(np.mean([e[n] for e in tail])) for n in history.names}


def config_digest(config):
    blob = json.dumps(config, sort_keys=True, separators=(",", ":")).encode()
    return hashlib.sha256(blob).hexdigest()


def write_metrics(directory, history, model_kind, config, stem="metrics"):
    """Write ``<stem>.json`` and a long-format ``<stem>.tsv`` (epoch, metric, value)."""
    os.makedirs(directory, exist_ok=True)
    doc = history.to_dict(model_kind, config)
    json_path = os.path.join(directory, f"{stem}.json")
    with open(json_path, "w") as fh:
        json.dump(doc, fh, indent=2, sort_keys=True)
        fh.write("\n")
    with open(os.path.join(directory, f"{stem}.tsv"), "w") as fh:
        fh.write("epoch\tmetric\tvalue\n")
        for e, row in enumerate(history.epochs):
            for n in history.names:
                fh.write(f"{e}\t{n}\t{row[n]!r}\n")
    return json_path
