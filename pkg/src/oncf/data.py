"""Implicit-feedback ingestion, filtering, leave-latest-out split and sampling."""

import os
from dataclasses import dataclass, field
from typing import NamedTuple

import numpy as np

from .errors import DatasetError, ProtocolError, SamplingError

DEFAULT_NUM_NEGATIVES = 999


class Interaction(NamedTuple):
    user: int
    item: int
    timestamp: int


class Triplet(NamedTuple):
    u: int
    i: int
    j: int


@dataclass
class InteractionLog:
    """Parsed triples with dense ids and the raw id each dense id came from."""

    interactions: list
    user_ids: list
    item_ids: list

    @property
    def n_users(self):
        return len(self.user_ids)

    @property
    def n_items(self):
        return len(self.item_ids)


def _id_order(raw):
    try:
        return sorted(raw, key=int)
    except ValueError:
        return sorted(raw)


def load_triples(path):
    """Read whitespace-separated ``user item timestamp`` lines.

    Raw ids are mapped to dense ids in sorted order (numeric when every id
    parses as an integer), so a file that already uses dense ids maps onto
    itself.  Lines starting with ``#`` and blank lines are skipped.
    """
    rows = []
    with open(path) as fh:
        for lineno, line in enumerate(fh, 1):
            line = line.strip()
            if not line or line.startswith("#"):
                continue
            parts = line.split()
            if len(parts) != 3:
                raise DatasetError(f"expected 'user item timestamp', got {len(parts)} fields", line=lineno)
            try:
                ts = int(parts[2])
            except ValueError:
                raise DatasetError(f"timestamp {parts[2]!r} is not an integer", line=lineno) from None
            rows.append((parts[0], parts[1], ts))
    if not rows:
        raise DatasetError(f"{path}: no interactions")
    user_ids = _id_order({r[0] for r in rows})
    item_ids = _id_order({r[1] for r in rows})
    umap = {raw: k for k, raw in enumerate(user_ids)}
    imap = {raw: k for k, raw in enumerate(item_ids)}
    data = [Interaction(umap[u], imap[i], t) for u, i, t in rows]
    return InteractionLog(data, user_ids, item_ids)


def write_triples(path, data):
    with open(path, "w") as fh:
        for x in data:
            fh.write(f"{x.user} {x.item} {x.timestamp}\n")


def merge_repeats(data):
    """Collapse repeated (user, item) pairs onto their earliest timestamp.

    The first occurrence order of each pair is preserved.
    """
    first = {}
    for x in data:
        key = (x.user, x.item)
        if key not in first or x.timestamp < first[key].timestamp:
            first[key] = Interaction(x.user, x.item, x.timestamp)
    return list(first.values())


def densify(data):
    """Re-index users and items to ``0..n-1`` preserving id order.

    Returns ``(data, old_user_ids, old_item_ids)`` where ``old_*[new] = old``.
    """
    users = np.unique([x.user for x in data])
    items = np.unique([x.item for x in data])
    umap = {int(u): k for k, u in enumerate(users)}
    imap = {int(i): k for k, i in enumerate(items)}
    out = [Interaction(umap[x.user], imap[x.item], x.timestamp) for x in data]
    return out, users, items


def _filter_fixed_point(data, min_user, min_item):
    while True:
        ucount, icount = {}, {}
        for x in data:
            ucount[x.user] = ucount.get(x.user, 0) + 1
            icount[x.item] = icount.get(x.item, 0) + 1
        kept = [x for x in data if ucount[x.user] >= min_user and icount[x.item] >= min_item]
        if len(kept) == len(data):
            return kept
        data = kept


def core_filter(data, min_user, min_item, return_maps=False):
    """Drop users with < `min_user` and items with < `min_item` interactions.

    Removal repeats until both thresholds hold at once, then ids are
    re-indexed densely.  With ``return_maps`` the old-id arrays from
    :func:`densify` are returned as well.
    """
    if min_user < 1 or min_item < 1:
        raise ValueError("degree thresholds must be >= 1")
    kept = _filter_fixed_point(list(data), min_user, min_item)
    if not kept:
        raise DatasetError(f"no interactions left after filtering (min_user={min_user}, min_item={min_item})")
    out, users, items = densify(kept)
    return (out, users, items) if return_maps else out


@dataclass
class InteractionDataset:
    """Leave-latest-out split.

    `train[u]` holds user u's training items in time order; `test_items[u]`
    is the held-out item and `test_negatives[u]` its frozen candidate
    negatives.
    """

    n_users: int
    n_items: int
    train: list
    test_items: np.ndarray
    test_negatives: np.ndarray
    _pos_keys: np.ndarray = field(init=False, repr=False)

    def __post_init__(self):
        self.train = [np.asarray(t, dtype=np.int64) for t in self.train]
        self.test_items = np.asarray(self.test_items, dtype=np.int64)
        self.test_negatives = np.asarray(self.test_negatives, dtype=np.int64)
        if len(self.train) != self.n_users or self.test_items.shape != (self.n_users,):
            raise DatasetError("split arrays do not cover every user")
        self.train_counts = np.array([len(t) for t in self.train], dtype=np.int64)
        self.train_users = np.repeat(np.arange(self.n_users), self.train_counts)
        self.train_items = np.concatenate(self.train) if self.train else np.zeros(0, np.int64)
        self._pos_keys = np.sort(self.train_users * self.n_items + self.train_items)
        self.popularity = np.bincount(self.train_items, minlength=self.n_items)

    @property
    def n_train(self):
        return len(self.train_items)

    @property
    def num_negatives(self):
        return self.test_negatives.shape[1]

    def is_positive(self, users, items):
        """Vectorised membership test ``items[k] in train[users[k]]``."""
        keys = np.asarray(users, dtype=np.int64) * self.n_items + np.asarray(items, dtype=np.int64)
        pos = np.searchsorted(self._pos_keys, keys)
        pos = np.minimum(pos, len(self._pos_keys) - 1)
        return self._pos_keys[pos] == keys

    def candidates(self, u):
        """Test item followed by its negatives."""
        return np.concatenate([[self.test_items[u]], self.test_negatives[u]])


def leave_latest_out(data, num_neg=DEFAULT_NUM_NEGATIVES, seed=0):
    """Hold out each user's latest interaction and freeze `num_neg` negatives.

    Ties on the latest timestamp go to the larger item id.  Negatives are
    drawn without replacement from items the user never interacted with,
    users processed in id order from a single stream seeded by `seed`.
    """
    if not data:
        raise DatasetError("empty interaction list")
    n_users = max(x.user for x in data) + 1
    n_items = max(x.item for x in data) + 1
    per_user = [[] for _ in range(n_users)]
    for x in data:
        per_user[x.user].append(x)

    rng = np.random.default_rng(seed)
    train, test, negs = [], [], []
    all_items = np.arange(n_items)
    for u, rows in enumerate(per_user):
        if len(rows) < 2:
            raise ProtocolError(f"user {u} has {len(rows)} interaction(s); leave-latest-out needs at least 2")
        rows = sorted(rows, key=lambda x: (x.timestamp, x.item))
        seen = np.unique([x.item for x in rows])
        if len(seen) != len(rows):
            raise ProtocolError(f"user {u} has repeated items; merge repeats before splitting")
        unseen = np.setdiff1d(all_items, seen, assume_unique=True)
        if len(unseen) < num_neg:
            raise ProtocolError(f"user {u} has only {len(unseen)} unseen items, {num_neg} negatives requested")
        test.append(rows[-1].item)
        train.append([x.item for x in rows[:-1]])
        negs.append(rng.choice(unseen, size=num_neg, replace=False))
    negatives = np.array(negs, dtype=np.int64).reshape(n_users, num_neg)
    return InteractionDataset(n_users, n_items, train, np.array(test), negatives)


# -- triplet sampling ---------------------------------------------------------


def sample_negatives(ds, users, rng):
    """One uniform non-positive item per entry of `users`, by rejection."""
    users = np.asarray(users, dtype=np.int64)
    full = ds.train_counts[users] >= ds.n_items
    if full.any():
        raise SamplingError(f"user {int(users[full][0])} has interacted with every item")
    j = rng.integers(0, ds.n_items, size=len(users))
    bad = ds.is_positive(users, j)
    while bad.any():
        j[bad] = rng.integers(0, ds.n_items, size=int(bad.sum()))
        bad[bad] = ds.is_positive(users[bad], j[bad])
    return j


def epoch_rng(seed, epoch, batch=None):
    key = [int(seed), int(epoch)] if batch is None else [int(seed), int(epoch), int(batch)]
    return np.random.default_rng(key)


def iter_batches(ds, batch_size, seed, epoch):
    """Yield ``(users, pos_items, neg_items)`` arrays for one epoch.

    Positives are shuffled once per epoch and sliced sequentially; each
    batch draws its negatives from a stream keyed by (seed, epoch, batch).
    """
    if batch_size < 1:
        raise ValueError("batch_size must be positive")
    order = epoch_rng(seed, epoch).permutation(ds.n_train)
    for b, start in enumerate(range(0, ds.n_train, batch_size)):
        idx = order[start:start + batch_size]
        users = ds.train_users[idx]
        neg = sample_negatives(ds, users, epoch_rng(seed, epoch, b))
        yield users, ds.train_items[idx], neg


def sample_triplets(ds, batch_size, rng):
    """One epoch of triplets as a flat list, shuffled and negative-paired with `rng`."""
    order = rng.permutation(ds.n_train)
    out = []
    for start in range(0, ds.n_train, batch_size):
        idx = order[start:start + batch_size]
        users = ds.train_users[idx]
        neg = sample_negatives(ds, users, rng)
        out.extend(Triplet(int(u), int(i), int(j)) for u, i, j in zip(users, ds.train_items[idx], neg))
    return out


# -- split files ----------------------------------------------------------------

TEST_FILE = "test.tsv"
TRAIN_FILE = "train.tsv"


def write_split(directory, ds):
    """Write ``test.tsv`` (user, test item, comma-joined negatives) and ``train.tsv``."""
    os.makedirs(directory, exist_ok=True)
    header = f"# users={ds.n_users} items={ds.n_items}\n"
    with open(os.path.join(directory, TEST_FILE), "w") as fh:
        fh.write(header)
        for u in range(ds.n_users):
            fh.write(f"{u}\t{ds.test_items[u]}\t{','.join(map(str, ds.test_negatives[u]))}\n")
    with open(os.path.join(directory, TRAIN_FILE), "w") as fh:
        fh.write(header)
        for u, items in enumerate(ds.train):
            for i in items:
                fh.write(f"{u}\t{i}\n")


def _read_header(line):
    fields = dict(kv.split("=") for kv in line.lstrip("#").split())
    return int(fields["users"]), int(fields["items"])


def read_split(directory):
    test_path = os.path.join(directory, TEST_FILE)
    train_path = os.path.join(directory, TRAIN_FILE)
    for p in (test_path, train_path):
        if not os.path.exists(p):
            raise DatasetError(f"missing split file {p}; run the split step first")
    sizes = None
    tests, negs = {}, {}
    with open(test_path) as fh:
        for lineno, line in enumerate(fh, 1):
            if line.startswith("#"):
                sizes = _read_header(line)
                continue
            try:
                u, t, n = line.rstrip("\n").split("\t")
                tests[int(u)] = int(t)
                negs[int(u)] = [int(x) for x in n.split(",")] if n else []
            except ValueError:
                raise DatasetError(f"{test_path}: malformed split line", line=lineno) from None
    if sizes is None:
        raise DatasetError(f"{test_path}: missing '# users=M items=N' header")
    n_users, n_items = sizes
    train = [[] for _ in range(n_users)]
    with open(train_path) as fh:
        for lineno, line in enumerate(fh, 1):
            if line.startswith("#"):
                continue
            try:
                u, i = line.split()
                train[int(u)].append(int(i))
            except (ValueError, IndexError):
                raise DatasetError(f"{train_path}: malformed train line", line=lineno) from None
    if sorted(tests) != list(range(n_users)):
        raise DatasetError(f"{test_path}: test items do not cover users 0..{n_users - 1}")
    return InteractionDataset(
        n_users, n_items, train,
        np.array([tests[u] for u in range(n_users)]),
        np.array([negs[u] for u in range(n_users)], dtype=np.int64).reshape(n_users, -1),
    )


# -- synthetic data ---------------------------------------------------------------


def synthesize(n_users=200, n_items=300, min_len=10, max_len=30, strength=4.0,
               popularity_skew=1.0, seed=0):
    """Planted rank-1 preferences plus a Zipf-like popularity skew.

    User u picks items with probability proportional to
    ``exp(strength * a_u * b_i - popularity_skew * log(1 + rank_i))`` (sampled
    without replacement via Gumbel top-k), where ``a``/``b`` are standard
    normal taste factors and ``rank_i`` is a random popularity ordering.
    Each user gets between `min_len` and `max_len` interactions with
    distinct shuffled timestamps.
    """
    rng = np.random.default_rng(seed)
    a = rng.standard_normal(n_users)
    b = rng.standard_normal(n_items)
    pop_rank = rng.permutation(n_items)
    logits = strength * np.outer(a, b) - popularity_skew * np.log1p(pop_rank)[None, :]
    out = []
    for u in range(n_users):
        n = int(rng.integers(min_len, max_len + 1))
        g = logits[u] + rng.gumbel(size=n_items)
        items = np.argsort(-g, kind="stable")[:n]
        times = rng.permutation(n) + 1
        out.extend(Interaction(u, int(i), int(t)) for i, t in zip(items, times))
    return out
