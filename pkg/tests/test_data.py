import itertools
from collections import Counter

import numpy as np
import pytest

from oncf import data
from oncf.data import Interaction as I
from oncf.errors import DatasetError, ProtocolError, SamplingError


def _write(tmp_path, text, name="triples.txt"):
    path = tmp_path / name
    path.write_text(text)
    return path


def test_load_triples_basic(tmp_path):
    log = data.load_triples(_write(tmp_path, "0 5 100\n0 7 200\n"))
    assert log.n_users == 1 and log.n_items == 2
    assert log.interactions == [I(0, 0, 100), I(0, 1, 200)]
    assert log.item_ids == ["5", "7"]


def test_load_triples_comments_and_duplicates(tmp_path):
    log = data.load_triples(_write(tmp_path, "# header\nu1\tA 5\n\nu1 A 9\nu2 B 1\n"))
    assert len(log.interactions) == 3
    assert log.user_ids == ["u1", "u2"]


def test_load_triples_numeric_id_order(tmp_path):
    log = data.load_triples(_write(tmp_path, "10 2 1\n9 10 1\n"))
    assert log.user_ids == ["9", "10"]
    assert log.interactions[0] == I(1, 0, 1)


def test_load_triples_errors(tmp_path):
    with pytest.raises(DatasetError, match="line 1"):
        data.load_triples(_write(tmp_path, "a b\n"))
    with pytest.raises(DatasetError, match="line 2"):
        data.load_triples(_write(tmp_path, "1 2 3\n1 2 x\n"))
    with pytest.raises(DatasetError):
        data.load_triples(_write(tmp_path, "# nothing\n"))


def test_merge_repeats():
    assert data.merge_repeats([I(0, 1, 50), I(0, 1, 10)]) == [I(0, 1, 10)]
    rows = [I(0, 1, 3), I(1, 1, 3), I(0, 2, 1)]
    assert data.merge_repeats(rows) == rows
    assert data.merge_repeats([I(0, 1, 3), I(0, 1, 1), I(0, 1, 2)]) == [I(0, 1, 1)]


CASCADE = [I(0, 0, 1), I(0, 1, 2), I(1, 0, 1), I(1, 1, 2), I(1, 2, 3),
           I(2, 2, 1), I(2, 3, 2), I(3, 3, 1), I(4, 1, 1), I(4, 0, 2)]


def _brute_force_core(rows, min_user, min_item):
    """Largest subset satisfying both degree thresholds, by enumerating all subsets."""
    best = []
    for mask in range(1 << len(rows)):
        sub = [r for k, r in enumerate(rows) if mask >> k & 1]
        uc = Counter(r.user for r in sub)
        ic = Counter(r.item for r in sub)
        if all(v >= min_user for v in uc.values()) and all(v >= min_item for v in ic.values()):
            if len(sub) > len(best):
                best = sub
    return best


def test_core_filter_cascade_matches_brute_force():
    kept, users, items = data.core_filter(CASCADE, 2, 2, return_maps=True)
    oracle = _brute_force_core(CASCADE, 2, 2)
    assert len(oracle) == 6
    restored = sorted((int(users[x.user]), int(items[x.item]), x.timestamp) for x in kept)
    assert restored == sorted(tuple(r) for r in oracle)
    assert users.tolist() == [0, 1, 4]
    assert kept == [I(0, 0, 1), I(0, 1, 2), I(1, 0, 1), I(1, 1, 2), I(2, 1, 1), I(2, 0, 2)]


def test_core_filter_fixed_point_and_identity():
    rows = [I(u, i, u + i) for u, i in itertools.product(range(3), range(4))]
    assert data.core_filter(rows, 2, 2) == rows
    assert data.core_filter(CASCADE, 1, 1) == CASCADE
    with pytest.raises(DatasetError):
        data.core_filter(CASCADE, 10, 1)


def test_core_filter_output_satisfies_thresholds():
    rows = data.synthesize(60, 90, min_len=1, max_len=8, seed=2)
    kept = data.core_filter(rows, 3, 4)
    uc = Counter(x.user for x in kept)
    ic = Counter(x.item for x in kept)
    assert min(uc.values()) >= 3 and min(ic.values()) >= 4
    assert sorted(uc) == list(range(len(uc))) and sorted(ic) == list(range(len(ic)))


def test_leave_latest_out_holds_out_max_timestamp():
    rows = [I(0, 4, 1), I(0, 2, 3), I(0, 1, 2), I(1, 0, 5), I(1, 3, 5), I(1, 4, 1)]
    ds = data.leave_latest_out(rows, num_neg=2, seed=0)
    assert ds.test_items.tolist() == [2, 3]
    assert ds.train[0].tolist() == [4, 1]
    assert ds.train[1].tolist() == [4, 0]


def test_leave_latest_out_forced_complement():
    rows = [I(0, 0, 1), I(0, 1, 2), I(1, 998, 1), I(1, 999, 2)]
    ds = data.leave_latest_out(rows, num_neg=998, seed=5)
    assert sorted(ds.test_negatives[0].tolist()) == list(range(2, 1000))
    other = data.leave_latest_out(rows, num_neg=998, seed=6)
    assert sorted(other.test_negatives[0].tolist()) == list(range(2, 1000))
    assert other.test_negatives[0].tolist() != ds.test_negatives[0].tolist()


def test_leave_latest_out_deterministic(tmp_path, small_split):
    rows = data.synthesize(n_users=40, n_items=80, min_len=5, max_len=12, seed=7)
    again = data.leave_latest_out(rows, num_neg=30, seed=3)
    data.write_split(tmp_path / "a", small_split)
    data.write_split(tmp_path / "b", again)
    for f in (data.TEST_FILE, data.TRAIN_FILE):
        assert (tmp_path / "a" / f).read_bytes() == (tmp_path / "b" / f).read_bytes()


def test_split_invariants(small_split):
    ds = small_split
    rows = data.synthesize(n_users=40, n_items=80, min_len=5, max_len=12, seed=7)
    original = {}
    for x in rows:
        original.setdefault(x.user, set()).add(x.item)
    for u in range(ds.n_users):
        train = set(ds.train[u].tolist())
        assert ds.test_items[u] not in train
        assert train | {int(ds.test_items[u])} == original[u]
        negs = set(ds.test_negatives[u].tolist())
        assert len(negs) == ds.num_negatives == 30
        assert not negs & original[u]


def test_leave_latest_out_errors():
    with pytest.raises(ProtocolError, match="user 1"):
        data.leave_latest_out([I(0, 0, 1), I(0, 1, 2), I(1, 1, 1)], num_neg=0)
    rows = [I(0, 0, 1), I(0, 1, 2), I(1, 0, 1), I(1, 2, 2)]
    with pytest.raises(ProtocolError, match="user 0"):
        data.leave_latest_out(rows, num_neg=2)
    with pytest.raises(ProtocolError, match="merge"):
        data.leave_latest_out([I(0, 0, 1), I(0, 0, 2), I(1, 1, 1), I(1, 2, 1)], num_neg=0)


def test_split_file_round_trip(tmp_path, small_split):
    data.write_split(tmp_path, small_split)
    back = data.read_split(tmp_path)
    assert back.n_users == small_split.n_users and back.n_items == small_split.n_items
    np.testing.assert_array_equal(back.test_items, small_split.test_items)
    np.testing.assert_array_equal(back.test_negatives, small_split.test_negatives)
    for a, b in zip(back.train, small_split.train):
        np.testing.assert_array_equal(a, b)
    line = (tmp_path / data.TEST_FILE).read_text().splitlines()[1]
    u, t, negs = line.split("\t")
    assert len(negs.split(",")) == 30


def test_read_split_missing(tmp_path):
    with pytest.raises(DatasetError, match="missing split file"):
        data.read_split(tmp_path)


def _tiny(n_items, positives):
    return data.InteractionDataset(1, n_items, [positives], np.array([n_items - 1]), np.zeros((1, 0)))


def test_sampling_forced_choice():
    ds = _tiny(2, [0])
    rng = np.random.default_rng(0)
    assert set(data.sample_negatives(ds, np.zeros(500, dtype=int), rng).tolist()) == {1}


def test_sampling_never_returns_positives(small_split):
    rng = np.random.default_rng(1)
    users = rng.integers(0, small_split.n_users, 10_000)
    neg = data.sample_negatives(small_split, users, rng)
    assert not small_split.is_positive(users, neg).any()
    triplets = data.sample_triplets(small_split, 64, np.random.default_rng(2))
    assert len(triplets) == small_split.n_train
    for t in triplets:
        assert t.i in small_split.train[t.u] and t.j not in small_split.train[t.u]


def test_sampling_uniform_over_complement():
    ds = _tiny(11, [4])
    n = 100_000
    neg = data.sample_negatives(ds, np.zeros(n, dtype=int), np.random.default_rng(3))
    freq = np.bincount(neg, minlength=11) / n
    assert freq[4] == 0
    sigma = np.sqrt(0.1 * 0.9 / n)
    assert np.all(np.abs(np.delete(freq, 4) - 0.1) < 3 * sigma)


def test_sampling_full_user_raises():
    ds = _tiny(3, [0, 1, 2])
    with pytest.raises(SamplingError):
        data.sample_negatives(ds, [0], np.random.default_rng(0))


def test_epoch_batches_reproducible(small_split):
    a = list(data.iter_batches(small_split, 50, seed=4, epoch=2))
    b = list(data.iter_batches(small_split, 50, seed=4, epoch=2))
    c = list(data.iter_batches(small_split, 50, seed=4, epoch=3))
    for x, y in zip(a, b):
        for u, v in zip(x, y):
            np.testing.assert_array_equal(u, v)
    assert sum(len(x[0]) for x in a) == small_split.n_train
    assert not all(np.array_equal(x[0], y[0]) for x, y in zip(a, c))
    # each batch is reproducible on its own from (seed, epoch, batch)
    users = a[1][0]
    neg = data.sample_negatives(small_split, users, data.epoch_rng(4, 2, 1))
    np.testing.assert_array_equal(neg, a[1][2])


def test_synthesize_shape():
    rows = data.synthesize(n_users=20, n_items=50, min_len=3, max_len=6, seed=1)
    per_user = Counter(x.user for x in rows)
    assert sorted(per_user) == list(range(20))
    assert all(3 <= c <= 6 for c in per_user.values())
    assert len({(x.user, x.item) for x in rows}) == len(rows)
    assert rows == data.synthesize(n_users=20, n_items=50, min_len=3, max_len=6, seed=1)
