import itertools

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from tnncca.errors import DataError
from tnncca.mining import (
    NegativeClass,
    TripletBatch,
    batch_all_count,
    classify_negative,
    make_balanced_batches,
    select_batch_all,
    select_batch_hard,
    select_batch_semi_hard,
    select_random,
)


def brute_triplets(labels):
    return {
        (a, p, n)
        for a, p, n in itertools.product(range(len(labels)), repeat=3)
        if a != p and labels[a] == labels[p] and labels[n] != labels[a]
    }


class TestBatches:
    def test_seven_hundred_into_ten(self):
        labels = np.repeat(np.arange(10), 70)
        batches = make_balanced_batches(labels, 10, 0)
        assert [b.size for b in batches] == [70] * 10
        for b in batches:
            assert np.all(np.bincount(labels[b], minlength=10) == 7)

    def test_uneven_sizes(self):
        batches = make_balanced_batches(np.arange(7) % 2, 3, 1)
        assert sorted(b.size for b in batches) == [2, 2, 3]
        assert np.array_equal(np.sort(np.concatenate(batches)), np.arange(7))

    @pytest.mark.parametrize("b", [0, 8])
    def test_bad_count(self, b):
        with pytest.raises(DataError):
            make_balanced_batches(np.zeros(7), b, 0)

    @settings(max_examples=40, deadline=None)
    @given(n=st.integers(1, 120), c=st.integers(1, 6), b=st.integers(1, 10), seed=st.integers(0, 1000))
    def test_partition_and_balance(self, n, c, b, seed):
        b = min(b, n)
        labels = np.random.default_rng(seed).integers(0, c, n)
        batches = make_balanced_batches(labels, b, seed)
        assert np.array_equal(np.sort(np.concatenate(batches)), np.arange(n))
        sizes = [x.size for x in batches]
        assert max(sizes) - min(sizes) <= 1
        for cls in range(c):
            per = [np.sum(labels[x] == cls) for x in batches]
            assert max(per) - min(per) <= 1

    def test_seeded(self):
        labels = np.arange(40) % 4
        a = make_balanced_batches(labels, 4, 3)
        b = make_balanced_batches(labels, 4, 3)
        assert all(np.array_equal(x, y) for x, y in zip(a, b))


class TestClassify:
    @pytest.mark.parametrize(
        "d_ap, d_an, expected",
        [
            (0.5, 0.4, NegativeClass.HARD),
            (0.5, 0.5, NegativeClass.HARD),
            (0.5, 0.8, NegativeClass.SEMI_HARD),
            (0.5, 1.0, NegativeClass.SEMI_HARD),
            (0.5, 1.01, NegativeClass.EASY),
        ],
    )
    def test_examples(self, d_ap, d_an, expected):
        assert classify_negative(d_ap, d_an, 0.5) is expected

    @settings(max_examples=200)
    @given(
        d_ap=st.floats(0, 2, allow_nan=False),
        d_an=st.floats(0, 2, allow_nan=False),
        margin=st.floats(0.01, 1.9),
    )
    def test_partition_matches_loss(self, d_ap, d_an, margin):
        cls = classify_negative(d_ap, d_an, margin)
        loss = max(d_ap - d_an + margin, 0.0)
        assert (cls is NegativeClass.EASY) == (d_an > d_ap + margin)
        if cls is NegativeClass.EASY:
            assert loss == 0.0
        assert (cls is NegativeClass.HARD) == (d_an <= d_ap)


class TestBatchAll:
    def test_two_one(self):
        t = select_batch_all(np.array([0, 1, 2]), np.array([0, 0, 1]))
        assert set(t.as_tuples()) == {(0, 1, 2), (1, 0, 2)}

    def test_single_class_is_empty(self):
        assert len(select_batch_all(np.arange(4), np.zeros(4))) == 0

    @settings(max_examples=40, deadline=None)
    @given(labels=st.lists(st.integers(0, 3), min_size=1, max_size=12))
    def test_matches_enumeration_and_formula(self, labels):
        labels = np.array(labels)
        t = select_batch_all(np.arange(labels.size), labels)
        assert set(t.as_tuples()) == brute_triplets(labels)
        assert len(t) == batch_all_count(labels)

    def test_uses_global_ids(self):
        labels = np.array([5, 5, 5, 0, 0, 1, 0])
        t = select_batch_all(np.array([3, 4, 5]), labels)
        assert set(t.as_tuples()) == {(3, 4, 5), (4, 3, 5)}


class TestBatchHard:
    @settings(max_examples=40, deadline=None)
    @given(seed=st.integers(0, 10**6), n=st.integers(2, 10))
    def test_exhaustive(self, seed, n):
        r = np.random.default_rng(seed)
        labels = r.integers(0, 3, n)
        d = r.random((n, n))
        t = select_batch_hard(np.arange(n), labels, d)
        got = {a: (p, q) for a, p, q in t.as_tuples()}
        for a in range(n):
            pos = [j for j in range(n) if j != a and labels[j] == labels[a]]
            neg = [j for j in range(n) if labels[j] != labels[a]]
            if not pos or not neg:
                assert a not in got
                continue
            assert got[a] == (max(pos, key=lambda j: d[a, j]), min(neg, key=lambda j: d[a, j]))

    def test_ties_take_lowest_index(self):
        labels = np.array([0, 0, 0, 1, 1])
        d = np.full((5, 5), 0.5)
        t = select_batch_hard(np.arange(5), labels, d)
        assert t.as_tuples()[0] == (0, 1, 3)
        assert t.as_tuples()[2] == (2, 0, 3)


class TestSemiHard:
    def test_enumeration(self):
        # anchor 0, positive 1 at 0.3; negatives at 0.2 (hard), 0.5 (semi), 0.6 (semi), 0.9 (easy)
        labels = np.array([0, 0, 1, 1, 1, 1])
        d = np.full((6, 6), 1.0)
        d[0, 1] = 0.3
        d[0, 2:] = [0.2, 0.5, 0.6, 0.9]
        t = select_batch_semi_hard(np.arange(6), labels, d, 0.4)
        from_pair = [x for x in t.as_tuples() if x[:2] == (0, 1)]
        assert from_pair == [(0, 1, 3), (0, 1, 4)]

    def test_fallback_to_closest_easy(self):
        labels = np.array([0, 0, 1, 1])
        d = np.full((4, 4), 1.0)
        d[0, 1] = 0.1
        d[0, 2:] = [0.9, 0.8]
        t = select_batch_semi_hard(np.arange(4), labels, d, 0.2)
        assert [x for x in t.as_tuples() if x[:2] == (0, 1)] == [(0, 1, 3)]

    def test_all_hard_yields_nothing(self):
        labels = np.array([0, 0, 1])
        d = np.zeros((3, 3))
        d[0, 1] = d[1, 0] = 0.9
        d[2, :] = 0.5
        t = select_batch_semi_hard(np.arange(3), labels, d, 0.5)
        assert len(t) == 0

    def test_zero_margin_keeps_only_fallback(self):
        labels = np.array([0, 0, 1, 1])
        r = np.random.default_rng(0)
        d = r.random((4, 4))
        t = select_batch_semi_hard(np.arange(4), labels, d, 0.0)
        for a, p, n in t.as_tuples():
            assert d[a, n] > d[a, p]
        counts = {}
        for a, p, _ in t.as_tuples():
            counts[(a, p)] = counts.get((a, p), 0) + 1
        assert all(v == 1 for v in counts.values())

    @settings(max_examples=40, deadline=None)
    @given(seed=st.integers(0, 10**6), n=st.integers(2, 9), margin=st.floats(0.01, 1.0))
    def test_every_choice_is_semi_hard_or_fallback(self, seed, n, margin):
        r = np.random.default_rng(seed)
        labels = r.integers(0, 3, n)
        d = r.random((n, n))
        got = select_batch_semi_hard(np.arange(n), labels, d, margin).as_tuples()
        for a, p, q in got:
            cls = classify_negative(d[a, p], d[a, q], margin)
            assert cls is not NegativeClass.HARD
            if cls is NegativeClass.EASY:
                negs = [j for j in range(n) if labels[j] != labels[a]]
                assert not any(classify_negative(d[a, p], d[a, j], margin) is NegativeClass.SEMI_HARD for j in negs)
                easy = [j for j in negs if classify_negative(d[a, p], d[a, j], margin) is NegativeClass.EASY]
                assert d[a, q] == min(d[a, j] for j in easy)


class TestRandom:
    def test_counts_and_validity(self):
        labels = np.repeat(np.arange(3), 5)
        t = select_random(labels, 150, seed=1)
        assert len(t) == 15 * 150
        assert np.all(labels[t.anchor_ids] == labels[t.positive_ids])
        assert np.all(t.anchor_ids != t.positive_ids)
        assert np.all(labels[t.anchor_ids] != labels[t.negative_ids])

    def test_singleton_classes_give_empty(self):
        assert len(select_random(np.arange(5), 10)) == 0

    def test_seeded(self):
        labels = np.arange(20) % 4
        a, b = select_random(labels, 7, seed=3), select_random(labels, 7, seed=3)
        assert a.as_tuples() == b.as_tuples()
        assert a.as_tuples() != select_random(labels, 7, seed=4).as_tuples()

    def test_bad_per_anchor(self):
        with pytest.raises(DataError):
            select_random(np.arange(4) % 2, 0)

    def test_empty_batch_type(self):
        assert len(TripletBatch.empty()) == 0
