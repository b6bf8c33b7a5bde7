"""Category-balanced batching and in-batch triplet selection."""

from __future__ import annotations

import enum
from dataclasses import dataclass

import numpy as np

from .dataset import stratified_deal
from .errors import DataError

STRATEGIES = ("batch-all", "batch-hard", "batch-semi-hard", "random")
DEFAULT_RANDOM_PER_ANCHOR = 150


@dataclass(frozen=True)
class TripletBatch:
    """Parallel index arrays; anchors index one view, positives/negatives the other."""

    anchor_ids: np.ndarray
    positive_ids: np.ndarray
    negative_ids: np.ndarray

    def __len__(self):
        return len(self.anchor_ids)

    @classmethod
    def empty(cls):
        z = np.zeros(0, dtype=np.int64)
        return cls(z, z.copy(), z.copy())

    def as_tuples(self):
        return list(zip(self.anchor_ids.tolist(), self.positive_ids.tolist(), self.negative_ids.tolist()))


class NegativeClass(enum.Enum):
    EASY = "easy"
    SEMI_HARD = "semi-hard"
    HARD = "hard"


def classify_negative(d_ap, d_an, margin):
    """Place a negative relative to the anchor-positive distance.

    Boundary values go to the harder class: ``d_an == d_ap`` is hard and
    ``d_an == d_ap + margin`` is semi-hard.
    """
    if d_an <= d_ap:
        return NegativeClass.HARD
    if d_an <= d_ap + margin:
        return NegativeClass.SEMI_HARD
    return NegativeClass.EASY


def make_balanced_batches(labels, batch_count, seed):
    """Split all samples into ``batch_count`` class-balanced batches.

    Sizes are ``N // B`` with the ``N % B`` leftovers going one each to the
    first batches.
    """
    labels = np.asarray(labels)
    n = labels.size
    if batch_count < 1:
        raise DataError("batch count must be >= 1")
    if batch_count > n:
        raise DataError(f"batch count {batch_count} exceeds sample count {n}")
    part = stratified_deal(labels, batch_count, np.random.default_rng(seed))
    return [np.flatnonzero(part == b) for b in range(batch_count)]


def _masks(batch_labels):
    same = batch_labels[:, None] == batch_labels[None, :]
    pos = same & ~np.eye(batch_labels.size, dtype=bool)
    return pos, ~same


def select_batch_all(batch, labels):
    """Every valid (anchor, positive, negative) inside the batch."""
    batch = np.asarray(batch, dtype=np.int64)
    pos, neg = _masks(np.asarray(labels)[batch])
    a, p, n = np.nonzero(pos[:, :, None] & neg[:, None, :])
    if a.size == 0:
        return TripletBatch.empty()
    return TripletBatch(batch[a], batch[p], batch[n])


def select_batch_hard(batch, labels, distances):
    """Hardest positive and hardest negative for each anchor.

    ``distances[i, j]`` is the distance from the anchor embedding of batch item
    ``i`` to the pair embedding of batch item ``j``. Ties resolve to the lowest
    batch position.
    """
    batch = np.asarray(batch, dtype=np.int64)
    d = np.asarray(distances, dtype=np.float64)
    pos, neg = _masks(np.asarray(labels)[batch])
    keep = pos.any(axis=1) & neg.any(axis=1)
    p = np.argmax(np.where(pos, d, -np.inf), axis=1)
    n = np.argmin(np.where(neg, d, np.inf), axis=1)
    rows = np.flatnonzero(keep)
    return TripletBatch(batch[rows], batch[p[rows]], batch[n[rows]])


def select_batch_semi_hard(batch, labels, distances, margin):
    """All semi-hard negatives for every (anchor, positive) pair.

    A pair with no semi-hard negative falls back to its closest easy negative;
    a pair whose negatives are all hard yields nothing.
    """
    batch = np.asarray(batch, dtype=np.int64)
    d = np.asarray(distances, dtype=np.float64)
    pos, neg = _masks(np.asarray(labels)[batch])
    a_idx, p_idx = np.nonzero(pos)
    d_ap = d[a_idx, p_idx][:, None]
    d_an = d[a_idx]
    valid = neg[a_idx]
    semi = valid & (d_an > d_ap) & (d_an <= d_ap + margin)
    easy = valid & (d_an > d_ap + margin)

    rows, cols = np.nonzero(semi)
    need = ~semi.any(axis=1) & easy.any(axis=1)
    fb_rows = np.flatnonzero(need)
    fb_cols = np.argmin(np.where(easy[fb_rows], d_an[fb_rows], np.inf), axis=1)

    rows = np.concatenate([rows, fb_rows])
    cols = np.concatenate([cols, fb_cols])
    order = np.lexsort((cols, rows))
    rows, cols = rows[order], cols[order]
    if rows.size == 0:
        return TripletBatch.empty()
    return TripletBatch(batch[a_idx[rows]], batch[p_idx[rows]], batch[cols])


def select_random(labels, per_anchor=DEFAULT_RANDOM_PER_ANCHOR, seed=0, anchors=None):
    """Uniformly drawn (positive, negative) pairs per anchor over the whole set.

    Anchors whose class has no other member, or that have no other-class
    sample, are skipped.
    """
    if per_anchor < 1:
        raise DataError("per_anchor must be >= 1")
    labels = np.asarray(labels)
    rng = np.random.default_rng(seed)
    anchors = np.arange(labels.size) if anchors is None else np.asarray(anchors, dtype=np.int64)
    by_class = {c: np.flatnonzero(labels == c) for c in np.unique(labels)}
    out_a, out_p, out_n = [], [], []
    for a in anchors:
        same = by_class[labels[a]]
        same = same[same != a]
        other = np.flatnonzero(labels != labels[a])
        if same.size == 0 or other.size == 0:
            continue
        out_a.append(np.full(per_anchor, a, dtype=np.int64))
        out_p.append(same[rng.integers(0, same.size, per_anchor)])
        out_n.append(other[rng.integers(0, other.size, per_anchor)])
    if not out_a:
        return TripletBatch.empty()
    return TripletBatch(np.concatenate(out_a), np.concatenate(out_p), np.concatenate(out_n))


def batch_all_count(batch_labels):
    """Closed-form size of ``select_batch_all``: sum_i n_i (n_i - 1) (size - n_i)."""
    _, counts = np.unique(np.asarray(batch_labels), return_counts=True)
    size = counts.sum()
    return int(np.sum(counts * (counts - 1) * (size - counts)))
