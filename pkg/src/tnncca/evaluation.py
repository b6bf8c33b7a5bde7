"""Cosine-similarity retrieval, average precision and precision-recall curves."""

from __future__ import annotations

import csv
import json
import logging
import math
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .errors import DataError

log = logging.getLogger(__name__)

RECALL_GRID = np.linspace(0.0, 1.0, 101)


@dataclass(frozen=True)
class RankedList:
    query_id: int
    gallery_ids: np.ndarray
    scores: np.ndarray
    relevant: np.ndarray


def _unit_rows(m, what):
    m = np.asarray(m, dtype=np.float64)
    m = m[None, :] if m.ndim == 1 else m
    norms = np.linalg.norm(m, axis=1, keepdims=True)
    if np.any(norms == 0):
        raise DataError(f"{what} contains a zero vector; cosine similarity is undefined")
    return m / norms


def similarity_matrix(queries, gallery):
    """Cosine similarity between every query row and every gallery row."""
    return _unit_rows(queries, "query") @ _unit_rows(gallery, "gallery").T


def rank_gallery(sims):
    """Row-wise gallery order by descending score, ties by ascending gallery id."""
    return np.argsort(-sims, axis=1, kind="stable")


def retrieve(query_emb, gallery, query_label, gallery_labels, query_id=0):
    q = np.asarray(query_emb, dtype=np.float64)
    g = np.asarray(gallery, dtype=np.float64)
    if q.ndim != 1 or g.ndim != 2 or g.shape[1] != q.size:
        raise DataError(f"query of width {q.size} does not match gallery of shape {g.shape}")
    sims = similarity_matrix(q, g)
    order = rank_gallery(sims)[0]
    relevant = np.asarray(gallery_labels)[order] == query_label
    return RankedList(query_id, order, sims[0, order], relevant)


def average_precision(relevant):
    """Mean of precision@r over the ranks r holding a relevant item.

    Uses the whole ranking. A list with no relevant item scores 0.
    """
    rel = np.asarray(relevant, dtype=bool)
    total = rel.sum()
    if total == 0:
        log.warning("query has no relevant gallery item; AP set to 0")
        return 0.0
    hits = np.cumsum(rel)
    precision = hits / np.arange(1, rel.size + 1)
    return math.fsum(precision[rel]) / int(total)


def _relevance_matrix(queries, gallery, query_labels, gallery_labels):
    order = rank_gallery(similarity_matrix(queries, gallery))
    return np.asarray(gallery_labels)[order] == np.asarray(query_labels)[:, None]


def _ap_rows(rel):
    totals = rel.sum(axis=1)
    precision = np.cumsum(rel, axis=1) / np.arange(1, rel.shape[1] + 1)
    aps = np.array([math.fsum(p[r]) / t if t else 0.0 for p, r, t in zip(precision, rel, totals.tolist())])
    return aps, int(np.sum(totals == 0))


def mean_average_precision(queries, gallery, query_labels, gallery_labels):
    """Unweighted mean of per-query AP; relevance means sharing the query's label."""
    aps, empty = _ap_rows(_relevance_matrix(queries, gallery, query_labels, gallery_labels))
    if empty:
        log.warning("%d quer(ies) had no relevant gallery item; their AP is 0", empty)
    return math.fsum(aps) / aps.size


def precision_recall_curve(relevance_lists, grid=RECALL_GRID):
    """Query-averaged interpolated precision on a fixed recall grid.

    Interpolated precision at recall r is the best precision reached at any
    cutoff whose recall is at least r. Queries without relevant items are left out.
    Returns ``(recall_grid, precision)``.
    """
    curves = []
    for rel in relevance_lists:
        rel = np.asarray(rel, dtype=bool)
        total = rel.sum()
        if total == 0:
            continue
        hits = np.cumsum(rel)
        precision = hits / np.arange(1, rel.size + 1)
        recall = hits / total
        best_after = np.maximum.accumulate(precision[::-1])[::-1]
        idx = np.searchsorted(recall, grid - 1e-12, side="left")
        curves.append(best_after[np.minimum(idx, rel.size - 1)])
    if not curves:
        return grid.copy(), np.zeros_like(grid)
    return grid.copy(), np.mean(curves, axis=0)


@dataclass
class RetrievalReport:
    direction: str
    ap: list
    map: float
    recall: list
    precision: list
    fold_maps: list = field(default_factory=list)
    warnings: int = 0

    def to_dict(self):
        return {
            "direction": self.direction,
            "map": self.map,
            "fold_maps": self.fold_maps,
            "warnings": self.warnings,
            "prc": [[r, p] for r, p in zip(self.recall, self.precision)],
            "ap": self.ap,
        }

    def write_prc_csv(self, path):
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(["recall", "precision"])
            for r, p in zip(self.recall, self.precision):
                w.writerow([repr(float(r)), repr(float(p))])


def evaluate_retrieval(queries, gallery, query_labels, gallery_labels, direction):
    """Single-split retrieval report: per-query AP, MAP and the averaged PRC."""
    rel = _relevance_matrix(queries, gallery, query_labels, gallery_labels)
    aps, empty = _ap_rows(rel)
    if empty:
        log.warning("%d quer(ies) had no relevant gallery item; their AP is 0", empty)
    recall, precision = precision_recall_curve(rel)
    m = math.fsum(aps) / aps.size
    return RetrievalReport(direction, aps.tolist(), m, recall.tolist(), precision.tolist(), [m], empty)


def merge_fold_reports(reports, direction):
    """Combine per-fold reports: MAP is the mean of fold MAPs, PRC is query-weighted."""
    fold_maps = [r.map for r in reports]
    ap = [a for r in reports for a in r.ap]
    weights = np.array([len(r.ap) - r.warnings for r in reports], dtype=np.float64)
    prec = np.array([r.precision for r in reports])
    if weights.sum() > 0:
        precision = (weights @ prec / weights.sum()).tolist()
    else:
        precision = prec.mean(axis=0).tolist()
    return RetrievalReport(
        direction, ap, float(np.mean(fold_maps)), reports[0].recall, precision, fold_maps,
        sum(r.warnings for r in reports),
    )


def write_report(reports, path, extra=None):
    """Write a ``{direction: report}`` mapping as JSON."""
    payload = dict(extra or {})
    payload["directions"] = {d: r.to_dict() for d, r in reports.items()}
    Path(path).write_text(json.dumps(payload, indent=1) + "\n")
