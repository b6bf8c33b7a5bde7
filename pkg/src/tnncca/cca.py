"""Canonical correlation analysis and its cluster (all within-class pairs) variant."""

from __future__ import annotations

import json
from dataclasses import dataclass, replace
from pathlib import Path

import numpy as np

from .dataset import center_views
from .errors import DataError, NumericalError

DEFAULT_COMPONENTS = 10
DEFAULT_REG_SCALE = 1e-4
# correlations may exceed 1 by this much from round-off before we call it a failure
CORR_SLACK = 1e-8


@dataclass(frozen=True)
class CovarianceTriple:
    cxx: np.ndarray
    cyy: np.ndarray
    cxy: np.ndarray


def compute_covariances(x, y):
    """Second moments of already-centered paired views, normalized by N."""
    x = np.asarray(x, dtype=np.float64)
    y = np.asarray(y, dtype=np.float64)
    if x.shape[0] != y.shape[0]:
        raise DataError(f"sample count mismatch: {x.shape[0]} vs {y.shape[0]}")
    n = x.shape[0]
    return CovarianceTriple(x.T @ x / n, y.T @ y / n, x.T @ y / n)


def _cluster_sums(x, y, labels, class_count=None):
    labels = np.asarray(labels)
    classes = np.unique(labels) if class_count is None else np.arange(class_count)
    counts = np.array([np.count_nonzero(labels == c) for c in classes])
    if np.any(counts == 0):
        empty = classes[counts == 0].tolist()
        raise DataError(f"empty cluster(s): {empty}")
    sx = np.stack([x[labels == c].sum(axis=0) for c in classes])
    sy = np.stack([y[labels == c].sum(axis=0) for c in classes])
    return classes, counts.astype(np.float64), sx, sy


def cluster_pair_means(x, y, labels, class_count=None):
    """Means of each view over the set of all within-class cross-view pairs."""
    x = np.asarray(x, dtype=np.float64)
    y = np.asarray(y, dtype=np.float64)
    _, counts, sx, sy = _cluster_sums(x, y, labels, class_count)
    pairs = np.sum(counts**2)
    return counts @ sx / pairs, counts @ sy / pairs


def compute_cluster_covariances(x, y, labels, class_count=None):
    """Covariances over every within-class (x_i, y_j) pairing.

    Equivalent to ``compute_covariances`` on the pair-expanded dataset with
    ``L = sum_c |X_c| |Y_c|`` rows, but assembled from per-class sums so the
    cost stays O(N D^2).
    """
    x = np.asarray(x, dtype=np.float64)
    y = np.asarray(y, dtype=np.float64)
    if x.shape[0] != y.shape[0] or x.shape[0] != len(labels):
        raise DataError("views and labels must have the same number of rows")
    labels = np.asarray(labels)
    classes, counts, sx, sy = _cluster_sums(x, y, labels, class_count)
    pairs = np.sum(counts**2)
    # each x_i in class c is paired with |Y_c| = n_c partners, and vice versa
    weights = counts[np.searchsorted(classes, labels)]
    cxx = (x * weights[:, None]).T @ x / pairs
    cyy = (y * weights[:, None]).T @ y / pairs
    cxy = sx.T @ sy / pairs
    return CovarianceTriple(cxx, cyy, cxy)


def default_reg(c):
    return DEFAULT_REG_SCALE * np.trace(c) / c.shape[0]


def _inv_sqrt(c, reg, name):
    c = 0.5 * (c + c.T) + reg * np.eye(c.shape[0])
    evals, evecs = np.linalg.eigh(c)
    top = max(evals[-1], 0.0)
    tol = 1e-12 * max(top, np.finfo(float).tiny) * c.shape[0]
    if evals[0] < -max(tol, 1e-12):
        raise NumericalError(f"{name} is not positive semi-definite (min eigenvalue {evals[0]:.3g})")
    keep = evals > tol
    inv_root = np.zeros_like(evals)
    inv_root[keep] = 1.0 / np.sqrt(evals[keep])
    return (evecs * inv_root) @ evecs.T


@dataclass(frozen=True)
class CcaModel:
    wx: np.ndarray
    wy: np.ndarray
    correlations: np.ndarray
    mean_x: np.ndarray
    mean_y: np.ndarray
    reg: float | None = None
    mode: str = "cca"

    @property
    def k(self):
        return self.wx.shape[1]

    def to_dict(self):
        return {
            "mode": self.mode,
            "k": self.k,
            "reg": self.reg,
            "correlations": self.correlations.tolist(),
            "mean_x": self.mean_x.tolist(),
            "mean_y": self.mean_y.tolist(),
            "wx": self.wx.tolist(),
            "wy": self.wy.tolist(),
        }

    @classmethod
    def from_dict(cls, d):
        wx = np.asarray(d["wx"], dtype=np.float64)
        wy = np.asarray(d["wy"], dtype=np.float64)
        if wx.shape[1] != d["k"] or wy.shape[1] != d["k"]:
            raise DataError("CCA model: projection widths do not match k")
        return cls(
            wx=wx,
            wy=wy,
            correlations=np.asarray(d["correlations"], dtype=np.float64),
            mean_x=np.asarray(d["mean_x"], dtype=np.float64),
            mean_y=np.asarray(d["mean_y"], dtype=np.float64),
            reg=d.get("reg"),
            mode=d.get("mode", "cca"),
        )

    def save(self, path):
        Path(path).write_text(json.dumps(self.to_dict()) + "\n")

    @classmethod
    def load(cls, path):
        return cls.from_dict(json.loads(Path(path).read_text()))


def solve_cca(cov, k=DEFAULT_COMPONENTS, reg=None):
    """Top-``k`` canonical directions from a covariance triple.

    Whitens both views, takes the SVD of the whitened cross-covariance and maps
    the singular vectors back. ``reg=None`` adds ``1e-4 * trace(C) / D`` to each
    view's diagonal; pass ``0.0`` for the unregularized problem (rank-deficient
    covariances are then handled as pseudo-inverses).

    Projected columns have unit variance under the supplied (unregularized)
    covariances. The returned model has zero means; the ``fit_*`` functions fill
    them in.
    """
    dx, dy = cov.cxx.shape[0], cov.cyy.shape[0]
    if not 1 <= k <= min(dx, dy):
        raise DataError(f"k={k} must be in [1, min(D_x, D_y)] = [1, {min(dx, dy)}]")
    if reg is not None and reg < 0:
        raise DataError("reg must be non-negative")
    rx = default_reg(cov.cxx) if reg is None else reg
    ry = default_reg(cov.cyy) if reg is None else reg

    whiten_x = _inv_sqrt(cov.cxx, rx, "C_xx")
    whiten_y = _inv_sqrt(cov.cyy, ry, "C_yy")
    u, s, vt = np.linalg.svd(whiten_x @ cov.cxy @ whiten_y)
    wx = whiten_x @ u[:, :k]
    wy = whiten_y @ vt[:k].T
    corr = s[:k]
    if np.any(corr > 1 + CORR_SLACK):
        raise NumericalError(f"canonical correlation {corr.max():.12g} exceeds 1")
    corr = np.clip(corr, 0.0, 1.0)

    for w, c in ((wx, cov.cxx), (wy, cov.cyy)):
        var = np.einsum("ij,ik,kj->j", w, c, w)
        scale = np.where(var > 1e-300, 1.0 / np.sqrt(np.maximum(var, 1e-300)), 1.0)
        w *= scale

    for j in range(k):
        col = wx[:, j] if np.any(wx[:, j]) else wy[:, j]
        if col[np.argmax(np.abs(col))] < 0:
            wx[:, j] *= -1
            wy[:, j] *= -1
    return CcaModel(wx, wy, corr, np.zeros(dx), np.zeros(dy), reg=reg)


def fit_cca(ds, k=DEFAULT_COMPONENTS, reg=None):
    centered, mean_x, mean_y = center_views(ds)
    cov = compute_covariances(centered.x, centered.y)
    return replace(solve_cca(cov, k, reg), mean_x=mean_x, mean_y=mean_y, mode="cca")


def fit_cluster_cca(ds, k=DEFAULT_COMPONENTS, reg=None):
    """Cluster-CCA: CCA over all within-class cross-view pairs.

    Views are centered on the pair-weighted means, i.e. the means of the
    pair-expanded data, so the fit matches plain CCA on that expansion.
    """
    mean_x, mean_y = cluster_pair_means(ds.x, ds.y, ds.labels, ds.class_count)
    cov = compute_cluster_covariances(ds.x - mean_x, ds.y - mean_y, ds.labels, ds.class_count)
    return replace(solve_cca(cov, k, reg), mean_x=mean_x, mean_y=mean_y, mode="cluster-cca")


def project(model, view, side):
    """Map rows of one view into the shared ``k``-dimensional space.

    ``side`` is ``"x"`` or ``"y"``.
    """
    if side not in ("x", "y"):
        raise ValueError(f"side must be 'x' or 'y', got {side!r}")
    w, mean = (model.wx, model.mean_x) if side == "x" else (model.wy, model.mean_y)
    view = np.asarray(view, dtype=np.float64)
    if view.ndim != 2 or view.shape[1] != w.shape[0]:
        raise DataError(f"view has {view.shape[-1]} columns, model side {side} expects {w.shape[0]}")
    return (view - mean) @ w
