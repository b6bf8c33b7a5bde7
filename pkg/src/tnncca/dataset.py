"""Paired two-view datasets: validation, CSV/JSON storage, synthetic data, folds."""

from __future__ import annotations

import json
import os
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .errors import DataError

MANIFEST_NAME = "manifest.json"


def _check_view(name, data):
    data = np.asarray(data, dtype=np.float64)
    if data.ndim != 2 or data.shape[0] < 1 or data.shape[1] < 1:
        raise DataError(f"{name}: expected a non-empty 2-D matrix, got shape {data.shape}")
    bad = np.argwhere(~np.isfinite(data))
    if bad.size:
        row, col = bad[0]
        raise DataError(f"{name}: non-finite value at ({row}, {col})")
    return data


@dataclass(frozen=True)
class PairedDataset:
    """Two aligned feature views (rows are samples) with one class label per pair."""

    x: np.ndarray
    y: np.ndarray
    labels: np.ndarray
    class_count: int

    def __post_init__(self):
        x = _check_view("view_x", self.x)
        y = _check_view("view_y", self.y)
        labels = np.asarray(self.labels)
        if labels.ndim != 1:
            raise DataError("labels must be one-dimensional")
        if not np.issubdtype(labels.dtype, np.integer):
            if not np.all(np.equal(np.mod(labels, 1), 0)):
                raise DataError("labels must be integers")
        labels = labels.astype(np.int64)
        if not (x.shape[0] == y.shape[0] == labels.shape[0]):
            raise DataError(
                f"row count mismatch: view_x={x.shape[0]}, view_y={y.shape[0]}, labels={labels.shape[0]}"
            )
        c = int(self.class_count)
        if c < 1:
            raise DataError("class_count must be >= 1")
        out_of_range = (labels < 0) | (labels >= c)
        if out_of_range.any():
            row = int(np.flatnonzero(out_of_range)[0])
            raise DataError(f"unknown class index {labels[row]} at row {row} (class_count={c})")
        missing = np.setdiff1d(np.arange(c), labels)
        if missing.size:
            raise DataError(f"classes with no samples: {missing.tolist()}")
        object.__setattr__(self, "x", x)
        object.__setattr__(self, "y", y)
        object.__setattr__(self, "labels", labels)
        object.__setattr__(self, "class_count", c)

    @property
    def n(self):
        return self.x.shape[0]

    def subset(self, idx):
        """Rows ``idx`` as a new dataset. Labels are kept as-is, so every class must survive."""
        idx = np.asarray(idx, dtype=np.int64)
        return PairedDataset(self.x[idx], self.y[idx], self.labels[idx], self.class_count)

    def equals(self, other):
        return (
            self.class_count == other.class_count
            and np.array_equal(self.x, other.x)
            and np.array_equal(self.y, other.y)
            and np.array_equal(self.labels, other.labels)
        )


def _read_matrix(path, name):
    try:
        rows = np.loadtxt(path, delimiter=",", dtype=np.float64, ndmin=2)
    except OSError:
        raise
    except ValueError as exc:
        raise DataError(f"{name}: cannot parse {path}: {exc}") from exc
    return _check_view(name, rows)


def load_dataset(manifest_path):
    """Read a dataset described by a JSON manifest.

    Paths inside the manifest are resolved relative to the manifest's directory.
    """
    manifest_path = Path(manifest_path)
    try:
        manifest = json.loads(manifest_path.read_text())
    except json.JSONDecodeError as exc:
        raise DataError(f"manifest {manifest_path} is not valid JSON: {exc}") from exc
    missing = {"view_x", "view_y", "labels", "class_count"} - set(manifest)
    if missing:
        raise DataError(f"manifest missing keys: {sorted(missing)}")
    base = manifest_path.parent
    x = _read_matrix(base / manifest["view_x"], "view_x")
    y = _read_matrix(base / manifest["view_y"], "view_y")
    try:
        raw = np.loadtxt(base / manifest["labels"], delimiter=",", dtype=np.float64, ndmin=1)
    except ValueError as exc:
        raise DataError(f"labels: cannot parse: {exc}") from exc
    if raw.ndim != 1:
        raise DataError("labels: expected one integer per row")
    if not np.all(np.isfinite(raw)) or not np.all(raw == np.round(raw)):
        raise DataError("labels: every row must be an integer")
    return PairedDataset(x, y, raw.astype(np.int64), int(manifest["class_count"]))


def save_dataset(ds, directory):
    """Write ``ds`` as three CSV files plus a manifest; returns the manifest path."""
    directory = Path(directory)
    directory.mkdir(parents=True, exist_ok=True)
    # %.17g round-trips every float64 exactly
    np.savetxt(directory / "view_x.csv", ds.x, delimiter=",", fmt="%.17g")
    np.savetxt(directory / "view_y.csv", ds.y, delimiter=",", fmt="%.17g")
    np.savetxt(directory / "labels.csv", ds.labels, fmt="%d")
    manifest = {
        "view_x": "view_x.csv",
        "view_y": "view_y.csv",
        "labels": "labels.csv",
        "class_count": ds.class_count,
    }
    path = directory / MANIFEST_NAME
    path.write_text(json.dumps(manifest, indent=2) + "\n")
    return path


@dataclass(frozen=True)
class SynthSpec:
    class_count: int = 10
    samples_per_class: int = 200
    latent_dim: int = 10
    dim_x: int = 20
    dim_y: int = 20
    noise_sigma: float = 1.0
    class_separation: float = 2.0
    seed: int = 0

    def __post_init__(self):
        for name in ("class_count", "samples_per_class", "latent_dim", "dim_x", "dim_y"):
            if int(getattr(self, name)) < 1:
                raise DataError(f"SynthSpec.{name} must be >= 1")
        if self.noise_sigma < 0 or self.class_separation < 0:
            raise DataError("SynthSpec noise_sigma and class_separation must be >= 0")


def _orthonormal_map(rng, rows, cols):
    """Random ``rows x cols`` map. Columns are orthonormal when rows >= cols."""
    g = rng.standard_normal((max(rows, cols), min(rows, cols)))
    q, r = np.linalg.qr(g)
    q = q * np.sign(np.where(np.diag(r) == 0, 1.0, np.diag(r)))
    return q if rows >= cols else q.T


def synth_clustered(spec):
    """Shared-latent linear-Gaussian two-view data with class structure.

    Each pair is generated as ``x = Px (m_c + z) + sigma * ex`` and
    ``y = Py (m_c + z) + sigma * ey`` where ``z`` is a unit Gaussian latent shared
    by both views and ``m_c`` a class mean of norm ``class_separation``. ``Px`` and
    ``Py`` have orthonormal columns, so along any latent direction the noise has
    variance ``sigma**2`` and the canonical correlations are known in closed form
    (``1 / (1 + sigma**2)`` for a single unit-variance latent).

    Samples are ordered class by class.
    """
    rng = np.random.default_rng(spec.seed)
    c, per, lat = spec.class_count, spec.samples_per_class, spec.latent_dim
    px = _orthonormal_map(rng, spec.dim_x, lat)
    py = _orthonormal_map(rng, spec.dim_y, lat)
    dirs = rng.standard_normal((c, lat))
    dirs /= np.linalg.norm(dirs, axis=1, keepdims=True)
    means = spec.class_separation * dirs

    labels = np.repeat(np.arange(c), per)
    n = labels.size
    z = rng.standard_normal((n, lat))
    shared = means[labels] + z
    x = shared @ px.T + spec.noise_sigma * rng.standard_normal((n, spec.dim_x))
    y = shared @ py.T + spec.noise_sigma * rng.standard_normal((n, spec.dim_y))
    return PairedDataset(x, y, labels, c)


def stratified_deal(labels, parts, rng):
    """Shuffle each class, concatenate, then deal positions round-robin into ``parts``.

    Returns the part index of every sample. Part sizes differ by at most one, the
    lower part indices getting the extras, and each class is spread over the parts
    with per-part counts differing by at most one.
    """
    labels = np.asarray(labels)
    order = []
    for c in np.unique(labels):
        members = np.flatnonzero(labels == c)
        order.append(rng.permutation(members))
    order = np.concatenate(order)
    part_of = np.empty(labels.size, dtype=np.int64)
    part_of[order] = np.arange(labels.size) % parts
    return part_of


@dataclass(frozen=True)
class FoldAssignment:
    fold_of: np.ndarray
    k: int

    def train_test(self, fold):
        test = np.flatnonzero(self.fold_of == fold)
        train = np.flatnonzero(self.fold_of != fold)
        return train, test


def kfold_split(ds, k, seed):
    """Category-balanced k-fold assignment."""
    if k < 2:
        raise DataError("fold count must be >= 2")
    counts = np.bincount(ds.labels, minlength=ds.class_count)
    small = np.flatnonzero(counts < k)
    if small.size:
        raise DataError(f"classes {small.tolist()} have fewer than k={k} samples")
    rng = np.random.default_rng(seed)
    return FoldAssignment(stratified_deal(ds.labels, k, rng), int(k))


def center_views(ds):
    """Subtract the per-column mean of each view.

    Returns ``(centered, mean_x, mean_y)``.
    """
    mean_x = ds.x.mean(axis=0)
    mean_y = ds.y.mean(axis=0)
    centered = PairedDataset(ds.x - mean_x, ds.y - mean_y, ds.labels, ds.class_count)
    return centered, mean_x, mean_y


def dataset_from_config(source):
    """Build a dataset from a manifest path or a ``SynthSpec`` field mapping."""
    if isinstance(source, (str, os.PathLike)):
        return load_dataset(source)
    if isinstance(source, SynthSpec):
        return synth_clustered(source)
    return synth_clustered(SynthSpec(**source))
