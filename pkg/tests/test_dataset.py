import json
import os

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from tnncca.dataset import (
    PairedDataset,
    SynthSpec,
    center_views,
    kfold_split,
    load_dataset,
    save_dataset,
    synth_clustered,
)
from tnncca.errors import DataError


class TestPairedDataset:
    def test_row_mismatch(self):
        with pytest.raises(DataError, match="row count mismatch"):
            PairedDataset(np.zeros((4, 3)), np.zeros((4, 2)), np.array([0, 1, 0]), 2)

    def test_unknown_class(self):
        with pytest.raises(DataError, match="unknown class index"):
            PairedDataset(np.zeros((2, 1)), np.zeros((2, 1)), np.array([0, 2]), 2)

    def test_missing_class(self):
        with pytest.raises(DataError, match="no samples"):
            PairedDataset(np.zeros((2, 1)), np.zeros((2, 1)), np.array([0, 0]), 2)

    def test_non_finite(self):
        x = np.zeros((3, 2))
        x[1, 1] = np.nan
        with pytest.raises(DataError, match=r"non-finite value at \(1, 1\)"):
            PairedDataset(x, np.zeros((3, 1)), np.array([0, 1, 0]), 2)


class TestStorage:
    def test_round_trip_small(self, tmp_path):
        ds = PairedDataset(
            np.array([[0.1, 1e-300, -3.5], [2.0, 1 / 3, 7.0], [np.pi, 0.0, -0.0], [1e300, 5.5, 2.25]]),
            np.array([[1.0, 2.0], [3.0, 4.0], [0.1 + 0.2, 6.0], [7.0, -8.0]]),
            np.array([0, 1, 1, 0]),
            2,
        )
        manifest = save_dataset(ds, tmp_path / "new")
        assert manifest.exists()
        back = load_dataset(manifest)
        assert back.n == 4 and back.class_count == 2
        assert back.equals(ds)

    def test_round_trip_synthetic(self, tmp_path):
        ds = synth_clustered(SynthSpec(3, 7, 2, 5, 4, 0.7, 1.5, seed=3))
        assert load_dataset(save_dataset(ds, tmp_path)).equals(ds)

    def test_manifest_keys(self, tmp_path):
        ds = synth_clustered(SynthSpec(2, 3, 1, 2, 2, seed=0))
        manifest = json.loads(save_dataset(ds, tmp_path).read_text())
        assert manifest == {"view_x": "view_x.csv", "view_y": "view_y.csv", "labels": "labels.csv", "class_count": 2}

    def test_label_row_mismatch(self, tmp_path):
        ds = synth_clustered(SynthSpec(2, 2, 1, 3, 2, seed=0))
        manifest = save_dataset(ds, tmp_path)
        (tmp_path / "labels.csv").write_text("0\n1\n1\n")
        with pytest.raises(DataError, match="row count mismatch"):
            load_dataset(manifest)

    def test_non_finite_entry(self, tmp_path):
        ds = synth_clustered(SynthSpec(2, 2, 1, 3, 2, seed=0))
        manifest = save_dataset(ds, tmp_path)
        lines = (tmp_path / "view_x.csv").read_text().splitlines()
        cells = lines[2].split(",")
        cells[1] = "inf"
        lines[2] = ",".join(cells)
        (tmp_path / "view_x.csv").write_text("\n".join(lines) + "\n")
        with pytest.raises(DataError, match=r"non-finite value at \(2, 1\)"):
            load_dataset(manifest)

    def test_unknown_label_in_file(self, tmp_path):
        ds = synth_clustered(SynthSpec(2, 2, 1, 3, 2, seed=0))
        manifest = save_dataset(ds, tmp_path)
        (tmp_path / "labels.csv").write_text("0\n1\n5\n1\n")
        with pytest.raises(DataError, match="unknown class index 5"):
            load_dataset(manifest)

    @pytest.mark.skipif(os.geteuid() == 0, reason="root ignores directory permissions")
    def test_unwritable(self, tmp_path):
        ro = tmp_path / "ro"
        ro.mkdir()
        ro.chmod(0o500)
        ds = synth_clustered(SynthSpec(2, 2, 1, 1, 1, seed=0))
        with pytest.raises(OSError):
            save_dataset(ds, ro)

    def test_unwritable_path_under_file(self, tmp_path):
        blocker = tmp_path / "file"
        blocker.write_text("x")
        ds = synth_clustered(SynthSpec(2, 2, 1, 1, 1, seed=0))
        with pytest.raises(OSError):
            save_dataset(ds, blocker / "sub")


class TestSynth:
    def test_deterministic(self):
        spec = SynthSpec(3, 10, 2, 4, 5, 0.5, 2.0, seed=11)
        assert synth_clustered(spec).equals(synth_clustered(spec))

    def test_distinct_seeds(self):
        a = synth_clustered(SynthSpec(3, 10, 2, 4, 5, 0.5, 2.0, seed=1))
        b = synth_clustered(SynthSpec(3, 10, 2, 4, 5, 0.5, 2.0, seed=2))
        assert not np.array_equal(a.x, b.x)

    def test_shapes_and_labels(self):
        ds = synth_clustered(SynthSpec(4, 6, 3, 5, 7, seed=0))
        assert ds.x.shape == (24, 5) and ds.y.shape == (24, 7)
        np.testing.assert_array_equal(np.bincount(ds.labels), [6, 6, 6, 6])

    def test_noise_free_is_shared_latent(self):
        # sigma=0 and one latent: both views are exact multiples of a single signal
        ds = synth_clustered(SynthSpec(2, 50, 1, 3, 2, noise_sigma=0.0, seed=5))
        assert np.linalg.matrix_rank(np.hstack([ds.x, ds.y]), tol=1e-9) == 1

    def test_one_dimensional_correlation_oracle(self):
        # corr(z + e1, z + e2) = 1 / (1 + sigma^2) for unit-variance z, e1, e2
        ds = synth_clustered(SynthSpec(1, 2000, 1, 1, 1, noise_sigma=1.0, seed=0))
        r = np.corrcoef(ds.x[:, 0], ds.y[:, 0])[0, 1]
        assert abs(abs(r) - 0.5) < 0.05

    def test_invalid_spec(self):
        with pytest.raises(DataError):
            SynthSpec(0, 1, 1, 1, 1)
        with pytest.raises(DataError):
            SynthSpec(noise_sigma=-1.0)


class TestKFold:
    def test_exact_division(self):
        labels = np.repeat(np.arange(10), 10)
        ds = PairedDataset(np.zeros((100, 1)), np.zeros((100, 1)), labels, 10)
        folds = kfold_split(ds, 5, seed=0)
        for f in range(5):
            members = folds.fold_of == f
            assert members.sum() == 20
            np.testing.assert_array_equal(np.bincount(labels[members], minlength=10), 2)

    def test_uneven_class(self):
        ds = PairedDataset(np.zeros((11, 1)), np.zeros((11, 1)), np.zeros(11, dtype=int), 1)
        counts = np.bincount(kfold_split(ds, 5, seed=3).fold_of, minlength=5)
        assert set(counts.tolist()) <= {2, 3}
        assert counts.sum() == 11

    def test_too_few_samples(self):
        labels = np.array([0] * 10 + [1] * 3)
        ds = PairedDataset(np.zeros((13, 1)), np.zeros((13, 1)), labels, 2)
        with pytest.raises(DataError):
            kfold_split(ds, 5, seed=0)

    def test_deterministic(self, small_ds):
        a = kfold_split(small_ds, 2, seed=9)
        b = kfold_split(small_ds, 2, seed=9)
        np.testing.assert_array_equal(a.fold_of, b.fold_of)

    @settings(max_examples=60, deadline=None)
    @given(
        counts=st.lists(st.integers(min_value=3, max_value=17), min_size=1, max_size=6),
        k=st.integers(min_value=2, max_value=3),
        seed=st.integers(min_value=0, max_value=2**31),
    )
    def test_balance_property(self, counts, k, seed):
        labels = np.repeat(np.arange(len(counts)), counts)
        n = labels.size
        ds = PairedDataset(np.zeros((n, 1)), np.zeros((n, 1)), labels, len(counts))
        folds = kfold_split(ds, k, seed)
        assert folds.fold_of.min() >= 0 and folds.fold_of.max() < k
        for c, total in enumerate(counts):
            per_fold = np.bincount(folds.fold_of[labels == c], minlength=k)
            assert per_fold.sum() == total
            assert per_fold.max() - per_fold.min() <= 1
        for f in range(k):
            train, test = folds.train_test(f)
            assert np.intersect1d(train, test).size == 0
            assert np.union1d(train, test).size == n


class TestCenter:
    def test_already_centered(self):
        x = np.array([[1.0, -2.0], [-1.0, 2.0]])
        ds = PairedDataset(x, x.copy(), np.array([0, 0]), 1)
        out, mx, my = center_views(ds)
        np.testing.assert_array_equal(out.x, x)
        np.testing.assert_array_equal(mx, 0.0)
        np.testing.assert_array_equal(my, 0.0)

    def test_repeated_row(self):
        x = np.tile([[0.1, 7.3, -2.2]], (5, 1))
        ds = PairedDataset(x, x.copy(), np.zeros(5, dtype=int), 1)
        out, _, _ = center_views(ds)
        np.testing.assert_allclose(out.x, 0.0, atol=1e-15)

    def test_column_sums(self, rng):
        x = rng.standard_normal((5, 3))
        ds = PairedDataset(x, rng.standard_normal((5, 2)), np.zeros(5, dtype=int), 1)
        out, _, _ = center_views(ds)
        assert np.all(np.abs(out.x.sum(axis=0)) < 1e-10)
        assert np.all(np.abs(out.y.mean(axis=0)) < 1e-10)
