import numpy as np
import pytest

from nn2lut.dataset import Dataset, load_csv, make_blobs, split, standardize


def write_csv(tmp_path, text, name="data.csv"):
    path = tmp_path / name
    path.write_text(text)
    return str(path)


class TestLoadCsv:
    def test_labels_remapped_in_first_appearance_order(self, tmp_path):
        path = write_csv(tmp_path, "f1,f2,f3,f4,label\n1,2,3,4,a\n5,6,7,8,b\n9,8,7,6,a\n")
        ds = load_csv(path, "label")
        assert ds.num_samples == 3
        assert ds.labels.tolist() == [0, 1, 0]
        assert ds.num_classes == 2
        assert ds.feature_names == ["f1", "f2", "f3", "f4"]
        assert ds.features[0].tolist() == [1.0, 2.0, 3.0, 4.0]

    def test_label_column_not_last(self, tmp_path):
        path = write_csv(tmp_path, "label,x,y\nu,1,2\nv,3,4\n")
        ds = load_csv(path, "label")
        assert ds.features.tolist() == [[1.0, 2.0], [3.0, 4.0]]

    def test_header_only_is_empty_dataset(self, tmp_path):
        path = write_csv(tmp_path, "a,b,label\n")
        with pytest.raises(ValueError, match="empty dataset"):
            load_csv(path, "label")

    def test_nan_cell_rejected_with_location(self, tmp_path):
        path = write_csv(tmp_path, "a,b,label\n1,2,x\n3,NaN,y\n")
        with pytest.raises(ValueError, match=r"line 3.*'b'"):
            load_csv(path, "label")

    def test_unparseable_cell_named(self, tmp_path):
        path = write_csv(tmp_path, "a,label\noops,x\n1,y\n")
        with pytest.raises(ValueError, match=r"line 2.*'a'.*oops"):
            load_csv(path, "label")

    def test_missing_label_column(self, tmp_path):
        path = write_csv(tmp_path, "a,b\n1,2\n")
        with pytest.raises(ValueError, match="label column"):
            load_csv(path, "wat")

    def test_missing_file(self):
        with pytest.raises(FileNotFoundError):
            load_csv("/nonexistent/nope.csv", "label")

    def test_single_label_rejected(self, tmp_path):
        path = write_csv(tmp_path, "a,label\n1,x\n2,x\n")
        with pytest.raises(ValueError, match="fewer than 2"):
            load_csv(path, "label")


class TestStandardize:
    def test_constant_column_maps_to_zero(self):
        ds = Dataset(np.array([[5.0], [5.0], [5.0]]), np.array([0, 1, 0]), 2)
        (out,), stats = standardize(ds)
        assert np.all(out.features == 0.0)

    def test_two_point_symmetry(self):
        ds = Dataset(np.array([[0.0], [2.0]]), np.array([0, 1]), 2)
        (out,), stats = standardize(ds)
        assert stats.mean[0] == 1.0 and stats.std[0] == 1.0
        assert out.features[:, 0].tolist() == [-1.0, 1.0]

    def test_others_use_train_stats(self):
        tr = Dataset(np.array([[0.0], [2.0]]), np.array([0, 1]), 2)
        te = Dataset(np.array([[3.0]]), np.array([0]), 2)
        (_, te_std), _ = standardize(tr, [te])
        assert te_std.features[0, 0] == 2.0

    def test_idempotent_within_tolerance(self):
        rng = np.random.default_rng(3)
        feats = rng.normal(0.0, 2.5, size=(200, 5))  # stddevs comfortably >= 1
        ds = Dataset(feats, rng.integers(0, 2, 200), 2)
        (once,), _ = standardize(ds)
        (twice,), _ = standardize(once)
        assert np.max(np.abs(twice.features - once.features)) < 1e-6


class TestSplit:
    def test_floor_sizes(self):
        ds = make_blobs(10, 3, 2, seed=0)
        tr, te = split(ds, 0.8, seed=1)
        assert (tr.num_samples, te.num_samples) == (8, 2)

    def test_same_seed_same_partition(self):
        ds = make_blobs(50, 3, 2, seed=0)
        a1, b1 = split(ds, 0.6, seed=42)
        a2, b2 = split(ds, 0.6, seed=42)
        assert np.array_equal(a1.features, a2.features)
        assert np.array_equal(b1.labels, b2.labels)

    def test_partition_is_exact(self):
        ds = make_blobs(37, 4, 3, seed=5)
        tr, te = split(ds, 0.7, seed=9)
        joined = np.concatenate([tr.features, te.features], axis=0)
        assert tr.num_samples + te.num_samples == ds.num_samples
        # every original row appears exactly once across the two sides
        orig = {tuple(row) for row in ds.features}
        got = [tuple(row) for row in joined]
        assert set(got) == orig and len(got) == len(orig)

    def test_degenerate_fraction_rejected(self):
        ds = make_blobs(10, 3, 2, seed=0)
        with pytest.raises(ValueError, match="empty"):
            split(ds, 0.05, seed=1)


class TestBlobs:
    def test_deterministic(self):
        a = make_blobs(100, 4, 3, seed=7)
        b = make_blobs(100, 4, 3, seed=7)
        assert np.array_equal(a.features, b.features)
        assert np.array_equal(a.labels, b.labels)

    def test_balanced_counts(self):
        ds = make_blobs(101, 2, 3, seed=0)
        counts = np.bincount(ds.labels, minlength=3)
        assert sorted(counts.tolist()) == [33, 34, 34]
