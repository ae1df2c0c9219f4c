import struct

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from psgunlearn import data, nn_core
from psgunlearn.errors import InvalidInputError, ParseError, SelectionError
from psgunlearn.training import train_epochs


def write_idx(tmp_path, images, labels):
    n, h, w = images.shape
    img = tmp_path / "images.idx"
    img.write_bytes(struct.pack(">IIII", data.IDX_IMAGES_MAGIC, n, h, w) + images.astype(np.uint8).tobytes())
    lab = tmp_path / "labels.idx"
    lab.write_bytes(struct.pack(">II", data.IDX_LABELS_MAGIC, len(labels)) + bytes(labels))
    return img, lab


class TestDataset:
    def test_one_hot_labels_required(self):
        with pytest.raises(InvalidInputError):
            data.LabeledDataset(np.zeros((2, 2)), np.array([[1, 1], [0, 1]]), np.array([True, False]))

    def test_coverage_check(self):
        ds = data.LabeledDataset(np.zeros((2, 1)), np.eye(2), np.array([True, True]))
        with pytest.raises(InvalidInputError):
            ds.check_coverage()


class TestBlobs:
    def test_split_sizes(self, blobs):
        assert blobs.train_rows.size == 480 and blobs.test_rows.size == 120
        for k in range(3):
            assert np.sum(blobs.class_index[blobs.test_rows] == k) == 40
        blobs.check_coverage()

    def test_deterministic(self):
        a = data.make_gaussian_blobs(3, 50, 4, 5.0, seed=9)
        b = data.make_gaussian_blobs(3, 50, 4, 5.0, seed=9)
        assert a.features.tobytes() == b.features.tobytes()
        assert a.is_train.tobytes() == b.is_train.tobytes()

    def test_pairwise_separation(self):
        ds = data.make_gaussian_blobs(6, 400, 3, 5.0, seed=2)
        means = np.array([ds.features[ds.class_index == k].mean(axis=0) for k in range(6)])
        gaps = np.linalg.norm(means[:, None] - means[None], axis=-1)[np.triu_indices(6, 1)]
        assert gaps.min() > 4.5

    def test_linear_model_separates_easy_pair(self):
        ds = data.make_gaussian_blobs(2, 200, 2, 10.0, seed=0)
        model = nn_core.init_model([2, 2], seed=0)
        X, Y = ds.rows(ds.train_rows)
        model = train_epochs(model, X, Y, 20, 0.05, 32, seed=0)
        Xt, Yt = ds.rows(ds.test_rows)
        assert np.mean(nn_core.predict(model, Xt) == Yt.argmax(1)) >= 0.99


class TestSelectForget:
    def test_full_class(self, blobs):
        part = data.select_forget(blobs, data.ClassFraction(0, 1.0), seed=0)
        assert part.forget.size == 160
        assert np.all(blobs.class_index[part.forget] == 0)
        assert part.forget_test.size == 40

    def test_quarter_class(self, blobs):
        part = data.select_forget(blobs, data.ClassFraction(0, 0.25), seed=0)
        assert part.forget.size == 40
        assert part.forget_test.size == 10
        assert part.mia_heldout.size == 40

    def test_percentile_predicate(self, blobs):
        rule = data.FeaturePredicate(0, quantile=0.9)
        part = data.select_forget(blobs, rule, seed=0)
        tau = np.quantile(blobs.features[:, 0], 0.9)
        expected = int(np.sum(blobs.features[blobs.train_rows, 0] > tau))
        assert part.forget.size == expected
        assert abs(part.forget.size - 0.1 * 480) <= 15
        assert not np.intersect1d(part.forget_test, part.mia_heldout).size

    def test_empty_selection(self, blobs):
        with pytest.raises(SelectionError):
            data.select_forget(blobs, data.FeaturePredicate(0, threshold=1e9), seed=0)
        with pytest.raises(SelectionError):
            data.select_forget(blobs, data.ClassFraction(0, 0.001), seed=0)
        with pytest.raises(SelectionError):
            data.select_forget(blobs, data.ClassFraction(7, 0.5), seed=0)

    @settings(max_examples=25, deadline=None)
    @given(st.floats(0.01, 1.0), st.integers(0, 2), st.integers(0, 100))
    def test_partition_invariants(self, blobs, fraction, cls, seed):
        try:
            part = data.select_forget(blobs, data.ClassFraction(cls, fraction), seed)
        except SelectionError:
            return
        assert not np.intersect1d(part.forget, part.remain).size
        np.testing.assert_array_equal(np.union1d(part.forget, part.remain), blobs.train_rows)
        np.testing.assert_array_equal(np.union1d(part.forget_test, part.remain_test), blobs.test_rows)
        assert part.forget.size > 0


class TestLoaders:
    def test_csv_round_trip(self, tmp_path):
        path = tmp_path / "d.csv"
        rows = ["a,b,label"] + [f"{i},{-i},{i % 2}" for i in range(10)]
        path.write_text("\n".join(rows) + "\n")
        ds = data.load_csv(path, header=True)
        assert ds.features.shape == (10, 2) and ds.n_classes == 2
        np.testing.assert_array_equal(ds.class_index, np.arange(10) % 2)

    def test_empty_csv_is_an_error(self, tmp_path):
        path = tmp_path / "empty.csv"
        path.write_text("")
        with pytest.raises(ParseError):
            data.load_csv(path)

    def test_csv_bad_row_reports_offset(self, tmp_path):
        path = tmp_path / "bad.csv"
        path.write_text("1,2,0\n3,x,1\n")
        with pytest.raises(ParseError) as info:
            data.load_csv(path)
        assert info.value.offset == 6

    def test_csv_ragged_rows(self, tmp_path):
        path = tmp_path / "bad.csv"
        path.write_text("1,2,0\n3,1\n")
        with pytest.raises(ParseError):
            data.load_csv(path)

    def test_csv_pixel_scale(self, tmp_path):
        path = tmp_path / "px.csv"
        path.write_text("255,0,0\n0,255,1\n")
        ds = data.load_csv(path, pixel_scale=255.0, test_fraction=0.5)
        assert ds.features.max() == 1.0

    def test_idx(self, tmp_path, rng):
        images = rng.integers(0, 256, size=(10, 28, 28))
        images[0, 0, 0] = 255
        img, lab = write_idx(tmp_path, images, [i % 2 for i in range(10)])
        ds = data.load_idx(img, lab, test_fraction=0.2)
        assert ds.features.shape == (10, 784)
        assert ds.features[0, 0] == 1.0
        assert ds.features.min() >= 0 and ds.features.max() <= 1

    def test_idx_count_mismatch(self, tmp_path):
        img, lab = write_idx(tmp_path, np.zeros((3, 2, 2)), [0, 1])
        with pytest.raises(ParseError):
            data.load_idx(img, lab)

    def test_idx_bad_magic(self, tmp_path):
        img, lab = write_idx(tmp_path, np.zeros((2, 2, 2)), [0, 1])
        with pytest.raises(ParseError):
            data.load_idx(lab, img)

    def test_idx_label_out_of_range(self, tmp_path):
        img, lab = write_idx(tmp_path, np.zeros((2, 2, 2)), [0, 5])
        with pytest.raises(ParseError):
            data.load_idx(img, lab, n_classes=3)
