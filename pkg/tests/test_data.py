import gzip
import json

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st
from hypothesis.extra.numpy import arrays

from dflocate.data import (
    DataError,
    Dataset,
    IdxFormatError,
    csv_train_test,
    dataset_from_manifest,
    filter_classes,
    kfold_indices,
    load_manifest,
    load_mnist79,
    parse_csv_dataset,
    parse_idx,
    serialize_idx,
    split,
)
from dflocate.synthetic import bump_sequences, linear_regression, two_class


def idx_bytes(arr):
    arr = np.asarray(arr, dtype=np.uint8)
    return bytes([0, 0, 8, arr.ndim]) + b"".join(int(d).to_bytes(4, "big") for d in arr.shape) + arr.tobytes()


class TestIdx:
    def test_single_image(self):
        raw = np.arange(784).reshape(1, 28, 28) % 256
        x = parse_idx(idx_bytes(raw))
        assert x.shape == (1, 28, 28)
        assert x.max() <= 1.0
        np.testing.assert_array_equal(x * 255, raw)

    def test_labels_raw(self):
        np.testing.assert_array_equal(parse_idx(idx_bytes([7, 9, 7]), rescale=False), [7, 9, 7])

    def test_bad_magic(self):
        buf = bytearray(idx_bytes(np.zeros((2, 2))))
        buf[0] = 1
        with pytest.raises(IdxFormatError) as e:
            parse_idx(bytes(buf))
        assert e.value.offset == 0

    def test_unsupported_type(self):
        buf = bytearray(idx_bytes(np.zeros((2, 2))))
        buf[2] = 0x0D
        with pytest.raises(IdxFormatError, match="float"):
            parse_idx(bytes(buf))

    def test_truncated(self):
        buf = idx_bytes(np.zeros((3, 4)))
        with pytest.raises(IdxFormatError) as e:
            parse_idx(buf[:-1])
        assert e.value.offset == len(buf) - 1

    def test_trailing(self):
        with pytest.raises(IdxFormatError):
            parse_idx(idx_bytes(np.zeros(3)) + b"\0")

    @given(arrays(np.uint8, st.tuples(st.integers(1, 4), st.integers(1, 5), st.integers(1, 5))))
    def test_round_trip(self, raw):
        x = parse_idx(idx_bytes(raw))
        assert serialize_idx(x) == idx_bytes(raw)


class TestMnist:
    def test_bundled_subset(self, monkeypatch):
        monkeypatch.delenv("DFL_MNIST_DIR", raising=False)
        d = load_mnist79()
        assert d.instance_shape == (28, 28)
        assert d.classes() == [7, 9]
        assert len(d) == 1000

    def test_directory_override(self, tmp_path, monkeypatch):
        imgs = np.random.default_rng(0).integers(0, 256, size=(5, 28, 28))
        (tmp_path / "train-images-idx3-ubyte.gz").write_bytes(gzip.compress(idx_bytes(imgs)))
        (tmp_path / "train-labels-idx1-ubyte.gz").write_bytes(gzip.compress(idx_bytes([7, 1, 9, 9, 3])))
        monkeypatch.setenv("DFL_MNIST_DIR", str(tmp_path))
        d = load_mnist79()
        np.testing.assert_array_equal(d.labels, [7, 9, 9])
        np.testing.assert_array_equal(d.features[0] * 255, imgs[0])


class TestCsv:
    def test_header_and_rescale(self):
        d = parse_csv_dataset("a,b,label\n0,10,1\n5,20,0\n10,30,1\n")
        np.testing.assert_allclose(d.features, [[0, 0], [0.5, 0.5], [1, 1]])
        np.testing.assert_array_equal(d.labels, [1, 0, 1])
        assert d.labels.dtype.kind == "i"

    def test_named_label_column(self):
        d = parse_csv_dataset("y,a\n1,2\n0,4\n", label_column="y")
        np.testing.assert_array_equal(d.labels, [1, 0])

    def test_constant_column(self):
        d = parse_csv_dataset("3,1\n3,0\n")
        np.testing.assert_array_equal(d.features, [[0], [0]])

    def test_non_numeric_cell(self):
        with pytest.raises(DataError, match="row 2, column 1"):
            parse_csv_dataset("a,b,c\n1,2,3\n4,x,6\n")

    def test_ragged(self):
        with pytest.raises(DataError):
            parse_csv_dataset("1,2\n1,2,3\n")

    def test_out_of_range_without_rescale(self):
        with pytest.raises(DataError, match="range"):
            parse_csv_dataset("1,2\n5,1\n", rescale=False)

    def test_train_test_uses_train_range(self):
        rows = "\n".join(f"{i},{i % 2}" for i in range(20))
        train, test = csv_train_test(rows, 0.25, seed=0)
        assert len(train) == 15 and len(test) == 5
        lo, hi = train.rescale.minimum, train.rescale.maximum
        raw_train = np.rint(train.features[:, 0] * (hi - lo) + lo)
        raw_test = np.rint(test.features[:, 0] * (hi - lo) + lo)
        assert raw_train.min() == lo[0] and raw_train.max() == hi[0]
        assert sorted(np.r_[raw_train, raw_test].tolist()) == list(range(20))
        assert np.all((test.features >= 0) & (test.features <= 1))


class TestManifest:
    def test_csv_relative_path(self, tmp_path):
        (tmp_path / "t.csv").write_text("x,y\n0,0\n1,1\n2,1\n")
        (tmp_path / "m.json").write_text(json.dumps({"format": "csv", "path": "t.csv"}))
        assert len(load_manifest(tmp_path / "m.json")) == 3

    def test_missing_file(self, tmp_path):
        with pytest.raises(DataError, match="not found"):
            dataset_from_manifest({"format": "csv", "path": "nope.csv"}, tmp_path)

    def test_synthetic_and_limit(self):
        d = dataset_from_manifest({"format": "two-class", "n": 100, "seed": 1, "limit": 30})
        assert len(d) == 30 and d.n_features == 20

    def test_unknown_format(self):
        with pytest.raises(DataError):
            dataset_from_manifest({"format": "parquet"})


class TestSubsets:
    def data(self, n=50):
        return Dataset(np.random.default_rng(0).uniform(size=(n, 3)), np.arange(n) % 3)

    def test_filter_and_relabel(self):
        d = filter_classes(self.data(), [2, 0], relabel=True)
        assert d.classes() == [0, 1]
        assert d.class_names == {0: "2", 1: "0"}

    def test_filter_unknown(self):
        with pytest.raises(DataError):
            filter_classes(self.data(), [5])

    def test_split_deterministic_and_disjoint(self):
        a = split(self.data(), [0.6, 0.2, 0.2], seed=3)
        b = split(self.data(), [0.6, 0.2, 0.2], seed=3)
        assert [len(p) for p in a] == [30, 10, 10]
        for p, q in zip(a, b):
            np.testing.assert_array_equal(p.features, q.features)
        rows = {tuple(r) for p in a for r in p.features}
        assert len(rows) == 50

    def test_split_bad_fractions(self):
        with pytest.raises(DataError):
            split(self.data(), [0.5, 0.4], seed=0)

    def test_kfold_partition(self):
        folds = kfold_indices(23, 5, seed=1)
        np.testing.assert_array_equal(np.sort(np.concatenate(folds)), np.arange(23))

    def test_read_only(self):
        d = self.data()
        with pytest.raises(ValueError):
            d.features[0, 0] = 1.0


class TestSynthetic:
    def test_two_class(self):
        d = two_class(n=200, seed=0)
        assert d.features.shape == (200, 20) and d.classes() == [0, 1]
        np.testing.assert_array_equal(two_class(n=200, seed=0).features, d.features)
        # the first informative columns separate the classes upward
        assert d.features[d.labels == 1, :4].mean() > d.features[d.labels == 0, :4].mean()

    def test_linear(self):
        d = linear_regression(n=100, noise=0.0)
        np.testing.assert_allclose(d.labels, d.features @ np.array([3.0, -1.0, 2.0, -0.5, 1.5]))

    def test_bumps(self):
        d = bump_sequences(n=40, seed=2)
        assert d.instance_shape == (64,)
        assert np.all((d.features >= 0) & (d.features <= 1))
