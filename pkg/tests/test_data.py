import numpy as np
import pytest

from sparsetab.data import (
    CsvParseError,
    Dataset,
    SyntheticSpec,
    load_csv,
    make_classification,
    save_csv,
    split,
    standardize,
)
from sparsetab.numerics import make_rng


def write(tmp_path, name, text):
    p = tmp_path / name
    p.write_text(text, encoding="utf-8")
    return p


class TestLoadCsv:
    def test_basic_with_label(self, tmp_path):
        p = write(tmp_path, "d.csv", "a,b,label\n1,2,0\n3,4,1\n5,6,0\n")
        d = load_csv(p, label_column="label")
        assert d.n_samples == 3 and d.n_features == 2
        assert d.feature_names == ("a", "b")
        assert d.y.tolist() == [0, 1, 0]

    def test_survival_columns(self, tmp_path):
        p = write(tmp_path, "s.csv",
                  "a,b,time,event\n1,2,5.5,1\n3,4,2.0,0\n")
        d = load_csv(p, time_column="time", event_column="event")
        assert d.feature_names == ("a", "b")
        assert d.time.tolist() == [5.5, 2.0]
        assert d.event.tolist() == [1, 0]

    def test_parse_error_names_row(self, tmp_path):
        p = write(tmp_path, "bad.csv", "a,b\n1,2\nabc,4\n")
        with pytest.raises(CsvParseError, match="row 2"):
            load_csv(p)

    def test_missing_label_column(self, tmp_path):
        p = write(tmp_path, "d.csv", "a,b\n1,2\n")
        with pytest.raises(ValueError, match="label"):
            load_csv(p, label_column="y")

    def test_missing_file(self, tmp_path):
        with pytest.raises(FileNotFoundError):
            load_csv(tmp_path / "nope.csv")

    def test_round_trip(self, tmp_path):
        d, _ = make_classification(SyntheticSpec(20, 4, 2, 3, 1.0, seed=0))
        save_csv(d, tmp_path / "r.csv")
        d2 = load_csv(tmp_path / "r.csv", label_column="label")
        assert np.array_equal(d.x, d2.x)
        assert np.array_equal(d.y, d2.y)


class TestStandardize:
    def test_mean_zero_std_one(self):
        d = Dataset(x=np.array([[1.0], [2.0], [3.0]]), feature_names=("a",))
        z, _ = standardize(d)
        assert abs(z.x.mean()) < 1e-9
        assert abs(z.x.std() - 1.0) < 1e-9

    def test_constant_column_divisor_one(self):
        d = Dataset(x=np.array([[5.0, 1.0], [5.0, 2.0], [5.0, 3.0]]),
                    feature_names=("c", "v"))
        z, params = standardize(d)
        assert params.std[0] == 1.0
        assert np.allclose(z.x[:, 0], 0.0)

    def test_params_reproduce_bitwise(self):
        d = Dataset(x=make_rng(0).standard_normal((10, 3)),
                    feature_names=("a", "b", "c"))
        z, params = standardize(d)
        again = params.apply(d)
        assert np.array_equal(z.x, again.x)

    def test_needs_two_rows(self):
        d = Dataset(x=np.ones((1, 2)), feature_names=("a", "b"))
        with pytest.raises(ValueError):
            standardize(d)


class TestSplit:
    def test_eight_two(self):
        d = Dataset(x=make_rng(1).standard_normal((10, 2)),
                    feature_names=("a", "b"))
        tr, te = split(d, 0.2, seed=0)
        assert tr.n_samples == 8 and te.n_samples == 2

    def test_same_seed_identical(self):
        d = Dataset(x=make_rng(2).standard_normal((30, 2)),
                    feature_names=("a", "b"))
        a = split(d, 0.25, seed=7)
        b = split(d, 0.25, seed=7)
        assert np.array_equal(a[0].x, b[0].x)
        assert np.array_equal(a[1].x, b[1].x)

    def test_stratified_every_class_in_both(self):
        y = np.repeat(np.arange(6), 10)
        d = Dataset(x=make_rng(3).standard_normal((60, 2)),
                    feature_names=("a", "b"), y=y)
        tr, te = split(d, 0.2, seed=1)
        assert set(tr.y) == set(range(6))
        assert set(te.y) == set(range(6))

    def test_disjoint_and_exhaustive(self):
        # unique feature values identify rows
        x = np.arange(40, dtype=float).reshape(20, 2)
        d = Dataset(x=x, feature_names=("a", "b"),
                    y=np.tile([0, 1], 10).astype(np.int64))
        for seed in range(5):
            tr, te = split(d, 0.3, seed=seed)
            ids = np.concatenate([tr.x[:, 0], te.x[:, 0]])
            assert sorted(ids) == sorted(x[:, 0])

    def test_fraction_out_of_range(self):
        d = Dataset(x=np.ones((4, 1)), feature_names=("a",))
        with pytest.raises(ValueError):
            split(d, 1.5, seed=0)

    def test_tiny_class_rejected(self):
        d = Dataset(x=np.ones((3, 1)), feature_names=("a",),
                    y=np.array([0, 0, 1]))
        with pytest.raises(ValueError, match="fewer than 2"):
            split(d, 0.5, seed=0)


def fit_least_squares_classifier(tr, te):
    """Independent linear oracle: one-vs-rest least squares on a bias-padded
    design, argmax prediction."""
    xtr = np.hstack([tr.x, np.ones((tr.n_samples, 1))])
    xte = np.hstack([te.x, np.ones((te.n_samples, 1))])
    k = int(tr.y.max()) + 1
    onehot = np.eye(k)[tr.y]
    coef, *_ = np.linalg.lstsq(xtr, onehot, rcond=None)
    pred = (xte @ coef).argmax(axis=1)
    return float((pred == te.y).mean())


def mutual_information(col, labels, bins=8):
    edges = np.quantile(col, np.linspace(0, 1, bins + 1))
    binned = np.clip(np.searchsorted(edges, col, side="right") - 1, 0, bins - 1)
    mi = 0.0
    n = len(col)
    for b in range(bins):
        for c in np.unique(labels):
            pxy = np.mean((binned == b) & (labels == c))
            if pxy == 0:
                continue
            px = np.mean(binned == b)
            py = np.mean(labels == c)
            mi += pxy * np.log(pxy / (px * py))
    return mi


class TestMakeClassification:
    def test_shape_and_truth(self):
        d, truth = make_classification(
            SyntheticSpec(1000, 100, 10, 6, 1.0, seed=0))
        assert d.x.shape == (1000, 100)
        assert len(truth) == 10
        assert len(set(truth.tolist())) == 10

    def test_high_separation_linearly_classifiable(self):
        d, _ = make_classification(SyntheticSpec(400, 10, 5, 2, 5.0, seed=1))
        tr, te = split(d, 0.25, seed=1)
        assert fit_least_squares_classifier(tr, te) >= 0.99

    def test_noise_columns_independent_of_labels(self):
        d, truth = make_classification(
            SyntheticSpec(500, 20, 5, 4, 1.0, seed=2))
        noise = np.setdiff1d(np.arange(20), truth)
        rng = make_rng(11)
        for col in noise[:3]:
            observed = mutual_information(d.x[:, col], d.y)
            null = []
            for _ in range(1000):
                null.append(mutual_information(
                    d.x[:, col], rng.permutation(d.y)))
            p = np.mean(np.asarray(null) >= observed)
            assert p > 0.01  # indistinguishable from label-independent

    def test_bitwise_reproducible(self):
        a, ta = make_classification(SyntheticSpec(50, 8, 3, 2, 0.7, seed=5))
        b, tb = make_classification(SyntheticSpec(50, 8, 3, 2, 0.7, seed=5))
        assert np.array_equal(a.x, b.x)
        assert np.array_equal(a.y, b.y)
        assert np.array_equal(ta, tb)

    def test_centroid_distance_grows_with_separation(self):
        for seed in range(3):
            dists = []
            for sep in (0.4, 1.3):
                d, truth = make_classification(
                    SyntheticSpec(600, 12, 4, 3, sep, seed=seed))
                cents = np.array([d.x[d.y == c][:, truth].mean(axis=0)
                                  for c in range(3)])
                dists.append(np.linalg.norm(cents[0] - cents[1]))
            assert dists[1] > dists[0]

    def test_too_many_classes_for_vertices(self):
        with pytest.raises(ValueError, match="vertices"):
            make_classification(SyntheticSpec(100, 10, 2, 5, 1.0, seed=0))

    def test_invalid_spec(self):
        with pytest.raises(ValueError):
            SyntheticSpec(100, 5, 8, 2, 1.0, seed=0)
        with pytest.raises(ValueError):
            SyntheticSpec(100, 5, 3, 2, -1.0, seed=0)
