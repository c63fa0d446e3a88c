import numpy as np
import pytest

from sparsetab.data import Dataset, SyntheticSpec, make_classification, split
from sparsetab.network import standard_spec
from sparsetab.numerics import make_rng, spawn_seeds
from sparsetab.training import TrainConfig, train, evaluate
from sparsetab.transfer import (
    FrozenTrunk,
    align_features,
    extract_features,
    fine_tune,
    linear_probe,
    write_alignment_report,
)


def source_model(seed=0, n=300, feats=20, classes=4):
    d, _ = make_classification(
        SyntheticSpec(n, feats, 6, classes, 2.0, seed=seed))
    spec = standard_spec(feats, classes, "softmax", hidden_units=16,
                         dense_units=8)
    params, _ = train(spec, d, TrainConfig(epochs=60, batch_size=32,
                                           seed=seed))
    return d, spec, params


class TestExtractFeatures:
    def test_cut_width_matches_representation_layer(self):
        d, spec, params = source_model()
        trunk = FrozenTrunk.from_model(spec, params, drop_last=2)
        feats = extract_features(trunk, d.x)
        assert feats.shape == (d.n_samples, 8)

    def test_reference_architecture_gives_64(self):
        d, _ = make_classification(SyntheticSpec(40, 30, 5, 3, 2.0, seed=1))
        spec = standard_spec(30, 3, "softmax")
        from sparsetab.network import init_params

        trunk = FrozenTrunk.from_model(spec, init_params(spec, 0),
                                       drop_last=2)
        assert trunk.output_dim == 64
        assert extract_features(trunk, d.x).shape == (40, 64)

    def test_bitwise_repeatable(self):
        d, spec, params = source_model(2)
        trunk = FrozenTrunk.from_model(spec, params)
        a = extract_features(trunk, d.x)
        b = extract_features(trunk, d.x)
        assert np.array_equal(a, b)

    def test_cut_zero_is_identity(self):
        d, spec, params = source_model(3)
        trunk = FrozenTrunk(spec=spec, params=params, cut=0)
        assert np.array_equal(extract_features(trunk, d.x), d.x)

    def test_commutes_with_row_slicing(self):
        d, spec, params = source_model(4)
        trunk = FrozenTrunk.from_model(spec, params)
        rows = make_rng(5).choice(d.n_samples, size=17, replace=False)
        assert np.array_equal(extract_features(trunk, d.x)[rows],
                              extract_features(trunk, d.x[rows]))

    def test_dimension_mismatch(self):
        _, spec, params = source_model(5)
        trunk = FrozenTrunk.from_model(spec, params)
        with pytest.raises(ValueError):
            extract_features(trunk, np.ones((3, 7)))


class TestFineTune:
    def test_freeze_law_digest_unchanged(self):
        d, spec, params = source_model(6)
        trunk = FrozenTrunk.from_model(spec, params)
        before = trunk.digest()
        binary = d.with_labels((d.y >= 2).astype(np.int64))
        fine_tune(trunk, binary, TrainConfig(epochs=20, batch_size=32,
                                             seed=1))
        assert trunk.digest() == before

    def test_fine_tune_on_source_task_within_tolerance(self):
        d, spec, params = source_model(7, n=400)
        binary = d.with_labels((d.y >= 2).astype(np.int64))
        # source-style model trained directly on the binary task
        direct_spec = standard_spec(20, 1, "sigmoid", hidden_units=16,
                                    dense_units=8)
        trunk = FrozenTrunk.from_model(spec, params)
        direct_accs, tuned_accs = [], []
        for s in spawn_seeds(8, 10):
            tr, te = split(binary, 0.25, s)
            dparams, _ = train(direct_spec, tr,
                               TrainConfig(epochs=60, batch_size=32, seed=s))
            direct_accs.append(evaluate(direct_spec, dparams, te))
            model, _ = fine_tune(trunk, tr, TrainConfig(epochs=60,
                                                        batch_size=32,
                                                        seed=s))
            tuned_accs.append(model.evaluate(te))
        assert np.mean(tuned_accs) >= np.mean(direct_accs) - 0.05

    def test_head_width_checked(self):
        d, spec, params = source_model(9)
        trunk = FrozenTrunk.from_model(spec, params)
        survival_like = Dataset(x=d.x, feature_names=d.feature_names)
        with pytest.raises(ValueError):
            fine_tune(trunk, survival_like, TrainConfig(epochs=1))


class TestLinearProbe:
    def test_separable_features(self):
        d, _ = make_classification(SyntheticSpec(300, 8, 4, 2, 5.0, seed=10))
        _, _, metrics = linear_probe(d.x, d.y, TrainConfig(epochs=150,
                                                           batch_size=32,
                                                           seed=0))
        assert metrics["test_accuracy"] >= 0.99

    def test_shuffled_labels_chance_level(self):
        d, _ = make_classification(SyntheticSpec(400, 8, 4, 2, 5.0, seed=11))
        accs = []
        for s in spawn_seeds(12, 10):
            y = make_rng(s).permutation(d.y)
            _, _, m = linear_probe(d.x, y, TrainConfig(epochs=40,
                                                       batch_size=64,
                                                       seed=s))
            accs.append(m["test_accuracy"])
        assert abs(np.mean(accs) - 0.5) < 0.05

    def test_deterministic(self):
        d, _ = make_classification(SyntheticSpec(120, 6, 3, 2, 2.0, seed=13))
        cfg = TrainConfig(epochs=20, batch_size=32, seed=3)
        a = linear_probe(d.x, d.y, cfg)[2]
        b = linear_probe(d.x, d.y, cfg)[2]
        assert a == b

    def test_single_class_rejected(self):
        with pytest.raises(ValueError):
            linear_probe(np.ones((10, 2)), np.zeros(10), TrainConfig())


class TestAlignFeatures:
    def test_match_impute_drop(self):
        target = Dataset(
            x=np.array([[1.0, 2.0, 3.0], [4.0, 5.0, 6.0]]),
            feature_names=("b", "zz", "a"),
        )
        aligned, report = align_features(("a", "b", "c"), target)
        assert aligned.feature_names == ("a", "b", "c")
        assert aligned.x.tolist() == [[3.0, 1.0, 0.0], [6.0, 4.0, 0.0]]
        status = dict(report)
        assert status["a"] == "matched"
        assert status["b"] == "matched"
        assert status["c"] == "imputed"
        assert status["zz"] == "dropped"

    def test_report_csv(self, tmp_path):
        target = Dataset(x=np.ones((2, 1)), feature_names=("x",))
        _, report = align_features(("x", "y"), target)
        write_alignment_report(report, tmp_path / "a.csv")
        text = (tmp_path / "a.csv").read_text()
        assert "feature,status" in text
        assert "y,imputed" in text
