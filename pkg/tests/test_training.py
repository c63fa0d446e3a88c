import numpy as np
import pytest

from sparsetab.data import SyntheticSpec, make_classification, split, standardize
from sparsetab.maskgen import MaskMatrix
from sparsetab.network import (
    DivergenceError,
    NetworkSpec,
    dense_layer,
    forward,
    init_params,
    sparse_layer,
    standard_spec,
)
from sparsetab.numerics import make_rng
from sparsetab.training import (
    AdamState,
    TrainConfig,
    accuracy,
    adam_step,
    binary_cross_entropy,
    categorical_cross_entropy,
    concordance_index,
    cox_breslow_loss,
    evaluate,
    train,
)


class TestCategoricalCrossEntropy:
    def test_perfect_prediction_zero_loss(self):
        probs = np.eye(3)[[0, 1, 2]]
        loss, _ = categorical_cross_entropy(probs, np.array([0, 1, 2]))
        assert loss == pytest.approx(0.0, abs=1e-10)

    def test_uniform_six_classes(self):
        probs = np.full((4, 6), 1.0 / 6)
        loss, _ = categorical_cross_entropy(probs, np.array([0, 1, 2, 3]))
        assert loss == pytest.approx(np.log(6.0), abs=1e-12)

    def test_gradient_matches_finite_difference(self):
        rng = make_rng(0)
        logits = rng.standard_normal((4, 3))
        y = rng.integers(0, 3, 4)
        from sparsetab.numerics import softmax_rows

        def loss_at(l):
            return categorical_cross_entropy(softmax_rows(l), y)[0]

        _, grad = categorical_cross_entropy(softmax_rows(logits), y)
        h = 1e-6
        for i in range(4):
            for j in range(3):
                lp = logits.copy(); lp[i, j] += h
                lm = logits.copy(); lm[i, j] -= h
                fd = (loss_at(lp) - loss_at(lm)) / (2 * h)
                assert abs(fd - grad[i, j]) < 1e-6


class TestBinaryCrossEntropy:
    def test_exact_prediction_zero(self):
        loss, _ = binary_cross_entropy(np.array([1.0, 0.0]), np.array([1, 0]))
        assert loss == pytest.approx(0.0, abs=1e-9)

    def test_half_everywhere_ln2(self):
        loss, _ = binary_cross_entropy(np.full(5, 0.5), np.ones(5))
        assert loss == pytest.approx(np.log(2.0), abs=1e-12)

    def test_gradient_matches_finite_difference(self):
        rng = make_rng(1)
        logits = rng.standard_normal(6)
        y = rng.integers(0, 2, 6).astype(float)
        from sparsetab.numerics import sigmoid

        def loss_at(l):
            return binary_cross_entropy(sigmoid(l), y)[0]

        _, grad = binary_cross_entropy(sigmoid(logits), y)
        h = 1e-6
        for i in range(6):
            lp = logits.copy(); lp[i] += h
            lm = logits.copy(); lm[i] -= h
            fd = (loss_at(lp) - loss_at(lm)) / (2 * h)
            assert abs(fd - grad[i]) < 1e-6


def breslow_oracle(eta, t, d):
    """Direct risk-set enumeration, quadratic and obviously correct."""
    loss = 0.0
    for i in range(len(eta)):
        if d[i] == 1:
            risk = [j for j in range(len(eta)) if t[j] >= t[i]]
            loss -= eta[i] - np.log(np.sum(np.exp(np.asarray(eta)[risk])))
    return loss


class TestCoxBreslowLoss:
    def test_two_subjects_one_event_ln2(self):
        loss, _ = cox_breslow_loss([0.0, 0.0], [1.0, 2.0], [1, 0])
        assert loss == pytest.approx(np.log(2.0), abs=1e-12)

    def test_dominant_event_risk_loss_to_zero(self):
        loss, _ = cox_breslow_loss([60.0, 0.0, 0.0], [1.0, 2.0, 3.0],
                                   [1, 0, 0])
        assert loss == pytest.approx(0.0, abs=1e-12)

    def test_matches_enumeration_oracle_with_ties(self):
        rng = make_rng(2)
        for _ in range(50):
            n = int(rng.integers(2, 11))
            t = rng.integers(1, 5, n).astype(float)  # heavy ties
            d = rng.integers(0, 2, n)
            if d.sum() == 0:
                d[int(rng.integers(n))] = 1
            eta = rng.standard_normal(n) * 2
            loss, grad = cox_breslow_loss(eta, t, d)
            assert abs(loss - breslow_oracle(eta, t, d)) < 1e-10
            h = 1e-6
            for k in range(n):
                ep = eta.copy(); ep[k] += h
                em = eta.copy(); em[k] -= h
                fd = (cox_breslow_loss(ep, t, d)[0]
                      - cox_breslow_loss(em, t, d)[0]) / (2 * h)
                assert abs(fd - grad[k]) < 1e-6

    def test_shift_invariance(self):
        rng = make_rng(3)
        eta = rng.standard_normal(9)
        t = rng.random(9) + 0.1
        d = np.array([1, 0, 1, 1, 0, 0, 1, 0, 1])
        a, _ = cox_breslow_loss(eta, t, d)
        b, _ = cox_breslow_loss(eta + 57.3, t, d)
        assert abs(a - b) < 1e-9

    def test_no_events_rejected(self):
        with pytest.raises(ValueError, match="no events"):
            cox_breslow_loss([0.0, 1.0], [1.0, 2.0], [0, 0])


def scalar_spec():
    return NetworkSpec(1, (dense_layer(1),), head="linear")


class TestAdamStep:
    def test_zero_gradient_leaves_params(self):
        spec = standard_spec(4, 2, "softmax", hidden_units=3, dense_units=2)
        params = init_params(spec, 0)
        zero = [{k: np.zeros_like(v) for k, v in l.items()}
                for l in params.layers]
        new, _ = adam_step(spec, params, zero, AdamState.zeros(params),
                           TrainConfig())
        for a, b in zip(params.layers, new.layers):
            for k in a:
                assert np.array_equal(a[k], b[k])

    def test_first_step_magnitude(self):
        spec = scalar_spec()
        params = init_params(spec, 1)
        grads = [{"w": np.ones((1, 1)), "b": np.zeros(1)}]
        cfg = TrainConfig(learning_rate=0.1)
        new, state = adam_step(spec, params, grads,
                               AdamState.zeros(params), cfg)
        step = params.layers[0]["w"][0, 0] - new.layers[0]["w"][0, 0]
        assert step == pytest.approx(0.1, rel=1e-6)
        assert state.t == 1

    def test_masked_entries_stay_zero_after_100_steps(self):
        a = np.array([[1.0, 0.0], [0.0, 1.0], [1.0, 1.0]])
        mask = MaskMatrix(a=a, provenance="grouping")
        spec = NetworkSpec(3, (sparse_layer(mask, "tanh"), dense_layer(1)),
                           head="sigmoid")
        params = init_params(spec, 2)
        rng = make_rng(3)
        state = AdamState.zeros(params)
        cfg = TrainConfig()
        for _ in range(100):
            grads = [{k: rng.standard_normal(v.shape)
                      for k, v in l.items()} for l in params.layers]
            params, state = adam_step(spec, params, grads, state, cfg)
        assert np.all(params.layers[0]["w"][a == 0.0] == 0.0)


def separable_binary(seed=0, n=200):
    d, _ = make_classification(SyntheticSpec(n, 6, 3, 2, 4.0, seed=seed))
    return d


class TestTrain:
    def test_linearly_separable_reaches_high_accuracy(self):
        d = separable_binary()
        tr, te = split(d, 0.2, 0)
        # least-squares oracle confirms separability first
        from tests.test_data import fit_least_squares_classifier

        assert fit_least_squares_classifier(tr, te) >= 0.99
        spec = standard_spec(6, 1, "sigmoid", hidden_units=8, dense_units=4,
                             dropout=0.0)
        params, _ = train(spec, tr, TrainConfig(epochs=200, batch_size=32))
        assert evaluate(spec, params, tr) >= 0.99

    def test_same_seed_bitwise_identical(self):
        d = separable_binary(1)
        spec = standard_spec(6, 1, "sigmoid", hidden_units=5, dense_units=4)
        cfg = TrainConfig(epochs=5, batch_size=32, seed=9)
        a, _ = train(spec, d, cfg)
        b, _ = train(spec, d, cfg)
        for la, lb in zip(a.layers, b.layers):
            for k in la:
                assert np.array_equal(la[k], lb[k])

    def test_loss_decreases_first_to_last(self):
        d = separable_binary(2)
        spec = standard_spec(6, 1, "sigmoid", hidden_units=5, dense_units=4)
        _, hist = train(d and spec, d, TrainConfig(epochs=30, batch_size=32))
        assert hist.loss[-1] < hist.loss[0]
        assert len(hist.loss) == 30

    def test_history_records_validation(self):
        d = separable_binary(3)
        tr, te = split(d, 0.25, 1)
        spec = standard_spec(6, 1, "sigmoid", hidden_units=5, dense_units=4)
        _, hist = train(spec, tr, TrainConfig(epochs=4, batch_size=32),
                        eval_data=te)
        assert len(hist.val_metric) == 4
        assert hist.metric_name == "accuracy"

    def test_divergence_is_reported(self):
        d = separable_binary(4)
        spec = standard_spec(6, 1, "sigmoid", hidden_units=5, dense_units=4)
        with np.errstate(all="ignore"), pytest.raises(DivergenceError):
            train(spec, d, TrainConfig(epochs=50, batch_size=32,
                                       learning_rate=1e308))

    def test_label_head_mismatch(self):
        d = separable_binary(5)
        spec = standard_spec(6, 1, "linear", hidden_units=5, dense_units=4)
        with pytest.raises(ValueError):
            train(spec, d, TrainConfig(epochs=1))

    def test_more_epochs_do_not_hurt_hard_task(self):
        # separation 0.1, mean over 10 seeds, short vs long training
        acc_short, acc_long = [], []
        for s in range(10):
            d, _ = make_classification(SyntheticSpec(400, 30, 5, 4, 0.1,
                                                     seed=s))
            d, _ = standardize(d)
            tr, te = split(d, 0.2, s)
            spec = standard_spec(30, 4, "softmax", hidden_units=20,
                                 dense_units=16)
            for epochs, bucket in ((60, acc_short), (150, acc_long)):
                params, _ = train(spec, tr, TrainConfig(
                    epochs=epochs, batch_size=32, seed=s))
                bucket.append(evaluate(spec, params, te))
        assert np.mean(acc_long) >= np.mean(acc_short)

    def test_l1_sparsification_monotone_in_lambda(self):
        lams = (1e-5, 1e-4, 1e-3)
        counts = {l: [] for l in lams}
        for s in range(10):
            d, _ = make_classification(SyntheticSpec(300, 20, 5, 3, 1.5,
                                                     seed=s))
            d, _ = standardize(d)
            tr, _ = split(d, 0.2, s)
            spec = standard_spec(20, 3, "softmax", hidden_units=16,
                                 dense_units=8)
            for lam in lams:
                params, _ = train(spec, tr, TrainConfig(
                    epochs=80, batch_size=32, seed=s, l1_attention=lam))
                w = params.layers[0]["w"]
                counts[lam].append(int((np.abs(w) < 1e-6).sum()))
        means = [np.mean(counts[l]) for l in lams]
        assert all(means[i] <= means[i + 1] for i in range(len(means) - 1))


class TestSurvivalTraining:
    def test_full_batch_survival_runs(self):
        from tests.conftest import make_survival

        ds, _ = make_survival(120, 6, seed=0)
        spec = standard_spec(6, 1, "linear", hidden_units=8, dense_units=4,
                             dropout=0.0)
        params, hist = train(spec, ds, TrainConfig(epochs=50, seed=0))
        assert len(hist.loss) == 50
        assert evaluate(spec, params, ds) > 0.5

    def test_cox_shift_invariance_through_network(self):
        from tests.conftest import make_survival

        ds, _ = make_survival(50, 4, seed=1)
        out = make_rng(0).standard_normal(50)
        a, _ = cox_breslow_loss(out, ds.time, ds.event)
        b, _ = cox_breslow_loss(out + 11.0, ds.time, ds.event)
        assert abs(a - b) < 1e-9


class TestMetrics:
    def test_accuracy_multiclass(self):
        preds = np.array([[0.9, 0.1], [0.2, 0.8], [0.6, 0.4]])
        assert accuracy(preds, [0, 1, 1]) == pytest.approx(2 / 3)

    def test_accuracy_binary_threshold(self):
        assert accuracy(np.array([0.6, 0.4]), [1, 0]) == 1.0

    def test_cindex_perfect_anti_ordering(self):
        times = np.array([1.0, 2.0, 3.0, 4.0])
        risks = np.array([4.0, 3.0, 2.0, 1.0])
        assert concordance_index(risks, times, np.ones(4)) == 1.0

    def test_cindex_all_tied_risks(self):
        times = np.array([1.0, 2.0, 3.0])
        assert concordance_index(np.ones(3), times, np.ones(3)) == 0.5

    def test_cindex_matches_pair_enumeration(self):
        risks = np.array([2.0, 1.5, 3.0, 0.5, 2.0, 1.0])
        times = np.array([1.0, 3.0, 2.0, 5.0, 4.0, 2.5])
        events = np.array([1, 1, 0, 0, 1, 1])
        conc = tied = comp = 0
        for i in range(6):
            for j in range(6):
                if times[i] < times[j] and events[i] == 1:
                    comp += 1
                    if risks[i] > risks[j]:
                        conc += 1
                    elif risks[i] == risks[j]:
                        tied += 1
        expected = (conc + 0.5 * tied) / comp
        assert concordance_index(risks, times, events) == expected

    def test_cindex_no_comparable_pairs(self):
        with pytest.raises(ValueError, match="comparable"):
            concordance_index([1.0, 2.0], [1.0, 1.0], [1, 1])
