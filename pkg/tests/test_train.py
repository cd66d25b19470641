import math

import numpy as np
import pytest

from attnbof.data import LabeledSequenceSet, gen_noisy_timestamps, gen_order_task
from attnbof.errors import ConfigError, TrainingDiverged
from attnbof.model import Model, ModelConfig
from attnbof.train import (TrainConfig, accuracy, adam_step, evaluate,
                           fit, holdout_split, init_adam, kfold, macro_f1, train)


def make_cfg(**overrides):
    cfg = TrainConfig(**overrides)
    cfg.validate()
    return cfg


# ---------------------------------------------------------------------------
# Adam


def test_adam_zero_gradient_keeps_parameters():
    params = {"w": np.array([[1.0, -2.0]])}
    state = init_adam(params)
    adam_step(params, {"w": np.zeros((1, 2))}, state, make_cfg())
    assert np.array_equal(params["w"], [[1.0, -2.0]])


def test_adam_first_step_is_signed_unit_step():
    g = np.array([[0.3, -4.0, 1e-3]])
    params = {"w": np.zeros((1, 3))}
    state = init_adam(params)
    cfg = make_cfg(learning_rate=0.01)
    adam_step(params, {"w": g}, state, cfg)
    # bias-corrected first step: -lr * g / (|g| + eps)
    assert np.allclose(params["w"], -0.01 * np.sign(g), rtol=1e-4)


def test_adam_zero_learning_rate_is_identity():
    params = {"w": np.array([[0.5], [1.5]])}
    state = init_adam(params)
    cfg = TrainConfig(learning_rate=0.0)  # bypasses validate on purpose
    adam_step(params, {"w": np.ones((2, 1))}, state, cfg)
    assert np.array_equal(params["w"], [[0.5], [1.5]])


def test_adam_three_step_trace_matches_hand_loop():
    # minimize 0.5 * theta^2; gradient is theta
    cfg = make_cfg(learning_rate=0.1, adam_beta1=0.9, adam_beta2=0.999,
                   adam_eps=1e-8)
    params = {"t": np.array([[2.0]])}
    state = init_adam(params)
    theta = 2.0
    m = v = 0.0
    for step in range(1, 4):
        g = float(params["t"][0, 0])
        adam_step(params, {"t": np.array([[g]])}, state, cfg)

        m = 0.9 * m + 0.1 * theta
        v = 0.999 * v + 0.001 * theta * theta
        m_hat = m / (1.0 - 0.9 ** step)
        v_hat = v / (1.0 - 0.999 ** step)
        theta -= 0.1 * m_hat / (math.sqrt(v_hat) + 1e-8)
        assert math.isclose(params["t"][0, 0], theta, abs_tol=1e-12)


def test_adam_applies_constraint_after_step():
    params = {"w": np.eye(2)}
    state = init_adam(params)
    called = []
    adam_step(params, {"w": np.ones((2, 2))}, state, make_cfg(),
              constrain=lambda: called.append(True))
    assert called == [True]


# ---------------------------------------------------------------------------
# splits


def test_kfold_disjoint_exhaustive_stratified():
    ds = gen_noisy_timestamps(classes=3, feature_dim=4, length=6,
                              signal_fraction=0.5, snr=2.0, count=30, seed=1)
    splits = kfold(ds, folds=5, seed=3)
    assert len(splits) == 5
    sizes = []
    for train_set, val_set in splits:
        assert len(train_set) + len(val_set) == 30
        labels = val_set.labels()
        # stratification: balanced labels in each fold
        assert [int(np.sum(labels == c)) for c in range(3)] == [2, 2, 2]
        sizes.append(len(val_set))
    assert sizes == [6, 6, 6, 6, 6]


def test_kfold_deterministic():
    ds = gen_noisy_timestamps(classes=2, feature_dim=3, length=4,
                              signal_fraction=0.5, snr=1.0, count=20, seed=2)
    a = kfold(ds, folds=4, seed=9)
    b = kfold(ds, folds=4, seed=9)
    for (ta, va), (tb, vb) in zip(a, b):
        assert va.labels().tolist() == vb.labels().tolist()
        assert all(np.array_equal(x, y) for (x, _), (y, _) in zip(va.items, vb.items))


def test_kfold_rejects_more_folds_than_items():
    ds = gen_noisy_timestamps(classes=2, feature_dim=2, length=4,
                              signal_fraction=0.5, snr=1.0, count=4, seed=0)
    with pytest.raises(ValueError, match="exceeds"):
        kfold(ds, folds=5, seed=0)
    with pytest.raises(ConfigError):
        kfold(ds, folds=1, seed=0)


def test_holdout_split_keeps_twin_groups_together():
    ds = gen_order_task(feature_dim=3, length=6, count=40, seed=4)
    train_set, val_set = holdout_split(ds, 0.2, seed=5)
    assert len(val_set) == 8 and len(train_set) == 32
    # twins are adjacent class-0/class-1 items built from the same symbols;
    # a kept group contributes one of each label
    assert int(np.sum(val_set.labels() == 0)) == 4
    for i in range(0, len(val_set), 2):
        a = sorted(map(tuple, val_set.items[i][0].T))
        b = sorted(map(tuple, val_set.items[i + 1][0].T))
        assert a == b


# ---------------------------------------------------------------------------
# metrics


def test_accuracy_hand_value():
    assert math.isclose(accuracy([1, 1, 0], [1, 0, 0]), 2.0 / 3.0)


def test_macro_f1_perfect():
    assert macro_f1([0, 1, 2, 1], [0, 1, 2, 1]) == 1.0


def test_macro_f1_hand_confusion():
    # labels [0,1,1], preds [0,0,1]:
    #   class 0: TP=1 FP=1 FN=0 -> F1 = 2/3
    #   class 1: TP=1 FP=0 FN=1 -> F1 = 2/3
    assert math.isclose(macro_f1([0, 0, 1], [0, 1, 1]), 2.0 / 3.0)


def test_macro_f1_ignores_absent_classes():
    # class 2 appears nowhere and must not drag the mean down
    assert math.isclose(macro_f1([0, 1], [0, 1]), 1.0)


def test_metrics_reject_mismatched_lengths():
    with pytest.raises(ValueError):
        accuracy([1, 2], [1])
    with pytest.raises(ValueError):
        macro_f1([], [])


# ---------------------------------------------------------------------------
# training loop


def separable_toy(count=36, seed=11):
    return gen_noisy_timestamps(classes=3, feature_dim=4, length=6,
                                signal_fraction=1.0, snr=5.0, count=count,
                                seed=seed)


def test_training_learns_separable_toy():
    ds = separable_toy()
    net = Model.build(ModelConfig(feature_dim=4, classes=3, codewords=6, seed=0))
    cfg = make_cfg(epochs=10, batch_size=8, learning_rate=0.01, seed=0)
    trace = fit(net, ds, cfg, seed=0)
    assert len(trace) == cfg.epochs
    assert all(np.isfinite(v) for v in trace)
    acc, f1 = evaluate(net, ds)
    assert acc >= 0.99
    assert f1 >= 0.99


def test_train_runs_are_bitwise_reproducible():
    ds = separable_toy(count=24, seed=21)
    cfg = make_cfg(epochs=3, batch_size=8, learning_rate=0.01, seed=7)
    model_cfg = ModelConfig(feature_dim=4, classes=3, codewords=5,
                            attention="csa", latent_dim=4, seq_len=6,
                            dropout_rate=0.2, seed=7)
    net1, rep1 = train(Model.build(model_cfg), ds, cfg)
    net2, rep2 = train(Model.build(model_cfg), ds, cfg)
    assert rep1.folds[0].loss_trace == rep2.folds[0].loss_trace
    for name in net1.params:
        assert np.array_equal(net1.params[name], net2.params[name])


def test_train_cross_validation_report_shape():
    ds = separable_toy(count=30, seed=31)
    cfg = make_cfg(epochs=2, batch_size=8, learning_rate=0.01, folds=3, seed=1)
    net = Model.build(ModelConfig(feature_dim=4, classes=3, codewords=5, seed=1))
    _, report = train(net, ds, cfg)
    assert len(report.folds) == 3
    assert all(len(f.loss_trace) == 2 for f in report.folds)
    accs = [f.accuracy for f in report.folds]
    assert math.isclose(report.accuracy_mean, float(np.mean(accs)))
    assert math.isclose(report.accuracy_std, float(np.std(accs, ddof=1)))
    # serializations
    as_json = report.to_json()
    assert '"macro_f1"' in as_json
    table = report.to_markdown()
    assert table.count("\n") == 2 + len(report.folds)
    assert "mean + std" in table


def test_train_aborts_on_non_finite_loss():
    items = [(np.full((2, 4), np.nan), 0), (np.zeros((2, 4)), 1)]
    ds = LabeledSequenceSet(items=items, classes=2, feature_dim=2)
    net = Model.build(ModelConfig(feature_dim=2, classes=2, codewords=2, seed=0))
    cfg = make_cfg(epochs=1, batch_size=2)
    with pytest.raises(TrainingDiverged, match="epoch 0"):
        fit(net, ds, cfg, seed=0)


def test_train_config_validation():
    with pytest.raises(ConfigError):
        make_cfg(epochs=0)
    with pytest.raises(ConfigError):
        make_cfg(adam_beta1=1.0)
    with pytest.raises(ConfigError):
        make_cfg(holdout_fraction=0.0)
    with pytest.raises(ConfigError):
        make_cfg(folds=0)
