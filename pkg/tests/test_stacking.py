from __future__ import annotations

import numpy as np
import pytest
from sklearn.exceptions import NotFittedError

from conftest import complementary_dataset, separating_rule
from normbridge.metrics import micro_prf
from normbridge.stacking import (
    StackingEnsemble,
    StackingModel,
    TrainConfig,
    cross_entropy_loss_and_grad,
    load_model,
    one_hot,
    predict,
    save_model,
    softmax,
    stack_features,
    train_stacker,
)


def test_one_hot_basics() -> None:
    assert one_hot(0, 8).tolist() == [1, 0, 0, 0, 0, 0, 0, 0]
    assert one_hot(7, 8).tolist() == [0, 0, 0, 0, 0, 0, 0, 1]
    with pytest.raises(ValueError):
        one_hot(8, 8)
    with pytest.raises(ValueError):
        one_hot(-1, 8)


def test_stack_features_category_task() -> None:
    probs = [0.1, 0.2, 0.05, 0.05, 0.1, 0.1, 0.2, 0.2]
    stacked = stack_features(one_hot(3, 8), probs)
    assert stacked.shape == (16,)
    assert stacked[:8].tolist() == one_hot(3, 8).tolist()
    assert stacked[8:].tolist() == pytest.approx(probs)


def test_stack_features_violation_task() -> None:
    assert stack_features(one_hot(1, 2), [0.3, 0.7]).shape == (4,)


def test_stack_features_rejects_mismatch_and_bad_blocks() -> None:
    with pytest.raises(ValueError):
        stack_features(one_hot(0, 8), [0.5, 0.5])
    with pytest.raises(ValueError):
        stack_features([0.5, 0.5], [0.5, 0.5])
    with pytest.raises(ValueError):
        stack_features(one_hot(0, 2), [0.9, 0.2])


def test_predict_zero_model_uniform_and_tiebreak() -> None:
    model = StackingModel(weights=np.zeros((4, 8)), bias=np.zeros(4))
    label, dist = predict(model, stack_features(one_hot(2, 4), [0.25, 0.25, 0.25, 0.25]))
    assert label == 0  # lowest index wins the four-way tie
    assert dist == pytest.approx(np.full(4, 0.25))


def test_predict_copy_a_weights_follow_discrete_base() -> None:
    k = 4
    weights = np.zeros((k, 2 * k))
    weights[:, :k] = 20.0 * np.eye(k)  # large positive identity on the one-hot block
    model = StackingModel(weights=weights, bias=np.zeros(k))
    for cls in range(k):
        feature = stack_features(one_hot(cls, k), np.full(k, 1.0 / k))
        label, dist = predict(model, feature)
        assert label == cls
        assert dist.sum() == pytest.approx(1.0, abs=1e-9)


def test_predict_distribution_normalized() -> None:
    rng = np.random.default_rng(1)
    model = StackingModel(weights=rng.normal(size=(3, 6)), bias=rng.normal(size=3))
    _, dist = predict(model, rng.normal(size=6))
    assert dist.sum() == pytest.approx(1.0, abs=1e-9)
    assert (dist >= 0).all()


def test_softmax_shift_invariance() -> None:
    rng = np.random.default_rng(5)
    model = StackingModel(weights=rng.normal(size=(3, 6)), bias=rng.normal(size=3))
    shifted = StackingModel(weights=model.weights, bias=model.bias + 17.3)
    f = rng.normal(size=6)
    _, base = predict(model, f)
    _, moved = predict(shifted, f)
    assert np.abs(base - moved).max() < 1e-12


def test_gradient_matches_central_finite_differences() -> None:
    rng = np.random.default_rng(42)
    eps = 1e-6
    for _ in range(20):
        k = int(rng.integers(2, 4))
        n = int(rng.integers(3, 8))
        x = rng.normal(size=(n, 2 * k))
        y = rng.integers(0, k, size=n)
        w = rng.normal(scale=0.5, size=(k, 2 * k))
        b = rng.normal(scale=0.5, size=k)
        l2 = 1e-3
        _, grad_w, grad_b = cross_entropy_loss_and_grad(w, b, x, y, l2)

        def loss_at(w_, b_) -> float:
            return cross_entropy_loss_and_grad(w_, b_, x, y, l2)[0]

        for idx in np.ndindex(*w.shape):
            bump = np.zeros_like(w)
            bump[idx] = eps
            numeric = (loss_at(w + bump, b) - loss_at(w - bump, b)) / (2 * eps)
            denom = max(1.0, abs(numeric) + abs(grad_w[idx]))
            assert abs(numeric - grad_w[idx]) / denom < 1e-5
        for i in range(k):
            bump = np.zeros_like(b)
            bump[i] = eps
            numeric = (loss_at(w, b + bump) - loss_at(w, b - bump)) / (2 * eps)
            denom = max(1.0, abs(numeric) + abs(grad_b[i]))
            assert abs(numeric - grad_b[i]) / denom < 1e-5


def test_training_loss_monotone_at_small_lr() -> None:
    features, labels, _, _ = complementary_dataset(seed=11, n=120)
    rng = np.random.default_rng(0)
    w = rng.uniform(-0.01, 0.01, size=(2, 4))
    b = np.zeros(2)
    losses = []
    for _ in range(200):
        loss, gw, gb = cross_entropy_loss_and_grad(w, b, features, labels, 1e-3)
        losses.append(loss)
        w = w - 0.01 * gw
        b = b - 0.01 * gb
    assert all(a >= b_ for a, b_ in zip(losses, losses[1:]))


def test_train_reaches_perfect_accuracy_when_base_a_is_perfect() -> None:
    # Labels equal the one-hot block's argmax, so the copy-A weight matrix is
    # a feasible separator; verify that before asking training to find one.
    rng = np.random.default_rng(3)
    k = 4
    n = 80
    labels = rng.integers(0, k, size=n)
    features = np.zeros((n, 2 * k))
    for i, y in enumerate(labels):
        probs = rng.dirichlet(np.ones(k))
        features[i] = np.concatenate([one_hot(int(y), k), probs])
    copy_a = np.zeros((k, 2 * k))
    copy_a[:, :k] = 30.0 * np.eye(k)
    feasible = StackingModel(weights=copy_a, bias=np.zeros(k))
    assert all(predict(feasible, f)[0] == y for f, y in zip(features, labels))

    model = train_stacker(features, labels, TrainConfig(seed=0))
    preds = [predict(model, f)[0] for f in features]
    assert micro_prf(preds, list(labels), k).f1_micro == 1.0


def test_train_degenerate_single_class_flagged() -> None:
    features = np.tile(np.concatenate([one_hot(1, 2), [0.2, 0.8]]), (10, 1))
    labels = np.ones(10, dtype=int)
    model = train_stacker(features, labels)
    assert model.degenerate
    rng = np.random.default_rng(0)
    for _ in range(5):
        probe = stack_features(one_hot(int(rng.integers(0, 2)), 2), [0.5, 0.5])
        assert predict(model, probe)[0] == 1


def test_train_is_deterministic_given_seed() -> None:
    features, labels, _, _ = complementary_dataset(seed=2, n=100)
    a = train_stacker(features, labels, TrainConfig(seed=9))
    b = train_stacker(features, labels, TrainConfig(seed=9))
    assert np.array_equal(a.weights, b.weights)
    assert np.array_equal(a.bias, b.bias)


def test_train_rejects_bad_shapes() -> None:
    with pytest.raises(ValueError):
        train_stacker(np.zeros((3, 5)), [0, 1, 0])
    with pytest.raises(ValueError):
        train_stacker(np.zeros((3, 4)), [0, 1])
    with pytest.raises(ValueError):
        train_stacker(np.zeros((2, 4)), [0, 3])


def test_stacker_beats_both_bases_on_complementary_errors() -> None:
    """Errors of the two bases are disjoint and feature-identifiable, so a
    linear rule can route around both; the trained model must find one."""
    for seed in (0, 1, 2):
        features, labels, a_preds, b_preds = complementary_dataset(seed=seed, n=400)
        assert (separating_rule(features) == labels).all()  # separability oracle

        rng = np.random.default_rng(seed)
        order = rng.permutation(len(labels))
        split = int(0.6 * len(labels))
        train_idx, test_idx = order[:split], order[split:]
        model = train_stacker(features[train_idx], labels[train_idx], TrainConfig(seed=seed))
        stacker_preds = [predict(model, f)[0] for f in features[test_idx]]

        f1_stack = micro_prf(stacker_preds, list(labels[test_idx]), 2).f1_micro
        f1_a = micro_prf(list(a_preds[test_idx]), list(labels[test_idx]), 2).f1_micro
        f1_b = micro_prf(list(b_preds[test_idx]), list(labels[test_idx]), 2).f1_micro
        assert f1_stack >= f1_a + 0.05
        assert f1_stack >= f1_b + 0.05


def test_model_text_roundtrip_exact(tmp_path) -> None:
    features, labels, _, _ = complementary_dataset(seed=4, n=60)
    model = train_stacker(features, labels, TrainConfig(seed=4))
    path = tmp_path / "model.txt"
    save_model(model, path)
    loaded = load_model(path)
    assert loaded.k == model.k
    assert np.array_equal(loaded.weights, model.weights)
    assert np.array_equal(loaded.bias, model.bias)
    first = path.read_text()
    save_model(loaded, path)
    assert path.read_text() == first


def test_load_model_rejects_malformed(tmp_path) -> None:
    path = tmp_path / "model.txt"
    path.write_text("2\n1.0 2.0 3.0 4.0\n")
    with pytest.raises(ValueError):
        load_model(path)


def test_estimator_fit_predict_interface() -> None:
    features, labels, _, _ = complementary_dataset(seed=6, n=200)
    est = StackingEnsemble(seed=6)
    assert est.get_params()["seed"] == 6
    with pytest.raises(NotFittedError):
        est.predict(features[:2])
    est.fit(features, labels)
    proba = est.predict_proba(features[:5])
    assert proba.shape == (5, 2)
    assert proba.sum(axis=1) == pytest.approx(np.ones(5), abs=1e-9)
    preds = est.predict(features)
    assert (preds == labels).mean() > 0.95
    assert est.score(features, labels) > 0.95


def test_estimator_set_params_roundtrip() -> None:
    est = StackingEnsemble().set_params(epochs=10, learning_rate=0.5)
    assert est.epochs == 10
    assert est.learning_rate == 0.5
