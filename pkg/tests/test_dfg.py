import json
import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from mindsets.dfg import (
    DfgConfig,
    DfgModel,
    EarlyStopping,
    ablate_dfg,
    batch_loss,
    forward,
    gradients,
    init_model,
    loss,
    predict_proba,
    reshape_to_grid,
    train,
)
from mindsets.errors import DimMismatch, ModelVersionMismatch, SingleClassTrainSet


def rng_model(d=20, n_classes=3, seed=0, hidden=(8,), use_dfg=True, n_filters=3):
    cfg = DfgConfig(n_filters=n_filters, hidden_sizes=hidden, n_classes=n_classes, seed=seed,
                    use_dfg=use_dfg)
    model = init_model(cfg, d)
    r = np.random.default_rng(seed + 100)
    for k, v in model.params.items():
        v += r.normal(0, 0.3, v.shape)  # non-zero biases too
    return model


# ---------------------------------------------------------------- grid / shapes

def test_grid_exact_square():
    g = reshape_to_grid(np.arange(100.0))
    assert g.shape == (10, 10) and g[1, 0] == 10.0


def test_grid_padding():
    g = reshape_to_grid(np.arange(1.0, 91.0))
    assert g.shape == (10, 10)
    assert g.ravel()[:90].tolist() == list(range(1, 91))
    assert (g.ravel()[90:] == 0).all()


def test_grid_single():
    assert reshape_to_grid(np.array([3.0])).shape == (1, 1)


def test_shapes_d100():
    model = init_model(DfgConfig(), 100)
    assert model.grid_side == 10 and model.generated_dim == 350
    assert model.classifier_input_dim == 450
    logits, gen, probs = forward(model, np.ones(100))
    assert logits.shape == (2,) and gen.shape == (350,)


def test_ablated_width():
    model = init_model(ablate_dfg(DfgConfig()), 100)
    assert model.generated_dim == 0 and model.classifier_input_dim == 100
    assert model.params["dense0_w"].shape == (100, 64)
    assert ablate_dfg(DfgConfig()).n_filters == 14


@pytest.mark.parametrize("d", [1, 2, 5, 17, 50])
def test_odd_sizes_pool_ceil(d):
    model = init_model(DfgConfig(), d)
    s = math.ceil(math.sqrt(d))
    assert model.generated_dim == 14 * math.ceil(s / 2) ** 2
    assert forward(model, np.ones(d))[1].shape == (model.generated_dim,)


def test_zero_model_uniform():
    model = init_model(DfgConfig(n_classes=4), 10, zero=True)
    logits, _, probs = forward(model, np.arange(10.0))
    assert (logits == 0).all()
    np.testing.assert_array_equal(probs, np.full(4, 0.25))


@settings(max_examples=30, deadline=None)
@given(st.integers(0, 10**6), st.integers(1, 40))
def test_probabilities_sum_to_one(seed, d):
    model = rng_model(d=d, seed=seed % 1000)
    X = np.random.default_rng(seed).normal(0, 5, (4, d))
    probs = predict_proba(model, X)
    assert np.abs(probs.sum(axis=1) - 1).max() < 1e-12


def test_dim_mismatch():
    model = init_model(DfgConfig(), 10)
    with pytest.raises(DimMismatch):
        forward(model, np.ones(11))
    with pytest.raises(DimMismatch):
        predict_proba(model, np.ones((2, 9)))


def test_predict_proba_matches_forward_and_permutes():
    model = rng_model()
    X = np.random.default_rng(3).normal(size=(6, 20))
    P = predict_proba(model, X)
    np.testing.assert_allclose(P[2], forward(model, X[2])[2], rtol=0, atol=0)
    perm = np.array([5, 3, 0, 1, 4, 2])
    np.testing.assert_allclose(predict_proba(model, X[perm]), P[perm], rtol=0, atol=0)
    same = predict_proba(model, np.repeat(X[:1], 3, axis=0))
    assert (same == same[0]).all()


def test_pool_first_index_tie_break():
    # a 2x2 input of equal values: gradient must flow only through the first cell
    cfg = DfgConfig(n_filters=1, kernel=(1, 1), hidden_sizes=(), n_classes=2)
    model = init_model(cfg, 4, zero=True)
    model.params["conv_w"][:] = 1.0
    model.params["dense0_w"][4, 0] = 1.0  # generated feature -> class 0 logit
    g = gradients(model, np.array([[1.0, 1.0, 1.0, 1.0]]), np.array([1]))
    # d conv_w = sum over cells of d_pre * input; only one cell receives gradient
    assert g["conv_w"][0, 0, 0] == pytest.approx(g["conv_b"][0])
    probs = predict_proba(model, np.ones((1, 4)))[0]
    assert g["conv_b"][0] == pytest.approx(probs[0])


# ---------------------------------------------------------------- loss

def test_loss_values():
    assert loss([0.0, 1.0], 1) == 0.0
    assert loss([0.25] * 4, 2) == pytest.approx(math.log(4))
    assert loss([0.5, 0.5], 0) == pytest.approx(math.log(2))
    assert loss([1.0, 0.0], 1) == pytest.approx(-math.log(1e-12))


# ---------------------------------------------------------------- gradients

def test_zero_model_output_bias_gradient():
    model = init_model(DfgConfig(n_classes=2), 9, zero=True)
    X = np.random.default_rng(0).normal(size=(4, 9))
    y = np.array([0, 1, 0, 1])
    g = gradients(model, X, y)
    # mean of (uniform - onehot) over a balanced batch
    np.testing.assert_allclose(g["dense1_b"], [0.0, 0.0], atol=1e-15)
    g2 = gradients(model, X, np.array([0, 0, 0, 1]))
    np.testing.assert_allclose(g2["dense1_b"], [0.5 - 0.75, 0.5 - 0.25], atol=1e-15)


def test_padding_only_filter_cells_have_zero_gradient():
    model = rng_model(d=1, seed=4, n_filters=6)
    X = np.linspace(-2, 2, 8)[:, None]
    g = gradients(model, X, np.array([0, 1, 2] * 2 + [0, 1]))
    mask = np.ones((7, 7), bool)
    mask[3, 3] = False
    assert (g["conv_w"][:, mask] == 0).all()
    assert np.abs(g["conv_w"][:, 3, 3]).max() > 0


def sample_parameters(model, n_samples, rng):
    """Distinct (name, flat index) pairs touching every array, n_samples in total."""
    pool = [(k, i) for k, v in model.params.items() for i in range(v.size)]
    picked = set()
    for k, v in model.params.items():
        for i in rng.choice(v.size, size=min(v.size, 10), replace=False):
            picked.add((k, int(i)))
    rest = [p for p in pool if p not in picked]
    for j in rng.choice(len(rest), size=max(0, min(len(rest), n_samples - len(picked))), replace=False):
        picked.add(rest[j])
    return sorted(picked)


def finite_difference_check(model, X, y, n_samples, seed, h=1e-5):
    g = gradients(model, X, y)
    worst = 0.0
    sample = sample_parameters(model, n_samples, np.random.default_rng(seed))
    for name, i in sample:
        flat = model.params[name].reshape(-1)
        old = flat[i]
        flat[i] = old + h
        up = batch_loss(model, X, y)
        flat[i] = old - h
        down = batch_loss(model, X, y)
        flat[i] = old
        num = (up - down) / (2 * h)
        ana = g[name].reshape(-1)[i]
        denom = max(abs(num), abs(ana), 1e-6)
        worst = max(worst, abs(num - ana) / denom)
    return worst, len(sample)


@pytest.mark.parametrize("seed", [0, 1])
def test_gradient_check(seed):
    model = rng_model(d=23, n_classes=3, seed=seed, hidden=(10, 6))
    r = np.random.default_rng(seed)
    X = r.normal(size=(5, 23))
    y = r.integers(0, 3, 5)
    worst, checked = finite_difference_check(model, X, y, 240, seed)
    assert checked >= 200
    assert worst < 1e-4


def test_gradient_check_ablated_conv_zero():
    model = rng_model(d=12, use_dfg=False)
    X = np.random.default_rng(2).normal(size=(4, 12))
    g = gradients(model, X, np.array([0, 1, 2, 0]))
    assert (g["conv_w"] == 0).all() and (g["conv_b"] == 0).all()
    worst, _ = finite_difference_check(model, X, np.array([0, 1, 2, 0]), 60, 2)
    assert worst < 1e-4


def test_ablated_output_independent_of_conv():
    model = rng_model(d=12, use_dfg=False)
    X = np.random.default_rng(5).normal(size=(3, 12))
    before = predict_proba(model, X)
    model.params["conv_w"] += 10.0
    model.params["conv_b"] -= 3.0
    np.testing.assert_array_equal(predict_proba(model, X), before)


# ---------------------------------------------------------------- early stopping / training

def test_early_stopping_worsening():
    stop = EarlyStopping(5)
    epochs = 0
    for v in range(1, 100):
        epochs += 1
        if stop.step(float(v)):
            break
    assert epochs == 6 and stop.best_epoch == 1


def test_early_stopping_equal_is_not_improvement():
    stop = EarlyStopping(2)
    assert not stop.step(1.0)
    assert not stop.step(1.0)
    assert stop.step(1.0)


def blobs(n_per=40, d=6, seed=0, sep=4.0):
    r = np.random.default_rng(seed)
    y = np.repeat([0, 1], n_per)
    X = r.normal(size=(2 * n_per, d))
    X[:, 0] += sep * (y - 0.5)
    groups = np.array([f"p{i // 2:03d}" for i in range(2 * n_per)])
    return X, y, groups


def test_train_separable_blobs():
    X, y, g = blobs()
    cfg = DfgConfig(n_filters=4, hidden_sizes=(16,), seed=1, patience=20)
    model, log = train(X, y, g, cfg)
    acc = (predict_proba(model, X).argmax(axis=1) == y).mean()
    assert acc >= 0.99
    assert log.stopped_epoch - log.best_epoch <= cfg.patience
    assert len(log.train_loss) == log.stopped_epoch


def test_train_deterministic_and_order_free():
    X, y, g = blobs(20, seed=3, sep=1.0)
    cfg = DfgConfig(n_filters=2, hidden_sizes=(8,), seed=7, max_epochs=30)
    m1, l1 = train(X, y, g, cfg)
    m2, l2 = train(X, y, g, cfg)
    assert l1.to_dict() == l2.to_dict() and m1.to_json() == m2.to_json()
    perm = np.random.default_rng(0).permutation(len(y))
    m3, l3 = train(X[perm], y[perm], g[perm], cfg)
    assert l3.to_dict() == l1.to_dict() and m3.to_json() == m1.to_json()


def test_train_seed_changes_result():
    X, y, g = blobs(20, seed=3, sep=1.0)
    a = train(X, y, g, DfgConfig(n_filters=2, hidden_sizes=(8,), seed=1, max_epochs=5))[0]
    b = train(X, y, g, DfgConfig(n_filters=2, hidden_sizes=(8,), seed=2, max_epochs=5))[0]
    assert a.to_json() != b.to_json()


def test_train_single_class():
    X, _, g = blobs(5)
    with pytest.raises(SingleClassTrainSet):
        train(X, np.zeros(len(X), int), g, DfgConfig())


def test_train_returns_best_epoch_parameters():
    X, y, g = blobs(20, seed=5, sep=0.5)
    cfg = DfgConfig(n_filters=2, hidden_sizes=(8,), seed=0, max_epochs=60, patience=3)
    model, log = train(X, y, g, cfg)
    assert min(log.val_loss) == log.val_loss[log.best_epoch - 1]
    assert log.stopped_epoch - log.best_epoch <= 3


# ---------------------------------------------------------------- serialization

def test_json_roundtrip():
    model = rng_model()
    back = DfgModel.from_json(model.to_json())
    X = np.random.default_rng(1).normal(size=(3, 20))
    np.testing.assert_array_equal(predict_proba(back, X), predict_proba(model, X))
    assert back.config == model.config


def test_version_mismatch():
    d = json.loads(rng_model().to_json())
    d["version"] = 99
    with pytest.raises(ModelVersionMismatch):
        DfgModel.from_dict(d)


def test_config_validation():
    with pytest.raises(ValueError):
        DfgConfig(kernel=(6, 7))
    with pytest.raises(ValueError):
        DfgConfig(patience=0)
    with pytest.raises(ValueError):
        DfgConfig(n_filters=0)
