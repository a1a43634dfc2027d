import json
import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from releval.adapter_lab import (CHECKPOINT_VERSION, ConstantLR, DenseLayer, LabModel, LoraAdapter,
                                 ReduceOnPlateau, TrainConfig, featurize, featurize_all,
                                 forward_adapted, grad_check, merge, param_count, train)
from releval.errors import InputError
from releval.synth import separable_texts


def random_layer_and_adapter(d_in=16, d_out=8, r=3, alpha=6.0, seed=0):
    rng = np.random.default_rng(seed)
    layer = DenseLayer(rng.normal(size=(d_out, d_in)), rng.normal(size=d_out))
    adapter = LoraAdapter(rng.normal(size=(r, d_in)), rng.normal(size=(d_out, r)), alpha)
    return layer, adapter, rng


def test_featurize_is_unit_norm_and_deterministic():
    v = featurize("query: red shoes\ntitle: Shoe")
    assert v.shape == (2048,) and math.isclose(np.linalg.norm(v), 1.0, rel_tol=1e-12)
    assert np.array_equal(v, featurize("query: red shoes\ntitle: Shoe"))
    assert not featurize("").any()
    assert featurize_all(["ab", "abc"], 64).shape == (2, 64)


def test_merge_identity_on_1000_inputs():
    layer, adapter, rng = random_layer_and_adapter()
    X = rng.normal(size=(1000, 16))
    merged = merge(layer, adapter)
    assert np.max(np.abs(merged.forward(X) - forward_adapted(layer, adapter, X))) <= 1e-9


def test_dense_oracle_forward_equality():
    layer, adapter, rng = random_layer_and_adapter(seed=1)
    X = rng.normal(size=(200, 16))
    dense = X @ (layer.W + (adapter.alpha / adapter.rank) * adapter.B @ adapter.A).T + layer.b
    assert np.max(np.abs(forward_adapted(layer, adapter, X) - dense)) <= 1e-12


def test_fresh_adapter_is_a_no_op():
    layer, _, rng = random_layer_and_adapter(seed=2)
    fresh = LoraAdapter.init(16, 8, 4, 8.0, seed=5)
    assert not fresh.B.any() and np.all(np.abs(fresh.A) <= 0.01)
    X = rng.normal(size=(100, 16))
    assert np.array_equal(forward_adapted(layer, fresh, X), layer.forward(X))
    model = LabModel.create(d_in=64, d_hidden=8, mode="lora", seed=3)
    base = LabModel(model.hidden, model.head, "full")
    Xs = featurize_all([f"text {i}" for i in range(50)], 64)
    assert np.array_equal(model.logits(Xs), base.logits(Xs))
    assert np.array_equal(model.predict(Xs), base.predict(Xs))


def test_scale_depends_only_on_ratio():
    a = LoraAdapter.init(16, 8, 2, 4.0)
    b = LoraAdapter.init(16, 8, 4, 8.0)
    assert a.scale == b.scale == 2.0


def test_adapter_shape_validation():
    with pytest.raises(InputError):
        LoraAdapter.init(4, 2, 3, 1.0)
    with pytest.raises(InputError):
        LoraAdapter(np.zeros((2, 4)), np.zeros((3, 1)), 1.0)
    with pytest.raises(InputError):
        LoraAdapter(np.zeros((1, 4)), np.zeros((3, 1)), 0.0)
    layer, adapter, _ = random_layer_and_adapter()
    with pytest.raises(InputError):
        forward_adapted(layer, adapter, np.zeros((1, 5)))


def test_param_count_formulas():
    assert param_count(8, 3, "lora", 2) == 22
    assert param_count(8, 3, "full") == 27
    with pytest.raises(InputError):
        param_count(8, 3, "lora")
    with pytest.raises(InputError):
        param_count(8, 3, "half")


@given(st.integers(1, 300), st.integers(1, 300), st.integers(1, 50))
def test_param_count_properties(d_in, d_out, r):
    lora, full = param_count(d_in, d_out, "lora", r), param_count(d_in, d_out, "full")
    assert param_count(d_in, d_out, "lora", r + 1) > lora
    if r < d_out * (d_in + 1) / (d_in + d_out):
        assert lora < full


@pytest.mark.parametrize("mode", ["full", "lora"])
@pytest.mark.parametrize("weights", [(1, 1, 1), (0.5, 2.0, 3.0), (0.0, 1.0, 1.0)])
def test_gradient_check(mode, weights):
    model = LabModel.create(d_in=24, d_hidden=6, mode=mode, rank=2, alpha=4.0, seed=7)
    if mode == "lora":
        # move B off zero so the A gradient is not trivially zero
        model.adapter.B[:] = np.random.default_rng(0).normal(scale=0.5, size=model.adapter.B.shape)
    X = featurize_all([f"sample {i} text" for i in range(9)], 24)
    y = np.array([i % 3 for i in range(9)])
    assert grad_check(model, X, y, weights) < 1e-4


def test_gradient_with_dropout_mask():
    model = LabModel.create(d_in=20, d_hidden=5, mode="lora", rank=2, seed=1)
    model.adapter.B[:] = 0.3
    X = featurize_all([f"t{i}" for i in range(6)], 20)
    y = np.array([0, 1, 2, 0, 1, 2])
    mask = (np.random.default_rng(1).random(X.shape) >= 0.3) / 0.7
    _, g = model.loss_and_grads(X, y, (1, 1, 1), mask)
    eps = 1e-6
    for name in ("A", "B"):
        p = model.trainable()[name].reshape(-1)
        for i in range(0, p.size, 7):
            old = p[i]
            p[i] = old + eps
            lp, _ = model.loss_and_grads(X, y, (1, 1, 1), mask)
            p[i] = old - eps
            lm, _ = model.loss_and_grads(X, y, (1, 1, 1), mask)
            p[i] = old
            assert g[name].reshape(-1)[i] == pytest.approx((lp - lm) / (2 * eps), rel=1e-4, abs=1e-9)


def test_loss_is_linear_in_class_weight():
    model = LabModel.create(d_in=16, d_hidden=4, mode="full", seed=2)
    X = featurize_all(["only sample"], 16)
    y = np.array([1])
    l1, g1 = model.loss_and_grads(X, y, (1, 1, 1))
    l3, g3 = model.loss_and_grads(X, y, (1, 3, 1))
    assert l3 == pytest.approx(3 * l1, rel=1e-14)
    assert np.allclose(g3["W1"], 3 * g1["W1"], rtol=1e-12, atol=0)
    _, g0 = model.loss_and_grads(X, y, (1, 0, 1))
    assert all(not v.any() for v in g0.values())


def test_plateau_scripted_curve():
    sched = ReduceOnPlateau(0.1)
    lrs = [sched.step(m) for m in [0.50, 0.60, 0.6005, 0.70]]
    assert lrs == [0.1, 0.1, 0.05, 0.05] and sched.reductions == 1
    assert [ConstantLR(0.1).step(m) for m in (0.1, 0.1)] == [0.1, 0.1]


def test_plateau_scripted_curve_through_train():
    curve = iter([0.50, 0.60, 0.6005, 0.70])
    texts, labels = separable_texts(60, seed=0)
    cfg = TrainConfig(epochs=1, validation_every=0.25, d_in=64, d_hidden=4, batch_size=4,
                      learning_rate=0.2)
    res = train(texts, labels, cfg, val_metric=lambda model, step: next(curve))
    assert [h.val_micro_f1 for h in res.history] == [0.50, 0.60, 0.6005, 0.70]
    assert [h.lr for h in res.history] == [0.2, 0.2, 0.1, 0.1]
    steps = [h.step for h in res.history]
    assert steps == sorted(steps) and steps[-1] == math.ceil(res.train_size / 4)


def test_constant_scheduler_keeps_lr():
    texts, labels = separable_texts(60)
    res = train(texts, labels, TrainConfig(scheduler="constant", epochs=1, d_in=64, d_hidden=4))
    assert {h.lr for h in res.history} == {0.5}


@pytest.mark.parametrize("mode", ["lora", "full"])
def test_separable_dataset_is_learned(mode):
    texts, labels = separable_texts(500, seed=1)
    res = train(texts, labels, TrainConfig(mode=mode, rank=4, alpha=4))
    assert res.history[-1].val_micro_f1 >= 0.95


def test_training_is_deterministic():
    texts, labels = separable_texts(120, seed=2)
    cfg = TrainConfig(epochs=1, d_in=128, d_hidden=8, lora_dropout=0.1)
    a, b = train(texts, labels, cfg), train(texts, labels, cfg)
    assert a.history == b.history
    assert json.dumps(a.model.to_checkpoint()) == json.dumps(b.model.to_checkpoint())


def test_single_class_training_split_rejected():
    with pytest.raises(InputError, match="three classes"):
        train(["a", "b", "c", "d"], [1, 1, 1, 1], TrainConfig(d_in=16, d_hidden=2))


@pytest.mark.parametrize("mode", ["lora", "full"])
def test_checkpoint_round_trip(tmp_path, mode):
    model = LabModel.create(d_in=32, d_hidden=4, mode=mode, rank=2, alpha=3.0, lora_dropout=0.05, seed=4)
    path = tmp_path / "ck.json"
    model.save(path)
    loaded = LabModel.load(path)
    X = featurize_all(["x y z", "abc"], 32)
    assert np.array_equal(loaded.logits(X), model.logits(X))
    ck = json.loads(path.read_text())
    assert ck["version"] == CHECKPOINT_VERSION and ck["dims"]["d_hidden"] == 4
    ck["version"] = 99
    with pytest.raises(InputError):
        LabModel.from_checkpoint(ck)
    del ck["version"]
    with pytest.raises(InputError):
        LabModel.from_checkpoint(ck)


@settings(max_examples=25, deadline=None)
@given(st.integers(0, 2**32), st.integers(1, 4))
def test_merged_model_matches_adapted(seed, r):
    model = LabModel.create(d_in=32, d_hidden=6, mode="lora", rank=r, seed=seed)
    model.adapter.B[:] = np.random.default_rng(seed).normal(size=model.adapter.B.shape)
    X = np.random.default_rng(seed + 1).normal(size=(20, 32))
    assert np.max(np.abs(model.merged().logits(X) - model.logits(X))) <= 1e-9


def test_trainable_counts():
    lora = LabModel.create(d_in=8, d_hidden=3, mode="lora", rank=2)
    full = LabModel.create(d_in=8, d_hidden=3, mode="full")
    head = 3 * (3 + 1)
    assert lora.trainable_count() == 22 + head and full.trainable_count() == 27 + head
    assert sum(v.size for v in lora.trainable().values()) == lora.trainable_count()
