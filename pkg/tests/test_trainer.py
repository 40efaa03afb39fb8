import math

import mpmath
import numpy as np
import pytest

from godin import numgrad as ng
from godin.deconf import HeadSpec
from godin.model import Model, dumps_checkpoint
from godin.netcore import BackboneSpec
from godin.numgrad import Tensor
from godin.trainer import (
    SGD,
    TrainConfig,
    TrainingDiverged,
    cross_entropy,
    he_init,
    learning_rate,
    sgd_step,
    train,
)


def test_he_init_statistics():
    w = he_init((1_000_000,), 2, np.random.default_rng(0)).data
    assert abs(w.var() - 1.0) < 0.01
    assert abs(w.mean()) < 0.005


def test_he_init_is_seeded():
    a = he_init((3, 4), 4, np.random.default_rng(5)).data
    b = he_init((3, 4), 4, np.random.default_rng(5)).data
    assert np.array_equal(a, b)
    with pytest.raises(ValueError):
        he_init((2,), 0, np.random.default_rng(0))


def test_cross_entropy_uniform_is_ln2():
    assert cross_entropy(Tensor(np.zeros((3, 2))), [0, 1, 0]).item() == pytest.approx(math.log(2), abs=1e-15)


def test_cross_entropy_saturates():
    assert cross_entropy(Tensor([[500.0, 0.0]]), [0]).item() == pytest.approx(0.0, abs=1e-200)


def test_cross_entropy_against_softmax_oracle():
    mpmath.mp.dps = 50
    p = mpmath.exp(3) / sum(mpmath.exp(k) for k in (1, 2, 3))
    loss = cross_entropy(Tensor([[1.0, 2.0, 3.0]]), [2]).item()
    assert loss == pytest.approx(float(-mpmath.log(p)), abs=1e-15)
    assert loss == pytest.approx(0.40761, abs=5e-6)


def test_cross_entropy_rejects_bad_labels():
    with pytest.raises(ValueError):
        cross_entropy(Tensor(np.zeros((1, 3))), [3])
    with pytest.raises(ValueError):
        cross_entropy(Tensor(np.zeros((1, 3))), [-1])


def _single(tag):
    return [("p", Tensor([1.0]), tag)], [Tensor([0.0])]


def test_decay_only_step():
    cfg = TrainConfig(lr0=0.1, momentum=0.0, weight_decay=0.1, epochs=1)
    params, grads = _single("weight")
    sgd_step(params, grads, cfg, epoch=0)
    assert params[0][1].data[0] == pytest.approx(0.99, abs=1e-15)


@pytest.mark.parametrize("tag", ["class_weight", "class_bias"])
def test_class_weights_are_not_decayed(tag):
    cfg = TrainConfig(lr0=0.1, momentum=0.0, weight_decay=0.1, epochs=1)
    params, grads = _single(tag)
    sgd_step(params, grads, cfg, epoch=0)
    assert params[0][1].data[0] == 1.0


def test_divisor_decay_flag():
    params, grads = _single("divisor")
    sgd_step(params, grads, TrainConfig(momentum=0.0, weight_decay=0.1, decay_divisor=False), 0)
    assert params[0][1].data[0] == 1.0
    sgd_step(params, grads, TrainConfig(lr0=0.1, momentum=0.0, weight_decay=0.1), 0)
    assert params[0][1].data[0] == pytest.approx(0.99)


def test_momentum_buffer():
    cfg = TrainConfig(lr0=1.0, momentum=0.5, weight_decay=0.0)
    params = [("p", Tensor([0.0]), "weight")]
    buffers = {}
    sgd_step(params, [Tensor([1.0])], cfg, 0, buffers)
    sgd_step(params, [Tensor([1.0])], cfg, 0, buffers)
    assert params[0][1].data[0] == -(1.0 + 1.5)


def test_learning_rate_schedule():
    cfg = TrainConfig(epochs=200)
    assert [learning_rate(cfg, e) for e in (0, 99, 100, 149, 150, 199)] == pytest.approx(
        [0.1, 0.1, 0.01, 0.01, 0.001, 0.001], rel=1e-12
    )


def test_config_validation():
    for bad in ({"lr0": 0}, {"lr_drop_points": [1.0]}, {"batch_size": 0}, {"momentum": 1.0}):
        with pytest.raises(ValueError):
            TrainConfig(**bad)


def _model(variant="C", seed=0, k=2, c=2, hidden=(8,)):
    spec = BackboneSpec(k, list(hidden))
    return Model(spec, HeadSpec(variant, c, spec.feature_dim), seed=seed)


def test_decay_set_excludes_class_weights():
    for v in ("I", "E", "C", "PlainI"):
        m = _model(v)
        opt = SGD(m.named_parameters(), TrainConfig())
        cls = {n for n, _, t in m.named_parameters() if t in ("class_weight", "class_bias")}
        assert cls and not (opt.decayed_names & cls)
        assert {"backbone.0.weight", "backbone.0.bias"} <= opt.decayed_names


def _blobs(n=100, seed=0):
    r = np.random.default_rng(seed)
    x = np.concatenate([r.normal(-3, 0.5, size=(n, 2)), r.normal(3, 0.5, size=(n, 2))])
    return x, np.repeat([0, 1], n)


@pytest.mark.parametrize("variant", ["I", "C", "PlainI"])
def test_separable_blobs_are_learned(variant):
    x, y = _blobs()
    cfg = TrainConfig(batch_size=32, epochs=50, lr0=0.05, seed=1)
    _, hist = train(_model(variant), x, y, cfg, val=(x, y))
    assert len(hist.loss) == len(hist.train_acc) == len(hist.val_acc) == 50
    assert hist.val_acc[-1] >= 0.99
    assert all(math.isfinite(v) for v in hist.loss)


def test_zero_epochs_leaves_model_untouched():
    x, y = _blobs()
    ref = dumps_checkpoint(_model())
    m, hist = train(_model(), x, y, TrainConfig(epochs=0))
    assert dumps_checkpoint(m) == ref and hist.loss == []


def test_training_is_deterministic():
    x, y = _blobs()
    cfg = TrainConfig(batch_size=16, epochs=3, seed=4)
    a, _ = train(_model(), x, y, cfg)
    b, _ = train(_model(), x, y, cfg)
    assert dumps_checkpoint(a) == dumps_checkpoint(b)
    c, _ = train(_model(), x, y, TrainConfig(batch_size=16, epochs=3, seed=5))
    assert dumps_checkpoint(a) != dumps_checkpoint(c)


def test_divergence_is_reported():
    x, y = _blobs()
    with pytest.raises(TrainingDiverged, match="epoch"):
        train(_model("I"), x * 1e150, y, TrainConfig(epochs=1, lr0=1e10))


def test_empty_dataset_rejected():
    with pytest.raises(ValueError):
        train(_model(), np.zeros((0, 2)), np.zeros(0), TrainConfig(epochs=1))


def test_history_csv(tmp_path):
    x, y = _blobs(20)
    _, hist = train(_model(), x, y, TrainConfig(epochs=2, batch_size=8), val=(x, y))
    lines = hist.to_csv(tmp_path / "h.csv", header="seed=0").read_text().splitlines()
    assert lines[0] == "# seed=0"
    assert lines[1] == "epoch,loss,train_acc,val_acc"
    assert len(lines) == 4


def test_backward_wrt_ce_matches_softmax_minus_onehot(rng):
    z_np = rng.normal(size=(4, 3))
    y = np.array([0, 2, 1, 1])
    z = Tensor(z_np, requires_grad=True)
    with ng.tape():
        (g,) = ng.grad(cross_entropy(z, y), [z])
    p = np.exp(z_np) / np.exp(z_np).sum(axis=1, keepdims=True)
    np.testing.assert_allclose(g.data, (p - np.eye(3)[y]) / 4, atol=1e-15)


def test_short_runs_never_drop_at_epoch_zero():
    assert learning_rate(TrainConfig(epochs=1), 0) == 0.1
    assert learning_rate(TrainConfig(epochs=2), 1) == pytest.approx(0.001)
