import numpy as np
import pytest

from godin import numgrad as ng
from godin.deconf import HeadSpec
from godin.model import Model, dumps_checkpoint, load_checkpoint, save_checkpoint
from godin.netcore import Backbone, BackboneSpec, BatchNorm, dropout, forward
from godin.numgrad import Tensor

from _helpers import max_rel_err, numeric_grad


def make_model(hidden=(8, 6), variant="C", bn=True, p=0.0, seed=0, k=5, c=3):
    spec = BackboneSpec(k, list(hidden), bn, p)
    return Model(spec, HeadSpec(variant, c, spec.feature_dim), seed=seed)


def test_zero_depth_backbone_is_identity(rng):
    x = rng.normal(size=(4, 3))
    feats = Backbone(BackboneSpec(3, []), rng)(x)
    assert np.array_equal(feats.penultimate.data, x)
    assert len(feats.layers) == 1


def test_penultimate_is_last_layer(rng):
    feats = Backbone(BackboneSpec(3, [5, 4]), rng)(rng.normal(size=(2, 3)))
    assert feats.penultimate is feats.layers[-1]
    assert [f.shape[1] for f in feats.layers] == [5, 4]


def test_dimension_mismatch(rng):
    with pytest.raises(ng.ShapeError):
        Backbone(BackboneSpec(3, [4]), rng)(np.zeros((2, 5)))
    with pytest.raises(ValueError):
        BackboneSpec(0, [4])
    with pytest.raises(ValueError):
        BackboneSpec(3, [4], head_dropout_rate=1.0)


def test_eval_forward_is_bitwise_repeatable(rng):
    m = make_model()
    x = rng.normal(size=(7, 5))
    a = m(x, "eval")
    b = m(x, "eval")
    assert all(np.array_equal(u.data, v.data) for u, v in zip(a.features.layers, b.features.layers))
    assert np.array_equal(a.logits.data, b.logits.data)


def test_batchnorm_constant_column_yields_beta():
    bn = BatchNorm(2)
    bn.beta.data = np.array([0.3, -1.2])
    x = np.column_stack([np.full(6, 2.5), np.arange(6.0)])
    out = bn(Tensor(x), "train").data
    assert np.all(out[:, 0] == 0.3)
    assert out[:, 1].mean() == pytest.approx(-1.2, abs=1e-12)


def test_batchnorm_running_stats_update():
    bn = BatchNorm(1)
    x = np.array([[1.0], [3.0]])
    bn(Tensor(x), "train")
    # biased batch variance is 1.0, batch mean 2.0
    assert bn.running_mean[0] == pytest.approx(0.9 * 0 + 0.1 * 2.0)
    assert bn.running_var[0] == pytest.approx(0.9 * 1 + 0.1 * 1.0)


def test_batchnorm_eval_uses_running_stats_only():
    bn = BatchNorm(1)
    bn.running_mean = np.array([2.0])
    bn.running_var = np.array([4.0 - 1e-5])
    out = bn(Tensor([[6.0], [2.0]]), "eval").data
    np.testing.assert_allclose(out[:, 0], [2.0, 0.0], atol=1e-12)


def test_dropout_identity_cases(rng):
    x = Tensor(rng.normal(size=(3, 4)))
    assert dropout(x, 0.0, "train", rng) is x
    assert dropout(x, 0.7, "eval") is x


def test_dropout_monte_carlo():
    r = np.random.default_rng(0)
    x = Tensor(np.full(100_000, 2.0))
    out = dropout(x, 0.5, "train", r).data
    keep = np.mean(out != 0)
    assert abs(keep - 0.5) < 0.01
    assert abs(out.mean() - 2.0) / 2.0 < 0.02


def test_eval_is_batch_independent(rng):
    m = make_model()
    x = rng.normal(size=(6, 5))
    batch = m(x, "eval").logits.data
    rows = np.concatenate([m(x[i : i + 1], "eval").logits.data for i in range(6)])
    np.testing.assert_allclose(batch, rows, rtol=0, atol=1e-13)


def test_train_equals_eval_without_bn_or_dropout(rng):
    m = make_model(bn=False, variant="PlainI")
    x = rng.normal(size=(4, 5))
    assert np.array_equal(m(x, "train").logits.data, m(x, "eval").logits.data)


@pytest.mark.parametrize("mode", ["train", "eval"])
@pytest.mark.parametrize("variant", ["I", "E", "C", "PlainI"])
def test_backbone_gradients_match_finite_differences(mode, variant):
    r = np.random.default_rng(7)
    m = make_model(variant=variant, p=0.3)
    x_np = r.normal(size=(4, 5))
    labels = np.array([0, 1, 2, 1])
    params = [t for _, t, _ in m.named_parameters()]

    def loss_value():
        out = m(x_np, mode, np.random.default_rng(3))
        return float(np.sum(out.logits.data * np.eye(3)[labels]))

    xt = Tensor(x_np, requires_grad=True)
    with ng.tape():
        out = m(xt, mode, np.random.default_rng(3))
        loss = (out.logits * np.eye(3)[labels]).sum()
        grads = ng.grad(loss, [xt] + params)
    assert max_rel_err(grads[0].data, numeric_grad(loss_value, x_np)) < 1e-4
    for p, g in zip(params, grads[1:]):
        assert max_rel_err(g.data, numeric_grad(loss_value, p.data)) < 1e-4


def test_checkpoint_round_trip_is_bit_exact(tmp_path, rng):
    m = make_model(variant="I")
    m(rng.normal(size=(8, 5)), "train")  # move running stats off their defaults
    path = save_checkpoint(m, tmp_path / "ck.json")
    m2, _ = load_checkpoint(path)
    for (n1, t1, _), (n2, t2, _) in zip(m.named_parameters(), m2.named_parameters()):
        assert n1 == n2 and np.array_equal(t1.data, t2.data)
    for (_, b1), (_, b2) in zip(m.batchnorms(), m2.batchnorms()):
        assert np.array_equal(b1.running_mean, b2.running_mean)
        assert np.array_equal(b1.running_var, b2.running_var)
    assert dumps_checkpoint(m2) == path.read_text()


def test_forward_helper_returns_features(rng):
    m = make_model()
    assert len(forward(m, rng.normal(size=(2, 5))).layers) == 2
