import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from bacnn import gradcheck
from bacnn import layers as L
from bacnn.errors import ContractError, FormatError, ShapeError
from bacnn.tensor import Tensor, backward, total


def conv(c_in, c_out, size=3, padding="same", kernel=None, bias=None, stride=1):
    layer = L.ConvLayer(c_in, c_out, size, np.random.default_rng(0), padding=padding, stride=stride)
    if kernel is not None:
        layer.kernel.data[...] = kernel
    if bias is not None:
        layer.bias.data[...] = bias
    return layer


def test_conv_same_shape_first_stage():
    x = Tensor(np.zeros((1, 15, 15, 200)))
    assert L.conv2d(x, conv(200, 16)).shape == (1, 15, 15, 16)


def test_conv_identity_kernel():
    x = np.random.default_rng(1).standard_normal((2, 5, 4, 1))
    out = L.conv2d(Tensor(x), conv(1, 1, 1, kernel=1.0))
    np.testing.assert_array_equal(out.data, x)


def test_conv_all_ones_valid_is_nine():
    out = L.conv2d(Tensor(np.ones((1, 3, 3, 1))), conv(1, 1, 3, "valid", kernel=1.0))
    assert out.shape == (1, 1, 1, 1) and out.data.item() == 9.0


def test_conv_matches_direct_sum():
    rng = np.random.default_rng(2)
    x = rng.standard_normal((2, 5, 6, 3))
    layer = conv(3, 4, bias=rng.standard_normal(4))
    out = L.conv2d(Tensor(x), layer).data
    xp = np.pad(x, ((0, 0), (1, 1), (1, 1), (0, 0)))
    k = layer.kernel.data
    ref = np.zeros_like(out)
    for i in range(5):
        for j in range(6):
            ref[:, i, j, :] = np.einsum("nabc,abcd->nd", xp[:, i:i + 3, j:j + 3, :], k) + layer.bias.data
    np.testing.assert_allclose(out, ref, rtol=1e-12, atol=1e-12)


def test_conv_channel_mismatch():
    with pytest.raises(ShapeError):
        L.conv2d(Tensor(np.zeros((1, 4, 4, 2))), conv(3, 1))


@settings(max_examples=40, deadline=None)
@given(st.integers(1, 32), st.integers(1, 32))
def test_same_padding_preserves_extent(h, w):
    out = L.conv2d(Tensor(np.zeros((1, h, w, 1))), conv(1, 2))
    assert out.shape == (1, h, w, 2)


def test_channel_mix_identity():
    v = np.random.default_rng(0).standard_normal((3, 4))
    np.testing.assert_array_equal(L.channel_mix(Tensor(v), conv(4, 4, 1, kernel=np.eye(4)[None, None])).data, v)


def test_channel_mix_bam_widths():
    assert L.channel_mix(Tensor(np.zeros((5, 32))), conv(32, 100, 1)).shape == (5, 100)


def test_channel_mix_hand_dot():
    out = L.channel_mix(Tensor(np.ones((1, 2))), conv(2, 1, 1, kernel=1.0))
    assert out.data.item() == 2.0


def test_batchnorm_standard_input_unchanged():
    x = np.array([-1.0, 1.0, -1.0, 1.0]).reshape(4, 1)
    out = L.batchnorm(Tensor(x), L.BatchNormLayer(1), "train").data
    np.testing.assert_allclose(out, x / math.sqrt(1 + 1e-5))


def test_batchnorm_zero_gamma_gives_beta():
    layer = L.BatchNormLayer(3)
    layer.gamma.data[...] = 0.0
    layer.beta.data[...] = [1.0, 2.0, 3.0]
    x = np.random.default_rng(0).standard_normal((2, 4, 4, 3))
    out = L.batchnorm(Tensor(x), layer, "train").data
    np.testing.assert_array_equal(out, np.broadcast_to([1.0, 2.0, 3.0], x.shape))


def test_batchnorm_hand_pair():
    out = L.batchnorm(Tensor(np.array([[1.0], [3.0]])), L.BatchNormLayer(1), "train").data.ravel()
    # mean 2, biased variance 1
    expect = np.array([-1.0, 1.0]) / math.sqrt(1.0 + 1e-5)
    np.testing.assert_allclose(out, expect, rtol=1e-15)


def test_batchnorm_running_statistics():
    layer = L.BatchNormLayer(1)
    L.batchnorm(Tensor(np.array([[1.0], [3.0]])), layer, "train")
    np.testing.assert_allclose(layer.running_mean, [0.9 * 0 + 0.1 * 2.0])
    np.testing.assert_allclose(layer.running_var, [0.9 * 1 + 0.1 * 2.0])
    out = L.batchnorm(Tensor(np.array([[1.5]])), layer, "eval").data
    np.testing.assert_allclose(out, (1.5 - 0.2) / np.sqrt(1.1 + 1e-5), rtol=1e-14)


def test_batchnorm_channel_mismatch():
    with pytest.raises(ShapeError):
        L.batchnorm(Tensor(np.zeros((2, 3))), L.BatchNormLayer(4), "train")


def test_maxpool_extents_and_value():
    assert L.maxpool2(Tensor(np.zeros((1, 15, 15, 2)))).shape == (1, 7, 7, 2)
    out = L.maxpool2(Tensor(np.array([[1.0, 2.0], [3.0, 4.0]]).reshape(1, 2, 2, 1)))
    assert out.data.item() == 4.0


def test_maxpool_tie_goes_to_first():
    x = Tensor(np.array([[5.0, 5.0], [1.0, 5.0]]).reshape(1, 2, 2, 1), requires_grad=True)
    backward(total(L.maxpool2(x)))
    np.testing.assert_array_equal(x.grad.reshape(2, 2), [[1.0, 0.0], [0.0, 0.0]])


def test_maxpool_too_small():
    with pytest.raises(ShapeError):
        L.maxpool2(Tensor(np.zeros((1, 1, 4, 1))))


def test_activations():
    np.testing.assert_array_equal(L.activation("relu", Tensor([-1.0, 0.0, 2.0])).data, [0, 0, 2])
    assert L.activation("sigmoid", Tensor([0.0])).data.item() == 0.5
    np.testing.assert_allclose(L.activation("softmax", Tensor(np.full((2, 4), 7.0))).data, 0.25)
    with pytest.raises(ContractError):
        L.activation("tanh", Tensor([0.0]))


def test_softmax_rows_sum_to_one():
    x = Tensor(np.random.default_rng(0).standard_normal((50, 9)) * 30)
    np.testing.assert_allclose(L.softmax(x).data.sum(axis=1), 1.0, atol=1e-12)


def test_dense_examples():
    v = np.random.default_rng(0).standard_normal((3, 4))
    np.testing.assert_array_equal(L.dense(Tensor(v), Tensor(np.eye(4)), Tensor(np.zeros(4))).data, v)
    out = L.dense(Tensor([[1.0, 2.0]]), Tensor([[1.0], [1.0]]), Tensor([1.0]))
    assert out.data.item() == 4.0 and out.shape == (1, 1)


def test_dropout_identities():
    x = Tensor(np.random.default_rng(0).standard_normal((4, 5)))
    assert L.dropout(x, 0.0, "train", np.random.default_rng(1)) is x
    assert L.dropout(x, 0.5, "eval") is x
    with pytest.raises(ContractError):
        L.dropout(x, 1.0, "train", np.random.default_rng(1))


def test_dropout_survivor_fraction():
    out = L.dropout(Tensor(np.ones(100_000)), 0.2, "train", np.random.default_rng(0)).data
    assert abs(np.mean(out != 0) - 0.8) < 0.01
    np.testing.assert_allclose(out[out != 0], 1 / 0.8)


def test_cross_entropy_uniform():
    assert math.isclose(L.cross_entropy(Tensor(np.zeros((3, 16))), [0, 5, 15]).item(), math.log(16), rel_tol=1e-14)


def test_cross_entropy_confident_limit():
    logits = np.full((2, 3), -500.0)
    logits[[0, 1], [2, 0]] = 500.0
    assert L.cross_entropy(Tensor(logits), [2, 0]).item() < 1e-300


def test_cross_entropy_hand_pair():
    logits = np.array([[1.0, 2.0], [0.5, -0.5]])
    t0 = -math.log(math.exp(1.0) / (math.exp(1.0) + math.exp(2.0)))
    t1 = -math.log(math.exp(-0.5) / (math.exp(0.5) + math.exp(-0.5)))
    assert math.isclose(L.cross_entropy(Tensor(logits), [0, 1]).item(), (t0 + t1) / 2, rel_tol=1e-14)


def test_cross_entropy_label_out_of_range():
    with pytest.raises(ContractError):
        L.cross_entropy(Tensor(np.zeros((1, 3))), [3])


def test_checkpoint_round_trip(tmp_path):
    rng = np.random.default_rng(0)
    entries = {"a.kernel": rng.standard_normal((3, 3, 2, 4)), "b": rng.standard_normal(5)}
    L.save_checkpoint(entries, tmp_path / "x.ckpt")
    back = L.load_checkpoint(tmp_path / "x.ckpt")
    assert list(back) == list(entries)
    for k in entries:
        np.testing.assert_array_equal(back[k], entries[k])


def test_checkpoint_bad_magic(tmp_path):
    (tmp_path / "bad").write_bytes(b"NOPE 1\n")
    with pytest.raises(FormatError):
        L.load_checkpoint(tmp_path / "bad")


def test_gradcheck_detects_sign_flipped_conv_backward(monkeypatch):
    honest = L._conv2d_backward

    def flipped(*args, **kwargs):
        return tuple(None if g is None else -g for g in honest(*args, **kwargs))

    [ok] = gradcheck.run_suite(trials=3, ops=["conv2d"])
    assert ok.passed
    monkeypatch.setattr(L, "_conv2d_backward", flipped)
    [bad] = gradcheck.run_suite(trials=3, ops=["conv2d"])
    assert not bad.passed


def test_sigmoid_stays_in_open_interval_at_extremes():
    out = L.sigmoid(Tensor([-1e4, -800.0, -40.0, 40.0, 800.0, 1e4])).data
    assert np.all((out > 0) & (out < 1))
    assert out[3] == np.nextafter(1.0, 0.0)
