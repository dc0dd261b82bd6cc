import numpy as np
import pytest

from bacnn.attention import bam_param_count
from bacnn.errors import ConfigError, FormatError, ShapeError
from bacnn.model import NetworkSpec, build, predict_from_logits, with_variant
from bacnn.tensor import Tensor, backward
from bacnn.layers import cross_entropy, softmax


def small_spec(variant="bam_cm", k=3, bands=6, **kw):
    return NetworkSpec(variant, k, bands, cm_layout=((4, 2), (6, 2), (8, 2)), dense_width=10, **kw)


def patches(n, bands, seed=0, side=15):
    return Tensor(np.random.default_rng(seed).standard_normal((n, side, side, bands)))


@pytest.mark.parametrize("k,bands", [(16, 200), (13, 176)])
def test_full_size_logit_shape(k, bands):
    net = build(NetworkSpec("cm", k, bands), np.random.default_rng(0))
    assert net.forward(patches(2, bands), "eval").shape == (2, k)
    assert net.classifier.weighted_layers == 8


def test_cm_param_count_frozen():
    # convs 57632+9248+18496+36928+73856+147584, BN 64+64+128+128+256+256, dense 33024+4112
    assert build(NetworkSpec("cm", 16, 200), np.random.default_rng(0)).param_count() == 381776


def test_param_additivity():
    cm = build(NetworkSpec("cm", 16, 200), np.random.default_rng(0)).param_count()
    full = NetworkSpec("bam_cm", 16, 200)
    assert build(full, np.random.default_rng(0)).param_count() == cm + bam_param_count(full.bam_config())


def test_variants_carry_the_right_head():
    assert build(small_spec("cm"), np.random.default_rng(0)).head is None
    assert build(small_spec("se_cm"), np.random.default_rng(0)).head.kind == "se"
    assert build(small_spec("bam_cm"), np.random.default_rng(0)).head.kind == "bam"


def test_eval_is_deterministic_and_finite():
    net = build(small_spec(), np.random.default_rng(0))
    x = patches(4, 6)
    a = net.forward(x, "eval").data
    b = net.forward(x, "eval").data
    assert a.shape == (4, 3) and np.all(np.isfinite(a))
    np.testing.assert_array_equal(a, b)


def test_unit_mask_matches_plain_classifier():
    rng = np.random.default_rng(0)
    bam = build(small_spec("bam_cm"), rng)
    cm = build(small_spec("cm"), np.random.default_rng(1))
    cm.load_state({k: v for k, v in bam.state().items() if k.startswith("cm.")})
    bam.force_unit_mask = True
    x = patches(5, 6, seed=2)
    np.testing.assert_array_equal(bam.forward(x, "eval").data, cm.forward(x, "eval").data)
    np.testing.assert_array_equal(bam.predict(x), cm.predict(x))


def test_predict_tie_break_and_argmax():
    assert predict_from_logits(np.array([[0.1, 2.0, -1.0]]))[0] == 1
    assert predict_from_logits(np.array([[1.0, 1.0]]))[0] == 0
    z = np.random.default_rng(0).standard_normal((20, 5))
    np.testing.assert_array_equal(predict_from_logits(softmax(Tensor(z)).data), predict_from_logits(z))


@pytest.mark.parametrize("variant", ["cm", "se_cm", "bam_cm"])
def test_every_parameter_receives_gradient(variant):
    net = build(small_spec(variant), np.random.default_rng(0))
    x = patches(4, 6)
    backward(cross_entropy(net.forward(x, "train", np.random.default_rng(1)), [0, 1, 2, 0]))
    for name, p in net.parameters().items():
        assert p.grad is not None and np.any(p.grad != 0), name


def test_input_shape_checked():
    net = build(small_spec(), np.random.default_rng(0))
    with pytest.raises(ShapeError):
        net.forward(patches(1, 5))


def test_spec_text_round_trip():
    spec = small_spec(r=3.0, mask_activation="softmax", bam_stages=(1, 2, 1))
    assert NetworkSpec.from_text(spec.to_text()) == spec
    assert with_variant(spec, "cm").variant == "cm"


def test_spec_rejects_bad_values():
    with pytest.raises(ConfigError):
        NetworkSpec("resnet", 3, 6)
    with pytest.raises(ConfigError):
        build(NetworkSpec("cm", 3, 6, backbone="nope"), np.random.default_rng(0))
    with pytest.raises(FormatError):
        NetworkSpec.from_text("variant=cm\n")


def test_state_round_trip_gives_identical_logits():
    a = build(small_spec(), np.random.default_rng(0))
    b = build(small_spec(), np.random.default_rng(9))
    b.load_state(a.state())
    x = patches(3, 6)
    np.testing.assert_array_equal(a.forward(x, "eval").data, b.forward(x, "eval").data)
