"""Central finite-difference checks for every differentiable operation.

Each case builds a small random instance and returns a closure plus the
tensors to differentiate. The scalar probed is ``sum(out * R)`` for a fixed
random ``R``, so every output element contributes. Error per tensor is
``|a - n| / max(|a| + |n|, 1e-5)`` in the 2-norm over the probed
coordinates; the floor absorbs the 1e-11..1e-9 roundoff of central differences
where the true gradient is exactly zero (e.g. a bias feeding batch norm).
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Callable

import numpy as np

from . import layers as L
from .attention import BamConfig, BandAttention, SqueezeExcitation, apply_mask
from .tensor import Tensor, add, backward, mul, no_grad, reshape, spatial_mean, total

Case = tuple[Callable[[], Tensor], list[Tensor]]


def _t(rng, *shape) -> Tensor:
    return Tensor(rng.standard_normal(shape), requires_grad=True)


NOISE_FLOOR = 1e-5


def relative_error(analytic: np.ndarray, numeric: np.ndarray) -> float:
    denom = np.linalg.norm(analytic) + np.linalg.norm(numeric)
    return float(np.linalg.norm(analytic - numeric) / max(denom, NOISE_FLOOR))


def check(fn: Callable[[], Tensor], tensors: list[Tensor], rng: np.random.Generator,
          step: float = 1e-5, max_coords: int | None = None) -> float:
    """Largest relative error between tape gradients and central differences.

    ``max_coords`` caps how many randomly chosen coordinates of each tensor
    are probed; ``None`` probes all of them.
    """
    out = fn()
    proj = Tensor(rng.standard_normal(out.shape))
    for t in tensors:
        t.grad = None
    backward(total(mul(out, proj)))
    worst = 0.0
    for t in tensors:
        analytic = np.zeros(t.shape) if t.grad is None else t.grad
        flat = t.data.reshape(-1)
        coords = np.arange(flat.size)
        if max_coords is not None and flat.size > max_coords:
            coords = rng.choice(flat.size, max_coords, replace=False)
        numeric = np.empty(coords.size)
        with no_grad():
            for j, i in enumerate(coords):
                orig = flat[i]
                flat[i] = orig + step
                fp = float((fn().data * proj.data).sum())
                flat[i] = orig - step
                fm = float((fn().data * proj.data).sum())
                flat[i] = orig
                numeric[j] = (fp - fm) / (2 * step)
        worst = max(worst, relative_error(analytic.reshape(-1)[coords], numeric))
    return worst


# ---------------------------------------------------------------------------
# cases


def case_add(rng) -> Case:
    a = _t(rng, 2, 3, 3, 4)
    b = _t(rng, 4) if rng.random() < 0.5 else _t(rng, 2, 3, 3, 4)
    return (lambda: add(a, b)), [a, b]


def case_mul(rng) -> Case:
    a = _t(rng, 2, 3, 3, 4)
    b = _t(rng, 4) if rng.random() < 0.5 else _t(rng, 2, 3, 3, 4)
    return (lambda: mul(a, b)), [a, b]


def case_reshape(rng) -> Case:
    a = _t(rng, 2, 3, 4)
    return (lambda: reshape(a, (6, 4))), [a]


def case_total(rng) -> Case:
    a = _t(rng, 3, 5)
    return (lambda: total(a)), [a]


def case_spatial_mean(rng) -> Case:
    x = _t(rng, 2, int(rng.integers(1, 5)), int(rng.integers(1, 5)), 3)
    return (lambda: spatial_mean(x)), [x]


def case_conv2d(rng) -> Case:
    n, h, w = 2, int(rng.integers(3, 6)), int(rng.integers(3, 6))
    cin, cout = int(rng.integers(1, 4)), int(rng.integers(1, 4))
    padding = "same" if rng.random() < 0.7 else "valid"
    stride = 1 if rng.random() < 0.7 else 2
    layer = L.ConvLayer(cin, cout, 3, rng, padding=padding, stride=stride)
    layer.bias.data[...] = rng.standard_normal(cout)
    x = _t(rng, n, h, w, cin)
    return (lambda: L.conv2d(x, layer)), [x, layer.kernel, layer.bias]


def case_channel_mix(rng) -> Case:
    zin, zout = int(rng.integers(1, 6)), int(rng.integers(1, 6))
    layer = L.ConvLayer(zin, zout, 1, rng)
    layer.bias.data[...] = rng.standard_normal(zout)
    v = _t(rng, 3, zin)
    return (lambda: L.channel_mix(v, layer)), [v, layer.kernel, layer.bias]


def _bn(rng, c):
    layer = L.BatchNormLayer(c)
    layer.gamma.data[...] = rng.uniform(0.5, 1.5, c)
    layer.beta.data[...] = rng.standard_normal(c)
    layer.running_mean[...] = rng.standard_normal(c)
    layer.running_var[...] = rng.uniform(0.5, 2.0, c)
    return layer


def case_batchnorm_train(rng) -> Case:
    c = int(rng.integers(1, 4))
    layer = _bn(rng, c)
    x = _t(rng, 2, 3, 3, c) if rng.random() < 0.5 else _t(rng, 5, c)
    return (lambda: L.batchnorm(x, layer, "train")), [x, layer.gamma, layer.beta]


def case_batchnorm_eval(rng) -> Case:
    c = int(rng.integers(1, 4))
    layer = _bn(rng, c)
    x = _t(rng, 2, 3, 3, c)
    return (lambda: L.batchnorm(x, layer, "eval")), [x, layer.gamma, layer.beta]


def case_maxpool2(rng) -> Case:
    x = _t(rng, 2, int(rng.integers(2, 6)), int(rng.integers(2, 6)), 2)
    return (lambda: L.maxpool2(x)), [x]


def case_dense(rng) -> Case:
    din, dout = int(rng.integers(1, 6)), int(rng.integers(1, 6))
    v, W, b = _t(rng, 3, din), _t(rng, din, dout), _t(rng, dout)
    return (lambda: L.dense(v, W, b)), [v, W, b]


def _activation_case(kind):
    def case(rng) -> Case:
        x = _t(rng, 4, 5)
        return (lambda: L.activation(kind, x)), [x]
    case.__name__ = f"case_{kind}"
    return case


def case_dropout(rng) -> Case:
    x = _t(rng, 4, 6)
    seed = int(rng.integers(1 << 30))
    return (lambda: L.dropout(x, 0.3, "train", np.random.default_rng(seed))), [x]


def case_cross_entropy(rng) -> Case:
    n, k = 4, int(rng.integers(2, 6))
    logits = _t(rng, n, k)
    labels = rng.integers(0, k, n)
    return (lambda: L.cross_entropy(logits, labels)), [logits]


def case_apply_mask(rng) -> Case:
    x = _t(rng, 2, 3, 3, 4)
    m = Tensor(rng.uniform(0.1, 1.0, (2, 4)), requires_grad=True)
    return (lambda: apply_mask(x, m)), [x, m]


def _head_tensors(head) -> list[Tensor]:
    out = []
    for _, layer in head.named_layers():
        out.extend(layer.parameters().values())
    return out


def case_bam_forward(rng) -> Case:
    kind = ("sigmoid", "softmax", "relu")[int(rng.integers(3))]
    cfg = BamConfig(c=3, r=1.5, final_activation=kind)
    head = BandAttention(cfg, rng)
    for _, layer in head.named_layers():
        for t in layer.parameters().values():
            t.data[...] += 0.1 * rng.standard_normal(t.shape)
    x = _t(rng, 2, 8, 8, 3)
    return (lambda: head.mask(x, "train").weights), [x, *_head_tensors(head)]


def case_se_forward(rng) -> Case:
    head = SqueezeExcitation(4, 2, rng)
    for t in _head_tensors(head):
        t.data[...] += 0.1 * rng.standard_normal(t.shape)
    x = _t(rng, 2, 3, 3, 4)
    return (lambda: head.mask(x, "train").weights), [x, *_head_tensors(head)]


CASES: dict[str, Callable[[np.random.Generator], Case]] = {
    "add": case_add,
    "mul": case_mul,
    "reshape": case_reshape,
    "sum": case_total,
    "spatial_mean": case_spatial_mean,
    "conv2d": case_conv2d,
    "channel_mix": case_channel_mix,
    "batchnorm_train": case_batchnorm_train,
    "batchnorm_eval": case_batchnorm_eval,
    "maxpool2": case_maxpool2,
    "dense": case_dense,
    "relu": _activation_case("relu"),
    "sigmoid": _activation_case("sigmoid"),
    "softmax": _activation_case("softmax"),
    "dropout": case_dropout,
    "cross_entropy": case_cross_entropy,
    "apply_mask": case_apply_mask,
    "bam_forward": case_bam_forward,
    "se_forward": case_se_forward,
}

# probing every coordinate of the full attention head is too slow
MAX_COORDS = {"bam_forward": 6, "se_forward": 12}


@dataclass
class GradcheckResult:
    op: str
    trials: int
    max_rel_err: float
    tol: float

    @property
    def passed(self) -> bool:
        return self.max_rel_err < self.tol


def run_suite(trials: int = 100, seed: int = 0, tol: float = 1e-4, ops=None) -> list[GradcheckResult]:
    results = []
    for name in ops or CASES:
        rng = np.random.default_rng([seed, sorted(CASES).index(name)])
        worst = 0.0
        for _ in range(trials):
            fn, tensors = CASES[name](rng)
            worst = max(worst, check(fn, tensors, rng, max_coords=MAX_COORDS.get(name)))
        results.append(GradcheckResult(name, trials, worst, tol))
    return results
