"""Differentiable layers on channels-last tensors.

Parameter holders (:class:`ConvLayer`, :class:`BatchNormLayer`,
:class:`DenseLayer`) own their tensors; the forward functions take a holder
plus an input and register the backward rule on the tape.
"""

from __future__ import annotations

from typing import Mapping

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view

from .errors import ContractError, FormatError, ShapeError
from .tensor import DTYPE, Tensor, dump_tensor, load_tensor, make_result


def he_normal(rng: np.random.Generator, shape, fan_in: int) -> np.ndarray:
    return rng.standard_normal(shape) * np.sqrt(2.0 / fan_in)


class ConvLayer:
    """Kernel ``[kh, kw, c_in, c_out]`` plus bias ``[c_out]``."""

    def __init__(self, c_in: int, c_out: int, size: int = 3, rng: np.random.Generator | None = None,
                 padding: str = "same", stride: int = 1):
        if padding not in ("same", "valid"):
            raise ContractError(f"padding must be 'same' or 'valid', got {padding!r}")
        if stride < 1:
            raise ContractError(f"stride must be positive, got {stride}")
        rng = rng if rng is not None else np.random.default_rng(0)
        self.kernel = Tensor(he_normal(rng, (size, size, c_in, c_out), size * size * c_in), requires_grad=True)
        self.bias = Tensor(np.zeros(c_out), requires_grad=True)
        self.padding = padding
        self.stride = stride

    @property
    def c_in(self) -> int:
        return self.kernel.shape[2]

    @property
    def c_out(self) -> int:
        return self.kernel.shape[3]

    def parameters(self) -> dict[str, Tensor]:
        return {"kernel": self.kernel, "bias": self.bias}

    def buffers(self) -> dict[str, np.ndarray]:
        return {}


class BatchNormLayer:
    def __init__(self, c: int, momentum: float = 0.9, eps: float = 1e-5):
        if eps <= 0:
            raise ContractError("batchnorm eps must be positive")
        self.gamma = Tensor(np.ones(c), requires_grad=True)
        self.beta = Tensor(np.zeros(c), requires_grad=True)
        self.running_mean = np.zeros(c)
        self.running_var = np.ones(c)
        self.momentum = momentum
        self.eps = eps

    def parameters(self) -> dict[str, Tensor]:
        return {"gamma": self.gamma, "beta": self.beta}

    def buffers(self) -> dict[str, np.ndarray]:
        return {"running_mean": self.running_mean, "running_var": self.running_var}


class DenseLayer:
    def __init__(self, d_in: int, d_out: int, rng: np.random.Generator | None = None):
        rng = rng if rng is not None else np.random.default_rng(0)
        self.weight = Tensor(he_normal(rng, (d_in, d_out), d_in), requires_grad=True)
        self.bias = Tensor(np.zeros(d_out), requires_grad=True)

    def parameters(self) -> dict[str, Tensor]:
        return {"weight": self.weight, "bias": self.bias}

    def buffers(self) -> dict[str, np.ndarray]:
        return {}


# ---------------------------------------------------------------------------
# convolution


def _pad_amounts(extent: int, k: int, stride: int, padding: str) -> tuple[int, int]:
    if padding == "valid":
        return 0, 0
    out = -(-extent // stride)
    total = max((out - 1) * stride + k - extent, 0)
    return total // 2, total - total // 2


def _im2col(xp: np.ndarray, kh: int, kw: int, stride: int) -> np.ndarray:
    # [n, h', w', c, kh, kw] -> [n, h', w', kh, kw, c]
    win = sliding_window_view(xp, (kh, kw), axis=(1, 2))[:, ::stride, ::stride]
    return win.transpose(0, 1, 2, 4, 5, 3)


def _conv2d_backward(g, x, kernel, pads, want_dx):
    """Stride-1 convolution gradients: (d_input, d_kernel, d_bias).

    The forward computed ``Y = x @ K_cat`` for all ``kh*kw`` taps at once and
    summed shifted slices of the zero-padded ``Y``; here ``g`` is scattered
    back into those slots and both gradients become a single matmul.
    """
    kh, kw, c_in, c_out = kernel.shape
    n, h, w, _ = x.shape
    pt, pb, pl, pr = pads
    ho, wo = g.shape[1:3]
    dy = np.zeros((n, h + pt + pb, w + pl + pr, kh, kw, c_out))
    for i in range(kh):
        for j in range(kw):
            dy[:, i:i + ho, j:j + wo, i, j, :] = g
    dy = dy[:, pt:pt + h, pl:pl + w].reshape(-1, kh * kw * c_out)
    k_cat = kernel.transpose(2, 0, 1, 3).reshape(c_in, kh * kw * c_out)
    x2 = x.reshape(-1, c_in)
    dk = (x2.T @ dy).reshape(c_in, kh, kw, c_out).transpose(1, 2, 0, 3)
    dx = (dy @ k_cat.T).reshape(x.shape) if want_dx else None
    return dx, dk, g.sum(axis=(0, 1, 2))


def _conv2d_backward_strided(g, cols, kernel, xp_shape, stride):
    kh, kw, c_in, c_out = kernel.shape
    n, ho, wo = g.shape[:3]
    g2 = g.reshape(-1, c_out)
    dk = cols.reshape(-1, kh * kw * c_in).T @ g2
    db = g2.sum(axis=0)
    dcols = (g2 @ kernel.reshape(-1, c_out).T).reshape(n, ho, wo, kh, kw, c_in)
    dxp = np.zeros(xp_shape)
    for i in range(kh):
        for j in range(kw):
            dxp[:, i:i + stride * (ho - 1) + 1:stride, j:j + stride * (wo - 1) + 1:stride, :] += dcols[:, :, :, i, j, :]
    return dxp, dk.reshape(kernel.shape), db


def conv2d(x: Tensor, layer: ConvLayer) -> Tensor:
    """Cross-correlation of ``[n, h, w, c_in]`` with the layer's kernel."""
    if x.ndim != 4:
        raise ShapeError(f"conv2d expects [n,h,w,c], got {x.shape}")
    kh, kw, c_in, c_out = layer.kernel.shape
    if x.shape[3] != c_in:
        raise ShapeError(f"conv2d: input has {x.shape[3]} channels, kernel expects {c_in}")
    n, h, w, _ = x.shape
    s = layer.stride
    pt, pb = _pad_amounts(h, kh, s, layer.padding)
    pl, pr = _pad_amounts(w, kw, s, layer.padding)
    if h + pt + pb < kh or w + pl + pr < kw:
        raise ShapeError(f"conv2d: input {x.shape} smaller than kernel {kh}x{kw}")
    kernel = layer.kernel.data
    if s == 1:
        ho, wo = h + pt + pb - kh + 1, w + pl + pr - kw + 1
        k_cat = kernel.transpose(2, 0, 1, 3).reshape(c_in, kh * kw * c_out)
        y = (x.data.reshape(-1, c_in) @ k_cat).reshape(n, h, w, kh, kw, c_out)
        yp = np.pad(y, ((0, 0), (pt, pb), (pl, pr), (0, 0), (0, 0), (0, 0))) if (pt or pb or pl or pr) else y
        out = np.zeros((n, ho, wo, c_out))
        for i in range(kh):
            for j in range(kw):
                out += yp[:, i:i + ho, j:j + wo, i, j, :]
        out += layer.bias.data

        def bw(g):
            return _conv2d_backward(g, x.data, kernel, (pt, pb, pl, pr), x.requires_grad)

        return make_result(out, (x, layer.kernel, layer.bias), bw, "conv2d")

    xp = np.pad(x.data, ((0, 0), (pt, pb), (pl, pr), (0, 0)))
    cols = np.ascontiguousarray(_im2col(xp, kh, kw, s))
    ho, wo = cols.shape[1:3]
    out = cols.reshape(-1, kh * kw * c_in) @ kernel.reshape(-1, c_out) + layer.bias.data

    def bw_strided(g):
        dxp, dk, db = _conv2d_backward_strided(g, cols, kernel, xp.shape, s)
        return dxp[:, pt:pt + h, pl:pl + w, :], dk, db

    return make_result(out.reshape(n, ho, wo, c_out), (x, layer.kernel, layer.bias), bw_strided, "conv2d")


def channel_mix(v: Tensor, layer: ConvLayer) -> Tensor:
    """1x1 convolution applied to a per-sample channel vector ``[n, z_in]``."""
    kh, kw, z_in, z_out = layer.kernel.shape
    if (kh, kw) != (1, 1):
        raise ShapeError(f"channel_mix needs a 1x1 kernel, got {kh}x{kw}")
    if v.ndim != 2 or v.shape[1] != z_in:
        raise ShapeError(f"channel_mix: input {v.shape} does not match kernel depth {z_in}")
    w = layer.kernel.data.reshape(z_in, z_out)

    def bw(g):
        dv = g @ w.T if v.requires_grad else None
        return dv, (v.data.T @ g).reshape(layer.kernel.shape), g.sum(axis=0)

    return make_result(v.data @ w + layer.bias.data, (v, layer.kernel, layer.bias), bw, "channel_mix")


def dense(v: Tensor, W: Tensor, b: Tensor) -> Tensor:
    if v.ndim != 2 or W.ndim != 2 or v.shape[1] != W.shape[0] or b.shape != (W.shape[1],):
        raise ShapeError(f"dense: incompatible shapes v{v.shape} W{W.shape} b{b.shape}")

    def bw(g):
        return g @ W.data.T, v.data.T @ g, g.sum(axis=0)

    return make_result(v.data @ W.data + b.data, (v, W, b), bw, "dense")


# ---------------------------------------------------------------------------
# normalization and pooling


def batchnorm(x: Tensor, layer: BatchNormLayer, mode: str = "train") -> Tensor:
    """Per-channel normalization over every axis but the last.

    Train mode uses batch statistics and updates the running estimates
    (unbiased variance) with ``momentum``; eval mode uses the running
    estimates and is an affine map.
    """
    c = layer.gamma.shape[0]
    if x.shape[-1] != c:
        raise ShapeError(f"batchnorm: {x.shape[-1]} channels, layer has {c}")
    axes = tuple(range(x.ndim - 1))
    gamma, beta = layer.gamma.data, layer.beta.data
    if mode == "eval":
        inv = 1.0 / np.sqrt(layer.running_var + layer.eps)
        out = (x.data - layer.running_mean) * inv * gamma + beta
        xhat = (x.data - layer.running_mean) * inv

        def bw_eval(g):
            return g * gamma * inv, (g * xhat).sum(axis=axes), g.sum(axis=axes)

        return make_result(out, (x, layer.gamma, layer.beta), bw_eval, "batchnorm")
    if mode != "train":
        raise ContractError(f"mode must be 'train' or 'eval', got {mode!r}")

    m = x.size // c
    mu = x.data.mean(axis=axes)
    xc = x.data - mu
    var = (xc * xc).mean(axis=axes)
    inv = 1.0 / np.sqrt(var + layer.eps)
    xhat = xc * inv
    mom = layer.momentum
    layer.running_mean[...] = mom * layer.running_mean + (1 - mom) * mu
    unbiased = var * m / (m - 1) if m > 1 else var
    layer.running_var[...] = mom * layer.running_var + (1 - mom) * unbiased

    def bw(g):
        dgamma = (g * xhat).sum(axis=axes)
        dbeta = g.sum(axis=axes)
        dx = None
        if x.requires_grad:
            dx = (gamma * inv / m) * (m * g - dbeta - xhat * dgamma)
        return dx, dgamma, dbeta

    return make_result(xhat * gamma + beta, (x, layer.gamma, layer.beta), bw, "batchnorm")


def maxpool2(x: Tensor) -> Tensor:
    """2x2 max pool, stride 2; odd trailing rows/columns are dropped.

    Gradient goes to the first maximal element of each window in row-major
    order.
    """
    if x.ndim != 4:
        raise ShapeError(f"maxpool2 expects [n,h,w,c], got {x.shape}")
    n, h, w, c = x.shape
    if h < 2 or w < 2:
        raise ShapeError(f"maxpool2 needs h,w >= 2, got {h}x{w}")
    ho, wo = h // 2, w // 2
    win = x.data[:, :2 * ho, :2 * wo, :].reshape(n, ho, 2, wo, 2, c).transpose(0, 1, 3, 5, 2, 4).reshape(n, ho, wo, c, 4)
    arg = win.argmax(axis=-1)
    out = np.take_along_axis(win, arg[..., None], axis=-1)[..., 0]

    def bw(g):
        onehot = (np.arange(4) == arg[..., None]) * g[..., None]
        d = onehot.reshape(n, ho, wo, c, 2, 2).transpose(0, 1, 4, 2, 5, 3).reshape(n, 2 * ho, 2 * wo, c)
        dx = np.zeros(x.shape)
        dx[:, :2 * ho, :2 * wo, :] = d
        return (dx,)

    return make_result(out, (x,), bw, "maxpool2")


# ---------------------------------------------------------------------------
# activations


def relu(x: Tensor) -> Tensor:
    pos = x.data > 0
    return make_result(np.where(pos, x.data, 0.0), (x,), lambda g: (g * pos,), "relu")


_SIGMOID_LO = np.nextafter(0.0, 1.0)
_SIGMOID_HI = np.nextafter(1.0, 0.0)


def sigmoid(x: Tensor) -> Tensor:
    # split by sign to avoid overflow in exp
    d = x.data
    e = np.exp(-np.abs(d))
    s = np.where(d >= 0, 1.0 / (1.0 + e), e / (1.0 + e))
    # rounding would reach exactly 0 or 1 for |x| > ~37; keep the open interval
    s = np.clip(s, _SIGMOID_LO, _SIGMOID_HI)
    return make_result(s, (x,), lambda g: (g * s * (1.0 - s),), "sigmoid")


def softmax(x: Tensor) -> Tensor:
    z = x.data - x.data.max(axis=-1, keepdims=True)
    e = np.exp(z)
    s = e / e.sum(axis=-1, keepdims=True)

    def bw(g):
        return (s * (g - (g * s).sum(axis=-1, keepdims=True)),)

    return make_result(s, (x,), bw, "softmax")


ACTIVATIONS = {"relu": relu, "sigmoid": sigmoid, "softmax": softmax}


def activation(kind: str, x: Tensor) -> Tensor:
    try:
        fn = ACTIVATIONS[kind]
    except KeyError:
        raise ContractError(f"unknown activation {kind!r}; choose from {sorted(ACTIVATIONS)}") from None
    return fn(x)


# ---------------------------------------------------------------------------
# regularization and loss


def dropout(x: Tensor, p: float, mode: str, rng: np.random.Generator | None = None) -> Tensor:
    """Inverted dropout: train mode zeroes with probability ``p`` and rescales survivors."""
    if not 0 <= p < 1:
        raise ContractError(f"dropout rate must lie in [0, 1), got {p}")
    if mode == "eval" or p == 0:
        return x
    if mode != "train":
        raise ContractError(f"mode must be 'train' or 'eval', got {mode!r}")
    if rng is None:
        raise ContractError("train-mode dropout needs an rng")
    keep = (rng.random(x.shape) >= p) / (1.0 - p)
    return make_result(x.data * keep, (x,), lambda g: (g * keep,), "dropout")


def log_softmax(z: np.ndarray) -> np.ndarray:
    z = z - z.max(axis=-1, keepdims=True)
    return z - np.log(np.exp(z).sum(axis=-1, keepdims=True))


def cross_entropy(logits: Tensor, labels) -> Tensor:
    """Mean negative log-likelihood of integer ``labels`` under softmax(logits)."""
    labels = np.asarray(labels, dtype=np.int64)
    if logits.ndim != 2 or labels.shape != (logits.shape[0],):
        raise ShapeError(f"cross_entropy: logits {logits.shape} vs labels {labels.shape}")
    n, k = logits.shape
    if labels.size and (labels.min() < 0 or labels.max() >= k):
        raise ContractError(f"labels must lie in [0, {k}), got range [{labels.min()}, {labels.max()}]")
    logp = log_softmax(logits.data)
    rows = np.arange(n)
    loss = -logp[rows, labels].mean()

    def bw(g):
        d = np.exp(logp)
        d[rows, labels] -= 1.0
        return (d * (g / n),)

    return make_result(np.asarray(loss), (logits,), bw, "cross_entropy")


# ---------------------------------------------------------------------------
# checkpoints: "CKPT1 <count>\n", one "name e1 e2 ..." line per entry,
# then the tensor dumps in manifest order


def save_checkpoint(entries: Mapping[str, Tensor | np.ndarray], path) -> None:
    arrays = {name: (v.data if isinstance(v, Tensor) else np.asarray(v, dtype=DTYPE)) for name, v in entries.items()}
    with open(path, "wb") as fh:
        fh.write(f"CKPT1 {len(arrays)}\n".encode("ascii"))
        for name, arr in arrays.items():
            if not name or any(ch.isspace() for ch in name):
                raise ContractError(f"checkpoint names may not contain whitespace: {name!r}")
            fh.write((" ".join([name, *map(str, arr.shape)]) + "\n").encode("ascii"))
        for arr in arrays.values():
            dump_tensor(arr, fh)


def load_checkpoint(path) -> dict[str, np.ndarray]:
    with open(path, "rb") as fh:
        head = fh.readline().decode("ascii", errors="replace").split()
        if len(head) != 2 or head[0] != "CKPT1":
            raise FormatError(f"{path}: not a checkpoint file")
        try:
            count = int(head[1])
        except ValueError:
            raise FormatError(f"{path}: bad entry count {head[1]!r}") from None
        manifest = []
        for _ in range(count):
            parts = fh.readline().decode("ascii", errors="replace").split()
            if not parts:
                raise FormatError(f"{path}: truncated manifest")
            manifest.append((parts[0], tuple(int(e) for e in parts[1:])))
        out = {}
        for name, shape in manifest:
            t = load_tensor(fh)
            if t.shape != shape:
                raise FormatError(f"{path}: entry {name} has shape {t.shape}, manifest says {shape}")
            out[name] = t.data
        return out
