"""Band attention heads that turn a patch into a per-band weight vector.

:class:`BandAttention` reduces the patch with five 3x3 convolutions split by
two max pools, averages each feature map over space, and maps the resulting
32-vector through a ``32 -> c/r -> c`` bottleneck of 1x1 mixing layers.
:class:`SqueezeExcitation` is the ablation baseline that averages the raw
bands directly and skips the convolutions.
"""

from __future__ import annotations

import csv
import math
from dataclasses import dataclass

import numpy as np

from .errors import ConfigError, ShapeError
from .layers import BatchNormLayer, ConvLayer, activation, batchnorm, channel_mix, conv2d, maxpool2, relu
from .tensor import Tensor, mul, reshape, spatial_mean

STAGE_DEPTHS = (16, 32, 32)
MASK_ACTIVATIONS = ("relu", "sigmoid", "softmax")


def bottleneck_width(c: int, r: float) -> int:
    """Width of the mixing bottleneck: ``c / r`` rounded half-up, at least 1."""
    if c < 1:
        raise ConfigError(f"band count must be >= 1, got {c}")
    if not r > 0 or not math.isfinite(r):
        raise ConfigError(f"r must be a positive finite number, got {r}; c/r is rounded half-up to an integer >= 1")
    return max(1, int(math.floor(c / r + 0.5)))


@dataclass(frozen=True)
class BamConfig:
    c: int
    r: float = 2.0
    final_activation: str = "sigmoid"
    stage_layout: tuple[int, int, int] = (2, 2, 1)

    def __post_init__(self):
        if self.final_activation not in MASK_ACTIVATIONS:
            raise ConfigError(f"final_activation must be one of {MASK_ACTIVATIONS}, got {self.final_activation!r}")
        layout = tuple(int(s) for s in self.stage_layout)
        if len(layout) != 3 or any(s < 1 for s in layout):
            raise ConfigError(f"stage_layout needs three positive conv counts, got {self.stage_layout}")
        object.__setattr__(self, "stage_layout", layout)
        bottleneck_width(self.c, self.r)

    @property
    def hidden(self) -> int:
        return bottleneck_width(self.c, self.r)

    @property
    def mixing_widths(self) -> tuple[int, int, int]:
        return STAGE_DEPTHS[-1], self.hidden, self.c


@dataclass
class BandMask:
    """Per-sample band weights ``[n, c]``; still attached to the tape."""

    weights: Tensor
    kind: str = "sigmoid"

    @property
    def values(self) -> np.ndarray:
        return self.weights.data

    def check(self, tol: float = 1e-9) -> bool:
        w = self.values
        if self.kind == "sigmoid":
            return bool(np.all((w > 0) & (w < 1)))
        if self.kind == "softmax":
            return bool(np.all(w >= 0) and np.all(np.abs(w.sum(axis=1) - 1) <= tol))
        return bool(np.all(w >= 0))


class BandAttention:
    """Convolutional band attention head.

    Stage ``s`` holds ``stage_layout[s]`` 3x3 convs of depth ``STAGE_DEPTHS[s]``;
    a max pool separates consecutive stages. Every conv except the first is
    preceded by batch norm and ReLU. The last conv feeds the spatial mean
    directly, and only ReLU sits between the two mixing layers.
    """

    kind = "bam"

    def __init__(self, cfg: BamConfig, rng: np.random.Generator):
        self.cfg = cfg
        self.convs: list[ConvLayer] = []
        self.norms: list[BatchNormLayer | None] = []
        self.pool_after: list[bool] = []
        c_in = cfg.c
        for stage, (count, depth) in enumerate(zip(cfg.stage_layout, STAGE_DEPTHS)):
            for i in range(count):
                self.norms.append(None if not self.convs else BatchNormLayer(c_in))
                self.convs.append(ConvLayer(c_in, depth, 3, rng))
                self.pool_after.append(i == count - 1 and stage < 2)
                c_in = depth
        self.mix1 = ConvLayer(STAGE_DEPTHS[-1], cfg.hidden, 1, rng)
        self.mix2 = ConvLayer(cfg.hidden, cfg.c, 1, rng)

    def named_layers(self):
        for i, (norm, conv) in enumerate(zip(self.norms, self.convs)):
            if norm is not None:
                yield f"bn{i}", norm
            yield f"conv{i}", conv
        yield "mix1", self.mix1
        yield "mix2", self.mix2

    def mask(self, x: Tensor, mode: str = "train") -> BandMask:
        if x.ndim != 4 or x.shape[3] != self.cfg.c:
            raise ShapeError(f"band attention expects [n,h,w,{self.cfg.c}], got {x.shape}")
        if x.shape[1] < 4 or x.shape[2] < 4:
            raise ShapeError(f"band attention needs spatial extent >= 4 for two pools, got {x.shape[1]}x{x.shape[2]}")
        h = x
        for norm, conv, pool in zip(self.norms, self.convs, self.pool_after):
            if norm is not None:
                h = relu(batchnorm(h, norm, mode))
            h = conv2d(h, conv)
            if pool:
                h = maxpool2(h)
        v = spatial_mean(h)
        v = relu(channel_mix(v, self.mix1))
        v = activation(self.cfg.final_activation, channel_mix(v, self.mix2))
        return BandMask(v, self.cfg.final_activation)


class SqueezeExcitation:
    """Baseline head: spatial mean of the raw bands, ``c -> c/r -> c`` mixing, sigmoid."""

    kind = "se"

    def __init__(self, c: int, r: float, rng: np.random.Generator):
        self.c = c
        hidden = bottleneck_width(c, r)
        self.mix1 = ConvLayer(c, hidden, 1, rng)
        self.mix2 = ConvLayer(hidden, c, 1, rng)

    def named_layers(self):
        yield "mix1", self.mix1
        yield "mix2", self.mix2

    def mask(self, x: Tensor, mode: str = "train") -> BandMask:
        if x.ndim != 4 or x.shape[3] != self.c:
            raise ShapeError(f"SE head expects [n,h,w,{self.c}], got {x.shape}")
        v = spatial_mean(x)
        v = relu(channel_mix(v, self.mix1))
        return BandMask(activation("sigmoid", channel_mix(v, self.mix2)), "sigmoid")


def bam_forward(x: Tensor, head: BandAttention, mode: str = "train") -> BandMask:
    return head.mask(x, mode)


def se_forward(x: Tensor, head: SqueezeExcitation, mode: str = "train") -> BandMask:
    return head.mask(x, mode)


def apply_mask(x: Tensor, m: BandMask | Tensor) -> Tensor:
    """Scale band ``z`` of every pixel of sample ``i`` by ``m[i, z]``."""
    w = m.weights if isinstance(m, BandMask) else m
    if x.ndim != 4 or w.ndim != 2 or w.shape != (x.shape[0], x.shape[3]):
        raise ShapeError(f"apply_mask: mask {w.shape} does not match input {x.shape}")
    return mul(x, reshape(w, (w.shape[0], 1, 1, w.shape[1])))


def count_parameters(head) -> int:
    return sum(t.size for _, layer in head.named_layers() for t in layer.parameters().values())


def bam_param_count(cfg: BamConfig) -> int:
    """Trainable scalars in a band attention head built for ``cfg``.

    Batch-norm running statistics are not trainable and are excluded.
    """
    total = 0
    c_in = cfg.c
    first = True
    for count, depth in zip(cfg.stage_layout, STAGE_DEPTHS):
        for _ in range(count):
            if not first:
                total += 2 * c_in
            total += 9 * c_in * depth + depth
            c_in, first = depth, False
    hidden = cfg.hidden
    total += STAGE_DEPTHS[-1] * hidden + hidden
    total += hidden * cfg.c + cfg.c
    return total


def write_mask_csv(weights, path) -> None:
    """Write ``band,weight`` rows (bands numbered from 1)."""
    weights = np.asarray(weights, dtype=float).ravel()
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(["band", "weight"])
        for band, w in enumerate(weights, start=1):
            writer.writerow([band, repr(float(w))])
