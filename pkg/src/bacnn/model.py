"""Network assembly: classification module plus optional attention head.

Three variants are supported:

* ``cm``     - the VGG-style classifier on the raw patch
* ``se_cm``  - squeeze-and-excitation band weights, then the classifier
* ``bam_cm`` - convolutional band attention, then the classifier
"""

from __future__ import annotations

from dataclasses import dataclass, replace
from typing import Callable

import numpy as np

from .attention import BamConfig, BandAttention, SqueezeExcitation, apply_mask, bottleneck_width
from .errors import ConfigError, FormatError, ShapeError
from .layers import BatchNormLayer, ConvLayer, DenseLayer, batchnorm, conv2d, dense, dropout, maxpool2, relu
from .tensor import Tensor, no_grad, spatial_mean

VARIANTS = ("cm", "se_cm", "bam_cm")


@dataclass(frozen=True)
class NetworkSpec:
    variant: str
    num_classes: int
    bands: int
    patch: int = 15
    cm_layout: tuple[tuple[int, int], ...] = ((32, 2), (64, 2), (128, 2))
    dense_width: int = 256
    dropout_rate: float = 0.2
    r: float = 2.0
    mask_activation: str = "sigmoid"
    bam_stages: tuple[int, int, int] = (2, 2, 1)
    backbone: str = "vgg8"

    def __post_init__(self):
        if self.variant not in VARIANTS:
            raise ConfigError(f"variant must be one of {VARIANTS}, got {self.variant!r}")
        if self.num_classes < 2:
            raise ConfigError(f"need at least 2 classes, got {self.num_classes}")
        if self.bands < 1 or self.patch < 1:
            raise ConfigError("bands and patch size must be positive")
        if not self.cm_layout or any(w < 1 or n < 1 for w, n in self.cm_layout):
            raise ConfigError(f"invalid classifier layout {self.cm_layout}")
        if not 0 <= self.dropout_rate < 1:
            raise ConfigError(f"dropout rate must lie in [0, 1), got {self.dropout_rate}")
        if self.variant != "cm":
            bottleneck_width(self.bands, self.r)
        if self.variant == "bam_cm":
            self.bam_config()

    def bam_config(self) -> BamConfig:
        return BamConfig(self.bands, self.r, self.mask_activation, self.bam_stages)

    def to_text(self) -> str:
        lines = [
            f"variant={self.variant}",
            f"num_classes={self.num_classes}",
            f"bands={self.bands}",
            f"patch={self.patch}",
            "cm_layout=" + ",".join(f"{w}x{n}" for w, n in self.cm_layout),
            f"dense_width={self.dense_width}",
            f"dropout={self.dropout_rate!r}",
            f"r={self.r!r}",
            f"mask_activation={self.mask_activation}",
            "bam_stages=" + ",".join(map(str, self.bam_stages)),
            f"backbone={self.backbone}",
        ]
        return "\n".join(lines) + "\n"

    @classmethod
    def from_text(cls, text: str) -> "NetworkSpec":
        kv = {}
        for lineno, line in enumerate(text.splitlines(), 1):
            line = line.strip()
            if not line or line.startswith("#"):
                continue
            if "=" not in line:
                raise FormatError(f"network spec line {lineno}: expected key=value, got {line!r}")
            key, value = line.split("=", 1)
            kv[key.strip()] = value.strip()
        try:
            return cls(
                variant=kv["variant"],
                num_classes=int(kv["num_classes"]),
                bands=int(kv["bands"]),
                patch=int(kv.get("patch", 15)),
                cm_layout=tuple(tuple(int(p) for p in item.split("x")) for item in kv.get("cm_layout", "32x2,64x2,128x2").split(",")),
                dense_width=int(kv.get("dense_width", 256)),
                dropout_rate=float(kv.get("dropout", 0.2)),
                r=float(kv.get("r", 2.0)),
                mask_activation=kv.get("mask_activation", "sigmoid"),
                bam_stages=tuple(int(s) for s in kv.get("bam_stages", "2,2,1").split(",")),
                backbone=kv.get("backbone", "vgg8"),
            )
        except KeyError as e:
            raise FormatError(f"network spec missing key {e.args[0]!r}") from None
        except ValueError as e:
            raise FormatError(f"network spec has a malformed value: {e}") from None


class VggClassifier:
    """Pre-activation VGG classifier.

    Convolution blocks of doubling width separated by 2x2 max pools, then
    batch norm + ReLU, a global spatial mean, and two dense layers with
    dropout between them. The default layout has six convs and two dense
    layers.
    """

    def __init__(self, spec: NetworkSpec, rng: np.random.Generator):
        self.convs: list[ConvLayer] = []
        self.norms: list[BatchNormLayer | None] = []
        self.pool_after: list[bool] = []
        c_in = spec.bands
        side = spec.patch
        for block, (width, count) in enumerate(spec.cm_layout):
            for i in range(count):
                self.norms.append(None if not self.convs else BatchNormLayer(c_in))
                self.convs.append(ConvLayer(c_in, width, 3, rng))
                pool = i == count - 1 and block < len(spec.cm_layout) - 1
                self.pool_after.append(pool)
                c_in = width
            if block < len(spec.cm_layout) - 1:
                side //= 2
                if side < 1:
                    raise ConfigError(f"classifier layout pools a {spec.patch}px patch below 1px")
        self.final_norm = BatchNormLayer(c_in)
        self.fc1 = DenseLayer(c_in, spec.dense_width, rng)
        self.fc2 = DenseLayer(spec.dense_width, spec.num_classes, rng)
        self.dropout_rate = spec.dropout_rate

    def named_layers(self):
        for i, (norm, conv) in enumerate(zip(self.norms, self.convs)):
            if norm is not None:
                yield f"bn{i}", norm
            yield f"conv{i}", conv
        yield "bn_out", self.final_norm
        yield "fc1", self.fc1
        yield "fc2", self.fc2

    @property
    def weighted_layers(self) -> int:
        return len(self.convs) + 2

    def __call__(self, x: Tensor, mode: str, rng: np.random.Generator | None) -> Tensor:
        h = x
        for norm, conv, pool in zip(self.norms, self.convs, self.pool_after):
            if norm is not None:
                h = relu(batchnorm(h, norm, mode))
            h = conv2d(h, conv)
            if pool:
                h = maxpool2(h)
        h = spatial_mean(relu(batchnorm(h, self.final_norm, mode)))
        h = relu(dense(h, self.fc1.weight, self.fc1.bias))
        h = dropout(h, self.dropout_rate, mode, rng)
        return dense(h, self.fc2.weight, self.fc2.bias)


BACKBONES: dict[str, Callable[[NetworkSpec, np.random.Generator], object]] = {"vgg8": VggClassifier}


def register_backbone(name: str, factory: Callable[[NetworkSpec, np.random.Generator], object]) -> None:
    """Make another classifier available through ``NetworkSpec.backbone``.

    The factory's result must provide ``named_layers()`` and
    ``__call__(x, mode, rng) -> logits``.
    """
    BACKBONES[name] = factory


class Network:
    def __init__(self, spec: NetworkSpec, head, classifier):
        self.spec = spec
        self.head = head
        self.classifier = classifier
        self.force_unit_mask = False

    def named_layers(self):
        if self.head is not None:
            for name, layer in self.head.named_layers():
                yield f"{self.head.kind}.{name}", layer
        for name, layer in self.classifier.named_layers():
            yield f"cm.{name}", layer

    def parameters(self) -> dict[str, Tensor]:
        return {f"{lname}.{p}": t for lname, layer in self.named_layers() for p, t in layer.parameters().items()}

    def buffers(self) -> dict[str, np.ndarray]:
        return {f"{lname}.{b}": a for lname, layer in self.named_layers() for b, a in layer.buffers().items()}

    def param_count(self) -> int:
        return sum(t.size for t in self.parameters().values())

    def state(self) -> dict[str, np.ndarray]:
        out = {name: t.data for name, t in self.parameters().items()}
        out.update(self.buffers())
        return out

    def load_state(self, state: dict[str, np.ndarray]) -> None:
        params, bufs = self.parameters(), self.buffers()
        expected = set(params) | set(bufs)
        if set(state) != expected:
            missing = sorted(expected - set(state))
            extra = sorted(set(state) - expected)
            raise ConfigError(f"checkpoint does not match network: missing {missing[:5]}, unexpected {extra[:5]}")
        for name, t in params.items():
            if state[name].shape != t.shape:
                raise ConfigError(f"checkpoint entry {name} has shape {state[name].shape}, network expects {t.shape}")
            t.data = np.array(state[name], dtype=np.float64)
        for name, buf in bufs.items():
            if state[name].shape != buf.shape:
                raise ConfigError(f"checkpoint entry {name} has shape {state[name].shape}, network expects {buf.shape}")
            buf[...] = state[name]

    def zero_grad(self) -> None:
        for t in self.parameters().values():
            t.grad = None

    def mask(self, x: Tensor, mode: str = "eval"):
        if self.head is None:
            raise ConfigError("network has no attention head")
        return self.head.mask(x, mode)

    def forward(self, x: Tensor, mode: str = "train", rng: np.random.Generator | None = None) -> Tensor:
        s = self.spec
        if x.ndim != 4 or x.shape[1:] != (s.patch, s.patch, s.bands):
            raise ShapeError(f"network expects [n,{s.patch},{s.patch},{s.bands}], got {x.shape}")
        if self.head is not None and not self.force_unit_mask:
            x = apply_mask(x, self.head.mask(x, mode))
        return self.classifier(x, mode, rng)

    __call__ = forward

    def predict(self, x: Tensor, batch_size: int = 256) -> np.ndarray:
        with no_grad():
            out = [predict_from_logits(self.forward(Tensor(x.data[i:i + batch_size]), "eval").data)
                   for i in range(0, x.shape[0], batch_size)]
        return np.concatenate(out)


def predict_from_logits(logits: np.ndarray) -> np.ndarray:
    """Row-wise argmax; ties go to the lowest class index."""
    return np.asarray(logits).argmax(axis=1)


def build(spec: NetworkSpec, rng: np.random.Generator) -> Network:
    try:
        factory = BACKBONES[spec.backbone]
    except KeyError:
        raise ConfigError(f"unknown backbone {spec.backbone!r}") from None
    if spec.variant == "bam_cm":
        head = BandAttention(spec.bam_config(), rng)
    elif spec.variant == "se_cm":
        head = SqueezeExcitation(spec.bands, spec.r, rng)
    else:
        head = None
    net = Network(spec, head, factory(spec, rng))
    heads = [layer for layer in (net.head, net.classifier) if isinstance(layer, (BandAttention, SqueezeExcitation))]
    if len(heads) != (0 if spec.variant == "cm" else 1):
        raise ConfigError(f"variant {spec.variant} must carry exactly one attention head, found {len(heads)}")
    return net


def with_variant(spec: NetworkSpec, variant: str) -> NetworkSpec:
    return replace(spec, variant=variant)
