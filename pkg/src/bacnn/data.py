"""Hyperspectral cube ingestion, patch extraction and train/test sampling.

Container formats (all little-endian):

* cube:   ``HSC1 <h> <w> <c>\\n`` then ``h*w*c`` float32, band-interleaved by pixel
* labels: ``LBL1 <h> <w> <k>\\n`` then ``h*w`` uint16, 0 = unlabeled, 1..k = classes
"""

from __future__ import annotations

import hashlib
import logging
from dataclasses import dataclass, field
from fractions import Fraction

import numpy as np

from .errors import ContractError, DataError, FormatError
from .tensor import Tensor

log = logging.getLogger(__name__)

# documented labeled-pixel totals, used only for a warning
KNOWN_TOTALS = {"indian": 10249, "ksc": 5211}


@dataclass
class HsiCube:
    values: np.ndarray  # [h, w, c] float64

    @property
    def h(self) -> int:
        return self.values.shape[0]

    @property
    def w(self) -> int:
        return self.values.shape[1]

    @property
    def c(self) -> int:
        return self.values.shape[2]


@dataclass
class LabelMap:
    labels: np.ndarray  # [h, w] int, 0 = unlabeled
    k: int

    def class_counts(self) -> np.ndarray:
        """Labeled pixels per class, index 0 = class 1."""
        return np.bincount(self.labels.ravel(), minlength=self.k + 1)[1:self.k + 1]


def _read_header(fh, magic: str, path) -> list[int]:
    line = fh.readline(256)
    parts = line.decode("ascii", errors="replace").split()
    if not parts or parts[0] != magic:
        raise FormatError(f"{path}: bad magic, expected {magic}")
    try:
        dims = [int(p) for p in parts[1:]]
    except ValueError:
        raise FormatError(f"{path}: malformed header {line!r}") from None
    if len(dims) != 3 or any(d < 1 for d in dims):
        raise FormatError(f"{path}: malformed header {line!r}")
    return dims


def save_cube(cube: HsiCube, path) -> None:
    with open(path, "wb") as fh:
        fh.write(f"HSC1 {cube.h} {cube.w} {cube.c}\n".encode("ascii"))
        fh.write(np.ascontiguousarray(cube.values, dtype="<f4").tobytes())


def load_cube(path) -> HsiCube:
    with open(path, "rb") as fh:
        h, w, c = _read_header(fh, "HSC1", path)
        payload = fh.read()
    expected = 4 * h * w * c
    if len(payload) != expected:
        raise FormatError(f"{path}: header says {h}x{w}x{c} ({expected} bytes) but payload has {len(payload)} bytes")
    values = np.frombuffer(payload, dtype="<f4").reshape(h, w, c).astype(np.float64)
    if not np.all(np.isfinite(values)):
        raise FormatError(f"{path}: cube contains non-finite values")
    return HsiCube(values)


def save_labels(labels: LabelMap, path) -> None:
    h, w = labels.labels.shape
    with open(path, "wb") as fh:
        fh.write(f"LBL1 {h} {w} {labels.k}\n".encode("ascii"))
        fh.write(np.ascontiguousarray(labels.labels, dtype="<u2").tobytes())


def load_labels(path) -> LabelMap:
    with open(path, "rb") as fh:
        h, w, k = _read_header(fh, "LBL1", path)
        payload = fh.read()
    if len(payload) != 2 * h * w:
        raise FormatError(f"{path}: header says {h}x{w} ({2 * h * w} bytes) but payload has {len(payload)} bytes")
    grid = np.frombuffer(payload, dtype="<u2").reshape(h, w).astype(np.int64)
    if grid.max() > k:
        raise FormatError(f"{path}: label {grid.max()} exceeds declared class count {k}")
    return LabelMap(grid, k)


def check_pair(cube: HsiCube, labels: LabelMap, dataset: str | None = None) -> None:
    if (cube.h, cube.w) != labels.labels.shape:
        raise FormatError(f"cube is {cube.h}x{cube.w} but label map is {labels.labels.shape[0]}x{labels.labels.shape[1]}")
    if dataset in KNOWN_TOTALS:
        n = int((labels.labels > 0).sum())
        if n != KNOWN_TOTALS[dataset]:
            log.warning("%s label map has %d labeled pixels; the documented total is %d", dataset, n, KNOWN_TOTALS[dataset])


def file_digest(path) -> str:
    h = hashlib.sha256()
    with open(path, "rb") as fh:
        for chunk in iter(lambda: fh.read(1 << 20), b""):
            h.update(chunk)
    return h.hexdigest()


def normalize_bands(cube: HsiCube, pixels: np.ndarray | None = None) -> HsiCube:
    """Standardize every band: ``(v - mean) / (std + 1e-8)``.

    Statistics come from all pixels, or from the ``[m, 2]`` row/column
    coordinates in ``pixels`` when given (e.g. training pixels only).
    """
    v = cube.values
    sample = v.reshape(-1, cube.c) if pixels is None else v[pixels[:, 0], pixels[:, 1]]
    mu = sample.mean(axis=0)
    sigma = sample.std(axis=0)
    return HsiCube((v - mu) / (sigma + 1e-8))


# ---------------------------------------------------------------------------
# patches


@dataclass
class PatchSet:
    """Labeled patches, materialized lazily from a mirror-padded cube.

    ``coords`` are the (row, col) positions of the centre pixels in the
    original cube; ``labels`` are zero-based class indices.
    """

    source: np.ndarray
    coords: np.ndarray
    labels: np.ndarray
    size: int
    num_classes: int
    split: str = "all"
    provenance: dict = field(default_factory=dict)

    def __len__(self) -> int:
        return len(self.labels)

    @property
    def bands(self) -> int:
        return self.source.shape[2]

    def patch_array(self, idx=None) -> np.ndarray:
        coords = self.coords if idx is None else self.coords[np.asarray(idx)]
        s = self.size
        rows = coords[:, 0][:, None] + np.arange(s)
        cols = coords[:, 1][:, None] + np.arange(s)
        return self.source[rows[:, :, None], cols[:, None, :]]

    def patches(self, idx=None) -> Tensor:
        return Tensor(self.patch_array(idx))

    def class_counts(self) -> np.ndarray:
        return np.bincount(self.labels, minlength=self.num_classes)

    def subset(self, idx, split: str | None = None, **provenance) -> "PatchSet":
        idx = np.asarray(idx, dtype=np.int64)
        prov = dict(self.provenance)
        prov.update(provenance)
        return PatchSet(self.source, self.coords[idx], self.labels[idx], self.size, self.num_classes,
                        split or self.split, prov)


def extract_patches(cube: HsiCube, labels: LabelMap, size: int = 15) -> PatchSet:
    """One ``size x size`` patch per labeled pixel, in row-major pixel order."""
    if size < 1 or size % 2 == 0:
        raise ContractError(f"patch size must be odd, got {size}")
    if (cube.h, cube.w) != labels.labels.shape:
        raise FormatError("cube and label map extents differ")
    half = size // 2
    padded = np.pad(cube.values, ((half, half), (half, half), (0, 0)), mode="reflect")
    coords = np.argwhere(labels.labels > 0)
    cls = labels.labels[coords[:, 0], coords[:, 1]] - 1
    return PatchSet(padded, coords, cls.astype(np.int64), size, labels.k, "all", {"patch": size})


def _ceil_frac(count: int, fraction: Fraction) -> int:
    return -(-count * fraction.numerator // fraction.denominator)


def _per_class_split(ps: PatchSet, take_for, rng: np.random.Generator, rule: str, seed=None):
    train_idx, test_idx = [], []
    for k in range(ps.num_classes):
        members = np.flatnonzero(ps.labels == k)
        if members.size == 0:
            raise DataError(f"class {k + 1} has no labeled pixels")
        chosen = rng.permutation(members)
        take = take_for(members.size)
        train_idx.append(np.sort(chosen[:take]))
        test_idx.append(np.sort(chosen[take:]))
    prov = {"split_rule": rule, "seed": seed}
    return (ps.subset(np.concatenate(train_idx), "train", **prov),
            ps.subset(np.concatenate(test_idx), "test", **prov))


def indian_pines_train_count(count: int, fraction: Fraction = Fraction(3, 10), cap: int = 80) -> int:
    """Smaller classes give up ``ceil(30%)`` of their pixels; richer ones exactly ``cap``."""
    return min(_ceil_frac(count, fraction), cap)


def split_indian_pines(ps: PatchSet, rng: np.random.Generator, seed=None) -> tuple[PatchSet, PatchSet]:
    return _per_class_split(ps, indian_pines_train_count, rng, "indian:min(ceil(0.3n),80)", seed)


def split_fraction(ps: PatchSet, fraction: float = 0.10, rng: np.random.Generator | None = None,
                   seed=None) -> tuple[PatchSet, PatchSet]:
    """Stratified split with ``ceil(fraction * n)`` training pixels per class."""
    if not 0 < fraction < 1:
        raise ContractError(f"fraction must lie in (0, 1), got {fraction}")
    if rng is None:
        raise ContractError("split_fraction needs an rng")
    frac = Fraction(str(fraction))
    return _per_class_split(ps, lambda n: _ceil_frac(n, frac), rng, f"fraction:{fraction}", seed)


def subsample_per_class(ps: PatchSet, fraction: float, rng: np.random.Generator) -> PatchSet:
    """Keep ``ceil(fraction * n)`` random samples of each class."""
    if not 0 < fraction <= 1:
        raise ContractError(f"fraction must lie in (0, 1], got {fraction}")
    frac = Fraction(str(fraction))
    keep = []
    for k in range(ps.num_classes):
        members = np.flatnonzero(ps.labels == k)
        keep.append(np.sort(rng.permutation(members)[:_ceil_frac(members.size, frac)]))
    return ps.subset(np.concatenate(keep), subsample=fraction)


def replicate_minority(train: PatchSet, target: int | dict, rng: np.random.Generator) -> PatchSet:
    """Oversample classes below ``target`` by whole-copy replication.

    A class with ``m`` samples is repeated ``target // m`` times and topped
    up with a random draw (without replacement) of the remainder. ``target``
    may be a single count or a per-class mapping.
    """
    out = []
    for k in range(train.num_classes):
        members = np.flatnonzero(train.labels == k)
        if members.size == 0:
            raise DataError(f"class {k + 1} has no training samples to replicate")
        goal = target.get(k, members.size) if isinstance(target, dict) else int(target)
        if members.size >= goal:
            out.append(members)
            continue
        reps, rest = divmod(goal, members.size)
        out.append(np.concatenate([np.tile(members, reps), rng.choice(members, rest, replace=False)]))
    tag = "per-class" if isinstance(target, dict) else int(target)
    return train.subset(np.concatenate(out), replicate_target=tag)
