"""Adam, the training loop, evaluation and the repeated-run ablation harness."""

from __future__ import annotations

import csv
import logging
import os
from dataclasses import dataclass, field, replace
from typing import Callable, Sequence

import numpy as np

from .data import PatchSet, replicate_minority, split_fraction, split_indian_pines, subsample_per_class
from .errors import BacnnError, ConfigError, ContractError, TrainingError
from .layers import cross_entropy, load_checkpoint, save_checkpoint
from .metrics import Aggregate, MetricsReport, aggregate, table_csv
from .model import Network, NetworkSpec, build, predict_from_logits
from .seeding import stream
from .tensor import Tensor, backward

log = logging.getLogger(__name__)


@dataclass
class AdamState:
    lr: float = 1e-4
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    t: int = 0
    m: dict[str, np.ndarray] = field(default_factory=dict)
    v: dict[str, np.ndarray] = field(default_factory=dict)

    def entries(self) -> dict[str, np.ndarray]:
        out = {"adam.t": np.array([float(self.t)])}
        out.update({f"adam.m.{k}": a for k, a in self.m.items()})
        out.update({f"adam.v.{k}": a for k, a in self.v.items()})
        return out

    def load_entries(self, entries: dict[str, np.ndarray]) -> None:
        self.t = int(entries["adam.t"][0])
        self.m = {k[len("adam.m."):]: np.array(a) for k, a in entries.items() if k.startswith("adam.m.")}
        self.v = {k[len("adam.v."):]: np.array(a) for k, a in entries.items() if k.startswith("adam.v.")}


def adam_step(params: dict[str, Tensor], state: AdamState, grads: dict[str, np.ndarray] | None = None) -> None:
    """One bias-corrected Adam update, in place.

    Gradients default to each parameter's ``grad``; a missing gradient
    counts as zero.
    """
    b1, b2 = state.beta1, state.beta2
    updates = {}
    for name, p in params.items():
        g = grads[name] if grads is not None else p.grad
        g = np.zeros_like(p.data) if g is None else np.asarray(g, dtype=np.float64)
        if g.shape != p.shape:
            raise ContractError(f"gradient for {name} has shape {g.shape}, parameter is {p.shape}")
        if not np.all(np.isfinite(g)):
            raise TrainingError(f"non-finite gradient for parameter {name}")
        updates[name] = g
    state.t += 1
    c1 = 1.0 - b1 ** state.t
    c2 = 1.0 - b2 ** state.t
    for name, g in updates.items():
        p = params[name]
        m = state.m.get(name)
        v = state.v.get(name)
        m = (1 - b1) * g if m is None else b1 * m + (1 - b1) * g
        v = (1 - b2) * g * g if v is None else b2 * v + (1 - b2) * g * g
        state.m[name], state.v[name] = m, v
        p.data -= state.lr * (m / c1) / (np.sqrt(v / c2) + state.eps)
        if not np.all(np.isfinite(p.data)):
            raise TrainingError(f"parameter {name} became non-finite after step {state.t}")


@dataclass(frozen=True)
class TrainConfig:
    epochs: int = 1000
    batch_size: int = 64
    seed: int = 0
    r: float = 2.0
    variant: str = "bam_cm"
    shuffle: bool = True
    lr: float = 1e-4
    mask_activation: str = "sigmoid"
    checkpoint_every: int = 0

    def __post_init__(self):
        if self.epochs < 1:
            raise ConfigError(f"epochs must be >= 1, got {self.epochs}")
        if self.batch_size < 1:
            raise ConfigError(f"batch size must be >= 1, got {self.batch_size}")


@dataclass
class TrainResult:
    net: Network
    history: list[tuple[int, float, float]]
    optimizer: AdamState


def train(net: Network, trainset: PatchSet, cfg: TrainConfig, checkpoint_dir=None,
          on_epoch: Callable[[int, float, float], None] | None = None) -> TrainResult:
    """Minibatch cross-entropy training with Adam.

    Data order and dropout noise come from separate streams of ``cfg.seed``.
    History rows are ``(epoch, mean loss, train accuracy)`` computed from the
    train-mode forward passes.
    """
    if trainset.bands != net.spec.bands:
        raise ConfigError(f"training set has {trainset.bands} bands, network expects {net.spec.bands}")
    if trainset.size != net.spec.patch:
        raise ConfigError(f"training patches are {trainset.size}px, network expects {net.spec.patch}px")
    if len(trainset) == 0:
        raise ContractError("empty training set")
    order_rng = stream(cfg.seed, "shuffle")
    drop_rng = stream(cfg.seed, "dropout")
    opt = AdamState(lr=cfg.lr)
    params = net.parameters()
    n = len(trainset)
    history = []
    for epoch in range(1, cfg.epochs + 1):
        order = order_rng.permutation(n) if cfg.shuffle else np.arange(n)
        loss_sum = 0.0
        correct = 0
        try:
            for start in range(0, n, cfg.batch_size):
                idx = order[start:start + cfg.batch_size]
                y = trainset.labels[idx]
                logits = net.forward(trainset.patches(idx), "train", drop_rng)
                loss = cross_entropy(logits, y)
                net.zero_grad()
                backward(loss)
                adam_step(params, opt)
                loss_sum += loss.item() * idx.size
                correct += int((predict_from_logits(logits.data) == y).sum())
        except BacnnError as e:
            raise type(e)(f"epoch {epoch}: {e}") from e
        row = (epoch, loss_sum / n, correct / n)
        history.append(row)
        if on_epoch is not None:
            on_epoch(*row)
        if checkpoint_dir is not None and cfg.checkpoint_every and epoch % cfg.checkpoint_every == 0:
            save_training_checkpoint(net, opt, os.path.join(checkpoint_dir, f"epoch{epoch:05d}.ckpt"))
    return TrainResult(net, history, opt)


def evaluate(net: Network, testset: PatchSet, batch_size: int = 256) -> tuple[np.ndarray, MetricsReport]:
    pred = np.concatenate([net.predict(testset.patches(np.arange(i, min(i + batch_size, len(testset)))))
                           for i in range(0, len(testset), batch_size)])
    return pred, MetricsReport.from_predictions(testset.labels, pred, net.spec.num_classes)


def write_history_csv(history, path) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["epoch", "loss", "train_acc"])
        for epoch, loss, acc in history:
            w.writerow([epoch, repr(float(loss)), repr(float(acc))])


def save_training_checkpoint(net: Network, opt: AdamState | None, path) -> None:
    entries = dict(net.state())
    if opt is not None:
        entries.update(opt.entries())
    save_checkpoint(entries, path)


def load_training_checkpoint(net: Network, path) -> AdamState | None:
    entries = load_checkpoint(path)
    opt_entries = {k: v for k, v in entries.items() if k.startswith("adam.")}
    net.load_state({k: v for k, v in entries.items() if not k.startswith("adam.")})
    if not opt_entries:
        return None
    opt = AdamState()
    opt.load_entries(opt_entries)
    return opt


# ---------------------------------------------------------------------------
# ablation


@dataclass
class DatasetSetup:
    """A dataset plus the rules for drawing one train/test split from a seed.

    ``split`` is ``"indian"`` (min(ceil(30%), 80) per class) or ``"fraction"``.
    ``train_subsample`` keeps only that fraction of each class's training
    pixels after the split; replication happens last.
    """

    name: str
    patches: PatchSet
    split: str = "fraction"
    fraction: float = 0.10
    replicate_target: int | None = None
    train_subsample: float | None = None

    def make_split(self, seed: int) -> tuple[PatchSet, PatchSet]:
        rng = stream(seed, "split")
        if self.split == "indian":
            train_set, test_set = split_indian_pines(self.patches, rng, seed)
        elif self.split == "fraction":
            train_set, test_set = split_fraction(self.patches, self.fraction, rng, seed)
        else:
            raise ConfigError(f"unknown split rule {self.split!r}")
        if self.train_subsample is not None:
            train_set = subsample_per_class(train_set, self.train_subsample, stream(seed, "subsample"))
        if self.replicate_target:
            train_set = replicate_minority(train_set, self.replicate_target, stream(seed, "replicate"))
        return train_set, test_set


@dataclass
class RunRecord:
    dataset: str
    variant: str
    seed: int
    report: MetricsReport
    history: list


@dataclass
class AblationReport:
    runs: list[RunRecord]
    tables: dict[str, dict[str, Aggregate]]

    def csv(self, dataset: str) -> str:
        return table_csv(self.tables[dataset])

    def oa(self, dataset: str, variant: str) -> list[float]:
        return [r.report.oa for r in self.runs if r.dataset == dataset and r.variant == variant]


def network_spec_for(setup: DatasetSetup, cfg: TrainConfig, variant: str, **overrides) -> NetworkSpec:
    ps = setup.patches
    return NetworkSpec(variant=variant, num_classes=ps.num_classes, bands=ps.bands, patch=ps.size, r=cfg.r,
                       mask_activation=cfg.mask_activation, **overrides)


def run_once(setup: DatasetSetup, cfg: TrainConfig, variant: str, seed: int, **spec_overrides) -> RunRecord:
    train_set, test_set = setup.make_split(seed)
    net = build(network_spec_for(setup, cfg, variant, **spec_overrides), stream(seed, "init"))
    result = train(net, train_set, replace(cfg, seed=seed, variant=variant))
    _, report = evaluate(net, test_set)
    return RunRecord(setup.name, variant, seed, report, result.history)


def run_ablation(datasets: Sequence[DatasetSetup], variants: Sequence[str], repeats: int, cfg: TrainConfig,
                 progress: Callable[[RunRecord], None] | None = None, **spec_overrides) -> AblationReport:
    """Train and score every (dataset, variant) pair ``repeats`` times.

    Repeat ``i`` uses seed ``cfg.seed + i`` for every variant, so variants
    are compared on identical splits.
    """
    if repeats < 1:
        raise ContractError(f"repeats must be >= 1, got {repeats}")
    runs = []
    tables: dict[str, dict[str, Aggregate]] = {}
    for setup in datasets:
        tables[setup.name] = {}
        for variant in variants:
            reports = []
            for i in range(repeats):
                rec = run_once(setup, cfg, variant, cfg.seed + i, **spec_overrides)
                log.info("%s %s seed=%d OA=%.4f", setup.name, variant, rec.seed, rec.report.oa)
                if progress is not None:
                    progress(rec)
                runs.append(rec)
                reports.append(rec.report)
            tables[setup.name][variant] = aggregate(reports)
    return AblationReport(runs, tables)
