"""Confusion matrices, OA / AA / Cohen's kappa, and repeat aggregation.

The criteria are ratios of integer counts, so they are evaluated in exact
rational arithmetic and rounded to float once.
"""

from __future__ import annotations

import csv
import io
from dataclasses import dataclass
from fractions import Fraction
from typing import Sequence

import numpy as np

from .errors import ContractError, MetricError


def confusion(true, pred, k: int) -> np.ndarray:
    """``k x k`` counts with rows = true class, columns = predicted class."""
    true = np.asarray(true, dtype=np.int64).ravel()
    pred = np.asarray(pred, dtype=np.int64).ravel()
    if true.shape != pred.shape:
        raise ContractError(f"truth and prediction lengths differ: {true.size} vs {pred.size}")
    for name, arr in (("true", true), ("pred", pred)):
        if arr.size and (arr.min() < 0 or arr.max() >= k):
            raise ContractError(f"{name} labels must lie in [0, {k})")
    cm = np.zeros((k, k), dtype=np.int64)
    np.add.at(cm, (true, pred), 1)
    return cm


def _check(cm: np.ndarray) -> np.ndarray:
    cm = np.asarray(cm)
    if cm.ndim != 2 or cm.shape[0] != cm.shape[1]:
        raise MetricError(f"confusion matrix must be square, got {cm.shape}")
    if cm.sum() == 0:
        raise MetricError("confusion matrix is empty")
    return cm


def oa(cm) -> float:
    cm = _check(cm)
    return float(Fraction(int(np.trace(cm)), int(cm.sum())))


def _recalls(cm: np.ndarray) -> list[Fraction]:
    rows = cm.sum(axis=1)
    if np.any(rows == 0):
        raise MetricError(f"classes {np.flatnonzero(rows == 0).tolist()} have no samples; per-class accuracy undefined")
    return [Fraction(int(cm[i, i]), int(rows[i])) for i in range(cm.shape[0])]


def per_class_accuracy(cm) -> np.ndarray:
    return np.array([float(r) for r in _recalls(_check(cm))])


def aa(cm) -> float:
    recalls = _recalls(_check(cm))
    return float(sum(recalls) / len(recalls))


def kappa(cm) -> float:
    """Cohen's kappa; when chance agreement is 1 it is 1 for perfect agreement, else 0."""
    cm = _check(cm)
    total = int(cm.sum())
    p_o = Fraction(int(np.trace(cm)), total)
    rows, cols = cm.sum(axis=1), cm.sum(axis=0)
    p_e = Fraction(sum(int(r) * int(c) for r, c in zip(rows, cols)), total * total)
    if p_e == 1:
        return 1.0 if p_o == 1 else 0.0
    return float((p_o - p_e) / (1 - p_e))


@dataclass
class MetricsReport:
    confusion: np.ndarray
    per_class: np.ndarray
    oa: float
    aa: float
    kappa: float

    @classmethod
    def from_predictions(cls, true, pred, k: int) -> "MetricsReport":
        cm = confusion(true, pred, k)
        return cls(cm, per_class_accuracy(cm), oa(cm), aa(cm), kappa(cm))

    def vector(self) -> np.ndarray:
        """Per-class accuracies followed by OA, AA, kappa."""
        return np.concatenate([self.per_class, [self.oa, self.aa, self.kappa]])


@dataclass
class Aggregate:
    mean: np.ndarray
    std: np.ndarray
    repeats: int

    @property
    def k(self) -> int:
        return self.mean.size - 3


def aggregate(reports: Sequence[MetricsReport]) -> Aggregate:
    """Cellwise mean and population standard deviation across repeats."""
    if not reports:
        raise ContractError("aggregate needs at least one report")
    vecs = [r.vector() for r in reports]
    if len({v.size for v in vecs}) != 1:
        raise ContractError("reports have inconsistent class counts")
    stack = np.stack(vecs)
    return Aggregate(stack.mean(axis=0), stack.std(axis=0), len(reports))


def row_labels(k: int) -> list[str]:
    return [str(i) for i in range(1, k + 1)] + ["OA", "AA", "Kappa"]


def table_csv(columns: dict[str, Aggregate]) -> str:
    """Render aggregates as a class-by-variant table of ``mean(std)`` percentages."""
    ks = {agg.k for agg in columns.values()}
    if len(ks) != 1:
        raise ContractError("all columns must share one class count")
    k = ks.pop()
    buf = io.StringIO()
    writer = csv.writer(buf, lineterminator="\n")
    writer.writerow(["Class", *columns])
    for i, label in enumerate(row_labels(k)):
        writer.writerow([label, *(f"{100 * a.mean[i]:.2f}({100 * a.std[i]:.2f})" for a in columns.values())])
    return buf.getvalue()
