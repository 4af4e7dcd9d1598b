"""Confusion-matrix metrics: UAR, ACC, and F1.

UAR averages recall over classes that actually occur in the reference;
F1 averages per-class F1 over every class on the axis, scoring 0 where
precision + recall is 0. A weighted-F1 switch exists because the
averaging mode matters for imbalanced data.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Sequence


class EmptyMatrix(ValueError):
    pass


@dataclass(frozen=True)
class ConfusionMatrix:
    """Square count matrix; rows are the reference, columns the prediction."""

    labels: tuple[str, ...]
    counts: tuple[tuple[int, ...], ...]

    def __post_init__(self) -> None:
        n = len(self.labels)
        if len(self.counts) != n or any(len(row) != n for row in self.counts):
            raise ValueError("confusion matrix must be square on its label axis")
        if any(c < 0 for row in self.counts for c in row):
            raise ValueError("confusion matrix counts must be non-negative")

    @property
    def total(self) -> int:
        return sum(sum(row) for row in self.counts)

    @classmethod
    def from_pairs(cls, labels: Sequence[str], pairs: Sequence[tuple[str, str]]) -> "ConfusionMatrix":
        index = {label: i for i, label in enumerate(labels)}
        counts = [[0] * len(labels) for _ in labels]
        for ref, pred in pairs:
            counts[index[ref]][index[pred]] += 1
        return cls(labels=tuple(labels), counts=tuple(tuple(row) for row in counts))

    def to_record(self) -> dict:
        return {"labels": list(self.labels), "counts": [list(row) for row in self.counts]}


@dataclass(frozen=True)
class MetricsReport:
    uar: float
    acc: float
    f1: float

    def to_record(self) -> dict:
        return {"uar": self.uar, "acc": self.acc, "f1": self.f1}


def evaluate(cm: ConfusionMatrix, average: str = "macro") -> MetricsReport:
    """Compute UAR, ACC, and F1 from a confusion matrix.

    Args:
        cm: square confusion matrix with reference rows.
        average: "macro" (default) or "weighted" F1 averaging.

    Raises:
        EmptyMatrix: if the matrix holds no observations.
    """
    if average not in ("macro", "weighted"):
        raise ValueError(f"unknown F1 average {average!r}")
    n = len(cm.labels)
    total = cm.total
    if total == 0:
        raise EmptyMatrix("confusion matrix has no observations")

    row_sums = [sum(cm.counts[i]) for i in range(n)]
    col_sums = [sum(cm.counts[i][j] for i in range(n)) for j in range(n)]
    diag = [cm.counts[i][i] for i in range(n)]

    acc = sum(diag) / total

    recalls = [diag[i] / row_sums[i] for i in range(n) if row_sums[i] > 0]
    uar = sum(recalls) / len(recalls)

    f1s = []
    for i in range(n):
        precision = diag[i] / col_sums[i] if col_sums[i] > 0 else 0.0
        recall = diag[i] / row_sums[i] if row_sums[i] > 0 else 0.0
        denom = precision + recall
        f1s.append(2.0 * precision * recall / denom if denom > 0 else 0.0)
    if average == "macro":
        f1 = sum(f1s) / n
    else:
        f1 = sum(f1s[i] * row_sums[i] for i in range(n)) / total

    return MetricsReport(uar=uar, acc=acc, f1=f1)
