"""Dataset-level statistics: label distributions, change rate, transitions.

All percentages are rounded half-up to 2 decimals. The label axis is the
fixed alphabetical order from labels.LABELS so serialized reports are
stable.
"""

from __future__ import annotations

import json
from dataclasses import dataclass
from decimal import ROUND_HALF_UP, Decimal
from pathlib import Path
from typing import Mapping, Optional

from .labels import LABELS, EmotionLabel


class KeyMismatch(ValueError):
    def __init__(self, only_old: set, only_new: set) -> None:
        sample_old = sorted(only_old)[:5]
        sample_new = sorted(only_new)[:5]
        super().__init__(
            f"label maps cover different keys: {len(only_old)} only in old "
            f"(e.g. {sample_old}), {len(only_new)} only in new (e.g. {sample_new})"
        )
        self.only_old = only_old
        self.only_new = only_new


def round_pct(value: float) -> float:
    return float(Decimal(repr(value)).quantize(Decimal("0.01"), rounding=ROUND_HALF_UP))


@dataclass(frozen=True)
class LabelDistribution:
    split: str
    counts: Mapping[EmotionLabel, int]
    total: int

    def __post_init__(self) -> None:
        if sum(self.counts.values()) != self.total:
            raise ValueError("distribution counts do not sum to total")

    def to_record(self) -> dict:
        return {
            "split": self.split,
            "counts": {label.value: self.counts.get(label, 0) for label in LABELS},
            "total": self.total,
        }


@dataclass(frozen=True)
class ChangeRateReport:
    split: str
    n_changed: int
    n_total: int
    delta_pct: float

    def to_record(self) -> dict:
        return {
            "split": self.split,
            "n_changed": self.n_changed,
            "n_total": self.n_total,
            "delta_pct": self.delta_pct,
        }


@dataclass(frozen=True)
class TransitionMatrix:
    """7x7 counts; rows are the old label, columns the new label."""

    labels: tuple[EmotionLabel, ...]
    counts: tuple[tuple[int, ...], ...]

    @property
    def total(self) -> int:
        return sum(sum(row) for row in self.counts)

    @property
    def trace(self) -> int:
        return sum(self.counts[i][i] for i in range(len(self.labels)))

    def row_sums(self) -> dict[EmotionLabel, int]:
        return {label: sum(self.counts[i]) for i, label in enumerate(self.labels)}

    def col_sums(self) -> dict[EmotionLabel, int]:
        n = len(self.labels)
        return {
            label: sum(self.counts[i][j] for i in range(n))
            for j, label in enumerate(self.labels)
        }

    def to_record(self) -> dict:
        return {
            "labels": [label.value for label in self.labels],
            "counts": [list(row) for row in self.counts],
        }

    def to_csv(self, normalized: bool = False) -> str:
        header = "old\\new," + ",".join(label.value for label in self.labels)
        lines = [header]
        for i, label in enumerate(self.labels):
            row = self.counts[i]
            if normalized:
                total = sum(row)
                cells = [f"{(c / total if total else 0.0):.4f}" for c in row]
            else:
                cells = [str(c) for c in row]
            lines.append(label.value + "," + ",".join(cells))
        return "\n".join(lines) + "\n"


def distribution(labels_by_key: Mapping, split: str) -> LabelDistribution:
    """Exact label counts over one split's label map."""
    counts = {label: 0 for label in LABELS}
    for value in labels_by_key.values():
        counts[value] += 1
    return LabelDistribution(split=split, counts=counts, total=len(labels_by_key))


def _check_keys(old: Mapping, new: Mapping) -> None:
    if old.keys() != new.keys():
        only_old = set(old.keys()) - set(new.keys())
        only_new = set(new.keys()) - set(old.keys())
        raise KeyMismatch(only_old, only_new)


def change_rate(old: Mapping, new: Mapping, split: str = "") -> ChangeRateReport:
    """Fraction of keys whose label differs, as a half-up 2-decimal percentage."""
    _check_keys(old, new)
    n_changed = sum(1 for k in old if old[k] != new[k])
    n_total = len(old)
    pct = round_pct(100.0 * n_changed / n_total) if n_total else 0.0
    return ChangeRateReport(split=split, n_changed=n_changed, n_total=n_total, delta_pct=pct)


def transitions(old: Mapping, new: Mapping) -> TransitionMatrix:
    """counts[i][j] = number of keys moving from label i to label j."""
    _check_keys(old, new)
    index = {label: i for i, label in enumerate(LABELS)}
    counts = [[0] * len(LABELS) for _ in LABELS]
    for k in old:
        counts[index[old[k]]][index[new[k]]] += 1
    return TransitionMatrix(labels=LABELS, counts=tuple(tuple(row) for row in counts))


def balance_ratio(
    train: LabelDistribution, test: LabelDistribution
) -> dict[str, Optional[float]]:
    """Per-label train/test count ratio plus the aggregate totals ratio."""
    out: dict[str, Optional[float]] = {}
    for label in LABELS:
        n_test = test.counts.get(label, 0)
        n_train = train.counts.get(label, 0)
        out[label.value] = round(n_train / n_test, 2) if n_test else None
    out["overall"] = round(train.total / test.total, 2) if test.total else None
    return out


def distribution_text(dists: list[LabelDistribution]) -> str:
    """Aligned-column text rendering of one or more distributions."""
    width = max(len(label.value) for label in LABELS)
    header = "label".ljust(width) + "".join(f"{d.split:>10}" for d in dists)
    lines = [header]
    for label in LABELS:
        lines.append(
            label.value.ljust(width)
            + "".join(f"{d.counts.get(label, 0):>10}" for d in dists)
        )
    lines.append("total".ljust(width) + "".join(f"{d.total:>10}" for d in dists))
    return "\n".join(lines) + "\n"


def save_report(report: dict, path: Path) -> None:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_text(json.dumps(report, indent=2, ensure_ascii=False) + "\n", encoding="utf-8")
