"""Confusion matrix, per-class precision/recall/F1, weighted F1 and the
``Uid,Sentiment`` prediction file."""

from __future__ import annotations

import csv
from dataclasses import dataclass
from typing import Sequence

import numpy as np

from .corpus import Sentiment

__all__ = [
    "LengthMismatch", "EmptyInput", "ClassMetrics", "EvalReport",
    "confusion_matrix", "weighted_f1", "evaluate",
    "write_predictions", "read_predictions",
]

CLASSES = tuple(Sentiment)


class LengthMismatch(ValueError):
    pass


class EmptyInput(ValueError):
    pass


def _check(y_true, y_pred):
    if len(y_true) != len(y_pred):
        raise LengthMismatch(f"{len(y_true)} labels vs {len(y_pred)} predictions")
    if len(y_true) == 0:
        raise EmptyInput("no examples")


def confusion_matrix(y_true: Sequence[Sentiment], y_pred: Sequence[Sentiment]) -> np.ndarray:
    """3x3 counts; rows are true classes, columns predictions, both in
    positive/negative/neutral order."""
    _check(y_true, y_pred)
    cm = np.zeros((3, 3), dtype=np.int64)
    for t, p in zip(y_true, y_pred):
        cm[int(t), int(p)] += 1
    return cm


@dataclass(frozen=True)
class ClassMetrics:
    precision: float
    recall: float
    f1: float
    support: int


def _safe_div(a, b):
    return a / b if b else 0.0


def _per_class(cm: np.ndarray) -> list[ClassMetrics]:
    out = []
    for c in range(3):
        tp = int(cm[c, c])
        p = _safe_div(tp, int(cm[:, c].sum()))
        r = _safe_div(tp, int(cm[c, :].sum()))
        f1 = _safe_div(2 * p * r, p + r)
        out.append(ClassMetrics(p, r, f1, int(cm[c, :].sum())))
    return out


def _weighted(per_class: list[ClassMetrics]) -> float:
    n = sum(m.support for m in per_class)
    return sum(m.support / n * m.f1 for m in per_class)


@dataclass(frozen=True)
class EvalReport:
    confusion: np.ndarray
    per_class: tuple[ClassMetrics, ...]
    weighted_f1: float
    accuracy: float

    @classmethod
    def from_confusion(cls, cm) -> "EvalReport":
        cm = np.asarray(cm, dtype=np.int64)
        total = int(cm.sum())
        if total == 0:
            raise EmptyInput("empty confusion matrix")
        per_class = _per_class(cm)
        return cls(cm, tuple(per_class), _weighted(per_class), int(np.trace(cm)) / total)

    def to_text(self) -> str:
        """Flat ``key=value`` lines, stable across runs."""
        lines = []
        for i, t in enumerate(CLASSES):
            for j, p in enumerate(CLASSES):
                lines.append(f"confusion.{t}.{p}={int(self.confusion[i, j])}")
        for c, m in zip(CLASSES, self.per_class):
            lines.append(f"{c}.precision={m.precision:.6f}")
            lines.append(f"{c}.recall={m.recall:.6f}")
            lines.append(f"{c}.f1={m.f1:.6f}")
            lines.append(f"{c}.support={m.support}")
        lines.append(f"accuracy={self.accuracy:.6f}")
        lines.append(f"weighted_f1={self.weighted_f1:.6f}")
        return "\n".join(lines) + "\n"


def evaluate(y_true: Sequence[Sentiment], y_pred: Sequence[Sentiment]) -> EvalReport:
    return EvalReport.from_confusion(confusion_matrix(y_true, y_pred))


def weighted_f1(y_true: Sequence[Sentiment], y_pred: Sequence[Sentiment]) -> float:
    """Support-weighted mean of the three per-class F1 scores; precision or
    recall with a zero denominator counts as 0."""
    return evaluate(y_true, y_pred).weighted_f1


def write_predictions(tweets, preds: Sequence[Sentiment], path) -> None:
    if len(tweets) != len(preds):
        raise LengthMismatch(f"{len(tweets)} tweets vs {len(preds)} predictions")
    with open(path, "w", encoding="utf-8", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["Uid", "Sentiment"])
        for tw, p in zip(tweets, preds):
            w.writerow([tw.uid, str(Sentiment(p))])


def read_predictions(path) -> list[tuple[str, Sentiment]]:
    with open(path, encoding="utf-8", newline="") as fh:
        rows = list(csv.reader(fh))
    if not rows or [c.strip() for c in rows[0]] != ["Uid", "Sentiment"]:
        raise ValueError(f"{path}: missing Uid,Sentiment header")
    return [(uid, Sentiment.parse(label)) for uid, label in rows[1:]]
