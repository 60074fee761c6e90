from __future__ import annotations

from dataclasses import dataclass

import numpy as np


@dataclass
class Metrics:
    accuracy: float
    macro_f1: float
    precision: np.ndarray
    recall: np.ndarray
    f1: np.ndarray
    confusion: np.ndarray  # rows = true class, columns = predicted
    absent_classes: tuple[int, ...]  # never occur in the ground truth

    @property
    def n_classes(self) -> int:
        return len(self.f1)


def _ratio(num, den):
    return np.divide(num, den, out=np.zeros_like(num, dtype=float), where=den > 0)


def classification_metrics(y_true, y_pred, n_classes: int) -> Metrics:
    """Accuracy, per-class precision/recall/F1 and unweighted macro F1.

    A class with no true samples gets F1 = 0 and is listed in
    ``absent_classes``; it still counts in the macro mean.
    """
    y_true = np.asarray(y_true, dtype=np.int64)
    y_pred = np.asarray(y_pred, dtype=np.int64)
    cm = np.zeros((n_classes, n_classes), dtype=np.int64)
    np.add.at(cm, (y_true, y_pred), 1)
    tp = np.diag(cm).astype(float)
    support = cm.sum(axis=1)
    predicted = cm.sum(axis=0)
    precision = _ratio(tp, predicted.astype(float))
    recall = _ratio(tp, support.astype(float))
    f1 = _ratio(2 * precision * recall, precision + recall)
    total = cm.sum()
    return Metrics(
        accuracy=float(tp.sum() / total) if total else 0.0,
        macro_f1=float(f1.mean()) if n_classes else 0.0,
        precision=precision,
        recall=recall,
        f1=f1,
        confusion=cm,
        absent_classes=tuple(int(c) for c in np.flatnonzero(support == 0)),
    )
