"""Confusion-matrix metrics: accuracy, per-class F1 and support-weighted F1."""

from typing import Any, List, Optional, Sequence

import numpy as np
from pydantic import BaseModel, ConfigDict, Field, field_validator

from sleepkd.utils.errors import LabelError, MetricError


class ConfusionMatrix(BaseModel):
    """Counts with rows = true class, columns = predicted class."""

    model_config = ConfigDict(arbitrary_types_allowed=True)

    counts: np.ndarray
    class_names: List[str] = Field(default_factory=list)

    @field_validator("counts", mode="before")
    @classmethod
    def validate_counts(cls, v: Any) -> np.ndarray:
        """Square, non-negative integer counts."""
        arr = np.asarray(v, dtype=np.int64)
        if arr.ndim != 2 or arr.shape[0] != arr.shape[1]:
            raise ValueError(f"counts must be a square matrix, got shape {arr.shape}")
        if np.any(arr < 0):
            raise ValueError("counts must be non-negative")
        return arr

    @property
    def n_classes(self) -> int:
        """Number of classes K."""
        return int(self.counts.shape[0])

    @property
    def total(self) -> int:
        """Number of evaluated epochs."""
        return int(self.counts.sum())

    @property
    def support(self) -> np.ndarray:
        """True instances per class (tp + fn)."""
        return self.counts.sum(axis=1)

    def __add__(self, other: "ConfusionMatrix") -> "ConfusionMatrix":
        if self.counts.shape != other.counts.shape:
            raise LabelError("Cannot add confusion matrices of different sizes")
        return ConfusionMatrix(counts=self.counts + other.counts, class_names=self.class_names)

    def to_list(self) -> List[List[int]]:
        """Nested lists for JSON output."""
        return self.counts.tolist()


def confusion(
    true_labels: Sequence[int],
    pred_labels: Sequence[int],
    n_classes: int,
    mask: Optional[Sequence[bool]] = None,
    class_names: Optional[List[str]] = None,
) -> ConfusionMatrix:
    """Count (true, predicted) pairs.

    Args:
        true_labels: Reference labels
        pred_labels: Predicted labels, same length
        n_classes: Number of classes K
        mask: Positions to keep (padded positions are False)
        class_names: Optional display names

    Returns:
        ConfusionMatrix

    Raises:
        LabelError: On length mismatch or an out-of-range label
    """
    y_true = np.asarray(true_labels, dtype=np.int64).reshape(-1)
    y_pred = np.asarray(pred_labels, dtype=np.int64).reshape(-1)
    if y_true.shape != y_pred.shape:
        raise LabelError(f"{len(y_true)} true labels vs {len(y_pred)} predictions")
    if mask is not None:
        keep = np.asarray(mask, dtype=bool).reshape(-1)
        if keep.shape != y_true.shape:
            raise LabelError(f"Mask has {len(keep)} entries for {len(y_true)} labels")
        y_true, y_pred = y_true[keep], y_pred[keep]

    for name, arr in (("true", y_true), ("predicted", y_pred)):
        if arr.size and (arr.min() < 0 or arr.max() >= n_classes):
            raise LabelError(
                f"{name} labels must lie in [0, {n_classes})",
                {"min": int(arr.min()), "max": int(arr.max())},
            )

    counts = np.bincount(y_true * n_classes + y_pred, minlength=n_classes * n_classes)
    return ConfusionMatrix(
        counts=counts.reshape(n_classes, n_classes), class_names=class_names or []
    )


def _require_total(cm: ConfusionMatrix) -> None:
    if cm.total == 0:
        raise MetricError("Confusion matrix is empty")


def per_class_f1(cm: ConfusionMatrix) -> np.ndarray:
    """F1 of every class; 0/0 counts as 0.

    Raises:
        MetricError: If the matrix is empty
    """
    _require_total(cm)
    counts = cm.counts.astype(np.float64)
    tp = np.diag(counts)
    predicted = counts.sum(axis=0)
    actual = counts.sum(axis=1)
    precision = np.divide(tp, predicted, out=np.zeros_like(tp), where=predicted > 0)
    recall = np.divide(tp, actual, out=np.zeros_like(tp), where=actual > 0)
    denom = precision + recall
    return np.divide(2 * precision * recall, denom, out=np.zeros_like(tp), where=denom > 0)


def weighted_f1(cm: ConfusionMatrix) -> float:
    """Per-class F1 averaged with class support as weight.

    Raises:
        MetricError: If the matrix is empty
    """
    f1 = per_class_f1(cm)
    support = cm.support.astype(np.float64)
    return float((support * f1).sum() / support.sum())


def accuracy(cm: ConfusionMatrix) -> float:
    """Trace over total.

    Raises:
        MetricError: If the matrix is empty
    """
    _require_total(cm)
    return float(np.trace(cm.counts) / cm.total)
