"""Accuracy and false-positive-rate fairness metrics."""

from __future__ import annotations

import math
from dataclasses import asdict, dataclass

import numpy as np

from .penalties import GROUP_UNKNOWN

DEFAULT_THRESHOLD = 0.5


class MetricError(ValueError):
    """Metric is not computable on the given input."""


def classify(pred, threshold: float) -> np.ndarray:
    """Decision 1 iff the prediction is strictly above ``threshold``."""
    if not 0.0 <= threshold <= 1.0:
        raise MetricError(f"threshold must lie in [0, 1], got {threshold}")
    return (np.asarray(pred, dtype=np.float64) > threshold).astype(np.int8)


def threshold_for_recall(pred, labels, target_recall: float) -> float:
    """Largest threshold whose strict-``>`` decisions reach ``target_recall`` on positives.

    The result is the float immediately below the score of the positive that
    has to be captured last, so every tied copy of that score is captured too.
    """
    pred = np.asarray(pred, dtype=np.float64)
    labels = np.asarray(labels)
    if not 0.0 < target_recall <= 1.0:
        raise MetricError(f"target recall must lie in (0, 1], got {target_recall}")
    pos = np.sort(pred[labels == 1])[::-1]
    n_pos = pos.size
    if n_pos == 0:
        raise MetricError("no positive labels")
    need = math.ceil(target_recall * n_pos - 1e-9)
    # the need-th highest positive must lie strictly above the threshold
    return float(np.nextafter(pos[need - 1], -np.inf))


@dataclass
class EvalReport:
    """Metrics for one set of predictions at one threshold.

    FPR fields are ``None`` when the corresponding cell has no negatives.
    ``counts`` maps ``"g{group}_y{label}_d{decision}"`` to row counts, with
    ``gu`` for rows whose group is unknown.
    """

    n: int
    accuracy: float
    threshold: float
    fpr_group0: float | None
    fpr_group1: float | None
    fpr_gap: float | None
    fpr_ratio: float | None
    counts: dict[str, int]

    @property
    def fpr_defined(self) -> bool:
        return self.fpr_gap is not None

    def to_dict(self) -> dict:
        return asdict(self)

    @classmethod
    def from_dict(cls, d: dict) -> "EvalReport":
        return cls(**d)

    def csv_row(self) -> list:
        return [_fmt(getattr(self, c)) for c in CSV_COLUMNS[:-len(COUNT_KEYS)]] + [
            self.counts[k] for k in COUNT_KEYS
        ]


COUNT_KEYS = tuple(
    f"g{g}_y{y}_d{d}" for g in ("0", "1", "u") for y in (0, 1) for d in (0, 1)
)
CSV_COLUMNS = (
    "n",
    "accuracy",
    "threshold",
    "fpr_group0",
    "fpr_group1",
    "fpr_gap",
    "fpr_ratio",
) + COUNT_KEYS


def _fmt(v):
    if v is None:
        return ""
    if isinstance(v, float):
        return repr(v)
    return v


def evaluate(pred, labels, groups, threshold: float = DEFAULT_THRESHOLD) -> EvalReport:
    """Accuracy over all rows; FPRs over negatives with a known group.

    ``fpr_ratio`` is ``fpr_group1 / fpr_group0`` (group 1 is the protected
    group) and is ``None`` when the denominator is zero or undefined.
    """
    pred = np.asarray(pred, dtype=np.float64).ravel()
    labels = np.asarray(labels).ravel().astype(np.int64)
    groups = np.asarray(groups).ravel().astype(np.int64)
    if not (pred.size == labels.size == groups.size):
        raise MetricError("predictions, labels and groups must have equal length")
    if pred.size == 0:
        raise MetricError("cannot evaluate an empty set")
    dec = classify(pred, threshold).astype(np.int64)

    # cell index: group (0, 1, unknown=2) * 4 + label * 2 + decision
    gi = np.where(groups == GROUP_UNKNOWN, 2, groups)
    cells = np.bincount(gi * 4 + labels * 2 + dec, minlength=12)
    counts = {k: int(c) for k, c in zip(COUNT_KEYS, cells)}

    accuracy = float(np.mean(dec == labels))

    def fpr(g):
        neg = counts[f"g{g}_y0_d0"] + counts[f"g{g}_y0_d1"]
        return counts[f"g{g}_y0_d1"] / neg if neg else None

    f0, f1 = fpr(0), fpr(1)
    gap = abs(f1 - f0) if f0 is not None and f1 is not None else None
    ratio = f1 / f0 if gap is not None and f0 > 0 else None
    return EvalReport(int(pred.size), accuracy, float(threshold), f0, f1, gap, ratio, counts)
