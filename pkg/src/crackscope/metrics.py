"""Confusion-matrix metrics and ROC/AUC.

Two recall conventions are reported: the usual TP/(TP+FN) and the
TN/(TN+FN) variant used in the original crack-classification study (which is
the negative predictive value under another name). Undefined ratios are
``None``, never 0.
"""

from __future__ import annotations

import json
from collections.abc import Sequence
from dataclasses import asdict, dataclass

import numpy as np


@dataclass(frozen=True)
class ConfusionMatrix:
    tp: int
    fp: int
    tn: int
    fn: int

    def __post_init__(self):
        if min(self.tp, self.fp, self.tn, self.fn) < 0:
            raise ValueError("confusion counts must be non-negative")

    @property
    def total(self) -> int:
        return self.tp + self.fp + self.tn + self.fn


def confusion(predicted: Sequence[str], actual: Sequence[str]) -> ConfusionMatrix:
    if len(predicted) != len(actual):
        raise ValueError(f"{len(predicted)} predictions but {len(actual)} labels")
    if not predicted:
        raise ValueError("empty input")
    tp = fp = tn = fn = 0
    for p, a in zip(predicted, actual):
        if p == "P":
            if a == "P":
                tp += 1
            else:
                fp += 1
        elif a == "P":
            fn += 1
        else:
            tn += 1
    return ConfusionMatrix(tp, fp, tn, fn)


def _ratio(num: float, den: float) -> float | None:
    return None if den == 0 else num / den


def _f1(p: float | None, r: float | None) -> float | None:
    if p is None or r is None:
        return None
    return _ratio(2 * p * r, p + r)


@dataclass(frozen=True)
class MetricsReport:
    accuracy: float
    precision: float | None
    recall_standard: float | None
    recall_tn: float | None  # TN / (TN + FN), reported alongside the usual TP-based recall
    f1_standard: float | None
    f1_tn: float | None  # harmonic mean of precision and recall_tn
    macro_precision: float | None
    macro_recall: float | None
    macro_f1: float | None

    def as_dict(self) -> dict:
        return asdict(self)

    def to_json(self) -> str:
        return json.dumps(self.as_dict(), indent=2, sort_keys=True) + "\n"

    def to_text(self) -> str:
        lines = []
        for k, v in self.as_dict().items():
            lines.append(f"{k}={'absent' if v is None else format(v, '.6f')}")
        return "\n".join(lines) + "\n"


def report(cm: ConfusionMatrix) -> MetricsReport:
    if cm.total < 1:
        raise ValueError("confusion matrix is empty")
    acc = (cm.tp + cm.tn) / cm.total
    precision = _ratio(cm.tp, cm.tp + cm.fp)
    rec_std = _ratio(cm.tp, cm.tp + cm.fn)
    rec_tn = _ratio(cm.tn, cm.tn + cm.fn)
    # per-class view: class N treats TN as its hits
    prec_n = _ratio(cm.tn, cm.tn + cm.fn)
    rec_n = _ratio(cm.tn, cm.tn + cm.fp)
    per_class_p = [precision, prec_n]
    per_class_r = [rec_std, rec_n]
    per_class_f = [_f1(precision, rec_std), _f1(prec_n, rec_n)]

    def macro(vals):
        return None if any(v is None for v in vals) else sum(vals) / len(vals)

    return MetricsReport(
        accuracy=acc,
        precision=precision,
        recall_standard=rec_std,
        recall_tn=rec_tn,
        f1_standard=_f1(precision, rec_std),
        f1_tn=_f1(precision, rec_tn),
        macro_precision=macro(per_class_p),
        macro_recall=macro(per_class_r),
        macro_f1=macro(per_class_f),
    )


# -- ROC -----------------------------------------------------------------------


@dataclass(frozen=True)
class RocCurve:
    fpr: np.ndarray
    tpr: np.ndarray
    thresholds: np.ndarray  # item predicted P when score >= threshold
    auc: float

    def to_csv(self) -> str:
        lines = ["threshold,fpr,tpr"]
        for t, f, p in zip(self.thresholds, self.fpr, self.tpr):
            lines.append(f"{float(t)!r},{float(f)!r},{float(p)!r}")
        lines.append(f"# auc={float(self.auc)!r}")
        return "\n".join(lines) + "\n"


def _split_scores(scores, labels):
    s = np.asarray(scores, dtype=np.float64)
    lab = np.asarray(labels)
    if s.shape != lab.shape:
        raise ValueError("scores and labels differ in length")
    pos = s[lab == "P"]
    neg = s[lab == "N"]
    if len(pos) + len(neg) != len(s):
        raise ValueError("labels must be 'P' or 'N'")
    if len(pos) == 0 or len(neg) == 0:
        raise ValueError("ROC needs at least one item of each class")
    return pos, neg


def roc(scores: Sequence[float], labels: Sequence[str]) -> RocCurve:
    """Threshold sweep over unique scores plus sentinels; trapezoidal AUC.

    The area is accumulated as an integer (twice the trapezoid area in units
    of one P x N pair) so it equals the Mann-Whitney count exactly.
    """
    pos, neg = _split_scores(scores, labels)
    uniq = np.unique(np.concatenate([pos, neg]))[::-1]
    above = np.nextafter(uniq[0], np.inf)
    below = np.nextafter(uniq[-1], -np.inf)
    thresholds = np.concatenate([[above], uniq, [below]])
    pos_sorted = np.sort(pos)
    neg_sorted = np.sort(neg)
    # items with score >= T
    tp = len(pos) - np.searchsorted(pos_sorted, thresholds, side="left")
    fp = len(neg) - np.searchsorted(neg_sorted, thresholds, side="left")
    twice_area = int(np.sum(np.diff(fp).astype(np.int64) * (tp[1:] + tp[:-1]).astype(np.int64)))
    auc = twice_area / (2 * len(pos) * len(neg))
    return RocCurve(fp / len(neg), tp / len(pos), thresholds, auc)


def mann_whitney_auc(scores: Sequence[float], labels: Sequence[str]) -> float:
    """P(score_P > score_N) + 0.5 P(tie), counted exactly over all pairs."""
    pos, neg = _split_scores(scores, labels)
    neg_sorted = np.sort(neg)
    lower = np.searchsorted(neg_sorted, pos, side="left")  # negatives strictly below
    upto = np.searchsorted(neg_sorted, pos, side="right")
    twice = int(np.sum(2 * lower.astype(np.int64) + (upto - lower).astype(np.int64)))
    return twice / (2 * len(pos) * len(neg))
