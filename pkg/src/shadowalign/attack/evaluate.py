"""ROC analysis of membership scores.

The curve is built by sweeping a decision threshold over the distinct score
values from high to low; records with equal scores enter together, giving one
curve point per distinct threshold plus the (0, 0) origin. The area uses
trapezoidal integration and the low-false-positive operating points report
the highest true-positive rate reachable without exceeding the requested
false-positive rate.
"""

from __future__ import annotations

import io
from dataclasses import dataclass, field

import numpy as np

from ..errors import ShapeError
from .features import AttackDataset
from .meta import MetaClassifier


@dataclass
class RocCurve:
    fpr: np.ndarray
    tpr: np.ndarray
    auc: float
    tpr_at: dict = field(default_factory=dict)

    def to_csv(self) -> str:
        buf = io.StringIO()
        buf.write("fpr,tpr\n")
        for f, t in zip(self.fpr, self.tpr):
            buf.write(f"{f:.10g},{t:.10g}\n")
        buf.write(f"# auc,{self.auc:.10g}\n")
        for f in sorted(self.tpr_at):
            buf.write(f"# tpr@{f:g},{self.tpr_at[f]:.10g}\n")
        return buf.getvalue()


def roc_curve(scores: np.ndarray, labels: np.ndarray, fprs: tuple = (0.01,)) -> RocCurve:
    """Threshold-sweep ROC with trapezoidal area.

    ``labels`` are membership bits; both classes must be present.
    """
    scores = np.asarray(scores, dtype=np.float64)
    labels = np.asarray(labels).astype(np.int64)
    n_pos = int((labels == 1).sum())
    n_neg = int((labels == 0).sum())
    if n_pos == 0 or n_neg == 0:
        raise ShapeError("ROC needs both members and non-members in the test set")
    order = np.argsort(-scores, kind="stable")
    sorted_scores = scores[order]
    sorted_labels = labels[order]
    tp = np.cumsum(sorted_labels == 1)
    fp = np.cumsum(sorted_labels == 0)
    # keep one point per distinct threshold (the last index of each tie group)
    distinct = np.nonzero(np.diff(sorted_scores))[0]
    keep = np.concatenate([distinct, [len(sorted_scores) - 1]])
    fpr = np.concatenate([[0.0], fp[keep] / n_neg])
    tpr = np.concatenate([[0.0], tp[keep] / n_pos])
    auc = float(np.trapezoid(tpr, fpr))
    tpr_at = {}
    for f in fprs:
        reachable = tpr[fpr <= f]
        tpr_at[float(f)] = float(reachable.max()) if len(reachable) else 0.0
    return RocCurve(fpr=fpr, tpr=tpr, auc=auc, tpr_at=tpr_at)


def evaluate(mc: MetaClassifier, test: AttackDataset, fprs: tuple = (0.01,)) -> RocCurve:
    """Score the test features and build the ROC of the membership task."""
    scores = mc.score(test)
    return roc_curve(scores, test.members, fprs=fprs)
