"""ROC-AUC (Mann-Whitney with the 0.5 tie convention) and binary F1."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import MetricError


@dataclass
class EvalResult:
    roc_auc: float
    f1: float
    tp: int
    fp: int
    fn: int
    tn: int
    n: int

    @property
    def accuracy(self) -> float:
        return (self.tp + self.tn) / self.n if self.n else 0.0


def roc_auc(scores, labels) -> float:
    """(#concordant + 0.5 * #tied) / (#pos * #neg), via one sort.

    Average ranks over ties make the rank-sum numerator equal the pairwise
    count exactly (ranks are integers or half-integers), so this agrees with
    the O(n^2) oracle bit for bit.
    """
    scores = np.asarray(scores, dtype=np.float64)
    labels = np.asarray(labels)
    if scores.shape != labels.shape or scores.ndim != 1:
        raise MetricError(f"scores/labels shapes differ: {scores.shape} vs {labels.shape}")
    n_pos = int((labels == 1).sum())
    n_neg = int((labels == 0).sum())
    if n_pos == 0 or n_neg == 0:
        raise MetricError("ROC-AUC is undefined when only one class is present")
    order = np.argsort(scores, kind="stable")
    sorted_scores = scores[order]
    ranks = np.empty(len(scores), dtype=np.float64)
    i = 0
    while i < len(sorted_scores):
        j = i
        while j + 1 < len(sorted_scores) and sorted_scores[j + 1] == sorted_scores[i]:
            j += 1
        ranks[order[i:j + 1]] = 0.5 * (i + j) + 1.0  # average 1-based rank
        i = j + 1
    rank_sum = float(ranks[labels == 1].sum())
    u = rank_sum - n_pos * (n_pos + 1) / 2.0
    return u / (n_pos * n_neg)


def f1_binary(preds, labels) -> float:
    """F1 for the positive (clickbait) class; 0.0 when there are no true
    positives, by convention."""
    preds = np.asarray(preds)
    labels = np.asarray(labels)
    if preds.shape != labels.shape or preds.ndim != 1 or len(preds) == 0:
        raise MetricError("f1 needs equal-length nonempty 1-D inputs")
    tp = int(((preds == 1) & (labels == 1)).sum())
    fp = int(((preds == 1) & (labels == 0)).sum())
    fn = int(((preds == 0) & (labels == 1)).sum())
    if tp == 0:
        return 0.0
    precision = tp / (tp + fp)
    recall = tp / (tp + fn)
    return 2.0 * precision * recall / (precision + recall)


def evaluate(scores, labels, threshold: float = 0.5) -> EvalResult:
    """Threshold positive-class scores and compute the full result row."""
    scores = np.asarray(scores, dtype=np.float64)
    labels = np.asarray(labels)
    preds = (scores >= threshold).astype(np.int64)
    tp = int(((preds == 1) & (labels == 1)).sum())
    fp = int(((preds == 1) & (labels == 0)).sum())
    fn = int(((preds == 0) & (labels == 1)).sum())
    tn = int(((preds == 0) & (labels == 0)).sum())
    return EvalResult(
        roc_auc=roc_auc(scores, labels),
        f1=f1_binary(preds, labels),
        tp=tp, fp=fp, fn=fn, tn=tn, n=len(labels),
    )
