"""Image-level evaluation metrics."""

import numpy as np
from scipy.stats import rankdata

from .errors import LengthMismatch, SingleClass

ANOMALOUS = "anomalous"
NORMAL = "normal"


def auroc(scores, labels) -> float:
    """Probability a random anomalous score exceeds a random normal one.

    Rank-based (Mann-Whitney) formulation; ties count one half, so the
    result is exact for any score distribution.
    """
    scores = np.asarray(scores, dtype=np.float64)
    labels = list(labels)
    if len(scores) != len(labels):
        raise LengthMismatch(f"{len(scores)} scores vs {len(labels)} labels")
    pos = np.array([lbl == ANOMALOUS for lbl in labels])
    n_pos = int(pos.sum())
    n_neg = len(labels) - n_pos
    if n_pos == 0 or n_neg == 0:
        raise SingleClass("AUROC needs both a normal and an anomalous example")
    ranks = rankdata(scores)
    u = ranks[pos].sum() - n_pos * (n_pos + 1) / 2.0
    return float(u / (n_pos * n_neg))


def confusion_metrics(verdicts, labels):
    """(accuracy, F1) with the anomalous class as positive."""
    verdicts = list(verdicts)
    labels = list(labels)
    if len(verdicts) != len(labels):
        raise LengthMismatch(f"{len(verdicts)} verdicts vs {len(labels)} labels")
    tp = sum(1 for v, l in zip(verdicts, labels) if v == ANOMALOUS and l == ANOMALOUS)
    tn = sum(1 for v, l in zip(verdicts, labels) if v == NORMAL and l == NORMAL)
    fp = sum(1 for v, l in zip(verdicts, labels) if v == ANOMALOUS and l == NORMAL)
    fn = sum(1 for v, l in zip(verdicts, labels) if v == NORMAL and l == ANOMALOUS)
    n = len(labels)
    accuracy = (tp + tn) / n if n else 0.0
    denom = 2 * tp + fp + fn
    f1 = 2 * tp / denom if denom else 0.0
    return accuracy, f1
