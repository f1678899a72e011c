"""Accuracy and Mann-Whitney AUC metrics."""

from __future__ import annotations

import logging
import warnings

import numpy as np
from scipy.stats import rankdata

from .errors import UndefinedMetricError

log = logging.getLogger(__name__)


def auc(scores, labels) -> float:
    """P(score+ > score-) + 0.5 * P(tie), computed from average ranks."""
    scores = np.asarray(scores, dtype=np.float64)
    labels = np.asarray(labels).astype(bool)
    n_pos = int(labels.sum())
    n_neg = labels.size - n_pos
    if n_pos == 0 or n_neg == 0:
        raise UndefinedMetricError("AUC needs at least one positive and one negative sample")
    ranks = rankdata(scores, method="average")
    u = ranks[labels].sum() - n_pos * (n_pos + 1) / 2.0
    return float(u / (n_pos * n_neg))


def macro_auc(score_matrix, labels) -> float:
    """Unweighted mean of one-vs-rest AUCs over the classes present in ``labels``.

    Columns of ``score_matrix`` whose class never occurs are skipped with a
    warning.
    """
    score_matrix = np.asarray(score_matrix, dtype=np.float64)
    labels = np.asarray(labels)
    present = set(np.unique(labels).tolist())
    if len(present) < 2:
        raise UndefinedMetricError("macro AUC needs at least two classes present")
    values = []
    for c in range(score_matrix.shape[1]):
        if c not in present:
            msg = f"class {c} absent from labels; excluded from macro AUC"
            log.warning(msg)
            warnings.warn(msg, RuntimeWarning, stacklevel=2)
            continue
        values.append(auc(score_matrix[:, c], labels == c))
    return float(np.mean(values))


def accuracy(score_matrix, labels) -> float:
    pred = np.argmax(np.asarray(score_matrix), axis=1)
    return float(np.mean(pred == np.asarray(labels)))
