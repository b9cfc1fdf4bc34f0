"""Ranking metrics (hit ratio, average precision, reciprocal rank) and
per-class classification metrics (sensitivity, specificity, ROC-AUC).

Ranking metrics score one returned list against its query label:

    hit_ratio           relevant fraction of the returned list
    average_precision   mean of precision@i over relevant positions i,
                        divided by the number of relevant items retrieved
                        (pass total_relevant to divide by the corpus count
                        instead); 0.0 when nothing relevant was returned
    reciprocal_rank     1 / rank of the first relevant item, 0.0 if none

AUC uses the rank-statistic form on per-class scores with midranks, so tied
pairs contribute 1/2.
"""

from dataclasses import dataclass
from typing import Optional

import numpy as np

from .errors import ShapeError


@dataclass
class QueryResult:
    query_label: int
    returned_labels: list  # ordered as ranked, may be shorter than topn


def _relevance(qr: QueryResult):
    return np.asarray([lbl == qr.query_label for lbl in qr.returned_labels], dtype=np.float64)


def hit_ratio(qr: QueryResult) -> float:
    rel = _relevance(qr)
    if rel.size == 0:
        return 0.0
    return float(rel.mean())


def average_precision(qr: QueryResult, total_relevant: Optional[int] = None) -> float:
    rel = _relevance(qr)
    if rel.size == 0 or rel.sum() == 0:
        return 0.0
    precision_at = np.cumsum(rel) / np.arange(1, rel.size + 1)
    denom = int(rel.sum()) if total_relevant is None else total_relevant
    return float((precision_at * rel).sum() / denom)


def reciprocal_rank(qr: QueryResult) -> float:
    rel = _relevance(qr)
    hits = np.flatnonzero(rel)
    if hits.size == 0:
        return 0.0
    return float(1.0 / (hits[0] + 1))


@dataclass
class RankingSummary:
    mean_hit_ratio: float
    mean_average_precision: float
    mean_reciprocal_rank: float
    per_class_ap: dict  # class label -> mean AP over that class's queries


def aggregate(results) -> RankingSummary:
    """Unweighted means over queries; per-class AP averages within each class."""
    results = list(results)
    if not results:
        raise ShapeError("aggregate needs at least one query result")
    hr = [hit_ratio(r) for r in results]
    ap = [average_precision(r) for r in results]
    rr = [reciprocal_rank(r) for r in results]
    per_class = {}
    for r, a in zip(results, ap):
        per_class.setdefault(r.query_label, []).append(a)
    return RankingSummary(
        mean_hit_ratio=float(np.mean(hr)),
        mean_average_precision=float(np.mean(ap)),
        mean_reciprocal_rank=float(np.mean(rr)),
        per_class_ap={c: float(np.mean(v)) for c, v in sorted(per_class.items())},
    )


# ---------------------------------------------------------------------------
# classification metrics


@dataclass
class ClassMetrics:
    label: int
    support: int  # test items of this class
    sensitivity: Optional[float]  # None when the class is absent from labels
    specificity: Optional[float]
    auc: Optional[float]  # None when either side of the one-vs-rest split is empty


def _midranks(values):
    order = np.argsort(values, kind="stable")
    ranks = np.empty(values.size, dtype=np.float64)
    i = 0
    while i < values.size:
        j = i
        while j + 1 < values.size and values[order[j + 1]] == values[order[i]]:
            j += 1
        ranks[order[i : j + 1]] = 0.5 * (i + j) + 1.0
        i = j + 1
    return ranks


def auc_rank(scores, positive_mask) -> Optional[float]:
    """Mann-Whitney AUC of scores for the positive class; ties count 1/2."""
    scores = np.asarray(scores, dtype=np.float64)
    positive_mask = np.asarray(positive_mask, dtype=bool)
    npos = int(positive_mask.sum())
    nneg = int(scores.size - npos)
    if npos == 0 or nneg == 0:
        return None
    ranks = _midranks(scores)
    u = ranks[positive_mask].sum() - npos * (npos + 1) / 2.0
    return float(u / (npos * nneg))


def _softmax_rows(logits):
    z = logits - logits.max(axis=1, keepdims=True)
    e = np.exp(z)
    return e / e.sum(axis=1, keepdims=True)


def classification_metrics(logits, labels):
    """Per-class one-vs-rest metrics from argmax predictions and softmax scores.

    Classes absent from the labels get sensitivity None (no positives to
    measure); AUC is None whenever a one-vs-rest side is empty.
    """
    logits = np.asarray(logits, dtype=np.float64)
    labels = np.asarray(labels, dtype=np.int64)
    if logits.ndim != 2 or logits.shape[0] != labels.size:
        raise ShapeError(
            f"logits {logits.shape} do not match {labels.size} labels"
        )
    n, c = logits.shape
    preds = logits.argmax(axis=1)
    probs = _softmax_rows(logits)
    out = []
    for cls in range(c):
        actual = labels == cls
        predicted = preds == cls
        tp = int(np.sum(actual & predicted))
        fn = int(np.sum(actual & ~predicted))
        tn = int(np.sum(~actual & ~predicted))
        fp = int(np.sum(~actual & predicted))
        sens = tp / (tp + fn) if (tp + fn) > 0 else None
        spec = tn / (tn + fp) if (tn + fp) > 0 else None
        out.append(
            ClassMetrics(
                label=cls,
                support=int(actual.sum()),
                sensitivity=sens,
                specificity=spec,
                auc=auc_rank(probs[:, cls], actual),
            )
        )
    return out
