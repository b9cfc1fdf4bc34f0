"""Triplet hinge loss, triplet cross-entropy loss, and their combination.

The hinge term pushes the query-negative distance at least ``r * k`` above
the query-positive distance, measured as squared Euclidean distance between
the real-valued hash outputs (an unsquared variant is available behind a
flag). With tanh-bounded codes the squared distance spans [0, 4k], so the
default margin 0.5 * 36 = 18 is attainable. The cross-entropy term sums the
usual negative log softmax over the three triplet branches. Ablation modes
keep exactly one term.
"""

from dataclasses import dataclass

import numpy as np

from . import autodiff as ad
from .errors import ConfigError, ShapeError

MODES = ("combined", "triplet_only", "ce_only")


@dataclass
class LossConfig:
    margin_weight: float  # r
    hash_bits: int  # k
    mode: str = "combined"
    squared_distance: bool = True

    def validate(self):
        if not 0.0 <= self.margin_weight <= 1.0:
            raise ConfigError(f"margin weight must be in [0, 1], got {self.margin_weight}")
        if self.hash_bits < 1:
            raise ConfigError(f"hash_bits must be >= 1, got {self.hash_bits}")
        if self.mode not in MODES:
            raise ConfigError(f"mode must be one of {MODES}, got {self.mode!r}")
        return self

    @property
    def margin(self):
        return self.margin_weight * self.hash_bits


def _distance_rows(a, b, squared):
    d = ad.sub(a, b)
    sq = ad.sum_axis(ad.mul(d, d), axis=1)
    return sq if squared else ad.sqrt(sq)


def triplet_hinge(hq, hp, hn, r, k, squared=True):
    """max(r*k - D(q, n) + D(q, p), 0) for one triplet of k-vectors.

    Subgradient 0 at the hinge point.
    """
    for name, v in (("query", hq), ("positive", hp), ("negative", hn)):
        if v.shape != (k,):
            raise ShapeError(f"{name} hash vector has shape {v.shape}, expected ({k},)")
    rows = triplet_hinge_rows(
        ad.reshape(hq, (1, k)), ad.reshape(hp, (1, k)), ad.reshape(hn, (1, k)), r, k, squared
    )
    return ad.sum_all(rows)


def triplet_hinge_rows(hq, hp, hn, r, k, squared=True):
    """Row-wise hinge over a batch of triplets; returns a (B,) tensor."""
    if not (hq.shape == hp.shape == hn.shape):
        raise ShapeError(
            f"hash batches disagree: {hq.shape} vs {hp.shape} vs {hn.shape}"
        )
    if hq.shape[1] != k:
        raise ShapeError(f"hash vectors have {hq.shape[1]} entries, expected k={k}")
    dqp = _distance_rows(hq, hp, squared)
    dqn = _distance_rows(hq, hn, squared)
    margin = ad.Tensor(np.full(dqp.shape, float(r) * k))
    return ad.relu(ad.add(ad.sub(margin, dqn), dqp))


def triplet_cross_entropy(logits_q, logits_p, logits_n, y_q, y_p, y_n):
    """CE(q) + CE(p) + CE(n) for one triplet; logits are (c,) vectors."""
    c = logits_q.shape[-1]
    stacked = ad.concat(
        [ad.reshape(logits_q, (1, c)), ad.reshape(logits_p, (1, c)), ad.reshape(logits_n, (1, c))],
        axis=0,
    )
    return ad.cross_entropy_sum(stacked, np.array([y_q, y_p, y_n], dtype=np.int64))


def combined_loss(out_q, out_p, out_n, labels_q, labels_p, labels_n, cfg: LossConfig):
    """Batch loss per the configured mode, plus both term values for logging.

    Takes the three branch ForwardOutputs of a triplet batch. Returns
    (loss tensor, mean hinge value, mean cross-entropy value); the scalar
    feeds backward(). The reported values are measured regardless of mode,
    so ablation runs still log the disabled term.
    """
    cfg.validate()
    b = out_q.hash_vec.shape[0]
    if b == 0:
        raise ShapeError("combined_loss: empty batch")
    hinge_rows = triplet_hinge_rows(
        out_q.hash_vec, out_p.hash_vec, out_n.hash_vec,
        cfg.margin_weight, cfg.hash_bits, cfg.squared_distance,
    )
    hinge_mean = ad.scale(ad.sum_all(hinge_rows), 1.0 / b)
    all_logits = ad.concat([out_q.logits, out_p.logits, out_n.logits], axis=0)
    all_labels = np.concatenate(
        [np.asarray(labels_q), np.asarray(labels_p), np.asarray(labels_n)]
    ).astype(np.int64)
    ce_mean = ad.scale(ad.cross_entropy_sum(all_logits, all_labels), 1.0 / b)

    if cfg.mode == "combined":
        loss = ad.add(hinge_mean, ce_mean)
    elif cfg.mode == "triplet_only":
        loss = hinge_mean
    else:
        loss = ce_mean
    return loss, hinge_mean.item(), ce_mean.item()
