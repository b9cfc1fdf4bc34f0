"""Training loop and evaluation pipeline.

One epoch resamples the triplet set (seed = base seed + epoch), batches it,
runs the three branches through the shared parameters in train mode, and
applies one SGD-with-momentum step per batch. Per-epoch loss rows log the
optimized total alongside both measured terms, so ablation runs still show
the disabled term's value.

Evaluation runs eval-mode forwards over image batches, sign-binarizes the
hash outputs, and ranks gallery codes by Hamming distance; the query's own
id is dropped from its result list when present.
"""

from dataclasses import dataclass

import numpy as np

from . import autodiff as ad
from . import index as hidx
from . import metrics as mx
from .data import sample_triplets
from .errors import ConfigError
from .losses import LossConfig, combined_loss
from .network import NetConfig, TripletHashNet, binarize

EVAL_BATCH = 16


@dataclass
class EpochLoss:
    epoch: int
    total: float
    hinge_term: float
    ce_term: float


def _image_stack(images, cfg):
    by_id = {}
    s = cfg.input_size
    for img in images:
        if img.pixels.shape != (s, s):
            raise ConfigError(
                f"image {img.id} is {img.pixels.shape}, expected ({s}, {s})"
            )
        by_id[img.id] = img.pixels[None, :, :]  # add the channel axis
    return by_id


def train_model(images, train_ids, cfg: NetConfig, mode="combined",
                triplets_per_epoch=None, squared_distance=True):
    """Train a fresh network on the given ids; returns (model, loss rows)."""
    cfg.validate()
    loss_cfg = LossConfig(
        margin_weight=cfg.margin_weight,
        hash_bits=cfg.hash_bits,
        mode=mode,
        squared_distance=squared_distance,
    ).validate()
    labels = {img.id: img.label for img in images}
    train_ids = list(train_ids)
    if not train_ids:
        raise ConfigError("empty training split")
    train_labels = np.array([labels[i] for i in train_ids])
    if np.unique(train_labels).size < 2:
        raise ConfigError("training split needs at least two classes")
    class_sizes = np.bincount(train_labels)
    if class_sizes[class_sizes > 0].min() < 2:
        raise ConfigError("every training class needs at least two images")
    count = triplets_per_epoch or max(cfg.batch, len(train_ids) // 2)
    if count < cfg.batch:
        count = cfg.batch

    pixels = _image_stack(images, cfg)
    model = TripletHashNet(cfg)
    opt = ad.SgdMomentum(model.parameters(), lr=cfg.lr, momentum=cfg.momentum)
    rows = []
    for epoch in range(cfg.epochs):
        triplets = sample_triplets(train_labels, count, seed=cfg.seed + epoch, ids=train_ids)
        total_sum = hinge_sum = ce_sum = 0.0
        seen = 0
        for start in range(0, len(triplets), cfg.batch):
            chunk = triplets[start : start + cfg.batch]
            if len(chunk) < 2:
                continue  # train-mode batchnorm needs at least two rows
            q = np.stack([pixels[t.q] for t in chunk])
            p = np.stack([pixels[t.p] for t in chunk])
            n = np.stack([pixels[t.n] for t in chunk])
            yq = np.array([labels[t.q] for t in chunk])
            yp = np.array([labels[t.p] for t in chunk])
            yn = np.array([labels[t.n] for t in chunk])
            ad.new_recording()
            out_q, out_p, out_n = model.forward_triplet(
                ad.Tensor(q), ad.Tensor(p), ad.Tensor(n), mode="train"
            )
            loss, hinge_val, ce_val = combined_loss(out_q, out_p, out_n, yq, yp, yn, loss_cfg)
            opt.zero_grad()
            ad.backward(loss)
            opt.step()
            b = len(chunk)
            total_sum += loss.item() * b
            hinge_sum += hinge_val * b
            ce_sum += ce_val * b
            seen += b
        ad.new_recording()  # release the last step's tape
        rows.append(
            EpochLoss(
                epoch=epoch,
                total=total_sum / seen,
                hinge_term=hinge_sum / seen,
                ce_term=ce_sum / seen,
            )
        )
    return model, rows


def encode_images(model, images):
    """Eval-mode hash vectors and logits for a list of images."""
    cfg = model.cfg
    hash_rows = []
    logit_rows = []
    with ad.no_grad():
        for start in range(0, len(images), EVAL_BATCH):
            chunk = images[start : start + EVAL_BATCH]
            batch = np.stack([img.pixels[None, :, :] for img in chunk])
            out = model.forward(batch, mode="eval")
            hash_rows.append(out.hash_vec.data)
            logit_rows.append(out.logits.data)
    if not hash_rows:
        return np.empty((0, cfg.hash_bits)), np.empty((0, cfg.num_classes))
    return np.vstack(hash_rows), np.vstack(logit_rows)


def build_index(model, images):
    """Index the given images by their binarized eval-mode hash codes."""
    vecs, _ = encode_images(model, images)
    codes = [binarize(v) for v in vecs]
    return hidx.build(codes, [img.id for img in images], [img.label for img in images])


def rank_queries(model, index, queries, topn):
    """Per-query ranked labels against the index, self-match excluded."""
    vecs, logits = encode_images(model, queries)
    results = []
    for img, vec in zip(queries, vecs):
        hits = hidx.search(index, binarize(vec), topn + 1)
        hits = [h for h in hits if h[0] != img.id][:topn]
        results.append(
            mx.QueryResult(query_label=img.label, returned_labels=[h[2] for h in hits])
        )
    return results, logits


def evaluate_model(model, index, queries, topns):
    """Ranking summaries per topn plus classification metrics on the queries.

    Returns (list of (topn, per-query results, RankingSummary), class metrics).
    """
    if not queries:
        raise ConfigError("empty query split")
    blocks = []
    logits = None
    for topn in topns:
        results, logits = rank_queries(model, index, queries, topn)
        blocks.append((topn, results, mx.aggregate(results)))
    labels = [img.label for img in queries]
    cls = mx.classification_metrics(logits, labels)
    return blocks, cls
