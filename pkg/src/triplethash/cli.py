"""Command-line entry point.

Subcommands wire the library into the full workflow: generate a synthetic
dataset, train (full or ablation modes), build a code index, query it,
evaluate ranking plus classification quality, and sweep the margin weight
and code length. Configuration comes from an optional flat ``key = value``
file with flag overrides; every command is deterministic under a fixed
seed. Exit codes: 0 success, 2 usage or configuration error, 1 runtime
error.
"""

import argparse
import sys
from dataclasses import dataclass, fields, replace
from pathlib import Path

from . import autodiff as ad
from . import index as hidx
from . import metrics as mx
from . import train as tr
from .data import (
    DatasetSpec,
    generate_dataset,
    load_dataset,
    load_split,
    read_pgm,
    save_dataset,
    save_split,
    train_test_split,
    write_pgm,
)
from .errors import ConfigError, FormatError, GraphError, ShapeError
from .losses import MODES
from .network import NetConfig, binarize, cam_heatmap, load_checkpoint, save_checkpoint


@dataclass
class RunConfig:
    class_counts: tuple = (200, 40, 20, 40)
    image_size: int = 64
    roi_size: int = 12
    noise_level: float = 0.5
    test_fraction: float = 0.2
    hash_bits: int = 36
    margin_weight: float = 0.5
    base_channels: int = 16
    lr: float = 0.01
    momentum: float = 0.9
    batch: int = 10
    epochs: int = 50
    mode: str = "combined"
    seed: int = 0
    topn: tuple = (10,)
    use_attention: bool = True
    triplets_per_epoch: int = 0  # 0 picks half the training split


_INT_FIELDS = {"image_size", "roi_size", "hash_bits", "base_channels", "batch",
               "epochs", "seed", "triplets_per_epoch"}
_FLOAT_FIELDS = {"noise_level", "test_fraction", "margin_weight", "lr", "momentum"}
_ALIASES = {"k": "hash_bits", "r": "margin_weight"}


def _parse_value(key, raw):
    raw = raw.strip()
    try:
        if key == "class_counts":
            return tuple(int(v) for v in raw.split(","))
        if key == "topn":
            return tuple(int(v) for v in raw.split(","))
        if key in _INT_FIELDS:
            return int(raw)
        if key in _FLOAT_FIELDS:
            return float(raw)
        if key == "use_attention":
            if raw.lower() in ("1", "true", "yes"):
                return True
            if raw.lower() in ("0", "false", "no"):
                return False
            raise ValueError(raw)
        if key == "mode":
            if raw not in MODES:
                raise ValueError(raw)
            return raw
    except ValueError as exc:
        raise ConfigError(f"bad value for {key}: {raw!r}") from exc
    raise ConfigError(f"unknown config key: {key}")


def load_config(path) -> RunConfig:
    cfg = RunConfig()
    valid = {f.name for f in fields(RunConfig)}
    updates = {}
    for lineno, line in enumerate(Path(path).read_text().splitlines(), 1):
        line = line.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ConfigError(f"{path}:{lineno}: expected 'key = value', got {line!r}")
        key, raw = line.split("=", 1)
        key = _ALIASES.get(key.strip(), key.strip())
        if key not in valid:
            raise ConfigError(f"{path}:{lineno}: unknown config key: {key}")
        updates[key] = _parse_value(key, raw)
    return replace(cfg, **updates)


def _apply_flags(cfg: RunConfig, args) -> RunConfig:
    updates = {}
    if getattr(args, "seed", None) is not None:
        updates["seed"] = args.seed
    if getattr(args, "mode", None) is not None:
        updates["mode"] = args.mode
    if getattr(args, "r", None) is not None:
        updates["margin_weight"] = args.r
    if getattr(args, "k", None) is not None:
        updates["hash_bits"] = args.k
    if getattr(args, "topn", None) is not None:
        updates["topn"] = tuple(int(v) for v in args.topn.split(","))
    if getattr(args, "epochs", None) is not None:
        updates["epochs"] = args.epochs
    if getattr(args, "no_attention", False):
        updates["use_attention"] = False
    return replace(cfg, **updates)


def _run_config(args) -> RunConfig:
    cfg = load_config(args.config) if args.config else RunConfig()
    cfg = _apply_flags(cfg, args)
    if not 0.0 <= cfg.margin_weight <= 1.0:
        raise ConfigError(f"margin weight must be in [0, 1], got {cfg.margin_weight}")
    if any(t < 1 for t in cfg.topn):
        raise ConfigError(f"topn entries must be >= 1, got {cfg.topn}")
    return cfg


def _net_config(cfg: RunConfig, num_classes) -> NetConfig:
    return NetConfig(
        input_size=cfg.image_size,
        in_channels=1,
        hash_bits=cfg.hash_bits,
        num_classes=num_classes,
        margin_weight=cfg.margin_weight,
        base_channels=cfg.base_channels,
        use_attention=cfg.use_attention,
        seed=cfg.seed,
        lr=cfg.lr,
        momentum=cfg.momentum,
        batch=cfg.batch,
        epochs=cfg.epochs,
    )


def _load_images(dataset_dir):
    images = load_dataset(dataset_dir)
    return images, {img.id: img for img in images}


def _split_images(dataset_dir, images_by_id, name):
    ids = load_split(dataset_dir, name)
    missing = [i for i in ids if i not in images_by_id]
    if missing:
        raise FormatError(f"{name} split references unknown image id {missing[0]}")
    return [images_by_id[i] for i in ids]


def _fmt(x):
    return repr(float(x))


# ---------------------------------------------------------------------------
# commands


def cmd_gen_data(args):
    cfg = _run_config(args)
    out = Path(args.out)
    if out.exists() and any(out.iterdir()) and not args.force:
        raise ConfigError(f"{out}: target directory is not empty (use --force)")
    spec = DatasetSpec(
        class_counts=tuple(cfg.class_counts),
        image_size=cfg.image_size,
        roi_size=cfg.roi_size,
        noise_level=cfg.noise_level,
        seed=cfg.seed,
    )
    images = generate_dataset(spec)
    save_dataset(out, images)
    train_ids, test_ids = train_test_split(images, cfg.test_fraction, cfg.seed)
    save_split(out, "train", train_ids)
    save_split(out, "test", test_ids)
    print(f"wrote {len(images)} images ({len(train_ids)} train / {len(test_ids)} test) to {out}")
    return 0


def cmd_train(args):
    cfg = _run_config(args)
    images, _ = _load_images(args.dataset)
    images_by_id = {img.id: img for img in images}
    train_images = _split_images(args.dataset, images_by_id, "train")
    num_classes = max(img.label for img in images) + 1
    net_cfg = _net_config(cfg, num_classes)
    if cfg.image_size != train_images[0].pixels.shape[0]:
        raise ConfigError(
            f"config image_size {cfg.image_size} does not match dataset images "
            f"of {train_images[0].pixels.shape[0]}"
        )
    model, rows = tr.train_model(
        images, [img.id for img in train_images], net_cfg, mode=cfg.mode,
        triplets_per_epoch=cfg.triplets_per_epoch or None,
    )
    save_checkpoint(model, args.out)
    loss_csv = args.loss_csv or f"{args.out}.loss.csv"
    with open(loss_csv, "w") as fh:
        fh.write("epoch,total,hinge_term,ce_term\n")
        for row in rows:
            fh.write(f"{row.epoch},{_fmt(row.total)},{_fmt(row.hinge_term)},{_fmt(row.ce_term)}\n")
    print(f"trained {cfg.epochs} epochs (mode={cfg.mode}); final loss {_fmt(rows[-1].total)}")
    print(f"checkpoint: {args.out}")
    print(f"loss curve: {loss_csv}")
    return 0


def cmd_index(args):
    cfg = _run_config(args)
    model = load_checkpoint(args.checkpoint)
    if args.k is not None and args.k != model.cfg.hash_bits:
        raise ConfigError(
            f"checkpoint holds {model.cfg.hash_bits}-bit codes but --k {args.k} was requested"
        )
    images, images_by_id = _load_images(args.dataset)
    gallery = _split_images(args.dataset, images_by_id, args.split)
    index = tr.build_index(model, gallery)
    hidx.save(index, args.out)
    print(f"indexed {index.size} images ({model.cfg.hash_bits}-bit codes) to {args.out}")
    return 0


def cmd_query(args):
    cfg = _run_config(args)
    model = load_checkpoint(args.checkpoint)
    index = hidx.load(args.index)
    if index.k != model.cfg.hash_bits:
        raise ConfigError(
            f"index holds {index.k}-bit codes but checkpoint emits {model.cfg.hash_bits}"
        )
    exclude_id = None
    if args.id is not None:
        if not args.dataset:
            raise ConfigError("--id queries need --dataset to resolve the image")
        images, images_by_id = _load_images(args.dataset)
        if args.id not in images_by_id:
            raise ConfigError(f"image id {args.id} is not in the dataset")
        pixels = images_by_id[args.id].pixels
        exclude_id = args.id
    elif args.image:
        gray = read_pgm(args.image)
        pixels = gray / 255.0
    else:
        raise ConfigError("query needs --id or an image path")
    s = model.cfg.input_size
    if pixels.shape != (s, s):
        raise ConfigError(f"query image is {pixels.shape}, checkpoint expects ({s}, {s})")
    with ad.no_grad():
        out = model.forward(pixels[None, None, :, :], mode="eval")
    code = binarize(out.hash_vec.data[0])
    topn = cfg.topn[0]
    hits = hidx.search(index, code, topn + (1 if exclude_id is not None else 0))
    hits = [h for h in hits if h[0] != exclude_id][:topn]
    print("rank,id,hamming_distance,label")
    for rank, (hid, dist, label) in enumerate(hits, 1):
        print(f"{rank},{hid},{dist},{label}")
    if args.heatmap:
        write_pgm(args.heatmap, cam_heatmap(out.dense_map.data[0], s))
        print(f"heatmap: {args.heatmap}")
    return 0


def cmd_evaluate(args):
    cfg = _run_config(args)
    model = load_checkpoint(args.checkpoint)
    index = hidx.load(args.index)
    if index.k != model.cfg.hash_bits:
        raise ConfigError(
            f"index holds {index.k}-bit codes but checkpoint emits {model.cfg.hash_bits}"
        )
    images, images_by_id = _load_images(args.dataset)
    queries = _split_images(args.dataset, images_by_id, args.split)
    if not queries:
        raise ConfigError(f"{args.split} split is empty")
    blocks, cls = tr.evaluate_model(model, index, queries, cfg.topn)
    with open(args.out, "w") as fh:
        for topn, results, summary in blocks:
            fh.write(f"query_metrics,topn={topn}\n")
            fh.write("id,label,hr,ap,rr\n")
            for img, res in zip(queries, results):
                fh.write(
                    f"{img.id},{img.label},{_fmt(mx.hit_ratio(res))},"
                    f"{_fmt(mx.average_precision(res))},{_fmt(mx.reciprocal_rank(res))}\n"
                )
            fh.write(f"summary,topn={topn}\n")
            fh.write(f"mHR,{_fmt(summary.mean_hit_ratio)}\n")
            fh.write(f"mAP,{_fmt(summary.mean_average_precision)}\n")
            fh.write(f"mRR,{_fmt(summary.mean_reciprocal_rank)}\n")
            for label, ap in summary.per_class_ap.items():
                fh.write(f"class_mAP,{label},{_fmt(ap)}\n")
        fh.write("classification\n")
        fh.write("class,support,sensitivity,specificity,auc,defined\n")
        for cm in cls:
            defined = int(cm.sensitivity is not None and cm.auc is not None)
            sens = _fmt(cm.sensitivity) if cm.sensitivity is not None else ""
            spec = _fmt(cm.specificity) if cm.specificity is not None else ""
            auc = _fmt(cm.auc) if cm.auc is not None else ""
            fh.write(f"{cm.label},{cm.support},{sens},{spec},{auc},{defined}\n")
    first = blocks[0][2]
    print(f"evaluated {len(queries)} queries; mAP@{blocks[0][0]} = {_fmt(first.mean_average_precision)}")
    print(f"metrics: {args.out}")
    return 0


def cmd_sweep(args):
    cfg = _run_config(args)
    r_values = [float(v) for v in args.r_list.split(",")]
    k_values = [int(v) for v in args.k_list.split(",")]
    if not r_values or not k_values:
        raise ConfigError("sweep needs at least one r and one k value")
    images, images_by_id = _load_images(args.dataset)
    train_images = _split_images(args.dataset, images_by_id, "train")
    queries = _split_images(args.dataset, images_by_id, "test")
    num_classes = max(img.label for img in images) + 1
    grid = []
    for r in r_values:
        row = []
        for k in k_values:
            try:
                cell_cfg = _net_config(replace(cfg, margin_weight=r, hash_bits=k), num_classes)
                model, _ = tr.train_model(
                    images, [img.id for img in train_images], cell_cfg, mode=cfg.mode,
                    triplets_per_epoch=cfg.triplets_per_epoch or None,
                )
                index = tr.build_index(model, train_images)
                blocks, _ = tr.evaluate_model(model, index, queries, (cfg.topn[0],))
                row.append(blocks[0][2].mean_average_precision)
            except Exception as exc:
                raise RuntimeError(f"sweep cell (r={r}, k={k}) failed: {exc}") from exc
        grid.append(row)
    with open(args.out, "w") as fh:
        fh.write("r," + ",".join(str(k) for k in k_values) + "\n")
        for r, row in zip(r_values, grid):
            fh.write(str(r) + "," + ",".join(_fmt(v) for v in row) + "\n")
    print(f"swept {len(r_values)}x{len(k_values)} cells; grid: {args.out}")
    return 0


# ---------------------------------------------------------------------------
# argument wiring


def _add_common(sub):
    sub.add_argument("--config", help="flat key = value config file")
    sub.add_argument("--seed", type=int, help="override the config seed")


def build_parser():
    parser = argparse.ArgumentParser(
        prog="triplethash",
        description="train, index and evaluate attention-equipped triplet hash codes",
    )
    subs = parser.add_subparsers(dest="command", required=True)

    p = subs.add_parser("gen-data", help="generate the synthetic dataset")
    _add_common(p)
    p.add_argument("--out", required=True, help="output dataset directory")
    p.add_argument("--force", action="store_true", help="overwrite a non-empty directory")
    p.set_defaults(fn=cmd_gen_data)

    p = subs.add_parser("train", help="train a model on a dataset")
    _add_common(p)
    p.add_argument("--dataset", required=True)
    p.add_argument("--out", required=True, help="checkpoint path")
    p.add_argument("--mode", choices=MODES)
    p.add_argument("--r", type=float, help="margin weight")
    p.add_argument("--k", type=int, help="hash code length")
    p.add_argument("--epochs", type=int)
    p.add_argument("--no-attention", action="store_true", help="bypass the attention block")
    p.add_argument("--loss-csv", help="per-epoch loss CSV path (default <out>.loss.csv)")
    p.set_defaults(fn=cmd_train)

    p = subs.add_parser("index", help="build a hash index from a checkpoint")
    _add_common(p)
    p.add_argument("--dataset", required=True)
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--out", required=True, help="index file path")
    p.add_argument("--split", default="train", help="gallery split name (default train)")
    p.add_argument("--k", type=int, help="expected code length (checked against checkpoint)")
    p.set_defaults(fn=cmd_index)

    p = subs.add_parser("query", help="rank index entries against one image")
    _add_common(p)
    p.add_argument("--dataset", help="needed when querying by --id")
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--index", required=True)
    p.add_argument("--id", type=int, help="query an indexed dataset image (self excluded)")
    p.add_argument("image", nargs="?", help="query an external PGM image")
    p.add_argument("--topn", help="results to return (default 10)")
    p.add_argument("--heatmap", help="write the activation-map heatmap PGM here")
    p.set_defaults(fn=cmd_query)

    p = subs.add_parser("evaluate", help="run every test image as a query")
    _add_common(p)
    p.add_argument("--dataset", required=True)
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--index", required=True)
    p.add_argument("--out", required=True, help="metrics CSV path")
    p.add_argument("--split", default="test")
    p.add_argument("--topn", help="comma-separated list, e.g. 5,10,20")
    p.set_defaults(fn=cmd_evaluate)

    p = subs.add_parser("sweep", help="grid over margin weight r and code length k")
    _add_common(p)
    p.add_argument("--dataset", required=True)
    p.add_argument("--out", required=True, help="grid CSV path")
    p.add_argument("--r", dest="r_list", default="0.3,0.5,0.7")
    p.add_argument("--k", dest="k_list", default="12,24,36,48")
    p.add_argument("--epochs", type=int, help="override epochs for the sweep")
    p.add_argument("--mode", choices=MODES)
    p.add_argument("--topn")
    p.set_defaults(fn=cmd_sweep)

    return parser


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return args.fn(args)
    except ConfigError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2
    except (FormatError, ShapeError, GraphError, OSError, RuntimeError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
