"""Grid probe over dataset difficulty and learning rate for mode gaps."""

import itertools
import sys
import time

import numpy as np

from triplethash import train as tr
from triplethash.data import DatasetSpec, generate_dataset, train_test_split
from triplethash.network import NetConfig

modes = sys.argv[1].split(",") if len(sys.argv) > 1 else ["combined", "no_attention"]
noises = [float(v) for v in sys.argv[2].split(",")] if len(sys.argv) > 2 else [0.6, 0.7]
lrs = [float(v) for v in sys.argv[3].split(",")] if len(sys.argv) > 3 else [0.01, 0.005]
seeds = [int(v) for v in sys.argv[4].split(",")] if len(sys.argv) > 4 else [0]
tpe = int(sys.argv[5]) if len(sys.argv) > 5 else 80

for noise, lr, seed in itertools.product(noises, lrs, seeds):
    spec = DatasetSpec(class_counts=(200, 40, 20, 40), image_size=64,
                       roi_size=12, noise_level=noise, seed=seed)
    images = generate_dataset(spec)
    train_ids, test_ids = train_test_split(images, 0.2, seed)
    by_id = {img.id: img for img in images}
    gallery = [by_id[i] for i in train_ids]
    queries = [by_id[i] for i in test_ids]
    for m in modes:
        mode = "combined" if m == "no_attention" else m
        att = m != "no_attention"
        cfg = NetConfig(input_size=64, hash_bits=36, num_classes=4, margin_weight=0.5,
                        use_attention=att, seed=seed + 1000, lr=lr, epochs=50)
        t0 = time.perf_counter()
        model, rows = tr.train_model(images, train_ids, cfg, mode=mode, triplets_per_epoch=tpe)
        index = tr.build_index(model, gallery)
        blocks, cls = tr.evaluate_model(model, index, queries, (10,))
        s = blocks[0][2]
        sens = {c.label: c.sensitivity for c in cls}
        print(f"noise={noise} lr={lr} seed={seed} {m:13s} mAP={s.mean_average_precision:.4f} "
              f"minAP={s.per_class_ap.get(2, 0):.4f} minSens={sens.get(2)} "
              f"loss={rows[-1].total:.2f} ({time.perf_counter()-t0:.0f}s)", flush=True)
