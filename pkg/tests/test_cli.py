"""End-to-end CLI tests on a tiny dataset (2 epochs, 26 images)."""

import subprocess
import sys
from pathlib import Path

import numpy as np
import pytest

from triplethash.data import load_dataset, read_pgm

TINY_CFG = """
class_counts = 12,8,6
image_size = 64
epochs = 2
seed = 7
batch = 5
"""


def run_cli(*argv, check=True):
    proc = subprocess.run(
        [sys.executable, "-m", "triplethash.cli", *argv],
        capture_output=True,
        text=True,
    )
    if check and proc.returncode != 0:
        raise AssertionError(f"cli failed ({proc.returncode}): {proc.stderr}")
    return proc


@pytest.fixture(scope="module")
def workspace(tmp_path_factory):
    root = tmp_path_factory.mktemp("cliwork")
    cfg = root / "run.cfg"
    cfg.write_text(TINY_CFG)
    ds = root / "ds"
    ckpt = root / "model.ath"
    idx = root / "codes.athx"
    run_cli("gen-data", "--config", str(cfg), "--out", str(ds))
    run_cli("train", "--config", str(cfg), "--dataset", str(ds), "--out", str(ckpt))
    run_cli("index", "--config", str(cfg), "--dataset", str(ds),
            "--checkpoint", str(ckpt), "--out", str(idx))
    return {"root": root, "cfg": cfg, "ds": ds, "ckpt": ckpt, "idx": idx}


class TestGenData:
    def test_dataset_roundtrips(self, workspace):
        images = load_dataset(workspace["ds"])
        assert len(images) == 26
        assert (workspace["ds"] / "train.txt").exists()
        assert (workspace["ds"] / "test.txt").exists()

    def test_refuses_nonempty_without_force(self, workspace):
        proc = run_cli("gen-data", "--config", str(workspace["cfg"]),
                       "--out", str(workspace["ds"]), check=False)
        assert proc.returncode == 2
        assert "force" in proc.stderr

    def test_force_regenerates_identically(self, workspace, tmp_path):
        out = tmp_path / "ds2"
        run_cli("gen-data", "--config", str(workspace["cfg"]), "--out", str(out))
        a = sorted(p.name for p in out.iterdir())
        b = sorted(p.name for p in workspace["ds"].iterdir())
        assert a == b
        for name in a:
            assert (out / name).read_bytes() == (workspace["ds"] / name).read_bytes()

    def test_bad_class_counts_usage_error(self, workspace, tmp_path):
        cfg = tmp_path / "bad.cfg"
        cfg.write_text("class_counts = 5\n")
        proc = run_cli("gen-data", "--config", str(cfg), "--out", str(tmp_path / "x"),
                       check=False)
        assert proc.returncode == 2


class TestTrain:
    def test_loss_csv_rows(self, workspace):
        rows = (workspace["root"] / "model.ath.loss.csv").read_text().splitlines()
        assert rows[0] == "epoch,total,hinge_term,ce_term"
        assert len(rows) == 3  # header + 2 epochs

    def test_combined_total_is_sum_of_terms(self, workspace):
        for line in (workspace["root"] / "model.ath.loss.csv").read_text().splitlines()[1:]:
            _, total, hinge, ce = line.split(",")
            assert abs(float(total) - (float(hinge) + float(ce))) < 1e-9

    def test_deterministic_checkpoint_bytes(self, workspace, tmp_path):
        out = tmp_path / "again.ath"
        run_cli("train", "--config", str(workspace["cfg"]), "--dataset", str(workspace["ds"]),
                "--out", str(out))
        assert out.read_bytes() == workspace["ckpt"].read_bytes()
        assert (tmp_path / "again.ath.loss.csv").read_bytes() == (
            workspace["root"] / "model.ath.loss.csv"
        ).read_bytes()

    def test_dataset_too_small_for_triplets(self, tmp_path):
        cfg = tmp_path / "solo.cfg"
        cfg.write_text("class_counts = 2,2\nimage_size = 64\nepochs = 1\nseed = 1\nbatch = 4\n")
        ds = tmp_path / "ds"
        run_cli("gen-data", "--config", str(cfg), "--out", str(ds))
        # force the train split down to one class member by rewriting train.txt
        images = load_dataset(ds)
        keep = [img.id for img in images if img.label == 0][:1] + [
            img.id for img in images if img.label == 1
        ]
        (ds / "train.txt").write_text("\n".join(str(i) for i in keep) + "\n")
        proc = run_cli("train", "--config", str(cfg), "--dataset", str(ds),
                       "--out", str(tmp_path / "m.ath"), check=False)
        assert proc.returncode == 2
        assert "two images" in proc.stderr or "class" in proc.stderr


class TestIndex:
    def test_size_matches_gallery(self, workspace):
        from triplethash import index as hidx

        idx = hidx.load(workspace["idx"])
        train_ids = (workspace["ds"] / "train.txt").read_text().split()
        assert idx.size == len(train_ids)

    def test_rerun_byte_identical(self, workspace, tmp_path):
        out = tmp_path / "codes2.athx"
        run_cli("index", "--config", str(workspace["cfg"]), "--dataset", str(workspace["ds"]),
                "--checkpoint", str(workspace["ckpt"]), "--out", str(out))
        assert out.read_bytes() == workspace["idx"].read_bytes()

    def test_missing_checkpoint_names_path(self, workspace, tmp_path):
        missing = tmp_path / "nope.ath"
        proc = run_cli("index", "--dataset", str(workspace["ds"]),
                       "--checkpoint", str(missing), "--out", str(tmp_path / "o"),
                       check=False)
        assert proc.returncode == 1
        assert "nope.ath" in proc.stderr

    def test_k_mismatch_errors(self, workspace, tmp_path):
        proc = run_cli("index", "--dataset", str(workspace["ds"]),
                       "--checkpoint", str(workspace["ckpt"]),
                       "--out", str(tmp_path / "o"), "--k", "12", check=False)
        assert proc.returncode == 2
        assert "36" in proc.stderr


class TestQuery:
    def test_self_excluded_and_topn_respected(self, workspace):
        train_ids = [int(v) for v in (workspace["ds"] / "train.txt").read_text().split()]
        qid = train_ids[0]
        proc = run_cli("query", "--dataset", str(workspace["ds"]),
                       "--checkpoint", str(workspace["ckpt"]), "--index", str(workspace["idx"]),
                       "--id", str(qid), "--topn", "5")
        lines = [l for l in proc.stdout.splitlines() if l and l[0].isdigit()]
        assert len(lines) == 5
        returned_ids = [int(l.split(",")[1]) for l in lines]
        assert qid not in returned_ids

    def test_heatmap_is_valid_pgm(self, workspace, tmp_path):
        hm = tmp_path / "hm.pgm"
        train_ids = (workspace["ds"] / "train.txt").read_text().split()
        run_cli("query", "--dataset", str(workspace["ds"]),
                "--checkpoint", str(workspace["ckpt"]), "--index", str(workspace["idx"]),
                "--id", train_ids[0], "--topn", "3", "--heatmap", str(hm))
        gray = read_pgm(hm)
        assert gray.shape == (64, 64)

    def test_external_image_query(self, workspace, tmp_path):
        name = read_pgm(workspace["ds"] / "img_00000.pgm")
        from triplethash.data import write_pgm

        path = tmp_path / "ext.pgm"
        write_pgm(path, name)
        proc = run_cli("query", "--checkpoint", str(workspace["ckpt"]),
                       "--index", str(workspace["idx"]), str(path), "--topn", "3")
        lines = [l for l in proc.stdout.splitlines() if l and l[0].isdigit()]
        assert len(lines) == 3

    def test_size_mismatch_errors(self, workspace, tmp_path):
        from triplethash.data import write_pgm

        path = tmp_path / "small.pgm"
        write_pgm(path, np.zeros((32, 32), np.uint8))
        proc = run_cli("query", "--checkpoint", str(workspace["ckpt"]),
                       "--index", str(workspace["idx"]), str(path), check=False)
        assert proc.returncode == 2
        assert "(64, 64)" in proc.stderr


class TestEvaluate:
    def test_summary_matches_per_query_rows(self, workspace, tmp_path):
        out = tmp_path / "metrics.csv"
        run_cli("evaluate", "--config", str(workspace["cfg"]), "--dataset", str(workspace["ds"]),
                "--checkpoint", str(workspace["ckpt"]), "--index", str(workspace["idx"]),
                "--out", str(out), "--topn", "5,10,20")
        text = out.read_text().splitlines()
        blocks = [i for i, l in enumerate(text) if l.startswith("summary,")]
        assert len(blocks) == 3  # one summary block per topn
        # recompute mAP of the first block from its per-query rows
        start = text.index("id,label,hr,ap,rr") + 1
        aps = []
        for line in text[start:]:
            if line.startswith("summary,"):
                break
            aps.append(float(line.split(",")[3]))
        stated = float(next(l for l in text if l.startswith("mAP,")).split(",")[1])
        assert abs(stated - sum(aps) / len(aps)) < 1e-12

    def test_classification_block_present(self, workspace, tmp_path):
        out = tmp_path / "m2.csv"
        run_cli("evaluate", "--config", str(workspace["cfg"]), "--dataset", str(workspace["ds"]),
                "--checkpoint", str(workspace["ckpt"]), "--index", str(workspace["idx"]),
                "--out", str(out))
        text = out.read_text()
        assert "classification" in text
        assert "class,support,sensitivity,specificity,auc,defined" in text

    def test_empty_split_errors(self, workspace, tmp_path):
        (workspace["ds"] / "empty.txt").write_text("")
        proc = run_cli("evaluate", "--dataset", str(workspace["ds"]),
                       "--checkpoint", str(workspace["ckpt"]), "--index", str(workspace["idx"]),
                       "--out", str(tmp_path / "x.csv"), "--split", "empty", check=False)
        assert proc.returncode == 2


class TestSweep:
    def test_single_cell_equals_plain_run(self, workspace, tmp_path):
        grid = tmp_path / "grid.csv"
        run_cli("sweep", "--config", str(workspace["cfg"]), "--dataset", str(workspace["ds"]),
                "--out", str(grid), "--r", "0.5", "--k", "36")
        rows = grid.read_text().splitlines()
        assert rows[0] == "r,36"
        cell = float(rows[1].split(",")[1])
        metrics = tmp_path / "plain.csv"
        run_cli("evaluate", "--config", str(workspace["cfg"]), "--dataset", str(workspace["ds"]),
                "--checkpoint", str(workspace["ckpt"]), "--index", str(workspace["idx"]),
                "--out", str(metrics), "--topn", "10")
        stated = float(next(l for l in metrics.read_text().splitlines()
                            if l.startswith("mAP,")).split(",")[1])
        assert abs(cell - stated) < 1e-12

    def test_grid_shape(self, workspace, tmp_path):
        grid = tmp_path / "g2.csv"
        run_cli("sweep", "--config", str(workspace["cfg"]), "--dataset", str(workspace["ds"]),
                "--out", str(grid), "--r", "0.3,0.7", "--k", "12,24", "--epochs", "1")
        rows = grid.read_text().splitlines()
        assert rows[0] == "r,12,24"
        assert len(rows) == 3
        assert rows[1].startswith("0.3,") and rows[2].startswith("0.7,")


class TestExitCodes:
    def test_usage_error_is_2(self):
        proc = run_cli("train", check=False)  # missing required args
        assert proc.returncode == 2

    def test_unknown_config_key_is_2(self, tmp_path):
        cfg = tmp_path / "bad.cfg"
        cfg.write_text("definitely_unknown = 1\n")
        proc = run_cli("gen-data", "--config", str(cfg), "--out", str(tmp_path / "x"),
                       check=False)
        assert proc.returncode == 2
        assert "unknown config key" in proc.stderr

    def test_corrupt_checkpoint_is_1(self, workspace, tmp_path):
        bad = tmp_path / "bad.ath"
        bad.write_bytes(b"JUNKJUNKJUNK")
        proc = run_cli("index", "--dataset", str(workspace["ds"]),
                       "--checkpoint", str(bad), "--out", str(tmp_path / "o"), check=False)
        assert proc.returncode == 1
        assert "magic" in proc.stderr
