import csv
import json

import numpy as np
import pytest

from sapd.cli import ablation_config, ablation_grid, main, write_detections
from sapd.config import RunConfig, load_config
from sapd.data import read_dataset
from sapd.postprocess import Detection

TINY = {
    "model.width": 8,
    "model.stem_width": 4,
    "selection.width": 4,
    "train.train_count": 8,
    "train.val_count": 4,
    "train.batch_size": 4,
    "train.epochs": 2,
    "train.warmup_iters": 1,
}


@pytest.fixture
def config(tmp_path):
    path = tmp_path / "tiny.json"
    path.write_text(json.dumps(TINY))
    return str(path)


def run(*argv):
    return main([str(a) for a in argv])


class TestCommands:
    def test_gen_data(self, tmp_path, config, capsys):
        assert run("gen-data", "--config", config, "--out", tmp_path / "d") == 0
        assert len(read_dataset(tmp_path / "d" / "train")) == 8
        assert len(read_dataset(tmp_path / "d" / "val")) == 4
        assert (tmp_path / "d" / "config.json").exists()

    def test_train_twice_identical(self, tmp_path, config):
        for name in ("a", "b"):
            assert run("train", "--config", config, "--seed", 7, "--out", tmp_path / name) == 0
        for f in ("metrics.csv", "checkpoint.sapd"):
            assert (tmp_path / "a" / f).read_bytes() == (tmp_path / "b" / f).read_bytes()
        assert load_config(tmp_path / "a" / "config.json").train.seed == 7

    def test_resolved_config_reproduces_run(self, tmp_path, config):
        run("train", "--config", config, "--set", "weighting.eta=2", "--out", tmp_path / "a")
        run("train", "--config", tmp_path / "a" / "config.json", "--out", tmp_path / "b")
        assert (tmp_path / "a" / "metrics.csv").read_bytes() == (tmp_path / "b" / "metrics.csv").read_bytes()

    def test_train_eval_infer_dump(self, tmp_path, config, capsys):
        run("gen-data", "--config", config, "--out", tmp_path / "d")
        assert run("train", "--config", config, "--data", tmp_path / "d" / "train", "--out", tmp_path / "t") == 0
        ckpt = tmp_path / "t" / "checkpoint.sapd"
        capsys.readouterr()
        assert run("eval", "--config", config, "--checkpoint", ckpt, "--data", tmp_path / "d" / "val", "--out", tmp_path / "e") == 0
        metrics = json.loads(capsys.readouterr().out)
        assert set(metrics) == {"AP", "AP50", "AP75"}
        assert json.loads((tmp_path / "e" / "metrics.json").read_text()) == metrics

        assert run("infer", "--config", config, "--checkpoint", ckpt, "--data", tmp_path / "d" / "val", "--out", tmp_path / "i") == 0
        lines = (tmp_path / "i" / "detections.jsonl").read_text().splitlines()
        assert len(lines) == 4
        for line in lines:
            scores = [d["score"] for d in json.loads(line)["detections"]]
            assert scores == sorted(scores, reverse=True)
            assert all(s > 0.05 for s in scores)

        assert run("infer", "--config", config, "--checkpoint", ckpt, "--image", tmp_path / "d" / "val" / "000000.ppm", "--out", tmp_path / "i2") == 0

        assert run("dump-weights", "--config", config, "--checkpoint", ckpt, "--data", tmp_path / "d" / "val", "--limit", 2, "--out", tmp_path / "w") == 0
        with open(tmp_path / "w" / "selection_weights.csv") as fh:
            rows = list(csv.reader(fh))
        assert rows[0] == ["image", "instance", "P2", "P3", "P4", "P5"]
        val = read_dataset(tmp_path / "d" / "val")[:2]
        assert len(rows) - 1 == sum(len(s.boxes) for s in val)
        for r in rows[1:]:
            probs = [float(v) for v in r[2:] if v]
            if probs:
                assert sum(probs) == pytest.approx(1.0, abs=1e-6)
        pgms = sorted((tmp_path / "w" / "weight_maps").iterdir())
        assert len(pgms) == 2 * 4
        head = pgms[0].read_bytes()
        assert head.startswith(b"P5\n")

    def test_eval_perfect_oracle(self, tmp_path, config, capsys):
        run("gen-data", "--config", config, "--out", tmp_path / "d")
        scenes = read_dataset(tmp_path / "d" / "val")
        dets = [[Detection(b.class_id, 0.9, b.corners(), 2) for b in s.boxes] for s in scenes]
        write_detections(tmp_path / "oracle.jsonl", [s.name for s in scenes], dets)
        capsys.readouterr()
        assert run("eval", "--config", config, "--data", tmp_path / "d" / "val", "--detections", tmp_path / "oracle.jsonl", "--out", tmp_path / "e") == 0
        assert json.loads(capsys.readouterr().out) == {"AP": 1.0, "AP50": 1.0, "AP75": 1.0}

    def test_ablate(self, tmp_path, config):
        argv = ["ablate", "--config", config, "--out", tmp_path / "ab",
                "--set", "ablate.soft_weight=true,false", "--set", "ablate.top_k=1,2", "--set", "train.train_count=4"]
        assert run(*argv) == 0
        with open(tmp_path / "ab" / "ablate.csv") as fh:
            rows = list(csv.DictReader(fh))
        assert len(rows) == 2 * 2 * 2  # soft_weight x soft_select x top_k
        assert {r["top_k"] for r in rows} == {"1", "2"}
        assert all(0.0 <= float(r["AP"]) <= 1.0 for r in rows)


class TestAblationGrid:
    def test_grid_is_cross_product(self):
        cfg = RunConfig().replace(**{"ablate.eta": [0.1, 0.5, 1.0, 2.0], "ablate.top_k": [1, 2, 3, 4], "ablate.mode": ["both", "off"], "ablate.seeds": [0, 1]})
        assert len(ablation_grid(cfg)) == 2 * 2 * 4 * 4 * 2 * 2

    def test_soft_weight_off_flattens_centerness(self):
        cfg = ablation_config(RunConfig(), False, True, 2.0, 2, "both", 3)
        assert cfg.weighting.eta == 0.0 and cfg.train.soft_select and cfg.selection.top_k == 2 and cfg.train.seed == 3


class TestErrors:
    def one_line_error(self, capsys):
        err = capsys.readouterr().err
        assert err.count("\n") == 1 and err.startswith("sapd: error: ")
        return err

    def test_unknown_key(self, tmp_path, capsys):
        assert run("train", "--set", "train.nope=1", "--out", tmp_path) == 1
        assert "KeyError" in self.one_line_error(capsys)

    def test_missing_checkpoint(self, tmp_path, config, capsys):
        assert run("eval", "--config", config, "--out", tmp_path) == 2
        assert "--checkpoint" in self.one_line_error(capsys)

    def test_bad_checkpoint_path(self, tmp_path, config, capsys):
        assert run("infer", "--config", config, "--checkpoint", tmp_path / "none.sapd", "--out", tmp_path) == 1
        assert "FileNotFoundError" in self.one_line_error(capsys)

    def test_unknown_subcommand(self, capsys):
        assert run("fly") == 2
        self.one_line_error(capsys)

    def test_missing_config_file(self, tmp_path, capsys):
        assert run("train", "--config", tmp_path / "nope.json", "--out", tmp_path) == 1
        self.one_line_error(capsys)
