"""``sapd`` command line: data generation, training, inference, evaluation, ablations.

Every invocation writes into one run directory (``--out``) holding the fully
resolved ``config.json``, a log file and the command's outputs. Failures
print a single ``sapd: error: <Kind>: <message>`` line on stderr and exit
with status 1 (2 for usage errors).
"""

from __future__ import annotations

import argparse
import csv
import itertools
import json
import logging
import sys
import time
from pathlib import Path

import numpy as np

from .config import RunConfig, dump_config, load_config
from .data import generate_dataset, generate_scenes, read_dataset, read_ppm
from .dumps import dump_weights
from .evaluation import evaluate
from .pipeline import infer
from .postprocess import Detection
from .training import Trainer, train

log = logging.getLogger("sapd")

CONFIG_NAME = "config.json"
DETECTIONS_NAME = "detections.jsonl"
EVAL_NAME = "metrics.json"
ABLATE_NAME = "ablate.csv"
ABLATE_COLUMNS = ("soft_weight", "soft_select", "eta", "top_k", "mode", "seed", "AP", "AP50", "AP75", "seconds")


class UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        raise UsageError(message)


# ---------------------------------------------------------------------------
# helpers
# ---------------------------------------------------------------------------


def _resolve(args) -> RunConfig:
    overrides = list(args.set or [])
    if args.seed is not None:
        overrides.append(f"train.seed={args.seed}")
    return load_config(args.config, overrides)


def _open_run(args, cfg: RunConfig) -> tuple[Path, logging.Handler]:
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    dump_config(cfg, out / CONFIG_NAME)
    handler = logging.FileHandler(out / f"{args.command}.log", mode="w")
    handler.setFormatter(logging.Formatter("%(asctime)s %(name)s %(levelname)s %(message)s"))
    root = logging.getLogger()
    root.addHandler(handler)
    root.setLevel(logging.INFO)
    return out, handler


def _scenes(cfg: RunConfig, data, split: str):
    """Scenes from a dataset directory, or generated from the config seeds."""
    if data is not None:
        return read_dataset(data)
    tc = cfg.train
    if split == "train":
        return generate_scenes(tc.train_count, tc.data_seed, cfg.data)
    return generate_scenes(tc.val_count, tc.val_seed, cfg.data)


def _load_trainer(cfg: RunConfig, checkpoint) -> Trainer:
    if checkpoint is None:
        raise UsageError("this command requires --checkpoint")
    trainer = Trainer(cfg)
    trainer.load(checkpoint)
    return trainer


def _detection_record(d: Detection) -> dict:
    return {"class": d.class_id, "score": d.score, "box": [float(v) for v in d.box], "level": d.level}


def write_detections(path, names, detections) -> None:
    with open(path, "w") as fh:
        for name, dets in zip(names, detections):
            fh.write(json.dumps({"image": name, "detections": [_detection_record(d) for d in dets]}) + "\n")


def read_detections(path) -> dict[str, list[Detection]]:
    out = {}
    with open(path) as fh:
        for line in fh:
            if not line.strip():
                continue
            rec = json.loads(line)
            out[rec["image"]] = [
                Detection(int(d["class"]), float(d["score"]), np.asarray(d["box"], dtype=np.float64), int(d.get("level", -1)))
                for d in rec["detections"]
            ]
    return out


def ablation_grid(cfg: RunConfig):
    """Every (soft_weight, soft_select, eta, top_k, mode, seed) combination."""
    a = cfg.ablate
    return list(itertools.product(a.soft_weight, a.soft_select, a.eta, a.top_k, a.mode, a.seeds))


def ablation_config(cfg: RunConfig, soft_weight, soft_select, eta, top_k, mode, seed) -> RunConfig:
    # soft weighting off keeps any level weights; it only flattens centerness to 1
    return cfg.replace(
        **{
            "weighting.eta": eta if soft_weight else 0.0,
            "weighting.mode": mode,
            "train.soft_select": soft_select,
            "selection.top_k": top_k,
            "train.seed": seed,
        }
    )


# ---------------------------------------------------------------------------
# subcommands
# ---------------------------------------------------------------------------


def cmd_gen_data(args, cfg: RunConfig, out: Path) -> None:
    tc = cfg.train
    generate_dataset(out / "train", tc.train_count, tc.data_seed, cfg.data)
    generate_dataset(out / "val", tc.val_count, tc.val_seed, cfg.data)
    print(json.dumps({"train": str(out / "train"), "val": str(out / "val")}))


def cmd_train(args, cfg: RunConfig, out: Path) -> None:
    start = time.perf_counter()
    _, rows = train(cfg, _scenes(cfg, args.data, "train"), out_dir=out)
    print(json.dumps({"iterations": len(rows), "final_loss": rows[-1]["total"], "seconds": time.perf_counter() - start}))


def cmd_eval(args, cfg: RunConfig, out: Path) -> None:
    scenes = _scenes(cfg, args.data, "val")
    if args.detections is not None:
        by_name = read_detections(args.detections)
        missing = [s.name for s in scenes if s.name not in by_name]
        if missing:
            raise ValueError(f"no detections recorded for image {missing[0]!r}")
        dets = [by_name[s.name] for s in scenes]
    else:
        trainer = _load_trainer(cfg, args.checkpoint)
        dets = infer(trainer.model, np.stack([s.image for s in scenes]), cfg)
    metrics = evaluate(dets, [s.boxes for s in scenes], cfg.data.num_classes)
    (out / EVAL_NAME).write_text(json.dumps(metrics, indent=2) + "\n")
    print(json.dumps(metrics))


def cmd_infer(args, cfg: RunConfig, out: Path) -> None:
    trainer = _load_trainer(cfg, args.checkpoint)
    if args.image is not None:
        names = [Path(p).name for p in args.image]
        images = np.stack([read_ppm(p) for p in args.image])
    else:
        scenes = _scenes(cfg, args.data, "val")
        names = [s.name for s in scenes]
        images = np.stack([s.image for s in scenes])
    dets = infer(trainer.model, images, cfg)
    write_detections(out / DETECTIONS_NAME, names, dets)
    print(json.dumps({"images": len(names), "detections": sum(len(d) for d in dets)}))


def cmd_dump_weights(args, cfg: RunConfig, out: Path) -> None:
    trainer = _load_trainer(cfg, args.checkpoint)
    scenes = _scenes(cfg, args.data, "val")[: args.limit]
    dump_weights(trainer, scenes, out)
    print(json.dumps({"scenes": len(scenes), "out": str(out)}))


def cmd_ablate(args, cfg: RunConfig, out: Path) -> None:
    train_scenes = _scenes(cfg, args.data, "train")
    val_scenes = _scenes(cfg, args.val_data, "val")
    grid = ablation_grid(cfg)
    with open(out / ABLATE_NAME, "w", newline="") as fh:
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(ABLATE_COLUMNS)
        for n, combo in enumerate(grid):
            run_cfg = ablation_config(cfg, *combo)
            run_dir = out / f"run{n:03d}"
            run_dir.mkdir(exist_ok=True)
            dump_config(run_cfg, run_dir / CONFIG_NAME)
            log.info("ablation %d/%d: %s", n + 1, len(grid), combo)
            start = time.perf_counter()
            trainer, _ = train(run_cfg, train_scenes, out_dir=run_dir)
            dets = infer(trainer.model, np.stack([s.image for s in val_scenes]), run_cfg)
            m = evaluate(dets, [s.boxes for s in val_scenes], run_cfg.data.num_classes)
            writer.writerow(list(combo) + [repr(m["AP"]), repr(m["AP50"]), repr(m["AP75"]), f"{time.perf_counter() - start:.1f}"])
            fh.flush()
    print(json.dumps({"runs": len(grid), "csv": str(out / ABLATE_NAME)}))


COMMANDS = {
    "gen-data": cmd_gen_data,
    "train": cmd_train,
    "eval": cmd_eval,
    "infer": cmd_infer,
    "dump-weights": cmd_dump_weights,
    "ablate": cmd_ablate,
}


def build_parser() -> argparse.ArgumentParser:
    common = _Parser(add_help=False)
    common.add_argument("--config", help="JSON file of dotted-key settings")
    common.add_argument("--seed", type=int, help="overrides train.seed")
    common.add_argument("--out", required=True, help="run directory")
    common.add_argument("--checkpoint", help="model checkpoint to load")
    common.add_argument("--set", action="append", metavar="KEY=VALUE", help="override a config key (repeatable)")

    parser = _Parser(prog="sapd", description=__doc__.splitlines()[0])
    sub = parser.add_subparsers(dest="command", required=True, parser_class=_Parser)
    sub.add_parser("gen-data", parents=[common], help="write train/val datasets")
    p = sub.add_parser("train", parents=[common], help="train and write metrics + checkpoint")
    p.add_argument("--data", help="training dataset directory (default: generate from config)")
    p = sub.add_parser("eval", parents=[common], help="AP metrics of a checkpoint or a detections file")
    p.add_argument("--data", help="evaluation dataset directory (default: generate from config)")
    p.add_argument("--detections", help="detections JSONL to score instead of running a checkpoint")
    p = sub.add_parser("infer", parents=[common], help="write detections for a dataset or images")
    p.add_argument("--data", help="dataset directory (default: generate from config)")
    p.add_argument("--image", nargs="+", help="PPM images")
    p = sub.add_parser("dump-weights", parents=[common], help="selection weights CSV and weight-map PGMs")
    p.add_argument("--data", help="dataset directory (default: generate from config)")
    p.add_argument("--limit", type=int, default=16, help="number of scenes to dump")
    p = sub.add_parser("ablate", parents=[common], help="train and evaluate every configured combination")
    p.add_argument("--data", help="training dataset directory")
    p.add_argument("--val-data", help="evaluation dataset directory")
    return parser


def _one_line(text: str) -> str:
    return " ".join(str(text).split())


def main(argv=None) -> int:
    handler = None
    try:
        args = build_parser().parse_args(argv)
        cfg = _resolve(args)
        out, handler = _open_run(args, cfg)
        COMMANDS[args.command](args, cfg, out)
    except UsageError as e:
        print(f"sapd: error: UsageError: {_one_line(e)}", file=sys.stderr)
        return 2
    except Exception as e:  # noqa: BLE001 - every failure becomes one stderr line
        msg = e.args[0] if isinstance(e, KeyError) and e.args else e
        print(f"sapd: error: {type(e).__name__}: {_one_line(msg)}", file=sys.stderr)
        return 1
    finally:
        if handler is not None:
            logging.getLogger().removeHandler(handler)
            handler.close()
    return 0


if __name__ == "__main__":
    sys.exit(main())
