"""Train a small detector, evaluate it and dump its selection weights.

About a minute on one CPU core. Outputs go to ``demo_run/`` (or the first
command-line argument): the resolved config, per-iteration metrics, a
checkpoint, and the weight dumps.
"""

import json
import sys
import time
from pathlib import Path

from sapd.config import RunConfig, dump_config
from sapd.data import generate_scenes
from sapd.dumps import dump_weights
from sapd.pipeline import evaluate_model
from sapd.training import train


def main():
    out = Path(sys.argv[1] if len(sys.argv) > 1 else "demo_run")
    out.mkdir(parents=True, exist_ok=True)
    cfg = RunConfig().replace(**{"train.train_count": 800, "train.epochs": 4})
    dump_config(cfg, out / "config.json")

    start = time.perf_counter()
    trainer, rows = train(cfg, out_dir=out)
    print(f"trained {len(rows)} iterations in {time.perf_counter() - start:.0f}s")
    for r in rows[:: max(1, len(rows) // 8)]:
        print(f"  iter {r['iter']:4d}  phase {r['phase']}  lr {r['lr']:.4f}  loss {r['total']:.4f}")

    val = generate_scenes(cfg.train.val_count, cfg.train.val_seed, cfg.data)
    metrics = evaluate_model(trainer.model, val, cfg)
    print("validation", json.dumps({k: round(v, 4) for k, v in metrics.items() if k.startswith("AP")}))

    dump_weights(trainer, val[:8], out)
    print(f"selection weights and weight maps written under {out}/")


if __name__ == "__main__":
    main()
