"""Print per-level anchor weight maps for one synthetic scene.

Every instance is spread over all pyramid levels with fixed level weights so
the effect of the centerness exponent is visible on each grid. Run with
``python demos/anchor_weights.py``.
"""

import dataclasses

import numpy as np

from sapd.config import RunConfig
from sapd.data import generate_scenes
from sapd.targets import build_targets

SHADES = " .:-=+*#%@"


def ascii_map(t):
    rows = []
    for r in range(t.weight.shape[0]):
        row = ""
        for c in range(t.weight.shape[1]):
            if not t.positive[r, c]:
                row += " "
            else:
                row += SHADES[min(len(SHADES) - 1, 1 + int(t.weight[r, c] * (len(SHADES) - 2)))]
        rows.append("|" + row + "|")
    return "\n".join(rows)


def main():
    cfg = RunConfig()
    scene = generate_scenes(1, seed=3, cfg=cfg.data)[0]
    print(f"scene with {len(scene.boxes)} instances:")
    for b in scene.boxes:
        print(f"  class {b.class_id} centre ({b.cx:.1f}, {b.cy:.1f}) size {b.w:.1f} x {b.h:.1f}")

    level_weights = np.array([0.4, 0.3, 0.2, 0.1])
    assignments = [[(k, float(w)) for k, w in enumerate(level_weights)] for _ in scene.boxes]
    for eta in (0.0, 1.0, 2.0):
        weighting = dataclasses.replace(cfg.weighting, eta=eta)
        targets = build_targets(scene.boxes, assignments, cfg.pyramid, weighting, cfg.geometry.z)
        print(f"\neta = {eta}")
        for level, t in zip(cfg.pyramid.levels, targets):
            pos = t.weight[t.positive]
            summary = f"{pos.size} positives, weight sum {pos.sum():.3f}" if pos.size else "no positives"
            print(f"P{level} ({t.weight.shape[0]}x{t.weight.shape[1]}): {summary}")
            if level == cfg.pyramid.levels[0]:
                print(ascii_map(t))


if __name__ == "__main__":
    main()
