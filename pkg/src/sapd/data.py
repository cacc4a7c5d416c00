"""Synthetic shapes scenes and their on-disk format.

A dataset directory holds one binary PPM (P6) per image plus
``annotations.jsonl`` with one record per image::

    {"image": "000000.ppm", "boxes": [{"class": 1, "cx": .., "cy": .., "w": .., "h": ..}]}

Classes: 1 filled rectangle, 2 filled ellipse, 3 filled triangle.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .geometry import GroundTruthBox

CLASS_NAMES = ("rectangle", "ellipse", "triangle")
ANNOTATION_FILE = "annotations.jsonl"


@dataclass(frozen=True)
class SceneConfig:
    image_size: int = 64
    num_classes: int = 3
    min_instances: int = 1
    max_instances: int = 4
    min_size: float = 20.0
    max_size: float = 56.0
    max_aspect: float = 1.5
    noise: float = 0.08

    def __post_init__(self):
        if not 1 <= self.min_instances <= self.max_instances <= 8:
            raise ValueError("instance counts must satisfy 1 <= min <= max <= 8")
        if not 1 <= self.num_classes <= len(CLASS_NAMES):
            raise ValueError(f"num_classes must be in 1..{len(CLASS_NAMES)}")
        if self.max_size > self.image_size:
            raise ValueError("max_size larger than the image")


@dataclass
class Scene:
    image: np.ndarray  # (3, H, W) float32 in [0, 1]
    boxes: list[GroundTruthBox] = field(default_factory=list)
    name: str = ""

    @property
    def height(self) -> int:
        return self.image.shape[1]

    @property
    def width(self) -> int:
        return self.image.shape[2]


def shape_mask(class_id: int, box: GroundTruthBox, height: int, width: int) -> np.ndarray:
    """Boolean mask of the pixels (by center) covered by the shape filling ``box``."""
    ys, xs = np.mgrid[0:height, 0:width] + 0.5
    u = (xs - box.cx) / (box.w / 2)
    v = (ys - box.cy) / (box.h / 2)
    if class_id == 1:
        return (np.abs(u) <= 1) & (np.abs(v) <= 1)
    if class_id == 2:
        return u * u + v * v <= 1
    if class_id == 3:
        # apex at top-center, base along the bottom edge
        t = (v + 1) / 2
        return (t >= 0) & (t <= 1) & (np.abs(u) <= t)
    raise ValueError(f"unknown class {class_id}")


def _overlaps(a: GroundTruthBox, b: GroundTruthBox) -> bool:
    return abs(a.cx - b.cx) < (a.w + b.w) / 2 and abs(a.cy - b.cy) < (a.h + b.h) / 2


def make_scene(rng: np.random.Generator, cfg: SceneConfig = SceneConfig(), name: str = "") -> Scene:
    """Draw one noisy scene with non-overlapping shapes of log-uniform scale."""
    size = cfg.image_size
    base = rng.uniform(0.0, 0.35, size=3)
    img = base[:, None, None] + cfg.noise * rng.standard_normal((3, size, size))

    n_target = int(rng.integers(cfg.min_instances, cfg.max_instances + 1))
    boxes: list[GroundTruthBox] = []
    for _ in range(50 * n_target):
        if len(boxes) == n_target:
            break
        scale = math.exp(rng.uniform(math.log(cfg.min_size), math.log(cfg.max_size)))
        aspect = math.exp(rng.uniform(-math.log(cfg.max_aspect), math.log(cfg.max_aspect)))
        w = float(np.clip(scale * math.sqrt(aspect), cfg.min_size, cfg.max_size))
        h = float(np.clip(scale / math.sqrt(aspect), cfg.min_size, cfg.max_size))
        cx = float(rng.uniform(w / 2, size - w / 2))
        cy = float(rng.uniform(h / 2, size - h / 2))
        cls = int(rng.integers(1, cfg.num_classes + 1))
        cand = GroundTruthBox(cls, cx, cy, w, h)
        if any(_overlaps(cand, b) for b in boxes):
            continue
        boxes.append(cand)
    if not boxes:
        raise RuntimeError("could not place any instance")  # unreachable for sane configs

    for b in boxes:
        color = rng.uniform(0.55, 1.0, size=3)
        mask = shape_mask(b.class_id, b, size, size)
        img[:, mask] = color[:, None]
    pixels = np.round(np.clip(img, 0, 1) * 255).astype(np.uint8)
    return Scene(pixels.astype(np.float32) / 255.0, boxes, name)


def generate_scenes(count: int, seed: int, cfg: SceneConfig = SceneConfig()) -> list[Scene]:
    """``count`` scenes; scene ``i`` depends only on ``(seed, i)``."""
    if count < 1:
        raise ValueError("count must be >= 1")
    return [make_scene(np.random.default_rng([seed, i]), cfg, f"{i:06d}.ppm") for i in range(count)]


def flip_horizontal(scene: Scene) -> Scene:
    w = scene.width
    boxes = [GroundTruthBox(b.class_id, w - b.cx, b.cy, b.w, b.h) for b in scene.boxes]
    return Scene(np.ascontiguousarray(scene.image[:, :, ::-1]), boxes, scene.name)


# ---------------------------------------------------------------------------
# file formats
# ---------------------------------------------------------------------------


def write_ppm(path, image: np.ndarray) -> None:
    """Write a (3, H, W) float image in [0, 1] as 8-bit binary PPM."""
    _, h, w = image.shape
    pixels = np.round(np.clip(image, 0, 1) * 255).astype(np.uint8).transpose(1, 2, 0)
    with open(path, "wb") as fh:
        fh.write(f"P6\n{w} {h}\n255\n".encode("ascii"))
        fh.write(pixels.tobytes())


def read_ppm(path) -> np.ndarray:
    data = Path(path).read_bytes()
    tokens = []
    pos = 0
    while len(tokens) < 4:
        while data[pos : pos + 1].isspace():
            pos += 1
        if data[pos : pos + 1] == b"#":
            pos = data.index(b"\n", pos) + 1
            continue
        end = pos
        while not data[end : end + 1].isspace():
            end += 1
        tokens.append(data[pos:end])
        pos = end
    if tokens[0] != b"P6":
        raise ValueError(f"{path}: not a binary PPM")
    w, h, maxval = (int(t) for t in tokens[1:])
    if maxval != 255:
        raise ValueError(f"{path}: only 8-bit PPM supported")
    pixels = np.frombuffer(data[pos + 1 : pos + 1 + 3 * w * h], dtype=np.uint8)
    return pixels.reshape(h, w, 3).transpose(2, 0, 1).astype(np.float32) / 255.0


def box_to_record(b: GroundTruthBox) -> dict:
    return {"class": b.class_id, "cx": b.cx, "cy": b.cy, "w": b.w, "h": b.h}


def box_from_record(r: dict) -> GroundTruthBox:
    return GroundTruthBox(int(r["class"]), float(r["cx"]), float(r["cy"]), float(r["w"]), float(r["h"]))


def write_dataset(directory, scenes: list[Scene]) -> Path:
    directory = Path(directory)
    directory.mkdir(parents=True, exist_ok=True)
    lines = []
    for k, scene in enumerate(scenes):
        name = scene.name or f"{k:06d}.ppm"
        write_ppm(directory / name, scene.image)
        lines.append(json.dumps({"image": name, "boxes": [box_to_record(b) for b in scene.boxes]}))
    (directory / ANNOTATION_FILE).write_text("\n".join(lines) + "\n")
    return directory


def read_dataset(directory) -> list[Scene]:
    directory = Path(directory)
    scenes = []
    with open(directory / ANNOTATION_FILE) as fh:
        for line in fh:
            if not line.strip():
                continue
            rec = json.loads(line)
            img = read_ppm(directory / rec["image"])
            _, h, w = img.shape
            boxes = [box_from_record(r).clipped(w, h) for r in rec["boxes"]]
            scenes.append(Scene(img, boxes, rec["image"]))
    return scenes


def generate_dataset(directory, count: int, seed: int, cfg: SceneConfig = SceneConfig()) -> Path:
    return write_dataset(directory, generate_scenes(count, seed, cfg))
