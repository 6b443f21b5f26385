"""Synthetic imbalanced segmentation scenes.

Three label classes: 0 background, 1 elongated streaks, 2 compact blobs.
Pixel budgets per scene are drawn by probabilistic rounding of the requested
frequencies and then painted exactly, so aggregate label frequencies converge
to the request with no bias. Streak and blob signal is injected into
designated channels; the remaining channels carry uncorrelated distractor
shapes so a model cannot segment from brightness alone.

One scene per file: header (magic "SCN1", version, C, H, W as u32 LE), then
the float32 LE field, then the u8 label grid.
"""

from __future__ import annotations

import json
import math
import os
import struct
from dataclasses import dataclass, field, fields

import numpy as np

SCENE_MAGIC = 0x314E4353  # little-endian bytes b"SCN1"
SCENE_VERSION = 1
_HEADER = struct.Struct("<5I")

CLASS_NAMES = ("BG", "AR", "TC")


@dataclass(frozen=True)
class SceneConfig:
    count: int = 1000
    channels: int = 16
    height: int = 64
    width: int = 48
    frequencies: tuple = (0.982, 0.017, 0.001)
    noise_sigma: float = 1.0
    amplitude: float = 3.0
    streak_channels: tuple = (0, 1, 2, 3)
    blob_channels: tuple = (4, 5, 6, 7)

    def __post_init__(self):
        if min(self.count, self.channels, self.height, self.width) < 1:
            raise ValueError("count, channels, height and width must be positive")
        f = self.frequencies
        if len(f) != 3 or any(v < 0 for v in f) or abs(sum(f) - 1.0) > 1e-9:
            raise ValueError(f"frequencies must be 3 non-negatives summing to 1: {f}")
        hw = self.height * self.width
        if f[1] * hw > hw or f[2] * hw > hw or (f[1] + f[2]) * hw > hw:
            raise ValueError("requested shape pixels exceed the image")
        chans = self.streak_channels + self.blob_channels
        if chans and max(chans) >= self.channels:
            raise ValueError("signal channel index out of range")

    def to_dict(self) -> dict:
        return {f.name: getattr(self, f.name) for f in fields(self)}

    @classmethod
    def from_dict(cls, d: dict) -> "SceneConfig":
        d = dict(d)
        for key in ("frequencies", "streak_channels", "blob_channels"):
            if key in d:
                d[key] = tuple(d[key])
        return cls(**d)


@dataclass(frozen=True)
class SyntheticScene:
    name: str
    field: np.ndarray   # [C, H, W] float32
    labels: np.ndarray  # [H, W] uint8

    def __post_init__(self):
        if self.field.ndim != 3 or self.labels.shape != self.field.shape[1:]:
            raise ValueError("field must be [C,H,W] with matching labels")

    def class_counts(self, classes: int = 3) -> np.ndarray:
        return np.bincount(self.labels.reshape(-1), minlength=classes)


def _prob_round(rng, x: float) -> int:
    base = math.floor(x)
    return base + (1 if rng.random() < x - base else 0)


def _paint_blob(rng, labels, count: int, value: int) -> None:
    """Mark exactly ``count`` free pixels forming a compact region."""
    if count == 0:
        return
    h, w = labels.shape
    cy = rng.uniform(0, h)
    cx = rng.uniform(0, w)
    yy, xx = np.mgrid[0:h, 0:w]
    # jittered distance ordering keeps the region compact but not a perfect disc
    dist = (yy - cy) ** 2 + (xx - cx) ** 2 + rng.uniform(0, 2.0, size=(h, w))
    order = np.argsort(dist.reshape(-1), kind="stable")
    free = order[labels.reshape(-1)[order] == 0][:count]
    if free.size < count:
        raise ValueError("not enough free pixels for the blob")
    labels.reshape(-1)[free] = value


def _streak_coords(rng, h: int, w: int):
    """Integer pixel coordinates of one random elongated stroke."""
    y = rng.uniform(0, h)
    x = rng.uniform(0, w)
    theta = rng.uniform(0, math.pi)
    dy, dx = math.sin(theta), math.cos(theta)
    length = rng.uniform(0.3, 1.0) * max(h, w)
    width = rng.integers(1, 3)
    seen = []
    for t in range(int(length)):
        py, px = y + t * dy, x + t * dx
        for off in range(width):
            r, c = int(py) + off, int(px)
            if 0 <= r < h and 0 <= c < w:
                seen.append((r, c))
    return seen


def _paint_streaks(rng, labels, count: int, value: int) -> None:
    """Mark exactly ``count`` free pixels using elongated strokes."""
    remaining = count
    stuck = 0
    while remaining > 0:
        added = 0
        for r, c in _streak_coords(rng, *labels.shape):
            if labels[r, c] == 0:
                labels[r, c] = value
                added += 1
                remaining -= 1
                if remaining == 0:
                    break
        stuck = stuck + 1 if added == 0 else 0
        if stuck > 1000:
            raise ValueError("could not place requested streak pixels")


def make_scene(cfg: SceneConfig, rng, name: str) -> SyntheticScene:
    h, w, c = cfg.height, cfg.width, cfg.channels
    hw = h * w
    n_blob = _prob_round(rng, cfg.frequencies[2] * hw)
    n_streak = _prob_round(rng, cfg.frequencies[1] * hw)
    if n_blob + n_streak > hw:
        raise ValueError("requested class pixels exceed the image")

    labels = np.zeros((h, w), dtype=np.uint8)
    _paint_blob(rng, labels, n_blob, 2)
    _paint_streaks(rng, labels, n_streak, 1)

    data = rng.standard_normal((c, h, w)).astype(np.float32) * cfg.noise_sigma
    # smooth large-scale background structure, shared across channels
    coarse = rng.standard_normal((h // 8 + 1, w // 8 + 1)).astype(np.float32)
    data += np.repeat(np.repeat(coarse, 8, 0), 8, 1)[:h, :w] * cfg.noise_sigma

    amp = np.float32(cfg.amplitude)
    for ch in cfg.streak_channels:
        data[ch][labels == 1] += amp
    for ch in cfg.blob_channels:
        data[ch][labels == 2] += amp

    # distractor shapes on non-signal channels, uncorrelated with the labels
    signal = set(cfg.streak_channels) | set(cfg.blob_channels)
    fake = np.zeros((h, w), dtype=np.uint8)
    for ch in range(c):
        if ch in signal:
            continue
        fake[:] = 0
        _paint_streaks(rng, fake, min(n_streak + n_blob, hw), 1)
        data[ch][fake == 1] += amp

    return SyntheticScene(name=name, field=data, labels=labels)


def gen_dataset(cfg: SceneConfig, seed: int) -> list:
    """Seeded-deterministic list of scenes matching the requested frequencies."""
    scenes = []
    for i in range(cfg.count):
        rng = np.random.default_rng((seed, i))
        scenes.append(make_scene(cfg, rng, name=f"scene{i:05d}"))
    return scenes


def aggregate_frequencies(scenes, classes: int = 3) -> np.ndarray:
    counts = np.zeros(classes, dtype=np.int64)
    for s in scenes:
        counts += s.class_counts(classes)
    return counts / counts.sum()


# -- file format ----------------------------------------------------------


def scene_bytes(scene: SyntheticScene) -> bytes:
    c, h, w = scene.field.shape
    header = _HEADER.pack(SCENE_MAGIC, SCENE_VERSION, c, h, w)
    body = scene.field.astype("<f4", copy=False).tobytes()
    return header + body + scene.labels.astype(np.uint8, copy=False).tobytes()


def write_scene(path: str, scene: SyntheticScene) -> int:
    blob = scene_bytes(scene)
    with open(path, "wb") as fh:
        fh.write(blob)
    return len(blob)


def read_scene(path: str) -> SyntheticScene:
    with open(path, "rb") as fh:
        raw = fh.read()
    if len(raw) < _HEADER.size:
        raise ValueError(f"{path}: truncated scene header")
    magic, version, c, h, w = _HEADER.unpack_from(raw)
    if magic != SCENE_MAGIC:
        raise ValueError(f"{path}: bad magic {magic:#x}")
    if version != SCENE_VERSION:
        raise ValueError(f"{path}: unsupported version {version}")
    need = _HEADER.size + 4 * c * h * w + h * w
    if len(raw) != need:
        raise ValueError(f"{path}: expected {need} bytes, found {len(raw)}")
    data = np.frombuffer(raw, dtype="<f4", count=c * h * w,
                         offset=_HEADER.size).reshape(c, h, w).copy()
    labels = np.frombuffer(raw, dtype=np.uint8,
                           offset=_HEADER.size + 4 * c * h * w).reshape(h, w).copy()
    name = os.path.splitext(os.path.basename(path))[0]
    return SyntheticScene(name=name, field=data, labels=labels)


def save_dataset(out_dir: str, cfg: SceneConfig, seed: int) -> dict:
    """Generate, write one file per scene and a catalog.json; returns the catalog."""
    os.makedirs(out_dir, exist_ok=True)
    scenes = gen_dataset(cfg, seed)
    files = []
    for s in scenes:
        fname = s.name + ".scene"
        nbytes = write_scene(os.path.join(out_dir, fname), s)
        files.append({"name": fname, "bytes": nbytes})
    catalog = {
        "seed": seed,
        "config": cfg.to_dict(),
        "files": files,
        "frequencies": aggregate_frequencies(scenes).tolist(),
    }
    with open(os.path.join(out_dir, "catalog.json"), "w") as fh:
        json.dump(catalog, fh, indent=2)
    return catalog


def load_dataset(data_dir: str) -> list:
    with open(os.path.join(data_dir, "catalog.json")) as fh:
        catalog = json.load(fh)
    return [read_scene(os.path.join(data_dir, f["name"])) for f in catalog["files"]]
