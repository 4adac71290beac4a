"""Synthetic moving-blob videos with exact flow, boxes and segment labels.

The scene is a torus: the textured background and the blob wrap around the
frame edges, so a blob may straddle a border (it then gets one box per
visible piece). The class of a frame is ``2 * pattern + axis`` where
``pattern`` is a filled or hollow square (visible only in RGB) and ``axis`` is
the direction of motion (visible only in the flow), so neither modality
alone determines the label.
"""
from __future__ import annotations

import json
import os
from dataclasses import asdict, dataclass, field, fields
from pathlib import Path

import numpy as np

from .flow_io import FlowField, flo_name, read_boxes, read_flo, write_boxes, write_flo


@dataclass(frozen=True)
class SynthSpec:
    n_videos: int = 10
    T: int = 64
    height: int = 32
    width: int = 32
    C: int = 4
    blob_size: int = 10
    speed: int = 2
    min_segment: int = 12
    max_segments: int = 4
    pan_min: float = 0.0
    pan_max: float = 0.0
    noise: float = 0.05
    tau: int = 1
    seed: int = 0
    fixed_pan: tuple | None = None   # (dx, dy) per frame; overrides the random pan range

    def __post_init__(self):
        if self.height < 8 or self.width < 8:
            raise ValueError(f"frame size {self.height}x{self.width} too small (min 8x8)")
        if not 1 <= self.blob_size <= min(self.height, self.width):
            raise ValueError("blob_size must fit in the frame")
        if self.C != 4:
            raise ValueError("the generator defines exactly 4 classes (2 patterns x 2 axes)")
        if self.T < self.min_segment or self.min_segment < 1:
            raise ValueError("T must be at least min_segment >= 1")
        if self.n_videos < 1 or self.max_segments < 1 or self.tau < 1:
            raise ValueError("n_videos, max_segments and tau must be positive")
        if not 0 <= self.pan_min <= self.pan_max:
            raise ValueError("need 0 <= pan_min <= pan_max")
        if self.noise < 0:
            raise ValueError("noise must be nonnegative")
        if self.fixed_pan is not None:
            if len(self.fixed_pan) != 2:
                raise ValueError("fixed_pan must be (dx, dy)")
            object.__setattr__(self, "fixed_pan", tuple(float(v) for v in self.fixed_pan))

    @classmethod
    def from_dict(cls, d: dict) -> "SynthSpec":
        known = {f.name for f in fields(cls)}
        unknown = set(d) - known
        if unknown:
            raise ValueError(f"unknown synth keys: {sorted(unknown)}")
        return cls(**d)


@dataclass
class Video:
    frames: np.ndarray                 # (T, h, w, 3) uint8
    flows: np.ndarray                  # (T, h, w, 2) float64, flow from t to t + tau
    boxes: list                        # per frame list of (x0, y0, x1, y1)
    labels: np.ndarray                 # (T,) int class per frame
    segments: list = field(default_factory=list)   # (class, start, end) inclusive
    pan: tuple = (0.0, 0.0)
    fg_mask: np.ndarray | None = None  # (T, h, w) bool, exact blob pixels

    def flow_fields(self) -> list[FlowField]:
        return [FlowField(f) for f in self.flows]

    def onehot(self, C: int) -> np.ndarray:
        return np.eye(C)[self.labels]


def _segments(rng, spec: SynthSpec) -> list[tuple[int, int, int]]:
    n = int(rng.integers(1, spec.max_segments + 1))
    n = max(1, min(n, spec.T // spec.min_segment))
    slack = spec.T - n * spec.min_segment
    cuts = np.sort(rng.integers(0, slack + 1, size=n - 1))
    lengths = np.diff(np.concatenate([[0], cuts, [slack]])) + spec.min_segment
    out, start, prev = [], 0, -1
    for length in lengths:
        c = int(rng.integers(spec.C))
        while c == prev:
            c = int(rng.integers(spec.C))
        out.append((c, start, start + int(length) - 1))
        start += int(length)
        prev = c
    return out


def _blob(pattern: int, size: int) -> np.ndarray:
    sprite = np.ones((size, size), dtype=bool)
    if pattern == 1:
        edge = max(1, size // 4)
        sprite[edge:size - edge, edge:size - edge] = False
    return sprite


def _wrapped_boxes(x: int, y: int, size: int, w: int, h: int) -> list[tuple]:
    def spans(start, n):
        start %= n
        end = start + size - 1
        if end < n:
            return [(start, end)]
        return [(start, n - 1), (0, end - n)]
    return [(float(x0), float(y0), float(x1), float(y1))
            for (x0, x1) in spans(x, w) for (y0, y1) in spans(y, h)]


def generate_video(spec: SynthSpec, index: int) -> Video:
    rng = np.random.default_rng([spec.seed, index])
    h, w, T, s = spec.height, spec.width, spec.T, spec.blob_size
    segs = _segments(rng, spec)
    labels = np.empty(T, dtype=np.int64)
    for c, a, b in segs:
        labels[a:b + 1] = c

    if spec.fixed_pan is not None:
        pan = spec.fixed_pan
    elif spec.pan_max > 0:
        mag = rng.uniform(spec.pan_min, spec.pan_max)
        ang = rng.uniform(0, 2 * np.pi)
        pan = (float(mag * np.cos(ang)), float(mag * np.sin(ang)))
    else:
        pan = (0.0, 0.0)
    texture = rng.uniform(0.1, 0.4, size=(h, w, 3))
    color = np.array([0.9, 0.8, 0.3])

    frames = np.empty((T, h, w, 3), dtype=np.uint8)
    flows = np.empty((T, h, w, 2))
    fg = np.zeros((T, h, w), dtype=bool)
    boxes = []
    x, y = int(rng.integers(w)), int(rng.integers(h))
    for t in range(T):
        c = int(labels[t])
        pattern, axis = divmod(c, 2)
        vel = (spec.speed * spec.tau, 0) if axis == 0 else (0, spec.speed * spec.tau)
        shift = (int(round(pan[1] * t)), int(round(pan[0] * t)))
        img = np.roll(texture, shift, axis=(0, 1)).copy()
        sprite = _blob(pattern, s)
        ys = (y + np.arange(s)) % h
        xs = (x + np.arange(s)) % w
        mask = np.zeros((h, w), dtype=bool)
        mask[np.ix_(ys, xs)] = sprite
        img[mask] = color
        if spec.noise > 0:
            img = img + rng.normal(0.0, spec.noise, size=img.shape)
        frames[t] = np.clip(np.round(img * 255), 0, 255).astype(np.uint8)

        flow = np.empty((h, w, 2))
        flow[..., 0] = pan[0] * spec.tau
        flow[..., 1] = pan[1] * spec.tau
        flow[mask, 0] += vel[0]
        flow[mask, 1] += vel[1]
        flows[t] = flow
        fg[t] = mask
        boxes.append(_wrapped_boxes(x, y, s, w, h))
        x, y = (x + vel[0] // spec.tau) % w, (y + vel[1] // spec.tau) % h
    return Video(frames, flows, boxes, labels, segs, pan, fg)


def generate_dataset(spec: SynthSpec) -> list[Video]:
    return [generate_video(spec, i) for i in range(spec.n_videos)]


def gt_segments(videos: list[Video], names: list[str] | None = None) -> list[dict]:
    names = names or video_names(len(videos))
    return [{"video": name, "class": c, "start": a, "end": b}
            for name, v in zip(names, videos) for (c, a, b) in v.segments]


def video_names(n: int) -> list[str]:
    return [f"video_{i:04d}" for i in range(n)]


# ---------------------------------------------------------------- on-disk layout

def write_dataset(videos: list[Video], spec: SynthSpec, out: str | os.PathLike) -> None:
    """``out/spec.json``, ``out/gt.json`` and one directory per video holding
    ``frames.npy``, ``labels.npy``, ``boxes.json`` and ``flows/*.flo``."""
    root = Path(out)
    root.mkdir(parents=True, exist_ok=True)
    names = video_names(len(videos))
    (root / "spec.json").write_text(json.dumps(asdict(spec), indent=2))
    (root / "gt.json").write_text(json.dumps(gt_segments(videos, names), indent=1))
    for name, v in zip(names, videos):
        d = root / name
        (d / "flows").mkdir(parents=True, exist_ok=True)
        np.save(d / "frames.npy", v.frames)
        np.save(d / "labels.npy", v.labels)
        write_boxes(v.boxes, d / "boxes.json")
        for t, f in enumerate(v.flows):
            write_flo(FlowField(f), d / "flows" / flo_name(t))


def read_dataset(root: str | os.PathLike, flows_subdir: str = "flows") -> tuple[list[str], list[Video], dict]:
    """Load a directory written by :func:`write_dataset`.

    ``flows_subdir`` selects which flow directory inside each video to load
    (e.g. ``"flows_corrected"``).
    """
    root = Path(root)
    spec = json.loads((root / "spec.json").read_text())
    gt = json.loads((root / "gt.json").read_text())
    names = sorted(p.name for p in root.iterdir() if p.is_dir() and (p / "frames.npy").exists())
    videos = []
    for name in names:
        d = root / name
        flows = np.stack([read_flo(p).vectors for p in sorted((d / flows_subdir).glob("*.flo"))])
        segs = [(g["class"], g["start"], g["end"]) for g in gt if g["video"] == name]
        videos.append(Video(np.load(d / "frames.npy"), flows, read_boxes(d / "boxes.json"),
                            np.load(d / "labels.npy"), segs))
    return names, videos, spec
