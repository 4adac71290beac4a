"""Middlebury ``.flo`` files, person-box documents and foreground/background splitting."""
from __future__ import annotations

import json
import os
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

FLO_MAGIC = np.float32(202021.25)
_HEADER = np.dtype([("magic", "<f4"), ("width", "<i4"), ("height", "<i4")])


class FloError(ValueError):
    """Base class for ``.flo`` parse failures."""


class FloMagicError(FloError):
    pass


class FloTruncatedError(FloError):
    pass


class FloDimensionError(FloError):
    pass


@dataclass(frozen=True)
class FlowField:
    """Dense per-pixel displacements ``vectors[y, x] = (u, v)`` in pixels."""

    vectors: np.ndarray

    def __post_init__(self):
        vec = np.asarray(self.vectors, dtype=np.float64)
        if vec.ndim != 3 or vec.shape[2] != 2 or vec.shape[0] < 1 or vec.shape[1] < 1:
            raise ValueError(f"flow vectors must be (height, width, 2), got {vec.shape}")
        if not np.all(np.isfinite(vec)):
            raise ValueError("flow vectors must be finite")
        vec.setflags(write=False)
        object.__setattr__(self, "vectors", vec)

    @property
    def height(self) -> int:
        return self.vectors.shape[0]

    @property
    def width(self) -> int:
        return self.vectors.shape[1]


@dataclass
class MotionVectorSet:
    """A bag of ``(u, v)`` vectors with the pixel ``(x, y)`` each came from."""

    vectors: np.ndarray
    pixels: np.ndarray = field(default_factory=lambda: np.zeros((0, 2), dtype=np.int64))

    def __len__(self) -> int:
        return len(self.vectors)


def read_flo(path: str | os.PathLike) -> FlowField:
    raw = Path(path).read_bytes()
    if len(raw) < 4:
        raise FloTruncatedError(f"{path}: file shorter than the magic number")
    magic = np.frombuffer(raw[:4], dtype="<f4")[0]
    if magic != FLO_MAGIC:
        raise FloMagicError(f"{path}: bad magic {magic!r}, expected {float(FLO_MAGIC)}")
    if len(raw) < _HEADER.itemsize:
        raise FloTruncatedError(f"{path}: truncated header")
    head = np.frombuffer(raw[:_HEADER.itemsize], dtype=_HEADER)[0]
    w, h = int(head["width"]), int(head["height"])
    if w <= 0 or h <= 0:
        raise FloDimensionError(f"{path}: nonpositive dimensions {w}x{h}")
    need = _HEADER.itemsize + 8 * w * h
    if len(raw) < need:
        raise FloTruncatedError(f"{path}: expected {need} bytes, found {len(raw)}")
    payload = np.frombuffer(raw[_HEADER.itemsize:need], dtype="<f4").reshape(h, w, 2)
    return FlowField(payload.astype(np.float64))


def write_flo(flow: FlowField, path: str | os.PathLike) -> None:
    head = np.array([(FLO_MAGIC, flow.width, flow.height)], dtype=_HEADER)
    payload = np.ascontiguousarray(flow.vectors, dtype="<f4")
    with open(path, "wb") as fh:
        fh.write(head.tobytes())
        fh.write(payload.tobytes())


def flo_name(frame_index: int) -> str:
    """File name for the flow from ``frame_index`` to the next sampled frame."""
    return f"{frame_index:06d}.flo"


def read_flo_dir(directory: str | os.PathLike) -> list[FlowField]:
    paths = sorted(Path(directory).glob("*.flo"))
    return [read_flo(p) for p in paths]


# ---------------------------------------------------------------- person boxes

Box = tuple[float, float, float, float]


def validate_boxes(frame_boxes: list[Box], width: int, height: int) -> None:
    for b in frame_boxes:
        x0, y0, x1, y1 = b
        if not (0 <= x0 <= x1 <= width and 0 <= y0 <= y1 <= height):
            raise ValueError(f"box {b} invalid for a {width}x{height} frame")


def read_boxes(path: str | os.PathLike) -> list[list[Box]]:
    """Load a per-video JSON array indexed by frame of ``[x0, y0, x1, y1]`` boxes."""
    doc = json.loads(Path(path).read_text())
    if not isinstance(doc, list):
        raise ValueError(f"{path}: boxes document must be a JSON array")
    out = []
    for t, frame in enumerate(doc):
        if not isinstance(frame, list) or any(len(b) != 4 for b in frame):
            raise ValueError(f"{path}: frame {t} must be a list of 4-number boxes")
        out.append([tuple(float(v) for v in b) for b in frame])
    return out


def write_boxes(boxes: list[list[Box]], path: str | os.PathLike) -> None:
    Path(path).write_text(json.dumps([[list(b) for b in frame] for frame in boxes]))


def foreground_mask(width: int, height: int, frame_boxes: list[Box]) -> np.ndarray:
    """Boolean ``(height, width)`` mask; pixel ``(x, y)`` is inside a box iff
    ``x0 <= x <= x1`` and ``y0 <= y <= y1``."""
    xs = np.arange(width)
    ys = np.arange(height)
    mask = np.zeros((height, width), dtype=bool)
    for x0, y0, x1, y1 in frame_boxes:
        mask |= ((ys[:, None] >= y0) & (ys[:, None] <= y1)
                 & (xs[None, :] >= x0) & (xs[None, :] <= x1))
    return mask


def segment_motion(flow: FlowField, frame_boxes: list[Box]) -> tuple[MotionVectorSet, MotionVectorSet]:
    """Split a flow field into (foreground, background) vector sets."""
    validate_boxes(frame_boxes, flow.width, flow.height)
    mask = foreground_mask(flow.width, flow.height, frame_boxes)

    def take(m):
        ys, xs = np.nonzero(m)
        return MotionVectorSet(flow.vectors[ys, xs].copy(), np.stack([xs, ys], axis=1))

    return take(mask), take(~mask)
