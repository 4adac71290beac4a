"""Turn per-frame class scores into timed segments, and score them with mAP@tIoU."""
from __future__ import annotations

import json
import math
from collections import defaultdict
from dataclasses import dataclass, field
from typing import Iterable, Sequence

import numpy as np

THUMOS_TIOU = (0.3, 0.4, 0.5, 0.6, 0.7)


@dataclass(frozen=True)
class ActionSegment:
    label: int
    start: int
    end: int
    score: float = 1.0
    video: str = ""

    def __post_init__(self):
        if not 0 <= self.start <= self.end:
            raise ValueError(f"invalid segment [{self.start}, {self.end}]")

    def to_json(self, with_score: bool = True) -> dict:
        d = {"video": self.video, "class": self.label, "start": self.start, "end": self.end}
        if with_score:
            d["score"] = self.score
        return d

    @classmethod
    def from_json(cls, d: dict) -> "ActionSegment":
        return cls(int(d["class"]), int(d["start"]), int(d["end"]),
                   float(d.get("score", 1.0)), str(d.get("video", "")))


def threshold_scores(scores: np.ndarray, theta: float) -> np.ndarray:
    """1 where ``scores >= theta``, else 0."""
    if not 0.0 < theta < 1.0:
        raise ValueError(f"threshold must lie in (0, 1), got {theta}")
    return (np.asarray(scores) >= theta).astype(np.int8)


def split_bounds(T: int, q: int) -> list[tuple[int, int]]:
    """Half-open ``[a, b)`` chunks of length ``q``; the last may be shorter."""
    return [(a, min(a + q, T)) for a in range(0, T, q)]


def regress_segments(scores: np.ndarray, theta: float = 0.5, q: int = 16,
                     video: str = "") -> list[ActionSegment]:
    """Threshold, split into ``q``-frame chunks, majority-vote, merge, re-split
    and read off first/last active frame of every positive merged block.

    Output is sorted by class, then start frame.
    """
    scores = np.asarray(scores, dtype=np.float64)
    if scores.ndim != 2:
        raise ValueError(f"scores must be (T, C), got {scores.shape}")
    T, C = scores.shape
    if q < 1:
        raise ValueError("chunk length must be positive")
    if q > T:
        raise ValueError(f"chunk length {q} exceeds sequence length {T}")
    binary = threshold_scores(scores, theta)
    chunks = split_bounds(T, q)
    votes = np.array([binary[a:b].sum(axis=0) for a, b in chunks])          # (N, C)
    lengths = np.array([b - a for a, b in chunks])[:, None]
    labels = (2 * votes >= lengths).astype(np.int8)

    out = []
    for c in range(C):
        col = labels[:, c]
        # merged blocks are runs of equal chunk labels
        change = np.flatnonzero(np.diff(col)) + 1
        for run in np.split(np.arange(len(chunks)), change):
            if col[run[0]] == 0:
                continue
            a, b = chunks[run[0]][0], chunks[run[-1]][1]
            active = np.flatnonzero(binary[a:b, c])
            start, end = a + int(active[0]), a + int(active[-1])
            out.append(ActionSegment(c, start, end, float(scores[start:end + 1, c].mean()), video))
    return out


def segment_q_for(T: int, n_segments: int) -> int:
    """Chunk length for splitting ``T`` frames into ``n_segments`` pieces."""
    if n_segments < 1 or n_segments > T:
        raise ValueError(f"segment count {n_segments} must lie in [1, {T}]")
    return math.ceil(T / n_segments)


def tiou(a: ActionSegment, b: ActionSegment) -> float:
    inter = min(a.end, b.end) - max(a.start, b.start) + 1
    if inter <= 0:
        return 0.0
    union = (a.end - a.start + 1) + (b.end - b.start + 1) - inter
    return inter / union


def average_precision(tp: np.ndarray, n_gt: int) -> float:
    """All-point interpolated AP from a ranked TP indicator list."""
    if n_gt == 0:
        return float("nan")
    if len(tp) == 0:
        return 0.0
    tp = np.asarray(tp, dtype=np.float64)
    ctp = np.cumsum(tp)
    recall = ctp / n_gt
    precision = ctp / np.arange(1, len(tp) + 1)
    mrec = np.concatenate([[0.0], recall, [1.0]])
    mpre = np.concatenate([[0.0], precision, [0.0]])
    mpre = np.maximum.accumulate(mpre[::-1])[::-1]
    idx = np.flatnonzero(mrec[1:] != mrec[:-1])
    return float(np.sum((mrec[idx + 1] - mrec[idx]) * mpre[idx + 1]))


def _rank_key(s: ActionSegment):
    return (-s.score, s.video, s.start, s.end)


def class_ap(preds: list[ActionSegment], gts: list[ActionSegment], threshold: float) -> float:
    """AP for one class; greedy matching of ranked predictions to unused ground truth."""
    by_video = defaultdict(list)
    for g in gts:
        by_video[g.video].append(g)
    used = {v: [False] * len(gs) for v, gs in by_video.items()}
    tp = []
    for p in sorted(preds, key=_rank_key):
        best, best_j = -1.0, -1
        for j, g in enumerate(by_video.get(p.video, ())):
            if used[p.video][j]:
                continue
            ov = tiou(p, g)
            if ov > best:
                best, best_j = ov, j
        if best_j >= 0 and best >= threshold:
            used[p.video][best_j] = True
            tp.append(1)
        else:
            tp.append(0)
    return average_precision(np.array(tp), len(gts))


@dataclass
class EvalReport:
    thresholds: list[float]
    classes: list[int]
    ap: dict = field(default_factory=dict)        # threshold -> {class: AP or None}
    mAP: dict = field(default_factory=dict)       # threshold -> mAP
    average_mAP: float = 0.0

    def to_json(self) -> dict:
        return {
            "thresholds": self.thresholds,
            "classes": self.classes,
            "ap": {f"{t:g}": {str(c): v for c, v in row.items()} for t, row in self.ap.items()},
            "mAP": {f"{t:g}": v for t, v in self.mAP.items()},
            "average_mAP": self.average_mAP,
        }

    def dumps(self) -> str:
        return json.dumps(self.to_json(), indent=2, sort_keys=True)

    def table(self) -> str:
        head = "class " + "".join(f"{'@' + format(t, 'g'):>9}" for t in self.thresholds)
        lines = [head, "-" * len(head)]
        for c in self.classes:
            cells = []
            for t in self.thresholds:
                v = self.ap[t][c]
                cells.append(f"{'n/a':>9}" if v is None else f"{v:9.4f}")
            lines.append(f"{c:<6}" + "".join(cells))
        lines.append("-" * len(head))
        lines.append("mAP   " + "".join(f"{self.mAP[t]:9.4f}" for t in self.thresholds))
        lines.append(f"average mAP {self.average_mAP:.4f}")
        return "\n".join(lines)


def evaluate_map(pred: Iterable[ActionSegment], gt: Iterable[ActionSegment],
                 thresholds: Sequence[float] = THUMOS_TIOU,
                 classes: Sequence[int] | None = None) -> EvalReport:
    """mAP per tIoU threshold. Classes without ground truth get AP ``None`` and
    are left out of the mean."""
    pred, gt = list(pred), list(gt)
    if classes is None:
        classes = sorted({s.label for s in gt} | {s.label for s in pred})
    pred_by = defaultdict(list)
    gt_by = defaultdict(list)
    for s in pred:
        pred_by[s.label].append(s)
    for s in gt:
        gt_by[s.label].append(s)
    report = EvalReport([float(t) for t in thresholds], list(classes))
    for t in report.thresholds:
        row = {}
        for c in classes:
            row[c] = None if not gt_by[c] else class_ap(pred_by[c], gt_by[c], t)
        valid = [v for v in row.values() if v is not None]
        report.ap[t] = row
        report.mAP[t] = float(np.mean(valid)) if valid else 0.0
    report.average_mAP = float(np.mean(list(report.mAP.values()))) if report.mAP else 0.0
    return report


def read_segments(path) -> list[ActionSegment]:
    with open(path) as fh:
        doc = json.load(fh)
    if not isinstance(doc, list):
        raise ValueError(f"{path}: segments file must be a JSON array")
    return [ActionSegment.from_json(d) for d in doc]


def write_segments(segments: Iterable[ActionSegment], path, with_score: bool = True) -> None:
    with open(path, "w") as fh:
        json.dump([s.to_json(with_score) for s in segments], fh, indent=1)
