"""End-to-end wiring: correct flows, embed, train, detect, evaluate, ablate."""
from __future__ import annotations

import json
import logging
from dataclasses import dataclass, replace
from pathlib import Path

import numpy as np

from . import model as mm
from .config import RunConfig
from .detection import ActionSegment, EvalReport, evaluate_map, regress_segments
from .flow_io import FlowField
from .motion import correct_sequence
from .synth import Video, generate_dataset, video_names

log = logging.getLogger(__name__)


class StageError(RuntimeError):
    def __init__(self, stage: str, exc: Exception):
        super().__init__(f"[{stage}] {exc}")
        self.stage = stage


def _stage(name):
    def wrap(fn):
        def run(*args, **kwargs):
            try:
                return fn(*args, **kwargs)
            except StageError:
                raise
            except Exception as exc:
                raise StageError(name, exc) from exc
        run.__name__ = fn.__name__
        run.__doc__ = fn.__doc__
        return run
    return wrap


@_stage("mdc")
def correct_videos(videos: list[Video], cfg: RunConfig) -> tuple[list[np.ndarray], list[list[dict]]]:
    if not cfg.motion.enabled:
        return [v.flows for v in videos], [[] for _ in videos]
    flows, diags = [], []
    for i, v in enumerate(videos):
        fixed, d = correct_sequence([FlowField(f) for f in v.flows], v.boxes, cfg.motion.M,
                                    cfg.motion.thresholds, seed=cfg.seed + i,
                                    soft=cfg.motion.soft_assign)
        flows.append(np.stack([f.vectors for f in fixed]))
        diags.append(d)
    return flows, diags


@_stage("embed")
def embed_videos(videos: list[Video], flows: list[np.ndarray], cfg: RunConfig) -> tuple[np.ndarray, np.ndarray]:
    Z, seed = cfg.model.Z, cfg.train.embed_seed
    xs = np.stack([mm.embed_toy(v.frames, Z, seed) for v in videos])
    xm = np.stack([mm.embed_toy(f, Z, seed + 1) for f in flows])
    return xs, xm


def labels_onehot(videos: list[Video], C: int) -> np.ndarray:
    return np.stack([v.onehot(C) for v in videos])


@_stage("detect")
def detect(scores: np.ndarray, cfg: RunConfig, names: list[str]) -> list[ActionSegment]:
    out = []
    for name, s in zip(names, scores):
        out.extend(regress_segments(s, cfg.detect.theta, cfg.detect.segment_q, video=name))
    return out


@_stage("eval")
def evaluate(pred: list[ActionSegment], gt: list[ActionSegment], cfg: RunConfig) -> EvalReport:
    return evaluate_map(pred, gt, cfg.tiou, classes=list(range(cfg.model.C)))


def gt_from_videos(videos: list[Video], names: list[str]) -> list[ActionSegment]:
    return [ActionSegment(c, a, b, 1.0, name)
            for name, v in zip(names, videos) for (c, a, b) in v.segments]


@dataclass
class Split:
    names: list[str]
    videos: list[Video]
    xs: np.ndarray
    xm: np.ndarray
    Y: np.ndarray


def prepare_split(videos: list[Video], cfg: RunConfig, names: list[str] | None = None) -> Split:
    flows, _ = correct_videos(videos, cfg)
    xs, xm = embed_videos(videos, flows, cfg)
    return Split(names or video_names(len(videos)), videos, xs, xm,
                 labels_onehot(videos, cfg.model.C))


def make_splits(cfg: RunConfig) -> tuple[Split, Split]:
    """Disjoint train/test splits drawn from differently seeded generators."""
    train = generate_dataset(replace(cfg.data, n_videos=cfg.train.n_train, seed=cfg.seed))
    test = generate_dataset(replace(cfg.data, n_videos=cfg.train.n_test, seed=cfg.seed + 1_000_003))
    return prepare_split(train, cfg), prepare_split(test, cfg)


@_stage("train")
def train(split: Split, sel: mm.AttentionSelection, cfg: RunConfig):
    return mm.fit(split.xs, split.xm, split.Y, sel, cfg.model,
                  target_accuracy=cfg.train.stop_at_accuracy,
                  log_every=cfg.train.log_every, logger=log)


@_stage("forward")
def score(split: Split, params, sel, cfg: RunConfig) -> np.ndarray:
    return mm.predict(split.xs, split.xm, params, sel, cfg.model)


def run_pipeline(split: Split, params, sel: mm.AttentionSelection, cfg: RunConfig,
                 dump_dir: str | Path | None = None) -> EvalReport:
    """Inference on prepared features: forward, regress, evaluate.

    With ``dump_dir`` every intermediate is written so later stages can be
    re-run from disk (see :func:`rerun_from_dump`).
    """
    scores = score(split, params, sel, cfg)
    pred = detect(scores, cfg, split.names)
    report = evaluate(pred, gt_from_videos(split.videos, split.names), cfg)
    if dump_dir is not None:
        dump_intermediates(dump_dir, split, scores, pred, report)
    return report


def dump_intermediates(dump_dir, split: Split, scores, pred, report: EvalReport) -> None:
    d = Path(dump_dir)
    d.mkdir(parents=True, exist_ok=True)
    np.save(d / "features_spatial.npy", split.xs)
    np.save(d / "features_motion.npy", split.xm)
    np.save(d / "scores.npy", scores)
    (d / "names.json").write_text(json.dumps(split.names))
    (d / "gt.json").write_text(json.dumps(
        [s.to_json(False) for s in gt_from_videos(split.videos, split.names)]))
    (d / "segments.json").write_text(json.dumps([s.to_json() for s in pred]))
    (d / "report.json").write_text(report.dumps())


def rerun_from_dump(dump_dir, cfg: RunConfig) -> EvalReport:
    """Regress and evaluate from dumped scores alone."""
    d = Path(dump_dir)
    scores = np.load(d / "scores.npy")
    names = json.loads((d / "names.json").read_text())
    gt = [ActionSegment.from_json(g) for g in json.loads((d / "gt.json").read_text())]
    return evaluate(detect(scores, cfg, names), gt, cfg)


def run_experiment(cfg: RunConfig, sel: mm.AttentionSelection | None = None,
                   splits: tuple[Split, Split] | None = None, dump_dir=None):
    """Generate, train one selection, and evaluate on the held-out split."""
    sel = sel or mm.AttentionSelection()
    train_split, test_split = splits or make_splits(cfg)
    params, history = train(train_split, sel, cfg)
    report = run_pipeline(test_split, params, sel, cfg, dump_dir)
    return report, params, history


def run_ablation(cfg: RunConfig, selections: list[mm.AttentionSelection] | None = None) -> list[dict]:
    """Train and evaluate each selection on the same synthetic split."""
    selections = selections or cfg.selections()
    splits = make_splits(cfg)
    rows = []
    for sel in selections:
        report, _, history = run_experiment(cfg, sel, splits)
        rows.append({
            "selection": sel.label,
            "epochs": len(history["loss"]),
            "train_loss": history["loss"][-1],
            "train_accuracy": history["accuracy"][-1],
            "mAP": {f"{t:g}": report.mAP[t] for t in report.thresholds},
            "average_mAP": report.average_mAP,
        })
    return rows


def format_ablation(rows: list[dict]) -> str:
    if not rows:
        return "(no rows)"
    ths = list(rows[0]["mAP"])
    head = f"{'attention':<20}{'epochs':>7}{'acc':>8}" + "".join(f"{'@' + t:>8}" for t in ths) + f"{'avg':>8}"
    lines = [head, "-" * len(head)]
    for r in rows:
        lines.append(f"{r['selection']:<20}{r['epochs']:>7}{r['train_accuracy']:>8.4f}"
                     + "".join(f"{r['mAP'][t]:>8.4f}" for t in ths) + f"{r['average_mAP']:>8.4f}")
    return "\n".join(lines)
