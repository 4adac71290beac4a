"""Command line entry point: ``mmtad {synth,mdc,train,detect,eval,ablate}``."""
from __future__ import annotations

import argparse
import json
import logging
import sys
from dataclasses import replace
from pathlib import Path

import yaml

from . import config as cfgmod
from . import model as mm
from .detection import evaluate_map, read_segments, write_segments
from .flow_io import read_boxes, read_flo, write_flo
from .motion import correct_sequence
from .pipeline import (Split, detect, embed_videos, format_ablation, labels_onehot,
                       correct_videos, run_ablation, train)
from .synth import SynthSpec, generate_dataset, read_dataset, write_dataset

log = logging.getLogger("mmtad")


def _load_doc(path) -> dict:
    text = Path(path).read_text()
    doc = yaml.safe_load(text)
    if not isinstance(doc, dict):
        raise cfgmod.ConfigError(f"{path}: expected a mapping")
    return doc


def _run_config(args) -> cfgmod.RunConfig:
    if getattr(args, "config", None):
        return cfgmod.load(args.config)
    profile = getattr(args, "profile", None) or "desk"
    return cfgmod.finalize(cfgmod.profile_defaults(profile))


def _echo_config(cfg: cfgmod.RunConfig, out_dir: Path) -> None:
    out_dir.mkdir(parents=True, exist_ok=True)
    (out_dir / "effective_config.yaml").write_text(cfg.dumps())


# ---------------------------------------------------------------- subcommands

def cmd_synth(args) -> int:
    doc = _load_doc(args.spec) if args.spec else {}
    spec = SynthSpec.from_dict(doc)
    videos = generate_dataset(spec)
    write_dataset(videos, spec, args.out)
    print(f"wrote {len(videos)} videos to {args.out}")
    return 0


def cmd_mdc(args) -> int:
    flows_dir = Path(args.flows)
    paths = sorted(flows_dir.glob("*.flo"))
    if not paths:
        raise cfgmod.ConfigError(f"no .flo files in {flows_dir}")
    flows = [read_flo(p) for p in paths]
    boxes = read_boxes(args.boxes)
    if len(boxes) < len(flows):
        raise cfgmod.ConfigError(f"{len(flows)} flow files but boxes for {len(boxes)} frames")
    fixed, diags = correct_sequence(flows, boxes[:len(flows)], args.M, seed=args.seed,
                                    soft=args.soft_assign)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    for p, f, d in zip(paths, fixed, diags):
        write_flo(f, out / p.name)
        d["file"] = p.name
    (out / "diagnostics.json").write_text(json.dumps(diags, indent=1))
    print(f"corrected {len(fixed)} flow fields into {out}")
    return 0


def _load_split(data_dir, cfg: cfgmod.RunConfig, skip_mdc: bool, flows_subdir: str) -> Split:
    names, videos, _ = read_dataset(data_dir, flows_subdir)
    run_cfg = cfg if not skip_mdc else replace(cfg, motion=replace(cfg.motion, enabled=False))
    flows, _ = correct_videos(videos, run_cfg)
    xs, xm = embed_videos(videos, flows, cfg)
    return Split(names, videos, xs, xm, labels_onehot(videos, cfg.model.C))


def cmd_train(args) -> int:
    cfg = _run_config(args)
    if args.epochs is not None:
        cfg.model = replace(cfg.model, epochs=args.epochs)
    print(cfg.header())
    sel = mm.AttentionSelection.parse(args.attention)
    split = _load_split(args.data, cfg, args.skip_mdc, args.flows_subdir)
    params, history = train(split, sel, cfg)
    out = Path(args.out)
    out.parent.mkdir(parents=True, exist_ok=True)
    mm.save_checkpoint(out, cfg.model, sel, params,
                       extra={"embed_seed": cfg.train.embed_seed, "history": history,
                              "run_config": cfg.to_dict()})
    _echo_config(cfg, out.parent)
    print(f"trained {len(history['loss'])} epochs, final loss {history['loss'][-1]:.4f}, "
          f"frame accuracy {history['accuracy'][-1]:.4f}; checkpoint {out}")
    return 0


def cmd_detect(args) -> int:
    model_cfg, sel, params, extra = mm.load_checkpoint(args.ckpt)
    cfg = cfgmod.finalize(cfgmod.from_dict(extra["run_config"])) if "run_config" in extra \
        else cfgmod.finalize(cfgmod.profile_defaults("desk"))
    cfg.model = model_cfg
    cfg.detect = replace(cfg.detect, theta=args.theta, segment_q=args.segment_q)
    cfgmod.validate(cfg)
    split = _load_split(args.data, cfg, args.skip_mdc, args.flows_subdir)
    scores = mm.predict(split.xs, split.xm, params, sel, cfg.model)
    pred = detect(scores, cfg, split.names)
    write_segments(pred, args.out)
    print(f"wrote {len(pred)} segments to {args.out}")
    return 0


def cmd_eval(args) -> int:
    thresholds = [float(t) for t in args.tiou.split(",") if t.strip()]
    if not thresholds or any(not 0 < t <= 1 for t in thresholds):
        raise cfgmod.ConfigError(f"bad tIoU list {args.tiou!r}")
    pred = read_segments(args.pred)
    gt = read_segments(args.gt)
    report = evaluate_map(pred, gt, thresholds)
    print(report.dumps())
    print(report.table())
    return 0


def cmd_ablate(args) -> int:
    cfg = _run_config(args)
    print(cfg.header())
    rows = run_ablation(cfg)
    print(format_ablation(rows))
    if args.out:
        out = Path(args.out)
        _echo_config(cfg, out)
        (out / "ablation.json").write_text(json.dumps(rows, indent=2))
    return 0


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="mmtad", description=__doc__)
    p.add_argument("-v", "--verbose", action="store_true")
    sub = p.add_subparsers(dest="command", required=True)

    s = sub.add_parser("synth", help="generate a synthetic moving-blob dataset")
    s.add_argument("--spec", help="YAML/JSON synth spec (defaults if omitted)")
    s.add_argument("--out", required=True)
    s.set_defaults(func=cmd_synth)

    s = sub.add_parser("mdc", help="remove camera motion from a directory of .flo files")
    s.add_argument("--flows", required=True)
    s.add_argument("--boxes", required=True)
    s.add_argument("--out", required=True)
    s.add_argument("--M", type=int, default=16)
    s.add_argument("--seed", type=int, default=0)
    s.add_argument("--soft-assign", action="store_true")
    s.set_defaults(func=cmd_mdc)

    s = sub.add_parser("train", help="train the transformer on a synthetic dataset")
    s.add_argument("--config")
    s.add_argument("--profile", choices=["desk", "paper"])
    s.add_argument("--data", required=True)
    s.add_argument("--out", required=True)
    s.add_argument("--attention", default="all")
    s.add_argument("--epochs", type=int)
    s.add_argument("--skip-mdc", action="store_true", help="use flows as stored")
    s.add_argument("--flows-subdir", default="flows")
    s.set_defaults(func=cmd_train)

    s = sub.add_parser("detect", help="emit action segments with a trained checkpoint")
    s.add_argument("--ckpt", required=True)
    s.add_argument("--data", required=True)
    s.add_argument("--out", required=True)
    s.add_argument("--theta", type=float, default=0.5)
    s.add_argument("--segment-q", type=int, default=16)
    s.add_argument("--skip-mdc", action="store_true")
    s.add_argument("--flows-subdir", default="flows")
    s.set_defaults(func=cmd_detect)

    s = sub.add_parser("eval", help="mAP at tIoU thresholds")
    s.add_argument("--pred", required=True)
    s.add_argument("--gt", required=True)
    s.add_argument("--tiou", default="0.3,0.4,0.5,0.6,0.7")
    s.set_defaults(func=cmd_eval)

    s = sub.add_parser("ablate", help="train/evaluate each attention selection")
    s.add_argument("--config")
    s.add_argument("--profile", choices=["desk", "paper"])
    s.add_argument("--out")
    s.set_defaults(func=cmd_ablate)
    return p


def main(argv: list[str] | None = None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        return args.func(args)
    except (ValueError, OSError, KeyError, RuntimeError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
