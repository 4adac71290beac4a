"""Run configuration: profiles, YAML loading, validation and overrides."""
from __future__ import annotations

import os
from dataclasses import asdict, dataclass, field, fields, replace
from pathlib import Path

import yaml

from .detection import THUMOS_TIOU
from .model import PAPER_MODEL, PAPER_TABLE, AttentionSelection, ModelConfig
from .motion import ConvergenceThresholds
from .synth import SynthSpec

SEED_ENV = "MMDET_SEED"


class ConfigError(ValueError):
    pass


@dataclass(frozen=True)
class MotionConfig:
    M: int = 16
    soft_assign: bool = False
    enabled: bool = True
    thresholds: ConvergenceThresholds = field(default_factory=ConvergenceThresholds)


@dataclass(frozen=True)
class DetectConfig:
    theta: float = 0.5
    segment_q: int = 16


@dataclass(frozen=True)
class TrainConfig:
    n_train: int = 200
    n_test: int = 20
    stop_at_accuracy: float | None = 0.97
    embed_seed: int = 0
    log_every: int = 0


@dataclass
class RunConfig:
    profile: str = "desk"
    seed: int = 7
    model: ModelConfig = field(default_factory=ModelConfig)
    motion: MotionConfig = field(default_factory=MotionConfig)
    detect: DetectConfig = field(default_factory=DetectConfig)
    data: SynthSpec = field(default_factory=lambda: SynthSpec(pan_min=2.0, pan_max=8.0))
    train: TrainConfig = field(default_factory=TrainConfig)
    tiou: tuple = THUMOS_TIOU
    ablation: tuple = ("S-S", "M-M", "S-M", "M-S", "S-S+M-M", "all")

    def selections(self) -> list[AttentionSelection]:
        return [AttentionSelection.parse(s) for s in self.ablation]

    def to_dict(self) -> dict:
        d = asdict(self)
        d["tiou"] = list(self.tiou)
        d["ablation"] = list(self.ablation)
        return d

    def dumps(self) -> str:
        return yaml.safe_dump(self.to_dict(), sort_keys=False)

    def header(self) -> str:
        """Run banner; the paper profile repeats the published table verbatim."""
        lines = [f"profile: {self.profile}  seed: {self.seed}"]
        if self.profile == "paper":
            lines.append("published implementation details:")
            lines += [f"  {k}: {v}" for k, v in PAPER_TABLE.items()]
        m = self.model
        lines.append(f"model: T={m.T} Z={m.Z} L={m.L} H={m.H} Zq={m.Zq} Zk={m.Zk} Zv={m.Zv} "
                     f"Zm={m.Zm} C={m.C} kernel={m.kernel_size} alpha={m.alpha} lr={m.lr} "
                     f"weight_decay={m.weight_decay} epochs={m.epochs}")
        lines.append(f"motion: M={self.motion.M} soft_assign={self.motion.soft_assign}")
        lines.append(f"detect: theta={self.detect.theta} segment_q={self.detect.segment_q}")
        return "\n".join(lines)


def profile_defaults(profile: str) -> RunConfig:
    if profile == "desk":
        return RunConfig()
    if profile == "paper":
        return RunConfig(
            profile="paper",
            model=ModelConfig(**PAPER_MODEL, C=4),
            motion=MotionConfig(M=PAPER_TABLE["M"]),
            data=SynthSpec(T=PAPER_MODEL["T"], pan_min=2.0, pan_max=8.0),
            train=TrainConfig(stop_at_accuracy=None),
        )
    raise ConfigError(f"unknown profile {profile!r} (expected 'desk' or 'paper')")


def _merge(cls, base, overrides: dict, where: str):
    if not isinstance(overrides, dict):
        raise ConfigError(f"{where} must be a mapping")
    known = {f.name for f in fields(cls)}
    unknown = set(overrides) - known
    if unknown:
        raise ConfigError(f"unknown keys in {where}: {sorted(unknown)}")
    try:
        return replace(base, **overrides)
    except (TypeError, ValueError) as exc:
        raise ConfigError(f"{where}: {exc}") from exc


def from_dict(doc: dict) -> RunConfig:
    if not isinstance(doc, dict) or "profile" not in doc:
        raise ConfigError("config must be a mapping with a 'profile' key")
    cfg = profile_defaults(doc["profile"])
    top = {f.name for f in fields(RunConfig)}
    unknown = set(doc) - top
    if unknown:
        raise ConfigError(f"unknown top-level keys: {sorted(unknown)}")
    if "seed" in doc:
        cfg.seed = int(doc["seed"])
    if "model" in doc:
        cfg.model = _merge(ModelConfig, cfg.model, doc["model"], "model")
    if "motion" in doc:
        motion = dict(doc["motion"])
        th = motion.pop("thresholds", None)
        if th is not None:
            motion["thresholds"] = _merge(ConvergenceThresholds, cfg.motion.thresholds, th,
                                          "motion.thresholds")
        cfg.motion = _merge(MotionConfig, cfg.motion, motion, "motion")
    if "detect" in doc:
        cfg.detect = _merge(DetectConfig, cfg.detect, doc["detect"], "detect")
    if "data" in doc:
        cfg.data = _merge(SynthSpec, cfg.data, doc["data"], "data")
    if "train" in doc:
        cfg.train = _merge(TrainConfig, cfg.train, doc["train"], "train")
    if "tiou" in doc:
        cfg.tiou = tuple(float(t) for t in doc["tiou"])
    if "ablation" in doc:
        cfg.ablation = tuple(doc["ablation"])
    return finalize(cfg)


def finalize(cfg: RunConfig) -> RunConfig:
    """Apply the seed override from the environment and cross-check sections."""
    env = os.environ.get(SEED_ENV)
    if env is not None and env.strip():
        try:
            cfg.seed = int(env)
        except ValueError as exc:
            raise ConfigError(f"{SEED_ENV} must be an integer, got {env!r}") from exc
    cfg.model = replace(cfg.model, seed=cfg.seed)
    cfg.data = replace(cfg.data, seed=cfg.seed)
    validate(cfg)
    return cfg


def validate(cfg: RunConfig) -> None:
    if cfg.data.C != cfg.model.C:
        raise ConfigError(f"data.C={cfg.data.C} != model.C={cfg.model.C}")
    if cfg.data.T != cfg.model.T:
        raise ConfigError(f"data.T={cfg.data.T} != model.T={cfg.model.T}")
    if not 0.0 < cfg.detect.theta < 1.0:
        raise ConfigError("detect.theta must lie in (0, 1)")
    if not 1 <= cfg.detect.segment_q <= cfg.data.T:
        raise ConfigError("detect.segment_q must lie in [1, data.T]")
    if cfg.motion.M < 1:
        raise ConfigError("motion.M must be positive")
    if not cfg.tiou or any(not 0.0 < t <= 1.0 for t in cfg.tiou):
        raise ConfigError("tiou thresholds must lie in (0, 1]")
    if cfg.train.n_train < 1 or cfg.train.n_test < 1:
        raise ConfigError("n_train and n_test must be positive")
    try:
        cfg.selections()
    except ValueError as exc:
        raise ConfigError(str(exc)) from exc


def load(path: str | os.PathLike) -> RunConfig:
    try:
        doc = yaml.safe_load(Path(path).read_text())
    except yaml.YAMLError as exc:
        raise ConfigError(f"{path}: {exc}") from exc
    return from_dict(doc)
