"""Multi-modal transformer over spatial and motion feature sequences.

Each layer runs up to four attention pairings between the spatial (S) and
motion (M) projections (S-S, S-M, M-S, M-M), concatenates the results and
fuses them back to the model width with a temporal convolution. A
convolutional head followed by a softmax turns the last layer into
per-frame class scores.
"""
from __future__ import annotations

import json
import math
import os
from dataclasses import asdict, dataclass, fields
from pathlib import Path

import numpy as np

from . import tensor as tn
from .tensor import Tensor

CHECKPOINT_VERSION = 1
ATTENTION_KINDS = ("ss", "sm", "ms", "mm")
_KIND_LABEL = {"ss": "S-S", "sm": "S-M", "ms": "M-S", "mm": "M-M"}
_PROJ = ("wq_s", "wk_s", "wv_s", "wq_m", "wk_m", "wv_m")


class TrainingError(RuntimeError):
    pass


@dataclass
class ModelConfig:
    T: int = 64
    Z: int = 32
    L: int = 2
    H: int = 4
    Zq: int = 32
    Zk: int = 32
    Zv: int = 32
    Zm: int = 8
    C: int = 4
    kernel_size: int = 3
    alpha: float = 1.0
    lr: float = 3e-3
    weight_decay: float = 1e-6
    epochs: int = 300
    batch_size: int = 25
    seed: int = 0
    mlp_ratio: int = 4
    norm_eps: float = 1e-5
    streams: str = "single"

    def __post_init__(self):
        self.validate()

    def validate(self) -> None:
        for name in ("T", "Z", "L", "H", "Zq", "Zk", "Zv", "Zm", "C", "kernel_size",
                     "epochs", "batch_size", "mlp_ratio"):
            if getattr(self, name) <= 0:
                raise ValueError(f"{name} must be positive")
        if self.Zq != self.Zk:
            raise ValueError(f"Zq ({self.Zq}) must equal Zk ({self.Zk})")
        for name in ("Zq", "Zk", "Zv"):
            if getattr(self, name) % self.H:
                raise ValueError(f"{name}={getattr(self, name)} not divisible by H={self.H}")
        if self.kernel_size % 2 == 0:
            raise ValueError("kernel_size must be odd")
        if self.lr < 0 or self.weight_decay < 0 or self.alpha < 0:
            raise ValueError("lr, weight_decay and alpha must be nonnegative")
        if self.streams not in ("single", "dual"):
            raise ValueError(f"streams must be 'single' or 'dual', got {self.streams!r}")

    @classmethod
    def from_dict(cls, d: dict) -> "ModelConfig":
        known = {f.name for f in fields(cls)}
        unknown = set(d) - known
        if unknown:
            raise ValueError(f"unknown model config keys: {sorted(unknown)}")
        return cls(**d)


# Published implementation values; H=3 does not divide Zq=512, so the
# runnable paper profile uses H=4.
PAPER_TABLE = {
    "M": 16, "Z": 1024, "L": 6, "kernel_size": 3, "lr": 1e-5, "epochs": 100,
    "optimizer": "ADAM", "weight_decay": 1e-6, "T": 2304, "Zq": 512, "Zk": 512,
    "Zv": 1024, "H": 3, "Zm": 512, "alpha": 1,
}
PAPER_MODEL = dict(T=2304, Z=1024, L=6, H=4, Zq=512, Zk=512, Zv=1024, Zm=512,
                   kernel_size=3, alpha=1.0, lr=1e-5, weight_decay=1e-6, epochs=100)


@dataclass(frozen=True)
class AttentionSelection:
    ss: bool = True
    sm: bool = True
    ms: bool = True
    mm: bool = True

    def __post_init__(self):
        if not any(self.enabled):
            raise ValueError("at least one attention type must be enabled")

    @property
    def enabled(self) -> tuple[str, ...]:
        return tuple(k for k in ATTENTION_KINDS if getattr(self, k))

    @property
    def label(self) -> str:
        return "+".join(_KIND_LABEL[k] for k in self.enabled)

    @classmethod
    def parse(cls, text: str) -> "AttentionSelection":
        """Parse ``"all"`` or labels like ``"S-S+M-M"`` (``,`` also separates)."""
        text = text.strip()
        if text.lower() == "all":
            return cls()
        wanted = {t.strip().upper() for t in text.replace(",", "+").split("+") if t.strip()}
        by_label = {v: k for k, v in _KIND_LABEL.items()}
        bad = wanted - set(by_label)
        if bad:
            raise ValueError(f"unknown attention types {sorted(bad)}")
        return cls(**{k: (_KIND_LABEL[k] in wanted) for k in ATTENTION_KINDS})


ABLATION_ROWS = tuple(AttentionSelection.parse(s) for s in
                      ("S-S", "M-M", "S-M", "M-S", "S-S+M-M", "all"))


# ---------------------------------------------------------------- parameters

def _uniform(rng, shape, fan_in):
    bound = math.sqrt(6.0 / fan_in)
    return rng.uniform(-bound, bound, size=shape)


def init_params(cfg: ModelConfig, sel: AttentionSelection, seed: int | None = None) -> dict[str, Tensor]:
    """Seed-fixed He-uniform weights, zero biases, unit norm gains."""
    rng = np.random.default_rng(cfg.seed if seed is None else seed)
    Z, k = cfg.Z, cfg.kernel_size
    zq, zk, zv = cfg.Zq // cfg.H, cfg.Zk // cfg.H, cfg.Zv // cfg.H
    hidden = cfg.mlp_ratio * Z
    fuse_in = len(sel.enabled) * cfg.Zv
    p: dict[str, np.ndarray] = {}
    for l in range(cfg.L):
        for h in range(cfg.H):
            for name, width in zip(_PROJ, (zq, zk, zv, zq, zk, zv)):
                p[f"l{l}.h{h}.{name}"] = _uniform(rng, (Z, width), Z)
        p[f"l{l}.fuse.w"] = _uniform(rng, (k, fuse_in, Z), k * fuse_in)
        p[f"l{l}.fuse.b"] = np.zeros(Z)
        for norm in ("norm_s", "norm_m", "norm_mlp"):
            p[f"l{l}.{norm}.g"] = np.ones(Z)
            p[f"l{l}.{norm}.b"] = np.zeros(Z)
        p[f"l{l}.mlp.w1"] = _uniform(rng, (Z, hidden), Z)
        p[f"l{l}.mlp.b1"] = np.zeros(hidden)
        p[f"l{l}.mlp.w2"] = _uniform(rng, (hidden, Z), hidden)
        p[f"l{l}.mlp.b2"] = np.zeros(Z)
    p["head.w"] = _uniform(rng, (k, Z, cfg.C), k * Z)
    p["head.b"] = np.zeros(cfg.C)
    return {name: Tensor(v, requires_grad=True, name=name) for name, v in p.items()}


# ---------------------------------------------------------------- building blocks

def project_qkv(x: Tensor, wq: Tensor, wk: Tensor, wv: Tensor) -> tuple[Tensor, Tensor, Tensor]:
    if x.shape[-1] != wq.shape[0]:
        raise tn.ShapeError(f"feature width {x.shape[-1]} != projection rows {wq.shape[0]}")
    return x @ wq, x @ wk, x @ wv


def attention_weights(q: Tensor, k: Tensor, Zm: float) -> Tensor:
    if q.shape[-1] != k.shape[-1]:
        raise tn.ShapeError(f"query width {q.shape[-1]} != key width {k.shape[-1]}")
    return tn.softmax_rows(tn.scale(q @ tn.transpose(k), 1.0 / math.sqrt(Zm)))


def attention(q: Tensor, k: Tensor, v: Tensor, Zm: float) -> Tensor:
    """``softmax(q k^T / sqrt(Zm)) v``."""
    if k.shape[-2] != v.shape[-2]:
        raise tn.ShapeError(f"key length {k.shape[-2]} != value length {v.shape[-2]}")
    return attention_weights(q, k, Zm) @ v


def mma(xs: Tensor, xm: Tensor, params: dict[str, Tensor], layer: int,
        sel: AttentionSelection, cfg: ModelConfig) -> Tensor:
    """Multi-modal attention for one layer on already-normalized inputs."""
    kinds = sel.enabled
    need_s = {"ss", "sm", "ms"} & set(kinds)
    need_m = {"sm", "ms", "mm"} & set(kinds)
    parts = []
    for h in range(cfg.H):
        pre = f"l{layer}.h{h}."
        if need_s:
            qs, ks, vs = project_qkv(xs, params[pre + "wq_s"], params[pre + "wk_s"], params[pre + "wv_s"])
        if need_m:
            qm, km, vm = project_qkv(xm, params[pre + "wq_m"], params[pre + "wk_m"], params[pre + "wv_m"])
        for kind in kinds:
            if kind == "ss":
                parts.append(attention(qs, ks, vs, cfg.Zm))
            elif kind == "sm":
                parts.append(attention(qs, km, vm, cfg.Zm))
            elif kind == "ms":
                parts.append(attention(qm, ks, vs, cfg.Zm))
            else:
                parts.append(attention(qm, km, vm, cfg.Zm))
    fused = tn.concat(parts, axis=-1)
    return tn.conv1d_temporal(fused, params[f"l{layer}.fuse.w"], params[f"l{layer}.fuse.b"])


def _norm(x: Tensor, params, prefix: str, eps: float) -> Tensor:
    return tn.layer_norm(x, params[prefix + ".g"], params[prefix + ".b"], eps)


def mlp(x: Tensor, params, layer: int) -> Tensor:
    pre = f"l{layer}.mlp."
    hidden = tn.gelu(x @ params[pre + "w1"] + params[pre + "b1"])
    return hidden @ params[pre + "w2"] + params[pre + "b2"]


def _mlp_block(x_hat: Tensor, params, l: int, eps: float) -> Tensor:
    return mlp(_norm(x_hat, params, f"l{l}.norm_mlp", eps), params, l) + x_hat


def encode(xs: Tensor, xm: Tensor, params, sel: AttentionSelection, cfg: ModelConfig) -> Tensor:
    """Run all transformer layers; returns the final ``(..., T, Z)`` stream."""
    eps = cfg.norm_eps
    if cfg.streams == "single":
        o = None
        for l in range(cfg.L):
            src_s, src_m = (xs, xm) if l == 0 else (o, o)
            attn = mma(_norm(src_s, params, f"l{l}.norm_s", eps),
                       _norm(src_m, params, f"l{l}.norm_m", eps), params, l, sel, cfg)
            o_hat = attn + xs + xm if l == 0 else attn + o
            o = _mlp_block(o_hat, params, l, eps)
        return o
    s, m = xs, xm
    for l in range(cfg.L):
        attn = mma(_norm(s, params, f"l{l}.norm_s", eps),
                   _norm(m, params, f"l{l}.norm_m", eps), params, l, sel, cfg)
        s = _mlp_block(attn + s, params, l, eps)
        m = _mlp_block(attn + m, params, l, eps)
    return s + m


def _check_inputs(xs: Tensor, xm: Tensor, cfg: ModelConfig) -> None:
    if xs.shape != xm.shape:
        raise tn.ShapeError(f"spatial {xs.shape} and motion {xm.shape} shapes differ")
    if xs.shape[-1] != cfg.Z:
        raise tn.ShapeError(f"feature width {xs.shape[-1]} != Z={cfg.Z}")
    if not 1 <= xs.shape[-2] <= cfg.T:
        raise tn.ShapeError(f"sequence length {xs.shape[-2]} outside [1, {cfg.T}]")


def logits(xs, xm, params, sel: AttentionSelection, cfg: ModelConfig) -> Tensor:
    xs, xm = tn._wrap(xs), tn._wrap(xm)
    _check_inputs(xs, xm, cfg)
    o = encode(xs, xm, params, sel, cfg)
    return tn.conv1d_temporal(o, params["head.w"], params["head.b"])


def forward(xs, xm, params, sel: AttentionSelection, cfg: ModelConfig) -> Tensor:
    """Per-frame class scores ``(..., T, C)``; each row lies on the simplex."""
    return tn.softmax_rows(logits(xs, xm, params, sel, cfg))


# ---------------------------------------------------------------- loss

def _check_onehot(Y: np.ndarray) -> None:
    if not (np.all((Y == 0) | (Y == 1)) and np.all(Y.sum(axis=-1) == 1)):
        raise ValueError("ground-truth rows must be one-hot")


def loss(y_hat: Tensor, Y: np.ndarray, alpha: float = 1.0) -> Tensor:
    """Cross-entropy summed over frames plus ``alpha`` times the soft tIoU loss.

    The tIoU loss is ``1 - mean_c sum_t min(p, y) / sum_t max(p, y)`` over the
    classes present in ``Y``. With a leading batch axis the per-sequence
    losses are averaged.
    """
    Y = np.asarray(Y, dtype=np.float64)
    if y_hat.shape != Y.shape:
        raise tn.ShapeError(f"prediction {y_hat.shape} vs ground truth {Y.shape}")
    _check_onehot(Y)
    y_t = Tensor(Y)
    ce = tn.scale(tn.sum_all(y_t * tn.log(y_hat)), -1.0)
    inter = tn.sum_axis(tn.minimum(y_hat, y_t), -2)
    union = tn.sum_axis(tn.maximum(y_hat, y_t), -2)
    ratio = inter / union
    present = (Y.sum(axis=-2) > 0).astype(np.float64)
    weights = present / present.sum(axis=-1, keepdims=True)
    n_seq = int(np.prod(Y.shape[:-2], dtype=np.int64))
    tiou = tn.scale(tn.sum_all(ratio * Tensor(weights)), -1.0) + float(n_seq)
    return tn.scale(ce + tn.scale(tiou, alpha), 1.0 / n_seq)


def frame_accuracy(y_hat: np.ndarray, Y: np.ndarray) -> float:
    return float(np.mean(np.argmax(y_hat, axis=-1) == np.argmax(Y, axis=-1)))


# ---------------------------------------------------------------- optimisation

class AdamW:
    """Adam with decoupled weight decay."""

    def __init__(self, params: dict[str, Tensor], lr: float, weight_decay: float = 0.0,
                 betas=(0.9, 0.999), eps: float = 1e-8):
        self.lr, self.weight_decay, self.betas, self.eps = lr, weight_decay, betas, eps
        self.step_count = 0
        self.m = {k: np.zeros_like(v.data) for k, v in params.items()}
        self.v = {k: np.zeros_like(v.data) for k, v in params.items()}

    def step(self, params: dict[str, Tensor]) -> None:
        self.step_count += 1
        b1, b2 = self.betas
        c1 = 1.0 - b1 ** self.step_count
        c2 = 1.0 - b2 ** self.step_count
        for name, p in params.items():
            g = p.grad if p.grad is not None else np.zeros_like(p.data)
            m = self.m[name] = b1 * self.m[name] + (1 - b1) * g
            v = self.v[name] = b2 * self.v[name] + (1 - b2) * g * g
            update = (m / c1) / (np.sqrt(v / c2) + self.eps) + self.weight_decay * p.data
            p.data = p.data - self.lr * update


def zero_grad(params: dict[str, Tensor]) -> None:
    for p in params.values():
        p.grad = None


def loss_and_grads(xs, xm, Y, params, sel, cfg) -> tuple[float, np.ndarray]:
    zero_grad(params)
    y_hat = forward(xs, xm, params, sel, cfg)
    total = loss(y_hat, Y, cfg.alpha)
    tn.backward(total, params.values())
    return float(total.data), y_hat.data


def train_step(batch, params: dict[str, Tensor], opt: AdamW, sel: AttentionSelection,
               cfg: ModelConfig) -> float:
    """One AdamW step on the mean loss of ``batch = (xs, xm, Y)`` stacked on axis 0."""
    xs, xm, Y = batch
    value, _ = loss_and_grads(xs, xm, Y, params, sel, cfg)
    if not math.isfinite(value):
        raise TrainingError(f"non-finite loss {value} at step {opt.step_count + 1}")
    opt.step(params)
    return value


def fit(xs: np.ndarray, xm: np.ndarray, Y: np.ndarray, sel: AttentionSelection,
        cfg: ModelConfig, params: dict[str, Tensor] | None = None, epochs: int | None = None,
        log_every: int = 0, target_accuracy: float | None = None, logger=None):
    """Minibatch training on ``(N, T, Z)`` features; returns ``(params, history)``.

    ``history`` holds per-epoch mean loss and full-set frame accuracy. When
    ``target_accuracy`` is given, training stops at the first epoch reaching it.
    """
    params = params if params is not None else init_params(cfg, sel)
    opt = AdamW(params, cfg.lr, cfg.weight_decay)
    rng = np.random.default_rng(cfg.seed)
    n = len(xs)
    history = {"loss": [], "accuracy": []}
    for epoch in range(epochs if epochs is not None else cfg.epochs):
        order = rng.permutation(n)
        losses = []
        for start in range(0, n, cfg.batch_size):
            idx = order[start:start + cfg.batch_size]
            losses.append(train_step((xs[idx], xm[idx], Y[idx]), params, opt, sel, cfg))
        acc = frame_accuracy(predict(xs, xm, params, sel, cfg), Y)
        history["loss"].append(float(np.mean(losses)))
        history["accuracy"].append(acc)
        if logger and log_every and (epoch + 1) % log_every == 0:
            logger.info("epoch %d loss %.4f acc %.4f", epoch + 1, history["loss"][-1], acc)
        if target_accuracy is not None and acc >= target_accuracy:
            break
    return params, history


def predict(xs, xm, params, sel, cfg) -> np.ndarray:
    return forward(Tensor(xs), Tensor(xm), params, sel, cfg).data


# ---------------------------------------------------------------- toy embedding

GRID = 8


def _block_means(frames: np.ndarray) -> np.ndarray:
    _, h, w, _ = frames.shape
    ye = np.linspace(0, h, GRID + 1).astype(int)
    xe = np.linspace(0, w, GRID + 1).astype(int)
    sums = np.add.reduceat(np.add.reduceat(frames, ye[:-1], axis=1), xe[:-1], axis=2)
    counts = np.diff(ye)[:, None] * np.diff(xe)[None, :]
    return sums / counts[None, :, :, None]


def embedding_matrix(in_dim: int, Z: int, seed: int) -> np.ndarray:
    rng = np.random.default_rng([seed, in_dim, Z])
    return rng.standard_normal((in_dim, Z)) / math.sqrt(in_dim)


def embed_toy(frames, Z: int, seed: int = 0) -> np.ndarray:
    """Fixed random projection of 8x8 block-mean thumbnails, one row per frame.

    ``frames`` is a ``(T, h, w, channels)`` array (uint8 images are scaled to
    [0, 1]) or a list of flow fields.
    """
    if isinstance(frames, (list, tuple)) and frames and hasattr(frames[0], "vectors"):
        shapes = {f.vectors.shape for f in frames}
        if len(shapes) != 1:
            raise ValueError(f"inconsistent frame sizes {sorted(shapes)}")
        arr = np.stack([f.vectors for f in frames])
    else:
        if isinstance(frames, (list, tuple)):
            shapes = {np.shape(f) for f in frames}
            if len(shapes) != 1:
                raise ValueError(f"inconsistent frame sizes {sorted(shapes)}")
        arr = np.asarray(frames)
        if arr.dtype == np.uint8:
            arr = arr / 255.0
    arr = np.asarray(arr, dtype=np.float64)
    if arr.ndim == 3:
        arr = arr[..., None]
    if arr.ndim != 4 or arr.shape[1] < GRID or arr.shape[2] < GRID:
        raise ValueError(f"frames must be (T, h>={GRID}, w>={GRID}, channels), got {arr.shape}")
    thumbs = _block_means(arr).reshape(len(arr), -1)
    return thumbs @ embedding_matrix(thumbs.shape[1], Z, seed)


# ---------------------------------------------------------------- checkpoints

def save_checkpoint(path: str | os.PathLike, cfg: ModelConfig, sel: AttentionSelection,
                    params: dict[str, Tensor], extra: dict | None = None) -> None:
    doc = {
        "version": CHECKPOINT_VERSION,
        "config": asdict(cfg),
        "selection": sel.label,
        "params": {k: {"shape": list(v.shape), "data": v.data.ravel().tolist()}
                   for k, v in params.items()},
    }
    if extra:
        doc["extra"] = extra
    Path(path).write_text(json.dumps(doc))


def load_checkpoint(path: str | os.PathLike):
    doc = json.loads(Path(path).read_text())
    if doc.get("version") != CHECKPOINT_VERSION:
        raise ValueError(f"{path}: unsupported checkpoint version {doc.get('version')!r}")
    cfg = ModelConfig.from_dict(doc["config"])
    sel = AttentionSelection.parse(doc["selection"])
    expected = init_params(cfg, sel)
    params = {}
    for name, ref in expected.items():
        if name not in doc["params"]:
            raise ValueError(f"{path}: missing parameter {name}")
        entry = doc["params"][name]
        arr = np.asarray(entry["data"], dtype=np.float64).reshape(entry["shape"])
        if arr.shape != ref.shape:
            raise ValueError(f"{path}: {name} has shape {arr.shape}, expected {ref.shape}")
        params[name] = Tensor(arr, requires_grad=True, name=name)
    return cfg, sel, params, doc.get("extra", {})
