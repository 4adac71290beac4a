"""Camera-motion removal for optical flow.

Background flow vectors are modelled with a 2-D Gaussian mixture fitted by
EM; every vector of the frame is then corrected by subtracting the mean of
the mixture component it belongs to.
"""
from __future__ import annotations

import math
import warnings
from dataclasses import dataclass, field

import numpy as np

from . import em_kernels
from ._em_py import log_component_density
from .flow_io import FlowField, MotionVectorSet, segment_motion

COV_FLOOR = 1e-6
_MIN_WEIGHT = 1e-300


class FitError(ValueError):
    pass


@dataclass(frozen=True)
class ConvergenceThresholds:
    mean: float = 1e-4
    cov: float = 1e-4
    weight: float = 1e-5
    loglik: float = 1e-6
    max_iterations: int = 200

    def __post_init__(self):
        for name in ("mean", "cov", "weight", "loglik"):
            if getattr(self, name) < 0:
                raise ValueError(f"threshold {name} must be nonnegative")
        if self.max_iterations < 1:
            raise ValueError("max_iterations must be positive")


@dataclass
class GmmModel:
    means: np.ndarray    # (M, 2)
    covs: np.ndarray     # (M, 2, 2)
    weights: np.ndarray  # (M,)

    @property
    def n_components(self) -> int:
        return len(self.weights)

    def to_json(self) -> dict:
        return {"means": self.means.tolist(), "covs": self.covs.tolist(),
                "weights": self.weights.tolist()}


@dataclass
class EmTrace:
    loglik: list[float] = field(default_factory=list)
    iterations: int = 0
    reason: str = ""


def floor_covariances(covs: np.ndarray, floor: float = COV_FLOOR) -> np.ndarray:
    """Symmetrize and clamp every eigenvalue to at least ``floor``."""
    sym = 0.5 * (covs + np.swapaxes(covs, -1, -2))
    vals, vecs = np.linalg.eigh(sym)
    if np.all(vals >= floor):
        return sym
    vals = np.maximum(vals, floor)
    return np.einsum("mij,mj,mkj->mik", vecs, vals, vecs)


def kmeans_pp_centers(points: np.ndarray, k: int, rng: np.random.Generator) -> np.ndarray:
    n = len(points)
    idx = [int(rng.integers(n))]
    d2 = ((points - points[idx[0]]) ** 2).sum(axis=1)
    for _ in range(1, k):
        total = d2.sum()
        if total > 0:
            nxt = int(rng.choice(n, p=d2 / total))
        else:
            nxt = int(rng.integers(n))
        idx.append(nxt)
        d2 = np.minimum(d2, ((points - points[nxt]) ** 2).sum(axis=1))
    return points[idx].copy()


def _init_model(points: np.ndarray, M: int, rng: np.random.Generator) -> GmmModel:
    centers = kmeans_pp_centers(points, M, rng)
    d2 = ((points[:, None, :] - centers[None, :, :]) ** 2).sum(axis=2)
    label = d2.argmin(axis=1)
    covs = np.empty((M, 2, 2))
    for m in range(M):
        members = points[label == m]
        if len(members) >= 2:
            diff = members - members.mean(axis=0)
            covs[m] = diff.T @ diff / len(members)
        else:
            covs[m] = 0.0
    covs = floor_covariances(covs + COV_FLOOR * np.eye(2))
    return GmmModel(centers, covs, np.full(M, 1.0 / M))


def _estep(points: np.ndarray, model: GmmModel):
    return em_kernels.estep(points, np.ascontiguousarray(model.means),
                            np.ascontiguousarray(model.covs),
                            np.maximum(model.weights, _MIN_WEIGHT))


def _as_points(vectors) -> np.ndarray:
    if isinstance(vectors, MotionVectorSet):
        vectors = vectors.vectors
    return np.ascontiguousarray(np.asarray(vectors, dtype=np.float64).reshape(-1, 2))


def fit_gmm(background, M: int, thresholds: ConvergenceThresholds | None = None,
            seed: int = 0) -> tuple[GmmModel, EmTrace]:
    """Maximum-likelihood mixture fit by EM.

    Stops when any of the three parameter deltas (max abs entry change) falls
    within its threshold, when the log-likelihood gain is at most
    ``thresholds.loglik``, or after ``max_iterations`` M-steps.
    """
    th = thresholds or ConvergenceThresholds()
    points = _as_points(background)
    if M < 1:
        raise FitError("component count must be positive")
    if len(points) < M:
        raise FitError(f"need at least {M} vectors to fit {M} components, got {len(points)}")
    # fit in coordinates relative to one sample: exact for repeated vectors
    origin = points[0].copy()
    points = points - origin
    rng = np.random.default_rng(seed)
    model = _init_model(points, M, rng)
    trace = EmTrace()
    H = len(points)

    resp, ll = _estep(points, model)
    trace.loglik.append(ll)
    while True:
        lam, means, covs = em_kernels.mstep(points, resp)
        new = GmmModel(means, floor_covariances(covs), lam / H)
        trace.iterations += 1
        settled = (np.abs(new.means - model.means).max() <= th.mean
                   or np.abs(new.covs - model.covs).max() <= th.cov
                   or np.abs(new.weights - model.weights).max() <= th.weight)
        model = new
        resp, ll = _estep(points, model)
        gain = ll - trace.loglik[-1]
        trace.loglik.append(ll)
        if not math.isfinite(ll):
            raise FitError("log-likelihood became non-finite")
        if settled:
            trace.reason = "parameters"
            break
        if gain <= th.loglik:
            trace.reason = "loglik"
            break
        if trace.iterations >= th.max_iterations:
            trace.reason = "max_iterations"
            break
    model.means = model.means + origin
    return model, trace


def responsibilities(model: GmmModel, vectors) -> np.ndarray:
    points = _as_points(vectors)
    return _estep(points, model)[0]


def assign_clusters(model: GmmModel, vectors) -> np.ndarray:
    """Index of the most probable component for each vector (lowest index on ties)."""
    points = _as_points(vectors)
    logp = log_component_density(points, model.means, model.covs,
                                 np.maximum(model.weights, _MIN_WEIGHT))
    return logp.argmax(axis=1)


def assign_cluster(model: GmmModel, s) -> int:
    return int(assign_clusters(model, np.asarray(s, dtype=np.float64)[None, :])[0])


def restore_motion(model: GmmModel, flow: FlowField, soft: bool = False) -> FlowField:
    """Subtract the camera-motion mean from every vector of ``flow``.

    With ``soft=True`` the posterior-weighted mean of all components is
    subtracted instead of the argmax component's mean.
    """
    points = _as_points(flow.vectors)
    if soft:
        offset = responsibilities(model, points) @ model.means
    else:
        offset = model.means[assign_clusters(model, points)]
    return FlowField((points - offset).reshape(flow.vectors.shape))


def correct_frame(flow: FlowField, frame_boxes, M: int,
                  thresholds: ConvergenceThresholds | None = None, seed: int = 0,
                  soft: bool = False) -> tuple[FlowField, GmmModel, EmTrace]:
    _, background = segment_motion(flow, frame_boxes)
    if len(background) == 0:
        warnings.warn("boxes cover the whole frame; fitting the mixture on all vectors",
                      RuntimeWarning, stacklevel=2)
        background = MotionVectorSet(flow.vectors.reshape(-1, 2))
    model, trace = fit_gmm(background, M, thresholds, seed)
    return restore_motion(model, flow, soft=soft), model, trace


def correct_sequence(flows: list[FlowField], boxes: list, M: int,
                     thresholds: ConvergenceThresholds | None = None, seed: int = 0,
                     soft: bool = False) -> tuple[list[FlowField], list[dict]]:
    """Correct each frame-pair independently; returns fields and per-frame diagnostics."""
    if len(boxes) != len(flows):
        raise ValueError(f"{len(flows)} flow fields but boxes for {len(boxes)} frames")
    out, diags = [], []
    for t, (flow, frame_boxes) in enumerate(zip(flows, boxes)):
        # per-frame seeds keep frames independent of processing order
        frame_seed = int(np.random.SeedSequence([seed, t]).generate_state(1)[0])
        try:
            fixed, model, trace = correct_frame(flow, frame_boxes, M, thresholds,
                                                frame_seed, soft)
        except FitError as exc:
            raise FitError(f"frame {t}: {exc}") from exc
        out.append(fixed)
        diags.append({"frame": t, "iterations": trace.iterations,
                      "loglik": trace.loglik[-1], "reason": trace.reason,
                      "means": model.means.tolist()})
    return out, diags
