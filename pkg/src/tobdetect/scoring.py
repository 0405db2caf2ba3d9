"""Clip scorers: anything mapping a ClipWindow to a birth probability in [0, 1].

Three implementations share the contract:

* :class:`BlobScorer` - hand-set logistic squash of blob-emergence features.
* :class:`LogisticScorer` - logistic regression on the same features, fitted
  with class-weighted binary cross-entropy.
* :class:`ExternalScorer` - hands clips to an outside process through files,
  which is how a real video backbone plugs in.
"""

from __future__ import annotations

import csv
import json
import logging
import shlex
import subprocess
import tempfile
from dataclasses import dataclass, field
from pathlib import Path
from typing import Dict, Optional, Sequence, Tuple

import numpy as np
from scipy import ndimage
from scipy.special import expit

from .clipper import NB, TOB, EVAL_POLICY, ClipWindow, DatasetManifest, augment, clip_for_entry, AugmentPolicy
from .video import ThermalVideo, write_trv

log = logging.getLogger(__name__)

EPS = 1e-7
HOT_THRESHOLD = 0.85
N_FEATURES = 6
FEATURE_NAMES = ("hot_area_frac", "hot_area_growth", "new_component_area",
                 "frame_diff_energy", "mean_intensity", "max_intensity")

# 4-connectivity
_CROSS = ndimage.generate_binary_structure(2, 1)


class TrainingError(ValueError):
    pass


class IntegrationError(RuntimeError):
    """The external scorer's response is incomplete or unreadable."""


class ContractViolation(ValueError):
    """A scorer produced a value outside [0, 1]."""


def extract_features(clip: ClipWindow, hot_threshold: float = HOT_THRESHOLD) -> np.ndarray:
    """Six spatiotemporal features of a normalized clip.

    ``new_component_area`` is, over the 4-connected hot components of the
    last frame, the largest count of pixels that were not hot in the first
    frame (as a fraction of the frame).  A blob that appears or grows scores
    its fresh pixels; a static blob scores zero.
    """
    x = np.asarray(clip.frames, dtype=np.float64)
    first, last = x[0] > hot_threshold, x[-1] > hot_threshold
    npix = float(first.size)
    hot_first = first.sum() / npix
    hot_last = last.sum() / npix
    new_area = 0.0
    fresh = last & ~first
    if fresh.any():
        labels, count = ndimage.label(last, structure=_CROSS)
        per_comp = np.bincount(labels[fresh], minlength=count + 1)
        new_area = per_comp[1:].max() / npix
    diff = float(np.abs(np.diff(x, axis=0)).mean()) if x.shape[0] > 1 else 0.0
    return np.array([hot_last, hot_last - hot_first, new_area, diff, x.mean(), x.max()])


class Scorer:
    """Base for clip scorers; subclasses implement :meth:`score`."""

    name = "scorer"
    version = "1"

    @property
    def descriptor(self) -> str:
        return f"{self.name}/{self.version}"

    def score(self, clip: ClipWindow) -> float:
        raise NotImplementedError

    def score_clips(self, clips: Sequence[ClipWindow]) -> np.ndarray:
        return np.array([self.score(c) for c in clips], dtype=np.float64)


@dataclass
class BlobScorer(Scorer):
    """``sigmoid(alpha * new_component_area + beta * hot_area_growth - bias)``."""

    alpha: float = 400.0
    beta: float = 200.0
    bias: float = 4.0
    hot_threshold: float = HOT_THRESHOLD
    name = "blob"

    @property
    def descriptor(self) -> str:
        return f"blob/1(alpha={self.alpha:g},beta={self.beta:g},bias={self.bias:g},hot={self.hot_threshold:g})"

    def score(self, clip: ClipWindow) -> float:
        f = extract_features(clip, self.hot_threshold)
        return float(expit(self.alpha * f[2] + self.beta * f[1] - self.bias))


def weighted_bce(y, y_hat, w0: float = 1.0, w1: float = 1.0):
    """Class-weighted binary cross-entropy (the minimized, negated form)."""
    p = np.clip(np.asarray(y_hat, dtype=np.float64), EPS, 1.0 - EPS)
    y = np.asarray(y, dtype=np.float64)
    loss = -(w1 * y * np.log(p) + w0 * (1.0 - y) * np.log1p(-p))
    return float(loss) if loss.ndim == 0 else loss


@dataclass
class LogisticParams:
    weights: np.ndarray = field(default_factory=lambda: np.zeros(N_FEATURES))
    bias: float = 0.0
    feature_mean: np.ndarray = field(default_factory=lambda: np.zeros(N_FEATURES))
    feature_std: np.ndarray = field(default_factory=lambda: np.ones(N_FEATURES))
    final_loss: Optional[float] = None
    train_precision: Optional[float] = None
    train_recall: Optional[float] = None

    def __post_init__(self):
        for name in ("weights", "feature_mean", "feature_std"):
            arr = np.asarray(getattr(self, name), dtype=np.float64)
            if arr.shape != (N_FEATURES,) or not np.all(np.isfinite(arr)):
                raise ValueError(f"{name} must be {N_FEATURES} finite values")
            setattr(self, name, arr)
        if not np.isfinite(self.bias):
            raise ValueError("bias must be finite")

    def to_dict(self) -> dict:
        return {"weights": self.weights.tolist(), "bias": float(self.bias),
                "feature_mean": self.feature_mean.tolist(), "feature_std": self.feature_std.tolist()}

    @classmethod
    def from_dict(cls, d: dict) -> "LogisticParams":
        return cls(d["weights"], d["bias"], d["feature_mean"], d["feature_std"])

    def save(self, path) -> None:
        Path(path).write_text(json.dumps(self.to_dict(), indent=2) + "\n")

    @classmethod
    def load(cls, path) -> "LogisticParams":
        return cls.from_dict(json.loads(Path(path).read_text()))


def loss_and_grad(theta: np.ndarray, Z: np.ndarray, y: np.ndarray, w0: float, w1: float):
    """Mean weighted BCE of a logistic model and its gradient.

    ``theta`` is ``[weights..., bias]``; ``Z`` holds standardized features.
    """
    logits = Z @ theta[:-1] + theta[-1]
    p = expit(logits)
    loss = weighted_bce(y, p, w0, w1).mean()
    # d loss / d logit for each sample (clamping ignored; it only bites at |logit| > 16)
    g = w0 * (1.0 - y) * p - w1 * y * (1.0 - p)
    grad = np.empty_like(theta)
    grad[:-1] = Z.T @ g / len(y)
    grad[-1] = g.mean()
    return loss, grad


def fit_logistic(X: np.ndarray, y: np.ndarray, w0: float = 1.0, w1: float = 1.0,
                 epochs: int = 500, lr: float = 0.5) -> LogisticParams:
    """Full-batch gradient descent on standardized features from a zero start."""
    X = np.asarray(X, dtype=np.float64)
    y = np.asarray(y, dtype=np.float64)
    if len(np.unique(y)) < 2:
        raise TrainingError("training set must contain both classes")
    mean = X.mean(axis=0)
    std = X.std(axis=0)
    std = np.where(std > 1e-12, std, 1.0)
    Z = (X - mean) / std
    theta = np.zeros(X.shape[1] + 1)
    loss = None
    for _ in range(epochs):
        loss, grad = loss_and_grad(theta, Z, y, w0, w1)
        theta -= lr * grad
    loss, _ = loss_and_grad(theta, Z, y, w0, w1)
    pred = expit(Z @ theta[:-1] + theta[-1]) >= 0.5
    tp = int(np.sum(pred & (y == 1)))
    fp = int(np.sum(pred & (y == 0)))
    fn = int(np.sum(~pred & (y == 1)))
    return LogisticParams(theta[:-1], float(theta[-1]), mean, std, float(loss),
                          tp / (tp + fp) if tp + fp else None, tp / (tp + fn) if tp + fn else None)


def manifest_features(manifest: DatasetManifest, videos: Dict, augment_seed: Optional[int] = None,
                      hot_threshold: float = HOT_THRESHOLD) -> Tuple[np.ndarray, np.ndarray]:
    """Features and labels for every manifest entry (eval-mode crop unless ``augment_seed``)."""
    rows, labels = [], []
    for i, (vid, t, label) in enumerate(manifest.entries):
        clip = clip_for_entry(videos[vid], t, manifest.config.F, label)
        if augment_seed is None:
            clip = augment(clip, EVAL_POLICY)
        else:
            clip = augment(clip, AugmentPolicy(), seed=augment_seed + i)
        rows.append(extract_features(clip, hot_threshold))
        labels.append(label)
    return np.array(rows).reshape(-1, N_FEATURES), np.array(labels, dtype=np.float64)


def train_logistic(manifest: DatasetManifest, videos: Dict, epochs: int = 500, lr: float = 0.5,
                   seed: Optional[int] = None) -> LogisticParams:
    """Fit a :class:`LogisticParams` on the manifest's clips.

    ``videos`` maps video ids to :class:`NormalizedVideo`.  With ``seed`` set,
    each clip passes through training-mode augmentation seeded by
    ``seed + entry index``; otherwise the centred eval crop is used.
    """
    counts = manifest.counts
    if not manifest.entries or counts[NB] == 0 or counts[TOB] == 0:
        raise TrainingError(f"manifest needs both classes, got counts {counts}")
    X, y = manifest_features(manifest, videos, seed)
    w0, w1 = manifest.class_weights
    params = fit_logistic(X, y, w0, w1, epochs, lr)
    log.info("logistic fit: loss=%.4f precision=%s recall=%s", params.final_loss,
             params.train_precision, params.train_recall)
    return params


@dataclass
class LogisticScorer(Scorer):
    params: LogisticParams = field(default_factory=LogisticParams)
    hot_threshold: float = HOT_THRESHOLD
    name = "logistic"

    def score(self, clip: ClipWindow) -> float:
        z = (extract_features(clip, self.hot_threshold) - self.params.feature_mean) / self.params.feature_std
        return float(expit(z @ self.params.weights + self.params.bias))


def write_clip_exchange(clips: Sequence[ClipWindow], exchange_dir) -> Path:
    """Write ``clips/part-<k>.trv`` (one clip per shard) and ``clips.csv``."""
    root = Path(exchange_dir)
    (root / "clips").mkdir(parents=True, exist_ok=True)
    with open(root / "clips.csv", "w", newline="") as fh:
        wr = csv.writer(fh, lineterminator="\n")
        wr.writerow(["clip_id", "t"])
        for k, clip in enumerate(clips):
            raw = np.rint(np.asarray(clip.frames, dtype=np.float64) * 65535.0).astype(np.uint16)
            write_trv(ThermalVideo(raw, 1, 1.0 / 65535.0, 0.0, f"part-{k}"), root / "clips" / f"part-{k}.trv")
            wr.writerow([k, repr(float(clip.t))])
    return root


def read_score_exchange(exchange_dir, clips: Sequence[ClipWindow]) -> np.ndarray:
    """Validate and load ``scores.csv`` against the clips that were sent."""
    path = Path(exchange_dir) / "scores.csv"
    if not path.exists():
        raise IntegrationError(f"external scorer produced no {path}")
    got: Dict[int, float] = {}
    with open(path, newline="") as fh:
        for row in csv.DictReader(fh):
            try:
                got[int(row["clip_id"])] = float(row["score"])
            except (KeyError, TypeError, ValueError) as exc:
                raise IntegrationError(f"{path}: malformed row {row}") from exc
    missing = [float(c.t) for k, c in enumerate(clips) if k not in got]
    if missing:
        raise IntegrationError(f"{path}: no score for t = {', '.join(f'{t:g}' for t in missing)}")
    scores = np.array([got[k] for k in range(len(clips))])
    bad = [(clips[k].t, s) for k, s in enumerate(scores) if not 0.0 <= s <= 1.0]
    if bad:
        raise ContractViolation(f"{path}: scores outside [0, 1]: {bad[:5]}")
    return scores


@dataclass
class ExternalScorer(Scorer):
    """Delegates scoring to ``command <exchange_dir>``.

    The command reads ``clips.csv`` and ``clips/part-<k>.trv`` from the
    exchange directory and must write ``scores.csv`` with ``clip_id,t,score``.
    """

    command: str = ""
    workdir: Optional[str] = None
    name = "external"

    @property
    def descriptor(self) -> str:
        return f"external/1({self.command})"

    def score(self, clip: ClipWindow) -> float:
        return float(self.score_clips([clip])[0])

    def score_clips(self, clips: Sequence[ClipWindow]) -> np.ndarray:
        clips = list(clips)
        with tempfile.TemporaryDirectory(dir=self.workdir) as tmp:
            write_clip_exchange(clips, tmp)
            proc = subprocess.run(shlex.split(self.command) + [tmp], capture_output=True, text=True)
            if proc.returncode != 0:
                raise IntegrationError(f"external scorer exited {proc.returncode}: {proc.stderr.strip()[-500:]}")
            return read_score_exchange(tmp, clips)


def make_scorer(kind: str, params_path=None, command: str = "", **blob_kwargs) -> Scorer:
    if kind == "blob":
        return BlobScorer(**blob_kwargs)
    if kind == "logistic":
        if params_path is None:
            raise ValueError("logistic scorer needs a params file")
        return LogisticScorer(LogisticParams.load(params_path),
                              blob_kwargs.get("hot_threshold", HOT_THRESHOLD))
    if kind == "external":
        if not command:
            raise ValueError("external scorer needs a command")
        return ExternalScorer(command)
    raise ValueError(f"unknown scorer {kind!r}")
