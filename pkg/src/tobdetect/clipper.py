"""Clip windows over normalized video, dataset construction and augmentation."""

from __future__ import annotations

import csv
import json
import logging
import math
import warnings
from dataclasses import asdict, dataclass, field
from fractions import Fraction
from pathlib import Path
from typing import Dict, Iterator, List, Optional, Sequence, Tuple

import numpy as np

from .video import Annotation, NormalizedVideo

log = logging.getLogger(__name__)

NB, TOB = 0, 1
EVAL_CROP = 25


class BoundaryError(IndexError):
    """Clip would start before the first frame."""


class ClipSizeError(ValueError):
    pass


def as_seconds(value) -> Fraction:
    """Exact Fraction for a time value; floats are read through their shortest repr."""
    if isinstance(value, Fraction):
        return value
    if isinstance(value, float):
        return Fraction(repr(value))
    return Fraction(value)


@dataclass(frozen=True, eq=False)
class ClipWindow:
    frames: np.ndarray
    t: float
    label: Optional[int] = None
    video_id: str = ""

    @property
    def n_frames(self) -> int:
        return self.frames.shape[0]


def first_timestamp(F: int, frame_rate: Fraction) -> int:
    """t0 = floor(F / f_r), moved up to the first whole second holding a full clip.

    At 25/3 fps, F=25 gives 3 s either way; F=37 gives floor(4.44) = 4 s,
    whose end frame 33 precedes frame 36, so t0 becomes 5 s.
    """
    t0 = math.floor(Fraction(F) / frame_rate)
    if math.floor(frame_rate * t0) < F - 1:
        t0 = math.ceil(Fraction(F - 1) / frame_rate)
    return t0


def frame_index(t, frame_rate: Fraction) -> int:
    return math.floor(frame_rate * as_seconds(t))


def clip_at(video: NormalizedVideo, n: int, F: int, t=None, label=None) -> ClipWindow:
    """Frames ``n-F+1 .. n`` in chronological order."""
    if F < 1:
        raise ValueError("F must be >= 1")
    if n < F - 1:
        raise BoundaryError(f"clip ending at frame {n} needs {F} frames; first valid end is {F - 1}")
    if n >= video.n_frames:
        raise IndexError(f"frame {n} out of range for {video.n_frames}-frame video")
    frames = video.frames[n - F + 1: n + 1]
    if t is None:
        t = float(Fraction(n) / video.frame_rate)
    return ClipWindow(frames, float(t), label, video.source_id)


def clip_times(n_frames: int, frame_rate: Fraction, F: int, tau, start=None) -> List[Fraction]:
    """Grid ``t0 + k*tau`` with a valid clip (index in ``[F-1, N)``)."""
    tau = as_seconds(tau)
    if tau <= 0:
        raise ValueError("tau must be positive")
    t0 = Fraction(first_timestamp(F, frame_rate)) if start is None else as_seconds(start)
    times = []
    k = 0
    while True:
        t = t0 + k * tau
        n = math.floor(frame_rate * t)
        if n >= n_frames:
            break
        # t0 = floor(F/f_r) can land before frame F-1; such points have no full clip
        if n >= F - 1:
            times.append(t)
        k += 1
    return times


def sample_clips(video: NormalizedVideo, F: int, tau) -> Iterator[ClipWindow]:
    """Yield ``x(t)`` for ``t = t0, t0+tau, ...`` while the end frame exists."""
    if video.n_frames < F:
        warnings.warn(f"{video.source_id or 'video'}: {video.n_frames} frames < F={F}; no clips")
        return
    for t in clip_times(video.n_frames, video.frame_rate, F, tau):
        yield clip_at(video, frame_index(t, video.frame_rate), F, t=float(t))


@dataclass(frozen=True)
class DatasetConfig:
    F: int = 37
    tau_tob: float = 0.5
    nb_period: float = 30.0
    guard: float = 1.0
    nb_exclusion: float = 30.0


@dataclass
class DatasetManifest:
    entries: List[Tuple[str, float, int]]
    config: DatasetConfig = field(default_factory=DatasetConfig)
    sources: Dict[str, str] = field(default_factory=dict)

    @property
    def counts(self) -> Dict[int, int]:
        c = {NB: 0, TOB: 0}
        for _, _, label in self.entries:
            c[label] += 1
        return c

    @property
    def class_weights(self) -> Tuple[float, float]:
        c = self.counts
        return class_weights(c[NB], c[TOB])

    def write(self, csv_path, json_path=None) -> None:
        csv_path = Path(csv_path)
        with open(csv_path, "w", newline="") as fh:
            wr = csv.writer(fh, lineterminator="\n")
            wr.writerow(["video_id", "t", "label"])
            for vid, t, label in self.entries:
                wr.writerow([vid, _fmt_t(t), label])
        json_path = Path(json_path) if json_path else csv_path.with_suffix(".json")
        c = self.counts
        try:
            w0, w1 = self.class_weights
        except ValueError:
            w0 = w1 = None
        header = {
            "csv": csv_path.name,
            "counts": {"nb": c[NB], "tob": c[TOB]},
            "class_weights": {"w0": w0, "w1": w1},
            "config": asdict(self.config),
            "sources": self.sources,
        }
        json_path.write_text(json.dumps(header, indent=2, sort_keys=True) + "\n")

    @classmethod
    def read(cls, json_path) -> "DatasetManifest":
        json_path = Path(json_path)
        header = json.loads(json_path.read_text())
        entries = []
        with open(json_path.parent / header["csv"], newline="") as fh:
            for row in csv.DictReader(fh):
                entries.append((row["video_id"], float(row["t"]), int(row["label"])))
        m = cls(entries, DatasetConfig(**header["config"]), header.get("sources", {}))
        counts = m.counts
        if counts[NB] != header["counts"]["nb"] or counts[TOB] != header["counts"]["tob"]:
            raise ValueError(f"{json_path}: counts in header disagree with {header['csv']}")
        return m


def _fmt_t(t) -> str:
    t = float(t)
    return str(int(t)) if t.is_integer() else repr(t)


def class_weights(n0: int, n1: int) -> Tuple[float, float]:
    """Inverted class weights ``w_c = (n0 + n1) / (2 n_c)``."""
    if n0 <= 0 or n1 <= 0:
        raise ValueError(f"both classes needed for class weights (n0={n0}, n1={n1})")
    total = n0 + n1
    return total / (2.0 * n0), total / (2.0 * n1)


def tob_times(t_birth, n_frames: int, frame_rate: Fraction, config: DatasetConfig) -> List[Fraction]:
    """Grid points whose window ``[t - F/f_r, t]`` holds the birth >= guard from both edges."""
    span = Fraction(config.F) / frame_rate
    tb, guard = as_seconds(t_birth), as_seconds(config.guard)
    return [t for t in clip_times(n_frames, frame_rate, config.F, config.tau_tob)
            if t - tb >= guard and tb - (t - span) >= guard]


def nb_times(t_birth, n_frames: int, frame_rate: Fraction, config: DatasetConfig) -> List[Fraction]:
    """One grid point every ``nb_period`` whose window stays clear of the birth zone."""
    span = Fraction(config.F) / frame_rate
    times = clip_times(n_frames, frame_rate, config.F, config.nb_period)
    if t_birth is None:
        return times
    tb, excl = as_seconds(t_birth), as_seconds(config.nb_exclusion)
    return [t for t in times if t < tb - excl or t - span > tb + excl]


def build_dataset(items: Sequence[Tuple[str, NormalizedVideo, Annotation]],
                  config: DatasetConfig = DatasetConfig()) -> DatasetManifest:
    """Label clip timestamps for every ``(video_id, video, annotation)`` item."""
    entries = []
    for vid, video, ann in items:
        ann.check_bounds(video)
        if ann.t_birth is not None:
            entries += [(vid, float(t), TOB) for t in tob_times(ann.t_birth, video.n_frames, video.frame_rate, config)]
        else:
            log.info("%s: no birth annotation; NB clips only", vid)
        entries += [(vid, float(t), NB) for t in nb_times(ann.t_birth, video.n_frames, video.frame_rate, config)]
    entries.sort(key=lambda e: (e[0], e[1], e[2]))
    return DatasetManifest(entries, config)


def clip_for_entry(video: NormalizedVideo, t: float, F: int, label=None) -> ClipWindow:
    return clip_at(video, frame_index(t, video.frame_rate), F, t=t, label=label)


@dataclass(frozen=True)
class AugmentPolicy:
    brightness: float = 0.1
    contrast: Tuple[float, float] = (0.8, 1.2)
    flip_p: float = 0.5
    crop: int = EVAL_CROP
    train: bool = True


EVAL_POLICY = AugmentPolicy(train=False)


def center_crop_start(n: int, crop: int) -> int:
    return (n - crop) // 2


def augment(clip: ClipWindow, policy: AugmentPolicy = AugmentPolicy(), seed: int = 0) -> ClipWindow:
    """Brightness, contrast about 0.5, left-right flip, then a 25-frame crop.

    In eval mode (``policy.train=False``) only the centred crop is applied.
    """
    n = clip.n_frames
    if n < policy.crop:
        raise ClipSizeError(f"clip has {n} frames, crop needs {policy.crop}")
    if not policy.train:
        s = center_crop_start(n, policy.crop)
        return ClipWindow(clip.frames[s: s + policy.crop], clip.t, clip.label, clip.video_id)
    rng = np.random.default_rng(seed)
    delta = rng.uniform(-policy.brightness, policy.brightness) if policy.brightness else 0.0
    lo, hi = policy.contrast
    scale = rng.uniform(lo, hi) if hi > lo else lo
    flip = rng.random() < policy.flip_p
    start = int(rng.integers(0, n - policy.crop + 1))
    x = clip.frames[start: start + policy.crop].astype(np.float32)
    if delta or scale != 1.0:
        x = np.clip((x + delta - 0.5) * scale + 0.5, 0.0, 1.0)
    if flip:
        x = x[:, :, ::-1]
    return ClipWindow(np.ascontiguousarray(x), clip.t, clip.label, clip.video_id)
