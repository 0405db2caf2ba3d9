"""Score smoothing and time-of-birth estimation."""

from __future__ import annotations

import csv
import json
import logging
from dataclasses import asdict, dataclass, field, replace
from pathlib import Path
from typing import Optional, Tuple

import numpy as np

from .clipper import sample_clips
from .normalization import NormalizationConfig, normalize
from .scoring import ContractViolation, Scorer
from .video import ThermalVideo

log = logging.getLogger(__name__)


class StageError(RuntimeError):
    def __init__(self, stage: str, cause: BaseException):
        super().__init__(f"{stage}: {cause}")
        self.stage = stage
        self.cause = cause


@dataclass(frozen=True, eq=False)
class ScoreSeries:
    t_start: float
    stride: float
    raw: np.ndarray
    filtered: Optional[np.ndarray] = None
    scorer: str = ""

    def __post_init__(self):
        raw = np.asarray(self.raw, dtype=np.float64)
        if raw.size and (np.any(~np.isfinite(raw)) or raw.min() < 0.0 or raw.max() > 1.0):
            raise ContractViolation("raw scores must lie in [0, 1]")
        object.__setattr__(self, "raw", raw)
        if self.filtered is not None:
            filt = np.asarray(self.filtered, dtype=np.float64)
            if filt.shape != raw.shape:
                raise ValueError("filtered and raw series differ in length")
            object.__setattr__(self, "filtered", filt)

    @property
    def times(self) -> np.ndarray:
        return self.t_start + self.stride * np.arange(self.raw.size)

    def __len__(self):
        return self.raw.size

    def write_csv(self, path) -> None:
        filt = self.filtered if self.filtered is not None else np.full(self.raw.shape, np.nan)
        with open(path, "w", newline="") as fh:
            wr = csv.writer(fh, lineterminator="\n")
            wr.writerow(["t", "raw", "filtered"])
            for t, r, f in zip(self.times, self.raw, filt):
                wr.writerow([_num(t), repr(float(r)), "" if np.isnan(f) else repr(float(f))])

    @classmethod
    def read_csv(cls, path, scorer: str = "") -> "ScoreSeries":
        t, raw, filt = [], [], []
        with open(path, newline="") as fh:
            for row in csv.DictReader(fh):
                t.append(float(row["t"]))
                raw.append(float(row["raw"]))
                filt.append(float(row["filtered"]) if row.get("filtered") else np.nan)
        t = np.array(t)
        stride = float(t[1] - t[0]) if t.size > 1 else 1.0
        filt = np.array(filt)
        return cls(float(t[0]) if t.size else 0.0, stride, np.array(raw),
                   None if np.all(np.isnan(filt)) else filt, scorer)


def _num(v):
    v = float(v)
    return int(v) if v.is_integer() else v


@dataclass(frozen=True)
class ToBEstimate:
    t_hat: Optional[float]
    gamma: float
    filter_k: int
    scorer: str = ""

    @property
    def found(self) -> bool:
        return self.t_hat is not None

    def to_dict(self) -> dict:
        return {"t_hat": None if self.t_hat is None else _num(self.t_hat),
                "gamma": self.gamma, "K": self.filter_k, "scorer": self.scorer}


def fir_smooth(series: ScoreSeries, K: int = 3, startup: str = "available") -> ScoreSeries:
    """Length-K moving average, ``y_h(t) = mean(y(t), y(t-1), ..., y(t-K+1))``.

    ``startup="available"`` averages whatever history exists for the first
    K-1 points; ``startup="skip"`` sets them to 0 so they can never trigger.
    """
    if K < 1:
        raise ValueError("K must be >= 1")
    raw = series.raw
    if raw.size == 0:
        return replace(series, filtered=raw.copy())
    acc = np.convolve(raw, np.ones(K), mode="full")[: raw.size]
    counts = np.minimum(np.arange(1, raw.size + 1), K).astype(np.float64)
    if startup == "available":
        # rounding can leave a mean a hair outside the data range
        filt = np.clip(acc / counts, raw.min(), raw.max())
    elif startup == "skip":
        filt = acc / K
        filt[: K - 1] = 0.0
    else:
        raise ValueError(f"unknown startup policy {startup!r}")
    return replace(series, filtered=filt)


def estimate_tob(series: ScoreSeries, gamma: float = 0.9, K: Optional[int] = None) -> ToBEstimate:
    """Earliest grid time whose filtered score reaches ``gamma``; None if never."""
    if series.filtered is None:
        raise ValueError("series has not been filtered")
    if not 0 < gamma <= 1:
        raise ValueError("gamma must be in (0, 1]")
    hits = np.flatnonzero(series.filtered >= gamma)
    t_hat = float(series.times[hits[0]]) if hits.size else None
    return ToBEstimate(t_hat, gamma, K if K is not None else 0, series.scorer)


@dataclass(frozen=True)
class DetectorConfig:
    F: int = 25
    tau: float = 1.0
    K: int = 3
    gamma: float = 0.9
    startup: str = "available"
    seed: int = 0
    normalization: NormalizationConfig = field(default_factory=NormalizationConfig)

    def to_dict(self) -> dict:
        return asdict(self)


def score_video(video: ThermalVideo, scorer: Scorer, config: DetectorConfig = DetectorConfig()) -> ScoreSeries:
    """Normalize, clip and score ``video``; the returned series is unfiltered."""
    try:
        norm = normalize(video, config.seed, config.normalization)
    except Exception as exc:
        raise StageError("normalize", exc) from exc
    try:
        clips = list(sample_clips(norm, config.F, config.tau))
    except Exception as exc:
        raise StageError("clip", exc) from exc
    try:
        raw = scorer.score_clips(clips) if clips else np.empty(0)
    except Exception as exc:
        raise StageError("score", exc) from exc
    t_start = clips[0].t if clips else 0.0
    return ScoreSeries(t_start, float(config.tau), raw, None, scorer.descriptor)


def detect(video: ThermalVideo, scorer: Scorer,
           config: DetectorConfig = DetectorConfig()) -> Tuple[ToBEstimate, ScoreSeries]:
    """Full inference: normalize, slide, score, smooth and threshold."""
    series = score_video(video, scorer, config)
    try:
        series = fir_smooth(series, config.K, config.startup)
        est = estimate_tob(series, config.gamma, config.K)
    except Exception as exc:
        raise StageError("estimate", exc) from exc
    return est, series


def write_estimate(est: ToBEstimate, path) -> None:
    Path(path).write_text(json.dumps(est.to_dict(), indent=2, sort_keys=True) + "\n")
