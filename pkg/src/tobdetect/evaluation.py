"""Clip-level metrics, ToB error statistics, FPR sweeps and batch evaluation."""

from __future__ import annotations

import csv
import json
import logging
import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from pathlib import Path
from typing import Dict, List, Optional, Sequence, Tuple

import numpy as np

from .detection import DetectorConfig, ScoreSeries, detect, estimate_tob, fir_smooth
from .scoring import Scorer
from .simulator import read_manifest
from .video import read_annotation, read_trv

log = logging.getLogger(__name__)

TOLERANCE_WINDOW_S = 10.0


@dataclass(frozen=True)
class ConfusionCounts:
    tp: int
    fp: int
    tn: int
    fn: int

    def __post_init__(self):
        for name in ("tp", "fp", "tn", "fn"):
            v = getattr(self, name)
            if int(v) != v or v < 0:
                raise ValueError(f"{name} must be a non-negative integer")

    @property
    def total(self) -> int:
        return self.tp + self.fp + self.tn + self.fn

    @classmethod
    def from_predictions(cls, labels, predictions) -> "ConfusionCounts":
        y = np.asarray(labels, dtype=bool)
        p = np.asarray(predictions, dtype=bool)
        return cls(int(np.sum(y & p)), int(np.sum(~y & p)), int(np.sum(~y & ~p)), int(np.sum(y & ~p)))


def classify_metrics(counts: ConfusionCounts) -> Dict[str, Optional[float]]:
    """Precision, recall and Matthews correlation; None where a denominator is zero."""
    tp, fp, tn, fn = counts.tp, counts.fp, counts.tn, counts.fn
    precision = tp / (tp + fp) if tp + fp else None
    recall = tp / (tp + fn) if tp + fn else None
    denom = (tp + fp) * (tp + fn) * (tn + fp) * (tn + fn)
    mcc = (tp * tn - fp * fn) / math.sqrt(denom) if denom else None
    return {"precision": precision, "recall": recall, "mcc": mcc}


@dataclass(frozen=True)
class ErrStats:
    errors: Tuple[float, ...]
    q1: Optional[float]
    q2: Optional[float]
    q3: Optional[float]
    mean: Optional[float]
    bf_rate: float
    n_videos: int

    def to_dict(self) -> dict:
        return {"errors": list(self.errors), "q1": self.q1, "q2": self.q2, "q3": self.q3,
                "mean": self.mean, "bf_rate": self.bf_rate, "n_videos": self.n_videos,
                "n_found": len(self.errors)}

    def table_row(self, label: str = "Video-based", fir: bool = True) -> str:
        """One row in the layout: method | FIR | Q1 | Q2 | Q3 | Mean | B.F."""
        def f(v):
            return "-" if v is None else f"{v:g}"
        return " | ".join([label, "yes" if fir else "no", f(self.q1), f(self.q2), f(self.q3),
                           f(None if self.mean is None else round(self.mean, 2)),
                           f"{100 * self.bf_rate:.0f}%"])


def err_stats(pairs: Sequence[Tuple[Optional[float], float]]) -> ErrStats:
    """Signed errors ``t_hat - t_birth`` and quartiles/mean of their magnitudes.

    Quartiles use linear interpolation between order statistics
    (``numpy.percentile`` default, the inclusive method).
    """
    if not pairs:
        raise ValueError("err_stats needs at least one (t_hat, t_birth) pair")
    errors = []
    for t_hat, t_birth in pairs:
        if t_birth is None:
            raise ValueError("every pair needs a ground-truth t_birth")
        if t_hat is not None:
            errors.append(float(t_hat) - float(t_birth))
    bf = len(errors) / len(pairs)
    if not errors:
        return ErrStats((), None, None, None, None, bf, len(pairs))
    mag = np.abs(errors)
    q1, q2, q3 = (float(v) for v in np.percentile(mag, [25, 50, 75]))
    return ErrStats(tuple(errors), q1, q2, q3, float(mag.mean()), bf, len(pairs))


def negative_mask(series: ScoreSeries, t_birth: Optional[float], window: float = TOLERANCE_WINDOW_S) -> np.ndarray:
    """Grid points outside ``[t_birth - window, t_birth + window]`` (all of them if no birth)."""
    t = series.times
    if t_birth is None:
        return np.ones(t.shape, dtype=bool)
    return (t < t_birth - window) | (t > t_birth + window)


def sweep_thresholds(items: Sequence[Tuple[ScoreSeries, Optional[float]]], gammas: Sequence[float],
                     window: float = TOLERANCE_WINDOW_S) -> List[Tuple[float, Optional[float]]]:
    """Per-grid-point false positive rate of the filtered scores for each threshold.

    A negative grid point is a false positive at threshold ``g`` when its
    filtered score is ``>= g``.  Pooled over all series.
    """
    gammas = list(gammas)
    if not gammas:
        raise ValueError("empty threshold grid")
    negatives = []
    for series, t_birth in items:
        if series.filtered is None:
            raise ValueError("series must be filtered before a sweep")
        negatives.append(series.filtered[negative_mask(series, t_birth, window)])
    neg = np.concatenate(negatives) if negatives else np.empty(0)
    table = []
    for g in gammas:
        table.append((float(g), float(np.mean(neg >= g)) if neg.size else None))
    return table


def default_gammas() -> List[float]:
    return [round(0.05 * k, 2) for k in range(0, 20)] + [0.99]


def write_fpr_csv(table, path) -> None:
    with open(path, "w", newline="") as fh:
        wr = csv.writer(fh, lineterminator="\n")
        wr.writerow(["gamma", "fpr"])
        for g, fpr in table:
            wr.writerow([repr(g), "" if fpr is None else repr(fpr)])


def read_fpr_csv(path) -> List[Tuple[float, Optional[float]]]:
    with open(path, newline="") as fh:
        return [(float(r["gamma"]), float(r["fpr"]) if r["fpr"] else None) for r in csv.DictReader(fh)]


@dataclass
class VideoResult:
    video_id: str
    t_birth: Optional[int]
    t_hat: Optional[float]
    maternal_position: str = "unknown"
    occluded: bool = False
    series: Optional[ScoreSeries] = field(default=None, repr=False)
    error: Optional[str] = None

    @property
    def err(self) -> Optional[float]:
        if self.t_birth is None or self.t_hat is None:
            return None
        return self.t_hat - self.t_birth


@dataclass
class EvalReport:
    config: DetectorConfig
    scorer: str
    videos: List[VideoResult]
    fpr: List[Tuple[float, Optional[float]]]
    window: float = TOLERANCE_WINDOW_S
    clip_counts: Optional[ConfusionCounts] = None

    @property
    def failures(self) -> List[VideoResult]:
        return [v for v in self.videos if v.error is not None]

    def _ok(self):
        return [v for v in self.videos if v.error is None]

    def stats(self, include_occluded: bool = True) -> Optional[ErrStats]:
        pairs = [(v.t_hat, v.t_birth) for v in self._ok()
                 if v.t_birth is not None and (include_occluded or not v.occluded)]
        return err_stats(pairs) if pairs else None

    def false_births(self) -> List[str]:
        return [v.video_id for v in self._ok() if v.t_birth is None and v.t_hat is not None]

    def to_dict(self) -> dict:
        def stats(s):
            return None if s is None else s.to_dict()
        d = {
            "scorer": self.scorer,
            "config": self.config.to_dict(),
            "n_videos": len(self.videos),
            "n_failed": len(self.failures),
            "err_stats": stats(self.stats()),
            "err_stats_visible": stats(self.stats(include_occluded=False)),
            "no_birth_videos": [v.video_id for v in self._ok() if v.t_birth is None],
            "false_births": self.false_births(),
            "fpr": {"denominator": "per negative grid point", "tolerance_window_s": self.window,
                    "table": [{"gamma": g, "fpr": f} for g, f in self.fpr]},
            "videos": [{"video_id": v.video_id, "t_birth": v.t_birth,
                        "t_hat": _num(v.t_hat), "err": _num(v.err),
                        "maternal_position": v.maternal_position, "occluded": v.occluded,
                        "error": v.error} for v in self.videos],
        }
        if self.clip_counts is not None:
            d["clip_metrics"] = dict(classify_metrics(self.clip_counts),
                                     **{k: getattr(self.clip_counts, k) for k in ("tp", "fp", "tn", "fn")})
        return d


def _num(v):
    if v is None:
        return None
    v = float(v)
    return int(v) if v.is_integer() else v


def _evaluate_one(entry: dict, scorer: Scorer, config: DetectorConfig) -> VideoResult:
    vid = Path(entry["file"]).stem
    try:
        video = read_trv(entry["path"])
        ann = read_annotation(entry["annotation_path"])
        est, series = detect(video, scorer, config)
        return VideoResult(vid, ann.t_birth, est.t_hat, ann.maternal_position.value,
                           bool(entry.get("occluded", False)), series)
    except Exception as exc:  # one bad video must not sink the batch
        log.error("%s: %s", vid, exc)
        return VideoResult(vid, entry.get("t_birth"), None, entry.get("maternal_position", "unknown"),
                           bool(entry.get("occluded", False)), None, f"{type(exc).__name__}: {exc}")


def eval_run(manifest_path, scorer: Scorer, config: DetectorConfig = DetectorConfig(),
             gammas: Optional[Sequence[float]] = None, window: float = TOLERANCE_WINDOW_S,
             threads: int = 1, clip_counts: Optional[ConfusionCounts] = None) -> EvalReport:
    """Detect on every manifest video and aggregate.  Results are ordered by video id."""
    entries = sorted(read_manifest(manifest_path), key=lambda e: Path(e["file"]).stem)
    if threads > 1:
        with ThreadPoolExecutor(threads) as pool:
            results = list(pool.map(lambda e: _evaluate_one(e, scorer, config), entries))
    else:
        results = [_evaluate_one(e, scorer, config) for e in entries]
    table = sweep_thresholds([(r.series, r.t_birth) for r in results if r.series is not None],
                             gammas if gammas is not None else default_gammas(), window)
    return EvalReport(config, scorer.descriptor, results, table, window, clip_counts)


def write_report(report: EvalReport, out_dir, figures: bool = True) -> Path:
    """``report.json``, ``per_video.csv``, ``fpr.csv``, ``scores/<video>.csv`` and figures."""
    out = Path(out_dir)
    (out / "scores").mkdir(parents=True, exist_ok=True)
    (out / "report.json").write_text(json.dumps(report.to_dict(), indent=2, sort_keys=True) + "\n")
    with open(out / "per_video.csv", "w", newline="") as fh:
        wr = csv.writer(fh, lineterminator="\n")
        wr.writerow(["video_id", "t_birth", "t_hat", "err"])
        for v in report.videos:
            wr.writerow([v.video_id, "" if v.t_birth is None else v.t_birth,
                         "" if v.t_hat is None else _num(v.t_hat),
                         "Missing" if v.err is None and v.t_birth is not None else ("" if v.err is None else _num(v.err))])
    write_fpr_csv(report.fpr, out / "fpr.csv")
    for v in report.videos:
        if v.series is not None:
            v.series.write_csv(out / "scores" / f"{v.video_id}.csv")
    if figures:
        from .plotting import render_report_figures
        render_report_figures(out)
    return out


def sweep_from_dir(scores_dir, manifest_path, gammas: Sequence[float], K: int = 3,
                   startup: str = "available", window: float = TOLERANCE_WINDOW_S):
    """Rebuild an FPR table from stored score CSVs without re-scoring.

    Raw scores are re-filtered with ``K`` so the sweep can vary the filter.
    """
    items = []
    for e in read_manifest(manifest_path):
        vid = Path(e["file"]).stem
        path = Path(scores_dir) / f"{vid}.csv"
        if not path.exists():
            raise FileNotFoundError(f"no stored scores for {vid}: {path}")
        series = fir_smooth(ScoreSeries.read_csv(path), K, startup)
        items.append((series, e.get("t_birth")))
    return sweep_thresholds(items, gammas, window)


def estimates_by_gamma(series: ScoreSeries, gammas: Sequence[float], K: int = 3) -> List[Optional[float]]:
    return [estimate_tob(series, g, K).t_hat for g in gammas]
