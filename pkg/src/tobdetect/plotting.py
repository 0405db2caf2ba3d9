"""Figures rendered from the evaluation CSVs.

Everything reads the delimited outputs (``scores/<video>.csv``,
``per_video.csv``, ``fpr.csv``) so figures can be regenerated without
re-running detection.  SVG output is byte-stable across runs.
"""

from __future__ import annotations

import csv
import json
from pathlib import Path

import matplotlib
import numpy as np
from matplotlib.figure import Figure

golden_mean = (np.sqrt(5) - 1.0) / 2.0
fig_width = 5.0
fig_size = (fig_width, fig_width * golden_mean)

params = {
    "font.size": 8,
    "axes.labelsize": 9,
    "legend.fontsize": 7,
    "xtick.labelsize": 8,
    "ytick.labelsize": 8,
    "lines.linewidth": 1.0,
    "svg.hashsalt": "tobdetect",
    "svg.fonttype": "path",
}

RAW_COLOR = "#d62728"
FILTERED_COLOR = "black"
BIRTH_COLOR = "#1f77b4"


def _save(fig: Figure, path) -> Path:
    path = Path(path)
    meta = {"Date": None} if path.suffix == ".svg" else {}
    fig.savefig(path, metadata=meta or None)
    return path


def _figure(size=fig_size) -> Figure:
    with matplotlib.rc_context(params):
        fig = Figure(figsize=size)
    return fig


def _read_scores(path):
    t, raw, filt = [], [], []
    with open(path, newline="") as fh:
        for row in csv.DictReader(fh):
            t.append(float(row["t"]))
            raw.append(float(row["raw"]))
            filt.append(float(row["filtered"]) if row["filtered"] else np.nan)
    return np.array(t), np.array(raw), np.array(filt)


def plot_score_trace(scores_csv, out_path, t_birth=None, gamma=None, span=None, title=None) -> Path:
    """Raw and filtered score against time, birth marked; ``span`` limits to t_birth +/- span."""
    t, raw, filt = _read_scores(scores_csv)
    with matplotlib.rc_context(params):
        fig = _figure()
        ax = fig.add_subplot(111)
        ax.plot(t, raw, color=RAW_COLOR, label="raw score")
        if not np.all(np.isnan(filt)):
            ax.plot(t, filt, color=FILTERED_COLOR, label="filtered score")
        if t_birth is not None:
            ax.axvline(t_birth, color=BIRTH_COLOR, label="annotated ToB")
            if span is not None:
                ax.set_xlim(t_birth - span, t_birth + span)
        if gamma is not None:
            ax.axhline(gamma, color="grey", linestyle=":", label=f"threshold {gamma:g}")
        ax.set_ylim(-0.02, 1.02)
        ax.set_xlabel("time (s)")
        ax.set_ylabel("ToB score")
        if title:
            ax.set_title(title)
        ax.legend(loc="upper left")
        fig.tight_layout()
        return _save(fig, out_path)


def plot_err_bars(per_video_csv, out_path) -> Path:
    """Signed error per birth video; videos without an estimate get a 'Missing' marker."""
    ids, errs, missing = [], [], []
    with open(per_video_csv, newline="") as fh:
        for row in csv.DictReader(fh):
            if not row["t_birth"]:
                continue
            ids.append(row["video_id"])
            if row["err"] in ("", "Missing"):
                errs.append(0.0)
                missing.append(True)
            else:
                errs.append(float(row["err"]))
                missing.append(False)
    with matplotlib.rc_context(params):
        fig = _figure((fig_width, max(2.0, 0.18 * len(ids) + 0.8)))
        ax = fig.add_subplot(111)
        y = np.arange(len(ids))
        colors = ["lightgrey" if m else BIRTH_COLOR for m in missing]
        ax.barh(y, errs, color=colors)
        for yi, m in zip(y, missing):
            if m:
                ax.text(0, yi, " Missing", va="center", ha="left", fontsize=7)
        ax.axvline(0, color="black", linewidth=0.6)
        ax.set_yticks(y)
        ax.set_yticklabels(ids)
        ax.invert_yaxis()
        ax.set_xlabel("err = predicted - annotated ToB (s)")
        fig.tight_layout()
        return _save(fig, out_path)


def plot_fpr(fpr_csv, out_path) -> Path:
    g, f = [], []
    with open(fpr_csv, newline="") as fh:
        for row in csv.DictReader(fh):
            if row["fpr"]:
                g.append(float(row["gamma"]))
                f.append(float(row["fpr"]))
    with matplotlib.rc_context(params):
        fig = _figure()
        ax = fig.add_subplot(111)
        ax.plot(g, f, marker="o", markersize=3, color=FILTERED_COLOR)
        ax.set_xlabel("confidence threshold")
        ax.set_ylabel("FPR (per negative grid point)")
        ax.set_xlim(0, 1)
        ax.set_ylim(bottom=0)
        fig.tight_layout()
        return _save(fig, out_path)


def render_report_figures(report_dir, fmt: str = "svg", span: float = 60.0) -> list:
    """Render every figure for an evaluation directory into ``figures/``."""
    root = Path(report_dir)
    figs = root / "figures"
    figs.mkdir(exist_ok=True)
    written = []
    gamma = None
    births = {}
    report = root / "report.json"
    if report.exists():
        rep = json.loads(report.read_text())
        gamma = rep["config"]["gamma"]
        births = {v["video_id"]: v["t_birth"] for v in rep["videos"]}
    if (root / "per_video.csv").exists():
        written.append(plot_err_bars(root / "per_video.csv", figs / f"err_bars.{fmt}"))
    if (root / "fpr.csv").exists():
        written.append(plot_fpr(root / "fpr.csv", figs / f"fpr.{fmt}"))
    for scores in sorted((root / "scores").glob("*.csv")):
        tb = births.get(scores.stem)
        written.append(plot_score_trace(scores, figs / f"scores_{scores.stem}.{fmt}", tb, gamma,
                                        span if tb is not None else None, scores.stem))
    return written
