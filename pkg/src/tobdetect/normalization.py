"""Adaptive GMM normalization of thermal video.

A three-component 1-D Gaussian mixture is fitted to temperatures sampled
from the whole video (background / bedding+clothes / skin).  The warmest
plausible component gives the reference skin temperature ``mu_hat``; the
video is clipped to ``[mu_hat - below, mu_hat + above]`` and rescaled to
[0, 1].
"""

from __future__ import annotations

import logging
from dataclasses import asdict, dataclass, field
from fractions import Fraction
from typing import Optional, Tuple

import numpy as np
from scipy.special import logsumexp

from .video import NormalizedVideo, ThermalVideo

log = logging.getLogger(__name__)

N_COMPONENTS = 3
VARIANCE_FLOOR = 1e-4
LOG_2PI = np.log(2.0 * np.pi)


class DegenerateFitError(ValueError):
    """Too few distinct samples to fit three components.

    Callers should fall back to ``NormalizationConfig.default_mu`` (see
    :func:`normalize`).
    """


@dataclass(frozen=True)
class GmmFit:
    weights: Tuple[float, ...]
    means: Tuple[float, ...]
    variances: Tuple[float, ...]
    log_likelihood: float
    iterations: int
    converged: bool
    # per-iteration total log-likelihood, kept for monotonicity checks
    ll_history: Tuple[float, ...] = field(default=(), repr=False)

    def to_dict(self) -> dict:
        d = asdict(self)
        d.pop("ll_history")
        for k in ("weights", "means", "variances"):
            d[k] = list(d[k])
        return d


@dataclass(frozen=True)
class NormalizationConfig:
    period_s: float = 30.0
    plausible_lo: float = 28.0
    plausible_hi: float = 42.0
    default_mu: float = 34.0
    below: float = 8.0
    above: float = 4.0
    max_iter: int = 500
    tol: float = 1e-6
    n_init: int = 3


@dataclass(frozen=True)
class NormalizationParams:
    mu_hat: float
    lo: float
    hi: float
    fallback_used: bool = False
    gmm: Optional[GmmFit] = None

    def __post_init__(self):
        if not (self.lo < self.hi and self.lo <= self.mu_hat <= self.hi):
            raise ValueError(f"invalid range lo={self.lo} mu_hat={self.mu_hat} hi={self.hi}")

    def to_dict(self) -> dict:
        return {
            "mu_hat": self.mu_hat,
            "lo": self.lo,
            "hi": self.hi,
            "fallback_used": self.fallback_used,
            "gmm": self.gmm.to_dict() if self.gmm is not None else None,
        }


def sample_intensities(video: ThermalVideo, period_s: float = 30.0) -> np.ndarray:
    """All pixels (in degrees C) of the frames at t = 0, period, 2*period, ..."""
    if period_s <= 0:
        raise ValueError("period_s must be positive")
    period = Fraction(period_s).limit_denominator(10**6) if isinstance(period_s, float) else Fraction(period_s)
    idx = []
    k = 0
    while True:
        n = int(video.frame_rate * period * k)  # floor for non-negative Fractions
        if n >= video.n_frames:
            break
        idx.append(n)
        k += 1
    return video.celsius(video.frames[idx]).ravel()


def _kmeanspp(x: np.ndarray, k: int, rng: np.random.Generator) -> np.ndarray:
    centers = [x[rng.integers(x.size)]]
    d2 = (x - centers[0]) ** 2
    for _ in range(1, k):
        total = d2.sum()
        if total <= 0:
            centers.append(x[rng.integers(x.size)])
        else:
            centers.append(x[rng.choice(x.size, p=d2 / total)])
        d2 = np.minimum(d2, (x - centers[-1]) ** 2)
    return np.asarray(centers, dtype=np.float64)


def _init_params(x: np.ndarray, rng: np.random.Generator):
    centers = np.sort(_kmeanspp(x, N_COMPONENTS, rng))
    # one Lloyd pass
    assign = np.argmin(np.abs(x[:, None] - centers[None, :]), axis=1)
    means = centers.copy()
    variances = np.full(N_COMPONENTS, max(x.var(), VARIANCE_FLOOR))
    weights = np.full(N_COMPONENTS, 1.0 / N_COMPONENTS)
    for j in range(N_COMPONENTS):
        members = x[assign == j]
        if members.size:
            means[j] = members.mean()
            weights[j] = members.size / x.size
            if members.size > 1:
                variances[j] = max(members.var(), VARIANCE_FLOOR)
    weights = np.maximum(weights, 1e-3)
    return weights / weights.sum(), means, variances


def _log_joint(x, weights, means, variances):
    return (np.log(weights)[None, :]
            - 0.5 * (LOG_2PI + np.log(variances))[None, :]
            - 0.5 * (x[:, None] - means[None, :]) ** 2 / variances[None, :])


def responsibilities(x, weights, means, variances) -> np.ndarray:
    lj = _log_joint(np.asarray(x, dtype=np.float64), np.asarray(weights), np.asarray(means), np.asarray(variances))
    return np.exp(lj - logsumexp(lj, axis=1, keepdims=True))


def _em(x, weights, means, variances, max_iter, tol):
    lj = _log_joint(x, weights, means, variances)
    norm = logsumexp(lj, axis=1, keepdims=True)
    ll = float(norm.sum())
    history = [ll]
    converged = False
    it = 0
    while it < max_iter:
        it += 1
        resp = np.exp(lj - norm)
        nk = np.maximum(resp.sum(axis=0), 10 * np.finfo(float).tiny)
        weights = nk / x.size
        means = (resp * x[:, None]).sum(axis=0) / nk
        variances = np.maximum((resp * (x[:, None] - means) ** 2).sum(axis=0) / nk, VARIANCE_FLOOR)
        lj = _log_joint(x, weights, means, variances)
        norm = logsumexp(lj, axis=1, keepdims=True)
        new_ll = float(norm.sum())
        history.append(new_ll)
        improvement = (new_ll - ll) / abs(ll) if ll != 0 else abs(new_ll - ll)
        ll = new_ll
        if improvement < tol:
            converged = True
            break
    return weights, means, variances, ll, it, converged, history


def fit_gmm3(samples, seed: int = 0, max_iter: int = 500, tol: float = 1e-6, n_init: int = 3) -> GmmFit:
    """Fit a 3-component 1-D Gaussian mixture by EM.

    Each of ``n_init`` starts uses k-means++ seeding plus one Lloyd pass; the
    start with the highest final log-likelihood wins.  Deterministic for a
    given ``(samples, seed)``.  Means are returned in ascending order.
    """
    x = np.asarray(samples, dtype=np.float64).ravel()
    if x.size < 30:
        raise DegenerateFitError(f"need at least 30 samples, got {x.size}")
    if np.unique(x).size < N_COMPONENTS:
        raise DegenerateFitError("fewer than 3 distinct sample values; use the default mu_hat fallback")
    if not np.all(np.isfinite(x)):
        raise ValueError("samples must be finite")
    rng = np.random.default_rng(seed)
    best = None
    for _ in range(max(1, n_init)):
        result = _em(x, *_init_params(x, rng), max_iter, tol)
        if best is None or result[3] > best[3]:
            best = result
    weights, means, variances, ll, it, converged, history = best
    order = np.argsort(means, kind="stable")
    weights = weights[order] / weights.sum()
    return GmmFit(tuple(float(v) for v in weights), tuple(float(v) for v in means[order]),
                  tuple(float(v) for v in variances[order]), ll, it, converged, tuple(history))


def select_range(fit: Optional[GmmFit], config: NormalizationConfig = NormalizationConfig()) -> NormalizationParams:
    """Pick the warmest component mean inside the plausible skin window.

    Falls through to cooler components, then to ``config.default_mu``.
    """
    mu_hat, fallback = None, True
    if fit is not None:
        for rank, mu in enumerate(sorted(fit.means, reverse=True)):
            if config.plausible_lo <= mu <= config.plausible_hi:
                mu_hat, fallback = mu, rank > 0
                break
    if mu_hat is None:
        mu_hat, fallback = config.default_mu, True
    return NormalizationParams(mu_hat, mu_hat - config.below, mu_hat + config.above, fallback, fit)


def apply(video: ThermalVideo, params: NormalizationParams) -> NormalizedVideo:
    """Clip temperatures to ``[lo, hi]`` and map linearly onto [0, 1]."""
    span = params.hi - params.lo
    out = np.empty(video.frames.shape, dtype=np.float32)
    # frame-by-frame to bound temporary float64 memory
    for n in range(video.n_frames):
        c = video.celsius(video.frames[n])
        out[n] = (np.clip(c, params.lo, params.hi) - params.lo) / span
    return NormalizedVideo(out, video.frame_rate, params, video.source_id)


def normalize(video: ThermalVideo, seed: int = 0,
              config: NormalizationConfig = NormalizationConfig()) -> NormalizedVideo:
    """Sample, fit, select and apply in one call; degenerate videos use the default range."""
    samples = sample_intensities(video, config.period_s)
    try:
        fit = fit_gmm3(samples, seed, config.max_iter, config.tol, config.n_init)
    except DegenerateFitError as exc:
        log.warning("%s: degenerate GMM input (%s); using default mu_hat=%.1f",
                    video.source_id or "video", exc, config.default_mu)
        fit = None
    return apply(video, select_range(fit, config))


def max_min_normalize(video: ThermalVideo) -> NormalizedVideo:
    """Per-video max-min rescale, kept for visual comparison with the GMM variant."""
    c = video.celsius(video.frames)
    lo, hi = float(c.min()), float(c.max())
    span = hi - lo if hi > lo else 1.0
    return NormalizedVideo((c - lo) / span, video.frame_rate, None, video.source_id)
