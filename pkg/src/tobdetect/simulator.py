"""Synthetic thermal birth scenes with known ground truth.

The scene is a ceiling view of a delivery bed: a cool room background, a
bed/clothing region at mid temperature, warm adult skin blobs (the mother
plus ``actor_count - 1`` staff) that drift by a seeded mean-reverting random
walk, and a hotter newborn blob that grows in over ``newborn_emergence_s``
seconds.  ``t_birth`` marks the moment the newborn is fully visible, so the
area ramp covers ``[t_birth - newborn_emergence_s, t_birth]``; set
``onset="start"`` to begin the ramp at ``t_birth`` instead.

Videos are quantized at 0.01 degC per raw unit with zero offset.
"""

from __future__ import annotations

import json
from dataclasses import asdict, dataclass, replace
from fractions import Fraction
from pathlib import Path
from typing import Iterator, List, Optional, Sequence, Tuple

import numpy as np

from .video import (Annotation, MaternalPosition, ThermalVideo, as_fraction,
                    write_annotation, write_trv)

RAW_SCALE = 0.01
RAW_OFFSET = 0.0
DRIFT_STEP_PX = 0.5
DRIFT_REVERSION = 0.05
OCCLUDED_FRACTION = 0.7
WARM_AREA_FRAC = (0.004, 0.0075)


class SceneSpecError(ValueError):
    def __init__(self, field_name, message):
        super().__init__(f"{field_name}: {message}")
        self.field = field_name


@dataclass(frozen=True)
class SceneSpec:
    duration_s: float = 180.0
    resolution: Tuple[int, int] = (63, 84)
    frame_rate: Fraction = Fraction(25, 3)
    background_temp: float = 23.0
    mid_temp: float = 29.0
    skin_temp: float = 34.0
    newborn_temp: float = 37.5
    t_birth: Optional[float] = 90.0
    newborn_emergence_s: float = 3.0
    actor_count: int = 3
    noise_sigma: float = 0.2
    rng_seed: int = 0
    maternal_position: str = "supine"
    occluded: bool = False
    newborn_area_frac: float = 0.025
    onset: str = "visible"
    warm_objects: int = 0
    name: str = ""

    def __post_init__(self):
        object.__setattr__(self, "frame_rate", as_fraction(self.frame_rate))
        object.__setattr__(self, "resolution", tuple(int(v) for v in self.resolution))
        self.validate()

    def validate(self) -> None:
        if self.duration_s <= 0:
            raise SceneSpecError("duration_s", "must be positive")
        h, w = self.resolution
        if h < 8 or w < 8:
            raise SceneSpecError("resolution", f"too small: {h}x{w}")
        if self.frame_rate <= 0:
            raise SceneSpecError("frame_rate", "must be positive")
        if not self.background_temp < self.mid_temp:
            raise SceneSpecError("mid_temp", "must exceed background_temp")
        if not self.mid_temp < self.skin_temp:
            raise SceneSpecError("skin_temp", "must exceed mid_temp")
        if not self.skin_temp <= self.newborn_temp:
            raise SceneSpecError("newborn_temp", "must be >= skin_temp")
        if self.t_birth is not None and not 0 < self.t_birth < self.duration_s:
            raise SceneSpecError("t_birth", f"must lie in (0, {self.duration_s})")
        if self.newborn_emergence_s < 0:
            raise SceneSpecError("newborn_emergence_s", "must be >= 0")
        if self.actor_count < 1:
            raise SceneSpecError("actor_count", "must be >= 1")
        if self.noise_sigma < 0:
            raise SceneSpecError("noise_sigma", "must be >= 0")
        if not 0 <= self.rng_seed < 2**64:
            raise SceneSpecError("rng_seed", "must be a 64-bit unsigned integer")
        if not 0 < self.newborn_area_frac < 0.25:
            raise SceneSpecError("newborn_area_frac", "must be in (0, 0.25)")
        if self.warm_objects < 0:
            raise SceneSpecError("warm_objects", "must be >= 0")
        if self.onset not in ("visible", "start"):
            raise SceneSpecError("onset", "must be 'visible' or 'start'")
        MaternalPosition(self.maternal_position)

    @property
    def n_frames(self) -> int:
        return int(self.frame_rate * Fraction(self.duration_s).limit_denominator(10**6))

    def emergence_window(self) -> Optional[Tuple[float, float]]:
        """(start, end) of the newborn area ramp in seconds."""
        if self.t_birth is None:
            return None
        if self.onset == "start":
            return self.t_birth, self.t_birth + self.newborn_emergence_s
        return self.t_birth - self.newborn_emergence_s, float(self.t_birth)

    def to_dict(self) -> dict:
        d = asdict(self)
        d["frame_rate"] = f"{self.frame_rate.numerator}/{self.frame_rate.denominator}"
        d["resolution"] = list(self.resolution)
        return d

    @classmethod
    def from_dict(cls, d: dict) -> "SceneSpec":
        known = {k: v for k, v in d.items() if k in cls.__dataclass_fields__}
        unknown = set(d) - set(known)
        if unknown:
            raise SceneSpecError(sorted(unknown)[0], "unknown SceneSpec field")
        return cls(**known)


@dataclass
class _Blob:
    cy: float
    cx: float
    ry: float
    rx: float
    home: Tuple[float, float] = (0.0, 0.0)

    def __post_init__(self):
        self.home = (self.cy, self.cx)


# Layout templates in fractions of (H, W): bed box, skin blobs (cy, cx, ry, rx),
# newborn centre and its aspect (ry / rx).
_LAYOUTS = {
    "supine": dict(
        bed=(0.10, 0.30, 0.95, 0.70),
        mother=[(0.22, 0.50, 0.08, 0.07), (0.62, 0.42, 0.14, 0.045), (0.62, 0.58, 0.14, 0.045)],
        staff=[(0.78, 0.15, 0.07, 0.06), (0.45, 0.86, 0.07, 0.06), (0.15, 0.15, 0.07, 0.06)],
        newborn=(0.85, 0.50), aspect=1.4),
    "side_lying": dict(
        bed=(0.25, 0.05, 0.85, 0.95),
        mother=[(0.50, 0.15, 0.07, 0.06), (0.45, 0.62, 0.05, 0.16), (0.60, 0.62, 0.05, 0.16)],
        staff=[(0.12, 0.50, 0.07, 0.06), (0.90, 0.30, 0.07, 0.06), (0.12, 0.85, 0.07, 0.06)],
        newborn=(0.53, 0.85), aspect=0.7),
    "hands_and_knees": dict(
        bed=(0.10, 0.30, 0.95, 0.70),
        mother=[(0.25, 0.50, 0.07, 0.06), (0.70, 0.40, 0.10, 0.045), (0.70, 0.60, 0.10, 0.045)],
        staff=[(0.78, 0.15, 0.07, 0.06), (0.45, 0.86, 0.07, 0.06), (0.15, 0.15, 0.07, 0.06)],
        newborn=(0.60, 0.50), aspect=1.4),
}
_LAYOUTS["unknown"] = _LAYOUTS["supine"]


def _ellipse_mask(yy, xx, cy, cx, ry, rx):
    if ry <= 0 or rx <= 0:
        return np.zeros(yy.shape, dtype=bool)
    return ((yy - cy) / ry) ** 2 + ((xx - cx) / rx) ** 2 <= 1.0


def newborn_geometry(spec: SceneSpec) -> Tuple[float, float, float, float]:
    """Centre and full radii (cy, cx, ry, rx) of the newborn blob in pixels."""
    h, w = spec.resolution
    layout = _LAYOUTS[spec.maternal_position]
    area = spec.newborn_area_frac * h * w
    aspect = layout["aspect"]
    rx = np.sqrt(area / (np.pi * aspect))
    cy, cx = layout["newborn"]
    return cy * (h - 1), cx * (w - 1), rx * aspect, rx


def newborn_mask(spec: SceneSpec) -> np.ndarray:
    """Boolean mask of the fully grown newborn region (before any occlusion)."""
    h, w = spec.resolution
    yy, xx = np.mgrid[0:h, 0:w].astype(np.float64)
    cy, cx, ry, rx = newborn_geometry(spec)
    return _ellipse_mask(yy, xx, cy, cx, ry, rx)


def _occluder(spec: SceneSpec, full: np.ndarray) -> np.ndarray:
    """Rows covering OCCLUDED_FRACTION of the newborn, from the top down."""
    rows = full.sum(axis=1)
    cum = np.cumsum(rows) / max(rows.sum(), 1)
    last = int(np.searchsorted(cum, OCCLUDED_FRACTION))
    occ = np.zeros_like(full)
    cols = np.flatnonzero(full.any(axis=0))
    if cols.size:
        occ[: last + 1, max(cols[0] - 1, 0): cols[-1] + 2] = True
    return occ


@dataclass(frozen=True)
class WarmObject:
    """A small object at newborn temperature that appears for a while (towel, warmed kit)."""

    t_on: float
    t_off: float
    cy: float
    cx: float
    r: float


def warm_objects(spec: SceneSpec) -> List[WarmObject]:
    """Distractor placements, drawn from a stream separate from the pixel noise.

    Objects keep clear of the newborn region and of ``t_birth +/- 15 s``.
    """
    if spec.warm_objects == 0:
        return []
    rng = np.random.default_rng([spec.rng_seed, 1])
    h, w = spec.resolution
    cy, cx, ry, rx = newborn_geometry(spec)
    objs = []
    tries = 0
    while len(objs) < spec.warm_objects and tries < 1000:
        tries += 1
        area = rng.uniform(WARM_AREA_FRAC[0], WARM_AREA_FRAC[1]) * h * w
        r = np.sqrt(area / np.pi)
        oy, ox = rng.uniform(r + 1, h - r - 2), rng.uniform(r + 1, w - r - 2)
        t_on = rng.uniform(0.0, spec.duration_s - 10.0)
        t_off = t_on + rng.uniform(8.0, 30.0)
        if np.hypot(oy - cy, ox - cx) < max(ry, rx) + r + 3:
            continue
        if spec.t_birth is not None and t_on < spec.t_birth + 15 and t_off > spec.t_birth - 15:
            continue
        objs.append(WarmObject(t_on, t_off, oy, ox, r))
    return objs


def area_fraction(spec: SceneSpec, t: float) -> float:
    """Fraction of the full newborn area visible (before occlusion) at time t."""
    window = spec.emergence_window()
    if window is None:
        return 0.0
    start, end = window
    if t <= start:
        return 0.0
    if end <= start or t >= end:
        return 1.0
    return (t - start) / (end - start)


def clean_frames(spec: SceneSpec) -> Iterator[Tuple[np.ndarray, np.ndarray]]:
    """Yield the noiseless scene (deg C) and the adult-skin mask for every frame."""
    spec.validate()
    h, w = spec.resolution
    n = spec.n_frames
    if n < 1:
        raise SceneSpecError("duration_s", "shorter than one frame")
    rng = np.random.default_rng([spec.rng_seed, 0])
    layout = _LAYOUTS[spec.maternal_position]
    yy, xx = np.mgrid[0:h, 0:w].astype(np.float64)

    base = np.full((h, w), spec.background_temp)
    b0, b1, b2, b3 = layout["bed"]
    base[int(b0 * h): int(np.ceil(b2 * h)), int(b1 * w): int(np.ceil(b3 * w))] = spec.mid_temp

    def scaled(p):
        return _Blob(p[0] * (h - 1), p[1] * (w - 1), p[2] * h, p[3] * w)

    mother = [scaled(p) for p in layout["mother"]]
    staff = [scaled(layout["staff"][i % len(layout["staff"])]) for i in range(spec.actor_count - 1)]
    movers = [mother[0]] + staff  # mother's head drifts; limbs stay put
    static_skin = np.zeros((h, w), dtype=bool)
    for b in mother[1:]:
        static_skin |= _ellipse_mask(yy, xx, b.cy, b.cx, b.ry, b.rx)

    full_nb = newborn_mask(spec)
    nb_cy, nb_cx, nb_ry, nb_rx = newborn_geometry(spec)
    occ = _occluder(spec, full_nb) if spec.occluded else None

    distractors = [(o, _ellipse_mask(yy, xx, o.cy, o.cx, o.r, o.r)) for o in warm_objects(spec)]

    drift = rng.normal(0.0, DRIFT_STEP_PX, size=(n, len(movers), 2))
    fr = spec.frame_rate
    for k in range(n):
        t = float(k / fr)
        scene = base.copy()
        skin = static_skin.copy()
        for j, b in enumerate(movers):
            b.cy += DRIFT_REVERSION * (b.home[0] - b.cy) + drift[k, j, 0]
            b.cx += DRIFT_REVERSION * (b.home[1] - b.cx) + drift[k, j, 1]
            skin |= _ellipse_mask(yy, xx, b.cy, b.cx, b.ry, b.rx)
        scene[skin] = spec.skin_temp
        frac = area_fraction(spec, t)
        if frac > 0:
            s = np.sqrt(frac)
            nb = _ellipse_mask(yy, xx, nb_cy, nb_cx, nb_ry * s, nb_rx * s)
            scene[nb] = np.maximum(scene[nb], spec.newborn_temp)
        for o, mask in distractors:
            if o.t_on <= t < o.t_off:
                scene[mask] = spec.newborn_temp
        if occ is not None:
            scene[occ] = np.where(skin[occ], spec.skin_temp, spec.mid_temp)
        yield scene, skin


def simulate(spec: SceneSpec) -> Tuple[ThermalVideo, Annotation]:
    """Render the scene described by ``spec``; deterministic in ``spec.rng_seed``."""
    spec.validate()
    h, w = spec.resolution
    noise = np.random.default_rng([spec.rng_seed, 2])
    frames = np.empty((max(spec.n_frames, 0), h, w), dtype=np.uint16)
    for k, (scene, _) in enumerate(clean_frames(spec)):
        if spec.noise_sigma > 0:
            scene = scene + noise.normal(0.0, spec.noise_sigma, size=(h, w))
        frames[k] = np.clip(np.rint((scene - RAW_OFFSET) / RAW_SCALE), 0, 0xFFFF).astype(np.uint16)

    video = ThermalVideo(frames, spec.frame_rate, RAW_SCALE, RAW_OFFSET, spec.name or f"sim-{spec.rng_seed}")
    t_ann = None if spec.t_birth is None else int(np.floor(spec.t_birth))
    return video, Annotation(t_ann, spec.maternal_position)


def simulate_batch(specs: Sequence[SceneSpec], out_dir) -> Path:
    """Write one ``.trv`` + annotation sidecar per spec and a ``manifest.json``."""
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    entries = []
    for i, spec in enumerate(specs):
        name = spec.name or f"video_{i:03d}"
        video, ann = simulate(replace(spec, name=name))
        trv, side = out / f"{name}.trv", out / f"{name}.json"
        try:
            write_trv(video, trv)
            write_annotation(ann, side)
        except OSError as exc:
            raise OSError(f"{trv}: {exc}") from exc
        entries.append({
            "file": trv.name,
            "annotation": side.name,
            "seed": spec.rng_seed,
            "t_birth": ann.t_birth,
            "maternal_position": ann.maternal_position.value,
            "occluded": spec.occluded,
        })
    manifest = out / "manifest.json"
    manifest.write_text(json.dumps(entries, indent=2) + "\n")
    return manifest


def read_manifest(path) -> List[dict]:
    """Load a batch manifest; entries gain an absolute ``path`` and ``annotation_path``."""
    path = Path(path)
    entries = json.loads(path.read_text())
    for e in entries:
        e["path"] = str(path.parent / e["file"])
        e["annotation_path"] = str(path.parent / e["annotation"])
    return entries


def acceptance_batch(seed: int = 20250) -> List[SceneSpec]:
    """The fixed 20-video batch used by the end-to-end acceptance run.

    15 births (supine, side-lying, low-noise), 3 without a birth and 2
    occluded hands-and-knees births.  Each scene carries two transient warm
    distractors so the false-positive sweep has something to count.
    """
    rng = np.random.default_rng(seed)
    seeds = rng.integers(0, 2**63, size=20)
    births = rng.integers(40, 150, size=20)
    specs = []
    plan = ([("supine", 0.2, False, True)] * 6 + [("side_lying", 0.2, False, True)] * 5
            + [("supine", 0.05, False, True)] * 2 + [("side_lying", 0.05, False, True)] * 2
            + [("supine", 0.2, False, False)] * 3 + [("hands_and_knees", 0.2, True, True)] * 2)
    for i, (position, sigma, occluded, birth) in enumerate(plan):
        kind = "nobirth" if not birth else ("occluded" if occluded else position)
        specs.append(SceneSpec(
            t_birth=float(births[i]) if birth else None,
            noise_sigma=sigma,
            rng_seed=int(seeds[i]),
            maternal_position=position,
            occluded=occluded,
            warm_objects=2,
            name=f"acc_{i:02d}_{kind}",
        ))
    return specs
