"""Run configuration: one flat, serializable record of every pipeline knob.

Precedence when building a run: command-line flags > config file > defaults.
The merged result is written next to every run's outputs as
``run_config.json``.
"""

from __future__ import annotations

import json
from dataclasses import asdict, dataclass, fields
from pathlib import Path
from typing import List, Optional

from .clipper import DatasetConfig
from .detection import DetectorConfig
from .normalization import NormalizationConfig


@dataclass
class RunConfig:
    command: str = ""
    seed: int = 0
    threads: int = 1
    # paths
    input: Optional[str] = None
    manifest: Optional[str] = None
    dataset: Optional[str] = None
    scores: Optional[str] = None
    out: Optional[str] = None
    # simulation
    preset: Optional[str] = None
    batch: Optional[str] = None
    # normalization
    period_s: float = 30.0
    plausible_lo: float = 28.0
    plausible_hi: float = 42.0
    default_mu: float = 34.0
    range_below: float = 8.0
    range_above: float = 4.0
    gmm_max_iter: int = 500
    gmm_tol: float = 1e-6
    gmm_n_init: int = 3
    # inference
    F: int = 25
    tau: float = 1.0
    K: int = 3
    gamma: float = 0.9
    startup: str = "available"
    # scorers
    scorer: str = "blob"
    scorer_params: Optional[str] = None
    external_cmd: Optional[str] = None
    blob_alpha: float = 400.0
    blob_beta: float = 200.0
    blob_bias: float = 4.0
    hot_threshold: float = 0.85
    # dataset / training
    train_F: int = 37
    tau_tob: float = 0.5
    nb_period: float = 30.0
    guard: float = 1.0
    nb_exclusion: float = 30.0
    epochs: int = 500
    lr: float = 0.5
    augment: bool = False
    # evaluation
    fpr_window: float = 10.0
    gammas: Optional[List[float]] = None
    figures: bool = True
    figure_format: str = "svg"

    @classmethod
    def field_names(cls) -> List[str]:
        return [f.name for f in fields(cls)]

    @classmethod
    def load(cls, path) -> "RunConfig":
        data = json.loads(Path(path).read_text())
        unknown = set(data) - set(cls.field_names())
        if unknown:
            raise ValueError(f"{path}: unknown config keys {sorted(unknown)}")
        return cls(**data)

    def merged(self, overrides: dict) -> "RunConfig":
        data = asdict(self)
        data.update({k: v for k, v in overrides.items() if k in data})
        return RunConfig(**data)

    def to_dict(self) -> dict:
        return asdict(self)

    def save(self, path) -> None:
        Path(path).write_text(json.dumps(self.to_dict(), indent=2, sort_keys=True) + "\n")

    def normalization(self) -> NormalizationConfig:
        return NormalizationConfig(self.period_s, self.plausible_lo, self.plausible_hi, self.default_mu,
                                   self.range_below, self.range_above, self.gmm_max_iter, self.gmm_tol,
                                   self.gmm_n_init)

    def detector(self) -> DetectorConfig:
        return DetectorConfig(self.F, self.tau, self.K, self.gamma, self.startup, self.seed,
                              self.normalization())

    def dataset_config(self) -> DatasetConfig:
        return DatasetConfig(self.train_F, self.tau_tob, self.nb_period, self.guard, self.nb_exclusion)
