"""Time-of-birth detection in single-channel thermal video.

Pipeline: GMM normalization -> sliding clip windows -> clip scorer ->
FIR smoothing -> first threshold crossing.  A synthetic scene simulator
provides videos with known birth times for end-to-end checks.
"""

__version__ = "0.1.0"

from .video import (Annotation, MaternalPosition, NormalizedVideo, ThermalVideo, celsius_frame,
                    read_annotation, read_trv, write_annotation, write_trv)
from .normalization import (GmmFit, NormalizationConfig, NormalizationParams, apply, fit_gmm3,
                            normalize, sample_intensities, select_range)
from .clipper import ClipWindow, DatasetConfig, DatasetManifest, augment, build_dataset, clip_at, sample_clips
from .scoring import BlobScorer, ExternalScorer, LogisticParams, LogisticScorer, extract_features, \
    train_logistic, weighted_bce
from .detection import DetectorConfig, ScoreSeries, ToBEstimate, detect, estimate_tob, fir_smooth
from .evaluation import ConfusionCounts, ErrStats, classify_metrics, err_stats, eval_run, sweep_thresholds
from .simulator import SceneSpec, acceptance_batch, simulate, simulate_batch
