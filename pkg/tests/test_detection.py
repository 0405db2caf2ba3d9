import json

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from tobdetect.detection import (DetectorConfig, ScoreSeries, StageError, detect, estimate_tob, fir_smooth,
                                 score_video, write_estimate)
from tobdetect.scoring import BlobScorer, ContractViolation, Scorer
from tobdetect.simulator import SceneSpec, simulate


def series(values, t_start=3.0, stride=1.0):
    return ScoreSeries(t_start, stride, np.asarray(values, dtype=np.float64))


def direct_sum(raw, K):
    """Mean over the available samples y(t), ..., y(t-K+1)."""
    out = []
    for i in range(len(raw)):
        window = raw[max(0, i - K + 1): i + 1]
        out.append(sum(window) / len(window))
    return np.array(out)


def test_k1_is_identity(rng):
    s = series(rng.random(40))
    assert np.array_equal(fir_smooth(s, 1).filtered, s.raw)


def test_moving_average_example():
    f = fir_smooth(series([0, 0, 0.9, 0.9, 0.9]), 3).filtered
    assert f[2:] == pytest.approx([0.3, 0.6, 0.9], abs=1e-12)
    assert f[:2] == pytest.approx([0.0, 0.0])


def test_startup_policies():
    raw = [0.6, 0.9, 0.3, 0.0]
    avail = fir_smooth(series(raw), 3, "available").filtered
    assert avail == pytest.approx([0.6, 0.75, 0.6, 0.4])
    skip = fir_smooth(series(raw), 3, "skip").filtered
    assert skip == pytest.approx([0.0, 0.0, 0.6, 0.4])
    with pytest.raises(ValueError):
        fir_smooth(series(raw), 3, "pad")
    with pytest.raises(ValueError):
        fir_smooth(series(raw), 0)


@settings(max_examples=100)
@given(st.lists(st.floats(0, 1), min_size=1, max_size=60), st.integers(1, 7))
def test_matches_direct_sum(values, K):
    f = fir_smooth(series(values), K).filtered
    assert np.max(np.abs(f - direct_sum(values, K))) < 1e-12
    assert f.min() >= min(values) and f.max() <= max(values)


def test_empty_series():
    assert fir_smooth(series([]), 3).filtered.size == 0
    assert estimate_tob(fir_smooth(series([]), 3)).t_hat is None


def test_estimate_examples():
    f = np.zeros(300)
    f[97:] = 0.95            # grid time 3 + 97 = 100
    s = ScoreSeries(3.0, 1.0, f, f)
    assert estimate_tob(s, 0.9).t_hat == 100.0
    assert estimate_tob(ScoreSeries(3.0, 1.0, f * 0.5, f * 0.5), 0.9).t_hat is None
    g = np.zeros(300)
    g[92] = g[197] = 1.0     # crossings at t = 95 and 200
    assert estimate_tob(ScoreSeries(3.0, 1.0, g, g), 0.9).t_hat == 95.0


def test_estimate_preconditions():
    with pytest.raises(ValueError):
        estimate_tob(series([0.5]))
    s = fir_smooth(series([0.5]), 1)
    with pytest.raises(ValueError):
        estimate_tob(s, 0.0)
    with pytest.raises(ValueError):
        estimate_tob(s, 1.5)


@settings(max_examples=100)
@given(st.lists(st.floats(0, 1), min_size=1, max_size=50), st.floats(0.01, 1), st.floats(0.01, 1))
def test_monotone_in_gamma(values, g1, g2):
    g1, g2 = sorted((g1, g2))
    s = fir_smooth(series(values), 3)
    a, b = estimate_tob(s, g1).t_hat, estimate_tob(s, g2).t_hat
    a = np.inf if a is None else a
    b = np.inf if b is None else b
    assert a <= b


@given(st.lists(st.floats(0, 1), min_size=1, max_size=50), st.floats(0.01, 1))
def test_k1_equals_raw_threshold(values, gamma):
    s = series(values)
    hits = [t for t, v in zip(s.times, values) if v >= gamma]
    want = hits[0] if hits else None
    assert estimate_tob(fir_smooth(s, 1), gamma).t_hat == want


def test_estimate_is_grid_point(rng):
    s = fir_smooth(series(rng.random(100), t_start=3.0, stride=0.5), 3)
    t = estimate_tob(s, 0.5).t_hat
    assert t in s.times.tolist()


def test_series_invariants():
    with pytest.raises(ContractViolation):
        series([0.5, 1.2])
    with pytest.raises(ContractViolation):
        series([np.nan])
    with pytest.raises(ValueError):
        ScoreSeries(0.0, 1.0, [0.1, 0.2], [0.1])


def test_series_csv_round_trip(tmp_path, rng):
    s = fir_smooth(series(rng.random(12), t_start=3.0, stride=0.5), 3)
    s.write_csv(tmp_path / "s.csv")
    back = ScoreSeries.read_csv(tmp_path / "s.csv")
    assert back.t_start == 3.0 and back.stride == 0.5
    assert np.array_equal(back.raw, s.raw) and np.array_equal(back.filtered, s.filtered)
    assert (tmp_path / "s.csv").read_text().splitlines()[0] == "t,raw,filtered"


def test_end_to_end_birth_at_60(birth60):
    video, ann = birth60
    est, s = detect(video, BlobScorer())
    assert ann.t_birth == 60
    assert est.t_hat is not None and abs(est.t_hat - 60) <= 2
    assert s.t_start == 3.0 and s.stride == 1.0 and len(s) == 117
    assert (est.gamma, est.filter_k) == (0.9, 3)


def test_end_to_end_no_birth(nobirth):
    est, _ = detect(nobirth[0], BlobScorer())
    assert est.t_hat is None


def test_detect_deterministic(birth60, tmp_path):
    video, _ = birth60
    outs = []
    for k in range(2):
        est, s = detect(video, BlobScorer())
        s.write_csv(tmp_path / f"s{k}.csv")
        write_estimate(est, tmp_path / f"e{k}.json")
        outs.append(((tmp_path / f"s{k}.csv").read_bytes(), (tmp_path / f"e{k}.json").read_bytes()))
    assert outs[0] == outs[1]
    est = json.loads(outs[0][1])
    assert set(est) == {"t_hat", "gamma", "K", "scorer"}
    assert isinstance(est["t_hat"], int)


def test_literal_onset_lags_by_filter_length():
    # with the blob appearing only after t_birth, a causal 3-tap average cannot reach 0.9 before t_birth + 3
    spec = SceneSpec(duration_s=120.0, t_birth=60.0, rng_seed=7, onset="start")
    video, ann = simulate(spec)
    est, _ = detect(video, BlobScorer())
    assert est.t_hat is not None and est.t_hat - ann.t_birth >= 3


class _Broken(Scorer):
    def score(self, clip):
        raise RuntimeError("model exploded")


def test_stage_errors_name_stage(birth60):
    with pytest.raises(StageError) as info:
        detect(birth60[0], _Broken())
    assert info.value.stage == "score"


def test_config_round_trip():
    d = DetectorConfig().to_dict()
    assert (d["F"], d["tau"], d["K"], d["gamma"]) == (25, 1.0, 3, 0.9)


def test_score_video_is_unfiltered(birth60):
    s = score_video(birth60[0], BlobScorer(), DetectorConfig(tau=2.0))
    assert s.filtered is None and s.stride == 2.0
