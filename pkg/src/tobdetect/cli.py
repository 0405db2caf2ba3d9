"""``tobdetect`` command line.

Exit codes: 0 success, 1 failure or partial failure, 2 usage error.
Every run writes ``run_config.json`` and ``run.log`` into its output dir.
"""

from __future__ import annotations

import argparse
import difflib
import json
import logging
import platform
import sys
from pathlib import Path
from typing import Dict, List, Optional

import numpy as np

from . import __version__
from .config import RunConfig

log = logging.getLogger("tobdetect")

COMMANDS = ("simulate", "normalize", "build-dataset", "train", "score", "detect", "eval", "sweep", "plot")


class UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        self.exit(2, f"{self.prog}: error: {message}\n")


def _common(p: argparse.ArgumentParser) -> None:
    S = argparse.SUPPRESS
    p.add_argument("--config", help="JSON run config; flags override it")
    p.add_argument("--out", default=S, help="output directory")
    p.add_argument("--seed", type=int, default=S, help="seed for every stochastic stage")
    p.add_argument("--threads", type=int, default=S, help="cap on parallel workers")
    p.add_argument("-v", "--verbose", action="store_true")


def _norm_flags(p):
    S = argparse.SUPPRESS
    p.add_argument("--period-s", dest="period_s", type=float, default=S, help="GMM sampling period (s)")
    p.add_argument("--plausible-lo", dest="plausible_lo", type=float, default=S)
    p.add_argument("--plausible-hi", dest="plausible_hi", type=float, default=S)
    p.add_argument("--default-mu", dest="default_mu", type=float, default=S)
    p.add_argument("--range-below", dest="range_below", type=float, default=S)
    p.add_argument("--range-above", dest="range_above", type=float, default=S)
    p.add_argument("--gmm-n-init", dest="gmm_n_init", type=int, default=S)


def _detect_flags(p):
    S = argparse.SUPPRESS
    p.add_argument("--scorer", choices=("blob", "logistic", "external"), default=S)
    p.add_argument("--scorer-params", dest="scorer_params", default=S, help="logistic params JSON")
    p.add_argument("--external-cmd", dest="external_cmd", default=S, help="command for the external scorer")
    p.add_argument("--F", dest="F", type=int, default=S, help="frames per clip (default 25)")
    p.add_argument("--tau", type=float, default=S, help="stride in seconds (default 1)")
    p.add_argument("--K", dest="K", type=int, default=S, help="FIR length (default 3)")
    p.add_argument("--gamma", type=float, default=S, help="confidence threshold (default 0.9)")
    p.add_argument("--startup", choices=("available", "skip"), default=S)
    p.add_argument("--hot-threshold", dest="hot_threshold", type=float, default=S)
    p.add_argument("--blob-alpha", dest="blob_alpha", type=float, default=S)
    p.add_argument("--blob-beta", dest="blob_beta", type=float, default=S)
    p.add_argument("--blob-bias", dest="blob_bias", type=float, default=S)
    _norm_flags(p)


def _dataset_flags(p):
    S = argparse.SUPPRESS
    p.add_argument("--F", dest="train_F", type=int, default=S, help="frames per training clip (default 37)")
    p.add_argument("--tau-tob", dest="tau_tob", type=float, default=S)
    p.add_argument("--nb-period", dest="nb_period", type=float, default=S)
    p.add_argument("--guard", type=float, default=S)
    p.add_argument("--nb-exclusion", dest="nb_exclusion", type=float, default=S)
    _norm_flags(p)


def build_parser():
    S = argparse.SUPPRESS
    parser = _Parser(prog="tobdetect", description="Time-of-birth detection in thermal video.")
    parser.add_argument("--version", action="version", version=f"tobdetect {__version__}")
    sub = parser.add_subparsers(dest="command", parser_class=_Parser)
    subs: Dict[str, argparse.ArgumentParser] = {}

    p = subs["simulate"] = sub.add_parser("simulate", help="generate synthetic thermal birth videos")
    _common(p)
    p.add_argument("--batch", default=S, help="JSON list of scene specs")
    p.add_argument("--preset", choices=("acceptance",), default=S, help="built-in batch")

    p = subs["normalize"] = sub.add_parser("normalize", help="GMM-normalize a TRV1 video")
    _common(p)
    p.add_argument("input", nargs="?", default=S)
    _norm_flags(p)

    p = subs["build-dataset"] = sub.add_parser("build-dataset", help="label training clips")
    _common(p)
    p.add_argument("--manifest", default=S, help="video manifest from `simulate`")
    _dataset_flags(p)

    p = subs["train"] = sub.add_parser("train", help="fit the logistic scorer")
    _common(p)
    p.add_argument("--dataset", default=S, help="dataset.json from `build-dataset`")
    p.add_argument("--epochs", type=int, default=S)
    p.add_argument("--lr", type=float, default=S)
    p.add_argument("--augment", action="store_true", default=S)
    p.add_argument("--hot-threshold", dest="hot_threshold", type=float, default=S)

    for name, text in (("score", "score every clip of a video"), ("detect", "estimate the time of birth")):
        p = subs[name] = sub.add_parser(name, help=text)
        _common(p)
        p.add_argument("input", nargs="?", default=S, help="TRV1 video")
        _detect_flags(p)

    p = subs["eval"] = sub.add_parser("eval", help="evaluate detection over a video manifest")
    _common(p)
    p.add_argument("--manifest", default=S)
    p.add_argument("--fpr-window", dest="fpr_window", type=float, default=S)
    p.add_argument("--gammas", type=_float_list, default=S, help="comma-separated thresholds")
    p.add_argument("--no-figures", dest="figures", action="store_false", default=S)
    p.add_argument("--figure-format", dest="figure_format", choices=("svg", "png", "pdf"), default=S)
    _detect_flags(p)

    p = subs["sweep"] = sub.add_parser("sweep", help="FPR table from stored score CSVs")
    _common(p)
    p.add_argument("--manifest", default=S)
    p.add_argument("--scores", default=S, help="directory of <video>.csv score files")
    p.add_argument("--gammas", type=_float_list, default=S)
    p.add_argument("--K", dest="K", type=int, default=S)
    p.add_argument("--startup", choices=("available", "skip"), default=S)
    p.add_argument("--fpr-window", dest="fpr_window", type=float, default=S)

    p = subs["plot"] = sub.add_parser("plot", help="render figures from an eval directory")
    _common(p)
    p.add_argument("input", nargs="?", default=S, help="eval output directory")
    p.add_argument("--figure-format", dest="figure_format", choices=("svg", "png", "pdf"), default=S)
    return parser, subs


def _float_list(text: str) -> List[float]:
    try:
        return [float(v) for v in text.split(",") if v.strip()]
    except ValueError:
        raise argparse.ArgumentTypeError(f"not a comma-separated list of numbers: {text!r}")


def parse(argv):
    parser, subs = build_parser()
    args, extra = parser.parse_known_args(argv)
    if args.command is None:
        parser.print_help(sys.stderr)
        parser.exit(2)
    if extra:
        sp = subs[args.command]
        options = [o for a in sp._actions for o in a.option_strings]
        hints = []
        for e in extra:
            close = difflib.get_close_matches(e.split("=")[0], options, n=1)
            hints.append(f"{e} (did you mean {close[0]}?)" if close else e)
        sp.error("unrecognized arguments: " + ", ".join(hints))
    return args


def resolve_config(args) -> RunConfig:
    base = RunConfig.load(args.config) if getattr(args, "config", None) else RunConfig()
    flags = {k: v for k, v in vars(args).items() if k not in ("config", "verbose")}
    cfg = base.merged(flags)
    cfg.command = args.command
    if cfg.out is None:
        cfg.out = str(Path("runs") / args.command)
    return cfg


def _setup_logging(out: Path, verbose: bool) -> None:
    root = logging.getLogger()
    for h in list(root.handlers):
        if getattr(h, "_tobdetect", False):
            root.removeHandler(h)
    root.setLevel(logging.DEBUG if verbose else logging.INFO)
    fh = logging.FileHandler(out / "run.log", mode="w")
    fh.setFormatter(logging.Formatter("%(asctime)s %(levelname)s %(name)s: %(message)s"))
    fh._tobdetect = True
    sh = logging.StreamHandler(sys.stderr)
    sh.setLevel(logging.DEBUG if verbose else logging.WARNING)
    sh.setFormatter(logging.Formatter("%(levelname)s: %(message)s"))
    sh._tobdetect = True
    root.addHandler(fh)
    root.addHandler(sh)


def _scorer(cfg: RunConfig):
    from .scoring import make_scorer
    if cfg.scorer == "blob":
        return make_scorer("blob", alpha=cfg.blob_alpha, beta=cfg.blob_beta, bias=cfg.blob_bias,
                           hot_threshold=cfg.hot_threshold)
    return make_scorer(cfg.scorer, cfg.scorer_params, cfg.external_cmd or "", hot_threshold=cfg.hot_threshold)


def _need(cfg: RunConfig, name: str, flag: str) -> str:
    value = getattr(cfg, name)
    if not value:
        raise UsageError(f"{cfg.command}: missing {flag}")
    return value


def _existing(path: str) -> Path:
    p = Path(path)
    if not p.exists():
        raise FileNotFoundError(f"file not found: {p}")
    return p


def cmd_simulate(cfg: RunConfig, out: Path) -> int:
    from .simulator import SceneSpec, acceptance_batch, simulate_batch
    if cfg.preset == "acceptance":
        specs = acceptance_batch()
    elif cfg.batch:
        data = json.loads(_existing(cfg.batch).read_text())
        if isinstance(data, dict):
            data = [data]
        specs = [SceneSpec.from_dict(d) for d in data]
    else:
        raise UsageError("simulate: give --batch FILE or --preset acceptance")
    manifest = simulate_batch(specs, out)
    log.info("simulated %d videos (seeds %s)", len(specs), [s.rng_seed for s in specs])
    print(manifest)
    return 0


def _load_video(path):
    from .video import read_trv
    return read_trv(_existing(path))


def cmd_normalize(cfg: RunConfig, out: Path) -> int:
    from .normalization import normalize
    from .video import quantize_normalized, write_trv
    video = _load_video(_need(cfg, "input", "input video"))
    norm = normalize(video, cfg.seed, cfg.normalization())
    stem = Path(cfg.input).stem
    write_trv(quantize_normalized(norm), out / f"{stem}.norm.trv")
    (out / f"{stem}.params.json").write_text(json.dumps(norm.norm_params.to_dict(), indent=2, sort_keys=True) + "\n")
    log.info("%s: mu_hat=%.3f lo=%.3f hi=%.3f fallback=%s", stem, norm.norm_params.mu_hat,
             norm.norm_params.lo, norm.norm_params.hi, norm.norm_params.fallback_used)
    return 0


def _normalized_sources(entries, cfg):
    from .normalization import normalize
    from .video import read_annotation, read_trv
    for e in entries:
        vid = Path(e["file"]).stem
        yield vid, normalize(read_trv(_existing(e["path"])), cfg.seed, cfg.normalization()), \
            read_annotation(_existing(e["annotation_path"])), e["path"]


def cmd_build_dataset(cfg: RunConfig, out: Path) -> int:
    from .clipper import build_dataset
    from .simulator import read_manifest
    entries = read_manifest(_existing(_need(cfg, "manifest", "--manifest")))
    items, sources = [], {}
    for vid, norm, ann, path in _normalized_sources(entries, cfg):
        items.append((vid, norm, ann))
        sources[vid] = str(Path(path).resolve())
    manifest = build_dataset(items, cfg.dataset_config())
    manifest.sources = sources
    manifest.write(out / "dataset.csv", out / "dataset.json")
    log.info("dataset: counts=%s weights=%s", manifest.counts, manifest.class_weights
             if all(manifest.counts.values()) else None)
    return 0


def cmd_train(cfg: RunConfig, out: Path) -> int:
    from .clipper import DatasetManifest
    from .normalization import normalize
    from .scoring import train_logistic
    from .video import read_trv
    manifest = DatasetManifest.read(_existing(_need(cfg, "dataset", "--dataset")))
    videos = {vid: normalize(read_trv(_existing(p)), cfg.seed, cfg.normalization())
              for vid, p in manifest.sources.items()}
    params = train_logistic(manifest, videos, cfg.epochs, cfg.lr, cfg.seed if cfg.augment else None)
    params.save(out / "logistic.json")
    (out / "train_report.json").write_text(json.dumps({
        "final_loss": params.final_loss, "train_precision": params.train_precision,
        "train_recall": params.train_recall, "counts": {"nb": manifest.counts[0], "tob": manifest.counts[1]},
        "class_weights": list(manifest.class_weights)}, indent=2, sort_keys=True) + "\n")
    return 0


def cmd_score(cfg: RunConfig, out: Path) -> int:
    from .detection import fir_smooth, score_video
    video = _load_video(_need(cfg, "input", "input video"))
    series = fir_smooth(score_video(video, _scorer(cfg), cfg.detector()), cfg.K, cfg.startup)
    series.write_csv(out / f"{Path(cfg.input).stem}.scores.csv")
    return 0


def cmd_detect(cfg: RunConfig, out: Path) -> int:
    from .detection import detect, write_estimate
    video = _load_video(_need(cfg, "input", "input video"))
    est, series = detect(video, _scorer(cfg), cfg.detector())
    stem = Path(cfg.input).stem
    series.write_csv(out / f"{stem}.scores.csv")
    write_estimate(est, out / f"{stem}.estimate.json")
    print("t_hat:", "Missing" if est.t_hat is None else f"{est.t_hat:g}")
    return 0


def cmd_eval(cfg: RunConfig, out: Path) -> int:
    from .evaluation import eval_run, write_report
    report = eval_run(_existing(_need(cfg, "manifest", "--manifest")), _scorer(cfg), cfg.detector(),
                      cfg.gammas, cfg.fpr_window, cfg.threads)
    write_report(report, out, figures=False)
    if cfg.figures:
        from .plotting import render_report_figures
        render_report_figures(out, cfg.figure_format)
    stats = report.stats()
    if stats is not None:
        print("method | FIR | Q1 | Q2 | Q3 | Mean | B.F.")
        print(stats.table_row())
    if report.failures:
        log.error("%d of %d videos failed", len(report.failures), len(report.videos))
        return 1
    return 0


def cmd_sweep(cfg: RunConfig, out: Path) -> int:
    from .evaluation import default_gammas, sweep_from_dir, write_fpr_csv
    table = sweep_from_dir(_existing(_need(cfg, "scores", "--scores")),
                           _existing(_need(cfg, "manifest", "--manifest")),
                           cfg.gammas or default_gammas(), cfg.K, cfg.startup, cfg.fpr_window)
    write_fpr_csv(table, out / "fpr.csv")
    return 0


def cmd_plot(cfg: RunConfig, out: Path) -> int:
    from .plotting import render_report_figures
    src = _existing(_need(cfg, "input", "eval directory"))
    for path in render_report_figures(src, cfg.figure_format):
        log.info("wrote %s", path)
    return 0


HANDLERS = {
    "simulate": cmd_simulate, "normalize": cmd_normalize, "build-dataset": cmd_build_dataset,
    "train": cmd_train, "score": cmd_score, "detect": cmd_detect, "eval": cmd_eval,
    "sweep": cmd_sweep, "plot": cmd_plot,
}


def main(argv: Optional[List[str]] = None) -> int:
    args = parse(sys.argv[1:] if argv is None else argv)
    try:
        cfg = resolve_config(args)
    except (OSError, ValueError, TypeError) as exc:
        print(f"tobdetect: bad config: {exc}", file=sys.stderr)
        return 2
    out = Path(cfg.out)
    out.mkdir(parents=True, exist_ok=True)
    _setup_logging(out, args.verbose)
    cfg.save(out / "run_config.json")
    import scipy
    import matplotlib
    log.info("tobdetect %s python %s numpy %s scipy %s matplotlib %s", __version__, platform.python_version(),
             np.__version__, scipy.__version__, matplotlib.__version__)
    log.info("command=%s seed=%d threads=%d", cfg.command, cfg.seed, cfg.threads)
    try:
        return HANDLERS[cfg.command](cfg, out)
    except UsageError as exc:
        print(f"tobdetect: {exc}", file=sys.stderr)
        return 2
    except FileNotFoundError as exc:
        msg = str(exc) if str(exc).startswith("file not found") else f"file not found: {exc}"
        print(f"tobdetect: {msg}", file=sys.stderr)
        log.error(msg)
        return 1
    except Exception as exc:
        print(f"tobdetect: {type(exc).__name__}: {exc}", file=sys.stderr)
        log.exception("run failed")
        return 1


if __name__ == "__main__":
    sys.exit(main())
