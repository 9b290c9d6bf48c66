"""Command-line pipeline: ``artifact <command> [options]``.

Every command writes its outputs plus a ``manifest.json`` (configuration
snapshot, seed, format versions and SHA-256 digests of inputs and outputs)
into the output directory.  Failures print one JSON object on stderr and exit
nonzero; missing inputs and bad configuration exit with code 2.
"""

from __future__ import annotations

import argparse
import csv
import dataclasses
import hashlib
import json
import logging
import os
import sys
from pathlib import Path
from typing import Any

import numpy as np

from . import iforest, serialize
from .errors import (
    ArtifactError,
    BadConfigError,
    FormatVersionMismatchError,
    MissingInputError,
)

log = logging.getLogger("artifact")

MANIFEST_VERSION = 1
DEFAULT_OUT_DIR = "artifact-out"
OUT_DIR_ENV = "ARTIFACT_OUT_DIR"
DETECTOR_NAMES = ("vae_if", "lstm_attn", "arima", "vanilla_if", "vae_if_no_attention")


# configuration

def _defaults() -> dict[str, Any]:
    from .benchmarks.classifier import ClassifierConfig
    from .synth import SynthConfig
    from .vae import TrainConfig
    from .viz import TsneConfig

    synth = {k: v for k, v in dataclasses.asdict(SynthConfig()).items() if k != "presets"}
    return {
        "seed": 0,
        "channels": None,
        "train_fraction": 0.7,
        "synth": synth,
        "train": TrainConfig().to_dict(),
        "classifier": dataclasses.asdict(ClassifierConfig()),
        "iforest": {"n_trees": 100, "sample_size": 256, "threshold": 0.5},
        "tsne": dataclasses.asdict(TsneConfig()) | {"max_points": 1000},
        "search": {"n_trials": 60, "split": 0.7},
        "detectors": list(DETECTOR_NAMES),
    }


def _merge(base: dict, override: dict, path: str = "") -> dict:
    out = dict(base)
    for k, v in override.items():
        if k not in base:
            raise BadConfigError(f"unknown configuration key '{path}{k}'")
        if isinstance(base[k], dict):
            if not isinstance(v, dict):
                raise BadConfigError(f"'{path}{k}' must be a mapping")
            out[k] = _merge(base[k], v, f"{path}{k}.")
        else:
            out[k] = v
    return out


def load_config(path: str | None, args: argparse.Namespace) -> dict[str, Any]:
    """Defaults, then the JSON config file, then command-line flags."""
    cfg = _defaults()
    if path:
        p = Path(path)
        if not p.is_file():
            raise MissingInputError(f"config file {p} not found")
        try:
            user = json.loads(p.read_text())
        except json.JSONDecodeError as e:
            raise BadConfigError(f"{p}: {e}") from e
        if not isinstance(user, dict):
            raise BadConfigError("config file must hold a JSON object")
        cfg = _merge(cfg, user)
    if args.seed is not None:
        cfg["seed"] = args.seed
    if args.channels:
        cfg["channels"] = [c for c in args.channels.split(",") if c]
    if args.window_size is not None:
        cfg["train"]["window_size"] = args.window_size
        cfg["classifier"]["window_size"] = args.window_size
    for section in ("synth", "train", "classifier", "tsne"):
        cfg[section]["seed"] = cfg["seed"]
    _validate(cfg)
    return cfg


def _validate(cfg: dict) -> None:
    from .evaluation import validate_config

    unknown = set(cfg["detectors"]) - set(DETECTOR_NAMES)
    if unknown:
        raise BadConfigError(f"unknown detectors {sorted(unknown)}")
    if not 0.0 < cfg["train_fraction"] < 1.0:
        raise BadConfigError("train_fraction must lie in (0, 1)")
    validate_config(_train_config(cfg))
    try:
        _synth_config(cfg).validate()
    except ArtifactError as e:
        raise BadConfigError(str(e)) from e


def _train_config(cfg):
    from .vae import TrainConfig

    try:
        return TrainConfig(**cfg["train"])
    except TypeError as e:
        raise BadConfigError(str(e)) from e


def _clf_config(cfg):
    from .benchmarks.classifier import ClassifierConfig

    return ClassifierConfig(**cfg["classifier"])


def _synth_config(cfg):
    from .synth import SynthConfig

    s = dict(cfg["synth"])
    for k in ("spike_length", "flatline_length"):
        s[k] = tuple(s[k])
    return SynthConfig(**s)


def _tsne_config(cfg):
    from .viz import TsneConfig

    t = {k: v for k, v in cfg["tsne"].items() if k != "max_points"}
    return TsneConfig(**t)


# file helpers

def sha256(path: Path) -> str:
    h = hashlib.sha256()
    with path.open("rb") as fh:
        for chunk in iter(lambda: fh.read(1 << 16), b""):
            h.update(chunk)
    return h.hexdigest()


def _require(path: str | Path | None, what: str) -> Path:
    if path is None:
        raise MissingInputError(f"{what} is required")
    p = Path(path)
    if not p.exists():
        raise MissingInputError(f"{what} {p} not found")
    return p


def recording_paths(directory: Path) -> list[Path]:
    paths = sorted(p for p in directory.glob("*.csv") if p.suffixes == [".csv"])
    if not paths:
        raise MissingInputError(f"no recording CSVs in {directory}")
    return paths


def read_recordings(directory: Path, inputs: list[Path]):
    from .timeseries import read_recording_csv

    recs = []
    for p in recording_paths(directory):
        inputs.append(p)
        recs.append(read_recording_csv(p))
    return recs


def _channels(cfg, recs) -> list[str]:
    chans = cfg["channels"] or recs[0].channel_names
    missing = [c for c in chans if c not in recs[0].channels]
    if missing:
        raise BadConfigError(f"channels {missing} not present in the recordings")
    return chans


def _split(cfg, recs):
    from .evaluation import split_recordings

    return split_recordings(recs, cfg["train_fraction"], cfg["seed"])


def write_detections_csv(path: Path, flags: dict[str, np.ndarray]) -> None:
    chans = list(flags)
    with path.open("w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["sample", *chans])
        for t in range(len(flags[chans[0]])):
            w.writerow([t, *(int(flags[c][t]) for c in chans)])


def read_detections_csv(path: Path) -> dict[str, np.ndarray]:
    with path.open(newline="") as fh:
        rows = list(csv.reader(fh))
    chans = rows[0][1:]
    body = np.array([[int(v) for v in r[1:]] for r in rows[1:]], dtype=np.int8).reshape(-1, len(chans))
    return {c: body[:, i] for i, c in enumerate(chans)}


def write_manifest(out_dir: Path, command: str, cfg: dict, inputs: list[Path],
                   outputs: list[Path]) -> Path:
    manifest = {
        "command": command,
        "seed": cfg["seed"],
        "config": cfg,
        "format_versions": {
            "manifest": MANIFEST_VERSION,
            "model": serialize.FORMAT_VERSION,
        },
        "inputs": {str(p): sha256(p) for p in sorted(set(inputs))},
        "outputs": {p.name if p.parent == out_dir else str(p.relative_to(out_dir)): sha256(p)
                    for p in sorted(set(outputs))},
    }
    path = out_dir / "manifest.json"
    path.write_text(json.dumps(manifest, indent=2, sort_keys=True) + "\n")
    return path


# commands; each returns (inputs, outputs)

def cmd_synth(args, cfg, out: Path):
    from .synth import generate, write_corpus

    recs = generate(_synth_config(cfg))
    paths = write_corpus(recs, out)
    outputs = paths + [p.with_suffix(".clean.csv") for p in paths]
    return [], outputs


def cmd_preprocess(args, cfg, out: Path):
    from .timeseries import preprocess, quality_report, write_recording_csv

    inputs: list[Path] = []
    recs = read_recordings(_require(args.input, "input directory"), inputs)
    outputs, scaling, reports = [], {}, []
    for rec in recs:
        std = preprocess(rec)
        p = out / f"{rec.id}.csv"
        write_recording_csv(std, p)
        outputs.append(p)
        scaling[rec.id] = {c: {"median": s.median, "iqr": s.iqr} for c, s in std.scaling.items()}
        reports.append(quality_report(rec, std.scaling))
    (out / "scaling.json").write_text(json.dumps(scaling, indent=2, sort_keys=True) + "\n")
    (out / "quality.txt").write_text("\n\n".join(reports) + "\n")
    return inputs, outputs + [out / "scaling.json", out / "quality.txt"]


def cmd_train_vae(args, cfg, out: Path):
    from .benchmarks.detectors import pooled_segments
    from .latent import extract
    from .vae import train_vae

    inputs: list[Path] = []
    recs = read_recordings(_require(args.input, "input directory"), inputs)
    chans = _channels(cfg, recs)
    train, test = _split(cfg, recs)
    tc = _train_config(cfg)
    model = train_vae(pooled_segments(train, tc.window_size, chans), tc)
    model.save(out / "vae.json")
    latents = np.concatenate([extract(model, r, c).values for r in train for c in chans])
    f = cfg["iforest"]
    forest = iforest.fit(latents, f["n_trees"], f["sample_size"], seed=cfg["seed"],
                         threshold=f["threshold"])
    forest.save(out / "forest.json")
    split = {"train": [r.id for r in train], "test": [r.id for r in test]}
    (out / "split.json").write_text(json.dumps(split, indent=2) + "\n")
    return inputs, [out / "vae.json", out / "forest.json", out / "split.json"]


def _load_model(path, cls_loader, what):
    p = _require(path, what)
    return cls_loader(p), p


def cmd_extract(args, cfg, out: Path):
    from .latent import extract
    from .vae import SequenceVAE

    model, mp = _load_model(args.model, SequenceVAE.load, "model file")
    inputs: list[Path] = [mp]
    recs = read_recordings(_require(args.input, "input directory"), inputs)
    outputs = []
    for rec in recs:
        for ch in _channels(cfg, recs):
            p = out / f"{rec.id}.{ch}.latent.csv"
            extract(model, rec, ch).to_csv(p)
            outputs.append(p)
    return inputs, outputs


def cmd_detect(args, cfg, out: Path):
    from .latent import extract
    from .vae import SequenceVAE

    model, mp = _load_model(args.model, SequenceVAE.load, "model file")
    forest, fp = _load_model(args.forest, iforest.IsolationForest.load, "forest file")
    inputs: list[Path] = [mp, fp]
    recs = read_recordings(_require(args.input, "input directory"), inputs)
    if args.split:
        sp = _require(args.split, "split file")
        inputs.append(sp)
        held_out = set(json.loads(sp.read_text())["test"])
        recs = [r for r in recs if r.id in held_out]
    outputs = []
    for rec in recs:
        flags = {ch: iforest.detect(forest, extract(model, rec, ch))
                 for ch in _channels(cfg, recs)}
        p = out / f"{rec.id}.detections.csv"
        write_detections_csv(p, flags)
        outputs.append(p)
    return inputs, outputs


def cmd_evaluate(args, cfg, out: Path):
    from .evaluation import MetricReport

    inputs: list[Path] = []
    recs = read_recordings(_require(args.input, "input directory"), inputs)
    det_dir = _require(args.detections, "detections directory")
    report = MetricReport()
    for rec in recs:
        p = det_dir / f"{rec.id}.detections.csv"
        if not p.exists():
            continue
        inputs.append(p)
        flags = read_detections_csv(p)
        for ch in _channels(cfg, recs):
            truth = rec.label(ch)
            if truth is None:
                raise MissingInputError(f"{rec.id}/{ch} carries no labels")
            report.add(rec.id, ch, args.detector, flags[ch], truth)
    if not report.rows:
        raise MissingInputError(f"no detections in {det_dir} match the recordings")
    report.write_csv(out / "metrics.csv")
    report.write_summary_csv(out / "summary.csv")
    return inputs, [out / "metrics.csv", out / "summary.csv"]


def cmd_benchmark(args, cfg, out: Path):
    from .benchmarks.detectors import default_detectors
    from .evaluation import evaluate_detectors

    inputs: list[Path] = []
    recs = read_recordings(_require(args.input, "input directory"), inputs)
    chans = _channels(cfg, recs)
    train, test = _split(cfg, recs)
    dets = default_detectors(_train_config(cfg), _clf_config(cfg), include=cfg["detectors"])
    for d in dets:
        log.info("fitting %s", d.name)
        d.fit(train, chans)
    report = evaluate_detectors(dets, test, chans)
    report.write_csv(out / "metrics.csv")
    report.write_summary_csv(out / "summary.csv")
    return inputs, [out / "metrics.csv", out / "summary.csv"]


def cmd_search(args, cfg, out: Path):
    from .evaluation import random_search

    inputs: list[Path] = []
    recs = read_recordings(_require(args.input, "input directory"), inputs)
    chans = _channels(cfg, recs)
    train, _ = _split(cfg, recs)
    s = cfg["search"]
    n_trials = args.trials if args.trials is not None else s["n_trials"]
    result = random_search(train, n_trials=n_trials, split=s["split"], seed=cfg["seed"],
                           channels=chans)
    result.write_log(out / "trials.csv")
    (out / "best.json").write_text(json.dumps(result.best.row(), indent=2) + "\n")
    return inputs, [out / "trials.csv", out / "best.json"]


def cmd_tsne(args, cfg, out: Path):
    from .timeseries import SegmentSet, segment
    from .vae import SequenceVAE
    from .viz import scatter_svg, tsne, window_artifact_count, window_summaries, write_coordinates_csv

    model, mp = _load_model(args.model, SequenceVAE.load, "model file")
    inputs: list[Path] = [mp]
    recs = read_recordings(_require(args.input, "input directory"), inputs)
    segs = SegmentSet.concat([segment(r, model.window, channels=_channels(cfg, recs)) for r in recs])
    rng = np.random.default_rng(cfg["seed"])
    n = min(cfg["tsne"]["max_points"], segs.count)
    idx = np.sort(rng.choice(segs.count, size=n, replace=False))
    values = segs.values[idx]
    if segs.labels is None:
        counts = np.zeros(n, dtype=np.int64)
    else:
        counts = np.array([window_artifact_count(y, model.window) for y in segs.labels[idx]])
    summaries = window_summaries(model, values)
    res = tsne(summaries, _tsne_config(cfg))
    write_coordinates_csv(out / "tsne.csv", res.embedding, counts)
    scatter_svg(out / "tsne.svg", res.embedding, counts)
    return inputs, [out / "tsne.csv", out / "tsne.svg"]


def cmd_plot(args, cfg, out: Path):
    from .timeseries import read_recording_csv
    from .viz import overlay_svg

    rp = _require(args.recording, "recording file")
    dp = _require(args.detections, "detections file")
    rec = read_recording_csv(rp)
    flags = read_detections_csv(dp)
    chans = [c for c in (cfg["channels"] or list(flags)) if c in flags]
    p = out / f"{rec.id}.overlay.svg"
    overlay_svg(p, rec, flags, chans)
    return [rp, dp], [p]


COMMANDS = {
    "synth": (cmd_synth, "generate a labeled synthetic corpus"),
    "preprocess": (cmd_preprocess, "standardize and fill gaps in recording CSVs"),
    "train-vae": (cmd_train_vae, "train the sequence VAE and its isolation forest"),
    "extract": (cmd_extract, "write averaged latent sequences per recording and channel"),
    "detect": (cmd_detect, "flag artifacts with a trained VAE and forest"),
    "benchmark": (cmd_benchmark, "fit and score every detector on a recording split"),
    "evaluate": (cmd_evaluate, "score detection files against labels"),
    "search": (cmd_search, "random hyperparameter search for the VAE detector"),
    "tsne": (cmd_tsne, "project window embeddings to two dimensions"),
    "plot": (cmd_plot, "draw a signal and detection overlay as SVG"),
}


def build_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", help="JSON configuration file")
    common.add_argument("--seed", type=int)
    common.add_argument("--out-dir", help=f"output directory (default ${OUT_DIR_ENV} or {DEFAULT_OUT_DIR})")
    common.add_argument("--channels", help="comma-separated channel names")
    common.add_argument("--window-size", type=int)
    common.add_argument("-v", "--verbose", action="store_true")

    parser = argparse.ArgumentParser(prog="artifact", description=__doc__.splitlines()[0])
    sub = parser.add_subparsers(dest="command", required=True)
    for name, (_, help_text) in COMMANDS.items():
        p = sub.add_parser(name, parents=[common], help=help_text)
        if name not in ("synth", "plot"):
            p.add_argument("--input", help="directory of recording CSVs")
        if name in ("extract", "detect", "tsne"):
            p.add_argument("--model", help="trained VAE file")
        if name == "detect":
            p.add_argument("--forest", help="fitted isolation forest file")
            p.add_argument("--split", help="split.json from train-vae; only its test recordings are scored")
        if name == "evaluate":
            p.add_argument("--detections", help="directory of detection CSVs")
            p.add_argument("--detector", default="vae_if", help="detector name for the report")
        if name == "plot":
            p.add_argument("--recording", help="recording CSV")
            p.add_argument("--detections", help="detection CSV for that recording")
        if name == "search":
            p.add_argument("--trials", type=int)
    return parser


def _error_line(exc: BaseException) -> str:
    return json.dumps({"error": type(exc).__name__, "message": str(exc)})


def main(argv: list[str] | None = None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        cfg = load_config(args.config, args)
        out = Path(args.out_dir or os.environ.get(OUT_DIR_ENV) or DEFAULT_OUT_DIR)
        out.mkdir(parents=True, exist_ok=True)
        fn, _ = COMMANDS[args.command]
        inputs, outputs = fn(args, cfg, out)
        write_manifest(out, args.command, cfg, inputs, outputs)
    except (MissingInputError, BadConfigError, FormatVersionMismatchError) as e:
        print(_error_line(e), file=sys.stderr)
        return 2
    except ArtifactError as e:
        print(_error_line(e), file=sys.stderr)
        return 1
    return 0


if __name__ == "__main__":
    sys.exit(main())
