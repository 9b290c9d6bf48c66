"""Sample-level metrics, per-recording aggregation and hyperparameter search.

Artifact samples are the positive class.  Metrics are computed for each
recording separately and only then averaged; a recording without positives
has no sensitivity and is left out of that mean (the skip is counted).
"""

from __future__ import annotations

import csv
import logging
import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import Callable, Mapping, Sequence

import numpy as np

from .errors import BadConfigError, LengthMismatchError, TooFewRecordingsError

log = logging.getLogger(__name__)


@dataclass(frozen=True)
class Confusion:
    tp: int
    fp: int
    tn: int
    fn: int

    def __iter__(self):
        return iter((self.tp, self.fp, self.tn, self.fn))


def confusion(pred, truth) -> Confusion:
    pred = np.asarray(pred).astype(bool)
    truth = np.asarray(truth).astype(bool)
    if pred.shape != truth.shape:
        raise LengthMismatchError(f"prediction length {pred.shape} != truth length {truth.shape}")
    return Confusion(
        tp=int(np.sum(pred & truth)),
        fp=int(np.sum(pred & ~truth)),
        tn=int(np.sum(~pred & ~truth)),
        fn=int(np.sum(~pred & truth)),
    )


def sens_spec(c) -> tuple[float | None, float | None]:
    """Sensitivity and specificity; ``None`` where the denominator is zero."""
    tp, fp, tn, fn = c
    sens = tp / (tp + fn) if tp + fn > 0 else None
    spec = tn / (tn + fp) if tn + fp > 0 else None
    return sens, spec


def geometric_mean(sens: float | None, spec: float | None) -> float | None:
    if sens is None or spec is None:
        return None
    if sens < 0 or spec < 0:
        raise ValueError("sensitivity and specificity must be non-negative")
    return math.sqrt(sens * spec)


@dataclass(frozen=True)
class MetricRow:
    recording: str
    channel: str
    detector: str
    sensitivity: float | None
    specificity: float | None


@dataclass(frozen=True)
class Aggregate:
    channel: str
    detector: str
    sens_mean: float | None
    sens_std: float | None
    spec_mean: float | None
    spec_std: float | None
    n_recordings: int
    sens_skipped: int
    spec_skipped: int


def _mean_std(values: list[float]) -> tuple[float | None, float | None]:
    if not values:
        return None, None
    a = np.asarray(values, dtype=np.float64)
    return float(a.mean()), float(a.std())


@dataclass
class MetricReport:
    rows: list[MetricRow] = field(default_factory=list)

    def add(self, recording: str, channel: str, detector: str, pred, truth) -> MetricRow:
        s, p = sens_spec(confusion(pred, truth))
        row = MetricRow(recording, channel, detector, s, p)
        self.rows.append(row)
        return row

    def aggregate(self) -> list[Aggregate]:
        keys = sorted({(r.channel, r.detector) for r in self.rows})
        out = []
        for ch, det in keys:
            rows = [r for r in self.rows if r.channel == ch and r.detector == det]
            sens = [r.sensitivity for r in rows if r.sensitivity is not None]
            spec = [r.specificity for r in rows if r.specificity is not None]
            if len(sens) < len(rows):
                log.warning("%s/%s: %d recording(s) without artifacts skipped for sensitivity",
                            ch, det, len(rows) - len(sens))
            out.append(Aggregate(ch, det, *_mean_std(sens), *_mean_std(spec), len(rows),
                                 len(rows) - len(sens), len(rows) - len(spec)))
        return out

    def lookup(self, channel: str, detector: str) -> Aggregate:
        for a in self.aggregate():
            if a.channel == channel and a.detector == detector:
                return a
        raise KeyError((channel, detector))

    def mean_over_channels(self, detector: str, metric: str = "sens_mean") -> float:
        vals = [getattr(a, metric) for a in self.aggregate() if a.detector == detector]
        vals = [v for v in vals if v is not None]
        return float(np.mean(vals)) if vals else math.nan

    def write_csv(self, path: str | Path) -> None:
        """Per-recording rows in the ``recording,channel,detector,sensitivity,specificity`` schema."""
        with Path(path).open("w", newline="") as fh:
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(["recording", "channel", "detector", "sensitivity", "specificity"])
            for r in self.rows:
                w.writerow([r.recording, r.channel, r.detector, _cell(r.sensitivity),
                            _cell(r.specificity)])

    def write_summary_csv(self, path: str | Path) -> None:
        with Path(path).open("w", newline="") as fh:
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(["channel", "detector", "sens_mean", "sens_std", "spec_mean", "spec_std",
                        "n_recordings", "sens_skipped", "spec_skipped"])
            for a in self.aggregate():
                w.writerow([a.channel, a.detector, _cell(a.sens_mean), _cell(a.sens_std),
                            _cell(a.spec_mean), _cell(a.spec_std), a.n_recordings,
                            a.sens_skipped, a.spec_skipped])

    @classmethod
    def read_csv(cls, path: str | Path) -> "MetricReport":
        rep = cls()
        with Path(path).open(newline="") as fh:
            for row in csv.DictReader(fh):
                rep.rows.append(MetricRow(row["recording"], row["channel"], row["detector"],
                                          _parse(row["sensitivity"]), _parse(row["specificity"])))
        return rep


def _cell(v: float | None) -> str:
    return "" if v is None else repr(float(v))


def _parse(s: str) -> float | None:
    return None if s == "" else float(s)


def evaluate_detectors(detectors, test_recordings, channels=None) -> MetricReport:
    """Apply fitted detectors to each test recording and channel, one metric row each."""
    rep = MetricReport()
    for rec in test_recordings:
        for ch in (channels or rec.channel_names):
            truth = rec.label(ch)
            if truth is None:
                raise ValueError(f"{rec.id}/{ch} has no labels to evaluate against")
            for det in detectors:
                pred = det.detect(rec, ch)
                if len(pred) != rec.length:
                    raise LengthMismatchError(f"{det.name} returned {len(pred)} labels for {rec.length} samples")
                rep.add(rec.id, ch, det.name, pred, truth)
    return rep


def split_recordings(recordings: Sequence, train_fraction: float = 0.7, seed: int = 0):
    """Shuffle whole recordings and split them; windows never cross the split."""
    if len(recordings) < 2:
        raise TooFewRecordingsError("need at least two recordings to split")
    order = np.random.default_rng(seed).permutation(len(recordings))
    n_train = min(max(1, int(round(train_fraction * len(recordings)))), len(recordings) - 1)
    train = [recordings[i] for i in sorted(order[:n_train])]
    held = [recordings[i] for i in sorted(order[n_train:])]
    return train, held


# hyperparameter search over the VAE-IF ranges

@dataclass(frozen=True)
class Range:
    low: float
    high: float
    log: bool = False
    integer: bool = False

    def sample(self, rng: np.random.Generator):
        if self.integer:
            return int(rng.integers(int(self.low), int(self.high) + 1))
        if self.log:
            return float(math.exp(rng.uniform(math.log(self.low), math.log(self.high))))
        return float(rng.uniform(self.low, self.high))

    def contains(self, v) -> bool:
        return self.low <= v <= self.high


VAE_SPACE: dict[str, Range | tuple] = {
    "lr": Range(1e-4, 1e-3, log=True),
    "latent_dim": Range(2, 90, integer=True),
    "beta": Range(1e-3, 1e2, log=True),
    "n_epochs": Range(8, 30, integer=True),
    "window_size": Range(15, 60, integer=True),
    "bidirectional": (True, False),
}

CLASSIFIER_SPACE: dict[str, Range | tuple] = {
    "lr": Range(1e-4, 1e-3, log=True),
    "n_epochs": Range(8, 30, integer=True),
    "window_size": Range(15, 60, integer=True),
    "bidirectional": (True, False),
}


def validate_config(cfg, space=VAE_SPACE) -> None:
    """Reject a training configuration with any searched value outside its range."""
    for name, rng in space.items():
        v = cfg[name] if isinstance(cfg, Mapping) else getattr(cfg, name)
        if isinstance(rng, tuple):
            if v not in rng:
                raise BadConfigError(f"{name}={v!r} not in {rng}")
        elif not rng.contains(v):
            raise BadConfigError(f"{name}={v!r} outside [{rng.low}, {rng.high}]")


def sample_config(space, rng: np.random.Generator) -> dict:
    out = {}
    for name, r in space.items():
        out[name] = bool(rng.choice(r)) if isinstance(r, tuple) else r.sample(rng)
    return out


@dataclass
class SearchTrial:
    trial: int
    seed: int
    params: dict
    gmean: float

    def row(self) -> dict:
        return {"trial": self.trial, "seed": self.seed, **self.params, "gmean": self.gmean}


TRIAL_COLUMNS = ["trial", "seed", "lr", "latent_dim", "beta", "n_epochs", "window_size",
                 "bidirectional", "gmean"]


def mean_channel_gmean(report: MetricReport, detector: str) -> float:
    """Geometric mean of the per-channel mean sensitivity and specificity, averaged over channels."""
    vals = []
    for a in report.aggregate():
        if a.detector != detector:
            continue
        g = geometric_mean(a.sens_mean, a.spec_mean)
        if g is not None:
            vals.append(g)
    return float(np.mean(vals)) if vals else 0.0


def vae_if_objective(train, valid, params: dict, seed: int, channels=None) -> float:
    from .benchmarks.detectors import VaeIfDetector
    from .vae import TrainConfig

    cfg = TrainConfig(seed=seed, **params)
    det = VaeIfDetector(config=cfg).fit(train, channels)
    return mean_channel_gmean(evaluate_detectors([det], valid, channels), det.name)


@dataclass
class SearchResult:
    best: SearchTrial
    trials: list[SearchTrial]

    def write_log(self, path: str | Path) -> None:
        with Path(path).open("w", newline="") as fh:
            w = csv.DictWriter(fh, fieldnames=TRIAL_COLUMNS, lineterminator="\n",
                               extrasaction="ignore")
            w.writeheader()
            for t in sorted(self.trials, key=lambda t: t.trial):
                row = t.row()
                w.writerow({k: (repr(v) if isinstance(v, float) else v) for k, v in row.items()})


def random_search(recordings, space=VAE_SPACE, n_trials: int = 60, split: float = 0.7,
                  seed: int = 0, objective: Callable | None = None, channels=None) -> SearchResult:
    """Sample configurations, score each on a recording-level validation split, keep the best."""
    if len(recordings) < 2:
        raise TooFewRecordingsError("random search needs at least two training recordings")
    train, valid = split_recordings(recordings, split, seed)
    train_ids = {r.id for r in train}
    assert not train_ids & {r.id for r in valid}
    objective = objective or vae_if_objective
    rng = np.random.default_rng(seed)
    trial_seeds = rng.integers(0, 2**31 - 1, size=n_trials)
    trials = []
    for i in range(n_trials):
        params = sample_config(space, rng)
        g = float(objective(train, valid, params, int(trial_seeds[i]), channels))
        trials.append(SearchTrial(i, int(trial_seeds[i]), params, g))
        log.info("trial %d/%d gmean %.4f %s", i + 1, n_trials, g, params)
    best = max(trials, key=lambda t: (t.gmean, -t.trial))
    return SearchResult(best, trials)
