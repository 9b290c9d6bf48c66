"""Detectors with a common ``fit(recordings)`` / ``detect(recording, channel)`` interface.

All detectors are fitted on preprocessed training recordings and return a
0/1 array with one entry per sample of the recording they are applied to.
"""

from __future__ import annotations

from dataclasses import dataclass, field, replace
from typing import Sequence

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view

from .. import iforest
from ..errors import RecordingTooShortError
from ..latent import extract
from ..timeseries import SegmentSet, segment
from ..vae import SequenceVAE, TrainConfig, train_vae
from .arima import ArimaModel, arima_detect, fit_arima
from .classifier import ClassifierConfig, LstmAttnClassifier, classify, train_classifier

LAG_WIDTH = 15


def _channels(recordings, channels):
    return list(channels) if channels is not None else recordings[0].channel_names


def pooled_segments(recordings, window: int, channels=None) -> SegmentSet:
    """Windows from every (recording, channel) pair, mixed into one training pool."""
    chans = _channels(recordings, channels)
    return SegmentSet.concat([segment(r, window, channels=chans) for r in recordings])


@dataclass
class VaeIfDetector:
    """VAE features averaged per sample, scored by an isolation forest."""

    config: TrainConfig = field(default_factory=TrainConfig)
    n_trees: int = 100
    sample_size: int = 256
    threshold: float = 0.5
    name: str = "vae_if"
    model: SequenceVAE | None = None
    forest: iforest.IsolationForest | None = None

    def fit(self, recordings, channels=None) -> "VaeIfDetector":
        chans = _channels(recordings, channels)
        if self.model is None:
            self.model = train_vae(pooled_segments(recordings, self.config.window_size, chans),
                                   self.config)
        latents = [extract(self.model, r, c).values for r in recordings for c in chans]
        self.forest = iforest.fit(np.concatenate(latents), self.n_trees, self.sample_size,
                                  seed=self.config.seed, threshold=self.threshold)
        return self

    def scores(self, rec, channel: str) -> np.ndarray:
        return self.forest.score(extract(self.model, rec, channel).values)

    def detect(self, rec, channel: str) -> np.ndarray:
        return iforest.detect(self.forest, extract(self.model, rec, channel))


def vae_if_no_attention(config: TrainConfig, **kwargs) -> VaeIfDetector:
    """Same pipeline and hyperparameters with the encoder attention block removed."""
    return VaeIfDetector(config=replace(config, attention=False), name="vae_if_no_attention", **kwargs)


def lag_vectors(x: np.ndarray, width: int = LAG_WIDTH) -> np.ndarray:
    """Row ``k`` holds ``x[k], ..., x[k + width - 1]``: the lag vector ending at sample ``k + width - 1``."""
    x = np.asarray(x, dtype=np.float64)
    if len(x) < width:
        raise RecordingTooShortError(f"series of length {len(x)} is shorter than lag width {width}")
    return sliding_window_view(x, width)


def _spread_lag_labels(labels: np.ndarray, width: int) -> np.ndarray:
    # the first width-1 samples have no full lag vector and copy the first label
    return np.concatenate([np.full(width - 1, labels[0]), labels]).astype(np.int8)


def vanilla_if_detect(rec, channel: str, forest: iforest.IsolationForest | None = None,
                      width: int = LAG_WIDTH, seed: int = 0) -> np.ndarray:
    """Isolation forest on raw lag vectors; fits on this recording when no forest is given."""
    X = lag_vectors(rec.channels[channel], width)
    if forest is None:
        forest = iforest.fit(X, seed=seed)
    return _spread_lag_labels(forest.detect(X), width)


@dataclass
class VanillaIfDetector:
    width: int = LAG_WIDTH
    n_trees: int = 100
    sample_size: int = 256
    threshold: float = 0.5
    seed: int = 0
    name: str = "vanilla_if"
    forest: iforest.IsolationForest | None = None

    def fit(self, recordings, channels=None) -> "VanillaIfDetector":
        chans = _channels(recordings, channels)
        X = np.concatenate([lag_vectors(r.channels[c], self.width) for r in recordings for c in chans])
        self.forest = iforest.fit(X, self.n_trees, self.sample_size, seed=self.seed,
                                  threshold=self.threshold)
        return self

    def detect(self, rec, channel: str) -> np.ndarray:
        return vanilla_if_detect(rec, channel, self.forest, self.width)


@dataclass
class ArimaDetector:
    """One ARIMA model per signal type, fitted on that signal from all training recordings."""

    max_p: int = 5
    max_q: int = 3
    max_d: int = 2
    name: str = "arima"
    models: dict[str, ArimaModel] = field(default_factory=dict)

    def fit(self, recordings, channels=None) -> "ArimaDetector":
        for c in _channels(recordings, channels):
            self.models[c] = fit_arima([r.channels[c] for r in recordings],
                                       self.max_p, self.max_q, self.max_d)
        return self

    def detect(self, rec, channel: str) -> np.ndarray:
        return arima_detect(self.models[channel], rec.channels[channel])


@dataclass
class ClassifierDetector:
    config: ClassifierConfig = field(default_factory=ClassifierConfig)
    name: str = "lstm_attn"
    model: LstmAttnClassifier | None = None

    def fit(self, recordings, channels=None) -> "ClassifierDetector":
        segs = pooled_segments(recordings, self.config.window_size, channels)
        self.model = train_classifier(segs, self.config)
        return self

    def detect(self, rec, channel: str) -> np.ndarray:
        return classify(self.model, rec, channel)


def default_detectors(config: TrainConfig, clf_config: ClassifierConfig | None = None,
                      include: Sequence[str] | None = None) -> list:
    """The full comparison set, in the column order of the results table."""
    clf_config = clf_config or ClassifierConfig(window_size=config.window_size, seed=config.seed,
                                                bidirectional=config.bidirectional)
    all_detectors = [
        VaeIfDetector(config=config),
        ClassifierDetector(config=clf_config),
        ArimaDetector(),
        VanillaIfDetector(seed=config.seed),
        vae_if_no_attention(config),
    ]
    if include is None:
        return all_detectors
    unknown = set(include) - {d.name for d in all_detectors}
    if unknown:
        raise ValueError(f"unknown detectors {sorted(unknown)}")
    return [d for d in all_detectors if d.name in include]
