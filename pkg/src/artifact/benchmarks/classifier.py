"""Supervised LSTM-attention classifier giving a per-sample artifact probability."""

from __future__ import annotations

import logging
import math
import warnings
from dataclasses import asdict, dataclass, field
from pathlib import Path

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view

from .. import autodiff as ad
from .. import serialize
from ..autodiff import Tensor
from ..errors import EmptyDatasetError, LengthMismatchError, RecordingTooShortError, ShapeMismatchError
from ..latent import overlap_average
from ..nn import DenseLayer, LstmLayer, collect_params, self_attention

log = logging.getLogger(__name__)


class DegenerateLabelsWarning(UserWarning):
    pass


@dataclass
class ClassifierConfig:
    lr: float = 1e-3
    n_epochs: int = 8
    window_size: int = 15
    bidirectional: bool = False
    hidden_size: int = 16
    batch_size: int = 32
    seed: int = 0


@dataclass
class LstmAttnClassifier:
    window: int
    hidden_size: int
    bidirectional: bool = False
    attention: bool = True
    layers: dict = field(default_factory=dict)
    history: list = field(default_factory=list)

    @classmethod
    def create(cls, window: int, hidden_size: int, bidirectional: bool = False,
               attention: bool = True, rng=0) -> "LstmAttnClassifier":
        rng = np.random.default_rng(rng)
        m = cls(window, hidden_size, bidirectional, attention)
        l1 = LstmLayer.create(1, hidden_size, bidirectional, rng)
        l2 = LstmLayer.create(l1.output_size, hidden_size, bidirectional, rng)
        m.layers = {"lstm1": l1, "lstm2": l2, "out": DenseLayer.create(l2.output_size, 1, rng)}
        return m

    def parameters(self) -> dict[str, Tensor]:
        out = {}
        for name, layer in self.layers.items():
            out.update(collect_params(name, layer))
        return out

    def logits(self, x) -> Tensor:
        x = np.asarray(x, dtype=np.float64)
        if x.ndim == 1:
            x = x[None]
        if x.shape[1] != self.window:
            raise LengthMismatchError(f"expected windows of length {self.window}, got {x.shape}")
        h = self.layers["lstm2"](self.layers["lstm1"](Tensor(x[:, :, None])))
        if self.attention:
            h = self_attention(h)
        z = self.layers["out"](h)
        return ad.reshape(z, z.shape[:2])

    def predict_proba(self, x, batch_size: int = 1024) -> np.ndarray:
        """Per-position artifact probabilities, shape (n_windows, W)."""
        x = np.asarray(x, dtype=np.float64)
        parts = []
        with ad.no_grad():
            for i in range(0, len(x), batch_size):
                parts.append(ad.sigmoid(self.logits(x[i:i + batch_size])).data)
        return np.concatenate(parts)

    def save(self, path: str | Path) -> None:
        meta = {"window": self.window, "hidden_size": self.hidden_size,
                "bidirectional": self.bidirectional, "attention": self.attention,
                "history": self.history}
        serialize.save(path, "classifier", meta, {k: v.data for k, v in self.parameters().items()})

    @classmethod
    def load(cls, path: str | Path) -> "LstmAttnClassifier":
        meta, arrays = serialize.load(path, "classifier")
        m = cls.create(meta["window"], meta["hidden_size"], meta["bidirectional"],
                       meta.get("attention", True))
        for k, p in m.parameters().items():
            if k not in arrays or arrays[k].shape != p.shape:
                raise ShapeMismatchError(f"classifier array {k} missing or misshapen")
            p.data[...] = arrays[k]
        m.history = meta.get("history", [])
        return m


def bce_loss(clf: LstmAttnClassifier, x, y) -> Tensor:
    return ad.bce_with_logits(clf.logits(x), np.asarray(y, dtype=np.float64))


def train_classifier(segments, cfg: ClassifierConfig) -> LstmAttnClassifier:
    """Minimise mean per-sample binary cross-entropy with Adam."""
    if len(segments) == 0:
        raise EmptyDatasetError("no training segments")
    if segments.labels is None:
        raise EmptyDatasetError("classifier training needs labeled segments")
    x, y = segments.values, segments.labels.astype(np.float64)
    if x.shape[1] != cfg.window_size:
        raise LengthMismatchError(f"segments have length {x.shape[1]}, config says {cfg.window_size}")
    if y.min() == y.max():
        warnings.warn("all training labels are identical", DegenerateLabelsWarning, stacklevel=2)
    rng = np.random.default_rng(cfg.seed)
    clf = LstmAttnClassifier.create(cfg.window_size, cfg.hidden_size, cfg.bidirectional, rng=rng)
    opt = ad.Adam(list(clf.parameters().values()), lr=cfg.lr)
    n = len(x)
    for epoch in range(1, cfg.n_epochs + 1):
        order = rng.permutation(n)
        total = 0.0
        for b in range(math.ceil(n / cfg.batch_size)):
            idx = order[b * cfg.batch_size:(b + 1) * cfg.batch_size]
            loss = bce_loss(clf, x[idx], y[idx])
            loss.backward()
            opt.step()
            total += float(loss.data) * len(idx) / n
        clf.history.append({"epoch": epoch, "loss": total})
        log.info("classifier epoch %d/%d bce %.5f", epoch, cfg.n_epochs, total)
    return clf


def classify_proba(clf: LstmAttnClassifier, rec, channel: str) -> np.ndarray:
    x = np.asarray(rec.channels[channel], dtype=np.float64)
    if len(x) < clf.window:
        raise RecordingTooShortError(f"{rec.id}/{channel} is shorter than window {clf.window}")
    probs = clf.predict_proba(sliding_window_view(x, clf.window))
    return overlap_average(probs, len(x))[0]


def classify(clf: LstmAttnClassifier, rec, channel: str, threshold: float = 0.5) -> np.ndarray:
    """Average overlapping window probabilities per sample, then threshold."""
    return threshold_probabilities(classify_proba(clf, rec, channel), threshold)


def threshold_probabilities(p: np.ndarray, threshold: float = 0.5) -> np.ndarray:
    return (np.asarray(p) > threshold).astype(np.int8)
