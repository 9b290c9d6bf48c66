"""Per-sample latent features from overlapping windows.

Every window of a recording is encoded; sample ``t`` then receives the mean
of the encoder outputs at the positions that line up with it, one from each
window containing ``t``.
"""

from __future__ import annotations

import csv
from dataclasses import dataclass
from pathlib import Path

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view

from .errors import RecordingTooShortError
from .timeseries import Recording


def coverage(length: int, window: int) -> np.ndarray:
    """Number of step-1 windows of width ``window`` covering each of ``length`` samples."""
    if window > length:
        raise RecordingTooShortError(f"recording of length {length} is shorter than window {window}")
    t = np.arange(length)
    return np.minimum(t, length - window) - np.maximum(0, t - window + 1) + 1


def overlap_average(per_window: np.ndarray, length: int) -> tuple[np.ndarray, np.ndarray]:
    """Average window-aligned values back onto the sample axis.

    ``per_window`` has shape (n_windows, W, ...) for step-1 windows.  Returns
    the (length, ...) averages and the per-sample window counts.  The sum runs
    over window positions in a fixed order, so results do not depend on how
    the windows were produced.
    """
    n_win, window = per_window.shape[:2]
    if n_win != length - window + 1:
        raise ValueError(f"{n_win} windows of width {window} do not tile length {length}")
    total = np.zeros((length,) + per_window.shape[2:])
    counts = np.zeros(length, dtype=np.int64)
    for p in range(window):
        total[p:p + n_win] += per_window[:, p]
        counts[p:p + n_win] += 1
    shape = (length,) + (1,) * (per_window.ndim - 2)
    return total / counts.reshape(shape), counts


@dataclass
class LatentSequence:
    values: np.ndarray  # (L, H)
    coverage: np.ndarray  # (L,)
    recording_id: str
    channel: str

    @property
    def length(self) -> int:
        return self.values.shape[0]

    def to_csv(self, path: str | Path) -> None:
        with Path(path).open("w", newline="") as fh:
            w = csv.writer(fh, lineterminator="\n")
            w.writerow([f"z{i}" for i in range(self.values.shape[1])])
            for row in self.values:
                w.writerow([repr(float(v)) for v in row])

    @classmethod
    def from_csv(cls, path: str | Path, recording_id: str = "", channel: str = "") -> "LatentSequence":
        with Path(path).open(newline="") as fh:
            rows = list(csv.reader(fh))[1:]
        values = np.array([[float(v) for v in r] for r in rows])
        return cls(values, np.zeros(len(values), dtype=np.int64), recording_id, channel)


def extract(model, rec: Recording, channel: str, batch_size: int = 1024) -> LatentSequence:
    """Average posterior means over every window covering each sample."""
    x = np.asarray(rec.channels[channel], dtype=np.float64)
    if np.isnan(x).any():
        raise ValueError(f"{rec.id}/{channel} has missing samples; fill gaps first")
    if len(x) < model.window:
        raise RecordingTooShortError(
            f"{rec.id}/{channel}: length {len(x)} shorter than window {model.window}")
    windows = sliding_window_view(x, model.window)
    mu = model.encode_mean(windows, batch_size=batch_size)
    values, counts = overlap_average(mu, len(x))
    return LatentSequence(values, counts, rec.id, channel)


def extract_all(model, recordings, channels=None) -> list[LatentSequence]:
    out = []
    for rec in recordings:
        for ch in (channels or rec.channel_names):
            out.append(extract(model, rec, ch))
    return out
