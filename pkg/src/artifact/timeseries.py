"""Recordings, preprocessing and windowing for minute-resolution vital signs.

Missing samples are NaN in memory and empty cells on disk.  Each channel of
each recording is scaled on its own (median removed, divided by the IQR),
interior gaps are then filled with a quadratic spline, and the filled series
is cut into overlapping windows.
"""

from __future__ import annotations

import csv
import datetime as dt
import io
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterable, Mapping, Sequence

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view
from scipy.interpolate import make_interp_spline

from .errors import (
    EmptyInputError,
    LengthMismatchError,
    TooFewSamplesError,
    WindowTooLongError,
    ZeroIqrError,
)

DEFAULT_START = dt.datetime(2010, 1, 1)
LONG_GAP_MINUTES = 60


@dataclass
class Recording:
    id: str
    channels: dict[str, np.ndarray]
    labels: dict[str, np.ndarray] | None = None
    start_time: dt.datetime = DEFAULT_START

    def __post_init__(self) -> None:
        if not self.channels:
            raise EmptyInputError(f"recording {self.id!r} has no channels")
        self.channels = {k: np.asarray(v, dtype=np.float64) for k, v in self.channels.items()}
        lengths = {v.shape for v in self.channels.values()}
        if len(lengths) != 1 or len(next(iter(lengths))) != 1:
            raise LengthMismatchError(f"recording {self.id!r}: channels must be 1-D with equal length")
        if self.length < 1:
            raise EmptyInputError(f"recording {self.id!r} is empty")
        if self.labels is not None:
            labels = {}
            for name, lab in self.labels.items():
                if name not in self.channels:
                    raise LengthMismatchError(f"labels for unknown channel {name!r}")
                lab = np.asarray(lab)
                if lab.shape != (self.length,):
                    raise LengthMismatchError(f"label length mismatch on channel {name!r}")
                if not np.isin(lab, (0, 1)).all():
                    raise ValueError(f"labels on channel {name!r} must be 0 or 1")
                labels[name] = lab.astype(np.int8)
            self.labels = labels

    @property
    def length(self) -> int:
        return len(next(iter(self.channels.values())))

    @property
    def channel_names(self) -> list[str]:
        return list(self.channels)

    def label(self, channel: str) -> np.ndarray | None:
        if self.labels is None:
            return None
        return self.labels.get(channel)


@dataclass(frozen=True)
class ChannelScaling:
    median: float
    iqr: float

    def inverse(self, x: np.ndarray) -> np.ndarray:
        return np.asarray(x) * self.iqr + self.median


@dataclass
class StandardizedRecording(Recording):
    scaling: dict[str, ChannelScaling] = field(default_factory=dict)
    filled: dict[str, np.ndarray] = field(default_factory=dict)

    def inverse(self, channel: str) -> np.ndarray:
        return self.scaling[channel].inverse(self.channels[channel])


def _quartiles(x: np.ndarray) -> tuple[float, float, float]:
    # numpy's default "linear" method is the type-7 definition
    q1, med, q3 = np.quantile(x, [0.25, 0.5, 0.75])
    return float(q1), float(med), float(q3)


def standardize(rec: Recording) -> StandardizedRecording:
    """Subtract each channel's median and divide by its interquartile range."""
    scaled, scaling = {}, {}
    for name, x in rec.channels.items():
        valid = x[~np.isnan(x)]
        if valid.size < 4:
            raise TooFewSamplesError(
                f"{rec.id}/{name}: need at least 4 non-missing samples, got {valid.size}"
            )
        q1, med, q3 = _quartiles(valid)
        iqr = q3 - q1
        if iqr == 0:
            raise ZeroIqrError(f"{rec.id}/{name}: interquartile range is zero (constant channel)")
        scaled[name] = (x - med) / iqr
        scaling[name] = ChannelScaling(med, iqr)
    return StandardizedRecording(
        id=rec.id,
        channels=scaled,
        labels=None if rec.labels is None else dict(rec.labels),
        start_time=rec.start_time,
        scaling=scaling,
    )


def fill_series(x: np.ndarray) -> np.ndarray:
    """Fill NaNs: quadratic spline inside the observed span, nearest value outside it."""
    x = np.asarray(x, dtype=np.float64)
    missing = np.isnan(x)
    if not missing.any():
        return x.copy()
    t_obs = np.flatnonzero(~missing)
    if t_obs.size < 3:
        raise TooFewSamplesError(f"need at least 3 non-missing samples to fill gaps, got {t_obs.size}")
    out = x.copy()
    first, last = t_obs[0], t_obs[-1]
    interior = np.flatnonzero(missing[first:last + 1]) + first
    if interior.size:
        spline = make_interp_spline(t_obs, x[t_obs], k=2)
        out[interior] = spline(interior)
    out[:first] = x[first]
    out[last + 1:] = x[last]
    return out


def fill_gaps(rec: StandardizedRecording) -> StandardizedRecording:
    filled_mask = {name: np.isnan(x) for name, x in rec.channels.items()}
    return StandardizedRecording(
        id=rec.id,
        channels={name: fill_series(x) for name, x in rec.channels.items()},
        labels=None if rec.labels is None else dict(rec.labels),
        start_time=rec.start_time,
        scaling=dict(rec.scaling),
        filled={k: v | rec.filled.get(k, False) for k, v in filled_mask.items()},
    )


def preprocess(rec: Recording) -> StandardizedRecording:
    return fill_gaps(standardize(rec))


def gap_lengths(missing: np.ndarray) -> np.ndarray:
    """Lengths of consecutive runs of True in a boolean mask."""
    m = np.concatenate([[False], np.asarray(missing, dtype=bool), [False]])
    d = np.diff(m.astype(np.int8))
    return np.flatnonzero(d == -1) - np.flatnonzero(d == 1)


def quality_report(rec: Recording, scaling: Mapping[str, ChannelScaling] | None = None) -> str:
    """Plain-text summary: missing fraction, gap histogram and IQR per channel."""
    lines = [f"recording {rec.id}: {rec.length} samples"]
    for name, x in rec.channels.items():
        missing = np.isnan(x)
        gaps = gap_lengths(missing)
        lines.append(f"  {name}: missing {100.0 * missing.mean():.2f}%")
        if scaling and name in scaling:
            lines.append(f"    median {scaling[name].median:.6g}  iqr {scaling[name].iqr:.6g}")
        if gaps.size:
            edges = [1, 2, 6, 16, 61]
            counts = np.histogram(gaps, bins=edges + [max(gaps.max() + 1, 62)])[0]
            labels = ["1", "2-5", "6-15", "16-60", ">60"]
            hist = ", ".join(f"{lab}: {c}" for lab, c in zip(labels, counts))
            lines.append(f"    gaps {gaps.size} ({hist})")
            long = int((gaps > LONG_GAP_MINUTES).sum())
            if long:
                lines.append(f"    WARNING {long} gap(s) longer than {LONG_GAP_MINUTES} min were filled")
        else:
            lines.append("    gaps 0")
    return "\n".join(lines) + "\n"


@dataclass(frozen=True)
class Segment:
    values: np.ndarray
    recording_id: str
    channel: str
    start: int

    @property
    def source(self) -> tuple[str, str, int]:
        return (self.recording_id, self.channel, self.start)


@dataclass
class SegmentSet:
    """Windows stacked as an (N, W) array with per-row provenance."""

    values: np.ndarray
    window: int
    recording_ids: np.ndarray
    channels: np.ndarray
    starts: np.ndarray
    labels: np.ndarray | None = None

    def __len__(self) -> int:
        return self.values.shape[0]

    @property
    def count(self) -> int:
        return len(self)

    def __getitem__(self, i: int) -> Segment:
        return Segment(self.values[i], str(self.recording_ids[i]), str(self.channels[i]),
                       int(self.starts[i]))

    @classmethod
    def concat(cls, sets: Sequence["SegmentSet"]) -> "SegmentSet":
        if not sets:
            raise EmptyInputError("no segment sets to concatenate")
        windows = {s.window for s in sets}
        if len(windows) != 1:
            raise LengthMismatchError(f"segment sets have different windows {windows}")
        has_labels = all(s.labels is not None for s in sets)
        return cls(
            values=np.concatenate([s.values for s in sets]),
            window=sets[0].window,
            recording_ids=np.concatenate([s.recording_ids for s in sets]),
            channels=np.concatenate([s.channels for s in sets]),
            starts=np.concatenate([s.starts for s in sets]),
            labels=np.concatenate([s.labels for s in sets]) if has_labels else None,
        )


def segment(rec: Recording, window: int, step: int = 1,
            channels: Iterable[str] | None = None) -> SegmentSet:
    """All windows ``[i, i + window)`` for ``i = 0, step, ...`` on each channel."""
    if window < 2:
        raise ValueError("window must be at least 2")
    if step < 1:
        raise ValueError("step must be positive")
    if window > rec.length:
        raise WindowTooLongError(f"window {window} exceeds recording length {rec.length}")
    names = list(channels) if channels is not None else rec.channel_names
    parts = []
    for name in names:
        x = rec.channels[name]
        if np.isnan(x).any():
            raise ValueError(f"{rec.id}/{name} still has missing samples; fill gaps first")
        vals = sliding_window_view(x, window)[::step]
        starts = np.arange(0, rec.length - window + 1, step)
        lab = rec.label(name)
        parts.append(SegmentSet(
            values=np.ascontiguousarray(vals),
            window=window,
            recording_ids=np.full(len(starts), rec.id, dtype=object),
            channels=np.full(len(starts), name, dtype=object),
            starts=starts,
            labels=None if lab is None else np.ascontiguousarray(sliding_window_view(lab, window)[::step]),
        ))
    return SegmentSet.concat(parts)


def downsample_to_minutes(samples, rate_hz: float) -> np.ndarray:
    """Mean of each non-overlapping one-minute block; a trailing partial block is kept."""
    x = np.asarray(samples, dtype=np.float64)
    if x.size == 0:
        raise EmptyInputError("no samples to downsample")
    per_minute = rate_hz * 60.0
    if per_minute < 1:
        raise ValueError("sampling rate must give at least one sample per minute")
    n_out = int(np.ceil(x.size / per_minute - 1e-9))
    edges = np.minimum(np.round(np.arange(n_out + 1) * per_minute).astype(int), x.size)
    edges[-1] = x.size
    return np.array([x[a:b].mean() for a, b in zip(edges[:-1], edges[1:]) if b > a])


# CSV format: timestamp,<chan>,<chan>_label,...

def _fmt(v: float) -> str:
    return "" if np.isnan(v) else repr(float(v))


def write_recording_csv(rec: Recording, path: str | Path) -> None:
    path = Path(path)
    buf = io.StringIO()
    writer = csv.writer(buf, lineterminator="\n")
    header = ["timestamp"]
    for name in rec.channel_names:
        header += [name, f"{name}_label"]
    writer.writerow(header)
    step = dt.timedelta(minutes=1)
    for t in range(rec.length):
        row = [(rec.start_time + t * step).isoformat()]
        for name in rec.channel_names:
            lab = rec.label(name)
            row += [_fmt(rec.channels[name][t]), "" if lab is None else str(int(lab[t]))]
        writer.writerow(row)
    path.write_text(buf.getvalue())


def read_recording_csv(path: str | Path, rec_id: str | None = None) -> Recording:
    path = Path(path)
    with path.open(newline="") as fh:
        rows = list(csv.reader(fh))
    if not rows or rows[0][0] != "timestamp":
        raise ValueError(f"{path}: first column must be 'timestamp'")
    header = rows[0]
    body = rows[1:]
    if not body:
        raise EmptyInputError(f"{path}: no data rows")
    names = [h for h in header[1:] if not h.endswith("_label")]
    if len(set(names)) != len(names):
        raise ValueError(f"{path}: duplicate channel names")
    col = {h: i for i, h in enumerate(header)}
    channels, labels = {}, {}
    for name in names:
        channels[name] = np.array(
            [float(r[col[name]]) if r[col[name]] != "" else np.nan for r in body])
        lab_col = col.get(f"{name}_label")
        if lab_col is not None:
            cells = [r[lab_col] for r in body]
            if all(c != "" for c in cells):
                labels[name] = np.array([int(c) for c in cells], dtype=np.int8)
            elif any(c != "" for c in cells):
                # partially labeled channels treat empty cells as clean
                labels[name] = np.array([int(c) if c else 0 for c in cells], dtype=np.int8)
    start = dt.datetime.fromisoformat(body[0][0])
    return Recording(id=rec_id or path.stem, channels=channels, labels=labels or None,
                     start_time=start)
