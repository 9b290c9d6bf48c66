"""Synthetic vital-sign corpus with injected spike and flat-line artifacts.

Each channel is a sum of slow sinusoids plus AR(1) noise.  Artifacts are
written over that clean baseline afterwards, so the clean counterfactual is
kept next to every recording for oracle checks.  The three presets loosely
imitate mean blood pressure, intracranial pressure and heart rate; the ICP
preset uses small spikes on a wide, noisy baseline so that artifact and clean
values overlap.
"""

from __future__ import annotations

from dataclasses import dataclass, field, replace
from pathlib import Path

import numpy as np

from .errors import InvalidConfigError
from .timeseries import Recording, write_recording_csv


@dataclass(frozen=True)
class ChannelPreset:
    level: float
    amplitudes: tuple[float, ...]
    periods: tuple[float, ...]  # minutes
    ar_coef: float
    noise_scale: float  # marginal std of the AR(1) noise
    spike_sigma: tuple[float, float]  # spike magnitude range, in noise std units


DEFAULT_PRESETS: dict[str, ChannelPreset] = {
    "BPm": ChannelPreset(85.0, (6.0, 3.0), (720.0, 190.0), 0.8, 2.0, (10.0, 18.0)),
    "ICPm": ChannelPreset(20.0, (7.0, 4.0, 2.0), (600.0, 150.0, 60.0), 0.9, 3.0, (4.0, 6.0)),
    "HRT": ChannelPreset(100.0, (10.0, 4.0), (900.0, 240.0), 0.7, 3.0, (8.0, 14.0)),
}


@dataclass(frozen=True)
class SynthConfig:
    n_recordings: int = 20
    length: int = 2000
    presets: dict[str, ChannelPreset] = field(default_factory=lambda: dict(DEFAULT_PRESETS))
    spike_rate: float = 0.004  # spike events per sample
    spike_length: tuple[int, int] = (1, 3)
    flatline_rate: float = 0.001  # flat-line events per sample
    flatline_length: tuple[int, int] = (10, 30)
    missing_rate: float = 0.01
    seed: int = 0

    def validate(self) -> None:
        if self.n_recordings < 1 or self.length < 100:
            raise InvalidConfigError("need at least one recording of length >= 100")
        for name in ("spike_rate", "flatline_rate", "missing_rate"):
            v = getattr(self, name)
            if not 0.0 <= v <= 1.0:
                raise InvalidConfigError(f"{name} must lie in [0, 1], got {v}")
        lo, hi = self.flatline_length
        if not 10 <= lo <= hi <= 60:
            raise InvalidConfigError("flat-line duration must lie within [10, 60] samples")
        lo, hi = self.spike_length
        if not 1 <= lo <= hi:
            raise InvalidConfigError("spike length range is invalid")
        for name, p in self.presets.items():
            if p.spike_sigma[0] < 4.0 or p.spike_sigma[1] < p.spike_sigma[0]:
                raise InvalidConfigError(f"{name}: spike magnitude must be at least 4 sigma")
            if len(p.amplitudes) != len(p.periods) or not 0 <= p.ar_coef < 1 or p.noise_scale <= 0:
                raise InvalidConfigError(f"{name}: malformed baseline preset")

    def expected_artifact_fraction(self) -> float:
        """Expected share of labeled samples per channel."""
        s_lo, s_hi = self.spike_length
        f_lo, f_hi = self.flatline_length
        return self.spike_rate * (s_lo + s_hi) / 2 + self.flatline_rate * (f_lo + f_hi) / 2


@dataclass
class SyntheticRecording(Recording):
    clean: dict[str, np.ndarray] = field(default_factory=dict)
    kinds: dict[str, np.ndarray] = field(default_factory=dict)  # 0 clean, 1 spike, 2 flat line


SPIKE, FLATLINE = 1, 2


def _baseline(preset: ChannelPreset, length: int, rng: np.random.Generator) -> np.ndarray:
    t = np.arange(length, dtype=np.float64)
    level = preset.level * rng.uniform(0.9, 1.1)
    x = np.full(length, level)
    for amp, period in zip(preset.amplitudes, preset.periods):
        p = period * rng.uniform(0.7, 1.3)
        x += amp * rng.uniform(0.7, 1.3) * np.sin(2 * np.pi * t / p + rng.uniform(0, 2 * np.pi))
    innov = preset.noise_scale * np.sqrt(1.0 - preset.ar_coef ** 2)
    e = rng.normal(0.0, innov, size=length)
    noise = np.empty(length)
    noise[0] = rng.normal(0.0, preset.noise_scale)
    for i in range(1, length):
        noise[i] = preset.ar_coef * noise[i - 1] + e[i]
    return x + noise


MAX_PLACEMENT_TRIES = 50


def _event_count(rate: float, length: int, rng: np.random.Generator) -> int:
    # rate * length rounded up or down at random: same mean as a binomial draw, far less spread
    mean = rate * length
    whole = int(np.floor(mean))
    return whole + int(rng.random() < mean - whole)


def _place(kinds: np.ndarray, n: int, rng: np.random.Generator) -> int | None:
    """Random free start for an event of ``n`` samples, or None if none was found."""
    L = len(kinds)
    if n > L:
        return None
    for _ in range(MAX_PLACEMENT_TRIES):
        start = int(rng.integers(0, L - n + 1))
        # keep a one-sample clean margin so events never touch
        if not kinds[max(0, start - 1):start + n + 1].any():
            return start
    return None


def _channel(preset: ChannelPreset, cfg: SynthConfig, rng: np.random.Generator):
    L = cfg.length
    clean = _baseline(preset, L, rng)
    x = clean.copy()
    kinds = np.zeros(L, dtype=np.int8)

    for _ in range(_event_count(cfg.flatline_rate, L, rng)):
        n = int(rng.integers(cfg.flatline_length[0], cfg.flatline_length[1] + 1))
        start = _place(kinds, n, rng)
        if start is not None:
            x[start:start + n] = clean[start]
            kinds[start:start + n] = FLATLINE

    for _ in range(_event_count(cfg.spike_rate, L, rng)):
        n = int(rng.integers(cfg.spike_length[0], cfg.spike_length[1] + 1))
        start = _place(kinds, n, rng)
        if start is not None:
            mag = rng.uniform(*preset.spike_sigma) * preset.noise_scale
            sign = rng.choice((-1.0, 1.0))
            x[start:start + n] = clean[start:start + n] + sign * mag
            kinds[start:start + n] = SPIKE

    if cfg.missing_rate > 0:
        drop = (rng.random(L) < cfg.missing_rate) & (kinds == 0)
        x[drop] = np.nan
    return x, clean, kinds


def generate(cfg: SynthConfig) -> list[SyntheticRecording]:
    """Labeled synthetic recordings; every altered sample carries label 1."""
    cfg.validate()
    seeds = np.random.SeedSequence(cfg.seed).spawn(cfg.n_recordings)
    width = len(str(cfg.n_recordings - 1))
    out = []
    for i, ss in enumerate(seeds):
        rng = np.random.default_rng(ss)
        chans, clean, kinds = {}, {}, {}
        for name, preset in cfg.presets.items():
            chans[name], clean[name], kinds[name] = _channel(preset, cfg, rng)
        out.append(SyntheticRecording(
            id=f"rec{i:0{width}d}",
            channels=chans,
            labels={k: (v > 0).astype(np.int8) for k, v in kinds.items()},
            clean=clean,
            kinds=kinds,
        ))
    return out


def with_overrides(cfg: SynthConfig, **kwargs) -> SynthConfig:
    return replace(cfg, **kwargs)


def write_corpus(recordings: list[SyntheticRecording], out_dir: str | Path) -> list[Path]:
    """Write recording CSVs plus ``<id>.clean.csv`` sidecars holding the clean baseline."""
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    paths = []
    for rec in recordings:
        p = out_dir / f"{rec.id}.csv"
        write_recording_csv(rec, p)
        sidecar = Recording(id=rec.id, channels=rec.clean, labels=rec.labels,
                            start_time=rec.start_time)
        write_recording_csv(sidecar, out_dir / f"{rec.id}.clean.csv")
        paths.append(p)
    return paths
