"""ARIMA residual detector.

Orders are chosen by AIC over ``d <= 2``, ``p <= max_p``, ``q <= max_q``.
Coefficients come from conditional least squares: a pure AR model is a
single regression on lagged values; with an MA part, innovations are first
estimated from a long autoregression and then refined by regressing on lagged
values and lagged residuals a few times (Hannan-Rissanen).  A sample is
flagged when its one-step-ahead residual is more than three fitted standard
deviations from the fitted residual mean.

Among candidates whose AIC is within ``AIC_TOLERANCE`` of the minimum, the one
with the fewest ARMA coefficients wins (ties broken by AIC); an exhaustive
grid otherwise tends to pick over-parameterized models on short series.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Sequence

import numpy as np
from scipy.signal import lfilter

from ..errors import SeriesTooShortError, SingularDesignError

MIN_LENGTH = 50
REFINE_ITERATIONS = 3
STD_FLOOR = 1e-12
AIC_TOLERANCE = 2.0


@dataclass
class ArimaModel:
    p: int
    d: int
    q: int
    ar: np.ndarray
    ma: np.ndarray
    intercept: float
    resid_mean: float
    resid_std: float
    aic: float = math.nan
    candidates: dict = field(default_factory=dict, repr=False)

    @property
    def order(self) -> tuple[int, int, int]:
        return (self.p, self.d, self.q)

    def residuals(self, series) -> np.ndarray:
        """One-step-ahead residuals aligned with ``series``; the first ``d + p`` are 0."""
        x = np.asarray(series, dtype=np.float64)
        w = np.diff(x, n=self.d) if self.d else x
        e = _innovations(w, self.p, self.ar, self.ma, self.intercept)
        out = np.zeros(len(x))
        out[self.d:] = e
        return out

    def to_dict(self) -> dict:
        return {
            "order": [self.p, self.d, self.q],
            "ar": self.ar.tolist(),
            "ma": self.ma.tolist(),
            "intercept": self.intercept,
            "resid_mean": self.resid_mean,
            "resid_std": self.resid_std,
            "aic": self.aic,
        }

    @classmethod
    def from_dict(cls, d: dict) -> "ArimaModel":
        p, dd, q = d["order"]
        return cls(p, dd, q, np.asarray(d["ar"], dtype=float), np.asarray(d["ma"], dtype=float),
                   float(d["intercept"]), float(d["resid_mean"]), float(d["resid_std"]),
                   float(d.get("aic", math.nan)))


def _lags(w: np.ndarray, k: int, start: int) -> np.ndarray:
    """Columns ``w[t-1], ..., w[t-k]`` for ``t = start .. len(w)-1``."""
    n = len(w) - start
    if k == 0:
        return np.empty((n, 0))
    return np.column_stack([w[start - j:len(w) - j] for j in range(1, k + 1)])


def _innovations(w: np.ndarray, p: int, ar: np.ndarray, ma: np.ndarray, c: float) -> np.ndarray:
    """Residuals of ``w_t = c + sum ar_i w_{t-i} + e_t + sum ma_j e_{t-j}``, zero before index p."""
    u = np.zeros(len(w))
    if len(w) > p:
        u[p:] = w[p:] - c - (_lags(w, p, p) @ ar if p else 0.0)
    if len(ma):
        return lfilter([1.0], np.concatenate([[1.0], ma]), u)
    return u


def _ols(X: np.ndarray, y: np.ndarray) -> np.ndarray:
    coef, _, rank, _ = np.linalg.lstsq(X, y, rcond=None)
    if rank < X.shape[1]:
        raise SingularDesignError(f"design matrix has rank {rank} < {X.shape[1]} columns")
    return coef


def _invertible(ma: np.ndarray) -> bool:
    if not len(ma):
        return True
    return bool(np.all(np.abs(np.roots(np.concatenate([[1.0], ma]))) < 1.0))


def _fit_pq(ws: list[np.ndarray], p: int, q: int):
    """Conditional least squares for one (p, q) on the differenced series."""
    start = max(p, q)
    if q == 0:
        X = np.vstack([np.column_stack([np.ones(len(w) - start), _lags(w, p, start)]) for w in ws])
        y = np.concatenate([w[start:] for w in ws])
        coef = _ols(X, y)
        return coef[1:], np.empty(0), float(coef[0])

    # long autoregression for initial innovation estimates
    m = min(max(10, 2 * (p + q)), min(len(w) for w in ws) // 4)
    X = np.vstack([np.column_stack([np.ones(len(w) - m), _lags(w, m, m)]) for w in ws])
    y = np.concatenate([w[m:] for w in ws])
    long_ar = _ols(X, y)
    resid = []
    for w in ws:
        e = np.zeros(len(w))
        e[m:] = w[m:] - long_ar[0] - _lags(w, m, m) @ long_ar[1:]
        resid.append(e)
    start = m + q

    ar = ma = None
    c = 0.0
    for _ in range(REFINE_ITERATIONS):
        X = np.vstack([
            np.column_stack([np.ones(len(w) - start), _lags(w, p, start), _lags(e, q, start)])
            for w, e in zip(ws, resid)
        ])
        y = np.concatenate([w[start:] for w in ws])
        coef = _ols(X, y)
        c, ar, ma = float(coef[0]), coef[1:1 + p], coef[1 + p:]
        if not _invertible(ma):
            break
        resid = [_innovations(w, p, ar, ma, c) for w in ws]
        start = max(p, q)
    return ar, ma, c


def fit_arima(series, max_p: int = 5, max_q: int = 3, max_d: int = 2) -> ArimaModel:
    """Select and fit the minimum-AIC ARIMA(p, d, q).

    ``series`` may be one array or a list of arrays (for instance the same
    signal from several recordings); each keeps its own lag structure.
    """
    if isinstance(series, np.ndarray) and series.ndim == 1:
        xs = [series]
    elif isinstance(series, Sequence) and series and np.ndim(series[0]) == 0:
        xs = [np.asarray(series, dtype=np.float64)]
    else:
        xs = [np.asarray(s, dtype=np.float64) for s in series]
    xs = [x for x in xs if len(x)]
    if not xs or min(len(x) for x in xs) < MIN_LENGTH:
        raise SeriesTooShortError(f"each series needs at least {MIN_LENGTH} samples")

    # score every candidate on the same original-time samples
    burn = max_d + max(max_p, max_q) + 10
    fitted: dict[tuple[int, int, int], ArimaModel] = {}
    for d in range(max_d + 1):
        ws = [np.diff(x, n=d) if d else x for x in xs]
        for p in range(max_p + 1):
            for q in range(max_q + 1):
                try:
                    ar, ma, c = _fit_pq(ws, p, q)
                except SingularDesignError:
                    continue
                if not _invertible(ma):
                    continue
                e = np.concatenate([
                    _innovations(w, p, ar, ma, c)[burn - d:] for w in ws
                ])
                if not np.all(np.isfinite(e)):
                    continue
                n = len(e)
                sigma2 = max(float(np.mean(e * e)), STD_FLOOR ** 2)
                k = p + q + 2  # coefficients, intercept, noise variance
                aic = n * math.log(sigma2) + 2 * k
                fitted[(p, d, q)] = ArimaModel(
                    p, d, q, np.asarray(ar, dtype=float), np.asarray(ma, dtype=float), c,
                    float(e.mean()), max(float(e.std()), STD_FLOOR), aic)
    if not fitted:
        raise SingularDesignError("no ARIMA candidate could be fitted")
    lowest = min(m.aic for m in fitted.values())
    close = [m for m in fitted.values() if m.aic <= lowest + AIC_TOLERANCE]
    best = min(close, key=lambda m: (m.p + m.q, m.aic))
    best.candidates = {k: m.aic for k, m in fitted.items()}
    return best


def arima_detect(model: ArimaModel, series, n_sigma: float = 3.0) -> np.ndarray:
    """Flag samples whose residual is more than ``n_sigma`` fitted std from the fitted mean."""
    r = model.residuals(series)
    flags = np.abs(r - model.resid_mean) > n_sigma * model.resid_std
    flags[:model.d + model.p] = False
    return flags.astype(np.int8)
