"""Exact t-SNE, window artifact counts and static SVG plots.

The t-SNE here is the plain O(n^2) algorithm: per-point Gaussian bandwidths
found by bisection on the perplexity, symmetrized input affinities,
Student-t output affinities and momentum gradient descent with adaptive
gains and an early-exaggeration phase.
"""

from __future__ import annotations

import csv
import logging
import math
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .errors import LengthMismatchError, PerplexityTooLargeError, TooFewPointsError

log = logging.getLogger(__name__)

MIN_POINTS = 5
P_FLOOR = 1e-12


@dataclass(frozen=True)
class TsneConfig:
    perplexity: float = 5.0
    n_iter: int = 1000
    learning_rate: float | str = "auto"
    exaggeration: float = 12.0
    exaggeration_iters: int = 250
    momentum: float = 0.5
    final_momentum: float = 0.8
    min_gain: float = 0.01
    tol: float = 1e-5
    seed: int = 0

    def rate(self, n: int) -> float:
        """``"auto"`` scales the step with the number of points, ``max(n / (4 * exaggeration), 50)``."""
        if self.learning_rate == "auto":
            return max(n / (4.0 * self.exaggeration), 50.0)
        return float(self.learning_rate)

    def validate(self, n: int) -> None:
        if n < MIN_POINTS:
            raise TooFewPointsError(f"t-SNE needs at least {MIN_POINTS} points, got {n}")
        if not self.perplexity < n:
            raise PerplexityTooLargeError(f"perplexity {self.perplexity} must be below n={n}")
        if self.perplexity <= 1.0:
            raise ValueError("perplexity must exceed 1")
        if self.n_iter < 250:
            raise ValueError("need at least 250 iterations")


@dataclass
class TsneResult:
    embedding: np.ndarray
    kl_trace: np.ndarray
    entropy_error: np.ndarray  # |H_i - log2(perplexity)| per point, in bits
    converged: np.ndarray = field(repr=False)


def squared_distances(X: np.ndarray) -> np.ndarray:
    sq = np.sum(X * X, axis=1)
    D = sq[:, None] + sq[None, :] - 2.0 * X @ X.T
    np.maximum(D, 0.0, out=D)
    np.fill_diagonal(D, 0.0)
    return D


def _row_entropy(d: np.ndarray, beta: float) -> tuple[float, np.ndarray]:
    """Shannon entropy in bits of ``p_j ∝ exp(-beta d_j)`` and the distribution."""
    shifted = d - d.min()
    w = np.exp(-beta * shifted)
    s = w.sum()
    p = w / s
    h = beta * float(np.dot(p, shifted)) + math.log(s)
    return h / math.log(2.0), p


def conditional_affinities(D: np.ndarray, perplexity: float, tol: float = 1e-5,
                           max_steps: int = 200):
    """Bisection on the precision ``beta_i = 1 / (2 sigma_i^2)`` of every row.

    Returns the row-stochastic matrix, the precisions and the final entropy
    error of each row in bits.
    """
    n = len(D)
    target = math.log2(perplexity)
    P = np.zeros((n, n))
    betas = np.ones(n)
    err = np.zeros(n)
    for i in range(n):
        d = np.delete(D[i], i)
        lo, hi, beta = 0.0, math.inf, 1.0 / max(float(np.median(d)), 1e-12)
        for _ in range(max_steps):
            h, p = _row_entropy(d, beta)
            diff = h - target
            if abs(diff) <= tol:
                break
            if diff > 0:  # too flat: sharpen
                lo = beta
                beta = beta * 2.0 if hi == math.inf else 0.5 * (beta + hi)
            else:
                hi = beta
                beta = 0.5 * (beta + lo)
        h, p = _row_entropy(d, beta)
        err[i] = abs(h - target)
        betas[i] = beta
        P[i, np.arange(n) != i] = p
    return P, betas, err


def joint_affinities(X: np.ndarray, perplexity: float, tol: float = 1e-5):
    P_cond, _, err = conditional_affinities(squared_distances(X), perplexity, tol)
    P = (P_cond + P_cond.T) / (2.0 * len(X))
    return np.maximum(P, P_FLOOR), err


def _q_and_grad(Y: np.ndarray, P: np.ndarray):
    num = 1.0 / (1.0 + squared_distances(Y))
    np.fill_diagonal(num, 0.0)
    Q = np.maximum(num / num.sum(), P_FLOOR)
    W = (P - Q) * num
    grad = 4.0 * (np.diag(W.sum(axis=1)) - W) @ Y
    return Q, grad


def kl_divergence(P: np.ndarray, Q: np.ndarray) -> float:
    mask = ~np.eye(len(P), dtype=bool)
    return float(np.sum(P[mask] * np.log(P[mask] / Q[mask])))


def tsne(points, cfg: TsneConfig | None = None) -> TsneResult:
    """Embed ``points`` (n, H) in two dimensions."""
    cfg = cfg or TsneConfig()
    X = np.asarray(points, dtype=np.float64)
    if X.ndim != 2:
        raise ValueError("points must be a 2-D array")
    cfg.validate(len(X))
    P, err = joint_affinities(X, cfg.perplexity, cfg.tol)
    converged = err <= 1e-3
    if not converged.all():
        log.warning("perplexity search did not converge for %d point(s)", int((~converged).sum()))

    rng = np.random.default_rng(cfg.seed)
    n = len(X)
    # identical inputs share a starting point, so their gradients stay identical
    _, first, inverse = np.unique(X, axis=0, return_index=True, return_inverse=True)
    rep = first[inverse.ravel()]
    tied = bool(np.any(rep != np.arange(n)))
    Y = rng.normal(0.0, 1e-4, size=(n, 2))[rep]
    lr = cfg.rate(n)
    update = np.zeros_like(Y)
    gains = np.ones_like(Y)
    trace = np.empty(cfg.n_iter)
    for it in range(cfg.n_iter):
        exaggerating = it < cfg.exaggeration_iters
        P_eff = P * cfg.exaggeration if exaggerating else P
        Q, grad = _q_and_grad(Y, P_eff)
        mom = cfg.momentum if exaggerating else cfg.final_momentum
        same_sign = np.sign(grad) == np.sign(update)
        gains = np.where(same_sign, gains * 0.8, gains + 0.2)
        np.maximum(gains, cfg.min_gain, out=gains)
        update = mom * update - lr * gains * grad
        Y = Y + update
        if tied:
            # rounding would otherwise split points that are exactly equal
            Y = Y[rep]
            update = update[rep]
            gains = gains[rep]
        Y = Y - Y.mean(axis=0)
        trace[it] = kl_divergence(P, Q)
    return TsneResult(Y, trace, err, converged)


def silhouette(Y: np.ndarray, labels) -> float:
    """Mean silhouette coefficient with Euclidean distance."""
    labels = np.asarray(labels)
    D = np.sqrt(squared_distances(np.asarray(Y, dtype=np.float64)))
    ids = np.unique(labels)
    if len(ids) < 2:
        raise ValueError("silhouette needs at least two clusters")
    s = np.zeros(len(Y))
    for i in range(len(Y)):
        own = labels == labels[i]
        n_own = own.sum() - 1
        if n_own == 0:
            continue
        a = D[i, own].sum() / n_own
        b = min(D[i, labels == k].mean() for k in ids if k != labels[i])
        s[i] = (b - a) / max(a, b)
    return float(s.mean())


def window_artifact_count(labels, window: int | None = None) -> int:
    """Number of artifact samples in one window's label slice."""
    y = np.asarray(labels)
    if window is not None and len(y) != window:
        raise LengthMismatchError(f"label slice has length {len(y)}, expected {window}")
    return int(np.sum(y != 0))


def window_summaries(model, windows, batch_size: int = 512) -> np.ndarray:
    """One vector per window: the time-average of its per-step latent means.

    ``windows`` is an (N, W) array or anything with such a ``values`` attribute.
    """
    mu = model.encode_mean(getattr(windows, "values", windows), batch_size=batch_size)
    return mu.mean(axis=1)


def write_coordinates_csv(path, Y: np.ndarray, counts) -> None:
    counts = np.asarray(counts)
    if len(counts) != len(Y):
        raise LengthMismatchError("one artifact count per embedded point is required")
    with Path(path).open("w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["x", "y", "artifact_count"])
        for (x, y), c in zip(Y, counts):
            w.writerow([repr(float(x)), repr(float(y)), int(c)])


def read_coordinates_csv(path):
    with Path(path).open(newline="") as fh:
        rows = list(csv.DictReader(fh))
    Y = np.array([[float(r["x"]), float(r["y"])] for r in rows]).reshape(-1, 2)
    counts = np.array([int(r["artifact_count"]) for r in rows], dtype=np.int64)
    return Y, counts


# SVG output; fixed hash salt and no date so repeated runs are byte-identical

def _pyplot():
    import matplotlib

    matplotlib.use("Agg")
    import matplotlib.pyplot as plt

    matplotlib.rcParams["svg.hashsalt"] = "artifact"
    return plt


def _save_svg(fig, path) -> None:
    fig.savefig(path, format="svg", metadata={"Date": None, "Creator": None})


def scatter_svg(path, Y: np.ndarray, counts, title: str = "latent windows") -> None:
    plt = _pyplot()
    fig, ax = plt.subplots(figsize=(6, 5))
    try:
        sc = ax.scatter(Y[:, 0], Y[:, 1], c=np.asarray(counts), cmap="viridis", s=6)
        fig.colorbar(sc, ax=ax, label="artifact samples in window")
        ax.set_title(title)
        ax.set_xticks([])
        ax.set_yticks([])
        _save_svg(fig, path)
    finally:
        plt.close(fig)


def _spans(flags: np.ndarray):
    f = np.concatenate([[0], np.asarray(flags, dtype=np.int8), [0]])
    edges = np.flatnonzero(np.diff(f))
    return list(zip(edges[::2], edges[1::2]))


def overlay_svg(path, rec, detections: dict, channels=None) -> None:
    """Signal traces with flagged spans shaded, one panel per channel.

    ``detections`` maps channel name to a 0/1 array; the true labels, when
    present, are drawn as a strip under each trace.
    """
    plt = _pyplot()
    chans = list(channels or detections)
    fig, axes = plt.subplots(len(chans), 1, figsize=(10, 2.2 * len(chans)), sharex=True,
                             squeeze=False)
    try:
        t = np.arange(rec.length)
        for ax, ch in zip(axes[:, 0], chans):
            x = rec.channels[ch]
            ax.plot(t, x, lw=0.6, color="black")
            for a, b in _spans(detections[ch]):
                ax.axvspan(a - 0.5, b - 0.5, color="tab:red", alpha=0.3, lw=0)
            truth = rec.label(ch)
            if truth is not None:
                lo = np.nanmin(x)
                for a, b in _spans(truth):
                    ax.hlines(lo, a - 0.5, b - 0.5, color="tab:blue", lw=3)
            ax.set_ylabel(ch)
        axes[-1, 0].set_xlabel("sample (minute)")
        axes[0, 0].set_title(f"{rec.id}: flagged (shaded) vs labeled (bars)")
        fig.tight_layout()
        _save_svg(fig, path)
    finally:
        plt.close(fig)
