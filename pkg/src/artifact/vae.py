"""Sequence beta-VAE with one latent vector per time step.

Encoder: two stacked LSTM layers, scaled dot-product self-attention, and two
dense heads giving the posterior mean and log-variance at every position.
Decoder: two stacked LSTM layers and a dense layer producing one value per
position.  The loss per window is

    0.5 * sum_t (x_t - xhat_t)^2 + beta * KL(q(z|x) || N(0, I)),

with the KL summed over time steps and latent dimensions; a batch loss is the
mean over windows.
"""

from __future__ import annotations

import logging
import math
from dataclasses import asdict, dataclass, field
from pathlib import Path
from typing import Any

import numpy as np

from . import autodiff as ad
from . import serialize
from .autodiff import Tensor
from .errors import (
    DivergedLossError,
    EmptyDatasetError,
    LengthMismatchError,
    NonFiniteActivationError,
    NonFiniteLossError,
    ShapeMismatchError,
)
from .nn import DenseLayer, LstmLayer, collect_params, self_attention
from .timeseries import SegmentSet

log = logging.getLogger(__name__)


@dataclass
class TrainConfig:
    lr: float = 1e-3
    latent_dim: int = 8
    beta: float = 0.1
    n_epochs: int = 8
    window_size: int = 15
    bidirectional: bool = False
    batch_size: int = 256
    seed: int = 0
    attention: bool = True

    def to_dict(self) -> dict[str, Any]:
        return asdict(self)


@dataclass
class LossTerms:
    total: Tensor
    recon: float
    kl: float


@dataclass
class SequenceVAE:
    window: int
    latent_dim: int
    beta: float
    bidirectional: bool = False
    attention: bool = True
    layers: dict[str, Any] = field(default_factory=dict)
    history: list[dict[str, float]] = field(default_factory=list)

    @classmethod
    def create(cls, window: int, latent_dim: int, beta: float, bidirectional: bool = False,
               attention: bool = True, rng: np.random.Generator | int | None = 0) -> "SequenceVAE":
        if beta <= 0:
            raise ValueError("beta must be positive")
        if window < 2 or latent_dim < 1:
            raise ValueError("window must be >= 2 and latent_dim >= 1")
        rng = np.random.default_rng(rng)
        m = cls(window, latent_dim, beta, bidirectional, attention)
        H = latent_dim
        enc1 = LstmLayer.create(1, H, bidirectional, rng)
        enc2 = LstmLayer.create(enc1.output_size, H, bidirectional, rng)
        dec1 = LstmLayer.create(H, H, bidirectional, rng)
        dec2 = LstmLayer.create(dec1.output_size, H, bidirectional, rng)
        m.layers = {
            "enc_lstm1": enc1,
            "enc_lstm2": enc2,
            "enc_mu": DenseLayer.create(enc2.output_size, H, rng),
            "enc_logvar": DenseLayer.create(enc2.output_size, H, rng),
            "dec_lstm1": dec1,
            "dec_lstm2": dec2,
            "dec_out": DenseLayer.create(dec2.output_size, 1, rng),
        }
        return m

    def parameters(self) -> dict[str, Tensor]:
        out: dict[str, Tensor] = {}
        for name, layer in self.layers.items():
            out.update(collect_params(name, layer))
        return out

    def zero_(self) -> "SequenceVAE":
        for p in self.parameters().values():
            p.data[...] = 0.0
        return self

    def _as_batch(self, x) -> np.ndarray:
        x = np.asarray(x, dtype=np.float64)
        if x.ndim == 1:
            x = x[None, :]
        if x.ndim != 2 or x.shape[1] != self.window:
            raise LengthMismatchError(f"expected windows of length {self.window}, got shape {x.shape}")
        return x

    def encode(self, x) -> tuple[Tensor, Tensor]:
        """Posterior mean and log-variance, each of shape (batch, W, latent_dim)."""
        xb = Tensor(self._as_batch(x)[:, :, None])
        L = self.layers
        h = L["enc_lstm2"](L["enc_lstm1"](xb))
        if self.attention:
            h = self_attention(h)
        mu, logvar = L["enc_mu"](h), L["enc_logvar"](h)
        if not (np.isfinite(mu.data).all() and np.isfinite(logvar.data).all()):
            raise NonFiniteActivationError("encoder produced non-finite activations")
        return mu, logvar

    def decode(self, z: Tensor) -> Tensor:
        L = self.layers
        out = L["dec_out"](L["dec_lstm2"](L["dec_lstm1"](z)))
        return ad.reshape(out, out.shape[:2])

    def encode_mean(self, x, batch_size: int = 1024) -> np.ndarray:
        """Posterior means for many windows without recording a graph."""
        x = self._as_batch(x)
        parts = []
        with ad.no_grad():
            for i in range(0, len(x), batch_size):
                parts.append(self.encode(x[i:i + batch_size])[0].data)
        return np.concatenate(parts) if parts else np.empty((0, self.window, self.latent_dim))

    def loss(self, x, rng: np.random.Generator | None = None,
             eps: np.ndarray | None = None) -> LossTerms:
        xb = self._as_batch(x)
        mu, logvar = self.encode(xb)
        z = reparameterize(mu, logvar, rng=rng, eps=eps)
        xhat = self.decode(z)
        return elbo_terms(xb, xhat, mu, logvar, self.beta)

    def n_parameters(self, prefix: str = "") -> int:
        return sum(p.data.size for k, p in self.parameters().items() if k.startswith(prefix))

    # persistence

    def metadata(self) -> dict[str, Any]:
        return {
            "window": self.window,
            "latent_dim": self.latent_dim,
            "beta": self.beta,
            "bidirectional": self.bidirectional,
            "attention": self.attention,
            "kl_reduction": "sum over time steps and latent dims, mean over batch",
            "likelihood": "unit-variance gaussian",
            "layer_sizes": {
                name: [layer.input_size, layer.hidden_size] if isinstance(layer, LstmLayer)
                else [layer.in_features, layer.out_features]
                for name, layer in self.layers.items()
            },
            "history": self.history,
        }

    def save(self, path: str | Path) -> None:
        serialize.save(path, "vae", self.metadata(),
                       {k: v.data for k, v in self.parameters().items()})

    @classmethod
    def load(cls, path: str | Path) -> "SequenceVAE":
        meta, arrays = serialize.load(path, "vae")
        return cls.from_arrays(meta, arrays)

    @classmethod
    def from_arrays(cls, meta: dict, arrays: dict[str, np.ndarray]) -> "SequenceVAE":
        m = cls.create(meta["window"], meta["latent_dim"], meta["beta"],
                       meta["bidirectional"], meta.get("attention", True), rng=0)
        params = m.parameters()
        if set(params) != set(arrays):
            raise ShapeMismatchError(
                f"model file arrays {sorted(set(arrays) ^ set(params))} do not match the architecture"
            )
        for k, p in params.items():
            if arrays[k].shape != p.shape:
                raise ShapeMismatchError(f"{k}: stored shape {arrays[k].shape} != expected {p.shape}")
            p.data[...] = arrays[k]
        m.history = list(meta.get("history", []))
        return m


def reparameterize(mu: Tensor, logvar: Tensor, rng: np.random.Generator | None = None,
                   eps: np.ndarray | None = None) -> Tensor:
    """``mu + exp(logvar / 2) * eps`` with ``eps`` standard normal and held constant."""
    if mu.shape != logvar.shape:
        raise ShapeMismatchError(f"mu {mu.shape} and logvar {logvar.shape} differ")
    if eps is None:
        if rng is None:
            raise ValueError("need an rng or explicit eps")
        eps = rng.standard_normal(mu.shape)
    eps = np.asarray(eps, dtype=np.float64)
    if eps.shape != mu.shape:
        raise ShapeMismatchError(f"eps shape {eps.shape} != {mu.shape}")
    return ad.add(mu, ad.mul(ad.exp(ad.mul(logvar, 0.5)), Tensor(eps)))


def kl_terms(mu: Tensor, logvar: Tensor) -> Tensor:
    """Elementwise KL(N(mu, exp(logvar)) || N(0, 1))."""
    return ad.mul(ad.sub(ad.add(ad.square(mu), ad.exp(logvar)), ad.add(logvar, 1.0)), 0.5)


def elbo_terms(x: np.ndarray, xhat: Tensor, mu: Tensor, logvar: Tensor, beta: float) -> LossTerms:
    """Negative ELBO averaged over the batch, plus its two parts as floats."""
    n = x.shape[0]
    resid = ad.sub(xhat, Tensor(x))
    recon = ad.mul(ad.tsum(ad.square(resid)), 0.5 / n)
    kl = ad.mul(ad.tsum(kl_terms(mu, logvar)), 1.0 / n)
    total = ad.add(recon, ad.mul(kl, beta))
    if not np.isfinite(total.data):
        raise NonFiniteLossError("loss is not finite")
    return LossTerms(total, float(recon.data), float(kl.data))


def elbo_loss(model: SequenceVAE, x, rng: np.random.Generator | None = None,
              eps: np.ndarray | None = None) -> Tensor:
    return model.loss(x, rng=rng, eps=eps).total


def _segment_values(segments) -> np.ndarray:
    if isinstance(segments, SegmentSet):
        return segments.values
    return np.asarray(segments, dtype=np.float64)


def train_vae(segments, cfg: TrainConfig, model: SequenceVAE | None = None) -> SequenceVAE:
    """Fit a VAE with Adam on shuffled mini-batches; per-epoch loss goes to ``model.history``."""
    x = _segment_values(segments)
    if x.ndim != 2 or x.shape[0] == 0:
        raise EmptyDatasetError("no training segments")
    if x.shape[1] != cfg.window_size:
        raise LengthMismatchError(f"segments have length {x.shape[1]}, config says {cfg.window_size}")
    rng = np.random.default_rng(cfg.seed)
    if model is None:
        model = SequenceVAE.create(cfg.window_size, cfg.latent_dim, cfg.beta, cfg.bidirectional,
                                   cfg.attention, rng=rng)
    params = list(model.parameters().values())
    opt = ad.Adam(params, lr=cfg.lr)
    n = x.shape[0]
    n_batches = math.ceil(n / cfg.batch_size)
    for epoch in range(1, cfg.n_epochs + 1):
        order = rng.permutation(n)
        tot = rec = kl = 0.0
        kl_min = math.inf
        for b in range(n_batches):
            idx = order[b * cfg.batch_size:(b + 1) * cfg.batch_size]
            try:
                terms = model.loss(x[idx], rng=rng)
            except (NonFiniteLossError, NonFiniteActivationError) as exc:
                raise DivergedLossError(f"training diverged at epoch {epoch}: {exc}") from None
            terms.total.backward()
            opt.step()
            w = len(idx) / n
            tot += float(terms.total.data) * w
            rec += terms.recon * w
            kl += terms.kl * w
            kl_min = min(kl_min, terms.kl)
        model.history.append({"epoch": epoch, "loss": tot, "recon": rec, "kl": kl, "kl_min": kl_min})
        log.info("epoch %d/%d loss %.5f recon %.5f kl %.5f", epoch, cfg.n_epochs, tot, rec, kl)
    return model
