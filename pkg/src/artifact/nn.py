"""LSTM, self-attention and dense building blocks on top of :mod:`artifact.autodiff`.

Sequences are batched as ``(batch, time, features)`` tensors.  The LSTM layer
runs its whole time loop as a single recorded operation with a hand-written
backpropagation-through-time rule; :func:`lstm_cell` composes the same gate
equations from primitive ops and is kept as an independent reference.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from . import autodiff as ad
from .autodiff import Tensor, sigmoid_inplace
from .errors import ShapeMismatchError


def _uniform(rng: np.random.Generator, bound: float, shape) -> Tensor:
    return Tensor(rng.uniform(-bound, bound, size=shape), requires_grad=True)


def lstm_cell(x: Tensor, h: Tensor, c: Tensor, w_x: Tensor, w_h: Tensor, b: Tensor):
    """One LSTM step built from primitive ops; gate order is (input, forget, cell, output)."""
    hidden = h.shape[-1]
    z = ad.add(ad.matmul(x, w_x) + ad.matmul(h, w_h), b)
    i = ad.sigmoid(z[:, :hidden])
    f = ad.sigmoid(z[:, hidden:2 * hidden])
    g = ad.tanh(z[:, 2 * hidden:3 * hidden])
    o = ad.sigmoid(z[:, 3 * hidden:])
    c_new = f * c + i * g
    h_new = o * ad.tanh(c_new)
    return h_new, c_new


def lstm_sequence(x: Tensor, w_x: Tensor, w_h: Tensor, b: Tensor, reverse: bool = False,
                  h0: np.ndarray | None = None, c0: np.ndarray | None = None) -> Tensor:
    """Run one LSTM direction over ``x`` of shape (B, T, I); returns (B, T, H).

    With ``reverse`` the recurrence runs from the last step to the first, and
    outputs stay aligned with their input positions.
    """
    if x.ndim != 3:
        raise ShapeMismatchError(f"LSTM input must be (batch, time, features), got {x.shape}")
    bsz, steps, n_in = x.shape
    if steps < 1:
        raise ShapeMismatchError("LSTM needs a sequence of length >= 1")
    hidden = w_h.shape[0]
    if w_x.shape != (n_in, 4 * hidden) or w_h.shape != (hidden, 4 * hidden) or b.shape != (4 * hidden,):
        raise ShapeMismatchError(
            f"LSTM weights {w_x.shape}, {w_h.shape}, {b.shape} do not fit input width {n_in}"
        )
    h = np.zeros((bsz, hidden)) if h0 is None else np.broadcast_to(h0, (bsz, hidden)).copy()
    c = np.zeros((bsz, hidden)) if c0 is None else np.broadcast_to(c0, (bsz, hidden)).copy()
    h_init, c_init = h.copy(), c.copy()

    # time-major buffers keep each step's slice contiguous
    x_tm = np.ascontiguousarray(np.swapaxes(x.data, 0, 1))
    xw = (x_tm.reshape(-1, n_in) @ w_x.data).reshape(steps, bsz, 4 * hidden)
    xw += b.data
    order = range(steps - 1, -1, -1) if reverse else range(steps)
    gates = np.empty((steps, bsz, 4 * hidden))
    cells = np.empty((steps, bsz, hidden))
    tanh_c = np.empty((steps, bsz, hidden))
    hs = np.empty((steps, bsz, hidden))
    wh = w_h.data
    H2, H3 = 2 * hidden, 3 * hidden
    # the cell candidate uses tanh(z) = 2 * sigmoid(2z) - 1 so one pass covers all gates
    xw[:, :, H2:H3] *= 2.0
    wh2 = wh.copy()
    wh2[:, H2:H3] *= 2.0
    for t in order:
        act = gates[t]
        np.dot(h, wh2, out=act)
        act += xw[t]
        sigmoid_inplace(act)
        cand = act[:, H2:H3]
        cand *= 2.0
        cand -= 1.0
        c = act[:, hidden:H2] * c + act[:, :hidden] * act[:, H2:H3]
        tc = np.tanh(c)
        h = act[:, H3:] * tc
        cells[t] = c
        tanh_c[t] = tc
        hs[t] = h
    out = np.ascontiguousarray(np.swapaxes(hs, 0, 1))

    def backward(grad_out):
        g_tm = np.swapaxes(grad_out, 0, 1)
        # previous-step state for every t, in recurrence order
        if reverse:
            c_prev = np.concatenate([cells[1:], c_init[None]])
            h_prev = np.concatenate([hs[1:], h_init[None]])
        else:
            c_prev = np.concatenate([c_init[None], cells[:-1]])
            h_prev = np.concatenate([h_init[None], hs[:-1]])
        i, f = gates[..., :hidden], gates[..., hidden:H2]
        g, o = gates[..., H2:H3], gates[..., H3:]
        # local derivatives of the gate pre-activations, vectorized over time
        coef = np.empty((steps, bsz, 3, hidden))
        coef[:, :, 0] = g * i * (1.0 - i)
        coef[:, :, 1] = c_prev * f * (1.0 - f)
        coef[:, :, 2] = i * (1.0 - g * g)
        d_out = tanh_c * o * (1.0 - o)
        d_cell = o * (1.0 - tanh_c * tanh_c)
        dz_all = np.empty((steps, bsz, 4, hidden))
        dh_next = np.zeros((bsz, hidden))
        dc_next = np.zeros((bsz, hidden))
        wh_t = np.ascontiguousarray(wh.T)
        for t in reversed(order):
            dh = g_tm[t] + dh_next
            dc = dh * d_cell[t] + dc_next
            dz = dz_all[t]
            np.multiply(dc[:, None, :], coef[t], out=dz[:, :3])
            np.multiply(dh, d_out[t], out=dz[:, 3])
            dh_next = dz.reshape(bsz, 4 * hidden) @ wh_t
            dc_next = dc * f[t]
        flat = dz_all.reshape(-1, 4 * hidden)
        d_wh = h_prev.reshape(-1, hidden).T @ flat
        d_x = np.swapaxes((flat @ w_x.data.T).reshape(steps, bsz, n_in), 0, 1)
        d_wx = x_tm.reshape(-1, n_in).T @ flat
        d_b = flat.sum(axis=0)
        return d_x, d_wx, d_wh, d_b

    return ad.custom_op(out, (x, w_x, w_h, b), backward, "lstm_rev" if reverse else "lstm")


@dataclass
class LstmLayer:
    """Single LSTM layer, optionally bidirectional (output width ``2 * hidden``)."""

    input_size: int
    hidden_size: int
    bidirectional: bool = False
    params: dict[str, Tensor] = field(default_factory=dict)

    @classmethod
    def create(cls, input_size: int, hidden_size: int, bidirectional: bool,
               rng: np.random.Generator) -> "LstmLayer":
        layer = cls(input_size, hidden_size, bidirectional)
        bound = 1.0 / math.sqrt(hidden_size)
        for d in layer.directions:
            layer.params[f"{d}.w_x"] = _uniform(rng, bound, (input_size, 4 * hidden_size))
            layer.params[f"{d}.w_h"] = _uniform(rng, bound, (hidden_size, 4 * hidden_size))
            bias = np.zeros(4 * hidden_size)
            bias[hidden_size:2 * hidden_size] = 1.0
            layer.params[f"{d}.b"] = Tensor(bias, requires_grad=True)
        return layer

    @property
    def directions(self) -> tuple[str, ...]:
        return ("fwd", "bwd") if self.bidirectional else ("fwd",)

    @property
    def output_size(self) -> int:
        return self.hidden_size * (2 if self.bidirectional else 1)

    def __call__(self, x: Tensor) -> Tensor:
        if x.shape[-1] != self.input_size:
            raise ShapeMismatchError(f"expected input width {self.input_size}, got {x.shape[-1]}")
        p = self.params
        fwd = lstm_sequence(x, p["fwd.w_x"], p["fwd.w_h"], p["fwd.b"])
        if not self.bidirectional:
            return fwd
        bwd = lstm_sequence(x, p["bwd.w_x"], p["bwd.w_h"], p["bwd.b"], reverse=True)
        return ad.concat([fwd, bwd], axis=-1)


def self_attention(h: Tensor, return_weights: bool = False):
    """Parameter-free scaled dot-product self-attention over the time axis.

    Each output position is the softmax-weighted average of all positions,
    with scores ``h_i . h_j / sqrt(width)``.
    """
    if h.ndim != 3:
        raise ShapeMismatchError(f"attention input must be (batch, time, width), got {h.shape}")
    scores = ad.mul(ad.matmul(h, ad.transpose(h)), 1.0 / math.sqrt(h.shape[-1]))
    weights = ad.softmax(scores, axis=-1)
    out = ad.matmul(weights, h)
    return (out, weights) if return_weights else out


@dataclass
class DenseLayer:
    in_features: int
    out_features: int
    activation: str | None = None
    params: dict[str, Tensor] = field(default_factory=dict)

    @classmethod
    def create(cls, in_features: int, out_features: int, rng: np.random.Generator,
               activation: str | None = None) -> "DenseLayer":
        layer = cls(in_features, out_features, activation)
        layer.params["w"] = _uniform(rng, 1.0 / math.sqrt(in_features), (in_features, out_features))
        layer.params["b"] = Tensor(np.zeros(out_features), requires_grad=True)
        return layer

    def __call__(self, x: Tensor) -> Tensor:
        if x.shape[-1] != self.in_features:
            raise ShapeMismatchError(f"expected input width {self.in_features}, got {x.shape[-1]}")
        y = ad.add(ad.matmul(x, self.params["w"]), self.params["b"])
        if self.activation == "sigmoid":
            y = ad.sigmoid(y)
        return y


def collect_params(prefix: str, layer) -> dict[str, Tensor]:
    return {f"{prefix}.{k}": v for k, v in layer.params.items()}
