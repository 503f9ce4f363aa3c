"""Learnable bit widths and temporal lengths.

Real-valued parameters ``b_w_hat``, ``b_s_hat[t]`` and ``t_hat`` are
materialized to integers by clip-then-round; gradients pass straight
through inside the clip region.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Sequence

import numpy as np

from .errors import InvalidArgument
from .neuron import SpikeTrain
from .quant_core import (
    bits_gq,
    grad_scale,
    quant_range,
    quantize_codes,
    round_half_away,
    step_gq,
)


def materialize(x_hat: float, bound: int) -> int:
    if bound < 1:
        raise InvalidArgument(f"bound must be >= 1, got {bound}")
    return int(round_half_away(np.clip(x_hat, 1, bound)))


def materialize_mask(x_hat: float, bound: int) -> float:
    """STE derivative of :func:`materialize`: 1 inside ``[1, bound]``, else 0."""
    return 1.0 if 1 <= x_hat <= bound else 0.0


@dataclass
class LayerBitParams:
    b_w_hat: float
    b_s_hat: np.ndarray
    t_hat: float
    B_w_bound: int = 6
    B_s_bound: int = 6
    T_bound: int = 3

    def __post_init__(self):
        self.b_s_hat = np.asarray(self.b_s_hat, dtype=np.float64).reshape(-1)
        if min(self.B_w_bound, self.B_s_bound, self.T_bound) < 1:
            raise InvalidArgument("bit bounds must be >= 1")
        if self.b_s_hat.size != self.T_bound:
            raise InvalidArgument("b_s_hat needs one slot per timestep bound")

    @classmethod
    def initial(cls, w: float, s: float, t: float, bounds=(6, 6, 3)) -> "LayerBitParams":
        bw, bs, bt = bounds
        return cls(float(w), np.full(bt, float(s)), float(t), bw, bs, bt)

    @property
    def B_w(self) -> int:
        return materialize(self.b_w_hat, self.B_w_bound)

    @property
    def T(self) -> int:
        return materialize(self.t_hat, self.T_bound)

    def B_s(self, t: int) -> int:
        return materialize(self.b_s_hat[t], self.B_s_bound)

    @property
    def B_s_slots(self) -> list[int]:
        return [self.B_s(t) for t in range(self.T)]


@dataclass(frozen=True)
class RegulatingTargets:
    B_w_tar: float = 2.0
    B_s_tar: float = 2.0
    T_tar: float = 1.0
    lambda1: float = 4e-2
    lambda2: float = 4e-2
    lambda3: float = 1e-2

    def __post_init__(self):
        if min(self.B_w_tar, self.B_s_tar, self.T_tar) < 1:
            raise InvalidArgument("targets must be >= 1")
        if min(self.lambda1, self.lambda2, self.lambda3) < 0:
            raise InvalidArgument("penalty coefficients must be non-negative")


def _as_slots(bits, T):
    bits = np.asarray(bits, dtype=np.int64).reshape(-1)
    if bits.size == 1:
        bits = np.repeat(bits, T)
    if bits.size != T:
        raise InvalidArgument(f"expected {T} per-timestep bit widths, got {bits.size}")
    return bits


def spike_bits_grad(v_over_V1, bits_t, upstream, bidirectional: bool = False,
                    scaled: bool = True) -> float:
    """Gradient of the loss with respect to the spike bit width.

    ``v_over_V1`` and ``upstream`` (dL/dS, on integer codes) are shaped
    ``[T, *features]``. Unsigned neurons only saturate above ``q_max``;
    bidirectional ones saturate on both sides.
    """
    x = np.asarray(v_over_V1, dtype=np.float64)
    up = np.asarray(upstream, dtype=np.float64)
    if x.shape != up.shape:
        raise InvalidArgument(f"shape mismatch: {x.shape} vs {up.shape}")
    if x.ndim == 0:
        x, up = x.reshape(1, 1), up.reshape(1, 1)
    elif x.ndim == 1:
        x, up = x[:, None], up[:, None]
    bits = _as_slots(bits_t, x.shape[0])
    n = x[0].size
    total = 0.0
    for t in range(x.shape[0]):
        r = quant_range(bits[t], bidirectional)
        gq = bits_gq(x[t], r)
        if not bidirectional:
            gq = np.where(x[t] > r.q_max, gq, 0.0)
        g = grad_scale(n, r) if scaled else 1.0
        total += float(np.sum(up[t] * gq)) * g
    return total


def threshold_grad(v, V1_t: float, bits_t: int, upstream, bidirectional: bool = False,
                   scaled: bool = True) -> float:
    """Gradient with respect to one temporal slot of the firing threshold.

    ``upstream`` is dL/dS on the integer codes of that slot.
    """
    if not V1_t > 0:
        raise InvalidArgument("threshold V1 must be positive")
    v = np.asarray(v, dtype=np.float64)
    up = np.asarray(upstream, dtype=np.float64)
    if v.shape != up.shape:
        raise InvalidArgument(f"shape mismatch: {v.shape} vs {up.shape}")
    r = quant_range(bits_t, bidirectional)
    ratio = v / V1_t
    codes = quantize_codes(ratio, bits_t, bidirectional)
    gq = step_gq(ratio, codes, r)
    g = grad_scale(max(v.size, 1), r) if scaled else 1.0
    return float(np.sum(up * gq)) * g / V1_t


def temporal_grad(train: SpikeTrain | np.ndarray, upstream_on_squeezed, steps=None) -> float:
    """d/dT of ``(1/T) sum_t x_t`` with T continuous and the sum fixed.

    ``steps`` optionally gives one dequantization scale per timestep; with
    it the train is differentiated in value space instead of code space.
    """
    codes = train.codes if isinstance(train, SpikeTrain) else np.asarray(train)
    T = codes.shape[0]
    if T < 1:
        raise InvalidArgument("T must be >= 1")
    vals = codes.astype(np.float64)
    if steps is not None:
        vals = vals * np.asarray(steps, dtype=np.float64).reshape((T,) + (1,) * (vals.ndim - 1))
    up = np.asarray(upstream_on_squeezed, dtype=np.float64)
    return float(np.sum(up * vals.sum(axis=0))) * (-1.0 / T**2)


@dataclass
class LayerAlloc:
    """Materialized allocation of one layer, for averaging and costing.

    ``n_f`` is the number of spike feature elements per timestep (0 for a
    non-spiking head); ``B_s`` has one entry per active timestep.
    """

    n_w: int
    B_w: float
    n_f: int = 0
    T: float = 1.0
    B_s: Sequence[float] = field(default_factory=list)


@dataclass
class AverageBits:
    B_w: float
    B_s: float
    T: float

    def as_tuple(self):
        return (self.B_w, self.B_s, self.T)


def average_bits(layers: Sequence[LayerAlloc]) -> AverageBits:
    if not layers:
        raise InvalidArgument("average_bits needs at least one layer")
    nw = sum(l.n_w for l in layers)
    if nw <= 0:
        raise InvalidArgument("model has no weights")
    bw = sum(l.n_w * l.B_w for l in layers) / nw
    spiking = [l for l in layers if l.n_f > 0]
    if not spiking:
        return AverageBits(bw, float("nan"), float("nan"))
    nf = sum(l.n_f for l in spiking)
    denom = sum(l.n_f * l.T for l in spiking)
    bs = sum(l.n_f * float(np.sum(l.B_s)) for l in spiking) / denom
    t = denom / nf
    return AverageBits(bw, bs, t)


def average_bits_grads(layers: Sequence[LayerAlloc]):
    """Partial derivatives of the three averages, per layer.

    Returns a list of dicts with keys ``B_w`` (dB̄_w/dB_w), ``B_s``
    (dB̄_s/dB_s^t, same for every active slot), ``T_s`` (dB̄_s/dT) and
    ``T`` (dT̄/dT).
    """
    avg = average_bits(layers)
    nw = sum(l.n_w for l in layers)
    spiking = [l for l in layers if l.n_f > 0]
    nf = sum(l.n_f for l in spiking)
    denom = sum(l.n_f * l.T for l in spiking)
    out = []
    for l in layers:
        d = {"B_w": l.n_w / nw, "B_s": 0.0, "T_s": 0.0, "T": 0.0}
        if l.n_f > 0:
            d["B_s"] = l.n_f / denom
            d["T_s"] = -avg.B_s * l.n_f / denom
            d["T"] = l.n_f / nf
        out.append(d)
    return out


def regulating_loss(avg, targets: RegulatingTargets):
    """Penalty pulling the averages toward their targets.

    ``avg`` is ``(B̄_w, B̄_s, T̄)``. Returns the loss and its derivatives
    with respect to each average.
    """
    bw, bs, t = avg.as_tuple() if isinstance(avg, AverageBits) else avg
    dw, ds, dt = bw - targets.B_w_tar, bs - targets.B_s_tar, t - targets.T_tar
    loss = targets.lambda1 * dw**2 + targets.lambda2 * dt**2 + targets.lambda3 * ds**2
    grads = {
        "B_w": 2 * targets.lambda1 * dw,
        "B_s": 2 * targets.lambda3 * ds,
        "T": 2 * targets.lambda2 * dt,
    }
    return float(loss), grads
