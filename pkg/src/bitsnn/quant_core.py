"""Symmetric scale-only quantizers and their straight-through gradients.

Codes are integers, the step is the real-valued scale, and the dequantized
value is ``code * step``. Rounding is half-away-from-zero everywhere so
that quantization commutes with negation.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .errors import InvalidArgument

LN2 = math.log(2.0)


def round_half_away(x):
    x = np.asarray(x, dtype=np.float64)
    return np.sign(x) * np.floor(np.abs(x) + 0.5)


def sign_nonzero(x):
    """sign() with sign(0) := +1."""
    return np.where(np.asarray(x) < 0, -1.0, 1.0)


@dataclass(frozen=True)
class QuantRange:
    q_min: int
    q_max: int

    def __post_init__(self):
        if not self.q_min < self.q_max:
            raise InvalidArgument(f"empty quantization range [{self.q_min}, {self.q_max}]")

    @property
    def levels(self) -> int:
        return self.q_max - self.q_min

    @property
    def bound_slope(self) -> float:
        """d(q_max)/d(bits) of the relaxed clip bound, i.e. (q_max + 1) ln 2."""
        return (self.q_max + 1) * LN2


def quant_range(bits: int, signed: bool) -> QuantRange:
    bits = int(bits)
    if bits < 1:
        raise InvalidArgument(f"bits must be >= 1, got {bits}")
    if not signed:
        return QuantRange(0, 2**bits - 1)
    if bits == 1:
        return QuantRange(-1, 1)
    q = 2 ** (bits - 1) - 1
    return QuantRange(-q, q)


@dataclass
class QuantizedTensor:
    codes: np.ndarray
    step: float
    bits: int
    signed: bool

    def __post_init__(self):
        if not (np.isfinite(self.step) and self.step > 0):
            raise InvalidArgument(f"step must be positive and finite, got {self.step}")
        self.codes = np.asarray(self.codes, dtype=np.int32)

    @property
    def range(self) -> QuantRange:
        return quant_range(self.bits, self.signed)

    def dequantize(self) -> np.ndarray:
        return self.codes.astype(np.float64) * self.step

    def check(self) -> None:
        r = self.range
        if self.codes.size and (self.codes.min() < r.q_min or self.codes.max() > r.q_max):
            raise InvalidArgument("codes outside the quantization range")
        if self.signed and self.bits == 1 and np.any(self.codes == 0):
            raise InvalidArgument("1-bit signed codes must be +-1")


def _check_step(step):
    step = float(step)
    if not (np.isfinite(step) and step > 0):
        raise InvalidArgument(f"step must be positive and finite, got {step}")
    return step


def _check_finite(x, name="input"):
    x = np.asarray(x, dtype=np.float64)
    if not np.all(np.isfinite(x)):
        raise InvalidArgument(f"{name} contains non-finite values")
    return x


def quantize_codes(ratio, bits: int, signed: bool) -> np.ndarray:
    """Integer codes for ``ratio = x / step``.

    Signed 1-bit quantization is the sign function; everything else is
    round-then-clip.
    """
    r = quant_range(bits, signed)
    if signed and bits == 1:
        return sign_nonzero(ratio)
    return np.clip(round_half_away(ratio), r.q_min, r.q_max)


def quantize_weights(w, step: float, bits: int) -> QuantizedTensor:
    step = _check_step(step)
    w = _check_finite(w, "weights")
    codes = quantize_codes(w / step, bits, signed=True)
    return QuantizedTensor(codes.astype(np.int32), step, int(bits), True)


def in_range(ratio, r: QuantRange) -> np.ndarray:
    ratio = np.asarray(ratio)
    return (ratio >= r.q_min) & (ratio <= r.q_max)


def step_gq(ratio, codes, r: QuantRange) -> np.ndarray:
    """Per-element derivative of ``code * step`` with respect to the step.

    ``codes - ratio`` inside the range, the saturated bound outside it.
    """
    ratio = np.asarray(ratio, dtype=np.float64)
    return np.where(ratio < r.q_min, float(r.q_min),
                    np.where(ratio > r.q_max, float(r.q_max), codes - ratio))


def bits_gq(ratio, r: QuantRange) -> np.ndarray:
    """Per-element derivative of the saturated code with respect to the bit width.

    Non-zero only where ``ratio`` falls outside ``[q_min, q_max]``.
    """
    ratio = np.asarray(ratio, dtype=np.float64)
    outside = ~in_range(ratio, r)
    return np.where(outside, sign_nonzero(ratio) * r.bound_slope, 0.0)


def grad_scale(n: int, r: QuantRange) -> float:
    return 1.0 / math.sqrt(n * r.q_max)


def _prep(w, step, bits, upstream):
    step = _check_step(step)
    w = _check_finite(w, "weights")
    upstream = np.asarray(upstream, dtype=np.float64)
    if upstream.shape != w.shape:
        raise InvalidArgument(f"shape mismatch: weights {w.shape} vs upstream {upstream.shape}")
    return w, step, quant_range(bits, True), upstream


def weight_grad_values(w, step, bits, upstream):
    w, step, r, upstream = _prep(w, step, bits, upstream)
    return np.where(in_range(w / step, r), upstream, 0.0)


def weight_grad_step(w, step, bits, upstream, scaled: bool = True) -> float:
    w, step, r, upstream = _prep(w, step, bits, upstream)
    ratio = w / step
    gq = step_gq(ratio, quantize_codes(ratio, bits, True), r)
    g = grad_scale(w.size, r) if scaled else 1.0
    return float(np.sum(upstream * gq) * g)


def weight_grad_bits(w, step, bits, upstream, scaled: bool = True) -> float:
    w, step, r, upstream = _prep(w, step, bits, upstream)
    gq = step * bits_gq(w / step, r)
    g = grad_scale(w.size, r) if scaled else 1.0
    return float(np.sum(upstream * gq) * g)
