"""Refined multi-bit spiking neuron.

The neuron integrates a (temporally squeezed) input current with an
optional leak, subtracts the previous spike times its threshold (soft
reset), and fires an integer spike code via shifted flooring, i.e.
round-half-away-from-zero on ``v / V1``.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .errors import InvalidArgument
from .quant_core import in_range, quant_range, quantize_codes


@dataclass(frozen=True)
class NeuronConfig:
    tau: float = 1.0
    bidirectional: bool = False
    T_bound: int = 3
    shift_enabled: bool = True

    def __post_init__(self):
        if self.tau < 1:
            raise InvalidArgument(f"tau must be >= 1, got {self.tau}")
        if self.T_bound < 1:
            raise InvalidArgument(f"T_bound must be >= 1, got {self.T_bound}")


@dataclass
class SpikeTrain:
    codes: np.ndarray  # [T, *features]
    bits_per_t: np.ndarray
    bidirectional: bool = False

    def __post_init__(self):
        self.codes = np.asarray(self.codes)
        self.bits_per_t = np.asarray(self.bits_per_t, dtype=np.int64).reshape(-1)
        if self.codes.ndim < 1 or self.codes.shape[0] < 1:
            raise InvalidArgument("spike train must have at least one timestep")
        if self.bits_per_t.size != self.codes.shape[0]:
            raise InvalidArgument("bits_per_t length must equal T")

    @property
    def T(self) -> int:
        return self.codes.shape[0]

    def check(self) -> None:
        for t in range(self.T):
            r = quant_range(self.bits_per_t[t], self.bidirectional)
            c = self.codes[t]
            if c.size and (c.min() < r.q_min or c.max() > r.q_max):
                raise InvalidArgument(f"codes at timestep {t} exceed the {self.bits_per_t[t]}-bit range")


@dataclass
class NeuronState:
    config: NeuronConfig
    V1: np.ndarray
    v: np.ndarray | None = None
    last_spike: np.ndarray | None = None
    last_V1: float = 0.0
    t: int = 0
    history: list = field(default_factory=list)

    def __post_init__(self):
        self.V1 = np.asarray(self.V1, dtype=np.float64).reshape(-1)
        if self.V1.size != self.config.T_bound:
            raise InvalidArgument(f"need {self.config.T_bound} threshold slots, got {self.V1.size}")
        if np.any(self.V1 <= 0):
            raise InvalidArgument("thresholds must be positive")


def temporal_squeeze(train: SpikeTrain | np.ndarray) -> np.ndarray:
    codes = train.codes if isinstance(train, SpikeTrain) else np.asarray(train)
    if codes.ndim < 1 or codes.shape[0] == 0:
        raise InvalidArgument("cannot squeeze an empty spike train")
    return codes.astype(np.float64).sum(axis=0) / codes.shape[0]


def input_current(squeezed_prev, weights, V1_prev: float) -> np.ndarray:
    """Dense input current ``W_q @ (V1_prev * squeezed_prev)``.

    ``weights`` is a QuantizedTensor of shape [out, in]. Both scale factors
    are applied once, after the integer accumulation.
    """
    x = np.asarray(squeezed_prev, dtype=np.float64)
    codes = np.asarray(weights.codes, dtype=np.float64)
    if codes.ndim != 2 or codes.shape[1] != x.shape[-1]:
        raise InvalidArgument(f"weight shape {codes.shape} does not match input length {x.shape[-1]}")
    return (x @ codes.T) * (weights.step * float(V1_prev))


def fire(v, V1, bits: int, bidirectional: bool = False, shift: bool = True):
    V1 = np.asarray(V1, dtype=np.float64)
    if np.any(V1 <= 0):
        raise InvalidArgument("threshold V1 must be positive")
    ratio = np.asarray(v, dtype=np.float64) / V1
    if bidirectional and bits == 1:
        return quantize_codes(ratio, 1, True)
    r = quant_range(bits, bidirectional)
    if shift:
        # floor(|x| + 1/2) with the sign restored; a plain floor(x - 1/2) would
        # land one level low for negative potentials
        codes = np.sign(ratio) * np.floor(np.abs(ratio) + 0.5)
    else:
        codes = np.floor(ratio)
    return np.clip(codes, r.q_min, r.q_max)


def spike_surrogate(v, V1, bits: int, bidirectional: bool = False):
    V1 = np.asarray(V1, dtype=np.float64)
    if np.any(V1 <= 0):
        raise InvalidArgument("threshold V1 must be positive")
    r = quant_range(bits, bidirectional)
    return in_range(np.asarray(v, dtype=np.float64) / V1, r).astype(np.float64)


def init_state(config: NeuronConfig, V1, shape=()) -> NeuronState:
    state = NeuronState(config, V1)
    state.v = np.zeros(shape)
    state.last_spike = np.zeros(shape)
    return state


def step(state: NeuronState, V_in, t: int, bits_t: int):
    """Advance ``state`` to timestep ``t`` (1-based) and return the spike codes."""
    cfg = state.config
    if not 1 <= t <= cfg.T_bound:
        raise InvalidArgument(f"timestep {t} outside [1, {cfg.T_bound}]")
    V_in = np.asarray(V_in, dtype=np.float64)
    if state.v is None:
        state.v = np.zeros_like(V_in)
        state.last_spike = np.zeros_like(V_in)
    state.v = state.v / cfg.tau + V_in - state.last_spike * state.last_V1
    V1 = state.V1[t - 1]
    spikes = fire(state.v, V1, bits_t, cfg.bidirectional, cfg.shift_enabled)
    state.last_spike = spikes
    state.last_V1 = V1
    state.t = t
    state.history.append(spikes)
    return state, spikes.astype(np.int32)
