"""Step-size renewal driven by a bit-width observer.

When a quantizer's materialized bit width changes, its step size is
recomputed from running extrema of the data, which are themselves refined
by a grid search over clipping ranges.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .errors import InvalidArgument
from .quant_core import quant_range, round_half_away

SHUT_FRACTION = 0.24


@dataclass(frozen=True)
class GridSearchConfig:
    K: int = 100
    pow: float = 2.4

    def __post_init__(self):
        if self.K < 1:
            raise InvalidArgument(f"K must be >= 1, got {self.K}")
        if not self.pow > 0:
            raise InvalidArgument(f"pow must be positive, got {self.pow}")


@dataclass
class ObserverState:
    v_r_max: float = -math.inf
    v_r_min: float = math.inf
    recorded_bits: int = 0
    active: bool = True

    def to_dict(self):
        return {"v_r_max": self.v_r_max, "v_r_min": self.v_r_min,
                "recorded_bits": self.recorded_bits, "active": self.active}

    @classmethod
    def from_dict(cls, d):
        return cls(float(d["v_r_max"]), float(d["v_r_min"]), int(d["recorded_bits"]), bool(d["active"]))


def _score(X, v_max, v_min, q_min, q_max, p):
    s = (v_max - v_min) / (q_max - q_min)
    if not s > 0:
        return math.inf
    Xq = s * np.clip(round_half_away(X / s), q_min, q_max)
    return float(np.mean(np.abs(Xq - X) ** p))


def grid_search(X, v_max: float, v_min: float, cfg: GridSearchConfig, q_min: int, q_max: int):
    """Search candidate clipping ranges ``k * R / K`` for the lowest error score.

    Symmetric candidates are used when ``X`` has negative entries,
    one-sided ``[0, k R / K]`` otherwise. Only strict improvements replace
    the incumbent, so ties keep the smallest ``k``.
    """
    X = np.asarray(X, dtype=np.float64).reshape(-1)
    if X.size == 0:
        raise InvalidArgument("grid search needs non-empty data")
    if q_min >= q_max:
        raise InvalidArgument(f"degenerate quantization range [{q_min}, {q_max}]")
    if v_max < v_min:
        raise InvalidArgument("v_max must be >= v_min")
    score = math.inf
    best_max, best_min = v_max, v_min
    R = v_max - v_min
    symmetric = bool(np.any(X < 0))
    for k in range(1, cfg.K + 1):
        cand_max = k * R / cfg.K
        cand_min = -cand_max if symmetric else 0.0
        sc = _score(X, cand_max, cand_min, q_min, q_max, cfg.pow)
        if sc < score:
            score = sc
            best_max, best_min = cand_max, cand_min
    return best_max, best_min


def renew(obs: ObserverState, X, bits: int, signed: bool, cfg: GridSearchConfig | None = None):
    """Renew a step size if ``bits`` differs from the recorded bit width.

    Returns the new step, or ``None`` when the bit width is unchanged or
    the data give no usable range.
    """
    if bits < 1:
        raise InvalidArgument(f"bits must be >= 1, got {bits}")
    if bits == obs.recorded_bits:
        return None
    cfg = cfg or GridSearchConfig()
    obs.recorded_bits = int(bits)
    r = quant_range(bits, signed)
    X = np.asarray(X, dtype=np.float64)
    if X.size == 0:
        raise InvalidArgument("renewal needs non-empty data")
    v_max, v_min = float(X.max()), float(X.min())
    new_max, new_min = grid_search(X, v_max, v_min, cfg, r.q_min, r.q_max)
    obs.v_r_max = max(new_max, obs.v_r_max)
    obs.v_r_min = min(new_min, obs.v_r_min)
    step = (obs.v_r_max - obs.v_r_min) / (r.q_max - r.q_min)
    if not (math.isfinite(step) and step > 0):
        return None
    return step


def shutting_check(current_avg: float, target: float, initial_diff: float) -> bool:
    """True while renewal should stay on: the bit gap exceeds 24% of the initial gap."""
    if not initial_diff > 0:
        raise InvalidArgument("initial_diff must be positive")
    return abs(current_avg - target) > SHUT_FRACTION * initial_diff


class RenewalSwitch:
    """Latching on/off switch for one quantizer kind (weights or spikes)."""

    def __init__(self, initial_avg: float, target: float, latch: bool = True):
        self.initial_diff = abs(initial_avg - target)
        self.target = target
        self.latch = latch
        self.active = self.initial_diff > 0

    def update(self, current_avg: float) -> bool:
        if self.initial_diff <= 0:
            self.active = False
            return False
        if self.latch and not self.active:
            return False
        self.active = shutting_check(current_avg, self.target, self.initial_diff)
        return self.active
