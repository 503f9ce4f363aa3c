"""Memory and computation accounting: Bit Budget, S-ACE, NS-ACE, size."""

from __future__ import annotations

import csv
import io
import json
from dataclasses import asdict, dataclass, field
from typing import Sequence

import numpy as np

from .errors import InvalidArgument
from .neuron import SpikeTrain

REPORT_VERSION = "1"
MB_BITS = 8 * 2**20


def bit_budget(T: float, B_w: float, B_s: float) -> float:
    return T * B_w * B_s


@dataclass
class LayerCost:
    """Cost inputs of one weight layer.

    ``T`` and ``B_s`` describe the spike train this layer consumes;
    ``B_w`` its own weights. ``squeezed`` selects the post-squeezing
    pipeline, which convolves a single averaged frame.
    """

    MACs: int
    T: float
    B_w: float
    B_s: float
    squeezed: bool = False


def s_ace(layers: Sequence[LayerCost]) -> float:
    total = 0.0
    for l in layers:
        if l.MACs < 0:
            raise InvalidArgument("MAC count must be non-negative")
        T = 1 if l.squeezed else l.T
        total += l.MACs * bit_budget(T, l.B_w, l.B_s)
    return total


def ns_ace(s_ace_total: float, avg_firing_rate: float) -> float:
    if not 0.0 <= avg_firing_rate <= 1.0:
        raise InvalidArgument(f"firing rate must lie in [0, 1], got {avg_firing_rate}")
    return avg_firing_rate * s_ace_total


def popcount(codes) -> np.ndarray:
    """Number of set bits in ``|code|`` per element."""
    a = np.abs(np.asarray(codes)).astype(np.int64)
    out = np.zeros(a.shape, dtype=np.int64)
    while np.any(a):
        out += a & 1
        a >>= 1
    return out


def spike_bit_counts(train: SpikeTrain) -> tuple[int, int]:
    """(non-zero bit slots, total bit slots) of a spike train."""
    if train.codes.size == 0:
        raise InvalidArgument("empty spike train")
    feats = train.codes[0].size
    ones = int(popcount(train.codes).sum())
    slots = int(feats * np.sum(train.bits_per_t))
    return ones, slots


def firing_rate(train: SpikeTrain) -> float:
    ones, slots = spike_bit_counts(train)
    return ones / slots


def expected_nonzero_bits(T: float, S: float, ns_ace_total: float, s_ace_total: float) -> float:
    if s_ace_total <= 0:
        raise InvalidArgument("S-ACE must be positive")
    return T * S * ns_ace_total / s_ace_total


def model_size(layers) -> tuple[float, float]:
    """Total weight storage as (bits, MB). ``layers`` yields (n_weights, B_w)."""
    bits = float(sum(n * b for n, b in layers))
    return bits, bits / MB_BITS


@dataclass
class LayerReport:
    layer: str
    T: float
    B_w: float
    B_s: float
    MACs: int
    bit_budget: float
    s_ace: float
    s_ace_squeezed: float
    ns_ace: float
    weight_bits_total: float


@dataclass
class CostReport:
    per_layer: list[LayerReport]
    totals: dict
    avg_firing_rate: float
    exp_act: float
    version: str = REPORT_VERSION
    extra: dict = field(default_factory=dict)

    def to_dict(self):
        return asdict(self)

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), indent=2, sort_keys=False)

    @classmethod
    def from_dict(cls, d):
        if str(d.get("version")) != REPORT_VERSION:
            raise InvalidArgument(f"unsupported cost report version {d.get('version')!r}")
        layers = [LayerReport(**row) for row in d["per_layer"]]
        return cls(layers, d["totals"], d["avg_firing_rate"], d["exp_act"], d["version"], d.get("extra", {}))

    def to_csv(self) -> str:
        buf = io.StringIO()
        names = list(LayerReport.__dataclass_fields__)
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(names)
        for row in self.per_layer:
            w.writerow([getattr(row, n) for n in names])
        w.writerow([self.totals.get(n, "") if n != "layer" else "total" for n in names])
        return buf.getvalue()


def build_report(layer_names, costs: Sequence[LayerCost], weight_counts, avg_bits,
                 bit_ones: int, bit_slots: int, n_features: int) -> CostReport:
    """Assemble a CostReport from per-layer costs and measured spike statistics.

    ``avg_bits`` is the model's (B̄_w, B̄_s, T̄); ``bit_ones`` / ``bit_slots``
    are the measured non-zero and total spike bit slots, and
    ``n_features`` the number of spike output elements they were measured on.
    """
    fr = bit_ones / bit_slots if bit_slots else 0.0
    rows = []
    for name, c, nw in zip(layer_names, costs, weight_counts):
        sa = s_ace([c])
        rows.append(LayerReport(
            layer=name, T=c.T, B_w=c.B_w, B_s=c.B_s, MACs=int(c.MACs),
            bit_budget=bit_budget(c.T, c.B_w, c.B_s), s_ace=sa,
            s_ace_squeezed=s_ace([LayerCost(c.MACs, c.T, c.B_w, c.B_s, squeezed=True)]),
            ns_ace=ns_ace(sa, fr), weight_bits_total=float(nw * c.B_w)))
    bw, bs, t = avg_bits
    total_s = sum(r.s_ace for r in rows)
    total_ns = ns_ace(total_s, fr)
    size_bits, size_mb = model_size((nw, c.B_w) for c, nw in zip(costs, weight_counts))
    totals = {
        "T": t, "B_w": bw, "B_s": bs,
        "MACs": int(sum(r.MACs for r in rows)),
        "bit_budget": bit_budget(t, bw, bs),
        "s_ace": total_s,
        "s_ace_squeezed": sum(r.s_ace_squeezed for r in rows),
        "ns_ace": total_ns,
        "weight_bits_total": size_bits,
        "size_mb": size_mb,
    }
    exp_act = expected_nonzero_bits(t, bs, total_ns, total_s) if total_s > 0 else 0.0
    extra = {"measured_nonzero_bits_per_output": bit_ones / n_features if n_features else 0.0}
    return CostReport(rows, totals, fr, exp_act, extra=extra)
