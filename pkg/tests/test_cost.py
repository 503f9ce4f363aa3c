import json

import numpy as np
import pytest

from bitsnn.cost import (
    CostReport,
    LayerCost,
    bit_budget,
    build_report,
    expected_nonzero_bits,
    firing_rate,
    model_size,
    ns_ace,
    popcount,
    s_ace,
    spike_bit_counts,
)
from bitsnn.errors import InvalidArgument
from bitsnn.neuron import SpikeTrain


@pytest.mark.parametrize("W,S,T,bb", [(16, 1, 4, 64), (16, 2, 1, 32), (16, 4, 6, 384), (1, 1, 1, 1), (8, 8, 1, 64)])
def test_bit_budget_table_cells(W, S, T, bb):
    assert bit_budget(T, W, S) == bb
    assert bit_budget(W, S, T) == bb  # pure product


def test_s_ace():
    assert s_ace([LayerCost(1000, 4, 16, 1)]) == 64000
    pre = s_ace([LayerCost(500, 2, 3, 2)])
    post = s_ace([LayerCost(500, 2, 3, 2, squeezed=True)])
    assert pre == 2 * post
    assert s_ace([LayerCost(0, 4, 16, 4)]) == 0
    layers = [LayerCost(100, 2, 3, 2), LayerCost(70, 1, 2, 4)]
    doubled = [LayerCost(2 * l.MACs, l.T, l.B_w, l.B_s) for l in layers]
    assert s_ace(doubled) == 2 * s_ace(layers)
    with pytest.raises(InvalidArgument):
        s_ace([LayerCost(-1, 1, 1, 1)])


def test_ns_ace():
    assert ns_ace(100.0, 0.0) == 0.0
    assert ns_ace(100.0, 1.0) == 100.0
    assert ns_ace(54.69, 16.99 / 54.69) == pytest.approx(16.99)
    with pytest.raises(InvalidArgument):
        ns_ace(1.0, 1.5)


def test_popcount_oracle(rng):
    codes = rng.integers(-63, 64, size=500)
    oracle = [bin(abs(int(c))).count("1") for c in codes]
    assert popcount(codes).tolist() == oracle


def test_firing_rate_examples():
    assert firing_rate(SpikeTrain(np.zeros((2, 3), dtype=int), [2, 2])) == 0.0
    assert firing_rate(SpikeTrain(np.array([[3]]), [2])) == 1.0
    assert firing_rate(SpikeTrain(np.array([[2]]), [2])) == 0.5
    assert spike_bit_counts(SpikeTrain(np.array([[1, 3], [0, 2]]), [2, 3])) == (4, 10)
    with pytest.raises(InvalidArgument):
        spike_bit_counts(SpikeTrain(np.zeros((1, 0)), [2]))


@pytest.mark.parametrize("T,S,ns,s,expected", [
    (1.0, 2.18, 7.77, 30.74, 0.55),
    (1.0, 3.96, 16.99, 54.69, 1.23),
    (1.0, 3.92, 24.30, 77.78, 1.22),
])
def test_expected_nonzero_bits_table(T, S, ns, s, expected):
    assert abs(expected_nonzero_bits(T, S, ns, s) - expected) <= 0.01


def test_expected_nonzero_bits_edges():
    assert expected_nonzero_bits(2, 3, 0.0, 10.0) == 0.0
    with pytest.raises(InvalidArgument):
        expected_nonzero_bits(1, 1, 1.0, 0.0)


def test_model_size():
    bits, mb = model_size([(10**6, 4)])
    assert bits == 4e6
    assert mb == pytest.approx(0.4768, abs=1e-4)
    assert model_size([]) == (0.0, 0.0)
    assert model_size([(10, 2), (5, 3)])[0] == 35


def _report():
    costs = [LayerCost(1000, 1, 4, 8.0), LayerCost(500, 2, 2, 3.0), LayerCost(100, 1, 3, 2.0)]
    return build_report(["a", "b", "head"], costs, [10, 20, 5], (2.5, 2.0, 1.5), bit_ones=30, bit_slots=120,
                        n_features=40)


def test_report_invariants():
    rep = _report()
    for row in rep.per_layer:
        assert row.ns_ace <= row.s_ace
        assert row.bit_budget == row.T * row.B_w * row.B_s
    assert rep.avg_firing_rate == 0.25
    assert rep.totals["s_ace"] == sum(r.s_ace for r in rep.per_layer)
    assert rep.totals["MACs"] == 1600
    assert rep.totals["bit_budget"] == 2.5 * 2.0 * 1.5
    assert rep.exp_act == pytest.approx(1.5 * 2.0 * 0.25)
    assert rep.totals["weight_bits_total"] == 10 * 4 + 20 * 2 + 5 * 3


def test_report_serialization():
    rep = _report()
    again = CostReport.from_dict(json.loads(rep.to_json()))
    assert again == rep
    lines = rep.to_csv().strip().splitlines()
    assert lines[0].startswith("layer,T,B_w,B_s,MACs,bit_budget,s_ace")
    assert lines[-1].startswith("total,")
    assert len(lines) == 5
    bad = rep.to_dict()
    bad["version"] = "99"
    with pytest.raises(InvalidArgument):
        CostReport.from_dict(bad)
