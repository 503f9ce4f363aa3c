import math

import numpy as np
import pytest

from bitsnn.bit_alloc import (
    AverageBits,
    LayerAlloc,
    LayerBitParams,
    RegulatingTargets,
    average_bits,
    average_bits_grads,
    materialize,
    materialize_mask,
    regulating_loss,
    spike_bits_grad,
    temporal_grad,
    threshold_grad,
)
from bitsnn.errors import InvalidArgument
from bitsnn.neuron import SpikeTrain, fire
from bitsnn.quant_core import quant_range


@pytest.mark.parametrize("x,bound,expected", [(0.3, 6, 1), (4.49, 6, 4), (9.0, 6, 6), (4.5, 6, 5), (2.5, 3, 3)])
def test_materialize(x, bound, expected):
    assert materialize(x, bound) == expected
    assert materialize(materialize(x, bound), bound) == expected


def test_materialize_mask_and_errors():
    assert materialize_mask(3.2, 6) == 1.0
    assert materialize_mask(0.3, 6) == 0.0
    assert materialize_mask(6.5, 6) == 0.0
    with pytest.raises(InvalidArgument):
        materialize(2.0, 0)


def test_layer_bit_params():
    p = LayerBitParams.initial(4, 4, 2)
    assert (p.B_w, p.T, p.B_s_slots) == (4, 2, [4, 4])
    p.b_s_hat[1] = 2.2
    assert p.B_s_slots == [4, 2]
    with pytest.raises(InvalidArgument):
        LayerBitParams(4.0, [4.0, 4.0], 2.0, T_bound=3)


def test_targets_validation():
    with pytest.raises(InvalidArgument):
        RegulatingTargets(B_w_tar=0.5)
    with pytest.raises(InvalidArgument):
        RegulatingTargets(lambda1=-1)


def test_spike_bits_grad_examples():
    g = spike_bits_grad(np.array([5.0]), 2, np.array([1.0]), scaled=False)
    assert g == pytest.approx(4 * math.log(2))
    g = spike_bits_grad(np.array([5.0]), 2, np.array([1.0]))
    assert g == pytest.approx(4 * math.log(2) / math.sqrt(3))
    assert spike_bits_grad(np.array([[0.5, 2.0]]), 2, np.ones((1, 2))) == 0.0
    g = spike_bits_grad(np.array([-4.0]), 2, np.array([1.0]), bidirectional=True, scaled=False)
    assert g == pytest.approx(-2 * math.log(2))
    # unsigned neurons never saturate from below in the bit sense
    assert spike_bits_grad(np.array([-4.0]), 2, np.array([1.0])) == 0.0
    with pytest.raises(InvalidArgument):
        spike_bits_grad(np.ones((2, 3)), 2, np.ones((2, 2)))


def test_threshold_grad_examples():
    assert threshold_grad(np.array([1.3]), 1.0, 2, np.array([1.0]), scaled=False) == pytest.approx(-0.3)
    assert threshold_grad(np.array([10.0]), 1.0, 2, np.array([1.0]), scaled=False) == pytest.approx(3.0)
    assert threshold_grad(np.array([-2.0]), 1.0, 2, np.array([1.0]), scaled=False) == 0.0
    with pytest.raises(InvalidArgument):
        threshold_grad(np.array([1.0]), 0.0, 2, np.array([1.0]))


def test_threshold_grad_fd(rng):
    # d/dV1 of sum(up * code) for the relaxed fire, code = round offset + v/V1 inside the range
    v = rng.normal(size=400) * 3
    V1, bits = 0.8, 3
    r = quant_range(bits, True)
    ratio = v / V1
    keep = np.abs(np.abs(ratio) - np.floor(np.abs(ratio)) - 0.5) > 1e-3
    v = v[keep]
    up = rng.normal(size=v.size)
    ratio = v / V1
    off = fire(v, V1, bits, True) - ratio

    def f(V):
        x = v / V
        codes = np.where(x > r.q_max, r.q_max, np.where(x < r.q_min, r.q_min, x + off))
        return float(np.sum(up * codes))

    eps = 1e-7
    fd = (f(V1 + eps) - f(V1 - eps)) / (2 * eps)
    # the analytic rule differentiates code * V1 (the dequantized spike); convert
    x = v / V1
    codes = np.clip(np.round(x), r.q_min, r.q_max)
    g_deq = threshold_grad(v, V1, bits, up, bidirectional=True, scaled=False) * V1
    fd_deq = float(np.sum(up * codes)) + V1 * fd
    assert g_deq == pytest.approx(fd_deq, rel=1e-5)


def test_temporal_grad():
    assert temporal_grad(SpikeTrain(np.array([[2], [2]]), [2, 2]), np.array([1.0])) == -1.0
    assert temporal_grad(np.zeros((3, 4)), np.ones(4)) == 0.0
    assert temporal_grad(np.ones((3, 4)), np.zeros(4)) == 0.0


def test_temporal_grad_fd(rng):
    codes = rng.integers(0, 4, size=(3, 5))
    up = rng.normal(size=5)

    def f(T):
        return float(np.sum(up * codes.sum(axis=0) / T))

    eps = 1e-6
    assert temporal_grad(codes, up) == pytest.approx((f(3 + eps) - f(3 - eps)) / (2 * eps), rel=1e-6)


def test_average_bits_examples():
    assert average_bits([LayerAlloc(10, 2), LayerAlloc(10, 4)]).B_w == 3.0
    assert average_bits([LayerAlloc(100, 1), LayerAlloc(300, 3)]).B_w == 2.5
    one = average_bits([LayerAlloc(50, 3, n_f=7, T=2, B_s=[4, 2])])
    assert (one.B_w, one.B_s, one.T) == (3.0, 3.0, 2.0)
    with pytest.raises(InvalidArgument):
        average_bits([])


def test_average_bits_weighting():
    layers = [LayerAlloc(10, 4, n_f=100, T=2, B_s=[4, 2]), LayerAlloc(30, 2, n_f=300, T=1, B_s=[3])]
    avg = average_bits(layers)
    assert avg.B_s == pytest.approx((100 * 6 + 300 * 3) / (100 * 2 + 300 * 1))
    assert avg.T == pytest.approx((100 * 2 + 300 * 1) / 400)


def test_average_bits_grads_fd():
    layers = [LayerAlloc(10, 4.0, n_f=100, T=2.0, B_s=[4.0, 2.0]), LayerAlloc(30, 2.0, n_f=300, T=1.0, B_s=[3.0]),
              LayerAlloc(5, 3.0)]
    d = average_bits_grads(layers)
    eps = 1e-6

    def avg_with(i, **kw):
        ls = [LayerAlloc(l.n_w, l.B_w, l.n_f, l.T, list(l.B_s)) for l in layers]
        for k, v in kw.items():
            setattr(ls[i], k, v)
        return average_bits(ls)

    for i, l in enumerate(layers):
        fd = (avg_with(i, B_w=l.B_w + eps).B_w - avg_with(i, B_w=l.B_w - eps).B_w) / (2 * eps)
        assert d[i]["B_w"] == pytest.approx(fd, rel=1e-6)
        if l.n_f:
            fd_T = (avg_with(i, T=l.T + eps).T - avg_with(i, T=l.T - eps).T) / (2 * eps)
            fd_Ts = (avg_with(i, T=l.T + eps).B_s - avg_with(i, T=l.T - eps).B_s) / (2 * eps)
            bs_up = list(l.B_s)
            bs_dn = list(l.B_s)
            bs_up[0] += eps
            bs_dn[0] -= eps
            fd_s = (avg_with(i, B_s=bs_up).B_s - avg_with(i, B_s=bs_dn).B_s) / (2 * eps)
            assert d[i]["T"] == pytest.approx(fd_T, rel=1e-6)
            assert d[i]["T_s"] == pytest.approx(fd_Ts, rel=1e-6)
            assert d[i]["B_s"] == pytest.approx(fd_s, rel=1e-6)


def test_regulating_loss_examples():
    tar = RegulatingTargets()
    assert regulating_loss((2.0, 2.0, 1.0), tar)[0] == 0.0
    loss, g = regulating_loss(AverageBits(4.0, 2.0, 1.0), tar)
    assert loss == pytest.approx(0.16)
    assert g["B_w"] > 0 and g["B_s"] == 0 and g["T"] == 0
    loss, _ = regulating_loss((2.0, 4.0, 3.0), tar)
    assert loss == pytest.approx(0.01 * 4 + 0.04 * 4)


def test_temporal_sharing_isolated():
    v = np.array([2.6, 2.6])
    slots = [2, 3]
    out = [fire(v, 1.0, b) for b in slots]
    slots[1] = 1
    out2 = [fire(v, 1.0, b) for b in slots]
    np.testing.assert_array_equal(out[0], out2[0])
    assert not np.array_equal(out[1], out2[1])
