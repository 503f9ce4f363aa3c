import numpy as np
import pytest

from bitsnn.bit_alloc import RegulatingTargets
from bitsnn.errors import DivergenceError, InvalidArgument
from bitsnn.training.config import ModelSpec, TrainConfig
from bitsnn.training.data import Dataset
from bitsnn.training.trainer import LOG_COLUMNS, evaluate, evaluate_network, train
from bitsnn.training.model import Network


def _small(digits, n=256):
    train_ds, test_ds = digits
    return Dataset(train_ds.x[:n], train_ds.y[:n], 10), test_ds


def test_one_epoch_deterministic(digits):
    tr, te = _small(digits)
    a = train(ModelSpec(), TrainConfig(epochs=1, seed=5), tr, te)
    b = train(ModelSpec(), TrainConfig(epochs=1, seed=5), tr, te)
    assert a.log_csv() == b.log_csv()
    assert a.renewal_csv() == b.renewal_csv() and a.alloc_csv() == b.alloc_csv()
    c = train(ModelSpec(), TrainConfig(epochs=1, seed=6), tr, te)
    assert c.log_csv() != a.log_csv()


def test_log_layout(digits):
    tr, te = _small(digits)
    res = train(ModelSpec(), TrainConfig(epochs=2), tr, te)
    assert res.log_csv().splitlines()[0] == ",".join(LOG_COLUMNS)
    assert [r[0] for r in res.log_rows] == [0, 1, 2]
    for r in res.log_rows:
        assert r[8] == pytest.approx(r[3] * r[4] * r[5])


def test_frozen_bits_stay_fixed(digits):
    # U-quant: bit parameters frozen and no regulating pull
    tr, te = _small(digits)
    spec = ModelSpec(init_bits=(4, 4, 1))
    cfg = TrainConfig(epochs=2, learn_bits=False, renewal="off", targets=RegulatingTargets(4, 4, 1, 0, 0, 0))
    res = train(spec, cfg, tr, te)
    assert set(res.trajectory("avg_B_w")) == {4.0}
    assert set(res.trajectory("avg_B_s")) == {4.0}
    assert set(res.trajectory("avg_T")) == {1.0}
    assert set(res.trajectory("reg_loss")) == {0.0}
    assert res.renewal_rows == []


def test_bits_move_toward_targets(digits):
    tr, te = _small(digits)
    spec = ModelSpec()
    res = train(spec, TrainConfig(epochs=2), tr, te)
    net = res.checkpoint.network
    for layer in net.all_layers:
        assert float(layer.p["b_w_hat"]) < spec.init_bits[0]
    for layer in net.layers:
        assert np.all(layer.p["b_s_hat"][:layer.T()] < spec.init_bits[1])


def test_divergence_detected(digits):
    tr, te = _small(digits)
    with pytest.raises(DivergenceError, match="epoch 1"):
        train(ModelSpec(), TrainConfig(epochs=1, learning_rate=1e30), tr, te)
    bad = Dataset(tr.x.copy(), tr.y, 10)
    bad.x[3] = np.nan
    with pytest.raises(DivergenceError, match="non-finite"):
        train(ModelSpec(), TrainConfig(epochs=1), bad)


def test_empty_sets_rejected():
    empty = Dataset(np.zeros((0, 1, 8, 8)), np.zeros(0, np.int64), 10)
    with pytest.raises(InvalidArgument):
        train(ModelSpec(), TrainConfig(epochs=1), empty)
    with pytest.raises(InvalidArgument):
        evaluate_network(Network(ModelSpec()), empty)


def test_untrained_is_near_chance(digits):
    # oracle: an untrained 10-way classifier scores about 1/10
    train_ds, _ = digits
    accs = [evaluate_network(Network(ModelSpec(), seed=s), train_ds)[0] for s in range(3)]
    assert abs(np.mean(accs) - 0.1) <= 0.05


def test_cost_report_matches_network(digits):
    tr, te = _small(digits)
    res = train(ModelSpec(), TrainConfig(epochs=1), tr, te)
    rep = evaluate(res.checkpoint, te)["cost"]
    avg = res.checkpoint.network.average_bits()
    assert rep.totals["B_w"] == pytest.approx(avg.B_w)
    assert rep.totals["B_s"] == pytest.approx(avg.B_s)
    assert rep.totals["bit_budget"] == pytest.approx(avg.B_w * avg.B_s * avg.T)
    assert 0 < rep.avg_firing_rate <= 1
