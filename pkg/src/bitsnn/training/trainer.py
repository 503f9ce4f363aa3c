"""Adaptive-bit-allocation training loop and evaluation."""

from __future__ import annotations

import csv
import io
import logging
from dataclasses import dataclass, field

import numpy as np

from ..cost import CostReport, build_report
from ..errors import DivergenceError, InvalidArgument
from ..renewal import RenewalSwitch
from .checkpoint import Checkpoint
from .config import ModelSpec, TrainConfig
from .data import Dataset
from .model import BIT_PARAMS, STEP_FLOOR, Context, Network
from .ops import softmax_cross_entropy

log = logging.getLogger(__name__)

LOG_COLUMNS = ["epoch", "task_loss", "reg_loss", "avg_B_w", "avg_B_s", "avg_T",
               "accuracy", "renewal_events", "bit_budget", "train_accuracy"]
RENEWAL_COLUMNS = ["epoch", "layer", "kind", "old_step", "new_step"]
ALLOC_COLUMNS = ["epoch", "layer", "B_w", "T", "B_s"]


@dataclass
class TrainResult:
    checkpoint: Checkpoint
    log_rows: list = field(default_factory=list)
    renewal_rows: list = field(default_factory=list)
    alloc_rows: list = field(default_factory=list)

    def log_csv(self) -> str:
        return _csv(LOG_COLUMNS, self.log_rows)

    def renewal_csv(self) -> str:
        return _csv(RENEWAL_COLUMNS, self.renewal_rows)

    def alloc_csv(self) -> str:
        return _csv(ALLOC_COLUMNS, self.alloc_rows)

    def trajectory(self, key):
        return [row[LOG_COLUMNS.index(key)] for row in self.log_rows]


def _csv(columns, rows):
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(columns)
    for r in rows:
        w.writerow([repr(v) if isinstance(v, float) else v for v in r])
    return buf.getvalue()


class SGD:
    def __init__(self, net: Network, lr, momentum, weight_decay=0.0):
        self.net, self.lr, self.momentum, self.wd = net, lr, momentum, weight_decay
        self.buf = {(layer.name, k): np.zeros(v.shape) for _, layer, k, v in net.named_params()}

    def step(self, grads, frozen=()):
        for _, layer, k, p in self.net.named_params():
            if k in frozen:
                continue
            g = grads[layer.name][k]
            if self.wd and k == "w":
                g = g + self.wd * p
            b = self.buf[(layer.name, k)]
            b *= self.momentum
            b += g
            p[...] = p - self.lr * b
            if k in ("s_q", "v1"):
                np.maximum(p, STEP_FLOOR, out=p)


def _first_nonfinite(logits, grads):
    if not np.all(np.isfinite(logits)):
        return "logits"
    for lname, gd in grads.items():
        for k, g in gd.items():
            if not np.all(np.isfinite(g)):
                return f"grad {lname}.{k}"
    return None


def alloc_rows(net: Network, epoch):
    rows = []
    for layer in net.all_layers:
        if hasattr(layer, "T"):
            T = layer.T()
            bs = "/".join(str(layer.B_s(t)) for t in range(T))
        else:
            T, bs = "", ""
        rows.append([epoch, layer.name, layer.B_w(), T, bs])
    return rows


def train(spec: ModelSpec, cfg: TrainConfig, data: Dataset, test: Dataset | None = None,
          progress=None) -> TrainResult:
    """Train a bit-adaptive SNN with SGD on the task loss plus the regulating loss.

    Renewal follows ``cfg.renewal`` and is switched off per quantizer kind
    once its average bit width is within 24% of the initial gap to target.
    Every logged number is a function of (spec, cfg, data) only.
    """
    if len(data) == 0:
        raise InvalidArgument("training set is empty")
    data = data.reshaped(spec.input_shape)
    if test is not None:
        test = test.reshaped(spec.input_shape)
    rng = np.random.default_rng(cfg.seed)
    net = Network(spec, seed=cfg.seed)
    opt = SGD(net, cfg.learning_rate, cfg.momentum, cfg.weight_decay)
    frozen = () if cfg.learn_bits else BIT_PARAMS
    targets = cfg.targets
    avg0 = net.average_bits()
    sw_w = RenewalSwitch(avg0.B_w, targets.B_w_tar, cfg.renewal_latch)
    sw_s = RenewalSwitch(avg0.B_s, targets.B_s_tar, cfg.renewal_latch)

    result = TrainResult(Checkpoint(net))
    reg0, _ = net.regulating(targets)
    acc0 = evaluate_network(net, test)[0] if test is not None else float("nan")
    result.log_rows.append([0, float("nan"), reg0, avg0.B_w, avg0.B_s, avg0.T, acc0, 0,
                            avg0.B_w * avg0.B_s * avg0.T, float("nan")])
    result.alloc_rows.extend(alloc_rows(net, 0))

    n = len(data)
    for epoch in range(1, cfg.epochs + 1):
        order = rng.permutation(n)
        task_sum = reg_sum = 0.0
        correct = 0
        events = 0
        for start in range(0, n, cfg.batch_size):
            idx = order[start:start + cfg.batch_size]
            ctx = Context(train=True, grid=cfg.grid,
                          renew_w=cfg.renew_weights and sw_w.active,
                          renew_s=cfg.renew_spikes and sw_s.active)
            task, reg, grads, logits = net.loss_and_grads(
                data.x[idx], data.y[idx], targets, ctx, scaled=cfg.grad_scale, regulate=cfg.learn_bits)
            bad = _first_nonfinite(logits, grads)
            if bad is None and not np.isfinite(task + reg):
                bad = "loss"
            if bad is not None:
                raise DivergenceError(f"non-finite value in {bad} at epoch {epoch}, batch {start // cfg.batch_size}")
            for name, kind, old, new in ctx.events:
                result.renewal_rows.append([epoch, name, kind, old, new])
            events += len(ctx.events)
            opt.step(grads, frozen)
            avg = net.average_bits()
            sw_w.update(avg.B_w)
            sw_s.update(avg.B_s)
            task_sum += task * len(idx)
            reg_sum += reg * len(idx)
            correct += int(np.sum(np.argmax(logits, axis=1) == data.y[idx]))
        avg = net.average_bits()
        acc = evaluate_network(net, test)[0] if test is not None else float("nan")
        row = [epoch, task_sum / n, reg_sum / n, avg.B_w, avg.B_s, avg.T, acc, events,
               avg.B_w * avg.B_s * avg.T, correct / n]
        result.log_rows.append(row)
        result.alloc_rows.extend(alloc_rows(net, epoch))
        log.info("epoch %d loss %.4f reg %.4f W/S/T %.2f/%.2f/%.2f acc %.4f",
                 epoch, row[1], row[2], avg.B_w, avg.B_s, avg.T, acc)
        if progress is not None:
            progress(row)
    result.checkpoint = Checkpoint(
        net, cfg.epochs, rng.bit_generator.state, {"model": spec.to_dict(), "train": cfg.to_dict()},
        {"weights": {"active": sw_w.active, "initial_diff": sw_w.initial_diff},
         "spikes": {"active": sw_s.active, "initial_diff": sw_s.initial_diff}})
    return result


def evaluate_network(net: Network, data: Dataset | None, batch_size: int = 256, stats=None):
    """(accuracy, mean task loss) with running batch-norm statistics and no renewal."""
    if data is None or len(data) == 0:
        raise InvalidArgument("evaluation set is empty")
    data = data.reshaped(net.spec.input_shape)
    correct, loss_sum = 0, 0.0
    for start in range(0, len(data), batch_size):
        x, y = data.x[start:start + batch_size], data.y[start:start + batch_size]
        logits, _ = net.forward(x, Context(train=False), stats)
        loss, _ = softmax_cross_entropy(logits, y)
        loss_sum += loss * len(y)
        correct += int(np.sum(np.argmax(logits, axis=1) == y))
    return correct / len(data), loss_sum / len(data)


def cost_report(net: Network, stats) -> CostReport:
    costs = net.layer_costs()
    names = [l.name for l in net.all_layers]
    counts = [l.n_weights for l in net.all_layers]
    avg = net.average_bits()
    return build_report(names, costs, counts, avg.as_tuple(), stats["ones"], stats["slots"], stats["features"])


def evaluate(ckpt: Checkpoint, data: Dataset, batch_size: int = 256):
    """Accuracy plus a CostReport measured on ``data``."""
    stats = {"ones": 0, "slots": 0, "features": 0}
    acc, loss = evaluate_network(ckpt.network, data, batch_size, stats)
    return {"accuracy": acc, "loss": loss, "cost": cost_report(ckpt.network, stats)}
