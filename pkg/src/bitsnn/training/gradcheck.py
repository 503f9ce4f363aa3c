"""Finite-difference check of the network's analytic gradients.

The reference function is the straight-through relaxation of the loss at
a recorded point: every rounding offset and clip decision from the
recording pass is replayed, bit widths become continuous around their
materialized values, and temporal lengths enter the mean as reals.
"""

from __future__ import annotations

import numpy as np

from . import ops
from .model import Context, Network, Tape

CHECKED = ("w", "s_q", "v1", "b_w_hat", "b_s_hat", "t_hat")


def relaxed_loss(net: Network, x, labels, targets, tape: Tape) -> float:
    ctx = Context(train=True, tape=tape)
    logits, _ = net.forward(x, ctx)
    task, _ = ops.softmax_cross_entropy(logits, labels)
    reg, _ = net.regulating(targets, None, tape)
    return task + reg


def _active_slots(layer, key):
    if key in ("v1", "b_s_hat"):
        return [(t,) for t in range(layer.T())]
    p = layer.p[key]
    return [()] if p.ndim == 0 else None


def check_gradients(net: Network, x, labels, targets, rng, n_weights: int = 4, eps: float = 1e-6):
    """Compare analytic and central-difference gradients.

    Returns a list of (param name, index, analytic, numeric). Weights are
    sampled ``n_weights`` per layer; every used step size and bit
    parameter is checked. Gradient scaling is disabled so both sides
    describe the same function.
    """
    tape = Tape()
    ctx = Context(train=True, tape=tape)
    _, _, grads, _ = net.loss_and_grads(x, labels, targets, ctx, scaled=False)
    tape.replay()
    out = []
    for _, layer, key, p in net.named_params():
        if key not in CHECKED:
            continue
        idxs = _active_slots(layer, key)
        if idxs is None:
            flat = rng.choice(p.size, size=min(n_weights, p.size), replace=False)
            idxs = [np.unravel_index(int(i), p.shape) for i in flat]
        for idx in idxs:
            old = float(p[idx])
            p[idx] = old + eps
            up = relaxed_loss(net, x, labels, targets, tape)
            p[idx] = old - eps
            dn = relaxed_loss(net, x, labels, targets, tape)
            p[idx] = old
            out.append((f"{layer.name}.{key}", idx, float(grads[layer.name][key][idx]), (up - dn) / (2 * eps)))
    return out


def relative_error(a: float, b: float, floor: float = 1e-5) -> float:
    # central differences at eps=1e-6 carry ~1e-10 absolute round-off, so
    # gradients below the floor are compared on an absolute scale
    return abs(a - b) / max(abs(a), abs(b), floor)

