"""Bit-adaptive spiking network with a hand-written backward pass.

Each spiking layer is quantized weights -> (batch norm) -> multi-bit
neuron. A layer squeezes its input train to one frame, computes the input
current once, integrates it for ``T`` timesteps and emits the mean of its
dequantized spikes. The head is a quantized dense layer on the squeezed
output of the last spiking layer.

Gradients follow the straight-through rules of :mod:`bitsnn.quant_core`
and are propagated through the soft reset across timesteps.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from ..bit_alloc import LayerAlloc, average_bits, average_bits_grads, materialize, materialize_mask, regulating_loss
from ..cost import LayerCost, popcount
from ..errors import InvalidArgument
from ..quant_core import grad_scale, in_range, quant_range, quantize_codes
from ..renewal import GridSearchConfig, ObserverState, renew
from . import ops
from .config import ModelSpec

STEP_FLOOR = 1e-6


class Tape:
    """Records rounding offsets and clip regions so a later forward can replay
    the straight-through relaxation of the same quantizers.

    In replay, every quantizer is ``ratio + offset`` inside its range and the
    (linearized) bound outside; integer bit widths become continuous around
    their recorded values.
    """

    def __init__(self):
        self.mode = "record"
        self.sites = {}
        self.base = {}

    def replay(self):
        self.mode = "replay"
        return self


@dataclass
class Context:
    train: bool = True
    renew_w: bool = False
    renew_s: bool = False
    grid: GridSearchConfig = field(default_factory=GridSearchConfig)
    tape: Tape | None = None
    collect: bool = False
    events: list = field(default_factory=list)

    @property
    def replay(self):
        return self.tape is not None and self.tape.mode == "replay"


def _quant_site(ratio, bits, signed, ctx, key, dbits, floor):
    r = quant_range(bits, signed)
    if ctx.replay:
        delta, inm, above, below = ctx.tape.sites[key]
        hi = r.q_max + r.bound_slope * dbits
        lo = r.q_min - r.bound_slope * dbits if signed else float(r.q_min)
        codes = np.where(inm, ratio + delta, np.where(above, hi, lo))
        return codes, (inm, above, below)
    if floor and not (signed and bits == 1):
        codes = np.clip(np.floor(ratio), r.q_min, r.q_max)
    else:
        codes = quantize_codes(ratio, bits, signed)
    inm = in_range(ratio, r)
    above = ratio > r.q_max
    below = ratio < r.q_min
    if ctx.tape is not None:
        ctx.tape.sites[key] = (codes - ratio, inm, above, below)
    return codes, (inm, above, below)


def _bits_gq(r, signed, masks):
    _, above, below = masks
    g = np.where(above, r.bound_slope, 0.0)
    if signed:
        g = np.where(below, -r.bound_slope, g)
    return g


def _step_gq(r, ratio, codes, masks):
    _, above, below = masks
    return np.where(below, float(r.q_min), np.where(above, float(r.q_max), codes - ratio))


class _QuantLayer:
    """Shared weight-quantization machinery for spiking layers and the head."""

    def __init__(self, name, w_shape, fan_in, bounds, init_bits, rng, dtype):
        self.name = name
        self.dtype = dtype
        self.bw_bound = bounds[0]
        self.p = {
            "w": rng.normal(0.0, math.sqrt(2.0 / fan_in), size=w_shape).astype(dtype),
            "s_q": np.array(1.0, dtype=dtype),
            "b_w_hat": np.array(init_bits[0], dtype=dtype),
        }
        self.sq_ready = False
        self.obs_w = ObserverState()

    def _bits(self, pname, bound, ctx, idx=None):
        hat = self.p[pname] if idx is None else self.p[pname][idx]
        key = (self.name, pname, idx)
        if ctx.replay:
            base = ctx.tape.base[key]
            return materialize(base, bound), (float(hat) - base) * materialize_mask(base, bound)
        if ctx.tape is not None:
            ctx.tape.base[key] = float(hat)
        return materialize(float(hat), bound), 0.0

    def _quant_weights(self, ctx):
        w = self.p["w"].astype(np.float64)
        Bw, dB = self._bits("b_w_hat", self.bw_bound, ctx)
        r = quant_range(Bw, True)
        if not self.sq_ready:
            self.p["s_q"][...] = max(2.0 * float(np.mean(np.abs(w))) / math.sqrt(r.q_max), STEP_FLOOR)
            self.sq_ready = True
            self.obs_w.recorded_bits = Bw
        elif ctx.renew_w and not ctx.replay:
            old = float(self.p["s_q"])
            new = renew(self.obs_w, w, Bw, True, ctx.grid)
            if new is not None:
                self.p["s_q"][...] = new
                ctx.events.append((self.name, "weight", old, float(self.p["s_q"])))
        s = float(self.p["s_q"])
        ratio = w / s
        codes, masks = _quant_site(ratio, Bw, True, ctx, (self.name, "w"), dB, floor=False)
        return codes * s, (ratio, codes, masks, s, r)

    def _weight_grads(self, g_wq, wcache, grads, scaled):
        ratio, codes, masks, s, r = wcache
        scale = grad_scale(ratio.size, r) if scaled else 1.0
        grads["w"] += g_wq * masks[0]
        grads["s_q"] += float(np.sum(g_wq * _step_gq(r, ratio, codes, masks))) * scale
        gb = float(np.sum(g_wq * s * _bits_gq(r, True, masks))) * scale
        grads["b_w_hat"] += gb * materialize_mask(float(self.p["b_w_hat"]), self.bw_bound)

    @property
    def n_weights(self) -> int:
        return int(self.p["w"].size)

    def B_w(self) -> int:
        return materialize(float(self.p["b_w_hat"]), self.bw_bound)


class SpikingLayer(_QuantLayer):
    def __init__(self, idx, lspec, in_shape, out_shape, spec: ModelSpec, rng, dtype):
        if lspec.kind == "conv2d":
            c = in_shape[0]
            w_shape = (lspec.out, c, lspec.kernel, lspec.kernel)
            fan_in = c * lspec.kernel**2
        else:
            n_in = int(np.prod(in_shape))
            w_shape = (lspec.out, n_in)
            fan_in = n_in
        super().__init__(f"layer{idx}", w_shape, fan_in, spec.bounds, spec.init_bits, rng, dtype)
        self.lspec = lspec
        self.in_shape = tuple(in_shape)
        self.out_shape = tuple(out_shape)
        self.bidirectional = bool(spec.bidirectional_first and idx == 0)
        self.tau = float(spec.tau)
        self.shift = bool(spec.shift_enabled)
        self.bs_bound = spec.bounds[1]
        self.t_bound = spec.bounds[2]
        tb = self.t_bound
        self.p["v1"] = np.ones(tb, dtype=dtype)
        self.p["b_s_hat"] = np.full(tb, spec.init_bits[1], dtype=dtype)
        self.p["t_hat"] = np.array(spec.init_bits[2], dtype=dtype)
        self.bn = lspec.batch_norm
        if self.bn:
            self.p["gamma"] = np.ones(lspec.out, dtype=dtype)
            self.p["beta"] = np.zeros(lspec.out, dtype=dtype)
            self.running_mean = np.zeros(lspec.out, dtype=dtype)
            self.running_var = np.ones(lspec.out, dtype=dtype)
        self.v1_ready = np.zeros(tb, dtype=bool)
        self.obs_s = [ObserverState() for _ in range(tb)]

    @property
    def n_features(self) -> int:
        return int(np.prod(self.out_shape))

    @property
    def macs(self) -> int:
        if self.lspec.kind == "conv2d":
            return self.n_features * self.in_shape[0] * self.lspec.kernel**2
        return self.n_weights

    def T(self) -> int:
        return materialize(float(self.p["t_hat"]), self.t_bound)

    def B_s(self, t) -> int:
        return materialize(float(self.p["b_s_hat"][t]), self.bs_bound)

    def forward(self, x, ctx: Context, stats=None):
        n = x.shape[0]
        wq, wcache = self._quant_weights(ctx)
        if self.lspec.kind == "conv2d":
            z, ccache = ops.conv2d_forward(x, wq, self.lspec.stride, self.lspec.padding)
        else:
            x = x.reshape(n, -1)
            z, ccache = x @ wq.T, x
        bcache = None
        if self.bn:
            z, bcache = ops.batchnorm_forward(
                z, self.p["gamma"].astype(np.float64), self.p["beta"].astype(np.float64),
                self.running_mean, self.running_var, ctx.train)
        v_in = z
        T, dT = self._bits("t_hat", self.t_bound, ctx)
        T_rel = T + dT
        v = np.zeros_like(v_in)
        y_prev = 0.0
        acc = np.zeros_like(v_in)
        steps = []
        for t in range(T):
            B, dB = self._bits("b_s_hat", self.bs_bound, ctx, t)
            v = v / self.tau + v_in - y_prev
            if not self.v1_ready[t]:
                r = quant_range(B, self.bidirectional)
                mean_abs = float(np.mean(np.abs(v)))
                self.p["v1"][t] = 2.0 * mean_abs / math.sqrt(r.q_max) if mean_abs > 0 else 1.0
                self.v1_ready[t] = True
                self.obs_s[t].recorded_bits = B
            elif ctx.renew_s and not ctx.replay:
                old = float(self.p["v1"][t])
                new = renew(self.obs_s[t], v, B, self.bidirectional, ctx.grid)
                if new is not None:
                    self.p["v1"][t] = new
                    ctx.events.append((self.name, f"spike[{t}]", old, float(self.p["v1"][t])))
            V1 = float(self.p["v1"][t])
            ratio = v / V1
            codes, masks = _quant_site(ratio, B, self.bidirectional, ctx, (self.name, "s", t), dB,
                                       floor=not self.shift)
            y = V1 * codes
            steps.append((ratio, codes, masks, V1, B))
            if stats is not None:
                stats["ones"] += int(popcount(codes).sum())
                stats["slots"] += int(codes.size * B)
            acc += y
            y_prev = y
        if stats is not None:
            stats["features"] += int(v_in.size)
        out = acc / T_rel
        cache = (x.shape, wq, wcache, ccache, bcache, steps, T_rel, out)
        return out, cache

    def backward(self, g_out, cache, grads, scaled=True, need_input_grad=True):
        x_shape, wq, wcache, ccache, bcache, steps, T_rel, out = cache
        T = len(steps)
        grads["t_hat"] += (-float(np.sum(g_out * out)) / T_rel
                           * materialize_mask(float(self.p["t_hat"]), self.t_bound))
        gy_direct = g_out / T_rel
        gv_next = np.zeros_like(g_out)
        g_vin = np.zeros_like(g_out)
        for t in reversed(range(T)):
            ratio, codes, masks, V1, B = steps[t]
            r = quant_range(B, self.bidirectional)
            gy = gy_direct - gv_next
            gv = gy * masks[0] + gv_next / self.tau
            scale = grad_scale(ratio.size, r) if scaled else 1.0
            grads["v1"][t] += float(np.sum(gy * _step_gq(r, ratio, codes, masks))) * scale
            gb = float(np.sum(gy * V1 * _bits_gq(r, self.bidirectional, masks))) * scale
            grads["b_s_hat"][t] += gb * materialize_mask(float(self.p["b_s_hat"][t]), self.bs_bound)
            g_vin += gv
            gv_next = gv
        gz = g_vin
        if self.bn:
            gz, ggamma, gbeta = ops.batchnorm_backward(gz, bcache)
            grads["gamma"] += ggamma
            grads["beta"] += gbeta
        if self.lspec.kind == "conv2d":
            gx, g_wq = ops.conv2d_backward(gz, wq, ccache, need_input_grad)
        else:
            g_wq = gz.T @ ccache
            gx = (gz @ wq).reshape(x_shape) if need_input_grad else None
        self._weight_grads(g_wq, wcache, grads, scaled)
        return gx

    def alloc(self, tape: Tape | None = None) -> LayerAlloc:
        if tape is not None and tape.mode == "replay":
            base = tape.base[(self.name, "t_hat", None)]
            T = materialize(base, self.t_bound)
            T_rel = T + (float(self.p["t_hat"]) - base) * materialize_mask(base, self.t_bound)
            bs = []
            for t in range(T):
                b0 = tape.base[(self.name, "b_s_hat", t)]
                bs.append(materialize(b0, self.bs_bound)
                          + (float(self.p["b_s_hat"][t]) - b0) * materialize_mask(b0, self.bs_bound))
            b0 = tape.base[(self.name, "b_w_hat", None)]
            bw = materialize(b0, self.bw_bound) + (float(self.p["b_w_hat"]) - b0) * materialize_mask(b0, self.bw_bound)
            return LayerAlloc(self.n_weights, bw, self.n_features, T_rel, bs)
        T = self.T()
        return LayerAlloc(self.n_weights, self.B_w(), self.n_features, T, [self.B_s(t) for t in range(T)])


class HeadLayer(_QuantLayer):
    def __init__(self, n_in, n_out, spec: ModelSpec, rng, dtype):
        super().__init__("head", (n_out, n_in), n_in, spec.bounds, spec.init_bits, rng, dtype)
        self.p["bias"] = np.zeros(n_out, dtype=dtype)

    @property
    def macs(self) -> int:
        return self.n_weights

    def forward(self, x, ctx: Context):
        x = x.reshape(x.shape[0], -1)
        wq, wcache = self._quant_weights(ctx)
        return x @ wq.T + self.p["bias"].astype(np.float64), (x, wq, wcache)

    def backward(self, g, cache, grads, scaled=True):
        x, wq, wcache = cache
        grads["bias"] += g.sum(axis=0)
        self._weight_grads(g.T @ x, wcache, grads, scaled)
        return g @ wq

    def alloc(self, tape: Tape | None = None) -> LayerAlloc:
        if tape is not None and tape.mode == "replay":
            b0 = tape.base[(self.name, "b_w_hat", None)]
            bw = materialize(b0, self.bw_bound) + (float(self.p["b_w_hat"]) - b0) * materialize_mask(b0, self.bw_bound)
            return LayerAlloc(self.n_weights, bw)
        return LayerAlloc(self.n_weights, self.B_w())


BIT_PARAMS = ("b_w_hat", "b_s_hat", "t_hat")


class Network:
    def __init__(self, spec: ModelSpec, seed: int = 0, dtype=np.float32):
        self.spec = spec
        self.dtype = np.dtype(dtype)
        rng = np.random.default_rng(seed)
        shapes = spec.shapes()
        in_shapes = [spec.input_shape] + shapes[:-1]
        self.layers = [SpikingLayer(i, l, in_shapes[i], shapes[i], spec, rng, self.dtype)
                       for i, l in enumerate(spec.layers)]
        self.head = HeadLayer(int(np.prod(shapes[-1])), spec.num_classes, spec, rng, self.dtype)

    @property
    def all_layers(self):
        return self.layers + [self.head]

    def named_params(self):
        for layer in self.all_layers:
            for k, v in layer.p.items():
                yield f"{layer.name}.{k}", layer, k, v

    def zero_grads(self):
        return {layer.name: {k: np.zeros(v.shape, dtype=np.float64) for k, v in layer.p.items()}
                for layer in self.all_layers}

    def forward(self, x, ctx: Context, stats=None):
        x = np.asarray(x, dtype=np.float64)
        if x.shape[1:] != self.spec.input_shape:
            raise InvalidArgument(f"input shape {x.shape[1:]} does not match model input {self.spec.input_shape}")
        caches = []
        h = x
        for layer in self.layers:
            h, c = layer.forward(h, ctx, stats)
            caches.append(c)
        logits, hc = self.head.forward(h, ctx)
        caches.append(hc)
        return logits, caches

    def backward(self, g_logits, caches, scaled=True):
        grads = self.zero_grads()
        g = self.head.backward(g_logits, caches[-1], grads["head"], scaled)
        for i in reversed(range(len(self.layers))):
            layer = self.layers[i]
            g = g.reshape(caches[i][-1].shape)
            g = layer.backward(g, caches[i], grads[layer.name], scaled, need_input_grad=i > 0)
        return grads

    def allocs(self, tape: Tape | None = None):
        return [layer.alloc(tape) for layer in self.all_layers]

    def average_bits(self, tape: Tape | None = None):
        return average_bits(self.allocs(tape))

    def regulating(self, targets, grads=None, tape: Tape | None = None):
        """Regulating loss; adds its gradient to ``grads`` when given."""
        allocs = self.allocs(tape)
        avg = average_bits(allocs)
        loss, g_avg = regulating_loss(avg, targets)
        if grads is not None:
            for layer, d, a in zip(self.all_layers, average_bits_grads(allocs), allocs):
                gl = grads[layer.name]
                gl["b_w_hat"] += g_avg["B_w"] * d["B_w"] * materialize_mask(float(layer.p["b_w_hat"]), layer.bw_bound)
                if isinstance(layer, SpikingLayer):
                    for t in range(len(a.B_s)):
                        gl["b_s_hat"][t] += g_avg["B_s"] * d["B_s"] * materialize_mask(
                            float(layer.p["b_s_hat"][t]), layer.bs_bound)
                    gT = g_avg["B_s"] * d["T_s"] + g_avg["T"] * d["T"]
                    gl["t_hat"] += gT * materialize_mask(float(layer.p["t_hat"]), layer.t_bound)
        return loss, avg

    def loss_and_grads(self, x, labels, targets, ctx: Context, scaled=True, stats=None, regulate=True):
        logits, caches = self.forward(x, ctx, stats)
        task, g_logits = ops.softmax_cross_entropy(logits, labels)
        grads = self.backward(g_logits, caches, scaled)
        reg, avg = self.regulating(targets, grads if regulate else None, ctx.tape if ctx.replay else None)
        return task, reg, grads, logits

    def layer_costs(self):
        """Per-weight-layer cost inputs: each layer consumes its predecessor's spikes."""
        costs = []
        prev = None
        for layer in self.all_layers:
            if prev is None:
                T, Bs = 1, float(self.spec.input_bits)
            else:
                T = prev.T()
                Bs = float(np.mean([prev.B_s(t) for t in range(T)]))
            costs.append(LayerCost(layer.macs, T, layer.B_w(), Bs))
            prev = layer if isinstance(layer, SpikingLayer) else None
        return costs

    def state_arrays(self):
        """Every array needed to reproduce inference, in a fixed order."""
        out = []
        for name, layer, k, v in self.named_params():
            out.append((name, v))
        for layer in self.layers:
            if layer.bn:
                out.append((f"{layer.name}.running_mean", layer.running_mean))
                out.append((f"{layer.name}.running_var", layer.running_var))
        return out
