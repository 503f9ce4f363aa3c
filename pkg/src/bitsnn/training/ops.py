"""Dense numpy kernels with hand-written backward passes."""

from __future__ import annotations

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view


def conv_out_size(size: int, kernel: int, stride: int, padding: int) -> int:
    return (size + 2 * padding - kernel) // stride + 1


def _cols(x, k, stride, padding):
    xp = np.pad(x, ((0, 0), (0, 0), (padding, padding), (padding, padding))) if padding else x
    win = sliding_window_view(xp, (k, k), axis=(2, 3))
    return win[:, :, ::stride, ::stride], xp.shape


def conv2d_forward(x, w, stride=1, padding=0):
    """x: [N, C, H, W], w: [O, C, k, k] -> [N, O, Ho, Wo]."""
    k = w.shape[-1]
    cols, xp_shape = _cols(x, k, stride, padding)
    out = np.tensordot(cols, w, axes=([1, 4, 5], [1, 2, 3]))  # N, Ho, Wo, O
    cache = (cols, xp_shape, x.shape, stride, padding, k)
    return np.ascontiguousarray(out.transpose(0, 3, 1, 2)), cache


def conv2d_backward(g, w, cache, need_input_grad=True):
    cols, xp_shape, x_shape, stride, padding, k = cache
    gw = np.tensordot(g, cols, axes=([0, 2, 3], [0, 2, 3]))  # O, C, k, k
    if not need_input_grad:
        return None, gw
    gcols = np.tensordot(g, w, axes=([1], [0]))  # N, Ho, Wo, C, k, k
    gcols = gcols.transpose(0, 3, 1, 2, 4, 5)
    Ho, Wo = g.shape[2], g.shape[3]
    gxp = np.zeros(xp_shape)
    for i in range(k):
        for j in range(k):
            gxp[:, :, i:i + stride * Ho:stride, j:j + stride * Wo:stride] += gcols[..., i, j]
    if padding:
        gxp = gxp[:, :, padding:-padding, padding:-padding]
    return gxp, gw


def _bn_axes(z):
    return (0,) if z.ndim == 2 else (0, 2, 3)


def _bn_shape(z):
    return (1, -1) if z.ndim == 2 else (1, -1, 1, 1)


def batchnorm_forward(z, gamma, beta, running_mean, running_var, train, momentum=0.1, eps=1e-5):
    """Per-channel batch norm. Running statistics are updated in place when training."""
    axes, shp = _bn_axes(z), _bn_shape(z)
    if train:
        mean = z.mean(axis=axes)
        var = z.var(axis=axes)
        m = z.size // z.shape[1]
        running_mean *= 1 - momentum
        running_mean += momentum * mean
        running_var *= 1 - momentum
        running_var += momentum * var * m / max(m - 1, 1)
    else:
        mean, var = running_mean.astype(np.float64), running_var.astype(np.float64)
    inv = 1.0 / np.sqrt(var + eps)
    xhat = (z - mean.reshape(shp)) * inv.reshape(shp)
    out = xhat * gamma.reshape(shp) + beta.reshape(shp)
    return out, (xhat, inv, gamma, train)


def batchnorm_backward(g, cache):
    xhat, inv, gamma, train = cache
    axes, shp = _bn_axes(g), _bn_shape(g)
    ggamma = np.sum(g * xhat, axis=axes)
    gbeta = np.sum(g, axis=axes)
    gxhat = g * gamma.reshape(shp)
    if not train:
        return gxhat * inv.reshape(shp), ggamma, gbeta
    m = g.size // g.shape[1]
    gz = (inv.reshape(shp) / m) * (
        m * gxhat
        - np.sum(gxhat, axis=axes).reshape(shp)
        - xhat * np.sum(gxhat * xhat, axis=axes).reshape(shp)
    )
    return gz, ggamma, gbeta


def softmax_cross_entropy(logits, labels):
    """Mean cross-entropy and its gradient with respect to the logits."""
    z = logits - logits.max(axis=1, keepdims=True)
    logp = z - np.log(np.exp(z).sum(axis=1, keepdims=True))
    n = logits.shape[0]
    loss = -float(np.mean(logp[np.arange(n), labels]))
    g = np.exp(logp)
    g[np.arange(n), labels] -= 1.0
    return loss, g / n
