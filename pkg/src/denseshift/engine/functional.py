"""Forward/backward math for the supported layer kinds.

All functions are pure; each ``*_forward`` returns ``(out, cache)`` and the
matching ``*_backward`` consumes that cache.
"""
from __future__ import annotations

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view


def conv_output_size(size, k, stride, pad):
    return (size + 2 * pad - k) // stride + 1


def im2col(x, kh, kw, stride=1, pad=0):
    """Rows are output positions (n, oh, ow); columns are (c, kh, kw)."""
    N, C, H, W = x.shape
    if pad:
        x = np.pad(x, ((0, 0), (0, 0), (pad, pad), (pad, pad)))
    win = sliding_window_view(x, (kh, kw), axis=(2, 3))[:, :, ::stride, ::stride]
    OH, OW = win.shape[2], win.shape[3]
    cols = win.transpose(0, 2, 3, 1, 4, 5).reshape(N * OH * OW, C * kh * kw)
    return cols, OH, OW


def col2im(dcols, x_shape, kh, kw, stride, pad, OH, OW):
    N, C, H, W = x_shape
    d = dcols.reshape(N, OH, OW, C, kh, kw).transpose(0, 3, 4, 5, 1, 2)
    dxp = np.zeros((N, C, H + 2 * pad, W + 2 * pad), dtype=dcols.dtype)
    for i in range(kh):
        hi = i + stride * OH
        for j in range(kw):
            dxp[:, :, i:hi:stride, j:j + stride * OW:stride] += d[:, :, i, j]
    if pad:
        return dxp[:, :, pad:-pad, pad:-pad]
    return dxp


def conv2d_forward(x, w, b, stride=1, pad=0):
    O, C, KH, KW = w.shape
    N = x.shape[0]
    cols, OH, OW = im2col(x, KH, KW, stride, pad)
    out = cols @ w.reshape(O, -1).T
    if b is not None:
        out += b
    out = out.reshape(N, OH, OW, O).transpose(0, 3, 1, 2)
    return np.ascontiguousarray(out), (cols, x.shape, w, stride, pad, OH, OW)


def conv2d_backward(dout, cache, need_dx=True):
    cols, x_shape, w, stride, pad, OH, OW = cache
    O, C, KH, KW = w.shape
    d2 = dout.transpose(0, 2, 3, 1).reshape(-1, O)
    dw = (d2.T @ cols).reshape(w.shape)
    db = d2.sum(axis=0)
    dx = None
    if need_dx:
        dx = col2im(d2 @ w.reshape(O, -1), x_shape, KH, KW, stride, pad, OH, OW)
    return dx, dw, db


def linear_forward(x, w, b):
    out = x @ w.T
    if b is not None:
        out += b
    return out, (x, w)


def linear_backward(dout, cache, need_dx=True):
    x, w = cache
    dw = dout.T @ x
    db = dout.sum(axis=0)
    dx = dout @ w if need_dx else None
    return dx, dw, db


def _bn_axes(x):
    return (0, 2, 3) if x.ndim == 4 else (0,)


def _bn_bshape(x):
    return (1, -1, 1, 1) if x.ndim == 4 else (1, -1)


def batchnorm_forward(x, gamma, beta, running_mean, running_var, training, eps=1e-5,
                      momentum=0.1):
    """Batch statistics in training mode (running stats updated in place)."""
    axes, bs = _bn_axes(x), _bn_bshape(x)
    if training:
        mean = x.mean(axis=axes)
        var = x.var(axis=axes)
        m = x.size // x.shape[1]
        running_mean *= 1 - momentum
        running_mean += momentum * mean
        running_var *= 1 - momentum
        running_var += momentum * var * (m / max(m - 1, 1))
    else:
        mean, var = running_mean, running_var
    inv_std = 1.0 / np.sqrt(var + eps)
    xhat = (x - mean.reshape(bs)) * inv_std.reshape(bs)
    out = xhat * gamma.reshape(bs) + beta.reshape(bs)
    return out.astype(x.dtype, copy=False), (xhat, inv_std, gamma, training)


def batchnorm_backward(dout, cache):
    xhat, inv_std, gamma, training = cache
    axes, bs = _bn_axes(dout), _bn_bshape(dout)
    dgamma = (dout * xhat).sum(axis=axes)
    dbeta = dout.sum(axis=axes)
    dxhat = dout * gamma.reshape(bs)
    if not training:
        return dxhat * inv_std.reshape(bs), dgamma, dbeta
    m = dout.size // dout.shape[1]
    dx = (inv_std.reshape(bs) / m) * (
        m * dxhat - dxhat.sum(axis=axes).reshape(bs) - xhat * (dxhat * xhat).sum(axis=axes).reshape(bs)
    )
    return dx.astype(dout.dtype, copy=False), dgamma, dbeta


def relu_forward(x):
    mask = x > 0
    return x * mask, mask


def relu_backward(dout, mask):
    return dout * mask


def _pool_windows(x, k, stride):
    win = sliding_window_view(x, (k, k), axis=(2, 3))[:, :, ::stride, ::stride]
    return win


def maxpool_forward(x, k=2, stride=2):
    win = _pool_windows(x, k, stride)
    N, C, OH, OW = win.shape[:4]
    flat = win.reshape(N, C, OH, OW, k * k)
    arg = flat.argmax(axis=-1)
    out = np.take_along_axis(flat, arg[..., None], axis=-1)[..., 0]
    return out, (x.shape, arg, k, stride)


def maxpool_backward(dout, cache):
    x_shape, arg, k, stride = cache
    OH, OW = dout.shape[2:]
    dx = np.zeros(x_shape, dtype=dout.dtype)
    for i in range(k):
        for j in range(k):
            sel = dout * (arg == i * k + j)
            dx[:, :, i:i + stride * OH:stride, j:j + stride * OW:stride] += sel
    return dx


def avgpool_forward(x, k=2, stride=2):
    win = _pool_windows(x, k, stride)
    return win.mean(axis=(-2, -1)).astype(x.dtype, copy=False), (x.shape, k, stride)


def avgpool_backward(dout, cache):
    x_shape, k, stride = cache
    OH, OW = dout.shape[2:]
    dx = np.zeros(x_shape, dtype=dout.dtype)
    share = dout / (k * k)
    for i in range(k):
        for j in range(k):
            dx[:, :, i:i + stride * OH:stride, j:j + stride * OW:stride] += share
    return dx


def softmax_cross_entropy(logits, labels):
    """Mean cross-entropy and its gradient w.r.t. the logits."""
    z = logits - logits.max(axis=1, keepdims=True)
    logp = z - np.log(np.exp(z).sum(axis=1, keepdims=True))
    n = logits.shape[0]
    loss = -logp[np.arange(n), labels].mean()
    grad = np.exp(logp)
    grad[np.arange(n), labels] -= 1
    return float(loss), (grad / n).astype(logits.dtype, copy=False)
