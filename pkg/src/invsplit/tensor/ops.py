"""Primitive tensor kernels with hand-written backward passes.

All tensors are float64 arrays in (batch, height, width, channel) layout.
Convolutions use TensorFlow-style SAME zero padding.
"""

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view


def same_padding(size, k, s):
    """Return (out_size, pad_before, pad_after) for SAME padding."""
    out = -(-size // s)
    total = max((out - 1) * s + k - size, 0)
    return out, total // 2, total - total // 2


def _patches(xp, kh, kw, s, oh, ow):
    win = sliding_window_view(xp, (kh, kw), axis=(1, 2))
    # (n, oh, ow, c, kh, kw)
    return win[:, : s * (oh - 1) + 1 : s, : s * (ow - 1) + 1 : s]


def _pad_geometry(x_shape, w_shape, s):
    _, h, w, _ = x_shape
    kh, kw = w_shape[:2]
    oh, pt, pb = same_padding(h, kh, s)
    ow, pl, pr = same_padding(w, kw, s)
    return oh, ow, (pt, pb), (pl, pr)


def conv2d(x, w, s=1):
    """SAME convolution (cross-correlation). w has shape (kh, kw, cin, cout)."""
    kh, kw = w.shape[:2]
    oh, ow, ph, pw = _pad_geometry(x.shape, w.shape, s)
    xp = np.pad(x, ((0, 0), ph, pw, (0, 0)))
    p = _patches(xp, kh, kw, s, oh, ow)
    return np.tensordot(p, w, axes=([3, 4, 5], [2, 0, 1]))


def conv2d_input_grad(dout, w, s, x_shape):
    kh, kw = w.shape[:2]
    oh, ow, ph, pw = _pad_geometry(x_shape, w.shape, s)
    n, h, wd, c = x_shape
    dp = np.tensordot(dout, w, axes=([3], [3]))  # (n, oh, ow, kh, kw, cin)
    dxp = np.zeros((n, h + sum(ph), wd + sum(pw), c))
    for a in range(kh):
        for b in range(kw):
            dxp[:, a : a + s * (oh - 1) + 1 : s, b : b + s * (ow - 1) + 1 : s] += dp[:, :, :, a, b]
    return dxp[:, ph[0] : ph[0] + h, pw[0] : pw[0] + wd]


def conv2d_weight_grad(x, dout, w_shape, s):
    kh, kw = w_shape[:2]
    oh, ow, ph, pw = _pad_geometry(x.shape, w_shape, s)
    xp = np.pad(x, ((0, 0), ph, pw, (0, 0)))
    p = _patches(xp, kh, kw, s, oh, ow)
    dw = np.tensordot(p, dout, axes=([0, 1, 2], [0, 1, 2]))  # (cin, kh, kw, cout)
    return dw.transpose(1, 2, 0, 3)


def conv2d_transpose(t, w, s):
    """Transposed SAME convolution: the adjoint of a stride-s SAME conv.

    w has shape (kh, kw, cin, cout); output spatial size is input size times s.
    """
    n, h, wd, _ = t.shape
    kc = w.transpose(0, 1, 3, 2)
    return conv2d_input_grad(t, kc, s, (n, h * s, wd * s, w.shape[3]))


def conv2d_transpose_backward(t, w, s, dout):
    kc = w.transpose(0, 1, 3, 2)
    dt = conv2d(dout, kc, s)
    dkc = conv2d_weight_grad(dout, t, kc.shape, s)
    return dt, dkc.transpose(0, 1, 3, 2)


def batch_norm_train(x, gamma, beta, eps):
    mu = x.mean(axis=(0, 1, 2))
    var = x.var(axis=(0, 1, 2))
    inv_std = 1.0 / np.sqrt(var + eps)
    xhat = (x - mu) * inv_std
    return gamma * xhat + beta, (xhat, inv_std, mu, var)


def batch_norm_train_backward(dout, gamma, cache):
    xhat, inv_std = cache[0], cache[1]
    m = xhat.shape[0] * xhat.shape[1] * xhat.shape[2]
    axes = (0, 1, 2)
    dgamma = (dout * xhat).sum(axis=axes)
    dbeta = dout.sum(axis=axes)
    dxhat = dout * gamma
    dx = (inv_std / m) * (
        m * dxhat - dxhat.sum(axis=axes) - xhat * (dxhat * xhat).sum(axis=axes)
    )
    return dx, dgamma, dbeta


def pixel_unshuffle(x, r):
    """Space-to-depth. Output channel index is c * r**2 + di * r + dj."""
    n, h, w, c = x.shape
    if h % r or w % r:
        raise ValueError(f"spatial dims {h}x{w} not divisible by r={r}")
    y = x.reshape(n, h // r, r, w // r, r, c).transpose(0, 1, 3, 5, 2, 4)
    return y.reshape(n, h // r, w // r, c * r * r)


def pixel_shuffle(x, r):
    """Depth-to-space; exact inverse of pixel_unshuffle."""
    n, h, w, c = x.shape
    if c % (r * r):
        raise ValueError(f"channel count {c} not divisible by r**2={r * r}")
    co = c // (r * r)
    y = x.reshape(n, h, w, co, r, r).transpose(0, 1, 4, 2, 5, 3)
    return y.reshape(n, h * r, w * r, co)


def sigmoid(x):
    out = np.empty_like(x)
    pos = x >= 0
    out[pos] = 1.0 / (1.0 + np.exp(-x[pos]))
    ex = np.exp(x[~pos])
    out[~pos] = ex / (1.0 + ex)
    return out
