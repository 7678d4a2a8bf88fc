"""Differentiable primitives for the motion networks: same-padded 2-D
convolution, leaky rectifier, and separable bilinear resize. Each op has an
explicit backward; together with the warp and loss kernels they form the
closed set the hand-written reverse pass runs over.

conv2d returns its im2col matrix so the reverse pass can reuse it instead of
rebuilding it; the trainer threads it through the forward trace.
"""

from functools import lru_cache

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view


def _pad_zeros(x, ph, pw):
    h, w, c = x.shape
    xp = np.zeros((h + 2 * ph, w + 2 * pw, c), dtype=x.dtype)
    xp[ph:ph + h, pw:pw + w] = x
    return xp


def _im2col(x, kh, kw, stride):
    xp = _pad_zeros(x, kh // 2, kw // 2)
    win = sliding_window_view(xp, (kh, kw), axis=(0, 1))[::stride, ::stride]
    oh, ow = win.shape[:2]
    cols = win.transpose(0, 1, 3, 4, 2).reshape(oh * ow, kh * kw * x.shape[2])
    return cols, oh, ow


def conv2d(x, w, b, stride=1):
    """Same-padded convolution of (H, W, Cin) with (kh, kw, Cin, Cout) weights.

    Output is (ceil(H/stride), ceil(W/stride), Cout) for odd kernel sizes.
    Returns (y, cols); pass ``cols`` back into :func:`conv2d_backward`.
    """
    kh, kw, cin, cout = w.shape
    cols, oh, ow = _im2col(x, kh, kw, stride)
    y = cols @ w.reshape(kh * kw * cin, cout)
    y += b
    return y.reshape(oh, ow, cout), cols


def conv2d_backward(cols, x_shape, w, stride, dy, need_dx=True):
    """Gradients of conv2d w.r.t. input, weights and bias.

    ``cols`` is the im2col matrix returned by :func:`conv2d`; ``x_shape`` the
    forward input shape. ``need_dx=False`` skips the input gradient (used at
    the image layer, whose input is data).
    """
    kh, kw, cin, cout = w.shape
    ph, pw = kh // 2, kw // 2
    oh, ow = dy.shape[:2]
    dy_mat = dy.reshape(oh * ow, cout)
    dw = (cols.T @ dy_mat).reshape(kh, kw, cin, cout)
    db = dy_mat.sum(axis=0)
    if not need_dx:
        return None, dw, db
    dcols = (dy_mat @ w.reshape(kh * kw * cin, cout).T).reshape(oh, ow, kh, kw, cin)
    h, w_ = x_shape[:2]
    dxp = np.zeros((h + 2 * ph, w_ + 2 * pw, cin), dtype=dy.dtype)
    for ky in range(kh):
        for kx in range(kw):
            dxp[ky:ky + stride * oh:stride, kx:kx + stride * ow:stride] += dcols[:, :, ky, kx, :]
    dx = dxp[ph:ph + h, pw:pw + w_]
    return dx, dw, db


def leaky_relu(x, slope):
    # max(x, slope*x) == leaky rectifier for 0 <= slope <= 1
    return np.maximum(x, slope * x)


def leaky_relu_backward(x, slope, dy):
    return np.where(x >= 0, dy, slope * dy)


@lru_cache(maxsize=256)
def _resize_matrix(n_in, n_out, dtype_str):
    """Dense 1-D align-corners interpolation matrix mapping n_in -> n_out."""
    m = np.zeros((n_out, n_in), dtype=np.float64)
    if n_out == 1 or n_in == 1:
        m[:, 0] = 1.0
    else:
        s = (n_in - 1) / (n_out - 1)
        pos = np.arange(n_out) * s
        i0 = np.clip(np.floor(pos).astype(int), 0, n_in - 2)
        f = pos - i0
        m[np.arange(n_out), i0] = 1.0 - f
        m[np.arange(n_out), i0 + 1] += f
    return m.astype(dtype_str)


def resize(x, out_h, out_w):
    """Separable align-corners bilinear resize of an (H, W, C) array."""
    h, w, c = x.shape
    if (h, w) == (out_h, out_w):
        return x.copy()
    ry = _resize_matrix(h, out_h, x.dtype.str)
    rx = _resize_matrix(w, out_w, x.dtype.str)
    y = ry @ x.reshape(h, w * c)
    y = y.reshape(out_h, w, c).transpose(1, 0, 2).reshape(w, out_h * c)
    y = rx @ y
    return y.reshape(out_w, out_h, c).transpose(1, 0, 2)


def resize_backward(dy, in_h, in_w):
    """Adjoint of :func:`resize` mapping output grads back to the input grid."""
    oh, ow, c = dy.shape
    if (oh, ow) == (in_h, in_w):
        return dy.copy()
    ry = _resize_matrix(in_h, oh, dy.dtype.str)
    rx = _resize_matrix(in_w, ow, dy.dtype.str)
    g = ry.T @ dy.reshape(oh, ow * c)
    g = g.reshape(in_h, ow, c).transpose(1, 0, 2).reshape(ow, in_h * c)
    g = rx.T @ g
    return g.reshape(in_w, in_h, c).transpose(1, 0, 2)
