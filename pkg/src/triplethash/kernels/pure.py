"""Pure-NumPy kernel lane.

Fallback implementations of the hot inner loops (convolution, pooling,
Hamming scan). The compiled lane in ``_core.pyx`` mirrors these signatures
exactly; tests assert the two lanes agree. Convolutions go through im2col
plus a BLAS matmul, pooling through strided window views.

Conventions shared by both lanes:
  - feature maps are float64 arrays in (N, C, H, W) order
  - padding is expressed as (pad_top, pad_left) plus explicit output extents
  - max pooling ignores padded cells entirely and breaks ties by the first
    occurrence in row-major window order
  - average pooling divides by the count of in-bounds cells in each window
"""

import numpy as np
from numpy.lib.stride_tricks import as_strided

_POPCOUNT8 = np.array([bin(i).count("1") for i in range(256)], dtype=np.uint8)


def _pad_extents(h, w, k, stride, pad_top, pad_left, out_h, out_w):
    # Bottom/right padding is whatever the output extent still needs.
    pad_bottom = max((out_h - 1) * stride + k - h - pad_top, 0)
    pad_right = max((out_w - 1) * stride + k - w - pad_left, 0)
    return pad_bottom, pad_right


def _window_view(xp, k, stride, out_h, out_w):
    n, c = xp.shape[:2]
    sn, sc, sh, sw = xp.strides
    shape = (n, c, out_h, out_w, k, k)
    strides = (sn, sc, sh * stride, sw * stride, sh, sw)
    return as_strided(xp, shape=shape, strides=strides)


def conv2d_forward(x, w, stride, pad_top, pad_left, out_h, out_w):
    n, c, h, wd = x.shape
    f, _, kh, kw = w.shape
    pb, pr = _pad_extents(h, wd, kh, stride, pad_top, pad_left, out_h, out_w)
    xp = np.pad(x, ((0, 0), (0, 0), (pad_top, pb), (pad_left, pr)))
    windows = _window_view(xp, kh, stride, out_h, out_w)
    cols = windows.transpose(0, 2, 3, 1, 4, 5).reshape(n * out_h * out_w, c * kh * kw)
    out = cols @ w.reshape(f, -1).T
    return np.ascontiguousarray(out.reshape(n, out_h, out_w, f).transpose(0, 3, 1, 2))


def conv2d_backward(x, w, gout, stride, pad_top, pad_left, need_gx=True):
    n, c, h, wd = x.shape
    f, _, kh, kw = w.shape
    out_h, out_w = gout.shape[2], gout.shape[3]
    pb, pr = _pad_extents(h, wd, kh, stride, pad_top, pad_left, out_h, out_w)
    xp = np.pad(x, ((0, 0), (0, 0), (pad_top, pb), (pad_left, pr)))
    windows = _window_view(xp, kh, stride, out_h, out_w)
    cols = windows.transpose(0, 2, 3, 1, 4, 5).reshape(n * out_h * out_w, c * kh * kw)

    g2 = np.ascontiguousarray(gout.transpose(0, 2, 3, 1)).reshape(n * out_h * out_w, f)
    gw = (g2.T @ cols).reshape(f, c, kh, kw)
    if not need_gx:
        return None, gw

    gcols = (g2 @ w.reshape(f, -1)).reshape(n, out_h, out_w, c, kh, kw)
    gxp = np.zeros((n, c, h + pad_top + pb, wd + pad_left + pr))
    for i in range(kh):
        for j in range(kw):
            # Within one (i, j) offset the strided targets never overlap.
            gxp[:, :, i : i + stride * out_h : stride, j : j + stride * out_w : stride] += (
                gcols[:, :, :, :, i, j].transpose(0, 3, 1, 2)
            )
    gx = np.ascontiguousarray(gxp[:, :, pad_top : pad_top + h, pad_left : pad_left + wd])
    return gx, gw


def maxpool2d_forward(x, window, stride, pad_top, pad_left, out_h, out_w):
    n, c, h, w = x.shape
    pb, pr = _pad_extents(h, w, window, stride, pad_top, pad_left, out_h, out_w)
    xp = np.pad(x, ((0, 0), (0, 0), (pad_top, pb), (pad_left, pr)),
                constant_values=-np.inf)
    windows = _window_view(xp, window, stride, out_h, out_w)
    flat = windows.reshape(n, c, out_h, out_w, window * window)
    local = flat.argmax(axis=4)  # first occurrence in row-major window order
    out = np.take_along_axis(flat, local[..., None], axis=4)[..., 0]

    # Translate the window-local winner into a flat (ih * W + iw) index.
    oh = np.arange(out_h)[:, None]
    ow = np.arange(out_w)[None, :]
    ih = oh * stride - pad_top + local // window
    iw = ow * stride - pad_left + local % window
    arg = (ih * w + iw).astype(np.int64)
    return np.ascontiguousarray(out), arg


def maxpool2d_backward(arg, gout, h, w):
    n, c = gout.shape[:2]
    gx = np.zeros((n * c, h * w))
    rows = np.repeat(np.arange(n * c), gout.shape[2] * gout.shape[3])
    np.add.at(gx, (rows, arg.reshape(n * c, -1).ravel()), gout.reshape(n * c, -1).ravel())
    return gx.reshape(n, c, h, w)


def _window_counts(h, w, window, stride, pad_top, pad_left, out_h, out_w):
    ones = np.ones((1, 1, h, w))
    pb, pr = _pad_extents(h, w, window, stride, pad_top, pad_left, out_h, out_w)
    op = np.pad(ones, ((0, 0), (0, 0), (pad_top, pb), (pad_left, pr)))
    return _window_view(op, window, stride, out_h, out_w).sum(axis=(4, 5))[0, 0]


def avgpool2d_forward(x, window, stride, pad_top, pad_left, out_h, out_w):
    n, c, h, w = x.shape
    pb, pr = _pad_extents(h, w, window, stride, pad_top, pad_left, out_h, out_w)
    xp = np.pad(x, ((0, 0), (0, 0), (pad_top, pb), (pad_left, pr)))
    sums = _window_view(xp, window, stride, out_h, out_w).sum(axis=(4, 5))
    counts = _window_counts(h, w, window, stride, pad_top, pad_left, out_h, out_w)
    return np.ascontiguousarray(sums / counts)


def avgpool2d_backward(gout, h, w, window, stride, pad_top, pad_left):
    n, c, out_h, out_w = gout.shape
    counts = _window_counts(h, w, window, stride, pad_top, pad_left, out_h, out_w)
    g = gout / counts
    pb, pr = _pad_extents(h, w, window, stride, pad_top, pad_left, out_h, out_w)
    gxp = np.zeros((n, c, h + pad_top + pb, w + pad_left + pr))
    for i in range(window):
        for j in range(window):
            gxp[:, :, i : i + stride * out_h : stride, j : j + stride * out_w : stride] += g
    return np.ascontiguousarray(gxp[:, :, pad_top : pad_top + h, pad_left : pad_left + w])


def hamming_distances(codes, query):
    """Per-row Hamming distance between packed uint8 codes and one packed query."""
    return _POPCOUNT8[np.bitwise_xor(codes, query[None, :])].sum(axis=1, dtype=np.int64)
