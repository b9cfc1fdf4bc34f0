"""Dense-tensor kernel with reverse-mode differentiation.

Just enough operations to express the hashing network: convolution, pooling,
batch normalization, dense layers, activations, reductions, and the glue ops
the losses need. Tensors carry float64 data; every operation appends a node
to a module-level tape, and ``backward`` replays the tape in exact reverse
order of the forward pass, so parameters shared across branches accumulate
gradient from every path that used them.

Call ``new_recording()`` before each training step to discard the previous
tape; ``backward`` refuses tensors produced under an older recording.
"""

import math
from contextlib import contextmanager

import numpy as np

from . import kernels as _k
from .errors import GraphError, ShapeError


class Tensor:
    """A dense float64 array with an optional gradient slot."""

    __slots__ = ("data", "grad", "requires_grad", "_node")

    def __init__(self, data, requires_grad=False):
        self.data = np.ascontiguousarray(data, dtype=np.float64)
        self.grad = None
        self.requires_grad = bool(requires_grad)
        self._node = None

    @property
    def shape(self):
        return self.data.shape

    @property
    def ndim(self):
        return self.data.ndim

    @property
    def size(self):
        return self.data.size

    def zero_grad(self):
        self.grad = None

    def item(self):
        if self.data.size != 1:
            raise ShapeError(f"item() needs a single-element tensor, got shape {self.shape}")
        return float(self.data.reshape(-1)[0])

    def __repr__(self):
        return f"Tensor(shape={self.shape}, requires_grad={self.requires_grad})"


class _Node:
    __slots__ = ("out", "backward_fn", "epoch")

    def __init__(self, out, backward_fn, epoch):
        self.out = out
        self.backward_fn = backward_fn
        self.epoch = epoch


_tape = []
_epoch = 0
_recording = True


def new_recording():
    """Drop the current tape. Tensors made before this can no longer backward."""
    global _epoch
    _tape.clear()
    _epoch += 1


@contextmanager
def no_grad():
    """Run forward passes without recording (inference mode)."""
    global _recording
    prev = _recording
    _recording = False
    try:
        yield
    finally:
        _recording = prev


def _tracked(t):
    return t.requires_grad or t._node is not None


def _emit(out, inputs, backward_fn):
    if _recording and any(_tracked(t) for t in inputs):
        node = _Node(out, backward_fn, _epoch)
        out._node = node
        _tape.append(node)
    return out


def _accumulate(t, g):
    if not _tracked(t):
        return
    if t.grad is None:
        t.grad = np.array(g, dtype=np.float64)  # g may be a view; copy
    else:
        t.grad += g


def _accumulate_owned(t, g):
    # like _accumulate, but g is a freshly allocated array the closure owns,
    # so the first contribution can alias it instead of copying
    if not _tracked(t):
        return
    if t.grad is None:
        t.grad = g
    else:
        t.grad += g


def backward(loss):
    """Propagate d(loss)/d(tensor) to every tensor on the current tape."""
    if loss.size != 1:
        raise ShapeError(f"backward needs a scalar loss, got shape {loss.shape}")
    if loss._node is None or loss._node.epoch != _epoch:
        raise GraphError("backward target was not produced in the current recording")
    loss.grad = np.ones_like(loss.data)
    for node in reversed(_tape):
        if node.out.grad is None:
            continue
        node.backward_fn(node.out.grad)


def _unbroadcast(g, shape):
    while g.ndim > len(shape):
        g = g.sum(axis=0)
    for axis, extent in enumerate(shape):
        if extent == 1 and g.shape[axis] != 1:
            g = g.sum(axis=axis, keepdims=True)
    return g


# ---------------------------------------------------------------------------
# elementwise and structural ops


def add(a, b):
    out = Tensor(a.data + b.data)

    def bw(g):
        _accumulate(a, _unbroadcast(g, a.shape))
        _accumulate(b, _unbroadcast(g, b.shape))

    return _emit(out, (a, b), bw)


def sub(a, b):
    out = Tensor(a.data - b.data)

    def bw(g):
        _accumulate(a, _unbroadcast(g, a.shape))
        _accumulate(b, -_unbroadcast(g, b.shape))

    return _emit(out, (a, b), bw)


def mul(a, b):
    out = Tensor(a.data * b.data)

    def bw(g):
        _accumulate_owned(a, _unbroadcast(g * b.data, a.shape))
        _accumulate_owned(b, _unbroadcast(g * a.data, b.shape))

    return _emit(out, (a, b), bw)


def elementwise_mul(a, b):
    """Broadcasting product; alias kept for the attention application."""
    return mul(a, b)


def scale(a, s):
    s = float(s)
    out = Tensor(a.data * s)

    def bw(g):
        _accumulate_owned(a, g * s)

    return _emit(out, (a,), bw)


def add_scalar(a, s):
    s = float(s)
    out = Tensor(a.data + s)

    def bw(g):
        _accumulate(a, g)

    return _emit(out, (a,), bw)


def relu(x):
    out = Tensor(np.maximum(x.data, 0.0))
    mask = x.data > 0.0  # subgradient 0 exactly at the kink

    def bw(g):
        _accumulate_owned(x, g * mask)

    return _emit(out, (x,), bw)


def tanh_act(x):
    t = np.tanh(x.data)
    out = Tensor(t)

    def bw(g):
        _accumulate_owned(x, g * (1.0 - t * t))

    return _emit(out, (x,), bw)


def sqrt(x):
    r = np.sqrt(x.data)
    out = Tensor(r)

    def bw(g):
        _accumulate_owned(x, g * 0.5 / np.maximum(r, 1e-12))

    return _emit(out, (x,), bw)


def reshape(x, shape):
    out = Tensor(x.data.reshape(shape))
    orig = x.shape

    def bw(g):
        _accumulate(x, g.reshape(orig))

    return _emit(out, (x,), bw)


def concat(tensors, axis=1):
    out = Tensor(np.concatenate([t.data for t in tensors], axis=axis))
    splits = np.cumsum([t.shape[axis] for t in tensors])[:-1]

    def bw(g):
        for t, piece in zip(tensors, np.split(g, splits, axis=axis)):
            _accumulate(t, piece)

    return _emit(out, tuple(tensors), bw)


def sum_all(x):
    out = Tensor(x.data.sum())

    def bw(g):
        _accumulate_owned(x, np.broadcast_to(g, x.shape).copy())

    return _emit(out, (x,), bw)


def mean_all(x):
    n = x.size
    out = Tensor(x.data.sum() / n)

    def bw(g):
        _accumulate_owned(x, np.broadcast_to(g / n, x.shape).copy())

    return _emit(out, (x,), bw)


def sum_axis(x, axis, keepdims=False):
    out = Tensor(x.data.sum(axis=axis, keepdims=keepdims))

    def bw(g):
        gg = g if keepdims else np.expand_dims(g, axis)
        _accumulate_owned(x, np.broadcast_to(gg, x.shape).copy())

    return _emit(out, (x,), bw)


def matmul(a, b):
    if a.ndim != 2 or b.ndim != 2:
        raise ShapeError(f"matmul expects 2-D operands, got {a.shape} @ {b.shape}")
    if a.shape[1] != b.shape[0]:
        raise ShapeError(
            f"matmul: inner axes disagree, {a.shape[1]} (lhs axis 1) vs {b.shape[0]} (rhs axis 0)"
        )
    out = Tensor(a.data @ b.data)

    def bw(g):
        _accumulate_owned(a, g @ b.data.T)
        _accumulate_owned(b, a.data.T @ g)

    return _emit(out, (a, b), bw)


def dense(x, w, b):
    """Fully connected layer: x (N, D) @ w (D, M) + b (M,)."""
    if x.ndim != 2:
        raise ShapeError(f"dense expects 2-D input, got {x.shape}")
    if x.shape[1] != w.shape[0]:
        raise ShapeError(
            f"dense: input feature axis {x.shape[1]} does not match weight rows {w.shape[0]}"
        )
    out = Tensor(x.data @ w.data + b.data)

    def bw(g):
        _accumulate_owned(x, g @ w.data.T)
        _accumulate_owned(w, x.data.T @ g)
        _accumulate_owned(b, g.sum(axis=0))

    return _emit(out, (x, w, b), bw)


# ---------------------------------------------------------------------------
# channel reductions (attention descriptors)


def channel_max(x):
    """Per-pixel maximum over the channel axis; (N,C,H,W) -> (N,1,H,W).

    Ties route gradient to the first channel (row-major argmax).
    """
    arg = x.data.argmax(axis=1, keepdims=True)
    out = Tensor(np.take_along_axis(x.data, arg, axis=1))

    def bw(g):
        gx = np.zeros_like(x.data)
        np.put_along_axis(gx, arg, g, axis=1)
        _accumulate_owned(x, gx)

    return _emit(out, (x,), bw)


def channel_mean(x):
    """Per-pixel mean over the channel axis; (N,C,H,W) -> (N,1,H,W)."""
    c = x.shape[1]
    out = Tensor(x.data.mean(axis=1, keepdims=True))

    def bw(g):
        _accumulate_owned(x, np.broadcast_to(g / c, x.shape).copy())

    return _emit(out, (x,), bw)


# ---------------------------------------------------------------------------
# softmax family


def _softmax(z):
    z = z - z.max(axis=1, keepdims=True)
    e = np.exp(z)
    return e / e.sum(axis=1, keepdims=True)


def softmax_logits(x):
    """Row-wise softmax of a (N, C) logit matrix."""
    p = _softmax(x.data)
    out = Tensor(p)

    def bw(g):
        dot = (g * p).sum(axis=1, keepdims=True)
        _accumulate_owned(x, p * (g - dot))

    return _emit(out, (x,), bw)


def cross_entropy_sum(logits, labels):
    """Sum over rows of -log softmax probability of the true class."""
    labels = np.asarray(labels, dtype=np.int64)
    n, c = logits.shape
    if labels.shape != (n,):
        raise ShapeError(f"labels shape {labels.shape} does not match logits rows {n}")
    if labels.size and (labels.min() < 0 or labels.max() >= c):
        bad = labels[(labels < 0) | (labels >= c)][0]
        raise ShapeError(f"label {bad} outside [0, {c})")
    z = logits.data - logits.data.max(axis=1, keepdims=True)
    logsumexp = np.log(np.exp(z).sum(axis=1, keepdims=True))
    logp = z - logsumexp
    out = Tensor(-logp[np.arange(n), labels].sum())

    def bw(g):
        gx = _softmax(logits.data)
        gx[np.arange(n), labels] -= 1.0
        gx *= g
        _accumulate_owned(logits, gx)

    return _emit(out, (logits,), bw)


# ---------------------------------------------------------------------------
# spatial ops (kernel lane)


def _same_pads(h, w, k, stride):
    out_h = -(-h // stride)
    out_w = -(-w // stride)
    pad_h = max((out_h - 1) * stride + k - h, 0)
    pad_w = max((out_w - 1) * stride + k - w, 0)
    return pad_h // 2, pad_w // 2, out_h, out_w


def _resolve_pads(h, w, k, stride, padding):
    if padding == "same":
        return _same_pads(h, w, k, stride)
    if padding == "valid":
        return 0, 0, (h - k) // stride + 1, (w - k) // stride + 1
    raise ShapeError(f"unknown padding mode {padding!r}")


def conv2d(x, w, b, stride=1, padding="same"):
    """Cross-correlation of (N,C,H,W) input with (F,C,KH,KW) kernel plus bias.

    'same' padding keeps out = ceil(in / stride); 'valid' uses no padding.
    """
    if x.ndim != 4:
        raise ShapeError(f"conv2d expects 4-D input (N,C,H,W), got {x.shape}")
    if w.ndim != 4:
        raise ShapeError(f"conv2d expects 4-D kernel (F,C,KH,KW), got {w.shape}")
    if stride not in (1, 2):
        raise ShapeError(f"conv2d stride must be 1 or 2, got {stride}")
    n, c, h, wd = x.shape
    f, kc, kh, kw = w.shape
    if c != kc:
        raise ShapeError(
            f"conv2d: input channel axis C={c} does not match kernel channel axis C={kc}"
        )
    if b.shape != (f,):
        raise ShapeError(f"conv2d: bias shape {b.shape} does not match filter count {f}")
    pt, pl, oh, ow = _resolve_pads(h, wd, kh, stride, padding)
    y = _k.conv2d_forward(x.data, w.data, stride, pt, pl, oh, ow)
    y += b.data[None, :, None, None]
    out = Tensor(y)
    need_gx = _tracked(x)

    def bw(g):
        g = np.ascontiguousarray(g)
        gx, gw = _k.conv2d_backward(x.data, w.data, g, stride, pt, pl, need_gx)
        if need_gx:
            _accumulate_owned(x, gx)
        _accumulate_owned(w, gw)
        _accumulate_owned(b, g.sum(axis=(0, 2, 3)))

    return _emit(out, (x, w, b), bw)


def maxpool2d(x, window=3, stride=2, padding="same"):
    """Window maximum over valid cells; ties route to the first occurrence."""
    if x.ndim != 4:
        raise ShapeError(f"maxpool2d expects 4-D input, got {x.shape}")
    if padding != "same":
        raise ShapeError("maxpool2d supports 'same' padding only")
    n, c, h, w = x.shape
    pt, pl, oh, ow = _same_pads(h, w, window, stride)
    y, arg = _k.maxpool2d_forward(x.data, window, stride, pt, pl, oh, ow)
    out = Tensor(y)

    def bw(g):
        _accumulate_owned(x, _k.maxpool2d_backward(arg, np.ascontiguousarray(g), h, w))

    return _emit(out, (x,), bw)


def avgpool2d(x, window=3, stride=2, padding="same"):
    """Window mean over valid cells; gradient spreads 1/count per cell."""
    if x.ndim != 4:
        raise ShapeError(f"avgpool2d expects 4-D input, got {x.shape}")
    if padding != "same":
        raise ShapeError("avgpool2d supports 'same' padding only")
    n, c, h, w = x.shape
    pt, pl, oh, ow = _same_pads(h, w, window, stride)
    out = Tensor(_k.avgpool2d_forward(x.data, window, stride, pt, pl, oh, ow))

    def bw(g):
        _accumulate_owned(
            x, _k.avgpool2d_backward(np.ascontiguousarray(g), h, w, window, stride, pt, pl)
        )

    return _emit(out, (x,), bw)


# ---------------------------------------------------------------------------
# batch normalization


class RunningStats:
    """Mutable running mean/variance for one batchnorm layer."""

    def __init__(self, channels, momentum=0.1, eps=1e-8):
        self.mean = np.zeros(channels)
        self.var = np.ones(channels)
        self.momentum = momentum
        self.eps = eps


def batchnorm(x, gamma, beta, stats, mode):
    """Per-channel batch normalization over (N, H, W) with affine output.

    Train mode normalizes with batch statistics (batch of at least 2) and
    updates ``stats``; eval mode uses the stored running statistics.
    """
    if x.ndim != 4:
        raise ShapeError(f"batchnorm expects 4-D input, got {x.shape}")
    if mode not in ("train", "eval"):
        raise ShapeError(f"batchnorm mode must be 'train' or 'eval', got {mode!r}")
    n, c, h, w = x.shape
    eps = stats.eps
    m = n * h * w
    if mode == "train":
        if n < 2:
            raise ShapeError(
                f"batchnorm: train mode requires batch >= 2 (variance undefined), got {n}"
            )
        mu = x.data.mean(axis=(0, 2, 3))
        xhat = x.data - mu[None, :, None, None]
        var = np.einsum("nchw,nchw->c", xhat, xhat) / m
        mom = stats.momentum
        stats.mean = (1.0 - mom) * stats.mean + mom * mu
        stats.var = (1.0 - mom) * stats.var + mom * var * m / (m - 1)
    else:
        mu = stats.mean
        var = stats.var
        xhat = x.data - mu[None, :, None, None]
    ivs = 1.0 / np.sqrt(var + eps)
    xhat *= ivs[None, :, None, None]
    y = gamma.data[None, :, None, None] * xhat
    y += beta.data[None, :, None, None]
    out = Tensor(y)

    def bw(g):
        # s1, s2 serve both the affine gradients and the input gradient
        s1 = g.sum(axis=(0, 2, 3))
        s2 = np.einsum("nchw,nchw->c", g, xhat)
        _accumulate_owned(gamma, s2.copy())
        _accumulate_owned(beta, s1.copy())
        if not _tracked(x):
            return
        coef = (gamma.data * ivs)[None, :, None, None]
        if mode == "eval":
            _accumulate_owned(x, g * coef)
            return
        # gx = gamma*ivs/m * (m*g - s1 - xhat * s2), using Sum(x - mu) = 0
        gx = g - (s1 / m)[None, :, None, None]
        gx -= xhat * (s2 / m)[None, :, None, None]
        gx *= coef
        _accumulate_owned(x, gx)

    return _emit(out, (x, gamma, beta), bw)


# ---------------------------------------------------------------------------
# parameters and optimizer


def uniform_init(rng, shape, fan_in, fan_out):
    """Bounded uniform init with scale sqrt(6 / (fan_in + fan_out))."""
    s = math.sqrt(6.0 / (fan_in + fan_out))
    return Tensor(rng.uniform(-s, s, size=shape), requires_grad=True)


class SgdMomentum:
    """v <- momentum * v + grad; p <- p - lr * v."""

    def __init__(self, params, lr, momentum=0.9):
        if lr <= 0:
            raise ShapeError(f"learning rate must be positive, got {lr}")
        if not 0.0 <= momentum < 1.0:
            raise ShapeError(f"momentum must be in [0, 1), got {momentum}")
        self.params = list(params)
        self.lr = lr
        self.momentum = momentum
        self.velocity = [np.zeros_like(p.data) for p in self.params]

    def step(self):
        for p, v in zip(self.params, self.velocity):
            if p.grad is None:
                continue
            v *= self.momentum
            v += p.grad
            p.data -= self.lr * v

    def zero_grad(self):
        for p in self.params:
            p.grad = None
