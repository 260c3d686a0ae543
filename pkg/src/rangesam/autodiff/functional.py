"""Differentiable operators over :class:`Tensor`.

Elementwise and shape ops are generic; the network-facing ops (linear,
layer_norm, gelu, softmax, conv2d, attention, pooling, bilinear resize)
are fused with hand-written backward passes.
"""
from __future__ import annotations

import math

import numpy as np

from .tensor import Tensor, as_tensor, is_grad_enabled, make_result

GELU_C = 0.7978845608  # sqrt(2/pi), tanh approximation
GELU_A = 0.044715
MASK_NEG = -1e9


def _unbroadcast(grad, shape):
    """Sum ``grad`` down to ``shape`` after numpy broadcasting."""
    if grad.shape == shape:
        return grad
    extra = grad.ndim - len(shape)
    if extra > 0:
        grad = grad.sum(axis=tuple(range(extra)))
    axes = tuple(i for i, n in enumerate(shape) if n == 1 and grad.shape[i] != 1)
    if axes:
        grad = grad.sum(axis=axes, keepdims=True)
    return grad.reshape(shape)


# ---------------------------------------------------------------------------
# elementwise
# ---------------------------------------------------------------------------
def add(a, b):
    a, b = as_tensor(a), as_tensor(b)
    return make_result(a.data + b.data, (a, b),
                       lambda g: (_unbroadcast(g, a.shape), _unbroadcast(g, b.shape)))


def sub(a, b):
    a, b = as_tensor(a), as_tensor(b)
    return make_result(a.data - b.data, (a, b),
                       lambda g: (_unbroadcast(g, a.shape), _unbroadcast(-g, b.shape)))


def mul(a, b):
    a, b = as_tensor(a), as_tensor(b)

    def backward(g):
        ga = _unbroadcast(g * b.data, a.shape) if a.requires_grad else None
        gb = _unbroadcast(g * a.data, b.shape) if b.requires_grad else None
        return ga, gb

    return make_result(a.data * b.data, (a, b), backward)


def div(a, b):
    a, b = as_tensor(a), as_tensor(b)
    out = a.data / b.data

    def backward(g):
        ga = _unbroadcast(g / b.data, a.shape) if a.requires_grad else None
        gb = _unbroadcast(-g * out / b.data, b.shape) if b.requires_grad else None
        return ga, gb

    return make_result(out, (a, b), backward)


def neg(a):
    a = as_tensor(a)
    return make_result(-a.data, (a,), lambda g: (-g,))


def power(a, exponent: float):
    a = as_tensor(a)
    return make_result(a.data ** exponent, (a,),
                       lambda g: (g * exponent * a.data ** (exponent - 1),))


def exp(a):
    a = as_tensor(a)
    out = np.exp(a.data)
    return make_result(out, (a,), lambda g: (g * out,))


def log(a):
    a = as_tensor(a)
    return make_result(np.log(a.data), (a,), lambda g: (g / a.data,))


def gelu(x):
    """GELU, tanh approximation with the fixed constant 0.7978845608."""
    x = as_tensor(x)
    d = x.data
    t = d * d
    t *= GELU_A
    t += 1.0
    t *= d
    t *= GELU_C
    np.tanh(t, out=t)
    out = t + 1.0
    out *= d
    out *= 0.5
    return make_result(out, (x,), lambda g: (g * gelu_grad(d, t),))


def gelu_grad(d, t):
    inner = d * d
    inner *= 3.0 * GELU_A
    inner += 1.0
    inner *= d
    inner *= 0.5 * GELU_C
    inner *= 1.0 - t * t
    inner += 0.5 * (1.0 + t)
    return inner


# ---------------------------------------------------------------------------
# reductions and shape ops
# ---------------------------------------------------------------------------
def _norm_axes(axis, ndim):
    if axis is None:
        return tuple(range(ndim))
    if isinstance(axis, int):
        axis = (axis,)
    return tuple(a % ndim for a in axis)


def sum(a, axis=None, keepdims=False):
    a = as_tensor(a)
    axes = _norm_axes(axis, a.ndim)
    out = a.data.sum(axis=axes, keepdims=keepdims)

    def backward(g):
        if not keepdims:
            g = np.expand_dims(g, axes)
        return (np.broadcast_to(g, a.shape).copy(),)

    return make_result(np.asarray(out), (a,), backward)


def mean(a, axis=None, keepdims=False):
    a = as_tensor(a)
    axes = _norm_axes(axis, a.ndim)
    count = int(np.prod([a.shape[i] for i in axes])) if axes else 1
    return sum(a, axes, keepdims) * (1.0 / count)


def reshape(a, shape):
    a = as_tensor(a)
    return make_result(a.data.reshape(shape), (a,), lambda g: (g.reshape(a.shape),))


def transpose(a, axes):
    a = as_tensor(a)
    inv = np.argsort(axes)
    return make_result(np.ascontiguousarray(a.data.transpose(axes)), (a,),
                       lambda g: (g.transpose(inv),))


def getitem(a, idx):
    a = as_tensor(a)

    basic = all(isinstance(i, (slice, int)) for i in (idx if isinstance(idx, tuple) else (idx,)))

    def backward(g):
        full = np.zeros_like(a.data)
        if basic:
            full[idx] = g
        else:
            np.add.at(full, idx, g)
        return (full,)

    return make_result(np.array(a.data[idx]), (a,), backward)


def concat(tensors, axis=0):
    tensors = [as_tensor(t) for t in tensors]
    sizes = [t.shape[axis] for t in tensors]
    bounds = np.cumsum(sizes)[:-1]

    def backward(g):
        return tuple(np.split(g, bounds, axis=axis))

    return make_result(np.concatenate([t.data for t in tensors], axis=axis), tensors, backward)


def pad(a, pad_width):
    """Zero padding; ``pad_width`` as for :func:`numpy.pad`."""
    a = as_tensor(a)
    pad_width = [tuple(p) for p in pad_width]
    if all(p == (0, 0) for p in pad_width):
        return a
    sl = tuple(slice(lo, lo + n) for (lo, _), n in zip(pad_width, a.shape))
    return make_result(np.pad(a.data, pad_width), (a,), lambda g: (g[sl],))


# ---------------------------------------------------------------------------
# linear algebra
# ---------------------------------------------------------------------------
def matmul(a, b):
    a, b = as_tensor(a), as_tensor(b)

    def backward(g):
        ga = gb = None
        if a.requires_grad:
            ga = g @ np.swapaxes(b.data, -1, -2) if b.ndim > 1 else np.multiply.outer(g, b.data)
            ga = _unbroadcast(ga, a.shape)
        if b.requires_grad:
            gb = np.swapaxes(a.data, -1, -2) @ g if a.ndim > 1 else np.multiply.outer(a.data, g)
            gb = _unbroadcast(gb, b.shape)
        return ga, gb

    return make_result(a.data @ b.data, (a, b), backward)


def linear(x, w, b=None):
    """``y = x @ w + b`` over the last axis; ``w`` has shape (Cin, Cout)."""
    x, w = as_tensor(x), as_tensor(w)
    if x.shape[-1] != w.shape[0]:
        raise ValueError(f"linear: input has {x.shape[-1]} features, weight expects {w.shape[0]}")
    parents = (x, w) if b is None else (x, w, as_tensor(b))
    x2 = x.data.reshape(-1, w.shape[0])
    y = x2 @ w.data
    if b is not None:
        y = y + parents[2].data
    out_shape = x.shape[:-1] + (w.shape[1],)

    def backward(g):
        g2 = g.reshape(-1, w.shape[1])
        gx = (g2 @ w.data.T).reshape(x.shape) if x.requires_grad else None
        gw = x2.T @ g2 if w.requires_grad else None
        if b is None:
            return gx, gw
        return gx, gw, g2.sum(axis=0)

    return make_result(y.reshape(out_shape), parents, backward)


def layer_norm(x, gamma, beta, eps: float = 1e-6):
    """Normalize over the last axis, then scale by ``gamma`` and shift by ``beta``."""
    x, gamma, beta = as_tensor(x), as_tensor(gamma), as_tensor(beta)
    d = x.data
    mu = d.mean(axis=-1, keepdims=True)
    xc = d - mu
    var = (xc * xc).mean(axis=-1, keepdims=True)
    rstd = 1.0 / np.sqrt(var + eps)
    xhat = xc * rstd
    out = xhat * gamma.data + beta.data

    def backward(g):
        lead = tuple(range(d.ndim - 1))
        gg = (g * xhat).sum(axis=lead) if gamma.requires_grad else None
        gb = g.sum(axis=lead) if beta.requires_grad else None
        gx = None
        if x.requires_grad:
            dxhat = g * gamma.data
            gx = rstd * (dxhat - dxhat.mean(axis=-1, keepdims=True)
                         - xhat * (dxhat * xhat).mean(axis=-1, keepdims=True))
        return gx, gg, gb

    return make_result(out, (x, gamma, beta), backward)


def softmax(x, axis=-1):
    x = as_tensor(x)
    z = x.data - x.data.max(axis=axis, keepdims=True)
    e = np.exp(z)
    out = e / e.sum(axis=axis, keepdims=True)

    def backward(g):
        return (out * (g - (g * out).sum(axis=axis, keepdims=True)),)

    return make_result(out, (x,), backward)


def log_softmax(x, axis=-1):
    x = as_tensor(x)
    z = x.data - x.data.max(axis=axis, keepdims=True)
    lse = np.log(np.exp(z).sum(axis=axis, keepdims=True))
    out = z - lse

    def backward(g):
        return (g - np.exp(out) * g.sum(axis=axis, keepdims=True),)

    return make_result(out, (x,), backward)


def dropout_path(x, rate: float, training: bool, rng=None, mask=None):
    """Stochastic depth: zero the whole residual branch per sample (axis 0).

    Survivors are scaled by 1/(1-rate). At evaluation, or with rate 0, the
    input is returned unchanged. ``mask`` forces the keep pattern (tests).
    """
    x = as_tensor(x)
    if not training or (rate <= 0.0 and mask is None):
        return x
    if mask is None:
        rng = np.random.default_rng() if rng is None else rng
        mask = rng.random(x.shape[0]) >= rate
    mask = np.asarray(mask, dtype=bool)
    scale = 0.0 if rate >= 1.0 else 1.0 / (1.0 - rate)
    keep = (mask.astype(x.dtype) * scale).reshape((x.shape[0],) + (1,) * (x.ndim - 1))
    return mul(x, Tensor(keep, dtype=x.dtype))


# ---------------------------------------------------------------------------
# attention
# ---------------------------------------------------------------------------
def attention(q, k, v, mask=None):
    """softmax((q k^T + mask) / sqrt(d)) v over the last two axes.

    ``mask`` is an additive array broadcastable to (..., Tq, Tk) with entries
    0 or MASK_NEG. Without gradient tracking the score matrix is built one
    leading slice at a time to bound memory.
    """
    q, k, v = as_tensor(q), as_tensor(k), as_tensor(v)
    scale = 1.0 / math.sqrt(q.shape[-1])
    track = is_grad_enabled() and (q.requires_grad or k.requires_grad or v.requires_grad)
    m = None if mask is None else np.asarray(mask, dtype=q.dtype)

    if not track:
        lead = q.shape[:-2]
        qf = q.data.reshape((-1,) + q.shape[-2:])
        kf = np.broadcast_to(k.data, lead + k.shape[-2:]).reshape((-1,) + k.shape[-2:])
        vf = np.broadcast_to(v.data, lead + v.shape[-2:]).reshape((-1,) + v.shape[-2:])
        mf = None
        if m is not None:
            mf = np.broadcast_to(m, lead + (q.shape[-2], k.shape[-2])).reshape((-1, q.shape[-2], k.shape[-2]))
        out = np.empty(qf.shape[:-1] + (v.shape[-1],), dtype=q.dtype)
        step = max(1, (1 << 24) // max(1, q.shape[-2] * k.shape[-2]))
        for i in range(0, qf.shape[0], step):
            s = qf[i:i + step] @ np.swapaxes(kf[i:i + step], -1, -2)
            if mf is not None:
                s += mf[i:i + step]
            s *= scale
            s -= s.max(axis=-1, keepdims=True)
            np.exp(s, out=s)
            s /= s.sum(axis=-1, keepdims=True)
            out[i:i + step] = s @ vf[i:i + step]
        return Tensor(out.reshape(lead + out.shape[-2:]))

    s = q.data @ np.swapaxes(k.data, -1, -2)
    if m is not None:
        s = s + m
    s = s * scale
    s = s - s.max(axis=-1, keepdims=True)
    p = np.exp(s)
    p /= p.sum(axis=-1, keepdims=True)
    out = p @ v.data

    def backward(g):
        gv = _unbroadcast(np.swapaxes(p, -1, -2) @ g, v.shape) if v.requires_grad else None
        gp = g @ np.swapaxes(v.data, -1, -2)
        gs = p * (gp - (gp * p).sum(axis=-1, keepdims=True)) * scale
        gq = _unbroadcast(gs @ k.data, q.shape) if q.requires_grad else None
        gk = _unbroadcast(np.swapaxes(gs, -1, -2) @ q.data, k.shape) if k.requires_grad else None
        return gq, gk, gv

    return make_result(out, (q, k, v), backward)


def attention_weights(q, k, mask=None):
    """The softmax weights used by :func:`attention` (no gradient)."""
    q = np.asarray(q.data if isinstance(q, Tensor) else q)
    k = np.asarray(k.data if isinstance(k, Tensor) else k)
    s = q @ np.swapaxes(k, -1, -2)
    if mask is not None:
        s = s + mask
    s = s / math.sqrt(q.shape[-1])
    s = s - s.max(axis=-1, keepdims=True)
    p = np.exp(s)
    return p / p.sum(axis=-1, keepdims=True)


def masked_mha(x, wq, wk, wv, wo, heads: int, mask=None, bq=None, bk=None, bv=None, bo=None):
    """Multi-head attention over tokens ``x`` of shape (B, T, C).

    ``mask`` is additive, broadcastable to (B, heads, T, T). Heads split C
    evenly; their outputs are concatenated and projected by ``wo``.
    """
    x = as_tensor(x)
    B, T, C = x.shape
    if C % heads:
        raise ValueError(f"channels {C} not divisible by {heads} heads")
    dh = C // heads

    def split(t):
        return transpose(reshape(t, (B, T, heads, dh)), (0, 2, 1, 3))

    q = split(linear(x, wq, bq))
    k = split(linear(x, wk, bk))
    v = split(linear(x, wv, bv))
    o = attention(q, k, v, mask)
    o = reshape(transpose(o, (0, 2, 1, 3)), (B, T, C))
    return linear(o, wo, bo)


# ---------------------------------------------------------------------------
# convolution, pooling, resize
# ---------------------------------------------------------------------------
def _pair(v):
    return (v, v) if isinstance(v, int) else tuple(v)


def conv2d(x, w, b=None, stride=1, padding=0, dilation=1, groups: int = 1,
           channels_last: bool = False):
    """2D cross-correlation.

    ``x`` is (B, Cin, H, W), or (B, H, W, Cin) with ``channels_last``; the
    weight is always (Cout, Cin/groups, kh, kw). Output spatial size is
    floor((H + 2p - d(k-1) - 1)/s) + 1. ``groups == Cin`` gives depthwise.
    """
    x, w = as_tensor(x), as_tensor(w)
    if not channels_last:
        x = transpose(x, (0, 2, 3, 1))
    y = _conv2d_nhwc(x, w, None if b is None else as_tensor(b), _pair(stride),
                     _pair(padding), _pair(dilation), groups)
    if not channels_last:
        y = transpose(y, (0, 3, 1, 2))
    return y


def _conv2d_nhwc(x, w, b, stride, padding, dilation, groups):
    B, H, W, Cin = x.shape
    Cout, Cg, kh, kw = w.shape
    if Cin != Cg * groups or Cout % groups:
        raise ValueError(f"conv2d: input channels {Cin} incompatible with weight {w.shape} "
                         f"and groups={groups}")
    (sh, sw), (ph, pw), (dh, dw) = stride, padding, dilation
    Ho = (H + 2 * ph - dh * (kh - 1) - 1) // sh + 1
    Wo = (W + 2 * pw - dw * (kw - 1) - 1) // sw + 1
    if Ho < 1 or Wo < 1:
        raise ValueError("conv2d: kernel does not fit the padded input")
    xp = np.pad(x.data, ((0, 0), (ph, ph), (pw, pw), (0, 0))) if ph or pw else x.data
    depthwise = groups == Cin and Cg == 1 and Cout == Cin
    G, Og = groups, Cout // groups

    def window(arr, i, j):
        return arr[:, i * dh: i * dh + sh * (Ho - 1) + 1: sh, j * dw: j * dw + sw * (Wo - 1) + 1: sw, :]

    dtype = np.result_type(x.dtype, w.dtype)
    if groups == 1:
        out, backward = _conv_dense(x, w, b, xp, window, (B, H, W, Cin, Cout, kh, kw, Ho, Wo, ph, pw), dtype)
        parents = (x, w) if b is None else (x, w, b)
        return make_result(out, parents, backward)

    out = np.zeros((B, Ho, Wo, Cout), dtype=dtype)
    for i in range(kh):
        for j in range(kw):
            patch = window(xp, i, j)
            if depthwise:
                out += patch * w.data[:, 0, i, j]
            else:
                pg = patch.reshape(B, Ho, Wo, G, Cg)
                wg = w.data[:, :, i, j].reshape(G, Og, Cg)
                out += np.einsum("bhwgc,goc->bhwgo", pg, wg).reshape(B, Ho, Wo, Cout)
    if b is not None:
        out += b.data

    def backward(g):
        gxp = np.zeros_like(xp) if x.requires_grad else None
        gw = np.zeros_like(w.data) if w.requires_grad else None
        for i in range(kh):
            for j in range(kw):
                patch = window(xp, i, j)
                if depthwise:
                    if gw is not None:
                        gw[:, 0, i, j] = np.einsum("bhwc,bhwc->c", patch, g)
                    if gxp is not None:
                        window(gxp, i, j)[...] += g * w.data[:, 0, i, j]
                else:
                    pg = patch.reshape(B, Ho, Wo, G, Cg)
                    gg = g.reshape(B, Ho, Wo, G, Og)
                    wg = w.data[:, :, i, j].reshape(G, Og, Cg)
                    if gw is not None:
                        gw[:, :, i, j] = np.einsum("bhwgo,bhwgc->goc", gg, pg).reshape(Cout, Cg)
                    if gxp is not None:
                        window(gxp, i, j)[...] += np.einsum("bhwgo,goc->bhwgc", gg, wg).reshape(B, Ho, Wo, Cin)
        gx = None
        if gxp is not None:
            gx = gxp[:, ph: ph + H, pw: pw + W, :] if ph or pw else gxp
        res = (gx, gw)
        if b is not None:
            res = res + (g.sum(axis=(0, 1, 2)),)
        return res

    parents = (x, w) if b is None else (x, w, b)
    return make_result(out, parents, backward)


_COL_BYTES = 1 << 26


def _conv_dense(x, w, b, xp, window, dims, dtype):
    """groups == 1 convolution as an im2col GEMM over blocks of output rows.

    The column buffer is bounded by _COL_BYTES and rebuilt in backward rather
    than stored, so memory stays flat at full raster size.
    """
    B, H, W, Cin, Cout, kh, kw, Ho, Wo, ph, pw = dims
    K = kh * kw * Cin
    # (kh, kw, Cin, Cout) so rows match the column layout below
    wmat = np.ascontiguousarray(w.data.transpose(2, 3, 1, 0).reshape(K, Cout)).astype(dtype, copy=False)
    rows = max(1, min(Ho, _COL_BYTES // max(1, B * Wo * K * np.dtype(dtype).itemsize)))
    blocks = [(r, min(Ho, r + rows)) for r in range(0, Ho, rows)]

    def columns(r0, r1):
        col = np.empty((B, r1 - r0, Wo, kh * kw, Cin), dtype=dtype)
        for i in range(kh):
            for j in range(kw):
                col[:, :, :, i * kw + j] = window(xp, i, j)[:, r0:r1]
        return col.reshape(-1, K)

    out = np.empty((B, Ho, Wo, Cout), dtype=dtype)
    if kh == kw == 1 and Ho == H and Wo == W and not (ph or pw):
        out[...] = (xp.reshape(-1, Cin) @ wmat).reshape(B, Ho, Wo, Cout)
    else:
        for r0, r1 in blocks:
            out[:, r0:r1] = (columns(r0, r1) @ wmat).reshape(B, r1 - r0, Wo, Cout)
    if b is not None:
        out += b.data

    def backward(g):
        gxp = np.zeros_like(xp) if x.requires_grad else None
        gwm = np.zeros((K, Cout), dtype=np.result_type(dtype, g.dtype)) if w.requires_grad else None
        for r0, r1 in blocks:
            gb = g[:, r0:r1].reshape(-1, Cout)
            if gwm is not None:
                gwm += columns(r0, r1).T @ gb
            if gxp is not None:
                gcol = (gb @ wmat.T).reshape(B, r1 - r0, Wo, kh * kw, Cin)
                for i in range(kh):
                    for j in range(kw):
                        window(gxp, i, j)[:, r0:r1] += gcol[:, :, :, i * kw + j]
        gx = None
        if gxp is not None:
            gx = gxp[:, ph: ph + H, pw: pw + W, :] if ph or pw else gxp
        gw = None if gwm is None else gwm.reshape(kh, kw, Cin, Cout).transpose(3, 2, 0, 1).copy()
        res = (gx, gw)
        if b is not None:
            res = res + (g.sum(axis=(0, 1, 2)),)
        return res

    return out, backward


def pool2d_mean(x, kernel: int = 2, stride: int = 2, channels_last: bool = False):
    """Non-overlapping mean pooling (kernel == stride) over the spatial axes."""
    x = as_tensor(x)
    if kernel != stride:
        raise ValueError("pool2d_mean supports kernel == stride only")
    k = kernel
    if channels_last:
        B, H, W, C = x.shape
    else:
        B, C, H, W = x.shape
    if H % k or W % k:
        raise ValueError(f"pool2d_mean: spatial size {(H, W)} not divisible by {k}")
    if channels_last:
        out = x.data.reshape(B, H // k, k, W // k, k, C).mean(axis=(2, 4))

        def backward(g):
            return (np.repeat(np.repeat(g, k, axis=1), k, axis=2) / (k * k),)
    else:
        out = x.data.reshape(B, C, H // k, k, W // k, k).mean(axis=(3, 5))

        def backward(g):
            return (np.repeat(np.repeat(g, k, axis=2), k, axis=3) / (k * k),)

    return make_result(out, (x,), backward)


def bilinear_matrix(n_in: int, n_out: int, dtype=np.float64) -> np.ndarray:
    """(n_out, n_in) interpolation weights, align_corners=False convention.

    Source coordinate of output index i is (i + 0.5) * n_in / n_out - 0.5,
    clamped below at 0; neighbours are floor(src) and min(floor(src)+1, n_in-1).
    """
    a = np.zeros((n_out, n_in), dtype=dtype)
    scale = n_in / n_out
    for i in range(n_out):
        src = max((i + 0.5) * scale - 0.5, 0.0)
        i0 = min(int(math.floor(src)), n_in - 1)
        i1 = min(i0 + 1, n_in - 1)
        lam = src - i0
        a[i, i0] += 1.0 - lam
        a[i, i1] += lam
    return a


def _bilinear_taps(n_in: int, n_out: int):
    src = np.maximum((np.arange(n_out) + 0.5) * (n_in / n_out) - 0.5, 0.0)
    i0 = np.minimum(np.floor(src).astype(np.int64), n_in - 1)
    i1 = np.minimum(i0 + 1, n_in - 1)
    return i0, i1, src - i0


def _interp_axis(x, axis, taps):
    i0, i1, lam = taps
    shape = [1] * x.ndim
    shape[axis] = -1
    lam = lam.reshape(shape).astype(x.dtype)
    out = np.take(x, i0, axis=axis) * (1 - lam)
    out += np.take(x, i1, axis=axis) * lam
    return out


def _interp_axis_T(g, axis, taps, n_in):
    """Adjoint of _interp_axis: scatter-add with sorted indices via reduceat."""
    i0, i1, lam = taps
    shape = [1] * g.ndim
    shape[axis] = -1
    lam = lam.reshape(shape).astype(g.dtype)
    out_shape = list(g.shape)
    out_shape[axis] = n_in
    gx = np.zeros(out_shape, dtype=g.dtype)
    for idx, wgt in ((i0, 1 - lam), (i1, lam)):
        uniq, starts = np.unique(idx, return_index=True)
        part = np.add.reduceat(g * wgt, starts, axis=axis)
        sl = [slice(None)] * g.ndim
        sl[axis] = uniq
        gx[tuple(sl)] += part
    return gx


def upsample_bilinear(x, out_h: int, out_w: int, channels_last: bool = False):
    """Bilinear resize of the two spatial axes (align_corners=False).

    Separable two-tap interpolation; matches ``bilinear_matrix`` applied per axis.
    """
    x = as_tensor(x)
    ah, aw = (1, 2) if channels_last else (x.ndim - 2, x.ndim - 1)
    H, W = x.shape[ah], x.shape[aw]
    if (H, W) == (out_h, out_w):
        return x
    th, tw = _bilinear_taps(H, out_h), _bilinear_taps(W, out_w)
    out = _interp_axis(_interp_axis(x.data, ah, th), aw, tw)

    def backward(g):
        return (_interp_axis_T(_interp_axis_T(g, aw, tw, W), ah, th, H),)

    return make_result(out, (x,), backward)
