"""Finite-difference suite over every differentiable op, the losses and a toy model.

Everything runs in float64 by default with central differences. Each case returns one
relative error per input; a case passes when the worst of them is within
``tol``.
"""
from __future__ import annotations

import time
from dataclasses import dataclass

import numpy as np

from .autodiff import functional as F
from .autodiff.gradcheck import check_gradients, leaf, randomize
from .kitti import IGNORE


@dataclass
class CaseResult:
    name: str
    error: float
    seconds: float
    tol: float

    @property
    def ok(self) -> bool:
        return bool(np.isfinite(self.error) and self.error <= self.tol)


def _r(seed):
    return np.random.default_rng(seed)


def _elementwise(h, dt):
    x = leaf(_r(0).normal(size=(3, 4)), dt)
    y = leaf(_r(1).uniform(0.5, 2.0, size=(3, 4)), dt)
    z = leaf(_r(2).normal(size=(4,)), dt)
    return {
        "add": check_gradients(lambda: x + z, [x, z], h),
        "sub": check_gradients(lambda: x - y, [x, y], h),
        "mul": check_gradients(lambda: x * z, [x, z], h),
        "div": check_gradients(lambda: x / y, [x, y], h),
        "neg": check_gradients(lambda: -x, [x], h),
        "power": check_gradients(lambda: y ** 2.5, [y], h),
        "exp": check_gradients(lambda: x.exp(), [x], h),
        "log": check_gradients(lambda: y.log(), [y], h),
        "gelu": check_gradients(lambda: F.gelu(x * 3.0), [x], h),
    }


def _shape_ops(h, dt):
    x = leaf(_r(3).normal(size=(2, 3, 4, 5)), dt)
    y = leaf(_r(4).normal(size=(2, 1, 4, 5)), dt)
    return {
        "sum": check_gradients(lambda: F.sum(x, axis=(1, 3)), [x], h),
        "mean": check_gradients(lambda: F.mean(x, axis=2, keepdims=True), [x], h),
        "reshape": check_gradients(lambda: F.reshape(x, (6, 20)), [x], h),
        "transpose": check_gradients(lambda: F.transpose(x, (0, 2, 3, 1)), [x], h),
        "getitem": check_gradients(lambda: x[:, 1:, ::2, np.array([0, 0, 4])], [x], h),
        "concat": check_gradients(lambda: F.concat([x, y], axis=1), [x, y], h),
        "pad": check_gradients(lambda: F.pad(x, [(0, 0), (0, 0), (1, 2), (0, 1)]), [x], h),
    }


def _dense_ops(h, dt):
    a = leaf(_r(5).normal(size=(2, 3, 4)), dt)
    b = leaf(_r(6).normal(size=(4, 5)), dt)
    bias = leaf(_r(7).normal(size=(5,)), dt)
    g = leaf(1.0 + 0.1 * _r(8).normal(size=(4,)), dt)
    beta = leaf(0.1 * _r(9).normal(size=(4,)), dt)
    s = leaf(_r(10).normal(size=(3, 6)), dt)
    mask = (_r(11).random((2, 1, 1, 1)) < 0.5).astype(dt)
    return {
        "matmul": check_gradients(lambda: F.matmul(a, b), [a, b], h),
        "linear": check_gradients(lambda: F.linear(a, b, bias), [a, b, bias], h),
        "layer_norm": check_gradients(lambda: F.layer_norm(a, g, beta), [a, g, beta], h),
        "softmax": check_gradients(lambda: F.softmax(s, axis=1), [s], h),
        "log_softmax": check_gradients(lambda: F.log_softmax(s, axis=0), [s], h),
        "dropout_path": check_gradients(lambda: F.dropout_path(a[:, None], 0.3, True, mask=mask), [a], h),
    }


def _attention_ops(h, dt):
    q, k, v = (leaf(_r(12 + i).normal(size=(2, 2, 5, 4)), dt) for i in range(3))
    mask = np.where(_r(15).random((1, 1, 5, 5)) < 0.3, F.MASK_NEG, 0.0).astype(dt)
    mask[..., 0] = 0.0  # keep at least one visible key per row
    x = leaf(_r(16).normal(size=(2, 5, 4)), dt)
    ws = [leaf(_r(17 + i).normal(size=(4, 4)) / 2, dt) for i in range(4)]
    bs = [leaf(0.1 * _r(21 + i).normal(size=(4,)), dt) for i in range(4)]
    return {
        "attention": check_gradients(lambda: F.attention(q, k, v, mask), [q, k, v], h),
        # the key bias is invariant under softmax; its gradient is exactly zero
        "masked_mha": check_gradients(lambda: F.masked_mha(x, *ws, heads=2, mask=mask[0], bq=bs[0], bk=bs[1],
                                                           bv=bs[2], bo=bs[3]), [x] + ws + bs, h, floor=1e-6),
    }


def _spatial_ops(h, dt):
    x = leaf(_r(25).normal(size=(1, 4, 6, 7)), dt)
    w = leaf(_r(26).normal(size=(6, 4, 3, 3)) / 3, dt)
    wd = leaf(_r(27).normal(size=(4, 1, 3, 3)) / 3, dt)
    wg = leaf(_r(28).normal(size=(4, 2, 3, 3)) / 3, dt)
    b = leaf(_r(29).normal(size=(6,)), dt)
    xl = leaf(_r(30).normal(size=(1, 5, 6, 3)), dt)
    return {
        "conv2d": check_gradients(lambda: F.conv2d(x, w, b, padding=1), [x, w, b], h),
        "conv2d_dilated": check_gradients(lambda: F.conv2d(x, w, b, padding=2, dilation=2), [x, w, b], h),
        "conv2d_strided": check_gradients(lambda: F.conv2d(x, w, None, stride=2, padding=1), [x, w], h),
        "conv2d_depthwise": check_gradients(lambda: F.conv2d(x, wd, None, padding=1, groups=4), [x, wd], h),
        "conv2d_grouped": check_gradients(lambda: F.conv2d(x, wg, None, padding=1, groups=2), [x, wg], h),
        "pool2d_mean": check_gradients(lambda: F.pool2d_mean(x[:, :, :6, :6]), [x], h),
        "upsample_bilinear": check_gradients(lambda: F.upsample_bilinear(x, 11, 15), [x], h),
        "upsample_bilinear_nhwc": check_gradients(lambda: F.upsample_bilinear(xl, 9, 13, channels_last=True),
                                                  [xl], h),
    }


def _loss_ops(h, dt):
    from .losses import boundary_loss, dice_loss, iou_loss, total_loss, wce_loss
    r = _r(31)
    logits = leaf(r.normal(size=(2, 4, 4, 6)), dt)
    target = r.integers(0, 4, size=(2, 4, 6)).astype(np.uint8)
    target[0, 0, :3] = IGNORE
    w = r.uniform(0.5, 2.0, size=4)
    aux = [leaf(r.normal(size=(2, 4, 4, 6)), dt), leaf(r.normal(size=(2, 4, 2, 3)), dt)]
    return {
        "wce_loss": check_gradients(lambda: wce_loss(logits, target, w), [logits], h),
        "dice_loss": check_gradients(lambda: dice_loss(logits, target), [logits], h),
        "boundary_loss": check_gradients(lambda: boundary_loss(logits, target), [logits], h),
        "iou_loss": check_gradients(lambda: iou_loss(logits, target), [logits], h),
        "total_loss": check_gradients(lambda: total_loss(logits, aux, target, w), [logits] + aux, h),
    }


def _toy_model(h, dt, max_entries=3):
    from .model import ModelConfig, RangeSAM
    cfg = ModelConfig.toy(input_hw=(16, 64), num_classes=3, decoder_channels=16,
                          stage_channels=(8, 16, 32, 64), stem_channels=8)
    model = RangeSAM(cfg, seed=1).to_dtype(dt)
    for p in model.parameters():
        p.requires_grad = True
    randomize(model, seed=2).eval()
    x = leaf(_r(3).normal(size=(1, 6, 16, 64)), dt)

    def fn():
        main, aux = model(x)
        return F.concat([F.reshape(main, (-1,))] + [F.reshape(a, (-1,)) for a in aux], axis=0)

    # key biases get a structurally zero gradient; the floor keeps round-off on
    # them from reading as a relative error
    return {"toy_model": check_gradients(fn, [x] + model.parameters(), h, max_entries=max_entries, floor=1e-3)}


GROUPS = (_elementwise, _shape_ops, _dense_ops, _attention_ops, _spatial_ops, _loss_ops, _toy_model)


def run_suite(h: float = 1e-5, tol: float = 1e-4, include_model: bool = True, dtype=np.float64,
              log=None) -> list:
    """Run every case; returns a list of CaseResult in a stable order.

    ``dtype=np.float32`` is supported for diagnosis only: central differences
    at h=1e-5 are dominated by round-off in 32-bit, so pass a larger ``h``
    and ``tol`` there.
    """
    results = []
    for group in GROUPS:
        if group is _toy_model and not include_model:
            continue
        t0 = time.perf_counter()
        errs = group(h, np.dtype(dtype).type)
        dt = (time.perf_counter() - t0) / max(1, len(errs))
        for name, e in errs.items():
            res = CaseResult(name, float(max(e)), dt, tol)
            results.append(res)
            if log is not None:
                log(res)
    return results
