"""Dense NCHW kernels with hand-written backward passes.

Every op comes as a ``*_forward`` returning ``(out, cache)`` and a matching
``*_backward`` consuming the cache, so the network module can chain them by
hand.  All ops are plain numpy and keep a fixed summation order.
"""
from __future__ import annotations

from dataclasses import dataclass, field
from functools import lru_cache
from typing import Callable, Sequence

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view

from .exceptions import ContractError, DimensionError, GeometryError, ParameterError

__all__ = [
    "Tensor",
    "ConvSpec",
    "conv2d",
    "conv2d_forward",
    "conv2d_backward",
    "relu",
    "relu_backward",
    "bilinear_resize",
    "bilinear_resize_backward",
    "bilinear_upsample",
    "bilinear_upsample_backward",
    "max_fuse",
    "max_fuse_backward",
    "l2_loss",
    "grad_check",
    "GradCheckReport",
]

_AXES = ("batch", "channels", "height", "width")


@dataclass
class Tensor:
    """An N x C x H x W array plus an optional gradient buffer of the same shape."""

    data: np.ndarray
    grad: np.ndarray | None = None

    def __post_init__(self):
        self.data = np.asarray(self.data)
        if self.grad is not None:
            self.grad = np.asarray(self.grad)
            if self.grad.shape != self.data.shape:
                raise DimensionError(
                    f"grad shape {self.grad.shape} != data shape {self.data.shape}")

    @property
    def dims(self):
        return self.data.shape

    def zero_grad(self):
        self.grad = np.zeros_like(self.data)

    def validate(self):
        """Raise ``ContractError`` if any value or gradient is NaN/Inf."""
        if not np.all(np.isfinite(self.data)):
            raise ContractError("tensor contains non-finite values")
        if self.grad is not None and not np.all(np.isfinite(self.grad)):
            raise ContractError("tensor gradient contains non-finite values")
        return self


def _check_4d(x, name):
    if x.ndim != 4:
        raise DimensionError(f"{name} must be 4-D (N, C, H, W), got shape {x.shape}")


@dataclass(frozen=True)
class ConvSpec:
    in_channels: int
    out_channels: int
    kernel: tuple = (3, 3)
    stride: int = 1
    dilation: int = 1
    padding: int = 0

    def __post_init__(self):
        if isinstance(self.kernel, int):
            object.__setattr__(self, "kernel", (self.kernel, self.kernel))
        else:
            object.__setattr__(self, "kernel", tuple(int(k) for k in self.kernel))
        if self.stride < 1:
            raise ParameterError(f"stride must be >= 1, got {self.stride}")
        if self.dilation < 1:
            raise ParameterError(f"dilation must be >= 1, got {self.dilation}")
        if self.padding < 0:
            raise ParameterError(f"padding must be >= 0, got {self.padding}")
        if min(self.kernel) < 1 or self.in_channels < 1 or self.out_channels < 1:
            raise ParameterError("kernel and channel counts must be positive")

    def footprint(self):
        kh, kw = self.kernel
        return self.dilation * (kh - 1) + 1, self.dilation * (kw - 1) + 1

    def output_shape(self, height, width):
        fh, fw = self.footprint()
        ph, pw = height + 2 * self.padding, width + 2 * self.padding
        if fh > ph:
            raise GeometryError(
                f"dilated kernel height {fh} exceeds padded input height {ph}")
        if fw > pw:
            raise GeometryError(
                f"dilated kernel width {fw} exceeds padded input width {pw}")
        return (ph - fh) // self.stride + 1, (pw - fw) // self.stride + 1


def _windows(xp, spec):
    fh, fw = spec.footprint()
    d, s = spec.dilation, spec.stride
    win = sliding_window_view(xp, (fh, fw), axis=(2, 3))
    return win[:, :, ::s, ::s, ::d, ::d]


def conv2d_forward(x, w, b, spec: ConvSpec):
    x = np.asarray(x)
    w = np.asarray(w)
    _check_4d(x, "input")
    _check_4d(w, "weights")
    if w.shape[0] != spec.out_channels:
        raise DimensionError(
            f"weights axis 0 (out_channels) is {w.shape[0]}, spec says {spec.out_channels}")
    if w.shape[1] != spec.in_channels:
        raise DimensionError(
            f"weights axis 1 (in_channels) is {w.shape[1]}, spec says {spec.in_channels}")
    if tuple(w.shape[2:]) != spec.kernel:
        raise DimensionError(f"weights kernel axes {w.shape[2:]} != spec kernel {spec.kernel}")
    if x.shape[1] != spec.in_channels:
        raise DimensionError(
            f"input axis 1 (channels) is {x.shape[1]}, expected {spec.in_channels}")
    if b is not None and np.shape(b) != (spec.out_channels,):
        raise DimensionError(f"bias must have shape ({spec.out_channels},), got {np.shape(b)}")
    spec.output_shape(x.shape[2], x.shape[3])  # geometry check

    p = spec.padding
    xp = np.pad(x, ((0, 0), (0, 0), (p, p), (p, p))) if p else x
    cols = _windows(xp, spec)
    out = np.tensordot(cols, w, axes=([1, 4, 5], [1, 2, 3])).transpose(0, 3, 1, 2)
    if b is not None:
        out = out + np.asarray(b)[None, :, None, None]
    out = np.ascontiguousarray(out)
    return out, (x.shape, xp, cols, w, spec)


def conv2d_backward(dout, cache):
    """Return ``(dx, dw, db)`` for the upstream gradient ``dout``."""
    x_shape, xp, cols, w, spec = cache
    dw = np.tensordot(dout, cols, axes=([0, 2, 3], [0, 2, 3]))
    db = dout.sum(axis=(0, 2, 3))

    kh, kw = spec.kernel
    d, s = spec.dilation, spec.stride
    ho, wo = dout.shape[2], dout.shape[3]
    # (N, Ho, Wo, C, kh, kw)
    dcols = np.tensordot(dout, w, axes=([1], [0]))
    dxp = np.zeros(xp.shape, dtype=np.result_type(dout, w))
    for i in range(kh):
        for j in range(kw):
            r0, c0 = i * d, j * d
            dxp[:, :, r0:r0 + s * (ho - 1) + 1:s, c0:c0 + s * (wo - 1) + 1:s] += \
                dcols[:, :, :, :, i, j].transpose(0, 3, 1, 2)
    p = spec.padding
    dx = dxp[:, :, p:p + x_shape[2], p:p + x_shape[3]] if p else dxp
    return np.ascontiguousarray(dx), dw, db


def conv2d(x, w, b, spec):
    return conv2d_forward(x, w, b, spec)[0]


def relu(x):
    return np.maximum(x, 0)


def relu_backward(dout, x):
    return dout * (x > 0)


@lru_cache(maxsize=256)
def _interp_matrix(n_in, n_out):
    """Align-corners linear interpolation weights, shape (n_out, n_in)."""
    m = np.zeros((n_out, n_in))
    if n_in == 1 or n_out == 1:
        m[:, 0] = 1.0
        m.flags.writeable = False
        return m
    for i in range(n_out):
        pos = i * (n_in - 1) / (n_out - 1)
        i0 = min(int(np.floor(pos)), n_in - 2)
        t = pos - i0
        m[i, i0] += 1.0 - t
        m[i, i0 + 1] += t
    m.flags.writeable = False
    return m


def bilinear_resize(x, out_h, out_w):
    """Align-corners bilinear resize of the last two axes."""
    x = np.asarray(x)
    if out_h < 1 or out_w < 1:
        raise ParameterError(f"output size must be positive, got {(out_h, out_w)}")
    my = _interp_matrix(x.shape[-2], out_h).astype(x.dtype, copy=False)
    mx = _interp_matrix(x.shape[-1], out_w).astype(x.dtype, copy=False)
    return np.matmul(np.matmul(my, x), mx.T)


def bilinear_resize_backward(dout, in_h, in_w):
    my = _interp_matrix(in_h, dout.shape[-2]).astype(dout.dtype, copy=False)
    mx = _interp_matrix(in_w, dout.shape[-1]).astype(dout.dtype, copy=False)
    return np.matmul(np.matmul(my.T, dout), mx)


def _check_factor(factor):
    if int(factor) != factor or factor < 1:
        raise ParameterError(f"upsampling factor must be an integer >= 1, got {factor}")
    return int(factor)


def bilinear_upsample(x, factor):
    factor = _check_factor(factor)
    x = np.asarray(x)
    return bilinear_resize(x, x.shape[-2] * factor, x.shape[-1] * factor)


def bilinear_upsample_backward(dout, factor):
    factor = _check_factor(factor)
    return bilinear_resize_backward(dout, dout.shape[-2] // factor, dout.shape[-1] // factor)


def max_fuse(inputs: Sequence[np.ndarray]):
    """Elementwise max over ``inputs``; returns ``(out, argmax)``.

    ``argmax`` holds the lowest index among tied branches, which is where
    :func:`max_fuse_backward` routes the gradient.
    """
    if len(inputs) == 0:
        raise ParameterError("max_fuse needs at least one input")
    shape = np.shape(inputs[0])
    for k, a in enumerate(inputs):
        if np.shape(a) != shape:
            raise ParameterError(f"input {k} has shape {np.shape(a)}, expected {shape}")
    stacked = np.stack(inputs)
    idx = np.argmax(stacked, axis=0)
    out = np.take_along_axis(stacked, idx[None], axis=0)[0]
    return out, idx


def max_fuse_backward(dout, idx, n_inputs):
    return [np.where(idx == k, dout, 0).astype(dout.dtype, copy=False) for k in range(n_inputs)]


def l2_loss(pred, target):
    """Return ``(loss, dloss/dpred)`` with loss = sum((pred - target)^2) / (2 * size)."""
    pred = np.asarray(pred)
    target = np.asarray(target)
    if pred.shape != target.shape:
        raise ParameterError(f"pred shape {pred.shape} != target shape {target.shape}")
    diff = pred - target
    n = diff.size
    loss = float(np.sum(diff * diff)) / (2.0 * n)
    return loss, diff / n


@dataclass
class GradCheckReport:
    errors: list = field(default_factory=list)
    tolerance: float = 1e-4

    @property
    def max_error(self):
        return max(self.errors) if self.errors else 0.0

    @property
    def passed(self):
        return all(e < self.tolerance for e in self.errors)

    def __str__(self):
        status = "PASS" if self.passed else "FAIL"
        errs = ", ".join(f"{e:.3e}" for e in self.errors)
        return f"grad_check {status} (tol {self.tolerance:g}): [{errs}]"


def _relative_error(analytic, numeric):
    scale = max(np.max(np.abs(analytic), initial=0.0), np.max(np.abs(numeric), initial=0.0))
    if scale == 0.0:
        return 0.0
    return float(np.max(np.abs(analytic - numeric)) / scale)


def grad_check(func: Callable, inputs, epsilon=1e-6, tolerance=1e-4,
               n_samples=None, seed=0, mask=None):
    """Compare analytic gradients against central differences.

    ``func(*inputs)`` must return ``(value, grads)`` where ``value`` is a
    scalar and ``grads`` has one array per input.  The error for an input is
    ``max|analytic - numeric| / max(|analytic|, |numeric|)`` over the checked
    elements.  ``n_samples`` limits the number of perturbed elements per
    input (chosen by ``seed``).  ``mask`` is an optional list of boolean
    arrays selecting which elements may be checked (e.g. away from kinks).
    """
    inputs = [np.array(a, dtype=np.float64, copy=True) for a in inputs]
    value, grads = func(*inputs)
    if np.ndim(value) != 0:
        raise ContractError(f"closure must return a scalar, got shape {np.shape(value)}")
    if len(grads) != len(inputs):
        raise ContractError(f"closure returned {len(grads)} gradients for {len(inputs)} inputs")
    rng = np.random.default_rng(seed)
    report = GradCheckReport(tolerance=tolerance)
    for k, x in enumerate(inputs):
        analytic = np.asarray(grads[k], dtype=np.float64).reshape(-1)
        candidates = np.arange(x.size)
        if mask is not None and mask[k] is not None:
            candidates = candidates[np.asarray(mask[k]).reshape(-1)]
        if n_samples is not None and candidates.size > n_samples:
            candidates = np.sort(rng.choice(candidates, n_samples, replace=False))
        numeric = np.zeros(candidates.size)
        flat = x.reshape(-1)
        for m, i in enumerate(candidates):
            orig = flat[i]
            flat[i] = orig + epsilon
            fp = func(*inputs)[0]
            flat[i] = orig - epsilon
            fm = func(*inputs)[0]
            flat[i] = orig
            numeric[m] = (fp - fm) / (2 * epsilon)
        report.errors.append(_relative_error(analytic[candidates], numeric))
    return report
