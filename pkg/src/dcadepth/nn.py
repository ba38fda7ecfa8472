"""Differentiable neural primitives on NCHW tensors."""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np
from scipy.special import erf

from .tensor import ShapeError, Tensor, _result

BN_EPS = 1e-5
BN_MOMENTUM = 0.1


@dataclass
class Conv2dParams:
    weight: Tensor
    bias: Tensor | None = None
    stride: int = 1
    dilation: int = 1
    padding: int = 0
    groups: int = 1

    @property
    def kernel_size(self) -> int:
        return self.weight.shape[2]

    @property
    def out_channels(self) -> int:
        return self.weight.shape[0]

    @property
    def in_channels(self) -> int:
        return self.weight.shape[1] * self.groups


@dataclass
class BatchNormParams:
    gamma: Tensor
    beta: Tensor
    running_mean: Tensor
    running_var: Tensor
    eps: float = BN_EPS
    momentum: float = BN_MOMENTUM
    training: bool = True


def conv_output_size(size: int, k: int, stride: int, padding: int, dilation: int) -> int:
    return (size + 2 * padding - dilation * (k - 1) - 1) // stride + 1


def _tap_slices(i: int, j: int, d: int, s: int, oh: int, ow: int):
    return (
        slice(None),
        slice(None),
        slice(i * d, i * d + s * (oh - 1) + 1, s),
        slice(j * d, j * d + s * (ow - 1) + 1, s),
    )


def conv2d(x: Tensor, p: Conv2dParams) -> Tensor:
    """Zero-padded grouped 2-D cross-correlation."""
    if x.data.ndim != 4:
        raise ShapeError(f"conv2d expects NCHW input, got {x.shape}")
    w = p.weight
    n, cin, h, wd = x.shape
    cout, cin_g, kh, kw = w.shape
    g, s, d, pad = p.groups, p.stride, p.dilation, p.padding
    if kh != kw:
        raise ShapeError("conv2d kernels must be square")
    if cin % g or cout % g:
        raise ShapeError(f"channels {cin}->{cout} not divisible by groups={g}")
    if cin_g * g != cin:
        raise ShapeError(f"weight expects {cin_g * g} input channels, input has {cin}")
    if p.bias is not None and p.bias.shape != (cout,):
        raise ShapeError(f"bias shape {p.bias.shape} does not match {cout} output channels")
    oh = conv_output_size(h, kh, s, pad, d)
    ow = conv_output_size(wd, kw, s, pad, d)
    if oh < 1 or ow < 1:
        raise ShapeError(f"conv2d output would be {oh}x{ow} for input {h}x{wd}")

    xp = np.pad(x.data, ((0, 0), (0, 0), (pad, pad), (pad, pad))) if pad else x.data
    wdat = w.data
    depthwise = g == cin and cout == cin

    if depthwise:
        out = np.zeros((n, cout, oh, ow), dtype=x.dtype)
        for i in range(kh):
            for j in range(kw):
                out += wdat[None, :, 0, i, j, None, None] * xp[_tap_slices(i, j, d, s, oh, ow)]
        cols = None
    else:
        # cols: (N, groups, C_in/groups * kh * kw, oh * ow), NCHW order kept to avoid transposes
        cols = np.empty((n, cin, kh, kw, oh, ow), dtype=x.dtype)
        for i in range(kh):
            for j in range(kw):
                cols[:, :, i, j] = xp[_tap_slices(i, j, d, s, oh, ow)]
        cols = cols.reshape(n, g, cin_g * kh * kw, oh * ow)
        wmat = wdat.reshape(g, cout // g, cin_g * kh * kw)
        out = np.matmul(wmat, cols).reshape(n, cout, oh, ow)
    if p.bias is not None:
        out += p.bias.data[None, :, None, None]

    def bw(gout):
        gxp = np.zeros(xp.shape, dtype=gout.dtype)
        if depthwise:
            gw = np.zeros_like(wdat)
            for i in range(kh):
                for j in range(kw):
                    sl = _tap_slices(i, j, d, s, oh, ow)
                    gw[:, 0, i, j] = np.einsum("nchw,nchw->c", gout, xp[sl])
                    gxp[sl] += gout * wdat[None, :, 0, i, j, None, None]
        else:
            gmat = gout.reshape(n, g, cout // g, oh * ow)
            gw = np.matmul(gmat, cols.transpose(0, 1, 3, 2)).sum(axis=0).reshape(wdat.shape)
            gcols = np.matmul(wmat.transpose(0, 2, 1), gmat).reshape(n, cin, kh, kw, oh, ow)
            for i in range(kh):
                for j in range(kw):
                    gxp[_tap_slices(i, j, d, s, oh, ow)] += gcols[:, :, i, j]
        gx = gxp[:, :, pad:pad + h, pad:pad + wd] if pad else gxp
        gb = gout.sum(axis=(0, 2, 3)) if p.bias is not None else None
        return (gx, gw, gb) if p.bias is not None else (gx, gw)

    parents = (x, w, p.bias) if p.bias is not None else (x, w)
    return _result(out, parents, bw, "conv2d")


_SQRT_HALF = 1.0 / math.sqrt(2.0)
_INV_SQRT_2PI = 1.0 / math.sqrt(2.0 * math.pi)


def gelu(x: Tensor) -> Tensor:
    """x * Phi(x) with the exact Gaussian CDF."""
    xd = x.data
    cdf = 0.5 * (1.0 + erf(xd * _SQRT_HALF))

    def bw(g):
        pdf = _INV_SQRT_2PI * np.exp(-0.5 * xd * xd)
        return (g * (cdf + xd * pdf),)

    return _result(xd * cdf, (x,), bw, "gelu")


def batch_norm(x: Tensor, p: BatchNormParams) -> Tensor:
    """Per-channel normalisation followed by ``gamma * xhat + beta``.

    Training mode uses biased batch statistics and updates the running
    estimates in place; inference mode uses the running estimates.
    """
    if x.data.ndim != 4:
        raise ShapeError(f"batch_norm expects NCHW input, got {x.shape}")
    n, c, h, w = x.shape
    if p.gamma.shape != (c,):
        raise ShapeError(f"batch_norm: {c} channels but parameters for {p.gamma.shape[0]}")
    xd = x.data
    gam = p.gamma.data[None, :, None, None]
    if p.training:
        m = n * h * w
        if m < 2:
            raise ShapeError("batch_norm training needs at least 2 values per channel")
        mean = xd.mean(axis=(0, 2, 3))
        var = xd.var(axis=(0, 2, 3))
        rm, rv = p.running_mean.data, p.running_var.data
        rm *= 1 - p.momentum
        rm += p.momentum * mean.astype(rm.dtype)
        rv *= 1 - p.momentum
        rv += p.momentum * var.astype(rv.dtype)
    else:
        mean = p.running_mean.data.astype(xd.dtype)
        var = p.running_var.data.astype(xd.dtype)
    invstd = (1.0 / np.sqrt(var + p.eps)).astype(xd.dtype)
    xhat = (xd - mean[None, :, None, None]) * invstd[None, :, None, None]
    out = gam * xhat + p.beta.data[None, :, None, None]
    training = p.training

    def bw(g):
        ggamma = (g * xhat).sum(axis=(0, 2, 3))
        gbeta = g.sum(axis=(0, 2, 3))
        gxhat = g * gam
        if training:
            mcount = n * h * w
            gx = (invstd[None, :, None, None] / mcount) * (
                mcount * gxhat
                - gxhat.sum(axis=(0, 2, 3), keepdims=True)
                - xhat * (gxhat * xhat).sum(axis=(0, 2, 3), keepdims=True)
            )
        else:
            gx = gxhat * invstd[None, :, None, None]
        return gx, ggamma, gbeta

    return _result(out, (x, p.gamma, p.beta), bw, "batch_norm")


def _up_axis(a: np.ndarray, axis: int) -> np.ndarray:
    # half-pixel centres, edge clamped: out[2k] = .75 a[k] + .25 a[k-1]; out[2k+1] = .75 a[k] + .25 a[k+1]
    a = np.moveaxis(a, axis, -1)
    prev = np.concatenate([a[..., :1], a[..., :-1]], axis=-1)
    nxt = np.concatenate([a[..., 1:], a[..., -1:]], axis=-1)
    out = np.empty(a.shape[:-1] + (2 * a.shape[-1],), dtype=a.dtype)
    out[..., 0::2] = 0.75 * a + 0.25 * prev
    out[..., 1::2] = 0.75 * a + 0.25 * nxt
    return np.moveaxis(out, -1, axis)


def _up_axis_t(g: np.ndarray, axis: int) -> np.ndarray:
    g = np.moveaxis(g, axis, -1)
    ge, go = g[..., 0::2], g[..., 1::2]
    out = 0.75 * (ge + go)
    out[..., :-1] += 0.25 * ge[..., 1:]
    out[..., :1] += 0.25 * ge[..., :1]
    out[..., 1:] += 0.25 * go[..., :-1]
    out[..., -1:] += 0.25 * go[..., -1:]
    return np.moveaxis(out, -1, axis)


def upsample_bilinear_x2(x: Tensor) -> Tensor:
    if x.data.ndim != 4:
        raise ShapeError(f"upsample expects NCHW input, got {x.shape}")
    out = np.ascontiguousarray(_up_axis(_up_axis(x.data, 3), 2))
    return _result(out, (x,), lambda g: (_up_axis_t(_up_axis_t(g, 2), 3),), "upsample_x2")


def horizontal_flip(x: Tensor) -> Tensor:
    out = np.ascontiguousarray(x.data[..., ::-1])
    return _result(out, (x,), lambda g: (np.ascontiguousarray(g[..., ::-1]),), "hflip")


# -- parameter construction ----------------------------------------------------


def init_conv(
    rng: np.random.Generator,
    cin: int,
    cout: int,
    k: int,
    stride: int = 1,
    dilation: int = 1,
    padding: int | None = None,
    groups: int = 1,
    bias: bool = True,
) -> Conv2dParams:
    """Uniform weights in +-1/sqrt(fan_in), zero bias.

    This is Kaiming-uniform with a=sqrt(5), the usual framework default for
    convolutions; the overfit budget of the toy network was tuned with it.
    """
    if padding is None:
        padding = dilation * (k - 1) // 2
    fan_in = (cin // groups) * k * k
    bound = 1.0 / math.sqrt(fan_in)
    w = rng.uniform(-bound, bound, size=(cout, cin // groups, k, k)).astype(np.float32)
    b = Tensor(np.zeros(cout, dtype=np.float32), requires_grad=True) if bias else None
    return Conv2dParams(Tensor(w, requires_grad=True), b, stride, dilation, padding, groups)


def init_bn(c: int) -> BatchNormParams:
    return BatchNormParams(
        gamma=Tensor(np.ones(c, dtype=np.float32), requires_grad=True),
        beta=Tensor(np.zeros(c, dtype=np.float32), requires_grad=True),
        running_mean=Tensor(np.zeros(c, dtype=np.float32)),
        running_var=Tensor(np.ones(c, dtype=np.float32)),
    )
