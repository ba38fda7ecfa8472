"""Dilated separable convolution, attention-branch layers and decoder stages."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .nn import BatchNormParams, Conv2dParams, batch_norm, conv2d, gelu, init_bn, init_conv, upsample_bilinear_x2
from .tensor import ShapeError, Tensor, concat_channels, elementwise_mul

DSDC_DILATIONS = (1, 3, 5, 7)


@dataclass
class ConvBlock:
    """conv -> GELU -> batch norm; ``bn`` None stops after the GELU."""

    conv: Conv2dParams
    bn: BatchNormParams | None


@dataclass
class DsdcParams:
    branches: list[ConvBlock]
    pointwise: ConvBlock

    @property
    def channels(self) -> int:
        return self.pointwise.conv.out_channels


@dataclass
class AttentionLayerParams:
    project: Conv2dParams | None
    down: ConvBlock
    conv1: ConvBlock
    conv2: ConvBlock
    dsdc: DsdcParams


@dataclass
class DecoderStageParams:
    dsdc: DsdcParams | None
    conv1: ConvBlock
    conv2: ConvBlock


def conv_block(x: Tensor, blk: ConvBlock) -> Tensor:
    y = gelu(conv2d(x, blk.conv))
    return y if blk.bn is None else batch_norm(y, blk.bn)


def init_block(rng: np.random.Generator, cin: int, cout: int, k: int, norm: bool = True, **kw) -> ConvBlock:
    return ConvBlock(init_conv(rng, cin, cout, k, **kw), init_bn(cout) if norm else None)


def init_dsdc(rng: np.random.Generator, c: int) -> DsdcParams:
    branches = [init_block(rng, c, c, 3, dilation=d, padding=d, groups=c) for d in DSDC_DILATIONS]
    return DsdcParams(branches, init_block(rng, len(DSDC_DILATIONS) * c, c, 1))


def init_attention_layer(rng: np.random.Generator, c_prev: int, c_enc: int | None, c_out: int) -> AttentionLayerParams:
    """``c_enc`` is None for the first layer, which sees only the RGB image.

    The encoded feature is projected by a 1x1 conv to half its width before
    being concatenated with the previous layer's output.
    """
    project = None
    c_in = c_prev
    if c_enc is not None:
        c_proj = max(1, c_enc // 2)
        project = init_conv(rng, c_enc, c_proj, 1)
        c_in += c_proj
    return AttentionLayerParams(
        project=project,
        down=init_block(rng, c_in, c_out, 4, stride=2, padding=1),
        conv1=init_block(rng, c_out, c_out, 3),
        conv2=init_block(rng, c_out, c_out, 3),
        dsdc=init_dsdc(rng, c_out),
    )


def init_decoder_stage(rng: np.random.Generator, c_prev: int, c_enc: int, c_out: int, dca: bool = True) -> DecoderStageParams:
    return DecoderStageParams(
        dsdc=init_dsdc(rng, c_enc) if dca else None,
        conv1=init_block(rng, c_enc + c_prev, c_out, 3),
        conv2=init_block(rng, c_out, c_out, 3),
    )


def dsdc_forward(f: Tensor, p: DsdcParams) -> Tensor:
    """Four depthwise dilated 3x3 branches fused by a pointwise conv."""
    if f.data.ndim != 4 or f.shape[1] != p.channels:
        raise ShapeError(f"dsdc_forward: input {f.shape} does not have {p.channels} channels")
    branches = [conv_block(f, b) for b in p.branches]
    return conv_block(concat_channels(branches), p.pointwise)


def attention_layer(prev: Tensor, encoded: Tensor | None, p: AttentionLayerParams) -> Tensor:
    """One attention-branch layer; returns the dilated attention map at half resolution."""
    x = prev
    if encoded is not None:
        if p.project is None:
            raise ShapeError("attention_layer: encoded feature given but layer has no projection")
        if (prev.shape[0], prev.shape[2], prev.shape[3]) != (encoded.shape[0], encoded.shape[2], encoded.shape[3]):
            raise ShapeError(f"attention_layer: prev {prev.shape} and encoded {encoded.shape} disagree")
        x = concat_channels([prev, conv2d(encoded, p.project)])
    elif p.project is not None:
        raise ShapeError("attention_layer: layer expects an encoded feature")
    x = conv_block(x, p.down)
    x = conv_block(x, p.conv1)
    x = conv_block(x, p.conv2)
    return dsdc_forward(x, p.dsdc)


def dilated_cross_attention(f_e: Tensor, f_pa: Tensor, dsdc: DsdcParams) -> Tensor:
    """DSDC-processed encoded feature multiplied elementwise by the attention map."""
    f_pf = dsdc_forward(f_e, dsdc)
    if f_pf.shape != f_pa.shape:
        raise ShapeError(f"dilated_cross_attention: {f_pf.shape} vs attention map {f_pa.shape}")
    return elementwise_mul(f_pf, f_pa)


def decoder_stage(prev_dec: Tensor, f_e: Tensor, f_pa: Tensor | None, p: DecoderStageParams) -> Tensor:
    """Upsample the coarser decoder map, fuse with the (cross-attended) encoded feature.

    With ``p.dsdc`` None (the ablation base) the raw encoded feature is used and
    ``f_pa`` is ignored.
    """
    n, _, h, w = f_e.shape
    if prev_dec.shape[0] != n or (2 * prev_dec.shape[2], 2 * prev_dec.shape[3]) != (h, w):
        raise ShapeError(f"decoder_stage: {prev_dec.shape} is not half the resolution of {f_e.shape}")
    up = upsample_bilinear_x2(prev_dec)
    if p.dsdc is not None:
        if f_pa is None:
            raise ShapeError("decoder_stage: attention map required when DCA is enabled")
        skip = dilated_cross_attention(f_e, f_pa, p.dsdc)
    else:
        skip = f_e
    x = conv_block(concat_channels([skip, up]), p.conv1)
    return conv_block(x, p.conv2)
