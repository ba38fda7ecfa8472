"""Depth network assembly: toy encoder, refinement path, attention branch, decoder and head."""

from __future__ import annotations

import copy
import dataclasses
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterator

import numpy as np

from .blocks import (
    AttentionLayerParams,
    ConvBlock,
    DecoderStageParams,
    attention_layer,
    conv_block,
    decoder_stage,
    init_attention_layer,
    init_block,
    init_decoder_stage,
)
from .config import ConfigError, as_bool, as_int_list, format_kv, load_kv
from .nn import BatchNormParams, Conv2dParams, conv2d, horizontal_flip, init_conv, upsample_bilinear_x2
from .tensor import ShapeError, Tensor, concat_channels, mul_scalar, no_grad, sigmoid

MODEL_KEYS = ("input_h", "input_w", "enc_channels", "dec_channels", "refine_channels", "max_depth", "dca_enabled", "seed")


@dataclass
class ModelConfig:
    input_h: int = 96
    input_w: int = 128
    enc_channels: tuple[int, ...] = (16, 24, 32, 48, 64)
    dec_channels: tuple[int, ...] = (64, 48, 32, 24, 16)
    refine_channels: int = 8
    max_depth: float = 10.0
    dca_enabled: bool = True
    seed: int = 0

    def __post_init__(self):
        self.enc_channels = tuple(int(c) for c in self.enc_channels)
        self.dec_channels = tuple(int(c) for c in self.dec_channels)
        if len(self.enc_channels) != 5 or len(self.dec_channels) != 5:
            raise ConfigError("enc_channels and dec_channels need exactly 5 entries")
        if self.input_h % 32 or self.input_w % 32:
            raise ConfigError(f"input {self.input_h}x{self.input_w} is not divisible by 32")
        if min(self.enc_channels + self.dec_channels) < 1 or self.refine_channels < 1:
            raise ConfigError("channel counts must be positive")
        if self.max_depth <= 0:
            raise ConfigError("max_depth must be positive")

    @classmethod
    def from_kv(cls, kv: dict[str, str]) -> "ModelConfig":
        conv = {
            "input_h": int,
            "input_w": int,
            "enc_channels": as_int_list,
            "dec_channels": as_int_list,
            "refine_channels": int,
            "max_depth": float,
            "dca_enabled": as_bool,
            "seed": int,
        }
        return cls(**{k: conv[k](kv[k]) for k in MODEL_KEYS if k in kv})

    @classmethod
    def load(cls, path: str | Path) -> "ModelConfig":
        return cls.from_kv(load_kv(path))

    def to_kv(self) -> str:
        items = dataclasses.asdict(self)
        items["enc_channels"] = ",".join(map(str, self.enc_channels))
        items["dec_channels"] = ",".join(map(str, self.dec_channels))
        items["dca_enabled"] = str(self.dca_enabled).lower()
        items["max_depth"] = repr(float(self.max_depth))
        return format_kv(items)


@dataclass
class EncoderStage:
    down: ConvBlock
    conv: ConvBlock


@dataclass
class DepthModel:
    config: ModelConfig
    encoder: list[EncoderStage]
    refine: list[ConvBlock]
    attention: list[AttentionLayerParams] | None
    bottleneck: ConvBlock
    decoder: list[DecoderStageParams]
    head: list[ConvBlock]
    head_out: Conv2dParams
    training: bool = field(default=True)

    def named_tensors(self) -> Iterator[tuple[str, Tensor]]:
        """Every parameter and running statistic under a unique dotted name."""
        for fname in ("encoder", "refine", "attention", "bottleneck", "decoder", "head", "head_out"):
            yield from _walk(getattr(self, fname), fname)

    def named_parameters(self) -> dict[str, Tensor]:
        return {k: t for k, t in self.named_tensors() if t.requires_grad}

    def named_buffers(self) -> dict[str, Tensor]:
        return {k: t for k, t in self.named_tensors() if not t.requires_grad}

    def batch_norms(self) -> Iterator[BatchNormParams]:
        yield from _walk_bn(self)

    def train(self) -> "DepthModel":
        self._set_mode(True)
        return self

    def eval(self) -> "DepthModel":
        self._set_mode(False)
        return self

    def _set_mode(self, training: bool) -> None:
        self.training = training
        for bn in self.batch_norms():
            bn.training = training

    def zero_grad(self) -> None:
        for t in self.named_parameters().values():
            t.grad = None

    def astype(self, dtype) -> "DepthModel":
        """Deep copy with every tensor converted (used for float64 gradient checks)."""
        clone = copy.deepcopy(self)
        for _, t in clone.named_tensors():
            t.data = t.data.astype(dtype)
            t.grad = None
        return clone


def _walk(obj, prefix: str) -> Iterator[tuple[str, Tensor]]:
    if obj is None:
        return
    if isinstance(obj, Tensor):
        yield prefix, obj
    elif isinstance(obj, list):
        for i, item in enumerate(obj):
            yield from _walk(item, f"{prefix}.{i}")
    elif dataclasses.is_dataclass(obj):
        for f in dataclasses.fields(obj):
            yield from _walk(getattr(obj, f.name), f"{prefix}.{f.name}")


def _walk_bn(obj) -> Iterator[BatchNormParams]:
    if isinstance(obj, BatchNormParams):
        yield obj
    elif isinstance(obj, list):
        for item in obj:
            yield from _walk_bn(item)
    elif dataclasses.is_dataclass(obj) and not isinstance(obj, (ModelConfig, Tensor)):
        for f in dataclasses.fields(obj):
            yield from _walk_bn(getattr(obj, f.name))


def build_model(cfg: ModelConfig, seed: int | None = None) -> DepthModel:
    """Seeded construction; the same seed always gives bit-identical parameters."""
    rng = np.random.default_rng(cfg.seed if seed is None else seed)
    enc, dec, r = cfg.enc_channels, cfg.dec_channels, cfg.refine_channels

    encoder = []
    c_prev = 3
    for c in enc:
        encoder.append(EncoderStage(
            down=init_block(rng, c_prev, c, 3, stride=2, padding=1),
            conv=init_block(rng, c, c, 3),
        ))
        c_prev = c

    refine = [init_block(rng, 3, r, 3), init_block(rng, r, r, 3)]

    attention = None
    if cfg.dca_enabled:
        attention = [init_attention_layer(rng, 3, None, enc[0])]
        for k in range(1, 4):
            attention.append(init_attention_layer(rng, enc[k - 1], enc[k - 1], enc[k]))

    bottleneck = init_block(rng, enc[4], dec[0], 3)
    decoder = []
    for k in range(4):
        # stage k fuses the stride 2**(4-k) encoded feature
        decoder.append(init_decoder_stage(rng, dec[k], enc[3 - k], dec[k + 1], dca=cfg.dca_enabled))

    # no batch norm right before the output conv, so the mean prediction is not pinned to a few affine terms
    head = [init_block(rng, dec[4] + r, dec[4], 3), init_block(rng, dec[4], dec[4], 3, norm=False)]
    head_out = init_conv(rng, dec[4], 1, 1)
    return DepthModel(cfg, encoder, refine, attention, bottleneck, decoder, head, head_out)


def _check_input(rgb: Tensor) -> None:
    if rgb.data.ndim != 4 or rgb.shape[1] != 3:
        raise ShapeError(f"expected [N,3,H,W] input, got {rgb.shape}")
    if rgb.shape[2] % 32 or rgb.shape[3] % 32:
        raise ShapeError(f"input {rgb.shape[2]}x{rgb.shape[3]} is not divisible by 32")


def encoder_forward(rgb: Tensor, m: DepthModel) -> list[Tensor]:
    """Encoded features at strides 2, 4, 8, 16, 32."""
    _check_input(rgb)
    feats = []
    x = rgb
    for stage in m.encoder:
        x = conv_block(conv_block(x, stage.down), stage.conv)
        feats.append(x)
    return feats


def attention_maps(rgb: Tensor, feats: list[Tensor], m: DepthModel) -> list[Tensor]:
    """Dilated attention maps at strides 2, 4, 8, 16."""
    maps = [attention_layer(rgb, None, m.attention[0])]
    for k in range(1, 4):
        maps.append(attention_layer(maps[-1], feats[k - 1], m.attention[k]))
    return maps


def model_forward(rgb: Tensor, m: DepthModel) -> Tensor:
    """Dense depth in (0, max_depth) at input resolution."""
    feats = encoder_forward(rgb, m)
    maps = attention_maps(rgb, feats, m) if m.attention is not None else [None] * 4
    x = conv_block(feats[4], m.bottleneck)
    for k, stage in enumerate(m.decoder):
        x = decoder_stage(x, feats[3 - k], maps[3 - k], stage)
    ref = conv_block(conv_block(rgb, m.refine[0]), m.refine[1])
    x = concat_channels([upsample_bilinear_x2(x), ref])
    for blk in m.head:
        x = conv_block(x, blk)
    return mul_scalar(sigmoid(conv2d(x, m.head_out)), m.config.max_depth)


def predict_flip_averaged(rgb: Tensor, m: DepthModel) -> Tensor:
    """Average of the plain prediction and the un-flipped prediction of the mirrored input."""
    with no_grad():
        a = model_forward(rgb, m)
        b = horizontal_flip(model_forward(horizontal_flip(rgb), m))
    return Tensor(0.5 * (a.data + b.data))


BLOCK_GROUPS = {
    "encoder": "encoder",
    "decoder": "decoder",
    "bottleneck": "decoder",
    "attention": "attention",
    "refine": "refinement",
    "head": "head",
    "head_out": "head",
}


def count_params(obj) -> int:
    """Trainable scalars in any parameter dataclass, list or tensor."""
    return sum(t.size for _, t in _walk(obj, "p") if t.requires_grad)


def param_count(m: DepthModel) -> dict[str, int]:
    """Trainable parameter counts per block group plus ``dca`` and ``total``.

    ``dca`` covers the attention branch and the decoder-side DSDC blocks, i.e.
    everything removed when DCA is disabled.
    """
    counts = {g: 0 for g in ("encoder", "decoder", "attention", "refinement", "head")}
    dca = 0
    for name, t in m.named_parameters().items():
        counts[BLOCK_GROUPS[name.split(".")[0]]] += t.size
        if name.startswith("attention.") or ".dsdc." in name:
            dca += t.size
    counts["dca"] = dca
    counts["total"] = sum(counts[g] for g in ("encoder", "decoder", "attention", "refinement", "head"))
    return counts
