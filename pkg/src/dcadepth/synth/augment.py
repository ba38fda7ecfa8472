"""Training-time augmentation: small rotation, random crop, flip, photometric jitter."""

from __future__ import annotations

from dataclasses import dataclass, replace

import numpy as np
from scipy import ndimage

from .render import Frame


@dataclass
class AugmentConfig:
    crop_h: int = 64
    crop_w: int = 96
    max_rotation_deg: float = 2.5
    flip_prob: float = 0.5
    gamma: tuple[float, float] = (0.9, 1.1)
    brightness: tuple[float, float] = (0.75, 1.25)
    contrast: tuple[float, float] = (0.9, 1.1)


@dataclass
class AugmentParams:
    angle_deg: float
    top: int
    left: int
    flip: bool
    gamma: float
    brightness: float
    contrast: float


def draw_params(frame: Frame, seed: int, cfg: AugmentConfig) -> AugmentParams:
    h, w = frame.depth.shape
    if cfg.crop_h > h or cfg.crop_w > w:
        raise ValueError(f"crop {cfg.crop_h}x{cfg.crop_w} larger than frame {h}x{w}")
    if cfg.crop_h % 32 or cfg.crop_w % 32:
        raise ValueError(f"crop {cfg.crop_h}x{cfg.crop_w} is not divisible by 32")
    rng = np.random.default_rng(seed)
    return AugmentParams(
        angle_deg=float(rng.uniform(-cfg.max_rotation_deg, cfg.max_rotation_deg)),
        top=int(rng.integers(0, h - cfg.crop_h + 1)),
        left=int(rng.integers(0, w - cfg.crop_w + 1)),
        flip=bool(rng.random() < cfg.flip_prob),
        gamma=float(rng.uniform(*cfg.gamma)),
        brightness=float(rng.uniform(*cfg.brightness)),
        contrast=float(rng.uniform(*cfg.contrast)),
    )


def apply_augment(frame: Frame, p: AugmentParams, crop_h: int, crop_w: int) -> Frame:
    rgb = frame.rgb.astype(np.float64)
    depth = frame.depth
    if p.angle_deg:
        # bilinear for colour, nearest for depth; exposed corners become invalid (depth 0)
        rgb = ndimage.rotate(rgb, p.angle_deg, axes=(1, 0), reshape=False, order=1, mode="constant", cval=0.0)
        depth = ndimage.rotate(depth, p.angle_deg, axes=(1, 0), reshape=False, order=0, mode="constant", cval=0.0)
    rgb = rgb[p.top:p.top + crop_h, p.left:p.left + crop_w]
    depth = depth[p.top:p.top + crop_h, p.left:p.left + crop_w]
    if p.flip:
        rgb = rgb[:, ::-1]
        depth = depth[:, ::-1]
    x = np.clip(rgb / 255.0, 0.0, 1.0) ** p.gamma
    x = x * p.brightness
    mean = x.mean()
    x = np.clip((x - mean) * p.contrast + mean, 0.0, 1.0)
    out_rgb = np.round(x * 255).astype(np.uint8)
    return replace(frame, rgb=out_rgb, depth=np.ascontiguousarray(depth, dtype=np.float32))


def augment(frame: Frame, seed: int, cfg: AugmentConfig | None = None) -> Frame:
    """Seeded augmentation: the same (frame, seed, cfg) always yields identical bytes."""
    cfg = cfg or AugmentConfig()
    return apply_augment(frame, draw_params(frame, seed, cfg), cfg.crop_h, cfg.crop_w)
