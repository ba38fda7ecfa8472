"""The eleven illumination variants: three sun presets, indoor lights, ambient environment."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np


@dataclass(frozen=True)
class SunLight:
    name: str
    direction: tuple[float, float, float]  # direction the light travels
    rgb: tuple[float, float, float]


@dataclass(frozen=True)
class PointLight:
    # position as fractions of the room box, so variants stay geometry-independent
    rel_position: tuple[float, float, float]
    rgb: tuple[float, float, float]


@dataclass(frozen=True)
class IlluminationVariant:
    id: str
    sun: SunLight | None = None
    indoor: tuple[PointLight, ...] = ()
    environment: tuple[float, float, float] | None = None


SUN_PRESETS = {
    "M": SunLight("morning", (0.6, -0.45, 0.65), (1.6, 1.15, 0.75)),
    "Nn": SunLight("noon", (-0.15, -0.95, 0.25), (1.7, 1.7, 1.6)),
    "Nt": SunLight("night", (-0.5, -0.35, 0.8), (0.18, 0.22, 0.45)),
}

INDOOR_LIGHTS = (
    PointLight((0.3, 0.93, 0.45), (3.2, 2.7, 2.0)),
    PointLight((0.72, 0.93, 0.75), (2.6, 2.3, 1.8)),
)

ENVIRONMENT = (0.35, 0.36, 0.4)

ILLUMINATION_IDS = ("M", "Nn", "Nt", "I", "E", "M+I", "Nn+I", "Nt+I", "M+I+E", "Nn+I+E", "Nt+I+E")


def variant(vid: str) -> IlluminationVariant:
    parts = vid.split("+")
    if vid not in ILLUMINATION_IDS:
        raise KeyError(f"unknown illumination id {vid!r}")
    sun = next((SUN_PRESETS[p] for p in parts if p in SUN_PRESETS), None)
    indoor = INDOOR_LIGHTS if "I" in parts else ()
    env = ENVIRONMENT if "E" in parts else None
    return IlluminationVariant(vid, sun, indoor, env)


def illumination_set() -> list[IlluminationVariant]:
    """Five single light groups followed by the six sun/indoor/environment combinations."""
    return [variant(v) for v in ILLUMINATION_IDS]


def sun_direction(sun: SunLight) -> np.ndarray:
    d = np.asarray(sun.direction, dtype=np.float64)
    return d / np.linalg.norm(d)
