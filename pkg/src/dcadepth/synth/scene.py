"""Procedural room scenes: a closed box with a few primitives and camera viewpoints."""

from __future__ import annotations

import json
from dataclasses import asdict, dataclass, field

import numpy as np

PRIMITIVE_KINDS = ("sphere", "box", "plane")


@dataclass
class Primitive:
    """An object in room coordinates (x right, y up, z forward, metres).

    ``size`` is the full extent along each axis; for spheres all three entries
    equal the diameter, for planes the entry along the normal axis is 0.
    """

    kind: str
    position: tuple[float, float, float]
    size: tuple[float, float, float]
    albedo: tuple[float, float, float]
    specular: float = 0.2
    shininess: float = 16.0


@dataclass
class Viewpoint:
    position: tuple[float, float, float]
    yaw_deg: float = 0.0
    pitch_deg: float = 0.0


@dataclass
class SceneSpec:
    seed: int
    room: tuple[float, float, float]
    fov_deg: float = 60.0
    primitives: list[Primitive] = field(default_factory=list)
    viewpoints: list[Viewpoint] = field(default_factory=list)
    # floor, ceiling, left, right, back (z=0), front (z=depth)
    wall_albedo: tuple[tuple[float, float, float], ...] = ((0.6, 0.5, 0.4),) + ((0.8, 0.8, 0.8),) * 5
    checker_floor: bool = True

    def to_json(self) -> str:
        return json.dumps(asdict(self), sort_keys=True)


@dataclass
class SceneConfig:
    min_primitives: int = 3
    max_primitives: int = 8
    viewpoints: int = 2
    fov_deg: float = 60.0
    max_retries: int = 100


def _r(x) -> float:
    return round(float(x), 4)


def _rgb(rng: np.random.Generator, lo=0.15, hi=0.95) -> tuple[float, float, float]:
    return tuple(_r(v) for v in rng.uniform(lo, hi, 3))


def _overlaps(a: tuple, b: tuple, margin: float = 0.05) -> bool:
    # axis-aligned footprints (x0, z0, x1, z1)
    return not (a[2] + margin < b[0] or b[2] + margin < a[0] or a[3] + margin < b[1] or b[3] + margin < a[1])


def generate_scene(seed: int, cfg: SceneConfig | None = None) -> SceneSpec:
    """Deterministic in ``seed``; floor objects never overlap each other or a camera."""
    cfg = cfg or SceneConfig()
    rng = np.random.default_rng(seed)
    for _ in range(cfg.max_retries):
        spec = _try_scene(rng, seed, cfg)
        if spec is not None:
            return spec
    raise RuntimeError(f"could not place a valid scene for seed {seed}")


def _try_scene(rng: np.random.Generator, seed: int, cfg: SceneConfig) -> SceneSpec | None:
    w, h, d = _r(rng.uniform(3.5, 5.5)), _r(rng.uniform(2.5, 3.2)), _r(rng.uniform(4.5, 7.0))
    walls = tuple(_rgb(rng, 0.35, 0.9) for _ in range(6))

    views = []
    for _ in range(cfg.viewpoints):
        views.append(Viewpoint(
            position=(_r(rng.uniform(1.0, w - 1.0)), _r(rng.uniform(1.2, 1.7)), _r(rng.uniform(0.4, 1.0))),
            yaw_deg=_r(rng.uniform(-20, 20)),
            pitch_deg=_r(rng.uniform(-12, 3)),
        ))
    # cameras keep a clear zone in front of them
    footprints = [(v.position[0] - 0.4, v.position[2] - 0.4, v.position[0] + 0.4, v.position[2] + 1.2) for v in views]

    prims: list[Primitive] = []
    n = int(rng.integers(cfg.min_primitives, cfg.max_primitives + 1))
    attempts = 0
    while len(prims) < n and attempts < 200:
        attempts += 1
        kind = PRIMITIVE_KINDS[int(rng.integers(0, 3))]
        if kind == "plane":
            # a panel hung on the front or a side wall
            pw, ph = _r(rng.uniform(0.5, 1.5)), _r(rng.uniform(0.4, 1.0))
            y = _r(rng.uniform(0.9, h - ph / 2 - 0.2))
            side = int(rng.integers(0, 3))
            if side == 0:
                pos, size = (_r(rng.uniform(pw / 2 + 0.1, w - pw / 2 - 0.1)), y, _r(d - 0.02)), (pw, ph, 0.0)
            else:
                x = 0.02 if side == 1 else _r(w - 0.02)
                pos, size = (x, y, _r(rng.uniform(2.0 + pw / 2, d - pw / 2 - 0.1))), (0.0, ph, pw)
            prims.append(Primitive("plane", pos, size, _rgb(rng), _r(rng.uniform(0, 0.3)), 8.0))
            continue
        if kind == "sphere":
            r = _r(rng.uniform(0.2, 0.55))
            sx = sz = 2 * r
            sy = 2 * r
        else:
            sx, sy, sz = _r(rng.uniform(0.3, 1.2)), _r(rng.uniform(0.3, 1.4)), _r(rng.uniform(0.3, 1.2))
        x = _r(rng.uniform(sx / 2 + 0.05, w - sx / 2 - 0.05))
        z = _r(rng.uniform(max(1.8, sz / 2 + 0.05), d - sz / 2 - 0.05))
        fp = (x - sx / 2, z - sz / 2, x + sx / 2, z + sz / 2)
        if any(_overlaps(fp, o) for o in footprints):
            continue
        footprints.append(fp)
        y = _r(sy / 2 + (0.0 if kind == "box" else 0.001))
        prims.append(Primitive(kind, (x, y, z), (sx, sy, sz), _rgb(rng),
                               _r(rng.uniform(0.05, 0.6)), float(rng.choice([8.0, 16.0, 32.0, 64.0]))))
    if len(prims) < cfg.min_primitives:
        return None
    return SceneSpec(seed, (w, h, d), cfg.fov_deg, prims, views, walls)


def mirror_scene() -> SceneSpec:
    """A room that is left-right symmetric about the camera's optical axis.

    Coordinates are dyadic so camera-relative offsets are exact and a frame
    rendered under a view-independent light is bitwise mirror-symmetric.
    """
    wall = (0.75, 0.75, 0.75)
    prims = [
        Primitive("sphere", (2.0, 0.5, 3.0), (1.0, 1.0, 1.0), (0.8, 0.3, 0.2)),
        Primitive("box", (2.0, 0.375, 4.25), (1.25, 0.75, 0.5), (0.2, 0.5, 0.8)),
        Primitive("sphere", (0.75, 0.25, 2.25), (0.5, 0.5, 0.5), (0.3, 0.8, 0.3)),
        Primitive("sphere", (3.25, 0.25, 2.25), (0.5, 0.5, 0.5), (0.3, 0.8, 0.3)),
        Primitive("box", (0.5, 1.0, 4.5), (0.5, 2.0, 0.5), (0.9, 0.8, 0.4)),
        Primitive("box", (3.5, 1.0, 4.5), (0.5, 2.0, 0.5), (0.9, 0.8, 0.4)),
    ]
    return SceneSpec(
        seed=0,
        room=(4.0, 2.75, 5.5),
        primitives=prims,
        viewpoints=[Viewpoint((2.0, 1.25, 0.5), 0.0, -8.0)],
        wall_albedo=((0.6, 0.5, 0.4), wall, wall, wall, (0.5, 0.6, 0.7), wall),
        checker_floor=False,
    )
