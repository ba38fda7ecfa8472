"""CPU ray casting of a SceneSpec into an RGB image and planar z-depth.

All geometry is translated so the camera sits at the origin. Primary rays
are built as ``forward + u * right + v * up`` so that the ray parameter at a
hit equals the planar depth directly, with no normalisation round-off.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .lighting import IlluminationVariant, sun_direction
from .scene import SceneSpec, Viewpoint

EPS = 1e-6
SHADOW_BIAS = 1e-4
EXPOSURE = 1.0
GAMMA = 1.0 / 2.2


class RenderError(ValueError):
    pass


@dataclass
class Frame:
    rgb: np.ndarray  # H x W x 3 uint8
    depth: np.ndarray  # H x W float32, metres along the optical axis
    scene_id: int = 0
    viewpoint_id: int = 0
    illumination_id: str = ""


def camera_basis(view: Viewpoint) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    yaw, pitch = math.radians(view.yaw_deg), math.radians(view.pitch_deg)
    fwd = np.array([math.sin(yaw) * math.cos(pitch), math.sin(pitch), math.cos(yaw) * math.cos(pitch)])
    right = np.array([math.cos(yaw), 0.0, -math.sin(yaw)])
    up = np.cross(fwd, right)
    return fwd, right, up


def primary_rays(view: Viewpoint, fov_deg: float, h: int, w: int) -> np.ndarray:
    """(H, W, 3) ray directions with unit forward component; pixel centres are mirror-exact."""
    fwd, right, up = camera_basis(view)
    t = math.tan(math.radians(fov_deg) / 2)
    u = ((2 * np.arange(w) + 1 - w) / w) * t
    v = ((h - 2 * np.arange(h) - 1) / w) * t
    return fwd[None, None, :] + u[None, :, None] * right[None, None, :] + v[:, None, None] * up[None, None, :]


def _safe_div(num: np.ndarray, den: np.ndarray) -> np.ndarray:
    with np.errstate(divide="ignore", invalid="ignore"):
        out = num / den
    return np.where(den == 0, np.inf, out)


def _room_hit(o: np.ndarray, d: np.ndarray, lo: np.ndarray, hi: np.ndarray):
    bound = np.where(d > 0, hi, lo)
    ts = _safe_div(bound - o, d)
    ts = np.where(ts > 0, ts, np.inf)
    axis = np.argmin(ts, axis=-1)
    t = np.take_along_axis(ts, axis[..., None], axis=-1)[..., 0]
    sgn = np.sign(np.take_along_axis(d, axis[..., None], axis=-1)[..., 0])
    normal = np.zeros_like(d)
    np.put_along_axis(normal, axis[..., None], -sgn[..., None], axis=-1)
    # surface ids: 0 floor, 1 ceiling, 2 left, 3 right, 4 back, 5 front
    surf = np.choose(axis, [np.where(sgn > 0, 3, 2), np.where(sgn > 0, 1, 0), np.where(sgn > 0, 5, 4)])
    return t, normal, surf


def _sphere_hit(o, d, c, r):
    oc = o - c
    a = np.einsum("...i,...i->...", d, d)
    b = 2 * np.einsum("...i,...i->...", oc, d)
    cc = np.einsum("...i,...i->...", oc, oc) - r * r
    disc = b * b - 4 * a * cc
    ok = disc >= 0
    sq = np.sqrt(np.where(ok, disc, 0))
    t0 = (-b - sq) / (2 * a)
    t1 = (-b + sq) / (2 * a)
    t = np.where(t0 > EPS, t0, np.where(t1 > EPS, t1, np.inf))
    t = np.where(ok, t, np.inf)
    p = o + np.where(np.isfinite(t), t, 0)[..., None] * d
    return t, (p - c) / r


def _box_hit(o, d, lo, hi):
    t1 = _safe_div(lo - o, d)
    t2 = _safe_div(hi - o, d)
    # zero direction components: inside the slab -> unbounded, outside -> miss
    zero = d == 0
    inside = (o >= lo) & (o <= hi)
    tmin = np.where(zero, np.where(inside, -np.inf, np.inf), np.minimum(t1, t2))
    tmax = np.where(zero, np.where(inside, np.inf, -np.inf), np.maximum(t1, t2))
    near = tmin.max(axis=-1)
    far = tmax.min(axis=-1)
    hit = (near <= far) & (near > EPS)
    t = np.where(hit, near, np.inf)
    axis = np.argmax(tmin, axis=-1)
    sgn = np.sign(np.take_along_axis(d, axis[..., None], axis=-1)[..., 0])
    normal = np.zeros_like(d)
    np.put_along_axis(normal, axis[..., None], -sgn[..., None], axis=-1)
    return t, normal


def _plane_hit(o, d, c, size):
    a = int(np.argmin(size))
    t = _safe_div(c[a] - o[..., a], d[..., a])
    p = o + np.where(np.isfinite(t), t, 0)[..., None] * d
    within = np.ones(t.shape, dtype=bool)
    for b in range(3):
        if b != a:
            within &= np.abs(p[..., b] - c[b]) <= size[b] / 2
    t = np.where(within & (t > EPS), t, np.inf)
    normal = np.zeros_like(d)
    normal[..., a] = -np.sign(d[..., a])
    return t, normal


def _primitive_hit(prim, o, d, offset):
    c = np.asarray(prim.position, dtype=np.float64) - offset
    size = np.asarray(prim.size, dtype=np.float64)
    if prim.kind == "sphere":
        return _sphere_hit(o, d, c, size[0] / 2)
    if prim.kind == "box":
        return _box_hit(o, d, c - size / 2, c + size / 2)
    if prim.kind == "plane":
        return _plane_hit(o, d, c, size)
    raise RenderError(f"unknown primitive kind {prim.kind!r}")


def _occluded(scene: SceneSpec, o, d, max_t, offset) -> np.ndarray:
    blocked = np.zeros(o.shape[:-1], dtype=bool)
    for prim in scene.primitives:
        t, _ = _primitive_hit(prim, o, d, offset)
        blocked |= t < max_t
    return blocked


def render_frame(scene: SceneSpec, view: Viewpoint | int, illum: IlluminationVariant, h: int, w: int,
                 scene_id: int | None = None, viewpoint_id: int = 0) -> Frame:
    """Ray-cast one frame; depth depends only on geometry, never on ``illum``."""
    if isinstance(view, int):
        viewpoint_id, view = view, scene.viewpoints[view]
    if h % 32 or w % 32 or h < 1 or w < 1:
        raise RenderError(f"resolution {h}x{w} must be a positive multiple of 32")
    cam = np.asarray(view.position, dtype=np.float64)
    room = np.asarray(scene.room, dtype=np.float64)
    if np.any(cam <= 0) or np.any(cam >= room):
        raise RenderError(f"viewpoint {tuple(cam)} lies outside the room {tuple(room)}")

    d = primary_rays(view, scene.fov_deg, h, w)
    o = np.zeros_like(d)
    t, normal, surf = _room_hit(o, d, -cam, room - cam)
    mat = np.full(t.shape, -1)
    for k, prim in enumerate(scene.primitives):
        tk, nk = _primitive_hit(prim, o, d, cam)
        closer = tk < t
        t = np.where(closer, tk, t)
        normal = np.where(closer[..., None], nk, normal)
        mat = np.where(closer, k, mat)
    if not np.all(np.isfinite(t)):
        raise RenderError("some primary rays escaped the room")
    depth = t.astype(np.float32)

    albedo = np.asarray(scene.wall_albedo, dtype=np.float64)[surf]
    spec = np.zeros(t.shape)
    shin = np.ones(t.shape)
    for k, prim in enumerate(scene.primitives):
        sel = mat == k
        albedo[sel] = prim.albedo
        spec[sel] = prim.specular
        shin[sel] = prim.shininess
    p = t[..., None] * d
    if scene.checker_floor:
        world = p + cam
        floor = (mat < 0) & (surf == 0)
        cell = (np.floor(world[..., 0] / 0.5) + np.floor(world[..., 2] / 0.5)) % 2
        albedo = np.where((floor & (cell == 1))[..., None], albedo * 0.6, albedo)

    # face normals toward the viewer
    flip = np.einsum("...i,...i->...", normal, d) > 0
    normal = np.where(flip[..., None], -normal, normal)
    view_dir = -d / np.linalg.norm(d, axis=-1, keepdims=True)
    origin = p + SHADOW_BIAS * normal

    radiance = np.zeros(p.shape)
    if illum.environment is not None:
        radiance += albedo * np.asarray(illum.environment)

    def add_light(ldir, rgb, falloff, max_t):
        ndl = np.einsum("...i,...i->...", normal, ldir)
        lit = ndl > 0
        if not lit.any():
            return 0.0
        lit &= ~_occluded(scene, origin, ldir, max_t, cam)
        half = ldir + view_dir
        half /= np.maximum(np.linalg.norm(half, axis=-1, keepdims=True), 1e-12)
        ndh = np.maximum(np.einsum("...i,...i->...", normal, half), 0)
        diffuse = albedo * np.maximum(ndl, 0)[..., None]
        specular = (spec * ndh ** shin)[..., None]
        return np.where(lit[..., None], (diffuse + specular) * np.asarray(rgb) * falloff[..., None], 0.0)

    if illum.sun is not None:
        ldir = np.broadcast_to(-sun_direction(illum.sun), p.shape)
        radiance += add_light(ldir, illum.sun.rgb, np.ones(t.shape), np.full(t.shape, np.inf))
    for light in illum.indoor:
        lpos = np.asarray(light.rel_position) * room - cam
        vec = lpos - p
        dist = np.linalg.norm(vec, axis=-1)
        radiance += add_light(vec / dist[..., None], light.rgb, 1.0 / dist ** 2, dist)

    mapped = (1.0 - np.exp(-EXPOSURE * radiance)) ** GAMMA
    rgb = np.clip(np.round(mapped * 255), 0, 255).astype(np.uint8)
    sid = scene.seed if scene_id is None else scene_id
    return Frame(rgb, depth, sid, viewpoint_id, illum.id)
