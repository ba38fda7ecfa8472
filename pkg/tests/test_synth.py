import struct
from dataclasses import replace

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from dcadepth.synth import (
    AugmentConfig,
    GeneratorConfig,
    SceneConfig,
    SceneSpec,
    augment,
    generate_dataset,
    generate_scene,
    illumination_set,
    load_frame,
    mirror_scene,
    read_manifest,
    read_pfm,
    read_ppm,
    render_frame,
    write_pfm,
    write_ppm,
)
from dcadepth.synth.augment import apply_augment, draw_params
from dcadepth.synth.imageio import MalformedHeaderError, TruncatedPayloadError, UnsupportedEndiannessError
from dcadepth.synth.lighting import ILLUMINATION_IDS, SUN_PRESETS, variant
from dcadepth.synth.render import RenderError
from dcadepth.synth.scene import Viewpoint


class TestPfm:
    def test_round_trip(self):
        d = np.random.default_rng(0).uniform(0.1, 10, (7, 5)).astype(np.float32)
        d[0, 0] = np.float32(np.nextafter(np.float32(1), np.float32(2)))
        back = read_pfm(write_pfm(d))
        assert back.dtype == np.float32 and back.tobytes() == d.tobytes()

    def test_format_definition(self):
        payload = struct.pack("<4f", 1.0, 2.0, 3.0, 4.0)
        d = read_pfm(b"Pf\n2 2\n-1.0\n" + payload)
        # bottom row first
        np.testing.assert_array_equal(d, [[3.0, 4.0], [1.0, 2.0]])
        assert write_pfm(d) == b"Pf\n2 2\n-1.0\n" + payload

    def test_big_endian_rejected(self):
        with pytest.raises(UnsupportedEndiannessError):
            read_pfm(b"Pf\n2 2\n+1.0\n" + bytes(16))

    def test_truncated(self):
        with pytest.raises(TruncatedPayloadError):
            read_pfm(b"Pf\n2 2\n-1.0\n" + bytes(15))

    @pytest.mark.parametrize("buf", [b"PF\n2 2\n-1.0\n", b"Pf\n2\n-1.0\n", b"Pf\n2 2\n", b"Pf\n0 2\n-1.0\n",
                                     b"Pf\n2 2\nabc\n"])
    def test_malformed(self, buf):
        with pytest.raises(MalformedHeaderError):
            read_pfm(buf + bytes(16))

    def test_error_codes_distinct(self):
        codes = {MalformedHeaderError.code, TruncatedPayloadError.code, UnsupportedEndiannessError.code}
        assert len(codes) == 3


class TestPpm:
    def test_round_trip(self):
        rgb = np.random.default_rng(1).integers(0, 256, (6, 9, 3), dtype=np.uint8)
        buf = write_ppm(rgb)
        assert buf.startswith(b"P6\n9 6\n255\n")
        assert read_ppm(buf).tobytes() == rgb.tobytes()

    def test_comments_in_header(self):
        rgb = np.arange(12, dtype=np.uint8).reshape(2, 2, 3)
        buf = b"P6 # comment\n2 2\n# another\n255\n" + rgb.tobytes()
        np.testing.assert_array_equal(read_ppm(buf), rgb)

    def test_errors(self):
        with pytest.raises(MalformedHeaderError):
            read_ppm(b"P3\n1 1\n255\n" + bytes(3))
        with pytest.raises(MalformedHeaderError):
            read_ppm(b"P6\n1 1\n65535\n" + bytes(6))
        with pytest.raises(TruncatedPayloadError):
            read_ppm(b"P6\n2 2\n255\n" + bytes(11))
        with pytest.raises(ValueError):
            write_ppm(np.zeros((2, 2, 3), np.float32))


class TestIllumination:
    def test_eleven_distinct(self):
        ids = [v.id for v in illumination_set()]
        assert len(ids) == 11 and len(set(ids)) == 11
        assert tuple(ids) == ILLUMINATION_IDS

    def test_combinations_present(self):
        assert {"M+I", "Nn+I", "Nt+I", "M+I+E", "Nn+I+E", "Nt+I+E"} <= set(ILLUMINATION_IDS)

    def test_night_definition(self):
        v = variant("Nt")
        assert v.sun == SUN_PRESETS["Nt"] and v.indoor == () and v.environment is None

    def test_unknown(self):
        with pytest.raises(KeyError):
            variant("X")


class TestScene:
    def test_deterministic(self):
        assert generate_scene(5).to_json() == generate_scene(5).to_json()

    def test_seeds_differ(self):
        specs = {generate_scene(s).to_json() for s in range(10)}
        assert len(specs) == 10

    @settings(max_examples=10, deadline=None)
    @given(st.integers(0, 10_000))
    def test_invariants_and_full_coverage(self, seed):
        spec = generate_scene(seed, SceneConfig(viewpoints=2))
        assert 3 <= len(spec.primitives) <= 8
        for k, view in enumerate(spec.viewpoints):
            assert all(0 < p < r for p, r in zip(view.position, spec.room))
            f = render_frame(spec, k, variant("E"), 32, 32)
            # every ray hits something inside the room; depth is positive and bounded by the room diagonal
            assert np.all(np.isfinite(f.depth)) and f.depth.min() > 0
            assert f.depth.max() <= np.linalg.norm(spec.room)


class TestRender:
    def test_frontal_wall_depth_is_exact(self):
        spec = SceneSpec(seed=0, room=(4.0, 3.0, 5.5), viewpoints=[Viewpoint((2.0, 1.5, 0.5))], checker_floor=False)
        f = render_frame(spec, 0, variant("E"), 32, 32)
        assert f.depth[16, 16] == np.float32(5.0)
        # planar depth is constant over the whole frontal wall
        assert f.depth[8:24, 8:24].min() == f.depth[8:24, 8:24].max() == np.float32(5.0)

    def test_depth_identical_across_illuminations(self):
        spec = generate_scene(3)
        frames = [render_frame(spec, 1, v, 32, 64) for v in illumination_set()]
        assert all(f.depth.tobytes() == frames[0].depth.tobytes() for f in frames)
        assert len({f.rgb.tobytes() for f in frames}) == 11

    def test_deterministic_bytes(self):
        spec = generate_scene(4)
        a = render_frame(spec, 0, variant("Nn+I+E"), 32, 32)
        b = render_frame(spec, 0, variant("Nn+I+E"), 32, 32)
        assert a.rgb.tobytes() == b.rgb.tobytes() and a.depth.tobytes() == b.depth.tobytes()

    def test_ambient_only_is_flat_per_surface(self):
        spec = mirror_scene()
        f = render_frame(spec, 0, variant("E"), 64, 64)
        albedos = {tuple(a) for a in spec.wall_albedo} | {p.albedo for p in spec.primitives}
        colours = {tuple(c) for c in f.rgb.reshape(-1, 3)}
        assert len(colours) <= len(albedos)

    def test_mirror_scene_is_symmetric(self):
        f = render_frame(mirror_scene(), 0, variant("E"), 96, 128)
        assert np.array_equal(f.rgb, f.rgb[:, ::-1]) and np.array_equal(f.depth, f.depth[:, ::-1])

    def test_bad_resolution_and_camera(self):
        spec = generate_scene(0)
        with pytest.raises(RenderError):
            render_frame(spec, 0, variant("E"), 30, 32)
        outside = replace(spec, viewpoints=[Viewpoint((-1.0, 1.0, 1.0))])
        with pytest.raises(RenderError):
            render_frame(outside, 0, variant("E"), 32, 32)


@pytest.fixture(scope="module")
def frame():
    return render_frame(generate_scene(2), 0, variant("M+I"), 96, 128)


class TestAugment:
    def test_deterministic(self, frame):
        a, b = augment(frame, 11), augment(frame, 11)
        assert a.rgb.tobytes() == b.rgb.tobytes() and a.depth.tobytes() == b.depth.tobytes()
        assert a.rgb.shape == (64, 96, 3) and a.depth.shape == (64, 96)

    def test_photometric_leaves_depth(self, frame):
        p = draw_params(frame, 3, AugmentConfig())
        plain = replace(p, gamma=1.0, brightness=1.0, contrast=1.0)
        a = apply_augment(frame, p, 64, 96)
        b = apply_augment(frame, plain, 64, 96)
        assert a.depth.tobytes() == b.depth.tobytes()
        assert a.rgb.tobytes() != b.rgb.tobytes()

    def test_flip_mirrors_depth(self, frame):
        p = replace(draw_params(frame, 5, AugmentConfig()), flip=False)
        a = apply_augment(frame, p, 64, 96)
        b = apply_augment(frame, replace(p, flip=True), 64, 96)
        np.testing.assert_array_equal(b.depth, a.depth[:, ::-1])

    def test_rotation_uses_nearest_depth(self, frame):
        p = replace(draw_params(frame, 7, AugmentConfig()), angle_deg=2.0)
        out = apply_augment(frame, p, 64, 96)
        values = set(np.unique(frame.depth)) | {np.float32(0)}
        assert set(np.unique(out.depth)) <= values

    def test_parameter_ranges(self, frame):
        cfg = AugmentConfig()
        for seed in range(50):
            p = draw_params(frame, seed, cfg)
            assert -2.5 <= p.angle_deg <= 2.5 and 0.9 <= p.gamma <= 1.1
            assert 0.75 <= p.brightness <= 1.25 and 0.9 <= p.contrast <= 1.1
            assert 0 <= p.top <= 32 and 0 <= p.left <= 32

    def test_crop_too_large(self, frame):
        with pytest.raises(ValueError):
            augment(frame, 0, AugmentConfig(crop_h=128, crop_w=128))


def test_dataset_manifest(tmp_path):
    cfg = GeneratorConfig(scenes=2, viewpoints=2, height=32, width=32, seed=1)
    manifest = generate_dataset(cfg, tmp_path / "a")
    records = read_manifest(manifest)
    assert len(records) == 11 * 2 * 2
    splits = {}
    for r in records:
        splits.setdefault(r.scene_id, set()).add(r.split)
    assert all(len(s) == 1 for s in splits.values())
    assert {next(iter(s)) for s in splits.values()} == {"train", "test"}
    by_view = {}
    for r in records:
        by_view.setdefault((r.scene_id, r.viewpoint_id), []).append(load_frame(r, tmp_path / "a").depth.tobytes())
    assert all(len(set(v)) == 1 and len(v) == 11 for v in by_view.values())
    # regeneration is byte-identical
    generate_dataset(cfg, tmp_path / "b")
    for r in records:
        assert (tmp_path / "a" / r.rgb_path).read_bytes() == (tmp_path / "b" / r.rgb_path).read_bytes()
    assert manifest.read_text() == (tmp_path / "b" / "manifest.csv").read_text()
