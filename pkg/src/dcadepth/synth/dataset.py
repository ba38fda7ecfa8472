"""Multi-illumination dataset generation and the frame manifest."""

from __future__ import annotations

import csv
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from ..config import ConfigError, load_kv
from .imageio import load_pfm, load_ppm, save_pfm, save_ppm
from .lighting import illumination_set
from .render import Frame, render_frame
from .scene import SceneConfig, generate_scene

MANIFEST_HEADER = ["scene_id", "viewpoint_id", "illumination_id", "rgb_path", "depth_path", "split"]


@dataclass
class GeneratorConfig:
    scenes: int = 4
    viewpoints: int = 2
    height: int = 96
    width: int = 128
    seed: int = 0
    split_ratio: float = 0.75

    @classmethod
    def from_kv(cls, kv: dict[str, str]) -> "GeneratorConfig":
        cfg = cls()
        if "scenes" in kv:
            cfg.scenes = int(kv["scenes"])
        if "viewpoints" in kv:
            cfg.viewpoints = int(kv["viewpoints"])
        if "resolution" in kv:
            try:
                cfg.height, cfg.width = (int(v) for v in kv["resolution"].lower().split("x"))
            except ValueError as exc:
                raise ConfigError(f"resolution must look like 96x128, got {kv['resolution']!r}") from exc
        if "seed" in kv:
            cfg.seed = int(kv["seed"])
        if "split_ratio" in kv:
            cfg.split_ratio = float(kv["split_ratio"])
        if cfg.scenes < 1 or cfg.viewpoints < 1 or not 0 < cfg.split_ratio <= 1:
            raise ConfigError(f"invalid generator config {cfg}")
        return cfg

    @classmethod
    def load(cls, path) -> "GeneratorConfig":
        return cls.from_kv(load_kv(path))


@dataclass
class ManifestRecord:
    scene_id: int
    viewpoint_id: int
    illumination_id: str
    rgb_path: str
    depth_path: str
    split: str


def scene_seed(base_seed: int, scene_id: int) -> int:
    return base_seed * 100_003 + scene_id


def split_scenes(n_scenes: int, ratio: float, seed: int) -> dict[int, str]:
    """Scene-disjoint split; keeps at least one test scene whenever there are two or more."""
    order = np.random.default_rng(seed).permutation(n_scenes)
    n_train = int(round(n_scenes * ratio))
    n_train = min(max(n_train, 1), n_scenes - 1 if n_scenes > 1 else 1)
    return {int(s): ("train" if i < n_train else "test") for i, s in enumerate(order)}


def generate_dataset(cfg: GeneratorConfig, out_dir: str | Path) -> Path:
    """Render every (scene, viewpoint, illumination) triple and write the manifest."""
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    splits = split_scenes(cfg.scenes, cfg.split_ratio, cfg.seed)
    records = []
    for s in range(cfg.scenes):
        scene = generate_scene(scene_seed(cfg.seed, s), SceneConfig(viewpoints=cfg.viewpoints))
        for v in range(len(scene.viewpoints)):
            vdir = out / f"scene_{s:03d}" / f"view_{v:02d}"
            vdir.mkdir(parents=True, exist_ok=True)
            depth_ref = None
            for illum in illumination_set():
                frame = render_frame(scene, v, illum, cfg.height, cfg.width, scene_id=s)
                if depth_ref is None:
                    depth_ref = frame.depth
                    save_pfm(vdir / "depth.pfm", frame.depth)
                elif not np.array_equal(depth_ref, frame.depth):
                    raise RuntimeError(f"depth changed with illumination in scene {s} view {v}")
                rgb_name = f"{illum.id}.ppm"
                save_ppm(vdir / rgb_name, frame.rgb)
                records.append(ManifestRecord(
                    s, v, illum.id,
                    str((vdir / rgb_name).relative_to(out)),
                    str((vdir / "depth.pfm").relative_to(out)),
                    splits[s],
                ))
    manifest = out / "manifest.csv"
    write_manifest(manifest, records)
    return manifest


def write_manifest(path: str | Path, records: list[ManifestRecord]) -> None:
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(MANIFEST_HEADER)
        for r in records:
            writer.writerow([r.scene_id, r.viewpoint_id, r.illumination_id, r.rgb_path, r.depth_path, r.split])


def read_manifest(path: str | Path) -> list[ManifestRecord]:
    with open(path, newline="") as fh:
        reader = csv.reader(fh)
        header = next(reader, None)
        if header != MANIFEST_HEADER:
            raise ValueError(f"unexpected manifest header {header}")
        return [ManifestRecord(int(r[0]), int(r[1]), r[2], r[3], r[4], r[5]) for r in reader if r]


def load_frame(record: ManifestRecord, root: str | Path) -> Frame:
    root = Path(root)
    return Frame(
        rgb=load_ppm(root / record.rgb_path),
        depth=load_pfm(root / record.depth_path),
        scene_id=record.scene_id,
        viewpoint_id=record.viewpoint_id,
        illumination_id=record.illumination_id,
    )
