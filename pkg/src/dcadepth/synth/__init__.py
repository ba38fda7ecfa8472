from .augment import AugmentConfig, augment
from .dataset import GeneratorConfig, ManifestRecord, generate_dataset, load_frame, read_manifest
from .imageio import read_pfm, read_ppm, write_pfm, write_ppm
from .lighting import IlluminationVariant, illumination_set
from .render import Frame, render_frame
from .scene import SceneConfig, SceneSpec, generate_scene, mirror_scene

__all__ = [
    "AugmentConfig",
    "Frame",
    "GeneratorConfig",
    "IlluminationVariant",
    "ManifestRecord",
    "SceneConfig",
    "SceneSpec",
    "augment",
    "generate_dataset",
    "generate_scene",
    "illumination_set",
    "mirror_scene",
    "load_frame",
    "read_manifest",
    "read_pfm",
    "read_ppm",
    "render_frame",
    "write_pfm",
    "write_ppm",
]
