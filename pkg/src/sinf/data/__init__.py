"""Scene files, manifests, the toy corpus generator, images and checkpoints."""
from .checkpoint import Checkpoint, CheckpointError, load_checkpoint, save_checkpoint
from .images import ImageFormatError, read_image, write_image
from .scenes import (
    SceneFormatError,
    load_scene,
    load_scene_dir,
    load_split,
    read_manifest,
    save_scene,
    scenes_equal,
    write_manifest,
)
from .synth import SynthConfig, SynthError, library_assets, recover_style, synth_dataset, synth_scene

__all__ = [
    "Checkpoint", "CheckpointError", "ImageFormatError", "SceneFormatError", "SynthConfig", "SynthError",
    "library_assets", "load_checkpoint", "load_scene", "load_scene_dir", "load_split", "read_image",
    "read_manifest", "recover_style", "save_checkpoint", "save_scene", "scenes_equal", "synth_dataset",
    "synth_scene", "write_image", "write_manifest",
]
