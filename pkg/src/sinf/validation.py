"""Input checks shared by the estimators and the command line."""
from __future__ import annotations

import numpy as np

from .geometry import Scene

CUBE_HALF = 0.5
CUBE_TOL = 1e-9


class ValidationError(ValueError):
    pass


def scene_problems(scene: Scene, vocabulary=None) -> list[str]:
    """Every violated scene-record invariant, as readable strings (empty when valid)."""
    out = []
    if not scene.id or any(c.isspace() for c in scene.id):
        out.append(f"scene id {scene.id!r} is empty or contains whitespace")
    for k, o in enumerate(scene.objects):
        v = o.mesh.vertices
        if not np.all(np.isfinite(v)):
            out.append(f"object {k} ({o.category}) has non-finite vertices")
            continue
        if scene.normalized and v.size and (v.min() < -CUBE_HALF - CUBE_TOL or v.max() > CUBE_HALF + CUBE_TOL):
            out.append(f"object {k} ({o.category}) leaves the unit cube")
        if vocabulary is not None and o.category not in vocabulary:
            out.append(f"object {k} has unknown category {o.category!r}")
    return out


def check_scene(scene: Scene, vocabulary=None) -> Scene:
    problems = scene_problems(scene, vocabulary)
    if problems:
        raise ValidationError(f"scene {scene.id!r}: " + "; ".join(problems))
    return scene


def check_scenes(scenes, min_count: int = 1, nonempty: bool = False) -> list[Scene]:
    scenes = list(scenes)
    if len(scenes) < min_count:
        raise ValidationError(f"need at least {min_count} scene(s), got {len(scenes)}")
    for s in scenes:
        if not isinstance(s, Scene):
            raise ValidationError(f"expected Scene objects, got {type(s).__name__}")
        if nonempty and not s.objects:
            raise ValidationError(f"scene {s.id!r} has no objects")
    return scenes


def clip_box_to_cube(center, half) -> tuple[np.ndarray, np.ndarray] | None:
    """Intersection of an axis-aligned box with the unit cube, or None if it is
    empty or flat."""
    c = np.asarray(center, dtype=np.float64)
    h = np.abs(np.asarray(half, dtype=np.float64))
    lo = np.maximum(c - h, -CUBE_HALF)
    hi = np.minimum(c + h, CUBE_HALF)
    if np.any(hi - lo <= 1e-6):
        return None
    return 0.5 * (lo + hi), 0.5 * (hi - lo)
