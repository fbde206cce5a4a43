"""Procedural toy corpus: archetype rooms of tapered-box furniture.

Every object is a box whose top face is shrunk by a taper ratio
t = a_c + b_c * s, where s in [0, 1] is one style scalar shared by every
object of a scene and (a_c, b_c) depend on the category. Some categories get
narrower with s and some wider, so a consistent scene style is a joint
pattern across categories. Proportions otherwise do not depend on s.
"""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from ..geometry import Mesh, Scene, SceneObject, canonicalize, normalize_scene

# category -> (width x, height y, depth z) in meters
DIMENSIONS = {
    "bed": (1.6, 0.5, 2.0),
    "nightstand": (0.5, 0.55, 0.45),
    "wardrobe": (1.2, 2.0, 0.6),
    "desk": (1.2, 0.75, 0.6),
    "chair": (0.45, 0.9, 0.5),
    "sofa": (2.0, 0.8, 0.9),
    "coffee_table": (1.0, 0.45, 0.6),
    "tv_stand": (1.6, 0.5, 0.45),
    "armchair": (0.8, 0.8, 0.8),
    "bookshelf": (0.9, 1.8, 0.35),
    "dining_table": (1.6, 0.75, 0.9),
    "sideboard": (1.5, 0.85, 0.45),
}

# category -> (a, b) with taper ratio t = a + b * s
TAPER = {
    "bed": (1.0, -0.5),
    "nightstand": (0.5, 0.5),
    "wardrobe": (1.0, -0.4),
    "desk": (0.6, 0.4),
    "chair": (1.0, -0.5),
    "sofa": (0.55, 0.45),
    "coffee_table": (1.0, -0.5),
    "tv_stand": (0.5, 0.5),
    "armchair": (1.0, -0.45),
    "bookshelf": (0.6, 0.4),
    "dining_table": (0.5, 0.5),
    "sideboard": (1.0, -0.5),
}

CATEGORIES = tuple(sorted(DIMENSIONS))
WALL_GAP = 0.05
MIN_GAP = 0.01


class SynthError(ValueError):
    pass


def taper_ratio_for(category: str, s: float) -> float:
    a, b = TAPER[category]
    return a + b * s


def tapered_box(width: float, height: float, depth: float, taper: float,
                center_xz=(0.0, 0.0)) -> Mesh:
    """Box on the floor (y in [0, height]) whose top face is scaled by ``taper``."""
    if min(width, height, depth) <= 0 or taper <= 0:
        raise SynthError("tapered box needs positive dimensions and taper")
    cx, cz = center_xz
    hx, hz = width / 2, depth / 2
    tx, tz = taper * hx, taper * hz
    v = np.array([
        [cx - hx, 0, cz - hz], [cx + hx, 0, cz - hz], [cx + hx, 0, cz + hz], [cx - hx, 0, cz + hz],
        [cx - tx, height, cz - tz], [cx + tx, height, cz - tz], [cx + tx, height, cz + tz],
        [cx - tx, height, cz + tz],
    ], dtype=np.float64)
    f = np.array([
        [0, 1, 2], [0, 2, 3],        # bottom (normal -y)
        [4, 6, 5], [4, 7, 6],        # top (+y)
        [0, 4, 5], [0, 5, 1],        # -z side
        [1, 5, 6], [1, 6, 2],        # +x side
        [2, 6, 7], [2, 7, 3],        # +z side
        [3, 7, 4], [3, 4, 0],        # -x side
    ])
    return Mesh(v, f)


def measured_taper(mesh: Mesh) -> float:
    """Top-to-bottom x-extent ratio of a floor-standing tapered box."""
    v = mesh.vertices
    y = v[:, 1]
    top = v[np.isclose(y, y.max(), rtol=0, atol=1e-12 * max(1.0, abs(y.max())))]
    bottom = v[np.isclose(y, y.min(), rtol=0, atol=1e-12 * max(1.0, abs(y.min())))]
    wb = np.ptp(bottom[:, 0])
    if wb <= 0:
        raise SynthError("mesh has a degenerate bottom face")
    return float(np.ptp(top[:, 0]) / wb)


def recover_style(category: str, mesh: Mesh) -> float:
    """Invert the category's taper map from the mesh proportions."""
    if category not in TAPER:
        raise SynthError(f"unknown category {category!r}")
    a, b = TAPER[category]
    return (measured_taper(mesh) - a) / b


# --- archetype placement rules -------------------------------------------

@dataclass
class _Room:
    width: float
    depth: float
    rng: np.random.Generator
    placed: list = field(default_factory=list)  # (category, xmin, xmax, zmin, zmax)

    def x_range(self, w):
        return -self.width / 2 + w / 2 + WALL_GAP, self.width / 2 - w / 2 - WALL_GAP

    def z_range(self, d):
        return -self.depth / 2 + d / 2 + WALL_GAP, self.depth / 2 - d / 2 - WALL_GAP

    def uniform(self, lo, hi):
        if hi < lo:
            return None
        return float(self.rng.uniform(lo, hi))

    def find(self, category, k=0):
        hits = [p for p in self.placed if p[0] == category]
        return hits[k] if len(hits) > k else None


def _wall(room: _Room, w, d, which):
    if which == "back":
        return room.uniform(*room.x_range(w)), room.z_range(d)[1]
    if which == "front":
        return room.uniform(*room.x_range(w)), room.z_range(d)[0]
    if which == "left":
        return room.x_range(w)[0], room.uniform(*room.z_range(d))
    return room.x_range(w)[1], room.uniform(*room.z_range(d))


def _any_wall(room, w, d):
    return _wall(room, w, d, ("back", "front", "left", "right")[room.rng.integers(4)])


def _free(room, w, d):
    return room.uniform(*room.x_range(w)), room.uniform(*room.z_range(d))


def _center(p):
    return (p[1] + p[2]) / 2, (p[3] + p[4]) / 2


def _rule_bed(room, w, d):
    lo, hi = room.x_range(w)
    return room.uniform(lo + 0.6, hi - 0.6), room.z_range(d)[1]


def _flank(side):
    def rule(room, w, d):
        bed = room.find("bed")
        if bed is None:
            return _wall(room, w, d, "back")
        x = bed[1] - 0.05 - w / 2 if side < 0 else bed[2] + 0.05 + w / 2
        return x, room.z_range(d)[1]
    return rule


def _in_front_of(anchor, gap_lo, gap_hi, toward):
    """Place next to ``anchor`` on its +z (toward=1) or -z (toward=-1) side."""
    def rule(room, w, d):
        a = room.find(anchor)
        if a is None:
            return _free(room, w, d)
        ax, _ = _center(a)
        gap = room.uniform(gap_lo, gap_hi)
        z = a[4] + gap + d / 2 if toward > 0 else a[3] - gap - d / 2
        return ax + room.uniform(-0.2, 0.2), z
    return rule


def _facing(anchor):
    def rule(room, w, d):
        a = room.find(anchor)
        if a is None:
            return _wall(room, w, d, "back")
        ax, _ = _center(a)
        return ax + room.uniform(-0.3, 0.3), room.z_range(d)[1]
    return rule


def _side_wall(k):
    return lambda room, w, d: _wall(room, w, d, ("left", "right")[k])


def _table_center(room, w, d):
    return room.uniform(-0.5, 0.5), room.uniform(-0.3, 0.3)


def _around_table(slot):
    def rule(room, w, d):
        t = room.find("dining_table")
        if t is None:
            return _free(room, w, d)
        tx, tz = _center(t)
        if slot in ("n1", "n2", "s1", "s2"):
            dx = -0.4 if slot.endswith("1") else 0.4
            z = t[4] + 0.05 + d / 2 if slot[0] == "n" else t[3] - 0.05 - d / 2
            return tx + dx, z
        x = t[1] - 0.05 - w / 2 if slot == "w" else t[2] + 0.05 + w / 2
        return x, tz
    return rule


ARCHETYPES = {
    "bedroom": [
        ("bed", _rule_bed), ("nightstand", _flank(-1)), ("nightstand", _flank(1)),
        ("wardrobe", _side_wall(0)), ("desk", lambda r, w, d: _wall(r, w, d, "front")),
        ("chair", _in_front_of("desk", 0.1, 0.2, 1)), ("bookshelf", _side_wall(1)),
        ("armchair", _free),
    ],
    "living": [
        ("sofa", lambda r, w, d: _wall(r, w, d, "front")), ("coffee_table", _in_front_of("sofa", 0.3, 0.5, 1)),
        ("tv_stand", _facing("sofa")), ("armchair", _side_wall(0)), ("armchair", _side_wall(1)),
        ("bookshelf", _any_wall), ("sideboard", _any_wall), ("chair", _free),
    ],
    "dining": [
        ("dining_table", _table_center), ("chair", _around_table("n1")), ("chair", _around_table("s1")),
        ("sideboard", _any_wall), ("chair", _around_table("n2")), ("chair", _around_table("s2")),
        ("chair", _around_table("w")), ("chair", _around_table("e")),
    ],
}


@dataclass(frozen=True)
class SynthConfig:
    archetypes: tuple = ("bedroom", "living", "dining")
    count_range: tuple = (4, 8)
    style_range: tuple = (0.0, 1.0)
    min_gap: float = MIN_GAP
    seed: int = 0
    n_train: int = 256
    n_eval: int = 64
    max_slots: int = 12
    max_attempts: int = 100

    def validate(self) -> None:
        if not self.archetypes:
            raise SynthError("archetype set is empty")
        for a in self.archetypes:
            if a not in ARCHETYPES:
                raise SynthError(f"unknown archetype {a!r}; known: {sorted(ARCHETYPES)}")
        lo, hi = self.count_range
        if not 1 <= lo <= hi <= self.max_slots:
            raise SynthError(f"count range {self.count_range} must lie within [1, {self.max_slots}]")
        for a in self.archetypes:
            if lo > len(ARCHETYPES[a]):
                raise SynthError(f"archetype {a!r} holds at most {len(ARCHETYPES[a])} objects; "
                                 f"count range {self.count_range} is infeasible")
        s0, s1 = self.style_range
        if not 0.0 <= s0 <= s1 <= 1.0:
            raise SynthError(f"style range {self.style_range} must lie within [0, 1]")
        if self.min_gap < 0:
            raise SynthError("min_gap must be nonnegative")
        if self.n_train < 0 or self.n_eval < 0:
            raise SynthError("scene counts must be nonnegative")


def _overlaps(room: _Room, xmin, xmax, zmin, zmax, gap) -> bool:
    for _, a0, a1, b0, b1 in room.placed:
        if xmin < a1 + gap and a0 < xmax + gap and zmin < b1 + gap and b0 < zmax + gap:
            return True
    return False


def _attempt(archetype: str, n: int, style: float, cfg: SynthConfig, rng) -> list | None:
    room = _Room(float(rng.uniform(4.0, 5.0)), float(rng.uniform(3.5, 4.5)), rng)
    objects = []
    for category, rule in ARCHETYPES[archetype][:n]:
        w, h, d = (x * float(rng.uniform(0.9, 1.1)) for x in DIMENSIONS[category])
        pos = rule(room, w, d)
        if pos is None or pos[0] is None or pos[1] is None:
            return None
        x, z = pos
        box = (x - w / 2, x + w / 2, z - d / 2, z + d / 2)
        inside = (box[0] >= -room.width / 2 and box[1] <= room.width / 2
                  and box[2] >= -room.depth / 2 and box[3] <= room.depth / 2)
        if not inside or _overlaps(room, *box, cfg.min_gap):
            return None
        room.placed.append((category,) + box)
        mesh = tapered_box(w, h, d, taper_ratio_for(category, style), (x, z))
        objects.append(SceneObject.from_mesh(category, mesh))
    return objects


def synth_scene(index: int, cfg: SynthConfig, prefix: str = "scene") -> tuple[Scene, float]:
    """Scene number ``index``; a pure function of (cfg, index). Returns (scene, style)."""
    rng = np.random.default_rng([cfg.seed, index])
    for _ in range(10):
        archetype = cfg.archetypes[int(rng.integers(len(cfg.archetypes)))]
        top = min(cfg.count_range[1], len(ARCHETYPES[archetype]))
        n = int(rng.integers(cfg.count_range[0], top + 1))
        style = float(rng.uniform(*cfg.style_range))
        for _ in range(cfg.max_attempts):
            objects = _attempt(archetype, n, style, cfg, rng)
            if objects is not None:
                scene = Scene(f"{prefix}_{index:05d}", archetype, tuple(objects))
                return normalize_scene(scene), style
    raise SynthError(f"could not place scene {index} after repeated redraws")


def synth_dataset(cfg: SynthConfig) -> dict[str, list[Scene]]:
    """{'train': [...], 'eval': [...]}; every scene is normalized."""
    cfg.validate()
    train = [synth_scene(i, cfg, "train")[0] for i in range(cfg.n_train)]
    evals = [synth_scene(cfg.n_train + i, cfg, "eval")[0] for i in range(cfg.n_eval)]
    return {"train": train, "eval": evals}


def scene_styles(scene: Scene) -> np.ndarray:
    return np.array([recover_style(o.category, o.mesh) for o in scene.objects])


def library_assets(levels: int = 11, categories=CATEGORIES) -> list[tuple[str, str, Mesh]]:
    """Canonical asset grid: every category at ``levels`` evenly spaced styles."""
    if levels < 1:
        raise SynthError("need at least one style level")
    out = []
    for cat in categories:
        for k in range(levels):
            s = k / (levels - 1) if levels > 1 else 0.5
            w, h, d = DIMENSIONS[cat]
            mesh, _ = canonicalize(tapered_box(w, h, d, taper_ratio_for(cat, s)))
            out.append((f"{cat}_s{k:02d}", cat, mesh))
    return out
