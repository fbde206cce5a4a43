"""Meshes, scenes and the geometric kernels shared by the pipeline.

Conventions: y is up; scenes live in the cube [-0.5, 0.5]^3 once normalized;
triangles are counter-clockwise when seen from outside.
"""
from __future__ import annotations

import logging
import math
from dataclasses import dataclass, field, replace
from pathlib import Path
from typing import Sequence

import numpy as np
from scipy.spatial import cKDTree

logger = logging.getLogger(__name__)

MAX_SUBDIVISIONS = 5
BRUTE_FORCE_LIMIT = 10_000


class GeometryError(ValueError):
    """Invalid geometric input (degenerate mesh, empty point set, bad transform)."""


@dataclass(frozen=True)
class Mesh:
    vertices: np.ndarray
    faces: np.ndarray
    normals: np.ndarray | None = None

    def __post_init__(self):
        v = np.asarray(self.vertices, dtype=np.float64).reshape(-1, 3)
        f = np.asarray(self.faces, dtype=np.int64).reshape(-1, 3)
        object.__setattr__(self, "vertices", v)
        object.__setattr__(self, "faces", f)
        if f.size:
            if f.min() < 0 or f.max() >= len(v):
                raise GeometryError(f"face index out of range for {len(v)} vertices")
            if np.any((f[:, 0] == f[:, 1]) | (f[:, 1] == f[:, 2]) | (f[:, 0] == f[:, 2])):
                raise GeometryError("degenerate face with repeated vertex index")

    @property
    def n_vertices(self) -> int:
        return len(self.vertices)

    @property
    def n_faces(self) -> int:
        return len(self.faces)

    def with_vertices(self, vertices: np.ndarray) -> "Mesh":
        return Mesh(vertices, self.faces)

    def aabb(self) -> "AABB":
        return AABB(self.vertices.min(axis=0), self.vertices.max(axis=0))

    def edges(self) -> np.ndarray:
        e = np.concatenate([self.faces[:, [0, 1]], self.faces[:, [1, 2]], self.faces[:, [2, 0]]])
        return np.unique(np.sort(e, axis=1), axis=0)

    def face_areas(self) -> np.ndarray:
        return 0.5 * np.linalg.norm(_face_cross(self.vertices, self.faces), axis=1)

    def surface_area(self) -> float:
        return float(self.face_areas().sum())

    def vertex_normals(self) -> np.ndarray:
        """Area-weighted unit vertex normals."""
        fn = _face_cross(self.vertices, self.faces)
        acc = np.zeros_like(self.vertices)
        for k in range(3):
            np.add.at(acc, self.faces[:, k], fn)
        norm = np.linalg.norm(acc, axis=1, keepdims=True)
        return np.divide(acc, norm, out=np.zeros_like(acc), where=norm > 0)

    def __eq__(self, other):
        if not isinstance(other, Mesh):
            return NotImplemented
        return np.array_equal(self.vertices, other.vertices) and np.array_equal(self.faces, other.faces)

    __hash__ = None


def _face_cross(v: np.ndarray, f: np.ndarray) -> np.ndarray:
    a, b, c = v[f[:, 0]], v[f[:, 1]], v[f[:, 2]]
    return np.cross(b - a, c - a)


@dataclass(frozen=True)
class SlotTransform:
    """Placement of a unit template: v' = center + scale * v."""

    center: np.ndarray
    scale: np.ndarray

    def __post_init__(self):
        c = np.asarray(self.center, dtype=np.float64).reshape(3)
        s = np.asarray(self.scale, dtype=np.float64).reshape(3)
        object.__setattr__(self, "center", c)
        object.__setattr__(self, "scale", s)

    def validate(self) -> None:
        if not np.all(self.scale > 0):
            raise GeometryError(f"slot scale must be positive, got {self.scale.tolist()}")

    def aabb(self) -> "AABB":
        return AABB(self.center - self.scale, self.center + self.scale)

    def __eq__(self, other):
        if not isinstance(other, SlotTransform):
            return NotImplemented
        return np.array_equal(self.center, other.center) and np.array_equal(self.scale, other.scale)

    __hash__ = None


@dataclass(frozen=True)
class AABB:
    lo: np.ndarray
    hi: np.ndarray

    def __post_init__(self):
        lo = np.asarray(self.lo, dtype=np.float64).reshape(3)
        hi = np.asarray(self.hi, dtype=np.float64).reshape(3)
        if np.any(lo > hi):
            raise GeometryError(f"AABB min {lo.tolist()} exceeds max {hi.tolist()}")
        object.__setattr__(self, "lo", lo)
        object.__setattr__(self, "hi", hi)

    @property
    def extent(self) -> np.ndarray:
        return self.hi - self.lo

    @property
    def center(self) -> np.ndarray:
        return 0.5 * (self.lo + self.hi)

    def volume(self) -> float:
        return float(np.prod(self.extent))


# --- template spheres ------------------------------------------------------

_PHI = (1.0 + math.sqrt(5.0)) / 2.0
_ICO_VERTICES = np.array([
    [-1, _PHI, 0], [1, _PHI, 0], [-1, -_PHI, 0], [1, -_PHI, 0],
    [0, -1, _PHI], [0, 1, _PHI], [0, -1, -_PHI], [0, 1, -_PHI],
    [_PHI, 0, -1], [_PHI, 0, 1], [-_PHI, 0, -1], [-_PHI, 0, 1],
], dtype=np.float64)
_ICO_FACES = np.array([
    [0, 11, 5], [0, 5, 1], [0, 1, 7], [0, 7, 10], [0, 10, 11],
    [1, 5, 9], [5, 11, 4], [11, 10, 2], [10, 7, 6], [7, 1, 8],
    [3, 9, 4], [3, 4, 2], [3, 2, 6], [3, 6, 8], [3, 8, 9],
    [4, 9, 5], [2, 4, 11], [6, 2, 10], [8, 6, 7], [9, 8, 1],
], dtype=np.int64)


def icosphere(subdivisions: int = 2) -> Mesh:
    """Unit icosphere; each level splits every triangle into four."""
    if subdivisions < 0 or subdivisions > MAX_SUBDIVISIONS:
        raise GeometryError(f"subdivisions must be in [0, {MAX_SUBDIVISIONS}], got {subdivisions}")
    verts = [v / np.linalg.norm(v) for v in _ICO_VERTICES]
    faces = _ICO_FACES.tolist()
    for _ in range(subdivisions):
        cache: dict[tuple[int, int], int] = {}

        def midpoint(i: int, j: int) -> int:
            key = (i, j) if i < j else (j, i)
            if key not in cache:
                m = verts[i] + verts[j]
                verts.append(m / np.linalg.norm(m))
                cache[key] = len(verts) - 1
            return cache[key]

        new_faces = []
        for a, b, c in faces:
            ab, bc, ca = midpoint(a, b), midpoint(b, c), midpoint(c, a)
            new_faces += [[a, ab, ca], [b, bc, ab], [c, ca, bc], [ab, bc, ca]]
        faces = new_faces
    return Mesh(np.array(verts), np.array(faces, dtype=np.int64))


def apply_slot(mesh: Mesh, t: SlotTransform) -> Mesh:
    t.validate()
    return Mesh(t.center + t.scale * mesh.vertices, mesh.faces)


# --- distances and overlaps -----------------------------------------------

def nearest_sq_dists(P: np.ndarray, Q: np.ndarray, tree: cKDTree | None = None) -> np.ndarray:
    """For each p in P, the squared distance to its nearest q in Q (exact).

    Brute force up to ``BRUTE_FORCE_LIMIT`` points per side, a k-d tree
    beyond that (or whenever a prebuilt ``tree`` over Q is passed). The tree
    only picks the neighbor; the squared distance is recomputed directly so
    both paths return identical values.
    """
    P = np.asarray(P, dtype=np.float64).reshape(-1, 3)
    Q = np.asarray(Q, dtype=np.float64).reshape(-1, 3)
    if tree is None and max(len(P), len(Q)) <= BRUTE_FORCE_LIMIT:
        out = np.empty(len(P))
        step = max(1, 2_000_000 // max(1, len(Q)))
        for s in range(0, len(P), step):
            d = P[s:s + step, None, :] - Q[None, :, :]
            out[s:s + step] = np.min(np.einsum("ijk,ijk->ij", d, d), axis=1)
        return out
    tree = tree if tree is not None else cKDTree(Q)
    _, idx = tree.query(P)
    d = P - Q[idx]
    return np.einsum("ij,ij->i", d, d)


def chamfer(P: np.ndarray, Q: np.ndarray) -> float:
    """Symmetric Chamfer distance with squared distances and mean aggregation."""
    P = np.asarray(P, dtype=np.float64).reshape(-1, 3)
    Q = np.asarray(Q, dtype=np.float64).reshape(-1, 3)
    if len(P) == 0 or len(Q) == 0:
        raise GeometryError("chamfer requires two nonempty point sets")
    return float(nearest_sq_dists(P, Q).mean() + nearest_sq_dists(Q, P).mean())


def iou3d(a: AABB, b: AABB) -> float:
    """Volume IoU of two axis-aligned boxes."""
    if np.array_equal(a.lo, b.lo) and np.array_equal(a.hi, b.hi):
        return 1.0
    va, vb = a.volume(), b.volume()
    if va <= 0 or vb <= 0:
        return 0.0
    overlap = np.clip(np.minimum(a.hi, b.hi) - np.maximum(a.lo, b.lo), 0.0, None)
    inter = float(np.prod(overlap))
    return inter / (va + vb - inter)


def sample_surface(mesh: Mesh, n: int, seed) -> np.ndarray:
    """n points uniformly distributed over the surface (area-weighted)."""
    if n < 1:
        raise GeometryError(f"sample count must be >= 1, got {n}")
    if mesh.n_faces == 0:
        raise GeometryError("cannot sample an empty mesh")
    areas = mesh.face_areas()
    total = areas.sum()
    if not total > 0:
        raise GeometryError("cannot sample a mesh with zero surface area")
    rng = np.random.default_rng(seed)
    cdf = np.cumsum(areas) / total
    tri = np.minimum(np.searchsorted(cdf, rng.random(n), side="right"), len(areas) - 1)
    r1 = np.sqrt(rng.random(n))
    r2 = rng.random(n)
    f = mesh.faces[tri]
    a, b, c = mesh.vertices[f[:, 0]], mesh.vertices[f[:, 1]], mesh.vertices[f[:, 2]]
    return ((1 - r1)[:, None] * a + (r1 * (1 - r2))[:, None] * b + (r1 * r2)[:, None] * c)


def canonicalize(mesh: Mesh) -> tuple[Mesh, np.ndarray]:
    """Center the AABB at the origin and scale uniformly so the longest side is 1.

    Returns the canonical mesh and its AABB extent.
    """
    box = mesh.aabb()
    longest = float(box.extent.max())
    if not longest > 0:
        raise GeometryError("cannot canonicalize a mesh with zero extent")
    v = (mesh.vertices - box.center) / longest
    return Mesh(v, mesh.faces), box.extent / longest


# --- scenes ----------------------------------------------------------------

@dataclass(frozen=True)
class SceneObject:
    category: str
    transform: SlotTransform
    mesh: Mesh
    asset_id: str | None = None

    @classmethod
    def from_mesh(cls, category: str, mesh: Mesh, asset_id: str | None = None) -> "SceneObject":
        box = mesh.aabb()
        return cls(category, SlotTransform(box.center, 0.5 * box.extent), mesh, asset_id)

    def aabb(self) -> AABB:
        return self.mesh.aabb()


@dataclass(frozen=True)
class Scene:
    """An ordered set of placed objects (the scene record)."""

    id: str
    scene_type: str
    objects: tuple[SceneObject, ...] = field(default_factory=tuple)
    normalized: bool = False

    def __post_init__(self):
        object.__setattr__(self, "objects", tuple(self.objects))

    def __len__(self) -> int:
        return len(self.objects)

    def categories(self) -> list[str]:
        return [o.category for o in self.objects]

    def aabb(self) -> AABB:
        if not self.objects:
            raise GeometryError(f"scene {self.id!r} has no objects")
        lo = np.min([o.mesh.vertices.min(axis=0) for o in self.objects], axis=0)
        hi = np.max([o.mesh.vertices.max(axis=0) for o in self.objects], axis=0)
        return AABB(lo, hi)

    def boxes(self) -> list[AABB]:
        return [o.aabb() for o in self.objects]


def transform_scene(scene: Scene, offset: np.ndarray, factor: float) -> Scene:
    """Apply v' = (v + offset) * factor to every object."""
    objs = []
    for o in scene.objects:
        mesh = o.mesh.with_vertices((o.mesh.vertices + offset) * factor)
        t = SlotTransform((o.transform.center + offset) * factor, o.transform.scale * factor)
        objs.append(replace(o, transform=t, mesh=mesh))
    return replace(scene, objects=tuple(objs))


def normalize_scene(scene: Scene) -> Scene:
    """Uniformly scale and translate so the scene AABB is centered and its
    longest axis spans exactly [-0.5, 0.5]."""
    box = scene.aabb()
    longest = float(box.extent.max())
    if not longest > 0:
        raise GeometryError(f"scene {scene.id!r} has zero extent")
    out = transform_scene(scene, -box.center, 1.0 / longest)
    return replace(out, normalized=True)


# --- OBJ -------------------------------------------------------------------

def read_obj(path: str | Path) -> Mesh:
    """Read ``v`` and ``f`` records; everything else is ignored.

    Face entries may use the ``v/vt/vn`` form; polygons are fan-triangulated.
    """
    verts, faces = [], []
    with open(path, "r", encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, 1):
            parts = line.split()
            if not parts:
                continue
            if parts[0] == "v":
                if len(parts) < 4:
                    raise GeometryError(f"{path}:{lineno}: vertex needs three coordinates")
                verts.append([float(x) for x in parts[1:4]])
            elif parts[0] == "f":
                idx = []
                for tok in parts[1:]:
                    i = int(tok.split("/")[0])
                    idx.append(i - 1 if i > 0 else len(verts) + i)
                if len(idx) < 3:
                    raise GeometryError(f"{path}:{lineno}: face needs at least three vertices")
                for k in range(1, len(idx) - 1):
                    faces.append([idx[0], idx[k], idx[k + 1]])
    return Mesh(np.array(verts, dtype=np.float64).reshape(-1, 3), np.array(faces, dtype=np.int64).reshape(-1, 3))


def write_obj(mesh: Mesh, path: str | Path) -> None:
    lines = [f"v {x!r} {y!r} {z!r}" for x, y, z in mesh.vertices.tolist()]
    lines += [f"f {a + 1} {b + 1} {c + 1}" for a, b, c in mesh.faces.tolist()]
    Path(path).write_text("\n".join(lines) + "\n", encoding="utf-8")


# --- occupancy -------------------------------------------------------------

def winding_number(points: np.ndarray, mesh: Mesh, chunk: int = 4096) -> np.ndarray:
    """Generalized winding number of a closed mesh at each point."""
    pts = np.asarray(points, dtype=np.float64).reshape(-1, 3)
    tri = mesh.vertices[mesh.faces]
    out = np.empty(len(pts))
    for s in range(0, len(pts), chunk):
        p = pts[s:s + chunk, None, None, :]
        d = tri[None] - p
        a, b, c = d[..., 0, :], d[..., 1, :], d[..., 2, :]
        la, lb, lc = (np.linalg.norm(x, axis=-1) for x in (a, b, c))
        det = np.einsum("...i,...i->...", a, np.cross(b, c))
        den = (la * lb * lc + np.einsum("...i,...i->...", a, b) * lc
               + np.einsum("...i,...i->...", b, c) * la + np.einsum("...i,...i->...", c, a) * lb)
        out[s:s + chunk] = np.sum(2.0 * np.arctan2(det, den), axis=-1) / (4.0 * math.pi)
    return out


def voxelize(scene: Scene, resolution: int = 32, supersample: int = 2) -> np.ndarray:
    """Fractional occupancy grid of shape (R, R, R) over [-0.5, 0.5]^3 (x, y, z order)."""
    r, s = resolution, supersample
    fine = r * s
    axis = -0.5 + (np.arange(fine) + 0.5) / fine
    occ = np.zeros((fine, fine, fine), dtype=bool)
    for o in scene.objects:
        box = o.aabb()
        lo = np.clip(np.floor((box.lo + 0.5) * fine - 0.5).astype(int), 0, fine - 1)
        hi = np.clip(np.ceil((box.hi + 0.5) * fine - 0.5).astype(int), 0, fine - 1)
        ix, iy, iz = (np.arange(lo[k], hi[k] + 1) for k in range(3))
        gx, gy, gz = np.meshgrid(axis[ix], axis[iy], axis[iz], indexing="ij")
        pts = np.stack([gx, gy, gz], axis=-1).reshape(-1, 3)
        inside = (winding_number(pts, o.mesh) > 0.5).reshape(gx.shape)
        occ[np.ix_(ix, iy, iz)] |= inside
    return occ.reshape(r, s, r, s, r, s).mean(axis=(1, 3, 5))


def boxes_overlap(a: AABB, b: AABB) -> bool:
    return bool(np.all(np.minimum(a.hi, b.hi) > np.maximum(a.lo, b.lo)))


def meshes_points(meshes: Sequence[Mesh]) -> np.ndarray:
    return np.concatenate([m.vertices for m in meshes]) if meshes else np.zeros((0, 3))
