"""Chamfer-distance shape retrieval against a canonicalized asset library.

Queries and assets are both moved to the canonical frame (AABB centered,
longest side 1) before sampling, so retrieval compares shape only; position
and per-axis size come from the layout slot when the scene is assembled.
"""
from __future__ import annotations

import warnings
from dataclasses import dataclass
from pathlib import Path

import numpy as np
from scipy.spatial import cKDTree

from .data.assets import ASSET_MANIFEST, read_asset_manifest
from .geometry import (
    GeometryError, Mesh, Scene, SceneObject, SlotTransform, canonicalize, nearest_sq_dists, read_obj, sample_surface,
)

SAMPLES = 1024
SAMPLE_SEED = 0


class RetrievalError(ValueError):
    pass


class LibraryWarning(UserWarning):
    pass


@dataclass(frozen=True)
class Asset:
    id: str
    category: str
    mesh: Mesh          # canonical frame
    extent: np.ndarray  # canonical AABB extent, longest component 1
    samples: np.ndarray


def canonical_samples(mesh: Mesh, n: int = SAMPLES, seed=SAMPLE_SEED) -> tuple[Mesh, np.ndarray, np.ndarray]:
    can, extent = canonicalize(mesh)
    return can, extent, sample_surface(can, n, seed)


class AssetLibrary:
    """Immutable, id-sorted set of canonical assets with cached samples."""

    def __init__(self, assets):
        assets = sorted(assets, key=lambda a: a.id)
        ids = [a.id for a in assets]
        if not assets:
            raise RetrievalError("asset library is empty")
        if len(set(ids)) != len(ids):
            raise RetrievalError("asset ids must be unique")
        self.assets: tuple[Asset, ...] = tuple(assets)
        self._by_id = {a.id: a for a in assets}
        self._trees: dict[str, cKDTree] = {}

    def __len__(self) -> int:
        return len(self.assets)

    def __getitem__(self, asset_id: str) -> Asset:
        return self._by_id[asset_id]

    @property
    def ids(self) -> list[str]:
        return [a.id for a in self.assets]

    def tree(self, asset_id: str) -> cKDTree:
        if asset_id not in self._trees:
            self._trees[asset_id] = cKDTree(self._by_id[asset_id].samples)
        return self._trees[asset_id]

    @classmethod
    def from_meshes(cls, items, n_samples: int = SAMPLES) -> "AssetLibrary":
        out = []
        for aid, cat, mesh in items:
            can, extent, pts = canonical_samples(mesh, n_samples)
            out.append(Asset(aid, cat, can, extent, pts))
        return cls(out)


def build_library(asset_dir, n_samples: int = SAMPLES) -> AssetLibrary:
    """Load every manifest-listed OBJ. Unlisted files and meshes that fail to
    load or canonicalize are skipped with a warning naming them."""
    root = Path(asset_dir)
    if not (root / ASSET_MANIFEST).exists():
        raise RetrievalError(f"no {ASSET_MANIFEST} in {root}")
    rows = read_asset_manifest(root)
    listed = {(root / rel).resolve() for _, _, rel in rows}
    for p in sorted(root.rglob("*.obj")):
        if p.resolve() not in listed:
            warnings.warn(f"skipping {p.relative_to(root)}: no manifest entry", LibraryWarning, stacklevel=2)
    assets = []
    for aid, cat, rel in rows:
        try:
            can, extent, pts = canonical_samples(read_obj(root / rel), n_samples)
        except (OSError, ValueError) as e:
            warnings.warn(f"skipping asset {aid} ({rel}): {e}", LibraryWarning, stacklevel=2)
            continue
        assets.append(Asset(aid, cat, can, extent, pts))
    if not assets:
        raise RetrievalError(f"no usable assets in {root}")
    return AssetLibrary(assets)


def query_samples(shape: Mesh, n: int = SAMPLES) -> np.ndarray:
    if not shape.face_areas().sum() > 0:
        raise RetrievalError("query shape has zero surface area")
    try:
        return canonical_samples(shape, n)[2]
    except GeometryError as e:
        raise RetrievalError(str(e)) from None


def distances(shape: Mesh, library: AssetLibrary, category: str | None = None) -> tuple[list[str], np.ndarray]:
    """Chamfer distance from the canonical query to each (eligible) asset."""
    q = query_samples(shape, len(library.assets[0].samples))
    qtree = cKDTree(q)
    ids, out = [], []
    for a in library.assets:
        if category is not None and a.category != category:
            continue
        d = nearest_sq_dists(q, a.samples, library.tree(a.id)).mean() \
            + nearest_sq_dists(a.samples, q, qtree).mean()
        ids.append(a.id)
        out.append(float(d))
    if not ids:
        raise RetrievalError(f"no assets of category {category!r}")
    return ids, np.array(out)


def retrieve(shape: Mesh, library: AssetLibrary, category: str | None = None) -> str:
    return retrieve_with_distance(shape, library, category)[0]


def retrieve_with_distance(shape: Mesh, library: AssetLibrary, category: str | None = None) -> tuple[str, float]:
    ids, d = distances(shape, library, category)
    best = d.min()
    # ids are sorted, so the first minimum is the lexicographically smallest
    k = int(np.flatnonzero(d == best)[0])
    return ids[k], float(best)


def place_asset(asset: Asset, center, half_extent) -> Mesh:
    """Stretch the canonical asset so its AABB is the slot box."""
    center = np.asarray(center, dtype=np.float64)
    half = np.asarray(half_extent, dtype=np.float64)
    factor = np.where(asset.extent > 0, 2.0 * half / np.where(asset.extent > 0, asset.extent, 1.0), 0.0)
    v = asset.mesh.vertices * factor
    box_lo, box_hi = v.min(axis=0), v.max(axis=0)
    v = v + (center - 0.5 * (box_lo + box_hi))  # exact recentering after the stretch
    return Mesh(v, asset.mesh.faces)


def assemble_scene(shapes, centers, half_extents, library: AssetLibrary, scene_id: str = "generated",
                   scene_type: str = "generated", category: list | None = None) -> Scene:
    """Retrieve an asset for each related shape and place it in its slot."""
    shapes = list(shapes)
    centers = np.asarray(centers, dtype=np.float64).reshape(-1, 3)
    half_extents = np.asarray(half_extents, dtype=np.float64).reshape(-1, 3)
    if not (len(shapes) == len(centers) == len(half_extents)):
        raise RetrievalError(f"{len(shapes)} shapes but {len(centers)} slots")
    objects = []
    for k, shape in enumerate(shapes):
        aid = retrieve(shape, library, None if category is None else category[k])
        asset = library[aid]
        mesh = place_asset(asset, centers[k], half_extents[k])
        objects.append(SceneObject(asset.category, SlotTransform(centers[k], half_extents[k]), mesh, aid))
    return Scene(scene_id, scene_type, tuple(objects), normalized=True)


class ChamferRetriever:
    """Estimator wrapper: ``fit`` builds the library, ``predict`` retrieves ids."""

    def __init__(self, n_samples: int = SAMPLES, category_filter: bool = False):
        self.n_samples = n_samples
        self.category_filter = category_filter

    def get_params(self, deep: bool = True) -> dict:
        return {"n_samples": self.n_samples, "category_filter": self.category_filter}

    def set_params(self, **params):
        for k, v in params.items():
            if k not in self.get_params():
                raise ValueError(f"unknown parameter {k!r}")
            setattr(self, k, v)
        return self

    def fit(self, assets, y=None):
        if isinstance(assets, (str, Path)):
            self.library_ = build_library(assets, self.n_samples)
        else:
            self.library_ = AssetLibrary.from_meshes(assets, self.n_samples)
        return self

    def _check(self):
        if not hasattr(self, "library_"):
            raise RetrievalError("ChamferRetriever is not fitted")

    def predict(self, shapes, categories=None) -> list[str]:
        self._check()
        if self.category_filter and categories is None:
            raise RetrievalError("category_filter needs categories")
        cats = categories if self.category_filter else [None] * len(shapes)
        return [retrieve(s, self.library_, c) for s, c in zip(shapes, cats)]

    def transform(self, shapes) -> np.ndarray:
        """Distance of each shape to every asset, shape (n_shapes, n_assets)."""
        self._check()
        if not len(shapes):
            return np.zeros((0, len(self.library_)))
        return np.stack([distances(s, self.library_)[1] for s in shapes])
