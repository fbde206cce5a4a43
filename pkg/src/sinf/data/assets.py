"""Asset directories: OBJ meshes plus a tab-separated manifest.

Manifest ``assets.tsv``, one asset per line::

    <asset id>\t<category>\t<OBJ path relative to the directory>
"""
from __future__ import annotations

from pathlib import Path

from ..geometry import Mesh, write_obj
from .scenes import read_manifest, write_manifest

ASSET_MANIFEST = "assets.tsv"


def write_asset_library(root, assets: list[tuple[str, str, Mesh]]) -> Path:
    """Write ``(id, category, mesh)`` triples as OBJ files and a manifest."""
    root = Path(root)
    (root / "meshes").mkdir(parents=True, exist_ok=True)
    rows = []
    for aid, cat, mesh in sorted(assets, key=lambda a: a[0]):
        rel = f"meshes/{aid}.obj"
        write_obj(mesh, root / rel)
        rows.append((aid, cat, rel))
    write_manifest(rows, root / ASSET_MANIFEST)
    return root


def read_asset_manifest(root) -> list[tuple[str, str, str]]:
    return read_manifest(Path(root) / ASSET_MANIFEST, n_fields=3)
