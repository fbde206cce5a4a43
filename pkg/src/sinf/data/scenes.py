"""Scene text files and line-oriented manifests.

Scene file layout (one record per line, fields separated by single spaces,
floats written with ``float.hex`` so every bit pattern survives)::

    SINF-SCENE 1
    id <scene id>
    type <scene type>
    normalized <0|1>
    objects <n>
    object <category>
    asset <asset id>              (optional)
    center <x> <y> <z>
    scale <x> <y> <z>
    vertices <V>
    <x> <y> <z>                   (V lines)
    faces <F>
    <i> <j> <k>                   (F lines, zero-based)
    end

Identifiers may not contain whitespace.
"""
from __future__ import annotations

import os
from pathlib import Path

import numpy as np

from ..geometry import Mesh, Scene, SceneObject, SlotTransform

MAGIC = "SINF-SCENE"
VERSION = 1
SCENE_SUFFIX = ".scene"


class SceneFormatError(ValueError):
    def __init__(self, path, line: int, message: str):
        super().__init__(f"{path}:{line}: {message}")
        self.path, self.line = path, line


def _check_token(value: str, what: str) -> str:
    if not value or any(c.isspace() for c in value):
        raise ValueError(f"{what} {value!r} must be nonempty and free of whitespace")
    return value


def _hex(values) -> str:
    return " ".join(float(v).hex() for v in values)


def scene_to_text(scene: Scene) -> str:
    lines = [f"{MAGIC} {VERSION}", f"id {_check_token(scene.id, 'scene id')}",
             f"type {_check_token(scene.scene_type, 'scene type')}",
             f"normalized {int(scene.normalized)}", f"objects {len(scene.objects)}"]
    for o in scene.objects:
        lines.append(f"object {_check_token(o.category, 'category')}")
        if o.asset_id is not None:
            lines.append(f"asset {_check_token(o.asset_id, 'asset id')}")
        lines.append(f"center {_hex(o.transform.center)}")
        lines.append(f"scale {_hex(o.transform.scale)}")
        lines.append(f"vertices {o.mesh.n_vertices}")
        lines.extend(_hex(v) for v in o.mesh.vertices)
        lines.append(f"faces {o.mesh.n_faces}")
        lines.extend(" ".join(str(int(i)) for i in f) for f in o.mesh.faces)
    lines.append("end")
    return "\n".join(lines) + "\n"


class _Reader:
    def __init__(self, text: str, path):
        self.lines = text.split("\n")
        if self.lines and self.lines[-1] == "":
            self.lines.pop()
        self.pos = 0
        self.path = path

    def fail(self, msg: str):
        raise SceneFormatError(self.path, self.pos, msg)

    def next(self, what: str) -> list[str]:
        if self.pos >= len(self.lines):
            self.pos += 1
            self.fail(f"unexpected end of file, expected {what}")
        line = self.lines[self.pos]
        self.pos += 1
        return line.split(" ")

    def keyed(self, key: str, n: int | None = None) -> list[str]:
        parts = self.next(key)
        if parts[0] != key:
            self.fail(f"expected {key!r}, found {parts[0]!r}")
        if n is not None and len(parts) - 1 != n:
            self.fail(f"{key!r} needs {n} field(s), found {len(parts) - 1}")
        return parts[1:]

    def floats(self, parts: list[str], n: int, what: str) -> list[float]:
        if len(parts) != n:
            self.fail(f"{what} needs {n} values, found {len(parts)}")
        try:
            return [float.fromhex(p) for p in parts]
        except ValueError:
            self.fail(f"malformed float in {what}")

    def count(self, parts: list[str], what: str) -> int:
        try:
            n = int(parts[0])
        except (ValueError, IndexError):
            self.fail(f"malformed {what} count")
        if n < 0:
            self.fail(f"negative {what} count")
        return n


def scene_from_text(text: str, path="<string>") -> Scene:
    r = _Reader(text, path)
    head = r.next("header")
    if len(head) != 2 or head[0] != MAGIC:
        r.fail(f"missing {MAGIC} header")
    if head[1] != str(VERSION):
        r.fail(f"unsupported scene version {head[1]} (expected {VERSION})")
    sid = r.keyed("id", 1)[0]
    stype = r.keyed("type", 1)[0]
    norm = r.keyed("normalized", 1)[0]
    if norm not in ("0", "1"):
        r.fail("normalized must be 0 or 1")
    n_obj = r.count(r.keyed("objects", 1), "object")
    objects = []
    for _ in range(n_obj):
        cat = r.keyed("object", 1)[0]
        parts = r.next("asset or center")
        asset = None
        if parts[0] == "asset":
            if len(parts) != 2:
                r.fail("'asset' needs 1 field")
            asset = parts[1]
            parts = r.next("center")
        if parts[0] != "center":
            r.fail(f"expected 'center', found {parts[0]!r}")
        center = r.floats(parts[1:], 3, "center")
        scale = r.floats(r.keyed("scale"), 3, "scale")
        nv = r.count(r.keyed("vertices", 1), "vertex")
        verts = [r.floats(r.next("vertex"), 3, "vertex") for _ in range(nv)]
        nf = r.count(r.keyed("faces", 1), "face")
        faces = []
        for _ in range(nf):
            parts = r.next("face")
            if len(parts) != 3:
                r.fail(f"face needs 3 indices, found {len(parts)}")
            try:
                faces.append([int(p) for p in parts])
            except ValueError:
                r.fail("malformed face index")
        try:
            mesh = Mesh(np.array(verts, dtype=np.float64).reshape(-1, 3),
                        np.array(faces, dtype=np.int64).reshape(-1, 3))
        except ValueError as e:
            r.fail(str(e))
        objects.append(SceneObject(cat, SlotTransform(center, scale), mesh, asset))
    r.keyed("end", 0)
    if r.pos != len(r.lines):
        r.pos += 1
        r.fail("trailing content after 'end'")
    return Scene(sid, stype, tuple(objects), norm == "1")


def save_scene(scene: Scene, path) -> Path:
    path = Path(path)
    tmp = path.with_name(path.name + ".tmp")
    tmp.write_text(scene_to_text(scene), encoding="utf-8")
    os.replace(tmp, path)
    return path


def load_scene(path) -> Scene:
    path = Path(path)
    return scene_from_text(path.read_text(encoding="utf-8"), path)


def scenes_equal(a: Scene, b: Scene) -> bool:
    """Bit-level equality of two scenes."""
    if (a.id, a.scene_type, a.normalized, len(a.objects)) != (b.id, b.scene_type, b.normalized, len(b.objects)):
        return False
    for x, y in zip(a.objects, b.objects):
        if x.category != y.category or x.asset_id != y.asset_id:
            return False
        for p, q in ((x.transform.center, y.transform.center), (x.transform.scale, y.transform.scale),
                     (x.mesh.vertices, y.mesh.vertices)):
            if p.shape != q.shape or p.tobytes() != q.tobytes():
                return False
        if not np.array_equal(x.mesh.faces, y.mesh.faces):
            return False
    return True


# --- manifests -----------------------------------------------------------
# dataset manifest: "<scene id>\t<split>\t<relative path>" per line
# asset manifest:   "<asset id>\t<category>\t<relative OBJ path>" per line

def write_manifest(rows, path) -> None:
    text = "".join("\t".join(_check_token(str(f), "manifest field") for f in row) + "\n" for row in rows)
    Path(path).write_text(text, encoding="utf-8")


def read_manifest(path, n_fields: int = 3) -> list[tuple[str, ...]]:
    rows = []
    for k, line in enumerate(Path(path).read_text(encoding="utf-8").splitlines(), start=1):
        if not line.strip() or line.startswith("#"):
            continue
        parts = line.split("\t")
        if len(parts) != n_fields:
            raise SceneFormatError(path, k, f"expected {n_fields} tab-separated fields, found {len(parts)}")
        rows.append(tuple(parts))
    return rows


def load_split(root, split: str | None = None) -> list[Scene]:
    """Load scenes listed in ``root/manifest.tsv`` (optionally one split only)."""
    root = Path(root)
    rows = read_manifest(root / "manifest.tsv")
    return [load_scene(root / rel) for _, sp, rel in rows if split is None or sp == split]


def load_scene_dir(path) -> list[Scene]:
    """All ``*.scene`` files of a directory, sorted by file name."""
    path = Path(path)
    if (path / "manifest.tsv").exists():
        return load_split(path)
    return [load_scene(p) for p in sorted(path.glob(f"*{SCENE_SUFFIX}"))]
