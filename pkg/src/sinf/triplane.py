"""Tri-plane implicit field: three axis-aligned feature planes.

A query point p in [-0.5, 0.5]^3 is projected onto each plane by dropping
one coordinate, bilinearly interpolated there, and the three C-vectors are
summed:  f(p) = sum_e bilinear(plane_e, project_e(p)).

Plane convention (fixed): plane 0 = XY (drops z), plane 1 = XZ (drops y),
plane 2 = YZ (drops x). In plane e with kept axes (a, b), grid row i runs
along axis a and column j along axis b.
"""
from __future__ import annotations

import threading
from dataclasses import dataclass, field

import numpy as np

from .autodiff import Tensor, ops

PLANE_AXES = ((0, 1), (0, 2), (1, 2))
PLANE_NAMES = ("xy", "xz", "yz")


@dataclass
class TriPlaneField:
    """Feature planes stored as one (3, N, N, C) tensor."""

    planes: Tensor
    clamp_count: int = field(default=0, compare=False)
    _lock: threading.Lock = field(default_factory=threading.Lock, repr=False, compare=False)

    def __post_init__(self):
        if not isinstance(self.planes, Tensor):
            self.planes = Tensor(self.planes)
        shape = self.planes.shape
        if len(shape) != 4 or shape[0] != 3 or shape[1] != shape[2]:
            raise ValueError(f"planes must have shape (3, N, N, C), got {shape}")
        if shape[1] < 2:
            raise ValueError("plane resolution must be at least 2")

    @property
    def resolution(self) -> int:
        return self.planes.shape[1]

    @property
    def channels(self) -> int:
        return self.planes.shape[3]

    @classmethod
    def zeros(cls, resolution: int, channels: int) -> "TriPlaneField":
        return cls(Tensor(np.zeros((3, resolution, resolution, channels))))

    def _note_clamped(self, n: int) -> None:
        if n:
            with self._lock:
                self.clamp_count += n


def project(p, plane_index: int, resolution: int) -> np.ndarray:
    """Continuous grid coordinates of p on one plane, in [0, N-1]^2.

    Points outside the cube are clamped onto it.
    """
    p = np.clip(np.asarray(p, dtype=np.float64).reshape(3), -0.5, 0.5)
    a, b = PLANE_AXES[plane_index]
    return (p[[a, b]] + 0.5) * (resolution - 1)


def _cell(u: np.ndarray, n: int) -> np.ndarray:
    # right-continuous cell choice; the last grid line belongs to the last cell
    return np.clip(np.floor(u), 0, n - 2).astype(np.int64)


def sample_plane(plane, uv) -> np.ndarray:
    """Bilinear sample of an (N, N, C) array at continuous coords uv in [0, N-1]^2."""
    plane = np.asarray(plane.data if isinstance(plane, Tensor) else plane, dtype=np.float64)
    n = plane.shape[0]
    u, v = float(uv[0]), float(uv[1])
    if not (0.0 <= u <= n - 1 and 0.0 <= v <= n - 1):
        raise ValueError(f"uv {uv} outside [0, {n - 1}]^2")
    i, j = int(_cell(np.array(u), n)), int(_cell(np.array(v), n))
    fu, fv = u - i, v - j
    return ((1 - fu) * (1 - fv) * plane[i, j] + fu * (1 - fv) * plane[i + 1, j]
            + (1 - fu) * fv * plane[i, j + 1] + fu * fv * plane[i + 1, j + 1])


def sample_field_batch(field_: TriPlaneField, points) -> Tensor:
    """Sample the field at P points; returns a (P, C) tensor.

    Differentiable with respect to both the plane features and the points.
    """
    pts = points if isinstance(points, Tensor) else Tensor(points)
    n, c = field_.resolution, field_.channels
    if pts.size == 0:
        return Tensor(np.zeros((0, c)))
    if pts.ndim != 2 or pts.shape[1] != 3:
        raise ValueError(f"points must have shape (P, 3), got {pts.shape}")
    outside = np.any(np.abs(pts.data) > 0.5, axis=1)
    field_._note_clamped(int(outside.sum()))
    # grid coords for all three planes at once: (P, 3) each for the two kept axes
    first = np.array([a for a, _ in PLANE_AXES])
    second = np.array([b for _, b in PLANE_AXES])
    grid = ops.mul(ops.add(ops.clip(pts, -0.5, 0.5), 0.5), float(n - 1))
    u = ops.take(grid, first, axis=1)
    v = ops.take(grid, second, axis=1)
    i0 = _cell(u.data, n)
    j0 = _cell(v.data, n)
    fu = ops.sub(u, i0.astype(np.float64))
    fv = ops.sub(v, j0.astype(np.float64))
    base = (np.arange(3) * n * n)[None, :] + i0 * n + j0
    flat = ops.reshape(field_.planes, (3 * n * n, c))
    f00 = ops.take(flat, base)
    f10 = ops.take(flat, base + n)
    f01 = ops.take(flat, base + 1)
    f11 = ops.take(flat, base + n + 1)
    fu3 = ops.reshape(fu, fu.shape + (1,))
    fv3 = ops.reshape(fv, fv.shape + (1,))
    gu = ops.sub(1.0, fu3)
    gv = ops.sub(1.0, fv3)
    blend = ops.add(
        ops.add(ops.mul(ops.mul(f00, gu), gv), ops.mul(ops.mul(f10, fu3), gv)),
        ops.add(ops.mul(ops.mul(f01, gu), fv3), ops.mul(ops.mul(f11, fu3), fv3)),
    )
    return ops.sum(blend, axis=1)


def sample_field(field_: TriPlaneField, p) -> Tensor:
    """Sample the field at a single point; returns a (C,) tensor."""
    pts = p if isinstance(p, Tensor) else Tensor(np.asarray(p, dtype=np.float64))
    return ops.reshape(sample_field_batch(field_, ops.reshape(pts, (1, 3))), (field_.channels,))
