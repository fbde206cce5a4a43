"""Differentiable soft rasterization, a z-buffer oracle, and top-down renders.

Soft coverage of a pixel by a triangle is sigmoid(s / temperature) where s is
the signed 2-D distance (NDC units) from the pixel center to the triangle
boundary, positive inside. Coverages combine as mask = 1 - prod(1 - c), which
is evaluated as 1 - exp(-sum softplus(s / temperature)). Every term is offset
to vanish at a distance cutoff so the pair culling introduces no jumps. Normals are the
camera-space face normals blended with weights proportional to
coverage * exp(-depth / depth_temperature), then multiplied by the mask so
the background stays at the zero vector.

Pixel (i, j) has its center at NDC x = -1 + (2j + 1) / W, y = 1 - (2i + 1) / H.
"""
from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .autodiff import Tensor, ops
from ._kernels import accumulate_backward, accumulate_forward, candidate_pairs, edge_geometry, segment_min
from .autodiff.tensor import record
from .geometry import Mesh, Scene

# pairs whose signed distance is below -CUTOFF * temperature contribute
# nothing; coverage there is below sigmoid(-8) ~ 3.4e-4
CUTOFF = 8.0
DEPTH_TEMPERATURE = 1e-2
NEAR = 1e-3
MAX_PAIRS_PER_CHUNK = 1_500_000
_SOFTPLUS_CUT = float(np.log1p(np.exp(-CUTOFF)))
_SIGMOID_CUT = float(1.0 / (1.0 + np.exp(CUTOFF)))


class RenderError(ValueError):
    pass


@dataclass(frozen=True)
class Camera:
    position: np.ndarray
    fov_deg: float = 40.0
    height: int = 64
    width: int = 64
    up: tuple = (0.0, 1.0, 0.0)

    def __post_init__(self):
        object.__setattr__(self, "position", np.asarray(self.position, dtype=np.float64).reshape(3))

    @property
    def radius(self) -> float:
        return float(np.linalg.norm(self.position))

    def rotation(self) -> np.ndarray:
        """Rows are the camera right, up and backward axes in world space."""
        fwd = -self.position / np.linalg.norm(self.position)
        up = np.asarray(self.up, dtype=np.float64)
        if abs(float(fwd @ up)) > 1 - 1e-9:
            up = np.array([0.0, 0.0, 1.0])
        right = np.cross(fwd, up)
        right /= np.linalg.norm(right)
        true_up = np.cross(right, fwd)
        return np.stack([right, true_up, -fwd])

    def focal(self) -> tuple[float, float]:
        t = math.tan(math.radians(self.fov_deg) / 2.0)
        return t * self.width / self.height, t


def sample_camera(seed, radius: float = 1.5, fov_deg: float = 40.0, resolution: int = 64) -> Camera:
    """Camera on a sphere around the origin, area-uniform in direction."""
    rng = np.random.default_rng(seed)
    d = rng.normal(size=3)
    while np.linalg.norm(d) < 1e-12:
        d = rng.normal(size=3)
    d /= np.linalg.norm(d)
    return Camera(radius * d, fov_deg, resolution, resolution)


@dataclass
class RenderBuffers:
    """normal: (..., H, W, 3); mask: (..., H, W). Arrays or tensors."""

    normal: object
    mask: object

    @classmethod
    def from_stacked(cls, buf) -> "RenderBuffers":
        if isinstance(buf, Tensor):
            return cls(buf[..., 1:4], buf[..., 0])
        return cls(buf[..., 1:4], buf[..., 0])

    def numpy(self) -> "RenderBuffers":
        n = self.normal.data if isinstance(self.normal, Tensor) else self.normal
        m = self.mask.data if isinstance(self.mask, Tensor) else self.mask
        return RenderBuffers(np.asarray(n), np.asarray(m))

    @property
    def resolution(self) -> tuple[int, int]:
        shape = self.mask.shape
        return shape[-2], shape[-1]


def pixel_centers(height: int, width: int) -> tuple[np.ndarray, np.ndarray]:
    xs = -1.0 + (2.0 * np.arange(width) + 1.0) / width
    ys = 1.0 - (2.0 * np.arange(height) + 1.0) / height
    return xs, ys


def _to_camera(vertices: Tensor, cam: Camera, cull_near: bool = False) -> tuple[Tensor, Tensor, Tensor, Tensor]:
    """World (P, 3) -> camera-space coords, depth and NDC x, y."""
    rot = cam.rotation()
    vc = ops.matmul(ops.sub(vertices, cam.position), rot.T)
    depth = ops.neg(vc[:, 2])
    fx, fy = cam.focal()
    if np.any(depth.data < NEAR):
        if not cull_near:
            raise RenderError("mesh vertex behind or too close to the camera")
        # keep the projection finite; faces touching these vertices are culled
        depth = ops.maximum(depth, NEAR)
    x = ops.div(vc[:, 0], ops.mul(depth, fx))
    y = ops.div(vc[:, 1], ops.mul(depth, fy))
    return vc, depth, x, y


def _face_normals(vc: Tensor, faces: np.ndarray) -> Tensor:
    a = ops.take(vc, faces[:, 0])
    e1 = ops.sub(ops.take(vc, faces[:, 1]), a)
    e2 = ops.sub(ops.take(vc, faces[:, 2]), a)
    c = _cross(e1, e2)
    norm = ops.l2_norm(c, axis=1, keepdims=True)
    safe = np.where(norm.data > 0, 0.0, 1.0)
    return ops.div(c, ops.add(norm, safe))


def _cross(a: Tensor, b: Tensor) -> Tensor:
    ax, ay, az = a[:, 0], a[:, 1], a[:, 2]
    bx, by, bz = b[:, 0], b[:, 1], b[:, 2]
    return ops.stack([
        ops.sub(ops.mul(ay, bz), ops.mul(az, by)),
        ops.sub(ops.mul(az, bx), ops.mul(ax, bz)),
        ops.sub(ops.mul(ax, by), ops.mul(ay, bx)),
    ], axis=1)


def signed_edge_distance(xy, tri: np.ndarray, px: np.ndarray, py: np.ndarray) -> Tensor:
    """Signed distance from pixel centers to triangles, positive inside.

    xy: (V, 2) tensor of NDC vertex positions; tri: (P, 3) vertex indices of
    the triangle paired with pixel center (px[i], py[i]). The distance to the
    nearest edge segment is differentiated with the envelope rule: moving an
    endpoint shifts the closest point by the matching segment weight.
    """
    xy = xy if isinstance(xy, Tensor) else Tensor(xy)
    tri = np.ascontiguousarray(tri, dtype=np.int64)
    x = np.ascontiguousarray(xy.data[:, 0])
    y = np.ascontiguousarray(xy.data[:, 1])
    sd, k, t, rx, ry, sgn = edge_geometry(x, y, tri, np.ascontiguousarray(px, dtype=np.float64),
                                          np.ascontiguousarray(py, dtype=np.float64))
    rows = np.arange(len(tri))
    va = tri[rows, k]
    vb = tri[rows, (k + 1) % 3]
    nv = xy.shape[0]

    def vjp(g):
        coef = -g * sgn / np.abs(sd)
        grad = np.empty((nv, 2))
        for c, r in ((0, rx), (1, ry)):
            cr = coef * r
            grad[:, c] = np.bincount(va, cr * (1.0 - t), minlength=nv) + np.bincount(vb, cr * t, minlength=nv)
        return (grad,)
    return record("signed_edge_distance", (xy,), sd, vjp)


def soft_accumulate(sd: Tensor, depth: Tensor, normal: Tensor, pix: np.ndarray, npix: int,
                    shift: np.ndarray, temperature: float, depth_temperature: float) -> Tensor:
    """Per-pixel sums over (pixel, face) pairs, returned as an (npix, 5) tensor:
    [sum coverage-softplus, sum weights, sum weight * normal (3)].

    coverage-softplus = relu(softplus(sd / T) - softplus(-CUTOFF))
    weight = relu(sigmoid(sd / T) - sigmoid(-CUTOFF)) * exp(-(depth - shift) / Td)
    """
    pix = np.ascontiguousarray(pix, dtype=np.int64)
    nd = np.ascontiguousarray(normal.data)
    out, sig, near, wgt, on_a = accumulate_forward(
        np.ascontiguousarray(sd.data), np.ascontiguousarray(depth.data), nd, pix, npix,
        np.ascontiguousarray(shift, dtype=np.float64), temperature, depth_temperature, _SOFTPLUS_CUT, _SIGMOID_CUT)

    def vjp(g):
        return accumulate_backward(np.ascontiguousarray(g), pix, nd, sig, near, wgt, on_a,
                                   temperature, depth_temperature, _SIGMOID_CUT)
    return record("soft_accumulate", (sd, depth, normal), out, vjp)


def rasterize_soft_batch(vertices, faces: np.ndarray, cam: Camera, temperature: float = 1e-2,
                         depth_temperature: float = DEPTH_TEMPERATURE, cull_near: bool = False) -> Tensor:
    """Render S meshes sharing one face list, each into its own image.

    vertices: (S, V, 3) tensor in world space. Returns an (S, H, W, 4) tensor
    whose channel 0 is the soft mask and channels 1..3 the camera-space normal.
    With ``cull_near`` faces reaching behind the near plane are skipped
    instead of raising.
    """
    if temperature <= 0:
        raise RenderError(f"temperature must be positive, got {temperature}")
    verts = vertices if isinstance(vertices, Tensor) else Tensor(vertices)
    if verts.ndim != 3 or verts.shape[2] != 3:
        raise RenderError(f"vertices must have shape (S, V, 3), got {verts.shape}")
    faces = np.asarray(faces, dtype=np.int64)
    s, nv = verts.shape[0], verts.shape[1]
    h, w = cam.height, cam.width
    npix = s * h * w
    if s == 0:
        return Tensor(np.zeros((0, h, w, 4)))
    if len(faces) == 0:
        raise RenderError("cannot render a mesh without faces")
    all_faces = (faces[None, :, :] + (np.arange(s) * nv)[:, None, None]).reshape(-1, 3)
    face_obj = np.repeat(np.arange(s), len(faces))
    flat = ops.reshape(verts, (s * nv, 3))
    vc, depth, x, y = _to_camera(flat, cam, cull_near)
    keep = np.ones(len(all_faces), dtype=bool)
    if cull_near:
        keep = np.all(depth.data[all_faces] > NEAR, axis=1)
    normals = _face_normals(vc, all_faces)
    face_depth = ops.mul(ops.add(ops.add(ops.take(depth, all_faces[:, 0]),
                                         ops.take(depth, all_faces[:, 1])),
                                 ops.take(depth, all_faces[:, 2])), 1.0 / 3.0)
    xs, ys = pixel_centers(h, w)
    margin = CUTOFF * temperature
    xd, yd = x.data, y.data

    # per-pixel nearest face depth over all candidate pairs; used as a
    # constant shift so exp() of the depth weights cannot overflow
    shift = np.full(npix, np.inf)
    pf, rows, cols = candidate_pairs(np.ascontiguousarray(xd), np.ascontiguousarray(yd), all_faces, keep,
                                     margin, h, w)
    pix = face_obj[pf] * h * w + rows * w + cols
    segment_min(face_depth.data[pf], pix, shift)
    if len(pf) == 0:
        return Tensor(np.zeros((s, h, w, 4)))
    xy = ops.stack([x, y], axis=1)
    acc = None
    for lo in range(0, len(pf), MAX_PAIRS_PER_CHUNK):
        part_f, part_pix = pf[lo:lo + MAX_PAIRS_PER_CHUNK], pix[lo:lo + MAX_PAIRS_PER_CHUNK]
        sd = signed_edge_distance(xy, all_faces[part_f], xs[cols[lo:lo + MAX_PAIRS_PER_CHUNK]],
                                  ys[rows[lo:lo + MAX_PAIRS_PER_CHUNK]])
        part = soft_accumulate(sd, ops.take(face_depth, part_f), ops.take(normals, part_f), part_pix, npix,
                               shift, temperature, depth_temperature)
        acc = part if acc is None else ops.add(acc, part)
    cover_sum, den, num = acc[:, 0], acc[:, 1], acc[:, 2:5]
    mask = ops.sub(1.0, ops.exp(ops.neg(cover_sum)))
    empty = (den.data <= 0).astype(np.float64)
    blend = ops.div(num, ops.reshape(ops.add(den, empty), (-1, 1)))
    nrm = ops.mul(blend, ops.reshape(mask, (-1, 1)))
    out = ops.concat([ops.reshape(mask, (-1, 1)), nrm], axis=1)
    return ops.reshape(out, (s, h, w, 4))


def rasterize_soft(mesh: Mesh, cam: Camera, temperature: float = 1e-2, vertices=None) -> RenderBuffers:
    """Soft render of one mesh. ``vertices`` may be a tracked (V, 3) tensor
    replacing ``mesh.vertices`` to obtain vertex gradients."""
    if mesh.n_faces == 0 or mesh.n_vertices == 0:
        raise RenderError("cannot render an empty mesh")
    v = vertices if vertices is not None else Tensor(mesh.vertices)
    v = v if isinstance(v, Tensor) else Tensor(v)
    buf = rasterize_soft_batch(ops.reshape(v, (1,) + v.shape), mesh.faces, cam, temperature)
    return RenderBuffers.from_stacked(buf[0])


# --- hard rasterization ----------------------------------------------------

def _pairs(x: np.ndarray, y: np.ndarray, faces: np.ndarray, margin: float,
           height: int, width: int) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    """Enumerate (face, row, col) for pixels whose centers lie in the face's
    NDC bounding box grown by ``margin``."""
    fx, fy = x[faces], y[faces]
    xmin, xmax = fx.min(axis=1) - margin, fx.max(axis=1) + margin
    ymin, ymax = fy.min(axis=1) - margin, fy.max(axis=1) + margin
    j0 = np.maximum(np.ceil((xmin + 1.0) * width / 2.0 - 0.5), 0).astype(np.int64)
    j1 = np.minimum(np.floor((xmax + 1.0) * width / 2.0 - 0.5), width - 1).astype(np.int64)
    i0 = np.maximum(np.ceil((1.0 - ymax) * height / 2.0 - 0.5), 0).astype(np.int64)
    i1 = np.minimum(np.floor((1.0 - ymin) * height / 2.0 - 0.5), height - 1).astype(np.int64)
    nx = np.maximum(j1 - j0 + 1, 0)
    ny = np.maximum(i1 - i0 + 1, 0)
    counts = nx * ny
    total = int(counts.sum())
    face = np.repeat(np.arange(len(faces)), counts)
    if total == 0:
        empty = np.zeros(0, dtype=np.int64)
        return empty, empty, empty
    starts = np.repeat(np.cumsum(counts) - counts, counts)
    local = np.arange(total) - starts
    nxf = nx[face]
    rows = i0[face] + local // nxf
    cols = j0[face] + local % nxf
    return face, rows, cols


def _chunks(x, y, faces, margin, height, width):
    """Split faces into groups whose pair counts stay bounded."""
    fx, fy = x[faces], y[faces]
    wx = (fx.max(axis=1) - fx.min(axis=1) + 2 * margin) * width / 2.0 + 1
    wy = (fy.max(axis=1) - fy.min(axis=1) + 2 * margin) * height / 2.0 + 1
    est = np.minimum(wx, width + 1) * np.minimum(wy, height + 1)
    bounds = [0]
    acc = 0.0
    for k, e in enumerate(est):
        if acc + e > MAX_PAIRS_PER_CHUNK and k > bounds[-1]:
            bounds.append(k)
            acc = 0.0
        acc += e
    bounds.append(len(faces))
    return [(bounds[i], bounds[i + 1]) for i in range(len(bounds) - 1)]


def _hard_core(x: np.ndarray, y: np.ndarray, depth: np.ndarray, faces: np.ndarray,
               face_normals: np.ndarray, height: int, width: int) -> tuple[np.ndarray, np.ndarray]:
    mask = np.zeros(height * width)
    normal = np.zeros((height * width, 3))
    if len(faces) == 0:
        return mask.reshape(height, width), normal.reshape(height, width, 3)
    xs, ys = pixel_centers(height, width)
    best = np.full(height * width, np.inf)
    best_face = np.full(height * width, -1, dtype=np.int64)
    for lo, hi in _chunks(x, y, faces, 0.0, height, width):
        pf, rows, cols = _pairs(x, y, faces[lo:hi], 0.0, height, width)
        if len(pf) == 0:
            continue
        pf = pf + lo
        f = faces[pf]
        px, py = xs[cols], ys[rows]
        ax, ay = x[f[:, 0]], y[f[:, 0]]
        bx, by = x[f[:, 1]], y[f[:, 1]]
        cx, cy = x[f[:, 2]], y[f[:, 2]]
        area = (bx - ax) * (cy - ay) - (by - ay) * (cx - ax)
        w0 = (bx - px) * (cy - py) - (by - py) * (cx - px)
        w1 = (cx - px) * (ay - py) - (cy - py) * (ax - px)
        w2 = (ax - px) * (by - py) - (ay - py) * (bx - px)
        sgn = np.sign(area)
        ok = (sgn != 0) & (w0 * sgn >= 0) & (w1 * sgn >= 0) & (w2 * sgn >= 0)
        if not np.any(ok):
            continue
        safe = np.where(area == 0, 1.0, area)
        z = (w0 * depth[f[:, 0]] + w1 * depth[f[:, 1]] + w2 * depth[f[:, 2]]) / safe
        pix = rows * width + cols
        pix, z, pf = pix[ok], z[ok], pf[ok]
        order = np.lexsort((pf, z, pix))
        pix, z, pf = pix[order], z[order], pf[order]
        first = np.ones(len(pix), dtype=bool)
        first[1:] = pix[1:] != pix[:-1]
        pix, z, pf = pix[first], z[first], pf[first]
        closer = z < best[pix]
        best[pix[closer]] = z[closer]
        best_face[pix[closer]] = pf[closer]
    hit = best_face >= 0
    mask[hit] = 1.0
    normal[hit] = face_normals[best_face[hit]]
    return mask.reshape(height, width), normal.reshape(height, width, 3)


def _unit_face_normals(v: np.ndarray, faces: np.ndarray) -> np.ndarray:
    c = np.cross(v[faces[:, 1]] - v[faces[:, 0]], v[faces[:, 2]] - v[faces[:, 0]])
    n = np.linalg.norm(c, axis=1, keepdims=True)
    return np.divide(c, n, out=np.zeros_like(c), where=n > 0)


def rasterize_hard(mesh: Mesh, cam: Camera) -> RenderBuffers:
    """Z-buffered rasterization at pixel centers; mask is exactly 0 or 1."""
    if mesh.n_faces == 0:
        raise RenderError("cannot render an empty mesh")
    vc = (mesh.vertices - cam.position) @ cam.rotation().T
    depth = -vc[:, 2]
    if np.any(depth < NEAR):
        raise RenderError("mesh vertex behind or too close to the camera")
    fx, fy = cam.focal()
    x, y = vc[:, 0] / (depth * fx), vc[:, 1] / (depth * fy)
    normals = _unit_face_normals(vc, mesh.faces)
    mask, normal = _hard_core(x, y, depth, mesh.faces, normals, cam.height, cam.width)
    return RenderBuffers(normal, mask)


def topdown_render(scene: Scene, resolution: int = 256) -> np.ndarray:
    """Orthographic view from +y over [-0.5, 0.5]^2 in (x, z); world-space normals.

    Row i covers z = -0.5 + (i + 0.5) / resolution, column j covers
    x = -0.5 + (j + 0.5) / resolution. Background is the zero vector.
    """
    if not scene.objects:
        return np.zeros((resolution, resolution, 3))
    verts = np.concatenate([o.mesh.vertices for o in scene.objects])
    offsets = np.cumsum([0] + [o.mesh.n_vertices for o in scene.objects[:-1]])
    faces = np.concatenate([o.mesh.faces + off for o, off in zip(scene.objects, offsets)])
    x = 2.0 * verts[:, 0]
    y = -2.0 * verts[:, 2]
    depth = -verts[:, 1]
    normals = _unit_face_normals(verts, faces)
    _, normal = _hard_core(x, y, depth, faces, normals, resolution, resolution)
    return normal


# --- loss -------------------------------------------------------------------

def render_loss(pred: RenderBuffers, gt: RenderBuffers) -> Tensor:
    """Mean absolute normal difference plus soft-mask IoU loss.

    Buffers may carry a leading object axis; the per-object losses are
    averaged. The IoU term is 1 - sum(min) / sum(max), and 0 when both masks
    are empty.
    """
    pm = pred.mask if isinstance(pred.mask, Tensor) else Tensor(pred.mask)
    gm = gt.mask if isinstance(gt.mask, Tensor) else Tensor(gt.mask)
    pn = pred.normal if isinstance(pred.normal, Tensor) else Tensor(pred.normal)
    gn = gt.normal if isinstance(gt.normal, Tensor) else Tensor(gt.normal)
    if pm.shape != gm.shape or pn.shape != gn.shape:
        raise RenderError(f"resolution mismatch: prediction {pm.shape}, ground truth {gm.shape}")
    if pm.ndim == 2:
        pm, gm = ops.reshape(pm, (1,) + pm.shape), ops.reshape(gm, (1,) + gm.shape)
        pn, gn = ops.reshape(pn, (1,) + pn.shape), ops.reshape(gn, (1,) + gn.shape)
    if pm.shape[0] == 0:
        return Tensor(0.0)
    l1 = ops.mean(ops.abs(ops.sub(pn, gn)), axis=(1, 2, 3))
    inter = ops.sum(ops.minimum(pm, gm), axis=(1, 2))
    union = ops.sum(ops.maximum(pm, gm), axis=(1, 2))
    empty = union.data <= 0
    iou = ops.div(inter, ops.add(union, empty.astype(np.float64)))
    iou_loss = ops.where(empty, 0.0, ops.sub(1.0, iou))
    return ops.mean(ops.add(l1, iou_loss))


def render_loss_reference(pred: RenderBuffers, gt: RenderBuffers) -> float:
    """Plain-loop evaluation of the same loss (test oracle)."""
    p, g = pred.numpy(), gt.numpy()
    pm = p.mask if p.mask.ndim == 3 else p.mask[None]
    gm = g.mask if g.mask.ndim == 3 else g.mask[None]
    pn = p.normal if p.normal.ndim == 4 else p.normal[None]
    gn = g.normal if g.normal.ndim == 4 else g.normal[None]
    total = 0.0
    for k in range(pm.shape[0]):
        l1 = 0.0
        inter = union = 0.0
        for i in range(pm.shape[1]):
            for j in range(pm.shape[2]):
                for c in range(3):
                    l1 += abs(pn[k, i, j, c] - gn[k, i, j, c])
                inter += min(pm[k, i, j], gm[k, i, j])
                union += max(pm[k, i, j], gm[k, i, j])
        l1 /= pm.shape[1] * pm.shape[2] * 3
        total += l1 + (0.0 if union <= 0 else 1.0 - inter / union)
    return total / pm.shape[0]
