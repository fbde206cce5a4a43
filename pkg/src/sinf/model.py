"""Scene encoder, relationship decoder (z -> tri-plane field + layout slots)
and instance decoder (slots projected into the field -> deformed spheres)."""
from __future__ import annotations

import math
from dataclasses import asdict, dataclass, fields

import numpy as np

from .autodiff import Tensor, no_grad, ops
from .autodiff.nn import ConvTranspose2d, Conv3d, LayerNorm, Linear, Module, TransformerBlock
from .geometry import Mesh, Scene, icosphere, voxelize
from .triplane import TriPlaneField, sample_field_batch

MODES = ("full", "layout_only", "field_only")
LOGVAR_MIN, LOGVAR_MAX = -30.0, 20.0
PE_FREQUENCIES = (1, 2)
# presence logit of the frozen slots in field_only mode (sigmoid ~ 0.95)
CANONICAL_PRESENCE = 3.0


class ModelError(ValueError):
    pass


@dataclass(frozen=True)
class ModelConfig:
    mode: str = "full"
    latent_dim: int = 128
    slots: int = 12
    plane_resolution: int = 32
    plane_channels: int = 16
    template_level: int = 2
    transformer_layers: int = 2
    transformer_heads: int = 4
    transformer_width: int = 64
    voxel_resolution: int = 32
    presence_threshold: float = 0.5

    def __post_init__(self):
        if self.mode not in MODES:
            raise ModelError(f"mode must be one of {MODES}, got {self.mode!r}")
        if self.latent_dim < 1 or self.slots < 1:
            raise ModelError("latent_dim and slots must be positive")
        n = self.plane_resolution
        if n < 8 or n & (n - 1):
            raise ModelError(f"plane_resolution must be a power of two >= 8, got {n}")
        r = self.voxel_resolution
        if r < 8 or r & (r - 1):
            raise ModelError(f"voxel_resolution must be a power of two >= 8, got {r}")
        if self.transformer_width % self.transformer_heads:
            raise ModelError("transformer_width must be divisible by transformer_heads")
        if not 0.0 < self.presence_threshold < 1.0:
            raise ModelError("presence_threshold must lie in (0, 1)")

    def to_dict(self) -> dict:
        return asdict(self)

    @classmethod
    def from_dict(cls, d: dict) -> "ModelConfig":
        known = {f.name for f in fields(cls)}
        unknown = set(d) - known
        if unknown:
            raise ModelError(f"unknown model config keys: {sorted(unknown)}")
        return cls(**d)


@dataclass
class LatentCode:
    mean: Tensor
    logvar: Tensor
    z: Tensor

    @property
    def d(self) -> int:
        return self.mean.shape[0]


@dataclass
class LayoutSlots:
    """M slots: center (M, 3), log_scale (M, 3), presence logit (M,)."""

    center: Tensor
    log_scale: Tensor
    presence: Tensor
    threshold: float = 0.5

    @property
    def M(self) -> int:
        return self.center.shape[0]

    def scale(self) -> Tensor:
        return ops.exp(self.log_scale)

    def probabilities(self) -> np.ndarray:
        return 1.0 / (1.0 + np.exp(-self.presence.data))

    def active(self) -> np.ndarray:
        return np.flatnonzero(self.probabilities() > self.threshold)

    def boxes(self) -> tuple[np.ndarray, np.ndarray]:
        """Numpy (lo, hi) corner arrays of shape (M, 3)."""
        s = np.exp(self.log_scale.data)
        return self.center.data - s, self.center.data + s

    def detached(self) -> "LayoutSlots":
        return LayoutSlots(Tensor(self.center.data.copy()), Tensor(self.log_scale.data.copy()),
                           Tensor(self.presence.data.copy()), self.threshold)


def slot_grid(m: int) -> np.ndarray:
    """Deterministic (m, 3) grid of centers spread over the x-z floor plane."""
    nx = max(1, int(math.floor(math.sqrt(m))))
    nz = int(math.ceil(m / nx))
    xs = (np.arange(nx) + 0.5) / nx - 0.5
    zs = (np.arange(nz) + 0.5) / nz - 0.5
    grid = np.array([(x, 0.0, z) for x in xs for z in zs])
    return grid[:m], 0.5 / max(nx, nz)


def positional_encoding(v: np.ndarray) -> np.ndarray:
    parts = [v]
    for k in PE_FREQUENCIES:
        parts += [np.sin(math.pi * k * v), np.cos(math.pi * k * v)]
    return np.concatenate(parts, axis=-1)


class Encoder(Module):
    """Dense strided 3-D conv stack over the occupancy grid."""

    def __init__(self, cfg: ModelConfig, rng: np.random.Generator):
        widths = [1, 8, 16, 32]
        self.convs = [Conv3d(widths[i], widths[i + 1], 4, rng, stride=2, padding=1) for i in range(3)]
        side = cfg.voxel_resolution // 8
        self.head = Linear(32 * side ** 3, 2 * cfg.latent_dim, rng)
        self.d = cfg.latent_dim

    def __call__(self, grid) -> tuple[Tensor, Tensor]:
        x = grid if isinstance(grid, Tensor) else Tensor(np.asarray(grid, dtype=np.float64))
        x = ops.reshape(x, (1,) + x.shape)
        for conv in self.convs:
            x = ops.relu(conv(x))
        out = self.head(ops.reshape(x, (-1,)))
        return out[: self.d], out[self.d:]


class RelationshipDecoder(Module):
    """z -> (tri-plane field, layout slots)."""

    def __init__(self, cfg: ModelConfig, rng: np.random.Generator):
        self.cfg = cfg
        n, c = cfg.plane_resolution, cfg.plane_channels
        ups = int(round(math.log2(n // 4)))
        self.seed_width = 64
        self.field_in = Linear(cfg.latent_dim, 16 * self.seed_width, rng)
        chans = [self.seed_width] + [32] * (ups - 1) + [3 * c]
        self.field_up = [ConvTranspose2d(chans[i], chans[i + 1], 4, rng) for i in range(ups)]
        self.slot_hidden = Linear(cfg.latent_dim, 128, rng)
        self.slot_out = Linear(128, cfg.slots * 7, rng)
        # small final weights so decoded slots start near a spread-out grid
        self.slot_out.weight.data *= 0.1
        centers, half = slot_grid(cfg.slots)
        bias = np.zeros((cfg.slots, 7))
        bias[:, :3] = centers
        bias[:, 3:6] = math.log(max(half, 0.15))
        self.slot_out.bias.data[:] = bias.reshape(-1)

    def field(self, z: Tensor) -> TriPlaneField:
        n, c = self.cfg.plane_resolution, self.cfg.plane_channels
        x = ops.reshape(self.field_in(z), (self.seed_width, 4, 4))
        for up in self.field_up:
            x = up(ops.relu(x))
        planes = ops.transpose(ops.reshape(x, (3, c, n, n)), (0, 2, 3, 1))
        return TriPlaneField(planes)

    def slots(self, z: Tensor) -> LayoutSlots:
        raw = ops.reshape(self.slot_out(ops.relu(self.slot_hidden(z))), (self.cfg.slots, 7))
        return LayoutSlots(raw[:, 0:3], raw[:, 3:6], raw[:, 6], self.cfg.presence_threshold)


class InstanceDecoder(Module):
    """Per-vertex displacement from (field sample, vertex positional encoding) tokens."""

    def __init__(self, cfg: ModelConfig, rng: np.random.Generator):
        w = cfg.transformer_width
        pe_dim = 3 * (1 + 2 * len(PE_FREQUENCIES))
        self.embed = Linear(cfg.plane_channels + pe_dim, w, rng)
        self.blocks = [TransformerBlock(w, cfg.transformer_heads, rng) for _ in range(cfg.transformer_layers)]
        self.norm = LayerNorm(w)
        self.out = Linear(w, 3, rng, zero=True)

    def __call__(self, features: Tensor, encoding: np.ndarray) -> Tensor:
        """features (..., V, C), encoding (V, E) -> displacement (..., V, 3)."""
        lead = features.shape[:-2]
        enc = np.broadcast_to(encoding, lead + encoding.shape)
        x = self.embed(ops.concat([features, Tensor(enc)], axis=-1))
        for blk in self.blocks:
            x = blk(x)
        return self.out(self.norm(x))


class SINFModel(Module):
    def __init__(self, cfg: ModelConfig | None = None, seed: int = 0):
        self.cfg = cfg or ModelConfig()
        rng = np.random.default_rng(seed)
        self.encoder = Encoder(self.cfg, rng)
        self.relations = RelationshipDecoder(self.cfg, rng)
        self.instances = InstanceDecoder(self.cfg, rng)
        self.template = icosphere(self.cfg.template_level)
        self._encoding = positional_encoding(self.template.vertices)

    # -- parameter bookkeeping ------------------------------------------------
    def frozen_names(self) -> set[str]:
        """Parameters the current mode never updates."""
        names = self.named_parameters()
        if self.cfg.mode == "layout_only":
            return {k for k in names if k.startswith("relations.field_")}
        if self.cfg.mode == "field_only":
            return {k for k in names if k.startswith("relations.slot_")}
        return set()

    def state_dict(self) -> dict[str, np.ndarray]:
        return {k: v.data.copy() for k, v in self.named_parameters().items()}

    def load_state_dict(self, state: dict[str, np.ndarray]) -> None:
        params = self.named_parameters()
        missing = set(params) - set(state)
        extra = set(state) - set(params)
        if missing or extra:
            raise ModelError(f"state mismatch: missing {sorted(missing)}, unexpected {sorted(extra)}")
        for k, p in params.items():
            arr = np.asarray(state[k], dtype=np.float64)
            if arr.shape != p.shape:
                raise ModelError(f"parameter {k}: expected shape {p.shape}, got {arr.shape}")
            p.data[...] = arr

    # -- pipeline ---------------------------------------------------------------
    def voxelize(self, scene: Scene) -> np.ndarray:
        if not scene.objects:
            raise ModelError(f"cannot encode empty scene {scene.id!r}")
        return voxelize(scene, self.cfg.voxel_resolution)

    def encode(self, scene: Scene | np.ndarray) -> tuple[Tensor, Tensor]:
        """Scene (or a precomputed occupancy grid) -> (mean, logvar)."""
        grid = self.voxelize(scene) if isinstance(scene, Scene) else np.asarray(scene, dtype=np.float64)
        r = self.cfg.voxel_resolution
        if grid.shape != (r, r, r):
            raise ModelError(f"occupancy grid must be {(r, r, r)}, got {grid.shape}")
        return self.encoder(grid)

    @staticmethod
    def reparameterize(mean: Tensor, logvar: Tensor, seed) -> LatentCode:
        if mean.shape != logvar.shape:
            raise ModelError(f"mean {mean.shape} and logvar {logvar.shape} differ")
        eps = np.random.default_rng(seed).normal(size=mean.shape)
        lv = ops.clip(logvar, LOGVAR_MIN, LOGVAR_MAX)
        z = ops.add(mean, ops.mul(ops.exp(ops.mul(lv, 0.5)), eps))
        return LatentCode(mean, logvar, z)

    def canonical_slots(self) -> LayoutSlots:
        m = self.cfg.slots
        centers, half = slot_grid(m)
        return LayoutSlots(Tensor(centers), Tensor(np.full((m, 3), math.log(half))),
                           Tensor(np.full(m, CANONICAL_PRESENCE)), self.cfg.presence_threshold)

    def _check_z(self, z) -> Tensor:
        z = z if isinstance(z, Tensor) else Tensor(np.asarray(z, dtype=np.float64))
        if z.shape != (self.cfg.latent_dim,):
            raise ModelError(f"latent must have shape ({self.cfg.latent_dim},), got {z.shape}")
        return z

    def decode_relationships(self, z) -> tuple[TriPlaneField, LayoutSlots]:
        z = self._check_z(z)
        n, c = self.cfg.plane_resolution, self.cfg.plane_channels
        if self.cfg.mode == "layout_only":
            field = TriPlaneField.zeros(n, c)
        else:
            field = self.relations.field(z)
        if self.cfg.mode == "field_only":
            slots = self.canonical_slots()
        else:
            slots = self.relations.slots(z)
        return field, slots

    def decode_vertices(self, field: TriPlaneField, slots: LayoutSlots, indices) -> Tensor:
        """Deformed template vertices for the chosen slots, shape (K, V, 3)."""
        idx = np.asarray(indices, dtype=np.int64)
        tv = self.template.vertices
        nv = len(tv)
        if idx.size == 0:
            return Tensor(np.zeros((0, nv, 3)))
        center = ops.reshape(ops.take(slots.center, idx), (len(idx), 1, 3))
        scale = ops.reshape(ops.take(slots.scale(), idx), (len(idx), 1, 3))
        placed = ops.add(center, ops.mul(scale, tv))
        feats = sample_field_batch(field, ops.reshape(placed, (-1, 3)))
        feats = ops.reshape(feats, (len(idx), nv, self.cfg.plane_channels))
        delta = self.instances(feats, self._encoding)
        return ops.add(center, ops.mul(scale, ops.add(delta, tv)))

    def decode_instances(self, field: TriPlaneField, slots: LayoutSlots, template: Mesh | None = None,
                         indices=None) -> list[Mesh]:
        if template is not None and template != self.template:
            raise ModelError("template must be the model's icosphere")
        idx = slots.active() if indices is None else np.asarray(indices, dtype=np.int64)
        verts = self.decode_vertices(field, slots, idx)
        return [Mesh(verts.data[k], self.template.faces) for k in range(len(idx))]

    def forward(self, scene, seed) -> tuple[list[Mesh], LayoutSlots, LatentCode]:
        mean, logvar = self.encode(scene)
        latent = self.reparameterize(mean, logvar, seed)
        field, slots = self.decode_relationships(latent.z)
        return self.decode_instances(field, slots), slots, latent

    def generate(self, z) -> tuple[list[Mesh], LayoutSlots]:
        with no_grad():
            field, slots = self.decode_relationships(z)
            return self.decode_instances(field, slots), slots
