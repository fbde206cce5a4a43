"""Batch training loop with deterministic per-step randomness.

Every random draw of step t comes from ``default_rng([seed, t, ...])`` so a
run resumed from a checkpoint at step t replays the same batches, latent
noise and cameras. Batch items may be evaluated by several worker threads;
their gradient maps are summed in item order, so the worker count never
changes the numbers.
"""
from __future__ import annotations

import os
from concurrent.futures import ThreadPoolExecutor
from dataclasses import asdict, dataclass, fields
from pathlib import Path

import numpy as np

from .autodiff import AdamW, AdamWState, Tape, Tensor, backward, no_grad, ops
from .data.checkpoint import Checkpoint
from .geometry import Scene
from .losses import DEFAULT_ALPHA, LOG_COLUMNS, LossError, LossReport, kl_loss, layout_loss, match_slots, total_loss
from .model import SINFModel
from .renderer import RenderBuffers, rasterize_soft_batch, render_loss, sample_camera, Camera

WORKERS_ENV = "SINF_WORKERS"
# seed-sequence word reserved for evaluation draws (training uses step numbers)
EVAL_STREAM = 2 ** 32 - 1
# ground-truth object's longest side is framed to this size in the render
FRAME_SIZE = 0.6


class TrainingError(RuntimeError):
    pass


@dataclass(frozen=True)
class TrainConfig:
    lr: float = 1e-4
    batch_size: int = 4
    steps: int = 5000
    checkpoint_every: int = 500
    alpha: float = DEFAULT_ALPHA
    render_resolution: int = 64
    temperature: float = 1e-2
    camera_radius: float = 1.5
    fov_deg: float = 40.0
    weight_decay: float = 0.01
    seed: int = 0

    def __post_init__(self):
        if self.lr <= 0 or self.batch_size < 1 or self.steps < 0 or self.checkpoint_every < 1:
            raise ValueError("lr, batch_size and checkpoint_every must be positive; steps nonnegative")
        if self.temperature <= 0 or self.render_resolution < 4:
            raise ValueError("temperature must be positive and render_resolution >= 4")

    def to_dict(self) -> dict:
        return asdict(self)

    @classmethod
    def from_dict(cls, d: dict) -> "TrainConfig":
        unknown = set(d) - {f.name for f in fields(cls)}
        if unknown:
            raise ValueError(f"unknown training config keys: {sorted(unknown)}")
        return cls(**d)


def worker_count() -> int:
    raw = os.environ.get(WORKERS_ENV, "1")
    try:
        n = int(raw)
    except ValueError:
        raise ValueError(f"{WORKERS_ENV} must be an integer, got {raw!r}") from None
    return max(1, n)


def _frame(scene: Scene, gt_index: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """Per-object offset and zoom that put the ground-truth object at the
    origin with its longest side FRAME_SIZE long."""
    offs, zooms = [], []
    for g in gt_index:
        box = scene.objects[g].aabb()
        offs.append(box.center)
        zooms.append(FRAME_SIZE / max(float(box.extent.max()), 1e-9))
    return np.array(offs).reshape(-1, 3), np.array(zooms)


def render_ground_truth(scene: Scene, gt_index, cam: Camera, temperature: float) -> np.ndarray:
    """Soft renders of the chosen ground-truth objects, shape (K, H, W, 4).

    Objects sharing a face list are rendered in one batched call."""
    gt_index = np.asarray(gt_index, dtype=np.int64)
    offs, zooms = _frame(scene, gt_index)
    out = np.zeros((len(gt_index), cam.height, cam.width, 4))
    groups: dict[tuple, list[int]] = {}
    for k, g in enumerate(gt_index):
        mesh = scene.objects[g].mesh
        groups.setdefault((mesh.n_vertices, mesh.faces.tobytes()), []).append(k)
    with no_grad():
        for ks in groups.values():
            meshes = [scene.objects[gt_index[k]].mesh for k in ks]
            v = np.stack([(m.vertices - offs[k]) * zooms[k] for k, m in zip(ks, meshes)])
            out[ks] = rasterize_soft_batch(Tensor(v), meshes[0].faces, cam, temperature).data
    return out


@dataclass
class ItemResult:
    total: Tensor
    kl: float
    render: float
    layout: float
    matching: list


def scene_objective(model: SINFModel, scene: Scene, grid: np.ndarray, seeds, cfg: TrainConfig) -> ItemResult:
    """Full objective for one scene: encode, sample, decode, render, compare."""
    mean, logvar = model.encode(grid)
    latent = model.reparameterize(mean, logvar, list(seeds) + [0])
    field, slots = model.decode_relationships(latent.z)
    gt_boxes = scene.boxes()
    matching = match_slots(slots.detached(), gt_boxes)
    lay = layout_loss(slots, gt_boxes, matching)
    sidx = np.array([s for s, _ in matching], dtype=np.int64)
    gidx = np.array([g for _, g in matching], dtype=np.int64)
    cam = sample_camera(list(seeds) + [1], cfg.camera_radius, cfg.fov_deg, cfg.render_resolution)
    verts = model.decode_vertices(field, slots, sidx)
    offs, zooms = _frame(scene, gidx)
    framed = ops.mul(ops.sub(verts, offs[:, None, :]), zooms[:, None, None])
    pred = rasterize_soft_batch(framed, model.template.faces, cam, cfg.temperature, cull_near=True)
    gt = render_ground_truth(scene, gidx, cam, cfg.temperature)
    rl = render_loss(RenderBuffers.from_stacked(pred), RenderBuffers.from_stacked(gt))
    kl = kl_loss(mean, logvar)
    total = total_loss(kl, rl, lay, cfg.alpha)
    return ItemResult(total, float(kl.data), float(rl.data), float(lay.data), matching)


class Trainer:
    def __init__(self, model: SINFModel, scenes: list[Scene], cfg: TrainConfig | None = None,
                 log_path=None, workers: int | None = None):
        if not scenes:
            raise TrainingError("training needs at least one scene")
        self.model = model
        self.scenes = list(scenes)
        self.cfg = cfg or TrainConfig()
        self.params = model.named_parameters()
        self.optimizer = AdamW(self.params, lr=self.cfg.lr, weight_decay=self.cfg.weight_decay)
        self.frozen = model.frozen_names()
        self.step = 0
        self.workers = workers if workers is not None else worker_count()
        self.log_path = Path(log_path) if log_path is not None else None
        self._grids: dict[int, np.ndarray] = {}
        self.history: list[LossReport] = []

    def grid(self, i: int) -> np.ndarray:
        if i not in self._grids:
            self._grids[i] = self.model.voxelize(self.scenes[i])
        return self._grids[i]

    def batch(self, step: int) -> np.ndarray:
        rng = np.random.default_rng([self.cfg.seed, step])
        n = len(self.scenes)
        return rng.choice(n, size=self.cfg.batch_size, replace=n < self.cfg.batch_size)

    def _item(self, step: int, slot: int, index: int):
        names = list(self.params)
        plist = [self.params[k] for k in names]
        with Tape() as tape:
            res = scene_objective(self.model, self.scenes[index], self.grid(index),
                                  [self.cfg.seed, step, slot], self.cfg)
            scaled = ops.mul(res.total, 1.0 / self.cfg.batch_size)
        g = backward(tape, scaled, plist)
        return res, {k: g[p.node_id] for k, p in zip(names, plist)}

    def train_step(self) -> LossReport:
        step = self.step
        idx = self.batch(step)
        for i in idx:  # fill the cache outside the workers
            self.grid(int(i))
        jobs = [(step, k, int(i)) for k, i in enumerate(idx)]
        try:
            if self.workers > 1:
                with ThreadPoolExecutor(self.workers) as pool:
                    results = list(pool.map(lambda j: self._item(*j), jobs))
            else:
                results = [self._item(*j) for j in jobs]
        except LossError as e:
            raise TrainingError(f"step {step}: {e}") from None
        grads = {k: np.zeros_like(p.data) for k, p in self.params.items()}
        for _, g in results:
            for k in grads:
                grads[k] += g[k]
        for k, g in grads.items():
            if not np.all(np.isfinite(g)):
                raise TrainingError(f"step {step}: non-finite gradient for parameter {k}")
        b = len(results)
        kl = sum(r.kl for r, _ in results) / b
        rd = sum(r.render for r, _ in results) / b
        lo = sum(r.layout for r, _ in results) / b
        report = LossReport(kl, rd, lo, self.cfg.alpha * kl + rd + lo, results[0][0].matching)
        self.optimizer.step(grads, self.frozen)
        self._log(step, report)
        self.history.append(report)
        self.step += 1
        return report

    def _log(self, step: int, report: LossReport) -> None:
        if self.log_path is None:
            return
        new = not self.log_path.exists() or step == 0
        with open(self.log_path, "w" if new else "a", encoding="utf-8") as fh:
            if new:
                fh.write("\t".join(LOG_COLUMNS) + "\n")
            fh.write(report.row(step) + "\n")

    def run(self, steps: int, checkpoint_dir=None, checkpoint_every: int | None = None, config: dict | None = None):
        every = checkpoint_every or self.cfg.checkpoint_every
        from .data.checkpoint import save_checkpoint
        for _ in range(steps):
            self.train_step()
            if checkpoint_dir is not None and self.step % every == 0:
                save_checkpoint(self.checkpoint(config), Path(checkpoint_dir) / f"step_{self.step:06d}.ckpt")
        return self.history

    # -- persistence ----------------------------------------------------------
    def checkpoint(self, config: dict | None = None) -> Checkpoint:
        st = self.optimizer.state
        opt = AdamWState(st.lr, st.beta1, st.beta2, st.eps, st.weight_decay, st.step,
                         {k: v.copy() for k, v in st.m.items()}, {k: v.copy() for k, v in st.v.items()})
        return Checkpoint(self.model.state_dict(), opt, self.step, config or {})

    def restore(self, ck: Checkpoint) -> None:
        self.model.load_state_dict(ck.params)
        if ck.optimizer is not None:
            st = self.optimizer.state
            st.step = ck.optimizer.step
            for k in self.params:
                st.m[k] = ck.optimizer.m[k].copy()
                st.v[k] = ck.optimizer.v[k].copy()
        self.step = ck.step


def evaluate_losses(model: SINFModel, scenes: list[Scene], cfg: TrainConfig, seed: int = 0) -> dict[str, float]:
    """Mean loss components over scenes with fixed noise and cameras (no gradients)."""
    acc = {"kl": 0.0, "render": 0.0, "layout": 0.0}
    with no_grad():
        for i, sc in enumerate(scenes):
            r = scene_objective(model, sc, model.voxelize(sc), [seed, EVAL_STREAM, i], cfg)
            acc["kl"] += r.kl
            acc["render"] += r.render
            acc["layout"] += r.layout
    n = max(1, len(scenes))
    out = {k: v / n for k, v in acc.items()}
    out["total"] = cfg.alpha * out["kl"] + out["render"] + out["layout"]
    return out


def smoothed(values, window: int = 20) -> np.ndarray:
    v = np.asarray(values, dtype=np.float64)
    if len(v) == 0:
        return v
    w = max(1, min(window, len(v)))
    c = np.cumsum(np.concatenate([[0.0], v]))
    return (c[w:] - c[:-w]) / w

