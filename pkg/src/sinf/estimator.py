"""Estimator facade over the model, trainer and retrieval stages."""
from __future__ import annotations

import numpy as np
from sklearn.base import BaseEstimator
from sklearn.utils.validation import check_is_fitted

from .autodiff import no_grad
from .geometry import Scene
from .model import ModelConfig, SINFModel
from .retrieval import AssetLibrary, assemble_scene
from .training import TrainConfig, Trainer, evaluate_losses
from .validation import check_scenes, clip_box_to_cube

# seed-sequence word for prior samples, kept apart from training streams
SAMPLE_STREAM = 2 ** 32 - 2


def sample_latents(n: int, dim: int, seed: int) -> np.ndarray:
    """Row i is drawn from N(0, I) with its own stream, so prefixes are stable."""
    return np.stack([np.random.default_rng([seed, SAMPLE_STREAM, i]).normal(size=dim) for i in range(n)]) \
        if n else np.zeros((0, dim))


def scene_from_latent(model: SINFModel, z, library: AssetLibrary, scene_id: str) -> Scene:
    """Decode one latent, clip the active slot boxes to the unit cube, retrieve and place assets."""
    meshes, slots = model.generate(z)
    lo, hi = slots.boxes()
    keep_shapes, centers, halves = [], [], []
    for mesh, k in zip(meshes, slots.active()):
        box = clip_box_to_cube(0.5 * (lo[k] + hi[k]), 0.5 * (hi[k] - lo[k]))
        if box is None:
            continue
        if not mesh.face_areas().sum() > 0:
            continue
        keep_shapes.append(mesh)
        centers.append(box[0])
        halves.append(box[1])
    return assemble_scene(keep_shapes, centers, halves, library, scene_id=scene_id)


class SceneSynthesizer(BaseEstimator):
    """Variational scene model with the fit / transform / sample protocol.

    ``fit`` trains on a list of normalized scenes, ``transform`` returns
    posterior means, ``sample`` decodes prior draws into assembled scenes
    and ``score`` is the negative mean held-out objective.
    """

    def __init__(self, mode: str = "full", latent_dim: int = 128, slots: int = 12, plane_resolution: int = 32,
                 plane_channels: int = 16, steps: int = 5000, lr: float = 1e-4, batch_size: int = 4,
                 alpha: float = 1e-4, render_resolution: int = 64, seed: int = 0):
        self.mode = mode
        self.latent_dim = latent_dim
        self.slots = slots
        self.plane_resolution = plane_resolution
        self.plane_channels = plane_channels
        self.steps = steps
        self.lr = lr
        self.batch_size = batch_size
        self.alpha = alpha
        self.render_resolution = render_resolution
        self.seed = seed

    def _configs(self) -> tuple[ModelConfig, TrainConfig]:
        m = ModelConfig(mode=self.mode, latent_dim=self.latent_dim, slots=self.slots,
                        plane_resolution=self.plane_resolution, plane_channels=self.plane_channels)
        t = TrainConfig(lr=self.lr, batch_size=self.batch_size, steps=self.steps, alpha=self.alpha,
                        render_resolution=self.render_resolution, seed=self.seed)
        return m, t

    def fit(self, X, y=None):
        scenes = check_scenes(X, nonempty=True)
        mcfg, tcfg = self._configs()
        self.model_ = SINFModel(mcfg, seed=self.seed)
        self.trainer_ = Trainer(self.model_, scenes, tcfg)
        self.trainer_.run(tcfg.steps)
        self.loss_history_ = [r.total for r in self.trainer_.history]
        return self

    def transform(self, X) -> np.ndarray:
        check_is_fitted(self, "model_")
        scenes = check_scenes(X, min_count=0, nonempty=True)
        with no_grad():
            return np.stack([self.model_.encode(s)[0].data for s in scenes]) if scenes \
                else np.zeros((0, self.latent_dim))

    def sample(self, n: int, library: AssetLibrary, seed: int = 0) -> list[Scene]:
        check_is_fitted(self, "model_")
        z = sample_latents(n, self.latent_dim, seed)
        return [scene_from_latent(self.model_, z[i], library, f"generated_{i:05d}") for i in range(n)]

    def score(self, X, y=None) -> float:
        check_is_fitted(self, "model_")
        scenes = check_scenes(X, nonempty=True)
        return -evaluate_losses(self.model_, scenes, self.trainer_.cfg, self.seed)["total"]
