"""Evaluation metrics over top-down normal renders.

``fid_style`` is a Frechet distance between Gaussian fits of a handcrafted
grid-moment embedding, not of an Inception network; its values are only
comparable with other values from this module.
"""
from __future__ import annotations

import json
from collections import Counter
from dataclasses import dataclass
from pathlib import Path

import numpy as np
from scipy.spatial.distance import pdist

from .autodiff import AdamW, Tape, Tensor, backward, no_grad, ops
from .autodiff.nn import Linear, Module
from .geometry import Scene
from .renderer import topdown_render

GRID = 8
FEATURE_DIM = GRID * GRID * 3 * 2
PSD_TOLERANCE = 1e-9
KL_SMOOTHING = 1e-6
SCA_MIN_SAMPLES = 32
SCA_HIDDEN = 32
SCA_STEPS = 200
SCA_LR = 1e-2
SCA_TEST_FRACTION = 0.2
FID_LABEL = "FID-style (grid-moment embedding, not Inception)"


class MetricError(ValueError):
    pass


def _cell_bounds(n: int) -> np.ndarray:
    return np.linspace(0, n, GRID + 1).round().astype(int)


def extract_features(image: np.ndarray) -> np.ndarray:
    """Per-cell channel means and second moments on an 8x8 grid, (384,).

    Layout: index ((i * 8 + j) * 3 + c) * 2 + m for cell row i, cell column
    j, channel c and moment m (0 = mean, 1 = mean of squares).
    """
    img = np.asarray(image, dtype=np.float64)
    if img.ndim != 3 or img.shape[2] != 3 or img.shape[0] < GRID or img.shape[1] < GRID:
        raise MetricError(f"expected an (H, W, 3) normal image with H, W >= {GRID}, got {img.shape}")
    rb, cb = _cell_bounds(img.shape[0]), _cell_bounds(img.shape[1])
    # cell sums through a 2-D prefix sum
    out = np.empty((GRID, GRID, 3, 2))
    for m, arr in enumerate((img, img * img)):
        pre = np.zeros((img.shape[0] + 1, img.shape[1] + 1, 3))
        pre[1:, 1:] = arr.cumsum(0).cumsum(1)
        s = pre[rb[1:]][:, cb[1:]] - pre[rb[:-1]][:, cb[1:]] - pre[rb[1:]][:, cb[:-1]] + pre[rb[:-1]][:, cb[:-1]]
        area = np.outer(np.diff(rb), np.diff(cb))[:, :, None]
        out[:, :, :, m] = s / area
    return out.reshape(-1)


@dataclass(frozen=True)
class FeatureSummary:
    mean: np.ndarray
    covariance: np.ndarray
    n: int

    @classmethod
    def from_features(cls, feats) -> "FeatureSummary":
        f = np.asarray(feats, dtype=np.float64)
        if f.ndim != 2 or len(f) == 0:
            raise MetricError("need a nonempty (n, k) feature matrix")
        mu = f.mean(axis=0)
        if len(f) > 1:
            d = f - mu
            cov = d.T @ d / (len(f) - 1)
        else:
            cov = np.zeros((f.shape[1], f.shape[1]))
        return cls(mu, 0.5 * (cov + cov.T), len(f))

    @classmethod
    def from_images(cls, images) -> "FeatureSummary":
        return cls.from_features(np.stack([extract_features(im) for im in images]))


def _psd_eigh(a: np.ndarray, what: str) -> tuple[np.ndarray, np.ndarray]:
    a = 0.5 * (a + a.T)
    w, v = np.linalg.eigh(a)
    tol = PSD_TOLERANCE * max(1.0, float(np.abs(w).max(initial=0.0)))
    if w.size and w.min() < -tol:
        raise MetricError(f"{what} is not positive semidefinite (min eigenvalue {w.min():.3g})")
    return np.clip(w, 0.0, None), v


def sqrtm_psd(a: np.ndarray) -> np.ndarray:
    """Symmetric square root of a PSD matrix via eigendecomposition."""
    w, v = _psd_eigh(np.asarray(a, dtype=np.float64), "matrix")
    return (v * np.sqrt(w)) @ v.T


def frechet_distance(a: FeatureSummary, b: FeatureSummary) -> float:
    if a.mean.shape != b.mean.shape:
        raise MetricError(f"feature sizes differ: {a.mean.shape} vs {b.mean.shape}")
    _psd_eigh(b.covariance, "covariance")
    sa = sqrtm_psd(a.covariance)
    # tr (Ca Cb)^(1/2) = tr (Ca^(1/2) Cb Ca^(1/2))^(1/2), and the latter is symmetric
    w, _ = _psd_eigh(sa @ b.covariance @ sa, "covariance product")
    d = a.mean - b.mean
    return float(d @ d + np.trace(a.covariance) + np.trace(b.covariance) - 2.0 * np.sqrt(w).sum())


def category_histogram(scenes) -> dict[str, float]:
    counts = Counter(c for s in scenes for c in s.categories())
    total = sum(counts.values())
    if total == 0:
        return {}
    return {k: counts[k] / total for k in sorted(counts)}


def category_kl(p: dict[str, float], q: dict[str, float]) -> float:
    """KL(p || q) over the union vocabulary, with 0 log 0 = 0.

    q is smoothed (each entry + 1e-6, renormalized) only when it is zero
    somewhere p is positive; otherwise the plain sum is returned.
    """
    vocab = sorted(set(p) | set(q))
    pv = np.array([p.get(k, 0.0) for k in vocab], dtype=np.float64)
    qv = np.array([q.get(k, 0.0) for k in vocab], dtype=np.float64)
    for name, v in (("p", pv), ("q", qv)):
        if np.any(v < 0) or abs(v.sum() - 1.0) > 1e-12:
            raise MetricError(f"{name} is not a probability histogram")
    support = pv > 0
    if np.any(qv[support] == 0):
        qv = (qv + KL_SMOOTHING) / (1.0 + KL_SMOOTHING * len(qv))
    # log p - log q rather than log(p / q): the ratio overflows for subnormal q
    ps, qs = pv[support], qv[support]
    return float(max(0.0, np.sum(ps * (np.log(ps) - np.log(qs)))))


def diversity(images) -> float:
    """Mean Euclidean distance over all ordered pairs of distinct images."""
    flat = [np.asarray(im, dtype=np.float64).reshape(-1) for im in images]
    if len(flat) < 2:
        raise MetricError("diversity needs at least two images")
    if len({f.size for f in flat}) != 1:
        raise MetricError("diversity needs images of equal resolution")
    return float(pdist(np.stack(flat)).mean())


class _MLP(Module):
    def __init__(self, n_in: int, rng):
        self.hidden = Linear(n_in, SCA_HIDDEN, rng)
        self.out = Linear(SCA_HIDDEN, 1, rng)

    def __call__(self, x):
        return ops.reshape(self.out(ops.relu(self.hidden(x))), (-1,))


def sca(real_images, fake_images, seed: int = 0) -> float:
    """Held-out accuracy of a small real-vs-fake classifier (0.5 = indistinguishable)."""
    if min(len(real_images), len(fake_images)) < SCA_MIN_SAMPLES:
        raise MetricError(f"sca needs at least {SCA_MIN_SAMPLES} images per set")
    x = np.stack([extract_features(im) for im in list(real_images) + list(fake_images)])
    y = np.concatenate([np.zeros(len(real_images)), np.ones(len(fake_images))])
    return sca_features(x, y, seed)


def _split(x: np.ndarray, y: np.ndarray, rng) -> tuple[np.ndarray, np.ndarray]:
    """Random test/train split in which identical feature rows carrying both
    labels stay in one fold; otherwise a twin in the training fold hands the
    classifier the opposite label and accuracy drops far below chance."""
    _, inv = np.unique(x, axis=0, return_inverse=True)
    inv = inv.reshape(-1)
    has_real = np.zeros(inv.max() + 1, dtype=bool)
    has_fake = np.zeros_like(has_real)
    has_real[inv[y < 0.5]] = True
    has_fake[inv[y > 0.5]] = True
    mixed = has_real & has_fake
    group = np.where(mixed[inv], inv, inv.max() + 1 + np.arange(len(x)))
    keys, group = np.unique(group, return_inverse=True)
    rank = np.empty(len(keys), dtype=np.int64)
    rank[rng.permutation(len(keys))] = np.arange(len(keys))
    order = np.argsort(rank[group], kind="stable")
    cut = max(1, int(round(SCA_TEST_FRACTION * len(x))))
    while cut < len(order) and group[order[cut]] == group[order[cut - 1]]:
        cut += 1
    return order[:cut], order[cut:]


def sca_features(x: np.ndarray, y: np.ndarray, seed: int = 0) -> float:
    rng = np.random.default_rng(seed)
    test, train = _split(x, y, rng)
    mu, sd = x[train].mean(axis=0), x[train].std(axis=0)
    sd = np.where(sd > 1e-12, sd, 1.0)
    xs = (x - mu) / sd
    net = _MLP(x.shape[1], rng)
    params = net.named_parameters()
    opt = AdamW(params, lr=SCA_LR)
    xt, yt = Tensor(xs[train]), y[train]
    for _ in range(SCA_STEPS):
        with Tape() as tape:
            logit = net(xt)
            # binary cross-entropy with logits
            loss = ops.mean(ops.sub(ops.softplus(logit), ops.mul(logit, yt)))
        plist = list(params.values())
        g = backward(tape, loss, plist)
        opt.step({k: g[p.node_id] for k, p in params.items()})
    with no_grad():
        pred = net(Tensor(xs[test])).data > 0
    return float(np.mean(pred == (y[test] > 0.5)))


# --- corpus evaluation ----------------------------------------------------------

def render_corpus(scenes, resolution: int = 256) -> list[np.ndarray]:
    return [topdown_render(s, resolution) for s in scenes]


def evaluate(generated: list[Scene], reference: list[Scene], resolution: int = 256, seed: int = 0,
             generated_images=None, reference_images=None) -> dict:
    if not generated or not reference:
        raise MetricError("both corpora must be nonempty")
    gi = generated_images if generated_images is not None else render_corpus(generated, resolution)
    ri = reference_images if reference_images is not None else render_corpus(reference, resolution)
    if {np.shape(im) for im in gi} != {np.shape(im) for im in ri}:
        raise MetricError("generated and reference renders have different resolutions")
    report = {
        "fid_style": frechet_distance(FeatureSummary.from_images(gi), FeatureSummary.from_images(ri)),
        "category_kl": category_kl(category_histogram(reference), category_histogram(generated)),
        "sca": sca(ri, gi, seed) if min(len(gi), len(ri)) >= SCA_MIN_SAMPLES else None,
        "diversity": diversity(gi) if len(gi) >= 2 else None,
        "n_scenes": len(generated),
        "n_reference": len(reference),
        "resolution": int(np.shape(gi[0])[0]),
        "seed": int(seed),
        "fid_note": FID_LABEL,
    }
    return report


def write_report(report: dict, path) -> Path:
    path = Path(path)
    path.write_text(json.dumps(report, indent=2, sort_keys=True) + "\n", encoding="utf-8")
    return path
