"""Training objective: KL prior term, matched layout term, weighted total."""
from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np
from scipy.optimize import linear_sum_assignment

from .autodiff import Tensor, ops
from .geometry import AABB
from .model import LayoutSlots

DEFAULT_ALPHA = 1e-4
LOG_COLUMNS = ("step", "kl", "render", "layout", "total")


class LossError(ValueError):
    pass


@dataclass
class LossReport:
    kl: float
    render: float
    layout: float
    total: float
    matching: list = field(default_factory=list)

    def row(self, step: int) -> str:
        """One tab-separated training log record (floats in repr form)."""
        return "\t".join([str(step)] + [repr(float(v)) for v in (self.kl, self.render, self.layout, self.total)])


def kl_loss(mean, logvar) -> Tensor:
    """KL(N(mean, exp(logvar)) || N(0, I)) summed over latent dimensions."""
    mean = mean if isinstance(mean, Tensor) else Tensor(mean)
    logvar = logvar if isinstance(logvar, Tensor) else Tensor(logvar)
    if mean.shape != logvar.shape:
        raise LossError(f"mean {mean.shape} and logvar {logvar.shape} differ")
    # expm1(v) - v keeps every term nonnegative under rounding, unlike exp(v) - 1 - v
    terms = ops.add(ops.square(mean), ops.sub(ops.expm1(logvar), logvar))
    return ops.mul(ops.sum(terms), 0.5)


def _centers(gt_objects) -> np.ndarray:
    return np.array([b.center for b in gt_objects], dtype=np.float64).reshape(-1, 3)


def match_slots(slots: LayoutSlots, gt_objects) -> list[tuple[int, int]]:
    """Minimum total center-distance assignment of objects to slots.

    Returns (slot, object) pairs ordered by object index. Among equal-cost
    optima the assignment whose slot sequence (in object order) is
    lexicographically smallest is chosen.
    """
    gt = list(gt_objects)
    if not gt:
        raise LossError("match_slots needs at least one ground-truth object")
    m = slots.M
    if len(gt) > m:
        raise LossError(f"scene has {len(gt)} objects but the model has only {m} slots")
    cost = np.linalg.norm(_centers(gt)[:, None, :] - slots.center.data[None, :, :], axis=2)
    if not np.all(np.isfinite(cost)):
        raise LossError("non-finite layout: slot centers contain NaN or inf")
    rows, cols = linear_sum_assignment(cost)
    best = float(cost[rows, cols].sum())
    tol = 1e-12 * max(1.0, best)

    fixed: list[int] = []
    for g in range(len(gt)):
        free_gt = list(range(g + 1, len(gt)))
        for s in range(m):
            if s in fixed:
                continue
            used = fixed + [s]
            base = float(sum(cost[k, used[k]] for k in range(g + 1)))
            if base > best + tol:
                continue
            rest = 0.0
            if free_gt:
                cand = [j for j in range(m) if j not in used]
                sub = cost[np.ix_(free_gt, cand)]
                r, c = linear_sum_assignment(sub)
                rest = float(sub[r, c].sum())
            if base + rest <= best + tol:
                fixed.append(s)
                break
        else:  # pragma: no cover - the optimum always admits a completion
            raise LossError("matching failed to complete")
    return [(s, g) for g, s in enumerate(fixed)]


def aabb_iou(slot_center: Tensor, slot_scale: Tensor, lo: np.ndarray, hi: np.ndarray) -> Tensor:
    """Differentiable IoU of K slot boxes against K fixed boxes; shapes (K, 3)."""
    s_lo = ops.sub(slot_center, slot_scale)
    s_hi = ops.add(slot_center, slot_scale)
    # maximum routes ties to its first argument: touching faces keep a gradient
    side = ops.maximum(ops.sub(ops.minimum(s_hi, hi), ops.maximum(s_lo, lo)), 0.0)
    inter = ops.mul(ops.mul(side[:, 0], side[:, 1]), side[:, 2])
    ext = ops.mul(slot_scale, 2.0)
    vol_s = ops.mul(ops.mul(ext[:, 0], ext[:, 1]), ext[:, 2])
    vol_g = np.prod(hi - lo, axis=1)
    union = ops.sub(ops.add(vol_s, vol_g), inter)
    return ops.div(inter, union)


def layout_loss(slots: LayoutSlots, gt_objects, matching) -> Tensor:
    """mean(1 - IoU) over matched pairs + mean presence BCE over all slots."""
    gt = list(gt_objects)
    pairs = list(matching)
    target = np.zeros(slots.M)
    for s, _ in pairs:
        target[s] = 1.0
    logits = slots.presence
    bce = ops.mean(ops.sub(ops.softplus(logits), ops.mul(logits, target)))
    if not pairs:
        return bce
    sidx = np.array([s for s, _ in pairs])
    lo = np.array([gt[g].lo for _, g in pairs])
    hi = np.array([gt[g].hi for _, g in pairs])
    iou = aabb_iou(ops.take(slots.center, sidx), ops.take(slots.scale(), sidx), lo, hi)
    return ops.add(ops.mean(ops.sub(1.0, iou)), bce)


def layout_loss_reference(slots: LayoutSlots, gt_objects, matching) -> float:
    """Per-pair recomputation with plain floats (test oracle)."""
    from .geometry import iou3d
    lo, hi = slots.boxes()
    pairs = list(matching)
    iou_term = 0.0
    for s, g in pairs:
        iou_term += 1.0 - iou3d(AABB(lo[s], hi[s]), gt_objects[g])
    matched = {s for s, _ in pairs}
    bce = 0.0
    for k, x in enumerate(slots.presence.data):
        y = 1.0 if k in matched else 0.0
        bce += max(x, 0.0) + math.log1p(math.exp(-abs(x))) - y * x
    total = bce / slots.M
    if pairs:
        total += iou_term / len(pairs)
    return total


def total_loss(kl, render, layout, alpha: float = DEFAULT_ALPHA) -> Tensor:
    """alpha * kl + render + layout; non-finite components are rejected by name."""
    parts = {"kl": kl, "render": render, "layout": layout}
    for name, v in parts.items():
        val = v.data if isinstance(v, Tensor) else np.asarray(v, dtype=np.float64)
        if not np.all(np.isfinite(val)):
            raise LossError(f"non-finite {name} loss: {val}")
    return ops.add(ops.add(ops.mul(kl, alpha), render), layout)
