"""Registry of every differentiable component and its finite-difference audit.

Each entry builds a small seeded problem, reduces the component's output to
a scalar with fixed random weights, and compares the tape gradient against
central differences. Errors are relative: |a - n| / max(1e-8, |n|).
"""
from __future__ import annotations

import time
from dataclasses import dataclass
from typing import Callable

import numpy as np

from .autodiff import Tape, Tensor, backward, gradient_check, inject_fault, no_grad, ops
from .geometry import icosphere

ANALYTIC_TOL = 1e-5
RASTER_TOL = 1e-3
END_TO_END_TOL = 1e-4
EPS = 1e-6


@dataclass(frozen=True)
class Component:
    name: str
    group: str          # "op", "triplane", "loss", "rasterizer" or "end-to-end"
    threshold: float
    run: Callable[[], float]
    kinds: tuple = ()   # tape op kinds this component exercises directly


REGISTRY: dict[str, Component] = {}


def register(name: str, group: str, threshold: float, kinds: tuple = ()):
    def deco(fn):
        if name in REGISTRY:
            raise ValueError(f"duplicate component {name!r}")
        REGISTRY[name] = Component(name, group, threshold, fn, kinds or (name,))
        return fn
    return deco


def _weighted(fn, shape, seed):
    w = np.random.default_rng([seed, 99]).normal(size=shape)
    return lambda x: ops.sum(ops.mul(fn(x), w))


def _check(fn, x, out_shape, seed=0, eps=EPS, coords=None) -> float:
    return gradient_check(_weighted(fn, out_shape, seed), np.asarray(x, dtype=np.float64), eps, coords)


def _away_from_zero(rng, shape, lo=0.2):
    x = rng.uniform(lo, 1.5, size=shape)
    return x * rng.choice([-1.0, 1.0], size=shape)


# --- elementwise and structural ops ------------------------------------------------

_UNARY = {
    "neg": (ops.neg, "signed"), "exp": (ops.exp, "signed"), "expm1": (ops.expm1, "signed"),
    "log": (ops.log, "positive"), "sqrt": (ops.sqrt, "positive"), "square": (ops.square, "signed"),
    "power": (lambda x: ops.power(x, 1.7), "positive"), "abs": (ops.abs, "signed"),
    "relu": (ops.relu, "signed"), "sigmoid": (ops.sigmoid, "signed"), "softplus": (ops.softplus, "signed"),
    "log_sigmoid": (ops.log_sigmoid, "signed"), "tanh": (ops.tanh, "signed"),
    "clip": (lambda x: ops.clip(x, -0.8, 0.9), "signed"),
}


def _unary_runner(name, fn, domain):
    def run():
        rng = np.random.default_rng(len(name))
        x = rng.uniform(0.3, 2.0, size=(4, 5)) if domain == "positive" else _away_from_zero(rng, (4, 5))
        if name == "clip":  # stay off the clip corners
            x = np.where(np.abs(np.abs(x) - 0.85) < 0.1, x * 0.5, x)
        return _check(fn, x, (4, 5))
    return run


for _n, (_f, _d) in _UNARY.items():
    register(_n, "op", ANALYTIC_TOL)(_unary_runner(_n, _f, _d))

_BINARY = {"add": ops.add, "sub": ops.sub, "mul": ops.mul, "div": ops.div,
           "maximum": ops.maximum, "minimum": ops.minimum}


def _binary_runner(name, fn):
    def run():
        rng = np.random.default_rng(len(name) + 100)
        a = _away_from_zero(rng, (3, 4))
        b = _away_from_zero(rng, (3, 4))
        # broadcasting on the second argument is part of the contract
        err_a = _check(lambda x: fn(x, b[0]), a, (3, 4))
        err_b = _check(lambda x: fn(a, x), b[0], (3, 4))
        return max(err_a, err_b)
    return run


for _n, _f in _BINARY.items():
    register(_n, "op", ANALYTIC_TOL)(_binary_runner(_n, _f))


@register("where", "op", ANALYTIC_TOL)
def _where():
    rng = np.random.default_rng(1)
    cond = rng.random((3, 4)) > 0.5
    b = rng.normal(size=(3, 4))
    return _check(lambda x: ops.where(cond, x, b), rng.normal(size=(3, 4)), (3, 4))


@register("sum", "op", ANALYTIC_TOL)
def _sum():
    x = np.random.default_rng(2).normal(size=(3, 4, 2))
    return max(_check(lambda t: ops.sum(t, axis=1), x, (3, 2)),
               _check(lambda t: ops.sum(t, axis=(0, 2), keepdims=True), x, (1, 4, 1)))


@register("mean", "op", ANALYTIC_TOL)
def _mean():
    x = np.random.default_rng(3).normal(size=(3, 4))
    return max(_check(lambda t: ops.mean(t, axis=0), x, (4,)), _check(ops.mean, x, ()))


@register("l1_distance", "op", ANALYTIC_TOL)
def _l1():
    rng = np.random.default_rng(4)
    b = rng.normal(size=(3, 4))
    return _check(lambda t: ops.l1_distance(t, b), b + _away_from_zero(rng, (3, 4)), ())


@register("l2_norm", "op", ANALYTIC_TOL)
def _l2():
    x = np.random.default_rng(5).normal(size=(3, 4))
    return max(_check(lambda t: ops.l2_norm(t, axis=1), x, (3,)), _check(ops.l2_norm, x, ()))


@register("matmul", "op", ANALYTIC_TOL)
def _matmul():
    rng = np.random.default_rng(6)
    a, b = rng.normal(size=(2, 3, 4)), rng.normal(size=(4, 5))
    return max(_check(lambda t: ops.matmul(t, b), a, (2, 3, 5)), _check(lambda t: ops.matmul(a, t), b, (2, 3, 5)))


@register("linear", "op", ANALYTIC_TOL, ("matmul", "add"))
def _linear():
    rng = np.random.default_rng(7)
    x, w, bias = rng.normal(size=(5, 3)), rng.normal(size=(3, 4)), rng.normal(size=4)
    return max(_check(lambda t: ops.linear(t, w, bias), x, (5, 4)),
               _check(lambda t: ops.linear(x, t, bias), w, (5, 4)),
               _check(lambda t: ops.linear(x, w, t), bias, (5, 4)))


@register("reshape", "op", ANALYTIC_TOL)
def _reshape():
    return _check(lambda t: ops.reshape(t, (6, 2)), np.random.default_rng(8).normal(size=(3, 4)), (6, 2))


@register("transpose", "op", ANALYTIC_TOL)
def _transpose():
    return _check(lambda t: ops.transpose(t, (2, 0, 1)), np.random.default_rng(9).normal(size=(2, 3, 4)), (4, 2, 3))


@register("swapaxes", "op", ANALYTIC_TOL)
def _swapaxes():
    return _check(lambda t: ops.swapaxes(t, 0, 2), np.random.default_rng(10).normal(size=(2, 3, 4)), (4, 3, 2))


@register("concat", "op", ANALYTIC_TOL)
def _concat():
    rng = np.random.default_rng(11)
    b = rng.normal(size=(2, 4))
    return _check(lambda t: ops.concat([t, b, t], axis=0), rng.normal(size=(3, 4)), (8, 4))


@register("stack", "op", ANALYTIC_TOL)
def _stack():
    rng = np.random.default_rng(12)
    b = rng.normal(size=(3, 4))
    return _check(lambda t: ops.stack([b, t], axis=1), rng.normal(size=(3, 4)), (3, 2, 4))


@register("slice", "op", ANALYTIC_TOL, ("getitem",))
def _slice():
    idx = np.array([0, 2, 2, 1])
    x = np.random.default_rng(13).normal(size=(3, 4))
    return max(_check(lambda t: ops.getitem(t, (slice(1, 3), slice(None, None, 2))), x, (2, 2)),
               _check(lambda t: ops.getitem(t, idx), x, (4, 4)))


@register("take", "op", ANALYTIC_TOL)
def _take():
    idx = np.array([3, 0, 3, 1])
    return _check(lambda t: ops.take(t, idx, axis=1), np.random.default_rng(14).normal(size=(2, 4, 3)), (2, 4, 3))


@register("segment_sum", "op", ANALYTIC_TOL)
def _segment_sum():
    ids = np.array([0, 2, 2, 1, 0, 2])
    return _check(lambda t: ops.segment_sum(t, ids, 4), np.random.default_rng(15).normal(size=(6, 3)), (4, 3))


@register("softmax", "op", ANALYTIC_TOL)
def _softmax():
    return _check(lambda t: ops.softmax(t, axis=-1), np.random.default_rng(16).normal(size=(3, 5)), (3, 5))


@register("layer_norm", "op", ANALYTIC_TOL)
def _layer_norm():
    rng = np.random.default_rng(17)
    x, g, b = rng.normal(size=(3, 6)), rng.normal(size=6), rng.normal(size=6)
    return max(_check(lambda t: ops.layer_norm(t, g, b), x, (3, 6)),
               _check(lambda t: ops.layer_norm(x, t, b), g, (3, 6)),
               _check(lambda t: ops.layer_norm(x, g, t), b, (3, 6)))


@register("conv3d", "op", ANALYTIC_TOL)
def _conv3d():
    rng = np.random.default_rng(18)
    x, w, b = rng.normal(size=(2, 6, 6, 6)), rng.normal(size=(3, 2, 4, 4, 4)), rng.normal(size=3)
    shape = (3, 3, 3, 3)
    return max(_check(lambda t: ops.conv3d(t, w, b, 2, 1), x, shape, coords=range(0, 432, 7)),
               _check(lambda t: ops.conv3d(x, t, b, 2, 1), w, shape, coords=range(0, 384, 5)),
               _check(lambda t: ops.conv3d(x, w, t, 2, 1), b, shape))


@register("conv_transpose2d", "op", ANALYTIC_TOL)
def _conv_t():
    rng = np.random.default_rng(19)
    x, w, b = rng.normal(size=(3, 4, 4)), rng.normal(size=(3, 2, 4, 4)), rng.normal(size=2)
    shape = (2, 8, 8)
    return max(_check(lambda t: ops.conv_transpose2d(t, w, b), x, shape),
               _check(lambda t: ops.conv_transpose2d(x, t, b), w, shape),
               _check(lambda t: ops.conv_transpose2d(x, w, t), b, shape))


@register("attention", "op", ANALYTIC_TOL)
def _attention():
    rng = np.random.default_rng(20)
    q, k, v = rng.normal(size=(3, 2, 5, 4))

    def run(which):
        def f(t):
            args = [q, k, v]
            args[which] = t
            return ops.attention(*args, 0.5)
        return f
    return max(_check(run(i), (q, k, v)[i], (2, 5, 4)) for i in range(3))


@register("transformer_block", "op", ANALYTIC_TOL, ("attention", "layer_norm", "matmul"))
def _block():
    from .autodiff.nn import TransformerBlock
    rng = np.random.default_rng(20)
    block = TransformerBlock(8, 2, rng)
    return _check(block, rng.normal(size=(2, 5, 8)), (2, 5, 8), coords=range(0, 80, 3))


# --- tri-plane -------------------------------------------------------------------

def _field_problem():
    rng = np.random.default_rng(21)
    planes = rng.normal(size=(3, 8, 8, 4))
    pts = rng.uniform(-0.45, 0.45, size=(12, 3))
    return planes, pts


@register("triplane_planes", "triplane", ANALYTIC_TOL, ("take", "mul", "add"))
def _tp_planes():
    from .triplane import TriPlaneField, sample_field_batch
    planes, pts = _field_problem()
    return _check(lambda t: sample_field_batch(TriPlaneField(t), pts), planes, (12, 4), coords=range(0, planes.size, 3))


@register("triplane_points", "triplane", ANALYTIC_TOL, ("take", "mul", "add"))
def _tp_points():
    from .triplane import TriPlaneField, sample_field_batch
    planes, pts = _field_problem()
    field = TriPlaneField(Tensor(planes))
    return _check(lambda t: sample_field_batch(field, t), pts, (12, 4))


# --- losses --------------------------------------------------------------------------

@register("kl_loss", "loss", ANALYTIC_TOL)
def _kl():
    from .losses import kl_loss
    rng = np.random.default_rng(22)
    mu, lv = rng.normal(size=6), rng.normal(size=6) * 0.5
    return max(gradient_check(lambda t: kl_loss(t, Tensor(lv)), mu, EPS),
               gradient_check(lambda t: kl_loss(Tensor(mu), t), lv, EPS))


@register("render_loss", "loss", ANALYTIC_TOL)
def _render_loss():
    from .renderer import RenderBuffers, render_loss
    rng = np.random.default_rng(23)
    gt = np.concatenate([rng.uniform(0, 1, (2, 6, 6, 1)), rng.normal(size=(2, 6, 6, 3))], axis=-1)
    pred = gt + _away_from_zero(rng, gt.shape, 0.05) * 0.3
    pred[..., 0] = np.clip(pred[..., 0], 0.01, 0.99)
    gtb = RenderBuffers.from_stacked(Tensor(gt))
    return gradient_check(lambda t: render_loss(RenderBuffers.from_stacked(t), gtb), pred, EPS)


def _layout_problem():
    from .geometry import AABB
    rng = np.random.default_rng(24)
    m = 5
    center = rng.uniform(-0.3, 0.3, size=(m, 3))
    log_scale = np.log(rng.uniform(0.05, 0.2, size=(m, 3)))
    presence = rng.normal(size=m)
    boxes = []
    for k in range(3):
        c = center[k] + rng.normal(size=3) * 0.03
        h = np.exp(log_scale[k]) * rng.uniform(0.7, 1.3, size=3)
        boxes.append(AABB(c - h, c + h))
    return center, log_scale, presence, boxes


@register("layout_loss", "loss", ANALYTIC_TOL, ("maximum", "minimum", "log_sigmoid"))
def _layout():
    from .losses import layout_loss, match_slots
    from .model import LayoutSlots
    center, log_scale, presence, boxes = _layout_problem()
    match = match_slots(LayoutSlots(Tensor(center), Tensor(log_scale), Tensor(presence)), boxes)

    def f(which):
        def g(t):
            parts = [Tensor(center), Tensor(log_scale), Tensor(presence)]
            parts[which] = t
            return layout_loss(LayoutSlots(*parts), boxes, match)
        return g
    return max(gradient_check(f(0), center, EPS), gradient_check(f(1), log_scale, EPS),
               gradient_check(f(2), presence, EPS))


# --- rasterizer ----------------------------------------------------------------------

def _raster_problem(res=32):
    from .renderer import Camera, sample_camera
    mesh = icosphere(2)
    cam = sample_camera(3)
    return mesh, mesh.vertices * 0.3, Camera(cam.position, cam.fov_deg, res, res)


@register("signed_edge_distance", "rasterizer", RASTER_TOL)
def _sed():
    from .renderer import signed_edge_distance
    rng = np.random.default_rng(25)
    xy = rng.uniform(-0.8, 0.8, size=(7, 2))
    tri = np.array([[0, 1, 2], [2, 3, 4], [4, 5, 6], [6, 0, 3], [1, 3, 5], [0, 2, 4], [5, 1, 6], [3, 2, 1]])
    px, py = rng.uniform(-1, 1, size=8), rng.uniform(-1, 1, size=8)
    return _check(lambda t: signed_edge_distance(t, tri, px, py), xy, (8,))


@register("soft_accumulate", "rasterizer", RASTER_TOL)
def _soft_acc():
    from .renderer import soft_accumulate
    rng = np.random.default_rng(26)
    p = 10
    sd = rng.normal(size=p) * 0.02
    depth = rng.uniform(1.0, 1.05, size=p)
    normal = rng.normal(size=(p, 3))
    pix = np.sort(rng.integers(0, 4, size=p))
    shift = np.full(4, depth.min())

    def run(which):
        def g(t):
            args = [Tensor(sd), Tensor(depth), Tensor(normal)]
            args[which] = t
            return soft_accumulate(*args, pix, 4, shift, 1e-2, 1e-2)
        return g
    return max(_check(run(0), sd, (4, 5)), _check(run(1), depth, (4, 5)), _check(run(2), normal, (4, 5)))


@register("rasterize_soft", "rasterizer", RASTER_TOL, ("signed_edge_distance", "soft_accumulate"))
def _raster():
    from .renderer import rasterize_soft_batch
    mesh, v0, cam = _raster_problem()
    coords = np.random.default_rng(27).choice(v0.size, 40, replace=False)
    fn = lambda t: rasterize_soft_batch(ops.reshape(t, (1,) + v0.shape), mesh.faces, cam, 1e-2)[0]
    return _check(fn, v0, (cam.height, cam.width, 4), coords=coords)


# --- end to end ------------------------------------------------------------------------

def _tiny_setup():
    from .data.synth import SynthConfig, synth_scene
    from .model import ModelConfig, SINFModel
    from .training import TrainConfig
    mcfg = ModelConfig(latent_dim=8, slots=4, plane_resolution=8, plane_channels=4, template_level=1,
                       transformer_layers=1, transformer_heads=2, transformer_width=8, voxel_resolution=8)
    model = SINFModel(mcfg, seed=0)
    # the displacement head starts at zero, which would hide every gradient behind it
    out = model.instances.out.weight
    out.data[...] = np.random.default_rng(28).normal(size=out.shape) * 0.1
    scene, _ = synth_scene(0, SynthConfig(count_range=(2, 3), max_slots=4, seed=5))
    return model, scene, TrainConfig(render_resolution=16)


@register("encode_decode_render", "end-to-end", END_TO_END_TOL, ("conv3d", "conv_transpose2d", "attention"))
def _end_to_end(per_param: int = 2):
    """Full chain against every parameter tensor, probing the coordinates
    with the largest analytic gradients."""
    from .training import scene_objective
    model, scene, tcfg = _tiny_setup()
    grid = model.voxelize(scene)
    params = model.named_parameters()

    def loss():
        return scene_objective(model, scene, grid, [0, 0, 0], tcfg).total

    plist = list(params.values())
    with Tape() as tape:
        out = loss()
    grads = backward(tape, out, plist)
    worst = 0.0
    for p in plist:
        g = grads[p.node_id].reshape(-1)
        flat = p.data.reshape(-1)
        for i in np.argsort(-np.abs(g), kind="stable")[:per_param]:
            if g[i] == 0.0:
                continue
            orig = flat[i]
            flat[i] = orig + EPS
            with no_grad():
                fp = float(loss().data)
            flat[i] = orig - EPS
            with no_grad():
                fm = float(loss().data)
            flat[i] = orig
            num = (fp - fm) / (2 * EPS)
            worst = max(worst, abs(g[i] - num) / max(1e-8, abs(num)))
    return worst


# --- driver ------------------------------------------------------------------------------

@dataclass(frozen=True)
class AuditRow:
    name: str
    group: str
    error: float
    threshold: float
    seconds: float

    @property
    def passed(self) -> bool:
        return bool(np.isfinite(self.error) and self.error < self.threshold)


def run_audit(names=None, fault: str | None = None, factor: float = 1.5) -> list[AuditRow]:
    """Run the registered checks (all by default). ``fault`` names an op kind
    whose backward rule is corrupted for the duration, to prove the audit
    notices."""
    chosen = list(REGISTRY) if names is None else list(names)
    unknown = [n for n in chosen if n not in REGISTRY]
    if unknown:
        raise KeyError(f"unknown components: {unknown}")
    rows = []
    for n in chosen:
        c = REGISTRY[n]
        t0 = time.perf_counter()
        if fault is None:
            err = c.run()
        else:
            with inject_fault(fault, factor):
                err = c.run()
        rows.append(AuditRow(n, c.group, float(err), c.threshold, time.perf_counter() - t0))
    return rows


def format_table(rows) -> str:
    lines = [f"{'component':<24} {'group':<11} {'max rel err':>12} {'threshold':>10}  result"]
    for r in rows:
        verdict = "PASS" if r.passed else "FAIL"
        lines.append(f"{r.name:<24} {r.group:<11} {r.error:>12.3e} {r.threshold:>10.0e}  {verdict}")
    return "\n".join(lines)
