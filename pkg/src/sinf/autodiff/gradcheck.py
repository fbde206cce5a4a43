"""Central finite-difference gradient checking."""
from __future__ import annotations

from typing import Callable, Iterable

import numpy as np

from .tensor import Tape, Tensor, backward, no_grad


def analytic_gradient(f: Callable[[Tensor], Tensor], x: np.ndarray) -> np.ndarray:
    xt = Tensor(x, requires_grad=True)
    with Tape() as tape:
        y = f(xt)
    if y.node_id is None:
        return np.zeros_like(xt.data)
    return backward(tape, y, [xt])[xt.node_id]


def _scalar(f, x: np.ndarray) -> float:
    with no_grad():
        return float(np.asarray(f(Tensor(x)).data).reshape(-1)[0])


def numeric_gradient(
    f: Callable[[Tensor], Tensor],
    x: np.ndarray,
    eps: float = 1e-5,
    coords: Iterable[int] | None = None,
) -> tuple[np.ndarray, np.ndarray]:
    """Central differences at the flat indices ``coords`` (default: all)."""
    x = np.array(x, dtype=np.float64)
    flat = x.reshape(-1)
    idx = np.arange(flat.size) if coords is None else np.asarray(list(coords), dtype=np.int64)
    out = np.empty(idx.size)
    for n, i in enumerate(idx):
        orig = flat[i]
        flat[i] = orig + eps
        fp = _scalar(f, x)
        flat[i] = orig - eps
        fm = _scalar(f, x)
        flat[i] = orig
        out[n] = (fp - fm) / (2.0 * eps)
    return idx, out


def relative_errors(analytic: np.ndarray, numeric: np.ndarray) -> np.ndarray:
    return np.abs(analytic - numeric) / np.maximum(1e-8, np.abs(numeric))


def gradient_check(
    f: Callable[[Tensor], Tensor],
    x,
    eps: float = 1e-5,
    coords: Iterable[int] | None = None,
) -> float:
    """Max relative error between the tape gradient and central differences.

    The error at a coordinate is ``|analytic - numeric| / max(1e-8, |numeric|)``.
    ``coords`` restricts the check to a subset of flat indices.
    """
    if eps <= 0:
        raise ValueError(f"eps must be positive, got {eps}")
    x = np.array(x.data if isinstance(x, Tensor) else x, dtype=np.float64)
    g = analytic_gradient(f, x).reshape(-1)
    idx, num = numeric_gradient(f, x, eps, coords)
    if idx.size == 0:
        return 0.0
    return float(np.max(relative_errors(g[idx], num)))


def check_parameters(
    loss_fn: Callable[[], Tensor],
    params: dict[str, Tensor],
    eps: float = 1e-5,
    per_param: int = 4,
    rng: np.random.Generator | None = None,
) -> dict[str, float]:
    """Finite-difference check of ``loss_fn`` against every named parameter.

    ``loss_fn`` closes over the parameters and is re-evaluated after each
    in-place perturbation. ``per_param`` random coordinates are probed per
    tensor (all of them when the tensor is smaller).
    """
    rng = rng if rng is not None else np.random.default_rng(0)
    plist = list(params.values())
    with Tape() as tape:
        loss = loss_fn()
    grads = backward(tape, loss, plist)
    report = {}
    for name, p in params.items():
        flat = p.data.reshape(-1)
        n = flat.size
        picks = np.arange(n) if n <= per_param else np.sort(rng.choice(n, per_param, replace=False))
        g = grads[p.node_id].reshape(-1)
        worst = 0.0
        for i in picks:
            orig = flat[i]
            flat[i] = orig + eps
            with no_grad():
                fp = float(loss_fn().data)
            flat[i] = orig - eps
            with no_grad():
                fm = float(loss_fn().data)
            flat[i] = orig
            num = (fp - fm) / (2 * eps)
            worst = max(worst, abs(g[i] - num) / max(1e-8, abs(num)))
        report[name] = worst
    return report
