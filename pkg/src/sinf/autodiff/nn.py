"""Small layer library on top of the tape engine."""
from __future__ import annotations

import math

import numpy as np

from . import ops
from .tensor import Tensor


def uniform_init(rng: np.random.Generator, shape, fan_in: int) -> np.ndarray:
    bound = 1.0 / math.sqrt(fan_in)
    return rng.uniform(-bound, bound, size=shape)


class Module:
    """Parameter container; parameters and submodules are discovered from attributes."""

    def named_parameters(self, prefix: str = "") -> dict[str, Tensor]:
        out: dict[str, Tensor] = {}
        for key, value in vars(self).items():
            name = f"{prefix}{key}"
            if isinstance(value, Tensor) and value.requires_grad:
                out[name] = value
            elif isinstance(value, Module):
                out.update(value.named_parameters(name + "."))
            elif isinstance(value, (list, tuple)):
                for i, item in enumerate(value):
                    if isinstance(item, Module):
                        out.update(item.named_parameters(f"{name}.{i}."))
        return out

    def parameters(self) -> list[Tensor]:
        return list(self.named_parameters().values())

    def n_parameters(self) -> int:
        return sum(p.size for p in self.parameters())


class Linear(Module):
    def __init__(self, n_in: int, n_out: int, rng: np.random.Generator, bias: bool = True,
                 zero: bool = False):
        w = np.zeros((n_in, n_out)) if zero else uniform_init(rng, (n_in, n_out), n_in)
        self.weight = Tensor(w, requires_grad=True)
        self.bias = None
        if bias:
            b = np.zeros(n_out) if zero else uniform_init(rng, (n_out,), n_in)
            self.bias = Tensor(b, requires_grad=True)

    def __call__(self, x: Tensor) -> Tensor:
        return ops.linear(x, self.weight, self.bias)


class LayerNorm(Module):
    def __init__(self, n: int):
        self.gamma = Tensor(np.ones(n), requires_grad=True)
        self.beta = Tensor(np.zeros(n), requires_grad=True)

    def __call__(self, x: Tensor) -> Tensor:
        return ops.layer_norm(x, self.gamma, self.beta)


class Conv3d(Module):
    def __init__(self, c_in: int, c_out: int, k: int, rng: np.random.Generator, stride=1, padding=0):
        fan_in = c_in * k ** 3
        self.weight = Tensor(uniform_init(rng, (c_out, c_in, k, k, k), fan_in), requires_grad=True)
        self.bias = Tensor(uniform_init(rng, (c_out,), fan_in), requires_grad=True)
        self.stride, self.padding = stride, padding

    def __call__(self, x: Tensor) -> Tensor:
        return ops.conv3d(x, self.weight, self.bias, self.stride, self.padding)


class ConvTranspose2d(Module):
    def __init__(self, c_in: int, c_out: int, k: int, rng: np.random.Generator, stride=2, padding=1):
        # each output pixel of a stride-s transposed conv sees c_in * (k/s)^2 inputs
        fan_in = max(1, c_in * (k // stride) ** 2)
        self.weight = Tensor(uniform_init(rng, (c_in, c_out, k, k), fan_in), requires_grad=True)
        self.bias = Tensor(uniform_init(rng, (c_out,), fan_in), requires_grad=True)
        self.stride, self.padding = stride, padding

    def __call__(self, x: Tensor) -> Tensor:
        return ops.conv_transpose2d(x, self.weight, self.bias, self.stride, self.padding)


class MultiHeadAttention(Module):
    """Full (unmasked) self-attention over axis -2 of a (..., T, D) input."""

    def __init__(self, width: int, heads: int, rng: np.random.Generator):
        if width % heads:
            raise ValueError(f"width {width} not divisible by {heads} heads")
        self.heads = heads
        self.qkv = Linear(width, 3 * width, rng)
        self.proj = Linear(width, width, rng)

    def __call__(self, x: Tensor) -> Tensor:
        *lead, t, d = x.shape
        h = self.heads
        dh = d // h
        qkv = self.qkv(x)
        qkv = ops.reshape(qkv, (*lead, t, 3, h, dh))
        nl = len(lead)
        # -> (3, *lead, h, t, dh)
        perm = (nl + 1,) + tuple(range(nl)) + (nl + 2, nl, nl + 3)
        qkv = ops.transpose(qkv, perm)
        q, k, v = qkv[0], qkv[1], qkv[2]
        y = ops.attention(q, k, v, 1.0 / math.sqrt(dh))
        y = ops.swapaxes(y, -2, -3)
        y = ops.reshape(y, (*lead, t, d))
        return self.proj(y)


class TransformerBlock(Module):
    """Pre-norm encoder block: x + MHA(LN(x)); x + MLP(LN(x))."""

    def __init__(self, width: int, heads: int, rng: np.random.Generator, mlp_ratio: int = 2):
        self.ln1 = LayerNorm(width)
        self.attn = MultiHeadAttention(width, heads, rng)
        self.ln2 = LayerNorm(width)
        self.fc1 = Linear(width, mlp_ratio * width, rng)
        self.fc2 = Linear(mlp_ratio * width, width, rng)

    def __call__(self, x: Tensor) -> Tensor:
        x = ops.add(x, self.attn(self.ln1(x)))
        return ops.add(x, self.fc2(ops.relu(self.fc1(self.ln2(x)))))
