"""Tensor, tape and reverse-mode backward pass.

The engine is define-by-run: every forward operation executed while a
:class:`Tape` is active (and touching at least one tracked tensor) appends an
entry holding its vector-Jacobian product. :func:`backward` replays the tape
in reverse.
"""
from __future__ import annotations

import contextlib
import contextvars
import itertools
from dataclasses import dataclass, field
from typing import Callable, Iterable, Sequence

import numpy as np

_node_ids = itertools.count(1)
_active_tape: contextvars.ContextVar["Tape | None"] = contextvars.ContextVar(
    "sinf_active_tape", default=None
)


class ShapeError(ValueError):
    """Raised when operand shapes are incompatible for an operation."""


class DomainError(ValueError):
    """Raised when an operation receives input outside its domain."""


def new_node_id() -> int:
    return next(_node_ids)


class Tensor:
    """Dense float64 array, optionally tracked for differentiation.

    A tensor is *tracked* when it has a ``node_id``: leaf parameters get one
    at construction (``requires_grad=True``), intermediate results get one
    when their operation is recorded on the active tape.
    """

    __slots__ = ("data", "node_id", "name")
    __array_priority__ = 100.0

    def __init__(self, data, requires_grad: bool = False, name: str | None = None):
        arr = np.asarray(data, dtype=np.float64)
        if requires_grad:
            arr = np.array(arr, dtype=np.float64, order="C", copy=True)
        self.data = arr
        self.node_id = new_node_id() if requires_grad else None
        self.name = name

    @property
    def shape(self) -> tuple[int, ...]:
        return self.data.shape

    @property
    def ndim(self) -> int:
        return self.data.ndim

    @property
    def size(self) -> int:
        return self.data.size

    @property
    def requires_grad(self) -> bool:
        return self.node_id is not None

    def numpy(self) -> np.ndarray:
        return self.data

    def item(self) -> float:
        return float(self.data.reshape(-1)[0]) if self.data.size == 1 else float(self.data)

    def detach(self) -> "Tensor":
        return Tensor(self.data)

    def __repr__(self) -> str:
        tag = f", node={self.node_id}" if self.node_id is not None else ""
        label = f", name={self.name!r}" if self.name else ""
        return f"Tensor(shape={self.shape}{tag}{label})"

    def __len__(self) -> int:
        return self.data.shape[0]

    # Operator sugar; implementations live in ops.py.
    def __add__(self, other):
        from . import ops
        return ops.add(self, other)

    def __radd__(self, other):
        from . import ops
        return ops.add(other, self)

    def __sub__(self, other):
        from . import ops
        return ops.sub(self, other)

    def __rsub__(self, other):
        from . import ops
        return ops.sub(other, self)

    def __mul__(self, other):
        from . import ops
        return ops.mul(self, other)

    def __rmul__(self, other):
        from . import ops
        return ops.mul(other, self)

    def __truediv__(self, other):
        from . import ops
        return ops.div(self, other)

    def __rtruediv__(self, other):
        from . import ops
        return ops.div(other, self)

    def __neg__(self):
        from . import ops
        return ops.neg(self)

    def __matmul__(self, other):
        from . import ops
        return ops.matmul(self, other)

    def __getitem__(self, index):
        from . import ops
        return ops.getitem(self, index)

    def reshape(self, *shape):
        from . import ops
        if len(shape) == 1 and isinstance(shape[0], (tuple, list)):
            shape = tuple(shape[0])
        return ops.reshape(self, shape)

    def sum(self, axis=None, keepdims=False):
        from . import ops
        return ops.sum(self, axis=axis, keepdims=keepdims)

    def mean(self, axis=None, keepdims=False):
        from . import ops
        return ops.mean(self, axis=axis, keepdims=keepdims)

    @property
    def T(self):
        from . import ops
        return ops.transpose(self)


@dataclass
class TapeEntry:
    kind: str
    input_ids: tuple
    output_id: int
    vjp: Callable[[np.ndarray], Sequence[np.ndarray | None]]


@dataclass
class Tape:
    """Ordered record of differentiable operations.

    Use as a context manager to make it the active tape for the current
    thread/context::

        with Tape() as tape:
            loss = f(params)
        grads = backward(tape, loss)
    """

    entries: list[TapeEntry] = field(default_factory=list)
    _token: object = field(default=None, repr=False)

    def __enter__(self) -> "Tape":
        self._token = _active_tape.set(self)
        return self

    def __exit__(self, *exc) -> None:
        _active_tape.reset(self._token)
        self._token = None

    def __len__(self) -> int:
        return len(self.entries)

    def kinds(self) -> list[str]:
        return [e.kind for e in self.entries]


def active_tape() -> Tape | None:
    return _active_tape.get()


class no_grad:
    """Context manager that suspends recording."""

    def __enter__(self):
        self._token = _active_tape.set(None)
        return self

    def __exit__(self, *exc):
        _active_tape.reset(self._token)


# op kind -> factor applied to its input gradients; a test hook for gradient audits
_faults: dict[str, float] = {}


@contextlib.contextmanager
def inject_fault(kind: str, factor: float = 1.5):
    """Deliberately corrupt the backward rule of every ``kind`` op recorded inside the block."""
    _faults[kind] = factor
    try:
        yield
    finally:
        _faults.pop(kind, None)


def _corrupted(vjp, factor: float):
    def wrong(g):
        return [None if gi is None else gi * factor for gi in vjp(g)]
    return wrong


def record(kind: str, inputs: Sequence[Tensor], out_data: np.ndarray, vjp) -> Tensor:
    """Wrap ``out_data`` in a Tensor, recording ``vjp`` if anything is tracked."""
    tape = _active_tape.get()
    out = Tensor.__new__(Tensor)
    out.data = out_data
    out.name = None
    out.node_id = None
    if tape is None:
        return out
    ids = tuple(t.node_id for t in inputs)
    if all(i is None for i in ids):
        return out
    out.node_id = next(_node_ids)
    if _faults and kind in _faults:
        vjp = _corrupted(vjp, _faults[kind])
    tape.entries.append(TapeEntry(kind, ids, out.node_id, vjp))
    return out


def backward(
    tape: Tape, output: Tensor, params: Iterable[Tensor] | None = None
) -> dict[int, np.ndarray]:
    """Gradients of a scalar ``output`` with respect to every tracked leaf.

    Returns a map ``node_id -> gradient array``. When ``params`` is given,
    every listed parameter is present in the map, with zeros for those the
    output does not depend on.
    """
    if output.data.size != 1:
        raise ShapeError(f"backward needs a scalar output, got shape {output.shape}")
    if output.node_id is None:
        raise ValueError("output is not tracked on the tape; nothing to differentiate")
    grads: dict[int, np.ndarray] = {output.node_id: np.ones_like(output.data)}
    for entry in reversed(tape.entries):
        g = grads.pop(entry.output_id, None)
        if g is None:
            continue
        in_grads = entry.vjp(g)
        for nid, gi in zip(entry.input_ids, in_grads):
            if nid is None or gi is None:
                continue
            prev = grads.get(nid)
            grads[nid] = gi if prev is None else prev + gi
    if params is not None:
        out = {}
        for p in params:
            if p.node_id is None:
                raise ValueError(f"parameter {p!r} is not tracked")
            g = grads.get(p.node_id)
            out[p.node_id] = np.zeros_like(p.data) if g is None else g
        return out
    return grads


def as_tensor(x) -> Tensor:
    return x if isinstance(x, Tensor) else Tensor(x)
