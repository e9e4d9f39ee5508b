"""Reverse-mode automatic differentiation on dense float64 arrays.

Define-by-run: while a :class:`Tape` is active, every primitive that touches a
grad-requiring tensor appends a record (op inputs, output, backward closure).
``Tape.backward`` replays the records in reverse execution order, which is a
valid topological order by construction, and returns a gradient map over the
participating parameters.

The engine is deliberately small: dense 2-D-ish tensors, the primitives needed
for MLP encoders/decoders, critics and logistic losses, and nothing else.  No
convolutions, no GPU, no higher-order derivatives.
"""

from __future__ import annotations

from typing import Callable, Iterable

import numpy as np

from .errors import ShapeError, TapeError

__all__ = [
    "Tensor",
    "Tape",
    "add",
    "sub",
    "mul",
    "div",
    "matmul",
    "exp",
    "log",
    "square",
    "cos",
    "sigmoid",
    "softplus",
    "relu",
    "relu6",
    "clamp",
    "log_softmax",
    "tensor_sum",
    "tensor_mean",
    "concat_last",
    "slice_last",
    "take_rows",
]

_GradFn = Callable[[np.ndarray], np.ndarray]

# Single active tape per worker; nesting is a usage bug, not a feature.
_active_tape: "Tape | None" = None


class Tensor:
    """Dense float64 array, optionally tracked for differentiation.

    ``requires_grad=True`` marks a leaf parameter: gradients accumulate into
    ``.grad`` when a tape that saw the tensor runs its backward pass.
    """

    __slots__ = ("values", "requires_grad", "grad", "_tape", "_node")

    def __init__(self, values, requires_grad: bool = False):
        self.values = np.asarray(values, dtype=np.float64)
        self.requires_grad = bool(requires_grad)
        self.grad: np.ndarray | None = None
        self._tape: Tape | None = None
        self._node: int | None = None

    @property
    def shape(self) -> tuple[int, ...]:
        return self.values.shape

    @property
    def size(self) -> int:
        return self.values.size

    def item(self) -> float:
        if self.values.size != 1:
            raise ShapeError(f"item() requires a single-element tensor, got shape {self.shape}")
        return float(self.values.reshape(()))

    def sum(self, axis: int | None = None) -> "Tensor":
        return tensor_sum(self, axis)

    def mean(self, axis: int | None = None) -> "Tensor":
        return tensor_mean(self, axis)

    def __add__(self, other):
        return add(self, other)

    def __radd__(self, other):
        return add(other, self)

    def __sub__(self, other):
        return sub(self, other)

    def __rsub__(self, other):
        return sub(other, self)

    def __mul__(self, other):
        return mul(self, other)

    def __rmul__(self, other):
        return mul(other, self)

    def __truediv__(self, other):
        return div(self, other)

    def __rtruediv__(self, other):
        return div(other, self)

    def __matmul__(self, other):
        return matmul(self, other)

    def __neg__(self):
        return mul(self, -1.0)

    def __repr__(self):
        flag = ", requires_grad=True" if self.requires_grad else ""
        return f"Tensor(shape={self.shape}{flag})"


class _Record:
    __slots__ = ("out_id", "inputs")

    def __init__(self, out_id: int, inputs: tuple[tuple[int, _GradFn], ...]):
        self.out_id = out_id
        self.inputs = inputs


class Tape:
    """Recorder for one forward pass; consumed by a single backward pass."""

    def __init__(self):
        self._records: list[_Record] = []
        self._watched: dict[int, Tensor] = {}
        self._next_id = 0
        self._consumed = False

    def __enter__(self) -> "Tape":
        global _active_tape
        if _active_tape is not None:
            raise TapeError("a tape is already active; tapes do not nest")
        _active_tape = self
        return self

    def __exit__(self, exc_type, exc, tb):
        global _active_tape
        _active_tape = None
        return False

    def _new_id(self) -> int:
        nid = self._next_id
        self._next_id += 1
        return nid

    def _track(self, t: Tensor) -> int:
        if t._tape is self and t._node is not None:
            return t._node
        nid = self._new_id()
        t._tape = self
        t._node = nid
        # A grad-requiring tensor first seen by this tape is a leaf parameter
        # (results produced under another tape count as constants here).
        self._watched[nid] = t
        return nid

    def backward(self, loss: Tensor) -> dict[Tensor, np.ndarray]:
        """Accumulate d(loss)/d(parameter) for every watched parameter.

        Returns a map from parameter tensor to its gradient array (same shape
        as the parameter).  Parameters that were used on the tape but received
        no gradient flow get zeros.  May be called once per tape.
        """
        if self._consumed:
            raise TapeError("backward was already called on this tape; record a new tape")
        if loss.values.size != 1:
            raise ShapeError(f"backward requires a scalar loss, got shape {loss.shape}")
        if loss._tape is not self or loss._node is None or not loss.requires_grad:
            raise TapeError("loss is not a recorded result of this tape")
        self._consumed = True

        grads: dict[int, np.ndarray] = {loss._node: np.ones_like(loss.values)}
        for rec in reversed(self._records):
            g = grads.pop(rec.out_id, None)
            if g is None:
                continue
            for nid, fn in rec.inputs:
                contrib = fn(g)
                if nid in grads:
                    grads[nid] = grads[nid] + contrib
                else:
                    grads[nid] = contrib

        result: dict[Tensor, np.ndarray] = {}
        for nid, t in self._watched.items():
            g = grads.get(nid)
            if g is None:
                g = np.zeros_like(t.values)
            t.grad = g
            result[t] = g
        return result


def _as_tensor(x) -> Tensor:
    return x if isinstance(x, Tensor) else Tensor(x)


def _unbroadcast(g: np.ndarray, shape: tuple[int, ...]) -> np.ndarray:
    """Sum a broadcast gradient back down to ``shape``."""
    if g.shape == shape:
        return g
    extra = g.ndim - len(shape)
    if extra > 0:
        g = g.sum(axis=tuple(range(extra)))
    axes = tuple(i for i, n in enumerate(shape) if n == 1 and g.shape[i] != 1)
    if axes:
        g = g.sum(axis=axes, keepdims=True)
    return g.reshape(shape)


def _apply(out_values: np.ndarray, inputs: Iterable[tuple[Tensor, _GradFn]]) -> Tensor:
    """Wrap an op result, recording it on the active tape when differentiable."""
    out = Tensor(out_values)
    tape = _active_tape
    if tape is None:
        return out
    diff_inputs = [(t, fn) for t, fn in inputs if t.requires_grad]
    if not diff_inputs:
        return out
    out.requires_grad = True
    out._tape = tape
    out._node = tape._new_id()
    tape._records.append(
        _Record(out._node, tuple((tape._track(t), fn) for t, fn in diff_inputs))
    )
    return out


def _broadcast_values(a: Tensor, b: Tensor, op: str) -> tuple[np.ndarray, np.ndarray]:
    try:
        np.broadcast_shapes(a.shape, b.shape)
    except ValueError:
        raise ShapeError(f"{op}: shapes {a.shape} and {b.shape} do not broadcast") from None
    return a.values, b.values


def add(a, b) -> Tensor:
    a, b = _as_tensor(a), _as_tensor(b)
    av, bv = _broadcast_values(a, b, "add")
    return _apply(
        av + bv,
        [
            (a, lambda g: _unbroadcast(g, a.shape)),
            (b, lambda g: _unbroadcast(g, b.shape)),
        ],
    )


def sub(a, b) -> Tensor:
    a, b = _as_tensor(a), _as_tensor(b)
    av, bv = _broadcast_values(a, b, "sub")
    return _apply(
        av - bv,
        [
            (a, lambda g: _unbroadcast(g, a.shape)),
            (b, lambda g: _unbroadcast(-g, b.shape)),
        ],
    )


def mul(a, b) -> Tensor:
    a, b = _as_tensor(a), _as_tensor(b)
    av, bv = _broadcast_values(a, b, "mul")
    return _apply(
        av * bv,
        [
            (a, lambda g: _unbroadcast(g * bv, a.shape)),
            (b, lambda g: _unbroadcast(g * av, b.shape)),
        ],
    )


def div(a, b) -> Tensor:
    a, b = _as_tensor(a), _as_tensor(b)
    av, bv = _broadcast_values(a, b, "div")
    return _apply(
        av / bv,
        [
            (a, lambda g: _unbroadcast(g / bv, a.shape)),
            (b, lambda g: _unbroadcast(-g * av / (bv * bv), b.shape)),
        ],
    )


def matmul(a, b) -> Tensor:
    a, b = _as_tensor(a), _as_tensor(b)
    if a.values.ndim != 2 or b.values.ndim != 2:
        raise ShapeError(f"matmul needs 2-D operands, got {a.shape} and {b.shape}")
    if a.shape[1] != b.shape[0]:
        raise ShapeError(f"matmul: inner extents disagree for {a.shape} and {b.shape}")
    av, bv = a.values, b.values
    return _apply(
        av @ bv,
        [
            (a, lambda g: g @ bv.T),
            (b, lambda g: av.T @ g),
        ],
    )


def exp(x) -> Tensor:
    x = _as_tensor(x)
    out = np.exp(x.values)
    return _apply(out, [(x, lambda g: g * out)])


def log(x) -> Tensor:
    """Natural logarithm; defined for positive inputs."""
    x = _as_tensor(x)
    xv = x.values
    return _apply(np.log(xv), [(x, lambda g: g / xv)])


def square(x) -> Tensor:
    x = _as_tensor(x)
    xv = x.values
    return _apply(xv * xv, [(x, lambda g: 2.0 * xv * g)])


def cos(x) -> Tensor:
    x = _as_tensor(x)
    xv = x.values
    return _apply(np.cos(xv), [(x, lambda g: -np.sin(xv) * g)])


def sigmoid(x) -> Tensor:
    x = _as_tensor(x)
    # exp(-|x|) keeps both tails away from overflow
    xv = x.values
    e = np.exp(-np.abs(xv))
    out = np.where(xv >= 0, 1.0 / (1.0 + e), e / (1.0 + e))
    return _apply(out, [(x, lambda g: g * out * (1.0 - out))])


def softplus(x) -> Tensor:
    """log(1 + e^x), computed without overflow on either tail."""
    x = _as_tensor(x)
    xv = x.values
    out = np.logaddexp(0.0, xv)
    sig = np.where(xv >= 0, 1.0 / (1.0 + np.exp(-np.abs(xv))), 1.0 - 1.0 / (1.0 + np.exp(-np.abs(xv))))
    return _apply(out, [(x, lambda g: g * sig)])


def relu(x) -> Tensor:
    x = _as_tensor(x)
    xv = x.values
    return _apply(np.maximum(xv, 0.0), [(x, lambda g: g * (xv > 0.0))])


def relu6(x) -> Tensor:
    """Elementwise min(max(x, 0), 6); subgradient 1 on (0, 6), else 0."""
    x = _as_tensor(x)
    xv = x.values
    mask = (xv > 0.0) & (xv < 6.0)
    return _apply(np.minimum(np.maximum(xv, 0.0), 6.0), [(x, lambda g: g * mask)])


def clamp(x, lo: float, hi: float) -> Tensor:
    """Clip to [lo, hi]; gradient passes through strictly inside the interval."""
    x = _as_tensor(x)
    xv = x.values
    mask = (xv > lo) & (xv < hi)
    return _apply(np.clip(xv, lo, hi), [(x, lambda g: g * mask)])


def log_softmax(logits) -> Tensor:
    """Numerically stabilized log-softmax over the last axis."""
    x = _as_tensor(logits)
    xv = x.values
    if xv.ndim == 0 or xv.shape[-1] < 1:
        raise ShapeError(f"log_softmax needs a non-empty last axis, got shape {x.shape}")
    shifted = xv - xv.max(axis=-1, keepdims=True)
    out = shifted - np.log(np.exp(shifted).sum(axis=-1, keepdims=True))
    probs = np.exp(out)

    def back(g):
        return g - probs * g.sum(axis=-1, keepdims=True)

    return _apply(out, [(x, back)])


def tensor_sum(x, axis: int | None = None) -> Tensor:
    x = _as_tensor(x)
    xv = x.values

    if axis is None:
        def back(g):
            return np.broadcast_to(g, xv.shape).copy()
        return _apply(np.asarray(xv.sum()), [(x, back)])

    def back_axis(g):
        return np.broadcast_to(np.expand_dims(g, axis), xv.shape).copy()

    return _apply(xv.sum(axis=axis), [(x, back_axis)])


def tensor_mean(x, axis: int | None = None) -> Tensor:
    x = _as_tensor(x)
    xv = x.values

    if axis is None:
        count = xv.size

        def back(g):
            return np.broadcast_to(g / count, xv.shape).copy()
        return _apply(np.asarray(xv.mean()), [(x, back)])

    count = xv.shape[axis]

    def back_axis(g):
        return np.broadcast_to(np.expand_dims(g / count, axis), xv.shape).copy()

    return _apply(xv.mean(axis=axis), [(x, back_axis)])


def concat_last(a, b) -> Tensor:
    """Concatenate two tensors along the last axis."""
    a, b = _as_tensor(a), _as_tensor(b)
    if a.values.ndim != b.values.ndim or a.shape[:-1] != b.shape[:-1]:
        raise ShapeError(f"concat_last: shapes {a.shape} and {b.shape} differ off the last axis")
    split = a.shape[-1]
    out = np.concatenate([a.values, b.values], axis=-1)
    return _apply(
        out,
        [
            (a, lambda g: g[..., :split]),
            (b, lambda g: g[..., split:]),
        ],
    )


def slice_last(x, start: int, stop: int) -> Tensor:
    """Slice columns [start, stop) of the last axis."""
    x = _as_tensor(x)
    xv = x.values
    if not (0 <= start <= stop <= xv.shape[-1]):
        raise ShapeError(f"slice_last: [{start}, {stop}) outside last axis of shape {x.shape}")

    def back(g):
        z = np.zeros_like(xv)
        z[..., start:stop] = g
        return z

    return _apply(xv[..., start:stop], [(x, back)])


def take_rows(x, indices) -> Tensor:
    """Gather rows by integer index; backward scatter-adds."""
    x = _as_tensor(x)
    idx = np.asarray(indices, dtype=np.intp)
    if x.values.ndim < 1:
        raise ShapeError("take_rows needs at least a 1-D tensor")
    xv = x.values

    def back(g):
        z = np.zeros_like(xv)
        np.add.at(z, idx, g)
        return z

    return _apply(xv[idx], [(x, back)])
