"""Minimal dense-tensor engine with reverse-mode automatic differentiation.

A ``Tape`` records primitive applications in execution order; backward
replays the adjoints in reverse, which is a valid reverse topological
order.  Tensors are float64 throughout, immutable once recorded, and there
is no broadcasting beyond scalar scaling: shape mismatches raise
``ShapeError`` carrying both shapes.

Custom primitives can be added by computing a forward value and calling
``tape.record`` with the adjoint closure; the search module uses this for
its averaged tempered-softmax weights.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np


class ShapeError(ValueError):
    """Operand shapes incompatible for the requested primitive."""


class Tape:
    """Ordered record of primitive operations; replays adjoints in reverse."""

    def __init__(self):
        self._entries = []

    def tensor(self, data, requires_grad: bool = False) -> "Tensor":
        return Tensor(np.asarray(data, dtype=np.float64), self, requires_grad)

    def constant(self, data) -> "Tensor":
        return Tensor(np.asarray(data, dtype=np.float64), self, False)

    def record(self, backward_fn) -> None:
        """Append an adjoint closure; closures run once, in reverse order."""
        self._entries.append(backward_fn)

    def backward(self, loss: "Tensor") -> None:
        if loss.data.size != 1:
            raise ValueError(f"backward requires a scalar loss, got shape {loss.data.shape}")
        if loss.tape is not self:
            raise ValueError("loss was recorded on a different tape")
        loss.grad = np.ones_like(loss.data)
        for entry in reversed(self._entries):
            entry()


class Tensor:
    """Dense float64 array with an optional same-shape gradient buffer."""

    __slots__ = ("data", "grad", "tape", "requires_grad")

    def __init__(self, data: np.ndarray, tape: Tape, requires_grad: bool):
        self.data = data
        self.grad = None
        self.tape = tape
        self.requires_grad = requires_grad

    @property
    def shape(self):
        return self.data.shape

    def item(self) -> float:
        return float(self.data.reshape(-1)[0])

    def __repr__(self):
        return f"Tensor(shape={self.data.shape}, requires_grad={self.requires_grad})"

    def __add__(self, other):
        return add(self, other)

    def __sub__(self, other):
        return sub(self, other)

    def __mul__(self, other):
        if isinstance(other, Tensor):
            return mul(self, other)
        return scale(self, float(other))

    def __rmul__(self, other):
        return scale(self, float(other))

    def __neg__(self):
        return scale(self, -1.0)

    def __matmul__(self, other):
        return matmul(self, other)


def _accumulate(t: Tensor, g: np.ndarray) -> None:
    if t.requires_grad:
        if t.grad is None:
            t.grad = np.zeros_like(t.data)
        t.grad += g


def _result(tape: Tape, data: np.ndarray, inputs, backward_builder) -> Tensor:
    out = Tensor(data, tape, any(t.requires_grad for t in inputs))
    if out.requires_grad:
        tape.record(backward_builder(out))
    return out


def _same_tape(*tensors) -> Tape:
    tape = tensors[0].tape
    for t in tensors[1:]:
        if t.tape is not tape:
            raise ValueError("operands live on different tapes")
    return tape


def _require_same_shape(a: Tensor, b: Tensor, op: str) -> None:
    if a.data.shape != b.data.shape:
        raise ShapeError(f"{op}: shapes {a.data.shape} and {b.data.shape} differ")


# ---------------------------------------------------------------------------
# elementwise and scalar primitives


def add(a: Tensor, b: Tensor) -> Tensor:
    _require_same_shape(a, b, "add")
    tape = _same_tape(a, b)

    def bw(out):
        def run():
            if out.grad is None:
                return
            _accumulate(a, out.grad)
            _accumulate(b, out.grad)

        return run

    return _result(tape, a.data + b.data, (a, b), bw)


def sub(a: Tensor, b: Tensor) -> Tensor:
    _require_same_shape(a, b, "sub")
    tape = _same_tape(a, b)

    def bw(out):
        def run():
            if out.grad is None:
                return
            _accumulate(a, out.grad)
            _accumulate(b, -out.grad)

        return run

    return _result(tape, a.data - b.data, (a, b), bw)


def mul(a: Tensor, b: Tensor) -> Tensor:
    _require_same_shape(a, b, "mul")
    tape = _same_tape(a, b)

    def bw(out):
        def run():
            if out.grad is None:
                return
            _accumulate(a, out.grad * b.data)
            _accumulate(b, out.grad * a.data)

        return run

    return _result(tape, a.data * b.data, (a, b), bw)


def scale(a: Tensor, s: float) -> Tensor:
    s = float(s)

    def bw(out):
        def run():
            if out.grad is not None:
                _accumulate(a, out.grad * s)

        return run

    return _result(a.tape, a.data * s, (a,), bw)


def scale_by(a: Tensor, s: Tensor) -> Tensor:
    """Multiply a tensor by a scalar-shaped tensor (learnable scalar scale)."""
    if s.data.size != 1:
        raise ShapeError(f"scale_by: scalar operand must have one element, got {s.data.shape}")
    tape = _same_tape(a, s)
    sval = float(s.data.reshape(-1)[0])

    def bw(out):
        def run():
            if out.grad is None:
                return
            _accumulate(a, out.grad * sval)
            _accumulate(s, np.array(np.sum(out.grad * a.data)).reshape(s.data.shape))

        return run

    return _result(tape, a.data * sval, (a, s), bw)


def take(a: Tensor, index: int) -> Tensor:
    """Element of a 1-D tensor as a scalar-shaped tensor."""
    if a.data.ndim != 1:
        raise ShapeError(f"take: expected a vector, got shape {a.data.shape}")

    def bw(out):
        def run():
            if out.grad is None:
                return
            g = np.zeros_like(a.data)
            g[index] = float(out.grad)
            _accumulate(a, g)

        return run

    return _result(a.tape, np.asarray(a.data[index]), (a,), bw)


def take_row(a: Tensor, index: int) -> Tensor:
    """Row of a 2-D tensor as a vector tensor."""
    if a.data.ndim != 2:
        raise ShapeError(f"take_row: expected a matrix, got shape {a.data.shape}")

    def bw(out):
        def run():
            if out.grad is None:
                return
            g = np.zeros_like(a.data)
            g[index] = out.grad
            _accumulate(a, g)

        return run

    return _result(a.tape, a.data[index].copy(), (a,), bw)


def sigmoid(a: Tensor) -> Tensor:
    x = a.data
    y = np.where(x >= 0, 1.0 / (1.0 + np.exp(-np.abs(x))), np.exp(-np.abs(x)) / (1.0 + np.exp(-np.abs(x))))

    def bw(out):
        def run():
            if out.grad is not None:
                _accumulate(a, out.grad * y * (1.0 - y))

        return run

    return _result(a.tape, y, (a,), bw)


def relu(a: Tensor) -> Tensor:
    mask = a.data > 0  # adjoint at exactly 0 is 0

    def bw(out):
        def run():
            if out.grad is not None:
                _accumulate(a, out.grad * mask)

        return run

    return _result(a.tape, a.data * mask, (a,), bw)


# ---------------------------------------------------------------------------
# linear algebra and shape primitives


def matmul(a: Tensor, b: Tensor) -> Tensor:
    ad, bd = a.data, b.data
    ok = (ad.ndim == 2 and bd.ndim == 2 and ad.shape[1] == bd.shape[0]) or (
        ad.ndim == 3 and bd.ndim == 3 and ad.shape[0] == bd.shape[0] and ad.shape[2] == bd.shape[1]
    )
    if not ok:
        raise ShapeError(f"matmul: shapes {ad.shape} and {bd.shape} incompatible")
    tape = _same_tape(a, b)

    def bw(out):
        def run():
            if out.grad is None:
                return
            _accumulate(a, out.grad @ bd.swapaxes(-1, -2))
            _accumulate(b, ad.swapaxes(-1, -2) @ out.grad)

        return run

    return _result(tape, ad @ bd, (a, b), bw)


def transpose(a: Tensor, axes) -> Tensor:
    axes = tuple(axes)
    inv = tuple(np.argsort(axes))

    def bw(out):
        def run():
            if out.grad is not None:
                _accumulate(a, out.grad.transpose(inv))

        return run

    return _result(a.tape, a.data.transpose(axes), (a,), bw)


def reshape(a: Tensor, shape) -> Tensor:
    shape = tuple(shape)
    old = a.data.shape

    def bw(out):
        def run():
            if out.grad is not None:
                _accumulate(a, out.grad.reshape(old))

        return run

    return _result(a.tape, a.data.reshape(shape), (a,), bw)


def concat(a: Tensor, b: Tensor, axis: int) -> Tensor:
    if a.data.ndim != b.data.ndim:
        raise ShapeError(f"concat: ranks {a.data.shape} and {b.data.shape} differ")
    for ax in range(a.data.ndim):
        if ax != axis % a.data.ndim and a.data.shape[ax] != b.data.shape[ax]:
            raise ShapeError(f"concat: shapes {a.data.shape} and {b.data.shape} differ off-axis")
    tape = _same_tape(a, b)
    split = a.data.shape[axis]

    def bw(out):
        def run():
            if out.grad is None:
                return
            sl_a = [slice(None)] * out.grad.ndim
            sl_a[axis] = slice(0, split)
            sl_b = [slice(None)] * out.grad.ndim
            sl_b[axis] = slice(split, None)
            _accumulate(a, out.grad[tuple(sl_a)])
            _accumulate(b, out.grad[tuple(sl_b)])

        return run

    return _result(tape, np.concatenate([a.data, b.data], axis=axis), (a, b), bw)


# ---------------------------------------------------------------------------
# reductions and normalizations


def sum_all(a: Tensor) -> Tensor:
    def bw(out):
        def run():
            if out.grad is not None:
                _accumulate(a, np.full_like(a.data, float(out.grad)))

        return run

    return _result(a.tape, np.asarray(a.data.sum()), (a,), bw)


def mean_all(a: Tensor) -> Tensor:
    return scale(sum_all(a), 1.0 / a.data.size)


def sum_axis(a: Tensor, axis: int) -> Tensor:
    def bw(out):
        def run():
            if out.grad is not None:
                _accumulate(a, np.broadcast_to(np.expand_dims(out.grad, axis), a.data.shape).copy())

        return run

    return _result(a.tape, a.data.sum(axis=axis), (a,), bw)


def mean_axis(a: Tensor, axis: int) -> Tensor:
    return scale(sum_axis(a, axis), 1.0 / a.data.shape[axis])


def softmax_last(a: Tensor) -> Tensor:
    z = a.data
    m = z.max(axis=-1, keepdims=True)
    e = np.exp(z - m)
    s = e / e.sum(axis=-1, keepdims=True)

    def bw(out):
        def run():
            if out.grad is None:
                return
            g = out.grad
            _accumulate(a, s * (g - (g * s).sum(axis=-1, keepdims=True)))

        return run

    return _result(a.tape, s, (a,), bw)


def log_softmax_last(a: Tensor) -> Tensor:
    z = a.data
    m = z.max(axis=-1, keepdims=True)
    shifted = z - m
    y = shifted - np.log(np.exp(shifted).sum(axis=-1, keepdims=True))

    def bw(out):
        def run():
            if out.grad is None:
                return
            g = out.grad
            _accumulate(a, g - np.exp(y) * g.sum(axis=-1, keepdims=True))

        return run

    return _result(a.tape, y, (a,), bw)


# ---------------------------------------------------------------------------
# gradient checking


@dataclass
class GradCheckResult:
    """Worst relative reverse-vs-central-difference error, kinks excluded."""

    max_rel_error: float
    checked: int
    excluded: list = field(default_factory=list)


def grad_check(fn, inputs, step: float = 1e-4) -> GradCheckResult:
    """Compare reverse-mode gradients of a scalar program against central
    finite differences, coordinate by coordinate.

    ``fn(tape, *tensors) -> Tensor`` must be deterministic and scalar-valued.
    Coordinates where the one-sided differences disagree (a nondifferentiable
    point such as a ReLU kink under the step) are excluded and reported, not
    failed.
    """
    if step <= 0:
        raise ValueError(f"step must be positive, got {step}")
    inputs = [np.asarray(x, dtype=np.float64) for x in inputs]

    def evaluate(arrays):
        tape = Tape()
        tensors = [tape.tensor(x, requires_grad=True) for x in arrays]
        out = fn(tape, *tensors)
        if out.data.size != 1:
            raise ValueError(f"grad_check requires a scalar program, got shape {out.data.shape}")
        return tape, tensors, out

    tape, tensors, out = evaluate(inputs)
    tape.backward(out)
    f0 = out.item()
    ad_grads = [
        t.grad if t.grad is not None else np.zeros_like(t.data) for t in tensors
    ]

    worst = 0.0
    checked = 0
    excluded = []
    for i, x in enumerate(inputs):
        flat = x.reshape(-1)
        for j in range(flat.size):
            orig = flat[j]
            flat[j] = orig + step
            f_plus = evaluate(inputs)[2].item()
            flat[j] = orig - step
            f_minus = evaluate(inputs)[2].item()
            flat[j] = orig
            fwd = (f_plus - f0) / step
            bwd = (f0 - f_minus) / step
            if abs(fwd - bwd) > 0.05 * (abs(fwd) + abs(bwd)) + 10.0 * step:
                excluded.append((i, j))
                continue
            fd = (f_plus - f_minus) / (2.0 * step)
            ad = ad_grads[i].reshape(-1)[j]
            rel = abs(ad - fd) / max(abs(ad) + abs(fd), 1.0)
            worst = max(worst, rel)
            checked += 1
    return GradCheckResult(max_rel_error=worst, checked=checked, excluded=excluded)
