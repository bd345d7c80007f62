"""Dense float64 tensors with tape-based reverse-mode differentiation.

The primitive set is deliberately small and fixed; everything else in the
toolkit composes from it.  Every primitive has a hand-written backward rule
that is checked against central finite differences in the test suite.
Computation is float64 throughout and deterministic: identical inputs give
bit-identical outputs on one platform.

Gradients are recorded on an explicit :class:`Tape`.  Ops append nodes in
execution order, which is already a topological order, so the backward sweep
is a single reverse pass that visits each node exactly once.
"""

from __future__ import annotations

import numpy as np
from scipy.special import erf as _erf

from .errors import NumericInstabilityError, ShapeError, StaleTapeError

_SQRT_HALF = float(np.sqrt(0.5))
_INV_SQRT_2PI = float(1.0 / np.sqrt(2.0 * np.pi))

# arccos inputs are clipped this far inside [-1, 1] when evaluating the
# derivative, keeping it finite at the boundary (forward values are exact).
_ACOS_GRAD_MARGIN = 1e-12

_active_tape: "Tape | None" = None


class Tensor:
    """A dense float64 array node.

    Tensors are immutable by convention: no op writes into an existing
    ``data`` buffer, so values are safe to share read-only across threads.
    Optimizers replace ``data`` on leaf parameters wholesale.
    """

    __slots__ = ("data", "requires_grad")

    def __init__(self, data, requires_grad: bool = False):
        self.data = np.asarray(data, dtype=np.float64)
        self.requires_grad = bool(requires_grad)

    @property
    def shape(self):
        return self.data.shape

    @property
    def ndim(self):
        return self.data.ndim

    @property
    def size(self):
        return self.data.size

    def item(self) -> float:
        return float(self.data)

    def detach(self) -> "Tensor":
        return Tensor(self.data)

    def __repr__(self):
        grad = ", requires_grad=True" if self.requires_grad else ""
        return f"Tensor(shape={self.data.shape}{grad})"

    # operator sugar; every route goes through the recorded primitives
    def __add__(self, other):
        return add(self, other)

    __radd__ = __add__

    def __sub__(self, other):
        return sub(self, other)

    def __rsub__(self, other):
        return sub(other, self)

    def __mul__(self, other):
        return mul(self, other)

    __rmul__ = __mul__

    def __truediv__(self, other):
        return div(self, other)

    def __rtruediv__(self, other):
        return div(other, self)

    def __neg__(self):
        return neg(self)

    def __pow__(self, p):
        return power(self, p)

    def __matmul__(self, other):
        return matmul(self, other)

    def __getitem__(self, key):
        return take(self, key)


def as_tensor(x) -> Tensor:
    return x if isinstance(x, Tensor) else Tensor(x)


class Tape:
    """Execution-ordered record of primitive applications.

    Used as a context manager around a forward pass::

        with Tape() as tape:
            loss = model(x)
        grads = tape.gradients(loss, wrt=params)

    A tape is consumed by :meth:`gradients` unless ``retain=True``; a second
    sweep over a consumed tape raises :class:`StaleTapeError`.
    """

    def __init__(self):
        self._nodes: list[tuple[tuple[Tensor, ...], Tensor, object]] = []
        self._consumed = False
        self._outer: Tape | None = None

    def __enter__(self):
        global _active_tape
        self._outer = _active_tape
        _active_tape = self
        return self

    def __exit__(self, exc_type, exc, tb):
        global _active_tape
        _active_tape = self._outer
        self._outer = None
        return False

    def __len__(self):
        return len(self._nodes)

    def gradients(self, output: Tensor, wrt=None, seed=None, retain: bool = False):
        """Reverse sweep from ``output``; returns ``{tensor: ndarray}``.

        ``seed`` is the incoming gradient at ``output`` (defaults to ones and
        must match its shape).  With ``wrt`` given, the result holds exactly
        those tensors, with zeros for any that the output does not depend on.
        Otherwise it holds every ``requires_grad`` leaf the sweep reached.
        """
        if self._consumed:
            raise StaleTapeError("tape already consumed; pass retain=True to reuse")
        if not retain:
            self._consumed = True

        if seed is None:
            seed_arr = np.ones_like(output.data)
        else:
            seed_arr = np.asarray(seed, dtype=np.float64)
            if seed_arr.shape != output.data.shape:
                raise ShapeError(
                    f"seed gradient shape {seed_arr.shape} does not match "
                    f"output shape {output.data.shape}"
                )

        grads: dict[Tensor, np.ndarray] = {output: seed_arr}
        produced = set()
        for inputs, out, _ in self._nodes:
            produced.add(id(out))

        for inputs, out, backward in reversed(self._nodes):
            g = grads.pop(out, None)
            if g is None:
                continue
            for tensor, piece in zip(inputs, backward(g)):
                if piece is None or not tensor.requires_grad:
                    continue
                held = grads.get(tensor)
                if held is None:
                    grads[tensor] = piece
                else:
                    grads[tensor] = held + piece

        if wrt is None:
            return {t: g for t, g in grads.items() if id(t) not in produced}
        return {t: grads.get(t, np.zeros(t.data.shape)) for t in wrt}


def _record(name, inputs, out_data, backward) -> Tensor:
    if not np.all(np.isfinite(out_data)):
        raise NumericInstabilityError(f"primitive '{name}' produced non-finite values")
    needs = any(t.requires_grad for t in inputs)
    out = Tensor(out_data, requires_grad=needs)
    if needs and _active_tape is not None:
        _active_tape._nodes.append((tuple(inputs), out, backward))
    return out


def _unbroadcast(grad: np.ndarray, shape) -> np.ndarray:
    """Sum ``grad`` down to ``shape``, inverting numpy broadcasting."""
    if grad.shape == shape:
        return grad
    while grad.ndim > len(shape):
        grad = grad.sum(axis=0)
    axes = tuple(i for i, n in enumerate(shape) if n == 1 and grad.shape[i] != 1)
    if axes:
        grad = grad.sum(axis=axes, keepdims=True)
    return grad


# ---------------------------------------------------------------------------
# elementwise binary primitives (broadcasting)


def add(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    try:
        out = a.data + b.data
    except ValueError as exc:
        raise ShapeError(f"add: shapes {a.shape} and {b.shape} do not broadcast") from exc

    def backward(g):
        return _unbroadcast(g, a.shape), _unbroadcast(g, b.shape)

    return _record("add", (a, b), out, backward)


def sub(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    try:
        out = a.data - b.data
    except ValueError as exc:
        raise ShapeError(f"sub: shapes {a.shape} and {b.shape} do not broadcast") from exc

    def backward(g):
        return _unbroadcast(g, a.shape), _unbroadcast(-g, b.shape)

    return _record("sub", (a, b), out, backward)


def mul(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    try:
        out = a.data * b.data
    except ValueError as exc:
        raise ShapeError(f"mul: shapes {a.shape} and {b.shape} do not broadcast") from exc
    ad, bd = a.data, b.data

    def backward(g):
        ga = _unbroadcast(g * bd, a.shape) if a.requires_grad else None
        gb = _unbroadcast(g * ad, b.shape) if b.requires_grad else None
        return ga, gb

    return _record("mul", (a, b), out, backward)


def div(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    try:
        with np.errstate(divide="ignore", invalid="ignore"):
            out = a.data / b.data
    except ValueError as exc:
        raise ShapeError(f"div: shapes {a.shape} and {b.shape} do not broadcast") from exc
    ad, bd = a.data, b.data

    def backward(g):
        ga = _unbroadcast(g / bd, a.shape) if a.requires_grad else None
        gb = _unbroadcast(-g * ad / (bd * bd), b.shape) if b.requires_grad else None
        return ga, gb

    return _record("div", (a, b), out, backward)


# ---------------------------------------------------------------------------
# elementwise unary primitives


def neg(a) -> Tensor:
    a = as_tensor(a)
    return _record("neg", (a,), -a.data, lambda g: (-g,))


def power(a, p) -> Tensor:
    """Elementwise ``a ** p`` for a scalar constant exponent."""
    a = as_tensor(a)
    p = float(p)
    ad = a.data

    def backward(g):
        return (g * p * ad ** (p - 1.0),)

    return _record("power", (a,), ad**p, backward)


def sqrt(a) -> Tensor:
    a = as_tensor(a)
    with np.errstate(invalid="ignore"):
        out = np.sqrt(a.data)

    def backward(g):
        return (g * (0.5 / out),)

    return _record("sqrt", (a,), out, backward)


def absolute(a) -> Tensor:
    """Elementwise |a|.  Subgradient at 0 is defined as 0."""
    a = as_tensor(a)
    ad = a.data

    def backward(g):
        return (g * np.sign(ad),)

    return _record("absolute", (a,), np.abs(ad), backward)


def relu(a) -> Tensor:
    a = as_tensor(a)
    ad = a.data

    def backward(g):
        return (g * (ad > 0.0),)

    return _record("relu", (a,), np.maximum(ad, 0.0), backward)


def gelu(a) -> Tensor:
    """Exact (erf-based) GELU: x * Phi(x)."""
    a = as_tensor(a)
    ad = a.data
    cdf = 0.5 * (1.0 + _erf(ad * _SQRT_HALF))

    def backward(g):
        pdf = _INV_SQRT_2PI * np.exp(-0.5 * ad * ad)
        return (g * (cdf + ad * pdf),)

    return _record("gelu", (a,), ad * cdf, backward)


def arccos(a) -> Tensor:
    """Elementwise arccos with the input clipped into [-1, 1].

    The forward value is exact at the boundary (arccos(1) == 0); the
    derivative uses an input pulled inside by a tiny margin so it stays
    finite there.
    """
    a = as_tensor(a)
    ad = a.data
    out = np.arccos(np.clip(ad, -1.0, 1.0))

    def backward(g):
        inner = np.clip(ad, -1.0 + _ACOS_GRAD_MARGIN, 1.0 - _ACOS_GRAD_MARGIN)
        return (-g / np.sqrt(1.0 - inner * inner),)

    return _record("arccos", (a,), out, backward)


# ---------------------------------------------------------------------------
# matmul


def matmul(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    if a.ndim < 2 or b.ndim < 2:
        raise ShapeError(f"matmul requires ndim >= 2, got {a.shape} @ {b.shape}")
    if a.shape[-1] != b.shape[-2]:
        raise ShapeError(f"matmul: inner dimensions differ, {a.shape} @ {b.shape}")
    try:
        out = a.data @ b.data
    except ValueError as exc:
        raise ShapeError(f"matmul: batch shapes {a.shape} and {b.shape} do not broadcast") from exc
    ad, bd = a.data, b.data

    def backward(g):
        ga = gb = None
        if a.requires_grad:
            ga = _unbroadcast(g @ bd.swapaxes(-1, -2), a.shape)
        if b.requires_grad:
            gb = _unbroadcast(ad.swapaxes(-1, -2) @ g, b.shape)
        return ga, gb

    return _record("matmul", (a, b), out, backward)


# ---------------------------------------------------------------------------
# normalizations


def softmax(a, axis: int = -1) -> Tensor:
    """Numerically stable softmax along ``axis``; rows sum to 1."""
    a = as_tensor(a)
    shifted = a.data - a.data.max(axis=axis, keepdims=True)
    e = np.exp(shifted)
    out = e / e.sum(axis=axis, keepdims=True)

    def backward(g):
        dot = (g * out).sum(axis=axis, keepdims=True)
        return (out * (g - dot),)

    return _record("softmax", (a,), out, backward)


def layer_norm(a, eps: float = 1e-5) -> Tensor:
    """Normalize the last axis to zero mean / unit variance (no affine)."""
    a = as_tensor(a)
    ad = a.data
    n = ad.shape[-1]
    mean = ad.mean(axis=-1, keepdims=True)
    var = ((ad - mean) ** 2).mean(axis=-1, keepdims=True)
    inv = 1.0 / np.sqrt(var + eps)
    out = (ad - mean) * inv

    def backward(g):
        gm = g.mean(axis=-1, keepdims=True)
        gy = (g * out).mean(axis=-1, keepdims=True)
        return (inv * (g - gm - out * gy),)

    return _record("layer_norm", (a,), out, backward)


# ---------------------------------------------------------------------------
# reductions


def _restore_axes(g, shape, axis, keepdims):
    if axis is None:
        return np.broadcast_to(g, shape)
    if not keepdims:
        axes = axis if isinstance(axis, tuple) else (axis,)
        for ax in sorted(a % len(shape) for a in axes):
            g = np.expand_dims(g, ax)
    return np.broadcast_to(g, shape)


def tsum(a, axis=None, keepdims: bool = False) -> Tensor:
    a = as_tensor(a)
    shape = a.shape

    def backward(g):
        return (_restore_axes(g, shape, axis, keepdims).copy(),)

    return _record("sum", (a,), a.data.sum(axis=axis, keepdims=keepdims), backward)


def tmean(a, axis=None, keepdims: bool = False) -> Tensor:
    a = as_tensor(a)
    shape = a.shape
    out = a.data.mean(axis=axis, keepdims=keepdims)
    count = a.data.size // max(out.size, 1)

    def backward(g):
        return (_restore_axes(g, shape, axis, keepdims) / count,)

    return _record("mean", (a,), out, backward)


# ---------------------------------------------------------------------------
# shape primitives


def reshape(a, shape) -> Tensor:
    a = as_tensor(a)
    old = a.shape

    def backward(g):
        return (g.reshape(old),)

    return _record("reshape", (a,), a.data.reshape(shape), backward)


def swapaxes(a, ax1: int, ax2: int) -> Tensor:
    a = as_tensor(a)

    def backward(g):
        return (g.swapaxes(ax1, ax2),)

    return _record("swapaxes", (a,), a.data.swapaxes(ax1, ax2), backward)


def take(a, key) -> Tensor:
    """Basic indexing (ints, slices, tuples thereof)."""
    a = as_tensor(a)
    shape = a.shape
    out = a.data[key]

    def backward(g):
        full = np.zeros(shape)
        full[key] = g
        return (full,)

    return _record("take", (a,), out, backward)


def concat(tensors, axis: int = -1) -> Tensor:
    tensors = [as_tensor(t) for t in tensors]
    try:
        out = np.concatenate([t.data for t in tensors], axis=axis)
    except ValueError as exc:
        raise ShapeError(f"concat along axis {axis}: incompatible shapes "
                         f"{[t.shape for t in tensors]}") from exc
    sizes = [t.shape[axis] for t in tensors]

    def backward(g):
        splits = np.cumsum(sizes)[:-1]
        return tuple(np.split(g, splits, axis=axis))

    return _record("concat", tuple(tensors), out, backward)


def stack(tensors, axis: int = 0) -> Tensor:
    """Stack along a new axis (composition of reshape + concat)."""
    tensors = [as_tensor(t) for t in tensors]
    expanded = []
    for t in tensors:
        shape = list(t.shape)
        shape.insert(axis if axis >= 0 else axis + t.ndim + 1, 1)
        expanded.append(reshape(t, tuple(shape)))
    return concat(expanded, axis=axis)


PRIMITIVES = (
    "add", "sub", "mul", "div", "neg", "power", "sqrt", "absolute", "relu",
    "gelu", "arccos", "matmul", "softmax", "layer_norm", "sum", "mean",
    "reshape", "swapaxes", "take", "concat",
)
