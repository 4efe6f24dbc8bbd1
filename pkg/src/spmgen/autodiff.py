"""Dense float64 tensors with reverse-mode automatic differentiation.

Every op that touches a tensor with ``requires_grad`` records its parents and
a closure mapping the output gradient to parent gradients.  Nodes carry a
monotonically increasing sequence number, so the tape order is implicit:
:meth:`Tensor.backward` visits the ancestors of the root in exactly the
reverse order in which they were created.

Only the shapes the encoder-decoder needs are supported: numpy broadcasting
for elementwise ops, 2-D ``matmul``/``linear``, two-operand ``einsum`` and
last-axis ``softmax``.
"""

from __future__ import annotations

import contextlib
import itertools
import threading
from typing import Callable, Iterable, Sequence

import numpy as np

LOG_FLOOR = 1e-12

_counter = itertools.count()
_state = threading.local()


class DimensionError(ValueError):
    """Raised when operand shapes are incompatible."""


def is_grad_enabled() -> bool:
    return getattr(_state, "grad_enabled", True)


@contextlib.contextmanager
def no_grad():
    """Disable tape recording in the current thread."""
    prev = is_grad_enabled()
    _state.grad_enabled = False
    try:
        yield
    finally:
        _state.grad_enabled = prev


class Tensor:
    """An n-dimensional float64 array that can take part in the gradient tape."""

    __slots__ = ("data", "requires_grad", "grad", "_parents", "_backward", "_seq", "name")
    # make ``ndarray * Tensor`` dispatch to Tensor.__rmul__
    __array_ufunc__ = None

    def __init__(self, data, requires_grad: bool = False, name: str | None = None):
        self.data = np.asarray(data, dtype=np.float64)
        self.requires_grad = bool(requires_grad)
        self.grad = np.zeros_like(self.data) if requires_grad else None
        self._parents: tuple[Tensor, ...] = ()
        self._backward: Callable | None = None
        self._seq = next(_counter)
        self.name = name

    def __repr__(self):
        flag = ", requires_grad=True" if self.requires_grad else ""
        return f"Tensor(shape={self.shape}{flag})"

    @property
    def shape(self) -> tuple[int, ...]:
        return self.data.shape

    @property
    def ndim(self) -> int:
        return self.data.ndim

    def numpy(self) -> np.ndarray:
        return self.data

    def item(self) -> float:
        return float(self.data.reshape(-1)[0]) if self.data.size == 1 else float(self.data)

    def zero_grad(self):
        if self.requires_grad:
            self.grad = np.zeros_like(self.data)

    def detach(self) -> "Tensor":
        return Tensor(self.data)

    # operator sugar
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
        if isinstance(other, Tensor):
            raise TypeError("division by a tensor is not supported")
        return div(self, float(other))

    def __neg__(self):
        return mul(self, -1.0)

    def __matmul__(self, other):
        return matmul(self, other)

    def __getitem__(self, index):
        return take(self, index)

    @property
    def T(self) -> "Tensor":
        return transpose(self)

    def backward(self):
        """Accumulate d(self)/d(leaf) into ``grad`` of every reachable leaf.

        Intermediate nodes get their (non-accumulated) gradient stored in
        ``grad`` as well.  Leaf gradients accumulate across calls; zero them
        between optimizer steps.
        """
        if self.data.size != 1:
            raise ValueError(f"backward() needs a scalar root, got shape {self.shape}")
        if not self.requires_grad:
            raise ValueError("backward() called on a tensor that is not on the tape")

        nodes = _ancestors(self)
        nodes.sort(key=lambda t: t._seq, reverse=True)
        pending: dict[int, np.ndarray] = {id(self): np.ones_like(self.data)}
        for node in nodes:
            g = pending.pop(id(node), None)
            if g is None:
                continue
            if node._backward is None:
                node.grad = node.grad + g if node.grad is not None else g.copy()
                continue
            node.grad = g
            for parent, pg in zip(node._parents, node._backward(g)):
                if pg is None or not parent.requires_grad:
                    continue
                key = id(parent)
                if key in pending:
                    pending[key] = pending[key] + pg
                else:
                    pending[key] = pg


def _ancestors(root: Tensor) -> list[Tensor]:
    seen = {id(root)}
    out = [root]
    stack = [root]
    while stack:
        node = stack.pop()
        for p in node._parents:
            if p.requires_grad and id(p) not in seen:
                seen.add(id(p))
                out.append(p)
                stack.append(p)
    return out


def as_tensor(x) -> Tensor:
    return x if isinstance(x, Tensor) else Tensor(x)


def _record(data: np.ndarray, parents: Sequence[Tensor], backward: Callable) -> Tensor:
    out = Tensor(data)
    if is_grad_enabled() and any(p.requires_grad for p in parents):
        out.requires_grad = True
        out._parents = tuple(parents)
        out._backward = backward
    return out


def _unbroadcast(g: np.ndarray, shape: tuple[int, ...]) -> np.ndarray:
    if g.shape == shape:
        return g
    while g.ndim > len(shape):
        g = g.sum(axis=0)
    for axis, dim in enumerate(shape):
        if dim == 1 and g.shape[axis] != 1:
            g = g.sum(axis=axis, keepdims=True)
    return g


def _check_broadcast(a: Tensor, b: Tensor, op: str):
    try:
        return np.broadcast_shapes(a.shape, b.shape)
    except ValueError:
        raise DimensionError(f"{op}: cannot broadcast shapes {a.shape} and {b.shape}") from None


# ---------------------------------------------------------------------------
# elementwise


def add(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    _check_broadcast(a, b, "add")
    sa, sb = a.shape, b.shape
    return _record(a.data + b.data, (a, b), lambda g: (_unbroadcast(g, sa), _unbroadcast(g, sb)))


def sub(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    _check_broadcast(a, b, "sub")
    sa, sb = a.shape, b.shape
    return _record(a.data - b.data, (a, b), lambda g: (_unbroadcast(g, sa), _unbroadcast(-g, sb)))


def mul(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    _check_broadcast(a, b, "mul")
    ad, bd = a.data, b.data
    return _record(
        ad * bd,
        (a, b),
        lambda g: (_unbroadcast(g * bd, ad.shape), _unbroadcast(g * ad, bd.shape)),
    )


def div(a, s: float) -> Tensor:
    """Divide by a scalar (a true division, not a reciprocal multiply)."""
    a = as_tensor(a)
    return _record(a.data / s, (a,), lambda g: (g / s,))


def tanh(x: Tensor) -> Tensor:
    y = np.tanh(x.data)
    return _record(y, (x,), lambda g: (g * (1.0 - y * y),))


def sigmoid(x: Tensor) -> Tensor:
    # split by sign so neither branch overflows
    d = x.data
    e = np.exp(-np.abs(d))
    y = np.where(d >= 0, 1.0 / (1.0 + e), e / (1.0 + e))
    return _record(y, (x,), lambda g: (g * y * (1.0 - y),))


def exp(x: Tensor) -> Tensor:
    y = np.exp(x.data)
    return _record(y, (x,), lambda g: (g * y,))


def log(x: Tensor) -> Tensor:
    """Natural log with the input clamped to at least ``LOG_FLOOR``.

    Clamped entries receive zero gradient.
    """
    d = x.data
    clamped = np.maximum(d, LOG_FLOOR)
    live = d >= LOG_FLOOR
    return _record(np.log(clamped), (x,), lambda g: (np.where(live, g / clamped, 0.0),))


def square(x: Tensor) -> Tensor:
    d = x.data
    return _record(d * d, (x,), lambda g: (2.0 * g * d,))


def dropout(x: Tensor, p: float, rng: np.random.Generator | None, train: bool = True) -> Tensor:
    """Inverted dropout: survivors are scaled by ``1/(1-p)``; identity when not training."""
    if not 0.0 <= p < 1.0:
        raise ValueError(f"dropout rate must be in [0, 1), got {p}")
    if not train or p == 0.0:
        return x
    if rng is None:
        raise ValueError("dropout at train time needs a random generator")
    mask = (rng.random(x.shape) >= p) / (1.0 - p)
    return _record(x.data * mask, (x,), lambda g: (g * mask,))


# ---------------------------------------------------------------------------
# reductions and shape ops


def sum(x: Tensor, axis: int | None = None, keepdims: bool = False) -> Tensor:  # noqa: A001
    shape = x.shape
    y = x.data.sum(axis=axis, keepdims=keepdims)

    def backward(g):
        if axis is not None and not keepdims:
            g = np.expand_dims(g, axis)
        return (np.broadcast_to(g, shape).copy(),)

    return _record(y, (x,), backward)


def mean(x: Tensor) -> Tensor:
    return sum(x) / x.data.size


def reshape(x: Tensor, shape: tuple[int, ...]) -> Tensor:
    old = x.shape
    return _record(x.data.reshape(shape), (x,), lambda g: (g.reshape(old),))


def transpose(x: Tensor) -> Tensor:
    if x.ndim != 2:
        raise DimensionError(f"transpose expects a matrix, got shape {x.shape}")
    return _record(x.data.T.copy(), (x,), lambda g: (g.T,))


def take(x: Tensor, index) -> Tensor:
    """Basic or advanced indexing (``x[index]``) with scatter-add backward."""
    y = x.data[index]
    shape = x.shape

    def backward(g):
        out = np.zeros(shape)
        np.add.at(out, index, g)
        return (out,)

    return _record(np.array(y, dtype=np.float64), (x,), backward)


def slice_last(x: Tensor, start: int, stop: int) -> Tensor:
    """``x[..., start:stop]``."""
    if not 0 <= start < stop <= x.shape[-1]:
        raise DimensionError(f"slice [{start}:{stop}] out of range for shape {x.shape}")
    shape = x.shape

    def backward(g):
        out = np.zeros(shape)
        out[..., start:stop] = g
        return (out,)

    return _record(x.data[..., start:stop], (x,), backward)


def concat(xs: Sequence[Tensor], axis: int = -1) -> Tensor:
    xs = [as_tensor(x) for x in xs]
    if not xs:
        raise DimensionError("concat of zero tensors")
    try:
        y = np.concatenate([x.data for x in xs], axis=axis)
    except ValueError as exc:
        raise DimensionError(f"concat: incompatible shapes {[x.shape for x in xs]}") from exc
    bounds = np.cumsum([x.shape[axis] for x in xs])[:-1]
    return _record(y, xs, lambda g: tuple(np.split(g, bounds, axis=axis)))


def stack(xs: Sequence[Tensor], axis: int = 0) -> Tensor:
    xs = [as_tensor(x) for x in xs]
    if not xs:
        raise DimensionError("stack of zero tensors")
    try:
        y = np.stack([x.data for x in xs], axis=axis)
    except ValueError as exc:
        raise DimensionError(f"stack: incompatible shapes {[x.shape for x in xs]}") from exc
    n = len(xs)
    return _record(y, xs, lambda g: tuple(np.take(g, i, axis=axis) for i in range(n)))


# ---------------------------------------------------------------------------
# products


def matmul(a: Tensor, b: Tensor) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    if a.ndim != 2 or b.ndim != 2 or a.shape[1] != b.shape[0]:
        raise DimensionError(f"matmul: shapes {a.shape} and {b.shape} are not aligned")
    ad, bd = a.data, b.data
    return _record(ad @ bd, (a, b), lambda g: (g @ bd.T, ad.T @ g))


def linear(x: Tensor, weight: Tensor, bias: Tensor | None = None) -> Tensor:
    """``x @ weight.T + bias`` for a batch of row vectors; ``weight`` is out×in."""
    if x.ndim != 2 or weight.ndim != 2 or x.shape[1] != weight.shape[1]:
        raise DimensionError(f"linear: input {x.shape} does not match weight {weight.shape}")
    xd, wd = x.data, weight.data
    y = xd @ wd.T
    if bias is None:
        return _record(y, (x, weight), lambda g: (g @ wd, g.T @ xd))
    if bias.shape != (wd.shape[0],):
        raise DimensionError(f"linear: bias {bias.shape} does not match weight {weight.shape}")
    return _record(y + bias.data, (x, weight, bias), lambda g: (g @ wd, g.T @ xd, g.sum(axis=0)))


def einsum(spec: str, a: Tensor, b: Tensor) -> Tensor:
    """Two-operand ``np.einsum`` whose operands carry no privately summed index."""
    lhs, out = spec.replace(" ", "").split("->")
    sa, sb = lhs.split(",")
    for own, other in ((sa, sb), (sb, sa)):
        private = set(own) - set(other) - set(out)
        if private:
            raise ValueError(f"einsum {spec!r}: index {sorted(private)} is summed inside one operand")
    a, b = as_tensor(a), as_tensor(b)
    ad, bd = a.data, b.data
    try:
        y = np.einsum(spec, ad, bd)
    except ValueError as exc:
        raise DimensionError(f"einsum {spec!r}: shapes {a.shape} and {b.shape}") from exc
    return _record(
        y,
        (a, b),
        lambda g: (np.einsum(f"{out},{sb}->{sa}", g, bd), np.einsum(f"{out},{sa}->{sb}", g, ad)),
    )


def embedding(table: Tensor, ids) -> Tensor:
    """Columns of a D×V table selected by ``ids``, returned as len(ids)×D rows."""
    ids = np.asarray(ids, dtype=np.int64)
    if ids.size and (ids.min() < 0 or ids.max() >= table.shape[1]):
        raise IndexError(f"token id out of range for vocabulary of {table.shape[1]}")
    y = table.data[:, ids].T

    def backward(g):
        out = np.zeros(table.shape)
        np.add.at(out.T, ids, g)
        return (out,)

    return _record(y, (table,), backward)


def lstm_cell(x: Tensor, h: Tensor, c: Tensor, w: Tensor, b: Tensor, keep: np.ndarray | None = None) -> Tensor:
    """Fused LSTM step returning ``[h'; c']`` as one B×2H tensor.

    Gates come from ``[x; h] @ w.T + b`` in input, forget, cell, output
    order.  Rows where ``keep`` is False pass ``h`` and ``c`` through
    unchanged (used to run padded batches).
    """
    B, H = h.shape
    if w.shape != (4 * H, x.shape[1] + H) or b.shape != (4 * H,) or c.shape != (B, H):
        raise DimensionError(f"lstm_cell: x {x.shape}, h {h.shape}, c {c.shape}, w {w.shape}, b {b.shape}")
    n_in = x.shape[1]
    xh = np.concatenate([x.data, h.data], axis=1)
    wd = w.data
    a = xh @ wd.T + b.data
    ea = np.exp(-np.abs(a[:, : 2 * H]))
    sig_if = np.where(a[:, : 2 * H] >= 0, 1.0 / (1.0 + ea), ea / (1.0 + ea))
    i, f = sig_if[:, :H], sig_if[:, H:]
    g = np.tanh(a[:, 2 * H : 3 * H])
    ao = a[:, 3 * H :]
    eo = np.exp(-np.abs(ao))
    o = np.where(ao >= 0, 1.0 / (1.0 + eo), eo / (1.0 + eo))
    c_new = f * c.data + i * g
    tc = np.tanh(c_new)
    h_new = o * tc
    if keep is not None:
        m = keep.reshape(B, 1).astype(np.float64)
        h_new = m * h_new + (1.0 - m) * h.data
        c_new = m * c_new + (1.0 - m) * c.data
    else:
        m = None

    def backward(grad):
        gh_out, gc_out = grad[:, :H], grad[:, H:]
        gh = gh_out if m is None else m * gh_out
        gc = gh * o * (1.0 - tc * tc) + (gc_out if m is None else m * gc_out)
        da = np.concatenate(
            [gc * g * i * (1.0 - i), gc * c.data * f * (1.0 - f), gc * i * (1.0 - g * g), gh * tc * o * (1.0 - o)],
            axis=1,
        )
        dxh = da @ wd
        dh = dxh[:, n_in:]
        dc = gc * f
        if m is not None:
            dh = dh + (1.0 - m) * gh_out
            dc = dc + (1.0 - m) * gc_out
        return dxh[:, :n_in], dh, dc, da.T @ xh, da.sum(axis=0)

    return _record(np.concatenate([h_new, c_new], axis=1), (x, h, c, w, b), backward)


# ---------------------------------------------------------------------------
# normalisation


def softmax(x: Tensor, mask: np.ndarray | None = None) -> Tensor:
    """Softmax over the last axis, computed after subtracting the row maximum.

    Entries where ``mask`` is False get probability exactly 0.
    """
    if x.ndim == 0 or x.shape[-1] == 0:
        raise DimensionError(f"softmax needs a non-empty last axis, got shape {x.shape}")
    d = x.data
    if mask is not None:
        d = np.where(mask, d, -np.inf)
    shifted = d - d.max(axis=-1, keepdims=True)
    e = np.exp(shifted)
    y = e / e.sum(axis=-1, keepdims=True)

    def backward(g):
        return (y * (g - (g * y).sum(axis=-1, keepdims=True)),)

    return _record(y, (x,), backward)


def parameters_of(tensors: Iterable[Tensor]) -> list[Tensor]:
    return [t for t in tensors if t.requires_grad]
