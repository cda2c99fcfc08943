"""Dense tensors with reverse-mode automatic differentiation.

Every op returns a new :class:`Tensor`. When at least one input requires a
gradient, the output keeps references to its parents together with a closure
that maps the upstream gradient to one gradient per parent. :func:`backward`
walks the resulting graph in reverse topological order.

Broadcasting is deliberately narrow: elementwise operands must have equal
shapes, or the shape of one must be a suffix of the other (a bias added over
leading axes).
"""

from __future__ import annotations

import contextlib
from typing import Callable, Iterable, Sequence

import numpy as np

DEFAULT_DTYPE = np.float64

_grad_enabled = True


class ShapeError(ValueError):
    pass


class DomainError(ValueError):
    pass


@contextlib.contextmanager
def no_grad():
    """Disable graph recording inside the block."""
    global _grad_enabled
    prev = _grad_enabled
    _grad_enabled = False
    try:
        yield
    finally:
        _grad_enabled = prev


class Tensor:
    __slots__ = ("data", "requires_grad", "grad", "name", "_parents", "_backward", "op")

    def __init__(self, data, requires_grad: bool = False, name: str | None = None):
        arr = np.asarray(data)
        if not np.issubdtype(arr.dtype, np.floating):
            arr = arr.astype(DEFAULT_DTYPE)
        self.data = arr
        self.requires_grad = requires_grad
        self.grad: np.ndarray | None = None
        self.name = name
        self._parents: tuple[Tensor, ...] = ()
        self._backward: Callable | None = None
        self.op = "leaf"

    @property
    def shape(self) -> tuple[int, ...]:
        return self.data.shape

    @property
    def ndim(self) -> int:
        return self.data.ndim

    @property
    def T(self) -> "Tensor":
        return swap_last(self)

    def numpy(self) -> np.ndarray:
        return self.data

    def item(self) -> float:
        return float(self.data)

    def __repr__(self):
        tag = f", name={self.name!r}" if self.name else ""
        return f"Tensor(shape={self.shape}, op={self.op}{tag})"

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
            raise TypeError("division by a Tensor is not supported; multiply by a reciprocal")
        return mul(self, 1.0 / other)

    def __neg__(self):
        return mul(self, -1.0)

    def __matmul__(self, other):
        return matmul(self, other)

    def __getitem__(self, idx):
        return getitem(self, idx)

    def sum(self, axis=None, keepdims=False):
        return tsum(self, axis=axis, keepdims=keepdims)

    def reshape(self, *shape):
        if len(shape) == 1 and isinstance(shape[0], (tuple, list)):
            shape = tuple(shape[0])
        return reshape(self, shape)

    def backward(self):
        return backward(self)


def as_tensor(x) -> Tensor:
    return x if isinstance(x, Tensor) else Tensor(x)


def _record(out_data: np.ndarray, parents: Sequence[Tensor], fn: Callable, op: str) -> Tensor:
    out = Tensor(out_data)
    out.op = op
    if _grad_enabled and any(p.requires_grad for p in parents):
        out.requires_grad = True
        out._parents = tuple(parents)
        out._backward = fn
    return out


def _check_broadcast(a: tuple, b: tuple, op: str) -> None:
    if a == b:
        return
    if len(a) >= len(b) and a[len(a) - len(b):] == b:
        return
    if len(b) > len(a) and b[len(b) - len(a):] == a:
        return
    raise ShapeError(f"{op}: shapes {a} and {b} are not equal and neither is a suffix of the other")


def _unbroadcast(grad: np.ndarray, shape: tuple) -> np.ndarray:
    if grad.shape == shape:
        return grad
    lead = grad.ndim - len(shape)
    if lead > 0:
        grad = grad.sum(axis=tuple(range(lead)))
    return grad.reshape(shape)


# ---------------------------------------------------------------- elementwise


def add(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    _check_broadcast(a.shape, b.shape, "add")
    sa, sb = a.shape, b.shape
    return _record(a.data + b.data, (a, b),
                   lambda g: (_unbroadcast(g, sa), _unbroadcast(g, sb)), "add")


def sub(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    _check_broadcast(a.shape, b.shape, "sub")
    sa, sb = a.shape, b.shape
    return _record(a.data - b.data, (a, b),
                   lambda g: (_unbroadcast(g, sa), -_unbroadcast(g, sb)), "sub")


def mul(a, b) -> Tensor:
    """Elementwise product; a plain float ``b`` acts as a scalar scale."""
    if not isinstance(b, Tensor) and np.ndim(b) == 0:
        a = as_tensor(a)
        s = float(b)
        return _record(a.data * s, (a,), lambda g: (g * s,), "scale")
    a, b = as_tensor(a), as_tensor(b)
    _check_broadcast(a.shape, b.shape, "mul")
    ad, bd = a.data, b.data

    def fn(g):
        return _unbroadcast(g * bd, ad.shape), _unbroadcast(g * ad, bd.shape)

    return _record(ad * bd, (a, b), fn, "mul")


def scale(a, s: float) -> Tensor:
    return mul(a, float(s))


def sigmoid(x) -> Tensor:
    x = as_tensor(x)
    y = _sigmoid(x.data)
    return _record(y, (x,), lambda g: (g * y * (1.0 - y),), "sigmoid")


def _sigmoid(z: np.ndarray) -> np.ndarray:
    # tanh form cannot overflow for large |z|
    return 0.5 * (1.0 + np.tanh(0.5 * z))


def tanh(x) -> Tensor:
    x = as_tensor(x)
    y = np.tanh(x.data)
    return _record(y, (x,), lambda g: (g * (1.0 - y * y),), "tanh")


def relu(x) -> Tensor:
    x = as_tensor(x)
    pos = x.data > 0
    return _record(np.where(pos, x.data, 0.0), (x,), lambda g: (g * pos,), "relu")


def exp(x) -> Tensor:
    x = as_tensor(x)
    y = np.exp(x.data)
    return _record(y, (x,), lambda g: (g * y,), "exp")


def log(x) -> Tensor:
    x = as_tensor(x)
    if np.any(x.data <= 0):
        raise DomainError(f"log of non-positive input (min {x.data.min()!r})")
    xd = x.data
    return _record(np.log(xd), (x,), lambda g: (g / xd,), "log")


def clamp(x, lo: float, hi: float) -> Tensor:
    """Clip to ``[lo, hi]``; the gradient is zero where clipping is active."""
    x = as_tensor(x)
    inside = (x.data >= lo) & (x.data <= hi)
    return _record(np.clip(x.data, lo, hi), (x,), lambda g: (g * inside,), "clamp")


def smooth_l1(x) -> Tensor:
    """0.5 x^2 for |x| < 1, |x| - 0.5 otherwise."""
    x = as_tensor(x)
    ax = np.abs(x.data)
    small = ax < 1.0
    y = np.where(small, 0.5 * x.data * x.data, ax - 0.5)
    dy = np.where(small, x.data, np.sign(x.data))
    return _record(y, (x,), lambda g: (g * dy,), "smooth_l1")


def softmax(x) -> Tensor:
    """Softmax over the last axis, with per-row max subtraction."""
    x = as_tensor(x)
    if x.ndim < 1:
        raise ShapeError(f"softmax needs rank >= 1, got shape {x.shape}")
    z = x.data - x.data.max(axis=-1, keepdims=True)
    e = np.exp(z)
    y = e / e.sum(axis=-1, keepdims=True)

    def fn(g):
        return (y * (g - (g * y).sum(axis=-1, keepdims=True)),)

    return _record(y, (x,), fn, "softmax")


def softmax_rows(m) -> Tensor:
    m = as_tensor(m)
    if m.ndim != 2:
        raise ShapeError(f"softmax_rows expects a rank-2 tensor, got shape {m.shape}")
    return softmax(m)


# ---------------------------------------------------------------- linear algebra


def matmul(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    if a.ndim < 2 or b.ndim < 2:
        raise ShapeError(f"matmul needs rank >= 2 operands, got {a.shape} and {b.shape}")
    if a.shape[-1] != b.shape[-2]:
        raise ShapeError(f"matmul: inner dimensions differ for shapes {a.shape} and {b.shape}")
    ba, bb = a.shape[:-2], b.shape[:-2]
    if ba and bb and ba != bb:
        raise ShapeError(f"matmul: batch dimensions differ for shapes {a.shape} and {b.shape}")
    ad, bd = a.data, b.data

    def fn(g):
        ga = g @ np.swapaxes(bd, -1, -2)
        gb = np.swapaxes(ad, -1, -2) @ g
        return _unbroadcast(ga, ad.shape), _unbroadcast(gb, bd.shape)

    return _record(ad @ bd, (a, b), fn, "matmul")


def linear(x, weight, bias=None) -> Tensor:
    """``x @ weight.T + bias`` with ``weight`` stored as (out, in)."""
    x, weight = as_tensor(x), as_tensor(weight)
    if weight.ndim != 2 or x.shape[-1] != weight.shape[1]:
        raise ShapeError(f"linear: input shape {x.shape} does not match weight shape {weight.shape}")
    xd, wd = x.data, weight.data
    y = xd @ wd.T
    parents = [x, weight]
    if bias is not None:
        bias = as_tensor(bias)
        if bias.shape != (wd.shape[0],):
            raise ShapeError(f"linear: bias shape {bias.shape} does not match weight shape {wd.shape}")
        y = y + bias.data
        parents.append(bias)

    def fn(g):
        g2 = g.reshape(-1, g.shape[-1])
        grads = [g @ wd, g2.T @ xd.reshape(-1, xd.shape[-1])]
        if bias is not None:
            grads.append(g2.sum(axis=0))
        return tuple(grads)

    return _record(y, parents, fn, "linear")


# ---------------------------------------------------------------- structure


def tsum(x, axis=None, keepdims=False) -> Tensor:
    x = as_tensor(x)
    shape = x.shape

    def fn(g):
        if axis is not None and not keepdims:
            g = np.expand_dims(g, axis)
        return (np.broadcast_to(g, shape).copy(),)

    return _record(np.sum(x.data, axis=axis, keepdims=keepdims), (x,), fn, "sum")


def mean(x, axis=None) -> Tensor:
    x = as_tensor(x)
    count = x.data.size if axis is None else x.shape[axis]
    return scale(tsum(x, axis=axis), 1.0 / count)


def reshape(x, shape) -> Tensor:
    x = as_tensor(x)
    old = x.shape
    return _record(x.data.reshape(shape), (x,), lambda g: (g.reshape(old),), "reshape")


def transpose(x, axes) -> Tensor:
    x = as_tensor(x)
    inv = np.argsort(axes)
    return _record(np.transpose(x.data, axes), (x,), lambda g: (np.transpose(g, inv),), "transpose")


def swap_last(x) -> Tensor:
    x = as_tensor(x)
    return _record(np.swapaxes(x.data, -1, -2), (x,), lambda g: (np.swapaxes(g, -1, -2),), "swap")


def broadcast_to(x, shape) -> Tensor:
    """Explicit broadcast (numpy rules); the backward pass sums the copies."""
    x = as_tensor(x)
    src = x.shape
    lead = len(shape) - len(src)

    def fn(g):
        axes = tuple(range(lead)) + tuple(
            lead + i for i, n in enumerate(src) if n == 1 and shape[lead + i] != 1)
        return (g.sum(axis=axes, keepdims=True).reshape(src),)

    return _record(np.broadcast_to(x.data, shape).copy(), (x,), fn, "broadcast")


def concat(tensors: Iterable, axis: int = -1) -> Tensor:
    ts = [as_tensor(t) for t in tensors]
    ax = axis % ts[0].ndim
    for t in ts[1:]:
        if t.ndim != ts[0].ndim or any(t.shape[i] != ts[0].shape[i] for i in range(t.ndim) if i != ax):
            raise ShapeError(f"concat: shapes {ts[0].shape} and {t.shape} differ off axis {axis}")
    bounds = np.cumsum([0] + [t.shape[ax] for t in ts])

    def fn(g):
        return tuple(np.take(g, np.arange(bounds[i], bounds[i + 1]), axis=ax) for i in range(len(ts)))

    return _record(np.concatenate([t.data for t in ts], axis=ax), ts, fn, "concat")


def getitem(x, idx) -> Tensor:
    x = as_tensor(x)
    shape, dtype = x.shape, x.data.dtype

    def fn(g):
        out = np.zeros(shape, dtype=dtype)
        np.add.at(out, idx, g)
        return (out,)

    return _record(x.data[idx], (x,), fn, "slice")


def take_rows(table, ids) -> Tensor:
    """Gather rows of a 2-D table; ``ids`` may have any shape."""
    table = as_tensor(table)
    ids = np.asarray(ids, dtype=np.int64)
    shape = table.shape

    def fn(g):
        out = np.zeros(shape, dtype=g.dtype)
        np.add.at(out, ids.reshape(-1), g.reshape(-1, shape[1]))
        return (out,)

    return _record(table.data[ids], (table,), fn, "take_rows")


# ---------------------------------------------------------------- recurrent


def gru_scan(gates_x, recurrent, mask=None, reverse: bool = False) -> Tensor:
    """Run a GRU over time given precomputed input projections.

    ``gates_x`` has shape (B, T, 3h) laid out as [update | reset | candidate]
    and already includes the input biases. ``recurrent`` is (3h, h). ``mask``
    is a constant (B, T) array of 0/1; masked steps carry the state through
    unchanged and emit zeros. The initial state is zero.

    Cell: z = sig(xz + U_z h), r = sig(xr + U_r h), c = tanh(xc + U_c (r*h)),
    h' = (1 - z) * h + z * c.
    """
    gates_x, recurrent = as_tensor(gates_x), as_tensor(recurrent)
    gx = gates_x.data
    U = recurrent.data
    if gx.ndim != 3 or U.ndim != 2 or U.shape[0] != 3 * U.shape[1] or gx.shape[2] != U.shape[0]:
        raise ShapeError(f"gru_scan: gate shape {gx.shape} incompatible with recurrent shape {U.shape}")
    B, T, three_h = gx.shape
    h = U.shape[1]
    m = np.ones((B, T), dtype=gx.dtype) if mask is None else np.asarray(mask, dtype=gx.dtype)
    U_zr, U_c = U[: 2 * h], U[2 * h:]
    steps = range(T - 1, -1, -1) if reverse else range(T)

    hs = np.zeros((T, B, h), dtype=gx.dtype)   # state before each step
    zs = np.empty((T, B, h), dtype=gx.dtype)
    rs = np.empty((T, B, h), dtype=gx.dtype)
    cs = np.empty((T, B, h), dtype=gx.dtype)
    out = np.zeros((B, T, h), dtype=gx.dtype)
    state = np.zeros((B, h), dtype=gx.dtype)
    for t in steps:
        hs[t] = state
        zr = _sigmoid(gx[:, t, : 2 * h] + state @ U_zr.T)
        z, r = zr[:, :h], zr[:, h:]
        c = np.tanh(gx[:, t, 2 * h:] + (r * state) @ U_c.T)
        mt = m[:, t, None]
        state = mt * ((1.0 - z) * state + z * c) + (1.0 - mt) * state
        zs[t], rs[t], cs[t] = z, r, c
        out[:, t] = mt * state

    def fn(g):
        dgx = np.zeros_like(gx)
        dU = np.zeros_like(U)
        carry = np.zeros((B, h), dtype=gx.dtype)
        for t in (range(T) if reverse else range(T - 1, -1, -1)):
            mt = m[:, t, None]
            total = carry + mt * g[:, t]
            dnew = mt * total
            hp, z, r, c = hs[t], zs[t], rs[t], cs[t]
            dprev = (1.0 - mt) * total + dnew * (1.0 - z)
            dz = dnew * (c - hp)
            dac = dnew * z * (1.0 - c * c)
            rh = r * hp
            drh = dac @ U_c
            dr = drh * hp
            dprev += drh * r
            dazr = np.concatenate([dz * z * (1.0 - z), dr * r * (1.0 - r)], axis=1)
            dprev += dazr @ U_zr
            dgx[:, t, : 2 * h] = dazr
            dgx[:, t, 2 * h:] = dac
            dU[: 2 * h] += dazr.T @ hp
            dU[2 * h:] += dac.T @ rh
            carry = dprev
        return dgx, dU

    return _record(out, (gates_x, recurrent), fn, "gru_scan")


# ---------------------------------------------------------------- backward


def _topo_order(root: Tensor) -> list[Tensor]:
    order, seen = [], set()
    stack = [(root, False)]
    while stack:
        node, done = stack.pop()
        if done:
            order.append(node)
            continue
        if id(node) in seen:
            continue
        seen.add(id(node))
        stack.append((node, True))
        for p in node._parents:
            if p.requires_grad and id(p) not in seen:
                stack.append((p, False))
    return order


def backward(root: Tensor) -> dict[int, np.ndarray]:
    """Backpropagate from a scalar root.

    Returns a map from ``id(leaf)`` to the gradient for every leaf reached
    that requires a gradient; the same arrays are stored on ``leaf.grad``.
    Leaves used several times accumulate the sum of their upstream gradients.
    """
    if root.data.size != 1:
        raise ShapeError(f"backward needs a scalar root, got shape {root.shape}")
    grads: dict[int, np.ndarray] = {id(root): np.ones_like(root.data)}
    leaves: dict[int, np.ndarray] = {}
    for node in reversed(_topo_order(root)):
        g = grads.pop(id(node), None)
        if g is None:
            continue
        if node._backward is None:
            if node.requires_grad:
                node.grad = g
                leaves[id(node)] = g
            continue
        for parent, pg in zip(node._parents, node._backward(g)):
            if pg is None or not parent.requires_grad:
                continue
            key = id(parent)
            if key in grads:
                grads[key] = grads[key] + pg
            else:
                grads[key] = pg
    return leaves
