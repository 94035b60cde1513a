"""Minimal reverse-mode autodiff over numpy arrays.

Every :class:`Tensor` produced by an op gets a monotonically increasing id,
so creation order is already a topological order of the recorded graph.
``backward`` collects the nodes reachable from the loss and runs their
backward closures in decreasing id order, visiting each node once.
"""

from __future__ import annotations

import builtins
import contextlib
import itertools
from typing import Callable, Optional, Sequence

import numpy as np

__all__ = [
    "Tensor",
    "tensor",
    "no_grad",
    "add",
    "sub",
    "mul",
    "div",
    "neg",
    "matmul",
    "concat",
    "stack",
    "reshape",
    "tanh",
    "sigmoid",
    "exp",
    "log",
    "log1p",
    "expm1",
    "sqrt",
    "pow",
    "softmax",
    "sum",
    "max",
    "maximum",
    "cumsum",
    "embedding",
    "cross_entropy",
    "gru_cell",
    "backward",
    "grad_check",
]

_ids = itertools.count()
_recording = True


@contextlib.contextmanager
def no_grad():
    """Disable graph recording inside the block."""
    global _recording
    prev, _recording = _recording, False
    try:
        yield
    finally:
        _recording = prev


class Tensor:
    __slots__ = ("data", "grad", "requires_grad", "id", "_parents", "_backward", "_consumed", "_own_grad")
    # make ``ndarray <op> Tensor`` defer to the reflected Tensor operator
    __array_ufunc__ = None

    def __init__(self, data, requires_grad: bool = False, dtype=None):
        arr = np.asarray(data, dtype=dtype)
        if arr.dtype.kind != "f":
            arr = arr.astype(np.float64)
        self.data = arr
        self.grad: Optional[np.ndarray] = None
        self.requires_grad = requires_grad
        self.id = next(_ids)
        self._parents: tuple = ()
        self._backward: Optional[Callable[[np.ndarray], None]] = None
        self._consumed = False
        self._own_grad = False

    @property
    def shape(self):
        return self.data.shape

    @property
    def ndim(self):
        return self.data.ndim

    def __repr__(self):
        return f"Tensor(shape={self.shape}, requires_grad={self.requires_grad})"

    def numpy(self) -> np.ndarray:
        return self.data

    def detach(self) -> "Tensor":
        return Tensor(self.data)

    def zero_grad(self):
        self.grad = None

    def _accumulate(self, g: np.ndarray):
        # the first contribution is stored without a copy, so it may alias
        # another node's gradient; _owned_grad() copies before in-place writes
        if self.grad is None:
            self.grad = g
            self._own_grad = False
        else:
            self.grad = self.grad + g
            self._own_grad = True

    def _owned_grad(self) -> np.ndarray:
        if self.grad is None:
            self.grad = np.zeros_like(self.data)
        elif not self._own_grad:
            self.grad = np.array(self.grad, copy=True)
        self._own_grad = True
        return self.grad

    def backward(self):
        backward(self)

    __add__ = lambda self, other: add(self, other)
    __radd__ = lambda self, other: add(other, self)
    __sub__ = lambda self, other: sub(self, other)
    __rsub__ = lambda self, other: sub(other, self)
    __mul__ = lambda self, other: mul(self, other)
    __rmul__ = lambda self, other: mul(other, self)
    __truediv__ = lambda self, other: div(self, other)
    __rtruediv__ = lambda self, other: div(other, self)
    __neg__ = lambda self: neg(self)
    __matmul__ = lambda self, other: matmul(self, other)

    def __getitem__(self, index):
        return getitem(self, index)

    def sum(self, axis=None, keepdims=False):
        return sum(self, axis, keepdims)


def tensor(data, requires_grad: bool = False, dtype=np.float64) -> Tensor:
    return Tensor(np.array(data, dtype=dtype), requires_grad=requires_grad)


def _wrap(x, like: Optional[Tensor] = None) -> Tensor:
    if isinstance(x, Tensor):
        return x
    dtype = like.data.dtype if like is not None else None
    return Tensor(np.asarray(x, dtype=dtype))


def _result(data: np.ndarray, parents: Sequence[Tensor], backward_fn) -> Tensor:
    needs = _recording and any(p.requires_grad for p in parents)
    out = Tensor(data, requires_grad=needs)
    if needs:
        out._parents = tuple(parents)
        out._backward = backward_fn
    return out


def _unbroadcast(g: np.ndarray, shape) -> np.ndarray:
    if g.shape == tuple(shape):
        return g
    extra = g.ndim - len(shape)
    if extra > 0:
        g = g.sum(axis=tuple(range(extra)))
    axes = tuple(i for i, n in enumerate(shape) if n == 1 and g.shape[i] != 1)
    if axes:
        g = g.sum(axis=axes, keepdims=True)
    return g.reshape(shape)


def _check_broadcast(a: Tensor, b: Tensor, op: str):
    try:
        np.broadcast_shapes(a.shape, b.shape)
    except ValueError:
        raise ValueError(f"{op}: shape mismatch {a.shape} vs {b.shape}") from None


# --- elementwise binary ------------------------------------------------------


def add(a, b) -> Tensor:
    a, b = _wrap(a, b if isinstance(b, Tensor) else None), _wrap(b, a if isinstance(a, Tensor) else None)
    _check_broadcast(a, b, "add")

    def bw(g):
        if a.requires_grad:
            a._accumulate(_unbroadcast(g, a.shape))
        if b.requires_grad:
            b._accumulate(_unbroadcast(g, b.shape))

    return _result(a.data + b.data, (a, b), bw)


def sub(a, b) -> Tensor:
    a, b = _wrap(a, b if isinstance(b, Tensor) else None), _wrap(b, a if isinstance(a, Tensor) else None)
    _check_broadcast(a, b, "sub")

    def bw(g):
        if a.requires_grad:
            a._accumulate(_unbroadcast(g, a.shape))
        if b.requires_grad:
            b._accumulate(_unbroadcast(-g, b.shape))

    return _result(a.data - b.data, (a, b), bw)


def mul(a, b) -> Tensor:
    a, b = _wrap(a, b if isinstance(b, Tensor) else None), _wrap(b, a if isinstance(a, Tensor) else None)
    _check_broadcast(a, b, "mul")

    def bw(g):
        if a.requires_grad:
            a._accumulate(_unbroadcast(g * b.data, a.shape))
        if b.requires_grad:
            b._accumulate(_unbroadcast(g * a.data, b.shape))

    return _result(a.data * b.data, (a, b), bw)


def div(a, b) -> Tensor:
    a, b = _wrap(a, b if isinstance(b, Tensor) else None), _wrap(b, a if isinstance(a, Tensor) else None)
    _check_broadcast(a, b, "div")
    out = a.data / b.data

    def bw(g):
        if a.requires_grad:
            a._accumulate(_unbroadcast(g / b.data, a.shape))
        if b.requires_grad:
            b._accumulate(_unbroadcast(-g * out / b.data, b.shape))

    return _result(out, (a, b), bw)


def neg(a: Tensor) -> Tensor:
    def bw(g):
        a._accumulate(-g)

    return _result(-a.data, (a,), bw)


def matmul(a: Tensor, b: Tensor) -> Tensor:
    """``a @ b`` for 2-D operands, batched 3-D operands, or 3-D @ 2-D."""
    a, b = _wrap(a), _wrap(b)
    if a.ndim < 2 or b.ndim < 1 or a.shape[-1] != b.shape[-2 if b.ndim > 1 else 0]:
        raise ValueError(f"matmul: shape mismatch {a.shape} @ {b.shape}")
    if b.ndim > 2 and a.ndim != b.ndim:
        raise ValueError(f"matmul: unsupported batch shapes {a.shape} @ {b.shape}")

    def bw(g):
        if a.requires_grad:
            if b.ndim == 1:
                a._accumulate(np.multiply.outer(g, b.data))
            else:
                a._accumulate(g @ np.swapaxes(b.data, -1, -2))
        if b.requires_grad:
            if b.ndim == 1:
                gb = np.tensordot(a.data, g, axes=(tuple(range(a.ndim - 1)), tuple(range(g.ndim))))
            elif b.ndim == 2 and a.ndim > 2:
                k = a.shape[-1]
                gb = a.data.reshape(-1, k).T @ g.reshape(-1, g.shape[-1])
            else:
                gb = np.swapaxes(a.data, -1, -2) @ g
            b._accumulate(gb)

    return _result(a.data @ b.data, (a, b), bw)


# --- structural ----------------------------------------------------------------


def _is_basic(index) -> bool:
    items = index if isinstance(index, tuple) else (index,)
    return all(isinstance(i, (int, slice, type(None), type(Ellipsis))) for i in items)


def getitem(a: Tensor, index) -> Tensor:
    basic = _is_basic(index)

    def bw(g):
        buf = a._owned_grad()
        if basic:
            buf[index] += g
        else:
            np.add.at(buf, index, g)

    return _result(a.data[index], (a,), bw)


def concat(tensors: Sequence[Tensor], axis: int = -1) -> Tensor:
    tensors = [_wrap(t) for t in tensors]
    try:
        data = np.concatenate([t.data for t in tensors], axis=axis)
    except ValueError as exc:
        raise ValueError(f"concat: {exc}") from None
    sizes = np.cumsum([t.shape[axis] for t in tensors])[:-1]

    def bw(g):
        for t, piece in zip(tensors, np.split(g, sizes, axis=axis)):
            if t.requires_grad:
                t._accumulate(piece)

    return _result(data, tensors, bw)


def stack(tensors: Sequence[Tensor], axis: int = 0) -> Tensor:
    tensors = [_wrap(t) for t in tensors]
    try:
        data = np.stack([t.data for t in tensors], axis=axis)
    except ValueError as exc:
        raise ValueError(f"stack: {exc}") from None

    def bw(g):
        for i, t in enumerate(tensors):
            if t.requires_grad:
                t._accumulate(np.take(g, i, axis=axis))

    return _result(data, tensors, bw)


def reshape(a: Tensor, shape) -> Tensor:
    def bw(g):
        a._accumulate(g.reshape(a.shape))

    return _result(a.data.reshape(shape), (a,), bw)


# --- elementwise unary -----------------------------------------------------------


def tanh(a: Tensor) -> Tensor:
    out = np.tanh(a.data)
    return _result(out, (a,), lambda g: a._accumulate(g * (1.0 - out * out)))


def _sigmoid(x):
    return 0.5 * (np.tanh(0.5 * x) + 1.0)


def sigmoid(a: Tensor) -> Tensor:
    out = _sigmoid(a.data)
    return _result(out, (a,), lambda g: a._accumulate(g * out * (1.0 - out)))


def exp(a: Tensor) -> Tensor:
    out = np.exp(a.data)
    return _result(out, (a,), lambda g: a._accumulate(g * out))


def expm1(a: Tensor) -> Tensor:
    out = np.expm1(a.data)
    return _result(out, (a,), lambda g: a._accumulate(g * (out + 1.0)))


def log(a: Tensor) -> Tensor:
    return _result(np.log(a.data), (a,), lambda g: a._accumulate(g / a.data))


def log1p(a: Tensor) -> Tensor:
    return _result(np.log1p(a.data), (a,), lambda g: a._accumulate(g / (1.0 + a.data)))


def sqrt(a: Tensor) -> Tensor:
    out = np.sqrt(a.data)
    return _result(out, (a,), lambda g: a._accumulate(g * 0.5 / out))


def pow(a: Tensor, p: float) -> Tensor:
    p = float(p)
    return _result(a.data ** p, (a,), lambda g: a._accumulate(g * p * a.data ** (p - 1.0)))


# --- reductions ------------------------------------------------------------------------


def softmax(a: Tensor, axis: int = -1) -> Tensor:
    z = a.data - a.data.max(axis=axis, keepdims=True)
    e = np.exp(z)
    out = e / e.sum(axis=axis, keepdims=True)

    def bw(g):
        a._accumulate(out * (g - (g * out).sum(axis=axis, keepdims=True)))

    return _result(out, (a,), bw)


def sum(a: Tensor, axis=None, keepdims: bool = False) -> Tensor:
    out = a.data.sum(axis=axis, keepdims=keepdims)

    def bw(g):
        if axis is not None and not keepdims:
            g = np.expand_dims(g, axis)
        a._accumulate(np.broadcast_to(g, a.shape))

    return _result(out, (a,), bw)


def max(a: Tensor, axis: int = -1, detach: bool = True) -> Tensor:
    """Max along ``axis``; a constant unless ``detach`` is False.

    With ``detach=False`` the gradient is routed to the first argmax.
    """
    out = a.data.max(axis=axis)
    if detach:
        return Tensor(out)
    idx = np.expand_dims(a.data.argmax(axis=axis), axis)

    def bw(g):
        full = np.zeros_like(a.data)
        np.put_along_axis(full, idx, np.expand_dims(g, axis), axis=axis)
        a._accumulate(full)

    return _result(out, (a,), bw)


def maximum(a: Tensor, b: Tensor, detach: bool = True) -> Tensor:
    """Elementwise max; ties route the gradient to ``a``."""
    a, b = _wrap(a), _wrap(b)
    out = np.maximum(a.data, b.data)
    if detach:
        return Tensor(out)
    pick_a = a.data >= b.data

    def bw(g):
        if a.requires_grad:
            a._accumulate(_unbroadcast(np.where(pick_a, g, 0.0), a.shape))
        if b.requires_grad:
            b._accumulate(_unbroadcast(np.where(pick_a, 0.0, g), b.shape))

    return _result(out, (a, b), bw)


def cumsum(a: Tensor, axis: int = -1) -> Tensor:
    def bw(g):
        rev = np.flip(g, axis=axis)
        a._accumulate(np.flip(np.cumsum(rev, axis=axis), axis=axis))

    return _result(np.cumsum(a.data, axis=axis), (a,), bw)


def embedding(weight: Tensor, ids) -> Tensor:
    ids = np.asarray(ids, dtype=np.int64)
    if ids.size and (ids.min() < 0 or ids.max() >= weight.shape[0]):
        raise IndexError("embedding: id out of range")

    def bw(g):
        np.add.at(weight._owned_grad(), ids, g)

    return _result(weight.data[ids], (weight,), bw)


def cross_entropy(logits: Tensor, targets, ignore_index: Optional[int] = None) -> Tensor:
    """Mean softmax cross-entropy over the last axis, skipping ``ignore_index``."""
    targets = np.asarray(targets, dtype=np.int64)
    if logits.shape[:-1] != targets.shape:
        raise ValueError(f"cross_entropy: logits {logits.shape} vs targets {targets.shape}")
    z = logits.data - logits.data.max(axis=-1, keepdims=True)
    logp = z - np.log(np.exp(z).sum(axis=-1, keepdims=True))
    mask = np.ones(targets.shape, dtype=bool) if ignore_index is None else targets != ignore_index
    count = builtins.max(int(mask.sum()), 1)
    safe = np.where(mask, targets, 0)
    picked = np.take_along_axis(logp, safe[..., None], axis=-1)[..., 0]
    loss = -(picked * mask).sum() / count

    def bw(g):
        grad = np.exp(logp)
        np.put_along_axis(grad, safe[..., None], np.take_along_axis(grad, safe[..., None], -1) - 1.0, -1)
        grad *= (mask / count)[..., None]
        logits._accumulate(g * grad)

    return _result(np.asarray(loss, dtype=logits.data.dtype), (logits,), bw)


def gru_cell(xproj: Tensor, h: Tensor, w_h: Tensor, b_h: Tensor, mask=None) -> Tensor:
    """One GRU step given the precomputed input projection ``x @ W_x + b_x``.

    Gate layout along the last axis is ``[update, reset, candidate]``. The
    reset gate multiplies the hidden projection of the candidate, including
    its bias. Rows with ``mask == 0`` carry ``h`` through unchanged.
    """
    d = h.shape[-1]
    hp = h.data @ w_h.data + b_h.data
    xz, xr, xn = xproj.data[:, :d], xproj.data[:, d:2 * d], xproj.data[:, 2 * d:]
    hz, hr, hn = hp[:, :d], hp[:, d:2 * d], hp[:, 2 * d:]
    z = _sigmoid(xz + hz)
    r = _sigmoid(xr + hr)
    n = np.tanh(xn + r * hn)
    out = (1.0 - z) * n + z * h.data
    m = None
    if mask is not None:
        m = np.asarray(mask, dtype=h.data.dtype).reshape(-1, 1)
        out = m * out + (1.0 - m) * h.data

    def bw(g):
        gh_direct = g if m is None else (1.0 - m) * g
        if m is not None:
            g = m * g
        dn = g * (1.0 - z) * (1.0 - n * n)
        dz = g * (h.data - n) * z * (1.0 - z)
        dhn = dn * r
        dr = dn * hn * r * (1.0 - r)
        dx = np.concatenate([dz, dr, dn], axis=1)
        dhp = np.concatenate([dz, dr, dhn], axis=1)
        if xproj.requires_grad:
            xproj._accumulate(dx)
        if h.requires_grad:
            h._accumulate(dhp @ w_h.data.T + g * z + (gh_direct if m is not None else 0.0))
        if w_h.requires_grad:
            w_h._accumulate(h.data.T @ dhp)
        if b_h.requires_grad:
            b_h._accumulate(dhp.sum(axis=0))

    return _result(out, (xproj, h, w_h, b_h), bw)


# --- driver ---------------------------------------------------------------------------


def backward(loss: Tensor):
    """Populate ``.grad`` on every requires-grad tensor feeding ``loss``."""
    if loss.data.size != 1:
        raise ValueError(f"backward needs a scalar loss, got shape {loss.shape}")
    if loss._consumed:
        raise RuntimeError("backward already ran on this loss; rebuild the graph first")
    if not loss.requires_grad:
        raise RuntimeError("loss does not depend on any requires-grad tensor")
    nodes, seen, todo = [], {loss.id}, [loss]
    while todo:
        node = todo.pop()
        nodes.append(node)
        for parent in node._parents:
            if parent.requires_grad and parent.id not in seen:
                seen.add(parent.id)
                todo.append(parent)
    nodes.sort(key=lambda t: t.id, reverse=True)
    loss.grad = np.ones_like(loss.data)
    for node in nodes:
        if node._backward is not None and node.grad is not None:
            node._backward(node.grad)
            if node is not loss:
                # intermediate grads are not needed after propagation
                node.grad = None
            node._backward = None
            node._parents = ()
    loss._consumed = True


def grad_check(f: Callable[[Tensor], Tensor], x, eps: float = 1e-6, floor: float = 1e-6) -> float:
    """Worst relative error between analytic and central-difference gradients.

    ``f`` maps a tensor to a scalar tensor. The relative error of each
    coordinate is ``|analytic - numeric| / max(|analytic|, |numeric|, floor)``.
    """
    base = np.array(x.data if isinstance(x, Tensor) else x, dtype=np.float64)
    leaf = Tensor(base.copy(), requires_grad=True)
    loss = f(leaf)
    backward(loss)
    analytic = np.zeros_like(base) if leaf.grad is None else leaf.grad
    numeric = np.zeros_like(base)
    flat = base.reshape(-1)
    num_flat = numeric.reshape(-1)
    with no_grad():
        for i in range(flat.size):
            orig = flat[i]
            flat[i] = orig + eps
            up = float(f(Tensor(base.copy())).data)
            flat[i] = orig - eps
            down = float(f(Tensor(base.copy())).data)
            flat[i] = orig
            num_flat[i] = (up - down) / (2 * eps)
    denom = np.maximum(np.maximum(np.abs(analytic), np.abs(numeric)), floor)
    return float(np.max(np.abs(analytic - numeric) / denom))
