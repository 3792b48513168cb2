"""Dense float64 arrays with a reverse-mode gradient tape.

Every op builds a new :class:`Tensor` and, when any input requires a gradient,
records a closure mapping the output gradient to input gradients. Node ids
increase monotonically, so sorting reachable nodes by id is a valid
topological order for :func:`backward`.
"""

from __future__ import annotations

import contextlib
import itertools
import threading
from typing import Callable, Iterable, Sequence

import numpy as np

__all__ = [
    "Tensor",
    "ShapeError",
    "NonFiniteError",
    "tensor",
    "zeros",
    "no_grad",
    "is_grad_enabled",
    "elementwise",
    "add",
    "sub",
    "mul",
    "div",
    "neg",
    "relu",
    "sigmoid",
    "log",
    "log_sigmoid",
    "exp",
    "sqrt",
    "abs_",
    "power",
    "maximum",
    "minimum",
    "where",
    "matmul",
    "reduce",
    "sum_",
    "mean",
    "max_",
    "structural",
    "reshape",
    "transpose",
    "transpose2d",
    "concat",
    "slice_",
    "broadcast_to",
    "softmax",
    "log_softmax",
    "conv2d",
    "upsample2x",
    "backward",
    "zero_grad",
    "finite_difference_check",
]


class ShapeError(ValueError):
    """Operand shapes are incompatible for the requested op."""


class NonFiniteError(FloatingPointError):
    """An op produced (or received) NaN or Inf."""


_node_counter = itertools.count()
_state = threading.local()


def is_grad_enabled() -> bool:
    return getattr(_state, "grad_enabled", True)


@contextlib.contextmanager
def no_grad():
    """Disable tape recording inside the block (evaluation, matching)."""
    prev = is_grad_enabled()
    _state.grad_enabled = False
    try:
        yield
    finally:
        _state.grad_enabled = prev


class Tensor:
    __slots__ = ("data", "requires_grad", "grad", "node", "name", "_parents", "_backward")

    def __init__(self, data, requires_grad: bool = False, name: str | None = None):
        arr = np.array(data, dtype=np.float64) if not isinstance(data, np.ndarray) else data
        if arr.dtype != np.float64:
            arr = arr.astype(np.float64)
        self.data: np.ndarray = arr
        self.requires_grad = requires_grad
        self.grad: np.ndarray | None = None
        self.node = next(_node_counter)
        self.name = name
        self._parents: tuple[Tensor, ...] = ()
        self._backward: Callable[[np.ndarray], Sequence[np.ndarray | None]] | None = None

    # --- basic properties -------------------------------------------------
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
    def T(self) -> "Tensor":
        return transpose2d(self)

    def item(self) -> float:
        return float(self.data.reshape(-1)[0]) if self.data.size == 1 else _raise_item(self)

    def numpy(self) -> np.ndarray:
        return self.data

    def detach(self) -> "Tensor":
        return Tensor(self.data)

    def __repr__(self) -> str:
        flag = ", requires_grad=True" if self.requires_grad else ""
        return f"Tensor(shape={self.shape}{flag})"

    def __len__(self) -> int:
        return self.shape[0]

    # --- operators --------------------------------------------------------
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

    def __neg__(self):
        return neg(self)

    def __pow__(self, p: float):
        return power(self, p)

    def __matmul__(self, other):
        return matmul(self, other)

    def __getitem__(self, index):
        return slice_(self, index)

    # --- method sugar -----------------------------------------------------
    def sum(self, axis=None, keepdims: bool = False) -> "Tensor":
        return sum_(self, axis, keepdims)

    def mean(self, axis=None, keepdims: bool = False) -> "Tensor":
        return mean(self, axis, keepdims)

    def max(self, axis=None, keepdims: bool = False) -> "Tensor":
        return max_(self, axis, keepdims)

    def reshape(self, *shape) -> "Tensor":
        if len(shape) == 1 and isinstance(shape[0], (tuple, list)):
            shape = tuple(shape[0])
        return reshape(self, shape)

    def transpose(self, *axes) -> "Tensor":
        if len(axes) == 1 and isinstance(axes[0], (tuple, list)):
            axes = tuple(axes[0])
        return transpose(self, axes or None)

    def relu(self) -> "Tensor":
        return relu(self)

    def sigmoid(self) -> "Tensor":
        return sigmoid(self)

    def exp(self) -> "Tensor":
        return exp(self)

    def log(self) -> "Tensor":
        return log(self)

    def backward(self) -> None:
        backward(self)


def _raise_item(t: Tensor):
    raise ShapeError(f"item() needs a single-element tensor, got shape {t.shape}")


def tensor(data, requires_grad: bool = False, name: str | None = None) -> Tensor:
    return Tensor(np.array(data, dtype=np.float64), requires_grad=requires_grad, name=name)


def zeros(shape, requires_grad: bool = False) -> Tensor:
    return Tensor(np.zeros(shape), requires_grad=requires_grad)


def _as_tensor(x) -> Tensor:
    return x if isinstance(x, Tensor) else Tensor(np.asarray(x, dtype=np.float64))


def _check_finite(arr: np.ndarray, what: str) -> None:
    if not np.isfinite(arr).all():
        raise NonFiniteError(f"non-finite value produced by {what}")


def _result(data: np.ndarray, parents: tuple[Tensor, ...], back, what: str) -> Tensor:
    _check_finite(data, what)
    out = Tensor(data)
    if is_grad_enabled() and any(p.requires_grad for p in parents):
        out.requires_grad = True
        out._parents = parents
        out._backward = back
    return out


def _unbroadcast(grad: np.ndarray, shape: tuple[int, ...]) -> np.ndarray:
    if grad.shape == shape:
        return grad
    extra = grad.ndim - len(shape)
    if extra > 0:
        grad = grad.sum(axis=tuple(range(extra)))
    axes = tuple(i for i, n in enumerate(shape) if n == 1 and grad.shape[i] != 1)
    if axes:
        grad = grad.sum(axis=axes, keepdims=True)
    return grad.reshape(shape)


def _broadcast_shape(a: tuple[int, ...], b: tuple[int, ...]) -> tuple[int, ...]:
    try:
        return np.broadcast_shapes(a, b)
    except ValueError as exc:
        raise ShapeError(f"cannot broadcast {a} with {b}") from exc


# --- elementwise -----------------------------------------------------------


def add(a, b) -> Tensor:
    a, b = _as_tensor(a), _as_tensor(b)
    _broadcast_shape(a.shape, b.shape)
    sa, sb = a.shape, b.shape
    return _result(a.data + b.data, (a, b), lambda g: (_unbroadcast(g, sa), _unbroadcast(g, sb)), "add")


def sub(a, b) -> Tensor:
    a, b = _as_tensor(a), _as_tensor(b)
    _broadcast_shape(a.shape, b.shape)
    sa, sb = a.shape, b.shape
    return _result(a.data - b.data, (a, b), lambda g: (_unbroadcast(g, sa), _unbroadcast(-g, sb)), "sub")


def mul(a, b) -> Tensor:
    a, b = _as_tensor(a), _as_tensor(b)
    _broadcast_shape(a.shape, b.shape)
    ad, bd = a.data, b.data

    def back(g):
        return (
            _unbroadcast(g * bd, ad.shape) if a.requires_grad else None,
            _unbroadcast(g * ad, bd.shape) if b.requires_grad else None,
        )

    return _result(ad * bd, (a, b), back, "mul")


def div(a, b) -> Tensor:
    a, b = _as_tensor(a), _as_tensor(b)
    _broadcast_shape(a.shape, b.shape)
    ad, bd = a.data, b.data
    if np.any(bd == 0):
        raise NonFiniteError("division by zero")
    out = ad / bd

    def back(g):
        return (
            _unbroadcast(g / bd, ad.shape) if a.requires_grad else None,
            _unbroadcast(-g * out / bd, bd.shape) if b.requires_grad else None,
        )

    return _result(out, (a, b), back, "div")


def neg(a) -> Tensor:
    a = _as_tensor(a)
    return _result(-a.data, (a,), lambda g: (-g,), "neg")


def relu(a) -> Tensor:
    a = _as_tensor(a)
    mask = a.data > 0
    return _result(np.where(mask, a.data, 0.0), (a,), lambda g: (g * mask,), "relu")


def sigmoid(a) -> Tensor:
    a = _as_tensor(a)
    x = a.data
    # split by sign so exp never overflows
    e = np.exp(-np.abs(x))
    out = np.where(x >= 0, 1.0 / (1.0 + e), e / (1.0 + e))
    return _result(out, (a,), lambda g: (g * out * (1.0 - out),), "sigmoid")


def log_sigmoid(a) -> Tensor:
    """log(sigmoid(a)) without overflow for large |a|."""
    a = _as_tensor(a)
    x = a.data
    out = -(np.maximum(-x, 0.0) + np.log1p(np.exp(-np.abs(x))))
    e = np.exp(-np.abs(x))
    sig = np.where(x >= 0, 1.0 / (1.0 + e), e / (1.0 + e))
    return _result(out, (a,), lambda g: (g * (1.0 - sig),), "log_sigmoid")


def log(a) -> Tensor:
    a = _as_tensor(a)
    x = a.data
    if np.any(x <= 0):
        raise ValueError("log requires strictly positive inputs")
    return _result(np.log(x), (a,), lambda g: (g / x,), "log")


def exp(a) -> Tensor:
    a = _as_tensor(a)
    with np.errstate(over="ignore"):
        out = np.exp(a.data)
    return _result(out, (a,), lambda g: (g * out,), "exp")


def sqrt(a) -> Tensor:
    a = _as_tensor(a)
    if np.any(a.data < 0):
        raise ValueError("sqrt of negative value")
    out = np.sqrt(a.data)
    return _result(out, (a,), lambda g: (g * 0.5 / out,), "sqrt")


def abs_(a) -> Tensor:
    a = _as_tensor(a)
    s = np.sign(a.data)
    return _result(np.abs(a.data), (a,), lambda g: (g * s,), "abs")


def power(a, p: float) -> Tensor:
    a = _as_tensor(a)
    x = a.data
    out = x**p
    return _result(out, (a,), lambda g: (g * p * x ** (p - 1),), "power")


def maximum(a, b) -> Tensor:
    """Elementwise max; on ties the gradient goes to ``a``."""
    a, b = _as_tensor(a), _as_tensor(b)
    _broadcast_shape(a.shape, b.shape)
    pick_a = a.data >= b.data
    sa, sb = a.shape, b.shape
    return _result(
        np.where(pick_a, a.data, b.data),
        (a, b),
        lambda g: (_unbroadcast(g * pick_a, sa), _unbroadcast(g * ~pick_a, sb)),
        "maximum",
    )


def minimum(a, b) -> Tensor:
    """Elementwise min; on ties the gradient goes to ``a``."""
    a, b = _as_tensor(a), _as_tensor(b)
    _broadcast_shape(a.shape, b.shape)
    pick_a = a.data <= b.data
    sa, sb = a.shape, b.shape
    return _result(
        np.where(pick_a, a.data, b.data),
        (a, b),
        lambda g: (_unbroadcast(g * pick_a, sa), _unbroadcast(g * ~pick_a, sb)),
        "minimum",
    )


def where(cond, a, b) -> Tensor:
    """Select from ``a`` where ``cond`` holds, else ``b``; ``cond`` is constant."""
    cond = np.asarray(cond, dtype=bool)
    a, b = _as_tensor(a), _as_tensor(b)
    sa, sb = a.shape, b.shape
    out = np.where(cond, a.data, b.data)
    return _result(
        out,
        (a, b),
        lambda g: (_unbroadcast(np.where(cond, g, 0.0), sa), _unbroadcast(np.where(cond, 0.0, g), sb)),
        "where",
    )


_ELEMENTWISE = {
    "add": add,
    "sub": sub,
    "mul": mul,
    "div": div,
    "relu": relu,
    "sigmoid": sigmoid,
    "log": log,
    "exp": exp,
    "neg": neg,
}


def elementwise(kind: str, a, b=None) -> Tensor:
    try:
        fn = _ELEMENTWISE[kind]
    except KeyError:
        raise ValueError(f"unknown elementwise kind {kind!r}") from None
    if kind in ("add", "sub", "mul", "div"):
        if b is None:
            raise ShapeError(f"{kind} needs two operands")
        return fn(a, b)
    return fn(a)


# --- linear algebra --------------------------------------------------------


def matmul(a, b) -> Tensor:
    """Matrix product over the last two axes; leading axes broadcast."""
    a, b = _as_tensor(a), _as_tensor(b)
    if a.ndim < 2 or b.ndim < 2:
        raise ShapeError("matmul needs operands of rank >= 2")
    if a.shape[-1] != b.shape[-2]:
        raise ShapeError(f"matmul inner dimensions differ: {a.shape} @ {b.shape}")
    ad, bd = a.data, b.data

    def back(g):
        ga = _unbroadcast(g @ np.swapaxes(bd, -1, -2), ad.shape) if a.requires_grad else None
        gb = _unbroadcast(np.swapaxes(ad, -1, -2) @ g, bd.shape) if b.requires_grad else None
        return ga, gb

    return _result(ad @ bd, (a, b), back, "matmul")


# --- reductions ------------------------------------------------------------


def _norm_axes(axis, ndim: int) -> tuple[int, ...]:
    if axis is None:
        return tuple(range(ndim))
    if isinstance(axis, int):
        axis = (axis,)
    out = []
    for ax in axis:
        if not -ndim <= ax < ndim:
            raise ShapeError(f"axis {ax} out of range for rank {ndim}")
        out.append(ax % ndim)
    return tuple(sorted(set(out)))


def _expand_reduced(g: np.ndarray, in_shape, axes, keepdims: bool) -> np.ndarray:
    if not keepdims:
        g = np.expand_dims(g, axes)
    return np.broadcast_to(g, in_shape)


def sum_(a, axis=None, keepdims: bool = False) -> Tensor:
    a = _as_tensor(a)
    axes = _norm_axes(axis, a.ndim)
    shape = a.shape
    out = a.data.sum(axis=axes, keepdims=keepdims)
    return _result(np.asarray(out), (a,), lambda g: (_expand_reduced(g, shape, axes, keepdims),), "sum")


def mean(a, axis=None, keepdims: bool = False) -> Tensor:
    a = _as_tensor(a)
    axes = _norm_axes(axis, a.ndim)
    shape = a.shape
    count = int(np.prod([shape[i] for i in axes])) if axes else 1
    out = a.data.mean(axis=axes, keepdims=keepdims) if axes else a.data.copy()
    return _result(
        np.asarray(out), (a,), lambda g: (_expand_reduced(g, shape, axes, keepdims) / count,), "mean"
    )


def max_(a, axis=None, keepdims: bool = False) -> Tensor:
    """Max reduction; the gradient flows to the first maximal element (row-major)."""
    a = _as_tensor(a)
    axes = _norm_axes(axis, a.ndim)
    x = a.data
    keep = [i for i in range(a.ndim) if i not in axes]
    # move reduced axes last and flatten them so argmax picks the first maximum
    moved = np.transpose(x, keep + list(axes))
    lead = moved.shape[: len(keep)]
    flat = moved.reshape(lead + (-1,))
    idx = flat.argmax(axis=-1)
    vals = np.take_along_axis(flat, idx[..., None], axis=-1)[..., 0]
    out = vals
    if keepdims:
        out = np.expand_dims(vals, axes)

    def back(g):
        g = np.asarray(g).reshape(lead)
        gflat = np.zeros(flat.shape)
        np.put_along_axis(gflat, idx[..., None], g[..., None], axis=-1)
        gmoved = gflat.reshape(moved.shape)
        return (np.transpose(gmoved, np.argsort(keep + list(axes))),)

    res = _result(np.asarray(out), (a,), back, "max")
    return res


def argmax_first(a: Tensor, axis=None):
    """Index of the first maximal element, matching the ``max_`` tie rule."""
    return np.argmax(a.data, axis=axis)


def reduce(kind: str, a, axes=None, keepdims: bool = False) -> Tensor:
    if kind == "sum":
        return sum_(a, axes, keepdims)
    if kind == "mean":
        return mean(a, axes, keepdims)
    if kind == "max":
        return max_(a, axes, keepdims)
    raise ValueError(f"unknown reduction {kind!r}")


# --- structural ------------------------------------------------------------


def reshape(a, shape) -> Tensor:
    a = _as_tensor(a)
    shape = tuple(shape)
    try:
        out = a.data.reshape(shape)
    except ValueError as exc:
        raise ShapeError(f"cannot reshape {a.shape} to {shape}") from exc
    in_shape = a.shape
    return _result(out, (a,), lambda g: (g.reshape(in_shape),), "reshape")


def transpose(a, axes=None) -> Tensor:
    a = _as_tensor(a)
    if axes is None:
        axes = tuple(reversed(range(a.ndim)))
    axes = tuple(axes)
    if sorted(axes) != list(range(a.ndim)):
        raise ShapeError(f"invalid permutation {axes} for rank {a.ndim}")
    inv = tuple(np.argsort(axes))
    return _result(np.transpose(a.data, axes), (a,), lambda g: (np.transpose(g, inv),), "transpose")


def transpose2d(a) -> Tensor:
    a = _as_tensor(a)
    if a.ndim != 2:
        raise ShapeError("transpose2d needs a 2-D tensor")
    return transpose(a, (1, 0))


def concat(tensors: Sequence, axis: int = 0) -> Tensor:
    ts = [_as_tensor(t) for t in tensors]
    if not ts:
        raise ShapeError("concat of an empty list")
    ndim = ts[0].ndim
    axis = axis % ndim
    for t in ts[1:]:
        if t.ndim != ndim or any(t.shape[i] != ts[0].shape[i] for i in range(ndim) if i != axis):
            raise ShapeError(f"concat shapes differ off-axis: {[t.shape for t in ts]}")
    sizes = [t.shape[axis] for t in ts]
    bounds = np.cumsum([0] + sizes)

    def back(g):
        out = []
        for t, lo, hi in zip(ts, bounds[:-1], bounds[1:]):
            if not t.requires_grad:
                out.append(None)
                continue
            sl = [slice(None)] * ndim
            sl[axis] = slice(int(lo), int(hi))
            out.append(g[tuple(sl)])
        return out

    return _result(np.concatenate([t.data for t in ts], axis=axis), tuple(ts), back, "concat")


def slice_(a, index) -> Tensor:
    """Basic or integer-array indexing; the backward scatters with accumulation."""
    a = _as_tensor(a)
    try:
        out = a.data[index]
    except IndexError as exc:
        raise ShapeError(str(exc)) from exc
    shape = a.shape

    parts = index if isinstance(index, tuple) else (index,)
    basic = all(isinstance(i, (int, np.integer, slice)) or i is None or i is Ellipsis for i in parts)

    def back(g):
        full = np.zeros(shape)
        if basic:
            full[index] += g
        else:
            np.add.at(full, index, g)
        return (full,)

    return _result(np.array(out, dtype=np.float64), (a,), back, "slice")


def broadcast_to(a, shape) -> Tensor:
    a = _as_tensor(a)
    shape = tuple(shape)
    try:
        out = np.broadcast_to(a.data, shape)
    except ValueError as exc:
        raise ShapeError(f"cannot broadcast {a.shape} to {shape}") from exc
    in_shape = a.shape
    return _result(np.array(out), (a,), lambda g: (_unbroadcast(g, in_shape),), "broadcast_to")


def structural(kind: str, *args, **kwargs) -> Tensor:
    fns = {
        "reshape": reshape,
        "transpose2d": transpose2d,
        "transpose": transpose,
        "concat": concat,
        "slice": slice_,
        "broadcast_to": broadcast_to,
    }
    if kind not in fns:
        raise ValueError(f"unknown structural op {kind!r}")
    return fns[kind](*args, **kwargs)


# --- softmax family --------------------------------------------------------


def softmax(a, axis: int = -1) -> Tensor:
    a = _as_tensor(a)
    _check_finite(a.data, "softmax input")
    z = a.data - a.data.max(axis=axis, keepdims=True)
    e = np.exp(z)
    out = e / e.sum(axis=axis, keepdims=True)

    def back(g):
        return (out * (g - (g * out).sum(axis=axis, keepdims=True)),)

    return _result(out, (a,), back, "softmax")


def log_softmax(a, axis: int = -1) -> Tensor:
    a = _as_tensor(a)
    _check_finite(a.data, "log_softmax input")
    z = a.data - a.data.max(axis=axis, keepdims=True)
    lse = np.log(np.exp(z).sum(axis=axis, keepdims=True))
    out = z - lse
    p = np.exp(out)

    def back(g):
        return (g - p * g.sum(axis=axis, keepdims=True),)

    return _result(out, (a,), back, "log_softmax")


# --- convolution -----------------------------------------------------------


def _im2col(x: np.ndarray, k: int, stride: int, pad: int) -> tuple[np.ndarray, int, int]:
    b, c, h, w = x.shape
    if pad:
        x = np.pad(x, ((0, 0), (0, 0), (pad, pad), (pad, pad)))
    ho = (h + 2 * pad - k) // stride + 1
    wo = (w + 2 * pad - k) // stride + 1
    s0, s1, s2, s3 = x.strides
    cols = np.lib.stride_tricks.as_strided(
        x, shape=(b, c, k, k, ho, wo), strides=(s0, s1, s2, s3, s2 * stride, s3 * stride)
    )
    return cols, ho, wo


def conv2d(x, weight, bias=None, stride: int = 1, padding: int = 0) -> Tensor:
    """Cross-correlation of ``x`` (B×C×H×W or C×H×W) with ``weight`` (O×C×k×k)."""
    x, weight = _as_tensor(x), _as_tensor(weight)
    squeeze = x.ndim == 3
    xd = x.data[None] if squeeze else x.data
    if xd.ndim != 4 or weight.ndim != 4:
        raise ShapeError("conv2d expects (B,C,H,W) input and (O,C,k,k) weight")
    o, c, k, k2 = weight.shape
    if k != k2 or xd.shape[1] != c:
        raise ShapeError(f"conv2d channel/kernel mismatch: input {x.shape}, weight {weight.shape}")
    b, _, h, w = xd.shape
    cols, ho, wo = _im2col(xd, k, stride, padding)
    wd = weight.data
    out = np.einsum("bckluv,ockl->bouv", cols, wd, optimize=True)
    parents: tuple[Tensor, ...] = (x, weight)
    if bias is not None:
        bias = _as_tensor(bias)
        out = out + bias.data[None, :, None, None]
        parents = (x, weight, bias)

    def back(g):
        g4 = g[None] if squeeze else g
        gw = np.einsum("bouv,bckluv->ockl", g4, cols, optimize=True) if weight.requires_grad else None
        gx = None
        if x.requires_grad:
            gpad = np.zeros((b, c, h + 2 * padding, w + 2 * padding))
            # scatter each kernel tap back onto the padded input
            for i in range(k):
                for j in range(k):
                    contrib = np.einsum("bouv,oc->bcuv", g4, wd[:, :, i, j], optimize=True)
                    gpad[:, :, i : i + stride * ho : stride, j : j + stride * wo : stride] += contrib
            gx = gpad[:, :, padding : padding + h, padding : padding + w]
            if squeeze:
                gx = gx[0]
        grads = [gx, gw]
        if bias is not None:
            grads.append(g4.sum(axis=(0, 2, 3)))
        return grads

    if squeeze:
        out = out[0]
    return _result(out, parents, back, "conv2d")


def upsample2x(a) -> Tensor:
    """Nearest-neighbour ×2 upsampling of the last two axes."""
    a = _as_tensor(a)
    out = a.data.repeat(2, axis=-1).repeat(2, axis=-2)
    lead = a.shape[:-2]
    h, w = a.shape[-2:]

    def back(g):
        return (g.reshape(lead + (h, 2, w, 2)).sum(axis=(-1, -3)),)

    return _result(out, (a,), back, "upsample2x")


# --- backward --------------------------------------------------------------


def _reachable(root: Tensor) -> list[Tensor]:
    seen: set[int] = set()
    order: list[Tensor] = []
    stack = [root]
    while stack:
        t = stack.pop()
        if id(t) in seen:
            continue
        seen.add(id(t))
        order.append(t)
        stack.extend(p for p in t._parents if p.requires_grad)
    order.sort(key=lambda t: t.node, reverse=True)
    return order


def backward(root: Tensor) -> None:
    """Accumulate d(root)/d(leaf) into ``grad`` of every requires_grad leaf."""
    if root.size != 1:
        raise ShapeError(f"backward needs a scalar root, got shape {root.shape}")
    if not root.requires_grad:
        return
    grads: dict[int, np.ndarray] = {id(root): np.ones(root.shape)}
    for t in _reachable(root):
        g = grads.pop(id(t), None)
        if g is None:
            continue
        if t._backward is None:
            t.grad = g.copy() if t.grad is None else t.grad + g
            continue
        for p, pg in zip(t._parents, t._backward(g)):
            if pg is None or not p.requires_grad:
                continue
            if p.node >= t.node:
                raise RuntimeError("tape order violated")
            key = id(p)
            if key in grads:
                grads[key] = grads[key] + pg
            else:
                grads[key] = np.array(pg, dtype=np.float64)


def zero_grad(params: Iterable[Tensor]) -> None:
    for p in params:
        p.grad = None


def finite_difference_check(
    f: Callable[[], Tensor | float], params: Sequence[Tensor], eps: float = 1e-5
) -> float:
    """Max over parameter entries of |analytic - central difference| / max(1, |analytic|).

    ``f`` is re-evaluated from the current parameter values; parameters are
    perturbed in place and restored.
    """
    if eps <= 0:
        raise ValueError("eps must be positive")

    def value() -> float:
        with no_grad():
            v = f()
        return float(v.data.reshape(-1)[0]) if isinstance(v, Tensor) else float(v)

    for p in params:
        p.data = np.ascontiguousarray(p.data)
    base = value()
    if value() != base:
        raise RuntimeError("function is not deterministic")
    zero_grad(params)
    out = f()
    backward(out)
    worst = 0.0
    for p in params:
        p.data = np.ascontiguousarray(p.data)
        analytic = np.zeros(p.shape) if p.grad is None else p.grad
        flat = p.data.reshape(-1)
        gflat = analytic.reshape(-1)
        for i in range(flat.size):
            orig = flat[i]
            flat[i] = orig + eps
            fp = value()
            flat[i] = orig - eps
            fm = value()
            flat[i] = orig
            numeric = (fp - fm) / (2 * eps)
            err = abs(gflat[i] - numeric) / max(1.0, abs(gflat[i]))
            worst = max(worst, err)
    return worst
