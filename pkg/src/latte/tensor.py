"""Dense n-d tensors with reverse-mode automatic differentiation.

Every op returns a new :class:`Tensor`; nothing is mutated in place. When any
input requires a gradient, the output keeps references to its parents and a
closure mapping the output gradient to parent gradients. :func:`backward`
walks that graph once in reverse topological order.

Numeric mode is 32-bit by default (training) and 64-bit when
``LATTE_TEST_MODE=f64`` is set or inside ``with precision("f64")``.
"""

from __future__ import annotations

import contextlib
import contextvars
import os
from typing import Callable, Iterable, Sequence

import numpy as np
from scipy.special import erf

_MODES = {"f32": np.float32, "f64": np.float64}


def _mode_from_env() -> str:
    mode = os.environ.get("LATTE_TEST_MODE", "f32").lower()
    if mode not in _MODES:
        raise ValueError(f"LATTE_TEST_MODE must be one of {sorted(_MODES)}, got {mode!r}")
    return mode


_mode: contextvars.ContextVar[str] = contextvars.ContextVar("latte_mode", default=_mode_from_env())

# Fault-injection hook used by the verification suite to prove it can fail.
_mutations: contextvars.ContextVar[frozenset] = contextvars.ContextVar(
    "latte_mutations",
    default=frozenset(m for m in os.environ.get("LATTE_MUTATION", "").split(",") if m),
)


class NonFiniteError(FloatingPointError):
    """Raised when an op produces NaN or Inf."""

    def __init__(self, op: str, detail: str = ""):
        self.op = op
        msg = f"non-finite value produced by op '{op}'"
        super().__init__(f"{msg}: {detail}" if detail else msg)


def get_mode() -> str:
    return _mode.get()


def get_dtype() -> type:
    return _MODES[_mode.get()]


def set_mode(mode: str) -> None:
    if mode not in _MODES:
        raise ValueError(f"unknown numeric mode {mode!r}")
    _mode.set(mode)


@contextlib.contextmanager
def precision(mode: str):
    """Temporarily switch the numeric mode (``"f32"`` or ``"f64"``)."""
    if mode not in _MODES:
        raise ValueError(f"unknown numeric mode {mode!r}")
    token = _mode.set(mode)
    try:
        yield
    finally:
        _mode.reset(token)


@contextlib.contextmanager
def mutation(*names: str):
    token = _mutations.set(_mutations.get() | frozenset(names))
    try:
        yield
    finally:
        _mutations.reset(token)


def _mutated(name: str) -> bool:
    return name in _mutations.get()


class Tensor:
    __slots__ = ("data", "grad", "requires_grad", "_parents", "_backward", "op", "name")

    def __init__(self, data, requires_grad: bool = False, name: str | None = None):
        arr = np.asarray(data, dtype=get_dtype())
        if arr.ndim and 0 in arr.shape:
            raise ValueError("tensor extents must be positive")
        if not np.isfinite(arr).all():
            raise NonFiniteError("tensor", "non-finite input data")
        self.data = arr
        self.grad: np.ndarray | None = None
        self.requires_grad = requires_grad
        self._parents: tuple[Tensor, ...] = ()
        self._backward: Callable | None = None
        self.op = "leaf"
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

    def numpy(self) -> np.ndarray:
        return self.data

    def item(self) -> float:
        return float(self.data)

    def detach(self) -> Tensor:
        return _wrap(self.data)

    def __repr__(self) -> str:
        return f"Tensor(shape={self.shape}, op={self.op}, requires_grad={self.requires_grad})"

    # operator sugar
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

    def __pow__(self, exponent: float):
        return power(self, exponent)

    def __matmul__(self, other):
        return matmul(self, other)

    def __getitem__(self, index):
        return getitem(self, index)

    def reshape(self, *shape):
        if len(shape) == 1 and isinstance(shape[0], (tuple, list)):
            shape = tuple(shape[0])
        return reshape(self, shape)

    def transpose(self, *axes):
        if len(axes) == 1 and isinstance(axes[0], (tuple, list)):
            axes = tuple(axes[0])
        return transpose(self, axes)

    def sum(self, axis=None, keepdims: bool = False):
        return sum_(self, axis, keepdims)

    def mean(self, axis=None, keepdims: bool = False):
        return mean(self, axis, keepdims)


def _wrap(data: np.ndarray) -> Tensor:
    t = Tensor.__new__(Tensor)
    t.data = data
    t.grad = None
    t.requires_grad = False
    t._parents = ()
    t._backward = None
    t.op = "const"
    t.name = None
    return t


def as_tensor(x) -> Tensor:
    if isinstance(x, Tensor):
        return x
    return Tensor(x)


def _result(data: np.ndarray, op: str, parents: Sequence[Tensor], backward: Callable) -> Tensor:
    if not np.isfinite(data).all():
        raise NonFiniteError(op)
    out = _wrap(data)
    out.op = op
    if any(p.requires_grad for p in parents):
        out.requires_grad = True
        out._parents = tuple(parents)
        out._backward = backward
    return out


def _unbroadcast(grad: np.ndarray, shape: tuple[int, ...]) -> np.ndarray:
    if grad.shape == shape:
        return grad
    extra = grad.ndim - len(shape)
    if extra:
        grad = grad.sum(axis=tuple(range(extra)))
    axes = tuple(i for i, n in enumerate(shape) if n == 1 and grad.shape[i] != 1)
    if axes:
        grad = grad.sum(axis=axes, keepdims=True)
    return grad


# ---------------------------------------------------------------- elementwise


def add(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)

    def bw(g):
        return _unbroadcast(g, a.shape), _unbroadcast(g, b.shape)

    return _result(a.data + b.data, "add", (a, b), bw)


def sub(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)

    def bw(g):
        return _unbroadcast(g, a.shape), _unbroadcast(-g, b.shape)

    return _result(a.data - b.data, "sub", (a, b), bw)


def mul(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)

    def bw(g):
        return _unbroadcast(g * b.data, a.shape), _unbroadcast(g * a.data, b.shape)

    return _result(a.data * b.data, "mul", (a, b), bw)


def div(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    with np.errstate(divide="ignore", invalid="ignore"):
        out = a.data / b.data

    def bw(g):
        ga = g / b.data
        return _unbroadcast(ga, a.shape), _unbroadcast(-ga * out, b.shape)

    return _result(out, "div", (a, b), bw)


def neg(a) -> Tensor:
    a = as_tensor(a)
    return _result(-a.data, "neg", (a,), lambda g: (-g,))


def power(a, exponent: float) -> Tensor:
    a = as_tensor(a)
    with np.errstate(divide="ignore", invalid="ignore"):
        out = a.data**exponent

    def bw(g):
        return (g * exponent * a.data ** (exponent - 1),)

    return _result(out, "pow", (a,), bw)


def square(a) -> Tensor:
    a = as_tensor(a)
    return _result(a.data * a.data, "square", (a,), lambda g: (2.0 * g * a.data,))


def exp(a) -> Tensor:
    a = as_tensor(a)
    with np.errstate(over="ignore"):
        out = np.exp(a.data)
    return _result(out, "exp", (a,), lambda g: (g * out,))


def log(a) -> Tensor:
    a = as_tensor(a)
    with np.errstate(divide="ignore", invalid="ignore"):
        out = np.log(a.data)
    return _result(out, "log", (a,), lambda g: (g / a.data,))


def silu(a) -> Tensor:
    a = as_tensor(a)
    sig = 1.0 / (1.0 + np.exp(-a.data))
    out = a.data * sig

    def bw(g):
        return (g * (sig * (1.0 + a.data * (1.0 - sig))),)

    return _result(out, "silu", (a,), bw)


_INV_SQRT2 = 1.0 / np.sqrt(2.0)
_INV_SQRT_2PI = 1.0 / np.sqrt(2.0 * np.pi)


def gelu(a) -> Tensor:
    """Exact GELU, ``x * Phi(x)`` with the erf form of the normal CDF."""
    a = as_tensor(a)
    cdf = 0.5 * (1.0 + erf(a.data * _INV_SQRT2))
    out = a.data * cdf

    def bw(g):
        pdf = _INV_SQRT_2PI * np.exp(-0.5 * a.data * a.data)
        return (g * (cdf + a.data * pdf),)

    return _result(out.astype(a.data.dtype, copy=False), "gelu", (a,), bw)


# ---------------------------------------------------------------- reductions


def _norm_axis(axis, ndim):
    if axis is None:
        return tuple(range(ndim))
    if isinstance(axis, int):
        axis = (axis,)
    out = []
    for ax in axis:
        if not -ndim <= ax < ndim:
            raise ValueError(f"axis {ax} out of range for rank {ndim}")
        out.append(ax % ndim)
    return tuple(out)


def sum_(a, axis=None, keepdims: bool = False) -> Tensor:
    a = as_tensor(a)
    axes = _norm_axis(axis, a.ndim)
    out = a.data.sum(axis=axes, keepdims=keepdims)

    def bw(g):
        if not keepdims:
            g = np.expand_dims(g, axes)
        return (np.broadcast_to(g, a.shape).copy(),)

    return _result(np.asarray(out), "sum", (a,), bw)


def mean(a, axis=None, keepdims: bool = False) -> Tensor:
    a = as_tensor(a)
    axes = _norm_axis(axis, a.ndim)
    n = int(np.prod([a.shape[i] for i in axes])) if axes else 1
    out = a.data.mean(axis=axes, keepdims=keepdims)

    def bw(g):
        if not keepdims:
            g = np.expand_dims(g, axes)
        return (np.broadcast_to(g / n, a.shape).copy(),)

    return _result(np.asarray(out), "mean", (a,), bw)


# ---------------------------------------------------------------- shape ops


def reshape(a, shape) -> Tensor:
    a = as_tensor(a)
    out = a.data.reshape(shape)
    return _result(out, "reshape", (a,), lambda g: (g.reshape(a.shape),))


def transpose(a, axes) -> Tensor:
    a = as_tensor(a)
    axes = tuple(axes)
    inv = tuple(np.argsort(axes))
    return _result(np.transpose(a.data, axes), "transpose", (a,), lambda g: (np.transpose(g, inv),))


def getitem(a, index) -> Tensor:
    a = as_tensor(a)
    out = a.data[index]

    def bw(g):
        full = np.zeros(a.shape, dtype=g.dtype)
        np.add.at(full, index, g) if _is_advanced(index) else full.__setitem__(index, g)
        return (full,)

    return _result(np.array(out), "getitem", (a,), bw)


def _is_advanced(index) -> bool:
    items = index if isinstance(index, tuple) else (index,)
    return any(isinstance(i, (list, np.ndarray)) for i in items)


def concat(tensors: Iterable, axis: int = 0) -> Tensor:
    tensors = [as_tensor(t) for t in tensors]
    ax = axis % tensors[0].ndim
    sizes = [t.shape[ax] for t in tensors]
    bounds = np.cumsum([0] + sizes)

    def bw(g):
        sl = [slice(None)] * g.ndim
        grads = []
        for i in range(len(tensors)):
            sl[ax] = slice(bounds[i], bounds[i + 1])
            grads.append(g[tuple(sl)])
        return tuple(grads)

    return _result(np.concatenate([t.data for t in tensors], axis=ax), "concat", tensors, bw)


# ---------------------------------------------------------------- linear algebra


def matmul(a, b) -> Tensor:
    """Batched matrix product; leading dims broadcast numpy-style."""
    a, b = as_tensor(a), as_tensor(b)
    if a.ndim < 2 or b.ndim < 2:
        raise ValueError("matmul operands must have rank >= 2")

    def bw(g):
        ga = g @ np.swapaxes(b.data, -1, -2)
        gb = np.swapaxes(a.data, -1, -2) @ g
        return _unbroadcast(ga, a.shape), _unbroadcast(gb, b.shape)

    return _result(a.data @ b.data, "matmul", (a, b), bw)


def linear(x, weight, bias=None) -> Tensor:
    """``x @ weight + bias`` over the last axis of ``x``; weight is (in, out)."""
    x, weight = as_tensor(x), as_tensor(weight)
    if x.shape[-1] != weight.shape[0]:
        raise ValueError(f"linear: input dim {x.shape[-1]} != weight rows {weight.shape[0]}")
    lead = x.shape[:-1]
    x2 = x.data.reshape(-1, x.shape[-1])
    out = x2 @ weight.data
    parents = [x, weight]
    if bias is not None:
        bias = as_tensor(bias)
        out = out + bias.data
        parents.append(bias)

    def bw(g):
        g2 = g.reshape(-1, weight.shape[1])
        grads = [(g2 @ weight.data.T).reshape(x.shape), x2.T @ g2]
        if bias is not None:
            grads.append(g2.sum(axis=0))
        return tuple(grads)

    return _result(out.reshape(lead + (weight.shape[1],)), "linear", parents, bw)


# ---------------------------------------------------------------- fused nn ops


def softmax(x, axis: int = -1, mask: np.ndarray | None = None) -> Tensor:
    """Softmax along ``axis``.

    ``mask`` (boolean, broadcastable to ``x``) marks the entries allowed to
    carry weight; masked entries get exactly zero probability.
    """
    x = as_tensor(x)
    if not -x.ndim <= axis < x.ndim:
        raise ValueError(f"softmax axis {axis} out of range for rank {x.ndim}")
    if mask is None:
        shifted = x.data - x.data.max(axis=axis, keepdims=True)
        e = np.exp(shifted)
    else:
        mask = np.broadcast_to(mask, x.shape)
        if not mask.any(axis=axis).all():
            raise ValueError("softmax mask leaves an empty slice")
        big = np.where(mask, x.data, -np.inf).max(axis=axis, keepdims=True)
        e = np.where(mask, np.exp(np.where(mask, x.data - big, 0.0)), 0.0)
    out = e / e.sum(axis=axis, keepdims=True)

    def bw(g):
        gx = out * (g - (g * out).sum(axis=axis, keepdims=True))
        if _mutated("softmax"):
            gx = -gx
        return (gx,)

    return _result(out.astype(x.data.dtype, copy=False), "softmax", (x,), bw)


def layer_norm(x, eps: float = 1e-6) -> Tensor:
    """Normalise the last axis to zero mean and unit (biased) variance, no affine."""
    x = as_tensor(x)
    d = x.shape[-1]
    if d < 2:
        raise ValueError("layer_norm needs a last-axis extent of at least 2")
    if eps <= 0:
        raise ValueError("eps must be positive")
    mu = x.data.mean(axis=-1, keepdims=True)
    xc = x.data - mu
    var = (xc * xc).mean(axis=-1, keepdims=True)
    rstd = 1.0 / np.sqrt(var + eps)
    xhat = xc * rstd

    def bw(g):
        gm = g.mean(axis=-1, keepdims=True)
        gxm = (g * xhat).mean(axis=-1, keepdims=True)
        return (rstd * (g - gm - xhat * gxm),)

    return _result(xhat, "layer_norm", (x,), bw)


# ---------------------------------------------------------------- backward


def topological_order(root: Tensor) -> list[Tensor]:
    """Nodes reachable from ``root`` that need gradients, parents before children."""
    order: list[Tensor] = []
    seen: set[int] = set()
    stack: list[tuple[Tensor, bool]] = [(root, False)]
    while stack:
        node, expanded = stack.pop()
        if expanded:
            order.append(node)
            continue
        if id(node) in seen or not node.requires_grad:
            continue
        seen.add(id(node))
        stack.append((node, True))
        for p in node._parents:
            if id(p) not in seen and p.requires_grad:
                stack.append((p, False))
    return order


def backward(loss: Tensor, params: Iterable[Tensor] | dict | None = None) -> dict:
    """Reverse-mode sweep from scalar ``loss``.

    Leaf tensors get their ``.grad`` set. With ``params`` given, returns a
    mapping (same keys as a dict input, else the tensors' ids) to gradient
    arrays; parameters not connected to the loss get zeros.
    """
    if loss.size != 1:
        raise ValueError(f"backward needs a scalar loss, got shape {loss.shape}")
    grads: dict[int, np.ndarray] = {}
    if loss.requires_grad:
        grads[id(loss)] = np.ones_like(loss.data)
        for node in reversed(topological_order(loss)):
            g = grads.pop(id(node), None) if node._parents else grads.get(id(node))
            if g is None:
                continue
            if node._backward is None:
                continue
            pgrads = node._backward(g)
            for p, pg in zip(node._parents, pgrads):
                if pg is None or not p.requires_grad:
                    continue
                if pg.dtype != p.data.dtype:
                    pg = pg.astype(p.data.dtype)
                if not np.isfinite(pg).all():
                    raise NonFiniteError(f"{node.op}.backward")
                key = id(p)
                if key in grads:
                    grads[key] = grads[key] + pg
                else:
                    grads[key] = pg
    if params is None:
        return {}
    items = params.items() if isinstance(params, dict) else ((id(p), p) for p in params)
    result = {}
    for key, p in items:
        g = grads.get(id(p))
        g = np.zeros_like(p.data) if g is None else np.array(g, copy=True)
        p.grad = g
        result[key] = g
    return result
