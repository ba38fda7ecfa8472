"""Dense NCHW tensors with reverse-mode automatic differentiation.

Every op records a node on a dynamic graph when at least one input requires a
gradient. ``backward`` walks that graph once in reverse topological order and
frees it afterwards. There is no broadcasting: binary ops demand identical
shapes, and the only mixed operands accepted are Python scalars.
"""

from __future__ import annotations

import contextlib
import os
from typing import Callable, Iterator, Sequence

import numpy as np

DEBUG = os.environ.get("DCADEPTH_DEBUG", "0") not in ("", "0")

_state = {"dtype": np.float32, "grad": True}


class ShapeError(ValueError):
    """Raised when tensor shapes violate an op's contract."""


def default_dtype():
    return _state["dtype"]


@contextlib.contextmanager
def precision(dtype) -> Iterator[None]:
    """Temporarily change the dtype used for newly constructed tensors."""
    prev = _state["dtype"]
    _state["dtype"] = np.dtype(dtype).type
    try:
        yield
    finally:
        _state["dtype"] = prev


@contextlib.contextmanager
def no_grad() -> Iterator[None]:
    """Disable graph recording (inference, finite differences)."""
    prev = _state["grad"]
    _state["grad"] = False
    try:
        yield
    finally:
        _state["grad"] = prev


def grad_enabled() -> bool:
    return _state["grad"]


class Tensor:
    """A rank 1..4 float array with an optional gradient slot."""

    __slots__ = ("data", "requires_grad", "grad", "is_leaf", "op", "_parents", "_backward")

    def __init__(self, data, requires_grad: bool = False):
        arr = np.asarray(data)
        if arr.dtype not in (np.float32, np.float64):
            arr = arr.astype(default_dtype())
        if not 1 <= arr.ndim <= 4:
            raise ShapeError(f"tensor rank must be 1..4, got shape {arr.shape}")
        if 0 in arr.shape:
            raise ShapeError(f"zero-sized dimension in shape {arr.shape}")
        self.data = arr
        self.requires_grad = bool(requires_grad)
        self.grad: np.ndarray | None = None
        self.is_leaf = True
        self.op = "leaf"
        self._parents: tuple[Tensor, ...] = ()
        self._backward: Callable | None = None

    @property
    def shape(self) -> tuple[int, ...]:
        return self.data.shape

    @property
    def dtype(self):
        return self.data.dtype

    @property
    def size(self) -> int:
        return self.data.size

    def numpy(self) -> np.ndarray:
        return self.data

    def item(self) -> float:
        if self.data.size != 1:
            raise ShapeError("item() needs a single-element tensor")
        return float(self.data.reshape(-1)[0])

    def detach(self) -> "Tensor":
        return Tensor(self.data)

    def astype(self, dtype) -> "Tensor":
        """Leaf copy in another precision, keeping ``requires_grad``."""
        return Tensor(self.data.astype(dtype), requires_grad=self.requires_grad)

    def zero_grad(self) -> None:
        self.grad = None

    def backward(self) -> None:
        backward(self)

    def __repr__(self) -> str:
        return f"Tensor(shape={self.shape}, dtype={self.dtype}, op={self.op})"

    def __add__(self, other):
        if isinstance(other, Tensor):
            return add(self, other)
        return add_scalar(self, other)

    __radd__ = __add__

    def __sub__(self, other):
        if isinstance(other, Tensor):
            return sub(self, other)
        return add_scalar(self, -other)

    def __rsub__(self, other):
        return add_scalar(neg(self), other)

    def __mul__(self, other):
        if isinstance(other, Tensor):
            return elementwise_mul(self, other)
        return mul_scalar(self, other)

    __rmul__ = __mul__

    def __truediv__(self, other):
        if isinstance(other, Tensor):
            raise TypeError("tensor / tensor is not supported")
        return mul_scalar(self, 1.0 / other)

    def __neg__(self):
        return neg(self)


def _result(data: np.ndarray, parents: Sequence[Tensor], backward_fn: Callable, op: str) -> Tensor:
    if DEBUG and not np.all(np.isfinite(data)):
        raise FloatingPointError(f"non-finite values produced by {op}")
    out = Tensor(data)
    out.op = op
    if _state["grad"] and any(p.requires_grad for p in parents):
        out.requires_grad = True
        out.is_leaf = False
        out._parents = tuple(parents)
        out._backward = backward_fn
    return out


def _same_shape(a: Tensor, b: Tensor, op: str) -> None:
    if a.shape != b.shape:
        raise ShapeError(f"{op}: shape mismatch {a.shape} vs {b.shape}")


def tensor_new(shape: Sequence[int], fill=0.0, dtype=None, requires_grad: bool = False) -> Tensor:
    """Build a tensor of ``shape`` from a scalar fill or a flat value list."""
    shape = tuple(int(s) for s in shape)
    if not shape or any(s < 1 for s in shape):
        raise ShapeError(f"every dimension must be >= 1, got {shape}")
    dtype = dtype or default_dtype()
    if np.isscalar(fill):
        data = np.full(shape, fill, dtype=dtype)
    else:
        flat = np.asarray(fill, dtype=dtype).reshape(-1)
        if flat.size != int(np.prod(shape)):
            raise ShapeError(f"{flat.size} values cannot fill shape {shape}")
        data = flat.reshape(shape).copy()
    return Tensor(data, requires_grad=requires_grad)


def backward(loss: Tensor) -> None:
    """Populate ``.grad`` on every requires-grad leaf reachable from ``loss``."""
    if loss.data.size != 1:
        raise ShapeError(f"backward needs a scalar loss, got shape {loss.shape}")
    if not loss.requires_grad:
        return

    order: list[Tensor] = []
    seen: set[int] = set()
    stack: list[tuple[Tensor, bool]] = [(loss, False)]
    while stack:
        node, expanded = stack.pop()
        if expanded:
            order.append(node)
            continue
        if id(node) in seen:
            continue
        seen.add(id(node))
        stack.append((node, True))
        for p in node._parents:
            if p.requires_grad and id(p) not in seen:
                stack.append((p, False))

    grads: dict[int, np.ndarray] = {id(loss): np.ones_like(loss.data)}
    for node in reversed(order):
        g = grads.pop(id(node), None)
        if g is None:
            continue
        if node.is_leaf:
            node.grad = g.copy() if node.grad is None else node.grad + g
            continue
        parent_grads = node._backward(g)
        for p, pg in zip(node._parents, parent_grads):
            if pg is None or not p.requires_grad:
                continue
            if id(p) in grads:
                grads[id(p)] = grads[id(p)] + pg
            else:
                grads[id(p)] = pg
        node._parents = ()
        node._backward = None


# -- elementwise ---------------------------------------------------------------


def add(a: Tensor, b: Tensor) -> Tensor:
    _same_shape(a, b, "add")
    return _result(a.data + b.data, (a, b), lambda g: (g, g), "add")


def sub(a: Tensor, b: Tensor) -> Tensor:
    _same_shape(a, b, "sub")
    return _result(a.data - b.data, (a, b), lambda g: (g, -g), "sub")


def elementwise_mul(a: Tensor, b: Tensor) -> Tensor:
    _same_shape(a, b, "elementwise_mul")
    ad, bd = a.data, b.data
    return _result(ad * bd, (a, b), lambda g: (g * bd, g * ad), "mul")


def neg(a: Tensor) -> Tensor:
    return _result(-a.data, (a,), lambda g: (-g,), "neg")


def mul_scalar(a: Tensor, c: float) -> Tensor:
    c = a.data.dtype.type(c)
    return _result(a.data * c, (a,), lambda g: (g * c,), "mul_scalar")


def add_scalar(a: Tensor, c: float) -> Tensor:
    return _result(a.data + a.data.dtype.type(c), (a,), lambda g: (g,), "add_scalar")


def add_const(a: Tensor, c: np.ndarray) -> Tensor:
    """Add a same-shape constant array (no gradient flows to it)."""
    if np.shape(c) != a.shape:
        raise ShapeError(f"add_const: shape mismatch {a.shape} vs {np.shape(c)}")
    return _result(a.data + np.asarray(c, dtype=a.dtype), (a,), lambda g: (g,), "add_const")


def square(a: Tensor) -> Tensor:
    ad = a.data
    return _result(ad * ad, (a,), lambda g: (2 * g * ad,), "square")


def log(a: Tensor) -> Tensor:
    ad = a.data
    return _result(np.log(ad), (a,), lambda g: (g / ad,), "log")


def exp(a: Tensor) -> Tensor:
    out = np.exp(a.data)
    return _result(out, (a,), lambda g: (g * out,), "exp")


def abs_(a: Tensor) -> Tensor:
    ad = a.data
    return _result(np.abs(ad), (a,), lambda g: (g * np.sign(ad),), "abs")


def safe_sqrt(a: Tensor) -> Tensor:
    """sqrt(max(a, 0)); the gradient is defined as 0 where a <= 0."""
    ad = a.data
    out = np.sqrt(np.maximum(ad, 0))

    def bw(g):
        pos = ad > 0
        d = np.zeros_like(ad)
        d[pos] = 0.5 / out[pos]
        return (g * d,)

    return _result(out, (a,), bw, "safe_sqrt")


def sigmoid(a: Tensor) -> Tensor:
    out = 1.0 / (1.0 + np.exp(-a.data))
    return _result(out, (a,), lambda g: (g * out * (1 - out),), "sigmoid")


# -- reductions and layout -----------------------------------------------------


def sum_all(a: Tensor) -> Tensor:
    shape = a.shape
    out = np.asarray(a.data.sum(), dtype=a.dtype).reshape(1)
    return _result(out, (a,), lambda g: (np.full(shape, g[0], dtype=g.dtype),), "sum")


def mean_all(a: Tensor) -> Tensor:
    return mul_scalar(sum_all(a), 1.0 / a.size)


def concat_channels(parts: Sequence[Tensor]) -> Tensor:
    """Concatenate rank-4 tensors along the channel axis, order preserved."""
    if not parts:
        raise ShapeError("concat_channels needs at least one part")
    n, _, h, w = parts[0].shape
    for p in parts:
        if p.data.ndim != 4 or (p.shape[0], p.shape[2], p.shape[3]) != (n, h, w):
            raise ShapeError(f"concat_channels: {p.shape} incompatible with N,H,W={n},{h},{w}")
    sizes = [p.shape[1] for p in parts]
    bounds = np.cumsum([0] + sizes)

    def bw(g):
        return tuple(g[:, bounds[i]:bounds[i + 1]] for i in range(len(parts)))

    return _result(np.concatenate([p.data for p in parts], axis=1), parts, bw, "concat")


def slice_channels(a: Tensor, start: int, stop: int) -> Tensor:
    return narrow(a, 1, start, stop - start)


def narrow(a: Tensor, axis: int, start: int, length: int) -> Tensor:
    """Contiguous slice of ``length`` entries along ``axis``."""
    if start < 0 or length < 1 or start + length > a.shape[axis]:
        raise ShapeError(f"narrow out of range: axis {axis}, {start}+{length} of {a.shape[axis]}")
    idx = [slice(None)] * a.data.ndim
    idx[axis] = slice(start, start + length)
    idx = tuple(idx)
    shape = a.shape

    def bw(g):
        full = np.zeros(shape, dtype=g.dtype)
        full[idx] = g
        return (full,)

    return _result(a.data[idx].copy(), (a,), bw, "narrow")


def masked_select(a: Tensor, mask: np.ndarray) -> Tensor:
    """Rank-1 tensor of the entries of ``a`` where ``mask`` is true."""
    mask = np.asarray(mask, dtype=bool)
    if mask.shape != a.shape:
        raise ShapeError(f"mask shape {mask.shape} does not match {a.shape}")
    if not mask.any():
        raise ShapeError("masked_select: mask selects nothing")
    shape = a.shape

    def bw(g):
        full = np.zeros(shape, dtype=g.dtype)
        full[mask] = g
        return (full,)

    return _result(a.data[mask], (a,), bw, "masked_select")


def reshape(a: Tensor, shape: Sequence[int]) -> Tensor:
    old = a.shape
    return _result(a.data.reshape(shape), (a,), lambda g: (g.reshape(old),), "reshape")


# -- gradient checking ---------------------------------------------------------


def finite_diff_check(
    f: Callable[[Tensor], Tensor],
    x: Tensor,
    eps: float = 1e-5,
    coords: int | None = None,
    rng: np.random.Generator | None = None,
) -> float:
    """Max relative error between the analytic gradient and central differences.

    ``x`` is promoted to float64 and ``f`` must stay in float64 for the result
    to mean anything. ``coords`` limits the check to a random subset of
    coordinates, which keeps large parameter tensors affordable.
    """
    x64 = Tensor(np.array(x.data, dtype=np.float64), requires_grad=True)
    with precision(np.float64):
        loss = f(x64)
        if loss.data.size != 1:
            raise ShapeError("finite_diff_check needs a scalar-valued function")
        backward(loss)
        analytic = x64.grad if x64.grad is not None else np.zeros_like(x64.data)

        flat = x64.data.reshape(-1)
        idx = np.arange(flat.size)
        if coords is not None and coords < flat.size:
            rng = rng or np.random.default_rng(0)
            idx = rng.choice(flat.size, size=coords, replace=False)
        worst = 0.0
        with no_grad():
            for i in idx:
                orig = flat[i]
                flat[i] = orig + eps
                fp = f(x64).item()
                flat[i] = orig - eps
                fm = f(x64).item()
                flat[i] = orig
                numeric = (fp - fm) / (2 * eps)
                a = analytic.reshape(-1)[i]
                err = abs(a - numeric) / max(1e-8, abs(a) + abs(numeric))
                worst = max(worst, err)
    return worst
