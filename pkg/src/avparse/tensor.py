"""Dense tensors with a minimal reverse-mode gradient tape.

The model is a fixed feed-forward graph, so the tape is rebuilt on every
forward pass: each op records its parents and a backward closure, and
``Tensor.backward()`` walks the graph once in reverse topological order.
float64 is the default precision; float32 is available by building inputs
and parameters in float32 (ops preserve the input dtype).

Every op verifies its output is finite and raises NumericError otherwise.
"""

from __future__ import annotations

import math

import numpy as np

from .errors import DimensionError, NumericError, UsageError

# Debug hook: when enabled, the sigmoid backward rule is deliberately wrong
# so that gradient verification must fail (negative control for gradcheck).
_BREAK_GRADIENT = False


def set_break_gradient(flag: bool) -> None:
    global _BREAK_GRADIENT
    _BREAK_GRADIENT = bool(flag)


class Tensor:
    """A dense array plus an optional position on the gradient tape."""

    __slots__ = ("data", "grad", "requires_grad", "_parents", "_backward", "name")

    def __init__(self, data, requires_grad=False, dtype=None, name=None):
        arr = np.asarray(data, dtype=dtype)
        if arr.dtype not in (np.float64, np.float32):
            arr = arr.astype(np.float64)
        if not np.all(np.isfinite(arr)):
            raise NumericError(f"non-finite values in tensor {name or '<input>'}")
        self.data = arr
        self.grad = None
        self.requires_grad = requires_grad
        self._parents = ()
        self._backward = None
        self.name = name

    @property
    def shape(self):
        return self.data.shape

    @property
    def dtype(self):
        return self.data.dtype

    def item(self) -> float:
        return float(self.data)

    def zero_grad(self) -> None:
        self.grad = None

    def _accumulate(self, g: np.ndarray) -> None:
        if self.grad is None:
            self.grad = np.zeros_like(self.data)
        self.grad += g

    def backward(self) -> None:
        """Reverse-mode sweep from a scalar output."""
        if self.data.size != 1:
            raise UsageError(f"backward() requires a scalar, got shape {self.shape}")
        topo: list[Tensor] = []
        seen: set[int] = set()
        stack: list[tuple[Tensor, bool]] = [(self, False)]
        while stack:
            node, expanded = stack.pop()
            if expanded:
                topo.append(node)
                continue
            if id(node) in seen:
                continue
            seen.add(id(node))
            stack.append((node, True))
            for p in node._parents:
                if id(p) not in seen:
                    stack.append((p, False))
        self.grad = np.ones_like(self.data)
        for node in reversed(topo):
            if node._backward is not None:
                node._backward(node.grad)

    # operator sugar
    def __add__(self, other):
        return add(self, other)

    def __radd__(self, other):
        return add(self, other)

    def __sub__(self, other):
        return sub(self, other)

    def __mul__(self, other):
        return mul(self, other)

    def __rmul__(self, other):
        return mul(self, other)

    def __truediv__(self, other):
        return div(self, other)

    def __matmul__(self, other):
        return matmul(self, other)

    def __neg__(self):
        return mul(self, -1.0)

    def __repr__(self):
        tag = f" name={self.name}" if self.name else ""
        return f"Tensor(shape={self.shape}, dtype={self.data.dtype}{tag})"


def _as_tensor(x, like: Tensor) -> Tensor:
    if isinstance(x, Tensor):
        return x
    return Tensor(np.asarray(x, dtype=like.data.dtype))


def _finite(data: np.ndarray) -> bool:
    # the sum of a finite float array at model scale is finite; any NaN/Inf
    # input poisons it, so one reduction replaces a full isfinite scan
    return math.isfinite(float(data.sum()))


def _make(data: np.ndarray, parents: tuple[Tensor, ...], backward, op: str) -> Tensor:
    if not _finite(data):
        raise NumericError(f"non-finite result from op '{op}'")
    out = Tensor.__new__(Tensor)
    out.data = data
    out.grad = None
    requires = False
    for p in parents:
        if p.requires_grad:
            requires = True
            break
    out.requires_grad = requires
    out._parents = parents if requires else ()
    out._backward = backward if requires else None
    out.name = None
    return out


def _unbroadcast(g: np.ndarray, shape: tuple[int, ...]) -> np.ndarray:
    """Sum a gradient back down to the shape it was broadcast from."""
    if g.shape == shape:
        return g
    while g.ndim > len(shape):
        g = g.sum(axis=0)
    for ax, n in enumerate(shape):
        if n == 1 and g.shape[ax] != 1:
            g = g.sum(axis=ax, keepdims=True)
    return g


# ---------------------------------------------------------------------------
# elementwise ops
# ---------------------------------------------------------------------------


def _scalar(x) -> bool:
    return isinstance(x, (int, float))


def add(a: Tensor, b) -> Tensor:
    if _scalar(b):
        out_data = a.data + b

        def backward(g):
            a._accumulate(g)

        return _make(out_data, (a,), backward, "add")
    b = _as_tensor(b, a)
    try:
        out_data = a.data + b.data
    except ValueError:
        raise DimensionError(f"add: shapes {a.shape} and {b.shape} do not broadcast") from None

    def backward(g):
        if a.requires_grad:
            a._accumulate(_unbroadcast(g, a.shape))
        if b.requires_grad:
            b._accumulate(_unbroadcast(g, b.shape))

    return _make(out_data, (a, b), backward, "add")


def sub(a: Tensor, b) -> Tensor:
    if _scalar(b):
        out_data = a.data - b

        def backward(g):
            a._accumulate(g)

        return _make(out_data, (a,), backward, "sub")
    b = _as_tensor(b, a)
    try:
        out_data = a.data - b.data
    except ValueError:
        raise DimensionError(f"sub: shapes {a.shape} and {b.shape} do not broadcast") from None

    def backward(g):
        if a.requires_grad:
            a._accumulate(_unbroadcast(g, a.shape))
        if b.requires_grad:
            b._accumulate(_unbroadcast(-g, b.shape))

    return _make(out_data, (a, b), backward, "sub")


def mul(a: Tensor, b) -> Tensor:
    if _scalar(b):
        out_data = a.data * b

        def backward(g):
            a._accumulate(g * b)

        return _make(out_data, (a,), backward, "mul")
    b = _as_tensor(b, a)
    try:
        out_data = a.data * b.data
    except ValueError:
        raise DimensionError(f"mul: shapes {a.shape} and {b.shape} do not broadcast") from None

    def backward(g):
        if a.requires_grad:
            a._accumulate(_unbroadcast(g * b.data, a.shape))
        if b.requires_grad:
            b._accumulate(_unbroadcast(g * a.data, b.shape))

    return _make(out_data, (a, b), backward, "mul")


def div(a: Tensor, b) -> Tensor:
    if _scalar(b):
        return mul(a, 1.0 / b)
    b = _as_tensor(b, a)
    try:
        with np.errstate(divide="ignore", invalid="ignore"):
            out_data = a.data / b.data
    except ValueError:
        raise DimensionError(f"div: shapes {a.shape} and {b.shape} do not broadcast") from None

    def backward(g):
        if a.requires_grad:
            a._accumulate(_unbroadcast(g / b.data, a.shape))
        if b.requires_grad:
            b._accumulate(_unbroadcast(-g * a.data / (b.data * b.data), b.shape))

    return _make(out_data, (a, b), backward, "div")


def elementwise_mean(a: Tensor, b: Tensor) -> Tensor:
    """Elementwise average of two same-shaped tensors."""
    if a.shape != b.shape:
        raise DimensionError(f"elementwise_mean: shapes {a.shape} and {b.shape} differ")
    return mul(add(a, b), 0.5)


def relu(x: Tensor) -> Tensor:
    out_data = np.maximum(x.data, 0.0)

    def backward(g):
        x._accumulate(g * (x.data > 0))

    return _make(out_data, (x,), backward, "relu")


def sigmoid(x: Tensor) -> Tensor:
    # split by sign for stability; output is strictly inside (0, 1), pinned
    # to the nearest representable values under extreme saturation
    d = x.data
    e = np.exp(-np.abs(d))
    out_data = np.where(d >= 0, 1.0 / (1.0 + e), e / (1.0 + e)).astype(d.dtype, copy=False)
    tiny = np.finfo(d.dtype).tiny
    out_data = np.clip(out_data, tiny, 1.0 - np.finfo(d.dtype).epsneg)

    def backward(g):
        local = out_data * (1.0 - out_data)
        if _BREAK_GRADIENT:
            local = local * 1.05
        x._accumulate(g * local)

    return _make(out_data, (x,), backward, "sigmoid")


def log(x: Tensor) -> Tensor:
    if np.any(x.data <= 0):
        raise NumericError("log: non-positive input")
    out_data = np.log(x.data)

    def backward(g):
        x._accumulate(g / x.data)

    return _make(out_data, (x,), backward, "log")


def exp(x: Tensor) -> Tensor:
    with np.errstate(over="ignore"):
        out_data = np.exp(x.data)

    def backward(g):
        x._accumulate(g * out_data)

    return _make(out_data, (x,), backward, "exp")


def clamp(x: Tensor, lo: float, hi: float) -> Tensor:
    """Clip to [lo, hi]; gradient is zero where the clip is active."""
    out_data = np.clip(x.data, lo, hi)
    inside = (x.data > lo) & (x.data < hi)

    def backward(g):
        x._accumulate(g * inside)

    return _make(out_data, (x,), backward, "clamp")


# ---------------------------------------------------------------------------
# structural ops
# ---------------------------------------------------------------------------


def matmul(a: Tensor, b: Tensor) -> Tensor:
    if a.data.ndim != 2 or b.data.ndim != 2 or a.shape[1] != b.shape[0]:
        raise DimensionError(f"matmul: incompatible shapes {a.shape} and {b.shape}")
    out_data = a.data @ b.data

    def backward(g):
        if a.requires_grad:
            a._accumulate(g @ b.data.T)
        if b.requires_grad:
            b._accumulate(a.data.T @ g)

    return _make(out_data, (a, b), backward, "matmul")


def transpose(x: Tensor) -> Tensor:
    out_data = x.data.T.copy()

    def backward(g):
        x._accumulate(g.T)

    return _make(out_data, (x,), backward, "transpose")


def concat(tensors: list[Tensor], axis: int = 0) -> Tensor:
    ref = tensors[0].shape
    for t in tensors[1:]:
        if len(t.shape) != len(ref) or any(
            t.shape[i] != ref[i] for i in range(len(ref)) if i != axis % len(ref)
        ):
            raise DimensionError(f"concat: shapes {ref} and {t.shape} differ off axis {axis}")
    out_data = np.concatenate([t.data for t in tensors], axis=axis)
    sizes = [t.shape[axis] for t in tensors]

    def backward(g):
        start = 0
        for t, n in zip(tensors, sizes):
            if t.requires_grad:
                idx = [slice(None)] * g.ndim
                idx[axis] = slice(start, start + n)
                t._accumulate(g[tuple(idx)])
            start += n

    return _make(out_data, tuple(tensors), backward, "concat")


def narrow(x: Tensor, axis: int, start: int, size: int) -> Tensor:
    """Contiguous slice along one axis."""
    if start < 0 or start + size > x.shape[axis]:
        raise DimensionError(f"narrow: [{start}:{start + size}] out of range for shape {x.shape} axis {axis}")
    idx = [slice(None)] * x.data.ndim
    idx[axis] = slice(start, start + size)
    idx = tuple(idx)
    out_data = x.data[idx].copy()

    def backward(g):
        full = np.zeros_like(x.data)
        full[idx] = g
        x._accumulate(full)

    return _make(out_data, (x,), backward, "narrow")


def tsum(x: Tensor, axis: int | None = None, keepdims: bool = False) -> Tensor:
    out_data = x.data.sum(axis=axis, keepdims=keepdims)

    def backward(g):
        if axis is not None and not keepdims:
            g = np.expand_dims(g, axis)
        x._accumulate(np.broadcast_to(g, x.shape).copy())

    return _make(np.asarray(out_data), (x,), backward, "sum")


def tmean(x: Tensor, axis: int | None = None, keepdims: bool = False) -> Tensor:
    n = x.data.size if axis is None else x.shape[axis]
    return mul(tsum(x, axis=axis, keepdims=keepdims), 1.0 / n)


def softmax(x: Tensor, axis: int) -> Tensor:
    """Max-shifted softmax along ``axis``; each slice sums to 1."""
    if not _finite(x.data):
        raise NumericError("softmax: non-finite input")
    shifted = x.data - x.data.max(axis=axis, keepdims=True)
    e = np.exp(shifted)
    out_data = e / e.sum(axis=axis, keepdims=True)

    def backward(g):
        inner = (g * out_data).sum(axis=axis, keepdims=True)
        x._accumulate(out_data * (g - inner))

    return _make(out_data, (x,), backward, "softmax")


# ---------------------------------------------------------------------------
# gradient verification
# ---------------------------------------------------------------------------


class GradCheckReport:
    """Per-parameter worst relative error of tape gradients vs central differences."""

    def __init__(self, per_param: dict[str, float]):
        self.per_param = per_param
        self.worst_param = max(per_param, key=per_param.get) if per_param else ""
        self.max_rel_error = per_param[self.worst_param] if per_param else 0.0

    def passed(self, threshold: float = 1e-4) -> bool:
        return self.max_rel_error < threshold

    def summary(self, top: int = 5) -> str:
        lines = [f"max relative error {self.max_rel_error:.3e} (param '{self.worst_param}')"]
        ranked = sorted(self.per_param.items(), key=lambda kv: -kv[1])[:top]
        for name, err in ranked:
            lines.append(f"  {name:<28s} {err:.3e}")
        return "\n".join(lines)


def grad_check(loss_fn, store, eps: float = 1e-5) -> GradCheckReport:
    """Compare tape gradients against central finite differences.

    ``loss_fn`` must be a deterministic closure over the parameters in
    ``store`` returning a scalar Tensor. The finite-difference side
    re-evaluates the loss at theta +/- eps and never touches the tape,
    so the two routes are independent.
    """
    if not (1e-8 <= eps <= 1e-3):
        raise UsageError(f"grad_check: eps {eps} outside [1e-8, 1e-3]")
    store.zero_grads()
    loss = loss_fn()
    if not np.isfinite(loss.data).all():
        raise NumericError("grad_check: non-finite loss")
    loss.backward()
    tape_grads = {}
    for name, p in store.params.items():
        tape_grads[name] = np.zeros_like(p.data) if p.grad is None else p.grad.copy()

    per_param = {}
    for name, p in store.params.items():
        tape = tape_grads[name]
        worst = 0.0
        flat = p.data.reshape(-1)
        for i in range(flat.size):
            orig = flat[i]
            flat[i] = orig + eps
            f_plus = float(loss_fn().data)
            flat[i] = orig - eps
            f_minus = float(loss_fn().data)
            flat[i] = orig
            fd = (f_plus - f_minus) / (2.0 * eps)
            a = tape.reshape(-1)[i]
            denom = max(abs(a), abs(fd), 1e-6)
            worst = max(worst, abs(a - fd) / denom)
        per_param[name] = worst
    return GradCheckReport(per_param)
