"""Reverse-mode differentiable tensors on top of NumPy arrays.

A ``Tensor`` wraps a contiguous row-major float array (float64 by default)
and optionally records the operation that produced it so that ``backward``
can propagate gradients to every input with ``requires_grad`` set. Forward
values live in ``.data``; after ``backward`` each participating leaf holds
its gradient in ``.grad`` with the same shape.

All operations are pure with respect to their inputs; a single backward
pass walks one graph single-threaded. Tensors can be moved freely between
threads as long as disjoint graphs are used.
"""

from __future__ import annotations

import math
import struct
from contextlib import contextmanager

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view


class DimensionError(ValueError):
    """Operand shapes or metadata are inconsistent."""


class NumericError(ArithmeticError):
    """A forward value left the finite range (NaN/Inf)."""


class UsageError(RuntimeError):
    """An API was called outside its contract (not a shape problem)."""


_DEFAULT_DTYPE = np.float64
_GRAD_ENABLED = True


def set_default_dtype(dtype) -> None:
    """Set the scalar type for newly created tensors (float64 or float32).

    float32 exists as a speed mode; verification tolerances assume float64.
    """
    global _DEFAULT_DTYPE
    dtype = np.dtype(dtype)
    if dtype not in (np.dtype(np.float64), np.dtype(np.float32)):
        raise UsageError(f"unsupported default dtype {dtype}")
    _DEFAULT_DTYPE = dtype.type


def default_dtype():
    return _DEFAULT_DTYPE


def is_grad_enabled() -> bool:
    return _GRAD_ENABLED


@contextmanager
def no_grad():
    """Disable graph recording inside the block (inference mode)."""
    global _GRAD_ENABLED
    prev = _GRAD_ENABLED
    _GRAD_ENABLED = False
    try:
        yield
    finally:
        _GRAD_ENABLED = prev


class Tensor:
    __slots__ = ("data", "grad", "requires_grad", "_parents", "_backward")

    def __init__(self, data, requires_grad: bool = False):
        if isinstance(data, Tensor):
            data = data.data
        arr = np.asarray(data, dtype=_DEFAULT_DTYPE)
        self.data = np.ascontiguousarray(arr)
        self.grad: np.ndarray | None = None
        self.requires_grad = bool(requires_grad)
        self._parents: tuple = ()
        self._backward = None

    # -- basic introspection -------------------------------------------------

    @property
    def shape(self) -> tuple[int, ...]:
        return self.data.shape

    @property
    def ndim(self) -> int:
        return self.data.ndim

    @property
    def size(self) -> int:
        return self.data.size

    def item(self) -> float:
        if self.data.size != 1:
            raise UsageError("item() requires a single-element tensor")
        return float(self.data.reshape(()))

    def numpy(self) -> np.ndarray:
        return self.data

    def __repr__(self) -> str:
        flag = ", requires_grad=True" if self.requires_grad else ""
        return f"Tensor(shape={self.shape}{flag})"

    def detach(self) -> "Tensor":
        out = Tensor.__new__(Tensor)
        out.data = self.data
        out.grad = None
        out.requires_grad = False
        out._parents = ()
        out._backward = None
        return out

    def zero_grad(self) -> None:
        self.grad = None

    # -- autograd ------------------------------------------------------------

    def backward(self, grad=None) -> None:
        """Propagate gradients from this tensor to all reachable leaves."""
        if grad is None:
            if self.data.size != 1:
                raise UsageError("backward() without a seed needs a scalar output")
            grad = np.ones_like(self.data)
        else:
            grad = np.asarray(grad, dtype=self.data.dtype)
            if grad.shape != self.data.shape:
                raise DimensionError("seed gradient shape mismatch")

        # Iterative topological order; graphs can be deeper than the
        # recursion limit for long training expressions.
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

        grads: dict[int, np.ndarray] = {id(self): grad}
        for node in reversed(topo):
            g = grads.pop(id(node), None)
            if g is None:
                continue
            if node.requires_grad and node._backward is None:
                node.grad = g if node.grad is None else node.grad + g
            if node._backward is not None:
                for parent, pg in node._backward(g):
                    if pg is None:
                        continue
                    key = id(parent)
                    if key in grads:
                        grads[key] = grads[key] + pg
                    else:
                        grads[key] = pg

    # -- operator sugar --------------------------------------------------------

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
        return mul(self, -1.0)

    def __pow__(self, p):
        return power(self, p)

    def __matmul__(self, other):
        return matmul(self, other)

    def sum(self, axis=None, keepdims=False):
        return tensor_sum(self, axis=axis, keepdims=keepdims)

    def mean(self, axis=None, keepdims=False):
        return tensor_mean(self, axis=axis, keepdims=keepdims)

    def reshape(self, *shape):
        if len(shape) == 1 and isinstance(shape[0], (tuple, list)):
            shape = tuple(shape[0])
        return reshape(self, shape)

    def transpose(self, *axes):
        if len(axes) == 1 and isinstance(axes[0], (tuple, list)):
            axes = tuple(axes[0])
        return transpose(self, axes if axes else None)


def as_tensor(x) -> Tensor:
    return x if isinstance(x, Tensor) else Tensor(x)


def _make(data: np.ndarray, parents: tuple, backward) -> Tensor:
    """Assemble an op result, recording the graph only when needed."""
    out = Tensor.__new__(Tensor)
    out.data = data
    out.grad = None
    out._parents = ()
    out._backward = None
    out.requires_grad = False
    if _GRAD_ENABLED and any(p.requires_grad or p._backward is not None for p in parents):
        out.requires_grad = True
        out._parents = parents
        out._backward = backward
    return out


def _unbroadcast(grad: np.ndarray, shape: tuple[int, ...]) -> np.ndarray:
    """Reduce a broadcast gradient back to the shape of its source."""
    if grad.shape == shape:
        return grad
    extra = grad.ndim - len(shape)
    if extra > 0:
        grad = grad.sum(axis=tuple(range(extra)))
    axes = tuple(i for i, n in enumerate(shape) if n == 1 and grad.shape[i] != 1)
    if axes:
        grad = grad.sum(axis=axes, keepdims=True)
    return grad.reshape(shape)


# -- elementwise arithmetic ----------------------------------------------------


def add(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    data = a.data + b.data

    def backward(g):
        return ((a, _unbroadcast(g, a.shape)), (b, _unbroadcast(g, b.shape)))

    return _make(data, (a, b), backward)


def sub(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    data = a.data - b.data

    def backward(g):
        return ((a, _unbroadcast(g, a.shape)), (b, _unbroadcast(-g, b.shape)))

    return _make(data, (a, b), backward)


def mul(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    data = a.data * b.data

    def backward(g):
        return (
            (a, _unbroadcast(g * b.data, a.shape)),
            (b, _unbroadcast(g * a.data, b.shape)),
        )

    return _make(data, (a, b), backward)


def div(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    data = a.data / b.data

    def backward(g):
        return (
            (a, _unbroadcast(g / b.data, a.shape)),
            (b, _unbroadcast(-g * data / b.data, b.shape)),
        )

    return _make(data, (a, b), backward)


def power(a, p: float) -> Tensor:
    a = as_tensor(a)
    p = float(p)
    data = a.data**p

    def backward(g):
        return ((a, g * p * a.data ** (p - 1.0)),)

    return _make(data, (a,), backward)


def exp(a) -> Tensor:
    a = as_tensor(a)
    data = np.exp(a.data)

    def backward(g):
        return ((a, g * data),)

    return _make(data, (a,), backward)


def log(a) -> Tensor:
    a = as_tensor(a)
    data = np.log(a.data)

    def backward(g):
        return ((a, g / a.data),)

    return _make(data, (a,), backward)


def sqrt(a) -> Tensor:
    a = as_tensor(a)
    data = np.sqrt(a.data)

    def backward(g):
        return ((a, g * 0.5 / data),)

    return _make(data, (a,), backward)


def tanh(a) -> Tensor:
    a = as_tensor(a)
    data = np.tanh(a.data)

    def backward(g):
        return ((a, g * (1.0 - data * data)),)

    return _make(data, (a,), backward)


def arctan(a) -> Tensor:
    a = as_tensor(a)
    data = np.arctan(a.data)

    def backward(g):
        return ((a, g / (1.0 + a.data * a.data)),)

    return _make(data, (a,), backward)


def absolute(a) -> Tensor:
    a = as_tensor(a)
    data = np.abs(a.data)

    def backward(g):
        return ((a, g * np.sign(a.data)),)

    return _make(data, (a,), backward)


def relu(a) -> Tensor:
    a = as_tensor(a)
    data = np.maximum(a.data, 0.0)

    def backward(g):
        return ((a, g * (a.data > 0.0)),)

    return _make(data, (a,), backward)


def sigmoid(a) -> Tensor:
    a = as_tensor(a)
    x = a.data
    data = np.where(x >= 0, 1.0 / (1.0 + np.exp(-np.abs(x))), np.exp(-np.abs(x)) / (1.0 + np.exp(-np.abs(x))))

    def backward(g):
        return ((a, g * data * (1.0 - data)),)

    return _make(data, (a,), backward)


_GELU_C = math.sqrt(2.0 / math.pi)
_GELU_A = 0.044715


def gelu(a) -> Tensor:
    """GELU with the tanh approximation (transformer MLP activation)."""
    a = as_tensor(a)
    x = a.data
    u = _GELU_C * (x + _GELU_A * (x * x * x))
    t = np.tanh(u)
    data = 0.5 * x * (1.0 + t)

    def backward(g):
        du = _GELU_C * (1.0 + 3.0 * _GELU_A * x * x)
        return ((a, g * (0.5 * (1.0 + t) + 0.5 * x * (1.0 - t * t) * du)),)

    return _make(data, (a,), backward)


def maximum(a, b) -> Tensor:
    """Elementwise max; on ties the gradient goes to the first operand."""
    a, b = as_tensor(a), as_tensor(b)
    take_a = a.data >= b.data
    data = np.where(take_a, a.data, b.data)

    def backward(g):
        return (
            (a, _unbroadcast(g * take_a, a.shape)),
            (b, _unbroadcast(g * ~take_a, b.shape)),
        )

    return _make(data, (a, b), backward)


def minimum(a, b) -> Tensor:
    """Elementwise min; on ties the gradient goes to the first operand."""
    a, b = as_tensor(a), as_tensor(b)
    take_a = a.data <= b.data
    data = np.where(take_a, a.data, b.data)

    def backward(g):
        return (
            (a, _unbroadcast(g * take_a, a.shape)),
            (b, _unbroadcast(g * ~take_a, b.shape)),
        )

    return _make(data, (a, b), backward)


def clamp(a, lo=None, hi=None) -> Tensor:
    out = as_tensor(a)
    if lo is not None:
        out = maximum(out, Tensor(np.full((), lo)))
    if hi is not None:
        out = minimum(out, Tensor(np.full((), hi)))
    return out


# -- reductions and shape ops ---------------------------------------------------


def tensor_sum(a, axis=None, keepdims=False) -> Tensor:
    a = as_tensor(a)
    data = a.data.sum(axis=axis, keepdims=keepdims)

    def backward(g):
        if axis is None:
            return ((a, np.broadcast_to(g, a.shape).copy()),)
        axes = axis if isinstance(axis, tuple) else (axis,)
        if not keepdims:
            g = np.expand_dims(g, axes)
        return ((a, np.broadcast_to(g, a.shape).copy()),)

    return _make(np.asarray(data), (a,), backward)


def tensor_mean(a, axis=None, keepdims=False) -> Tensor:
    a = as_tensor(a)
    data = a.data.mean(axis=axis, keepdims=keepdims)
    count = a.data.size if axis is None else np.prod(
        [a.shape[ax] for ax in (axis if isinstance(axis, tuple) else (axis,))]
    )

    def backward(g):
        if axis is None:
            return ((a, np.broadcast_to(g / count, a.shape).copy()),)
        axes = axis if isinstance(axis, tuple) else (axis,)
        if not keepdims:
            g = np.expand_dims(g, axes)
        return ((a, np.broadcast_to(g / count, a.shape).copy()),)

    return _make(np.asarray(data), (a,), backward)


def reshape(a, shape) -> Tensor:
    a = as_tensor(a)
    data = a.data.reshape(shape)

    def backward(g):
        return ((a, g.reshape(a.shape)),)

    return _make(data, (a,), backward)


def transpose(a, axes=None) -> Tensor:
    a = as_tensor(a)
    data = a.data.transpose(axes)  # view; BLAS consumers handle strides
    inv = None if axes is None else tuple(np.argsort(axes))

    def backward(g):
        return ((a, g.transpose(inv)),)

    return _make(data, (a,), backward)


def concat(tensors, axis: int = 0) -> Tensor:
    ts = [as_tensor(t) for t in tensors]
    data = np.concatenate([t.data for t in ts], axis=axis)
    sizes = [t.shape[axis] for t in ts]
    offsets = np.cumsum([0] + sizes)

    def backward(g):
        pieces = []
        for t, lo, hi in zip(ts, offsets[:-1], offsets[1:]):
            idx = [slice(None)] * g.ndim
            idx[axis] = slice(lo, hi)
            pieces.append((t, g[tuple(idx)]))
        return tuple(pieces)

    return _make(data, tuple(ts), backward)


def narrow(a, axis: int, start: int, length: int) -> Tensor:
    """Contiguous slice [start, start+length) along one axis."""
    a = as_tensor(a)
    if start < 0 or start + length > a.shape[axis]:
        raise DimensionError("narrow out of range")
    idx = [slice(None)] * a.ndim
    idx[axis] = slice(start, start + length)
    data = a.data[tuple(idx)]

    def backward(g):
        full = np.zeros(a.shape, dtype=g.dtype)
        full[tuple(idx)] = g
        return ((a, full),)

    return _make(data, (a,), backward)


def index_select(a, axis: int, idx) -> Tensor:
    """Gather along one axis with an integer index vector."""
    a = as_tensor(a)
    idx = np.asarray(idx, dtype=np.int64)
    data = np.take(a.data, idx, axis=axis)

    def backward(g):
        full = np.zeros(a.shape, dtype=g.dtype)
        sl = [slice(None)] * a.ndim
        sl[axis] = idx
        np.add.at(full, tuple(sl), g)
        return ((a, full),)

    return _make(data, (a,), backward)


def take_rows(a, idx) -> Tensor:
    """Batched row gather: a is (B, L, C), idx is (B, n) -> (B, n, C)."""
    a = as_tensor(a)
    idx = np.asarray(idx, dtype=np.int64)
    if a.ndim != 3 or idx.ndim != 2 or idx.shape[0] != a.shape[0]:
        raise DimensionError("take_rows expects (B, L, C) data and (B, n) indices")
    data = np.take_along_axis(a.data, idx[:, :, None], axis=1)

    def backward(g):
        full = np.zeros(a.shape, dtype=g.dtype)
        rows = np.arange(a.shape[0])[:, None]
        np.add.at(full, (rows, idx), g)
        return ((a, full),)

    return _make(data, (a,), backward)


# -- linear algebra --------------------------------------------------------------


def matmul(a, b) -> Tensor:
    """Matrix product with NumPy batch semantics on the leading axes."""
    a, b = as_tensor(a), as_tensor(b)
    if a.ndim < 2 or b.ndim < 2:
        raise DimensionError("matmul operands must have rank >= 2")
    if a.shape[-1] != b.shape[-2]:
        raise DimensionError(f"matmul inner extents {a.shape} x {b.shape}")
    data = a.data @ b.data

    def backward(g):
        if b.ndim == 2:
            ga = g @ b.data.T
            gb = a.data.reshape(-1, a.shape[-1]).T @ g.reshape(-1, g.shape[-1])
        elif a.ndim == 2:
            ga = _unbroadcast(g @ np.swapaxes(b.data, -1, -2), a.shape)
            gb = np.swapaxes(a.data, -1, -2) @ g
        else:
            ga = _unbroadcast(g @ np.swapaxes(b.data, -1, -2), a.shape)
            gb = _unbroadcast(np.swapaxes(a.data, -1, -2) @ g, b.shape)
        return ((a, ga), (b, gb))

    return _make(data, (a, b), backward)


def softmax_lastdim(a) -> Tensor:
    """Stable softmax over the last axis; rows sum to one."""
    a = as_tensor(a)
    x = a.data
    if x.shape[-1] < 1:
        raise DimensionError("softmax needs a non-empty last axis")
    if not np.all(np.isfinite(x)):
        raise NumericError("softmax input contains NaN/Inf")
    shifted = x - x.max(axis=-1, keepdims=True)
    e = np.exp(shifted)
    data = e / e.sum(axis=-1, keepdims=True)

    def backward(g):
        dot = (g * data).sum(axis=-1, keepdims=True)
        return ((a, data * (g - dot)),)

    return _make(data, (a,), backward)


def layer_norm(a, gamma, beta, eps: float = 1e-6) -> Tensor:
    """Normalize the last axis to zero mean / unit variance, then affine.

    A zero-variance slice maps to the affine of zeros (eps guards the
    division).
    """
    a, gamma, beta = as_tensor(a), as_tensor(gamma), as_tensor(beta)
    if eps <= 0:
        raise UsageError("layer_norm needs eps > 0")
    c = a.shape[-1]
    if gamma.shape != (c,) or beta.shape != (c,):
        raise DimensionError("layer_norm affine width mismatch")
    x = a.data
    mu = x.mean(axis=-1, keepdims=True)
    xc = x - mu
    var = (xc * xc).mean(axis=-1, keepdims=True)
    inv = 1.0 / np.sqrt(var + eps)
    xhat = xc * inv
    data = gamma.data * xhat + beta.data

    def backward(g):
        dxhat = g * gamma.data
        m1 = dxhat.mean(axis=-1, keepdims=True)
        m2 = (dxhat * xhat).mean(axis=-1, keepdims=True)
        ga = inv * (dxhat - m1 - xhat * m2)
        axes = tuple(range(g.ndim - 1))
        return (
            (a, ga),
            (gamma, (g * xhat).sum(axis=axes)),
            (beta, g.sum(axis=axes)),
        )

    return _make(data, (a, gamma, beta), backward)


def conv2d(x, w, b=None, stride: int = 1, padding: int = 0, groups: int = 1) -> Tensor:
    """2-D cross-correlation, NCHW layout; depthwise = groups == C_in.

    ``x`` may be (C, H, W) or (B, C, H, W); the output rank matches.
    """
    x, w = as_tensor(x), as_tensor(w)
    squeeze = x.ndim == 3
    xd = x.data[None] if squeeze else x.data
    if xd.ndim != 4 or w.ndim != 4:
        raise DimensionError("conv2d expects (B,C,H,W) input and (O,C/g,kh,kw) weight")
    bsz, cin, h, wdt = xd.shape
    cout, cg, kh, kw = w.shape
    if cin % groups or cout % groups or cg != cin // groups:
        raise DimensionError(f"conv2d groups={groups} incompatible with C_in={cin}, C_out={cout}")
    h2 = (h + 2 * padding - kh) // stride + 1
    w2 = (wdt + 2 * padding - kw) // stride + 1
    if h2 < 1 or w2 < 1:
        raise DimensionError("conv2d output would be empty")
    og = cout // groups
    n = h2 * w2

    xp = np.pad(xd, ((0, 0), (0, 0), (padding, padding), (padding, padding))) if padding else xd

    if groups == 1:
        # channels-last im2col so window copies run over contiguous channel runs
        xcl = np.ascontiguousarray(xp.transpose(0, 2, 3, 1))
        win = sliding_window_view(xcl, (kh, kw), axis=(1, 2))[:, ::stride, ::stride]
        cols = np.ascontiguousarray(win).reshape(bsz * n, cin * kh * kw)
        wmat = w.data.reshape(cout, cin * kh * kw)
        out = (cols @ wmat.T).reshape(bsz, h2, w2, cout).transpose(0, 3, 1, 2)
    else:
        win = sliding_window_view(xp, (kh, kw), axis=(2, 3))[:, :, ::stride, ::stride]
        cols = np.ascontiguousarray(
            win.reshape(bsz, groups, cg, h2, w2, kh, kw).transpose(0, 1, 3, 4, 2, 5, 6)
        ).reshape(bsz, groups, n, cg * kh * kw)
        wg = w.data.reshape(groups, og, cg * kh * kw)
        out = cols @ wg.transpose(0, 2, 1)  # (B, g, N, og)
        out = out.transpose(0, 1, 3, 2).reshape(bsz, cout, h2, w2)
    if b is not None:
        b = as_tensor(b)
        if b.shape != (cout,):
            raise DimensionError("conv2d bias width mismatch")
        out = out + b.data[:, None, None]
    data = out[0] if squeeze else out

    parents = (x, w) if b is None else (x, w, b)

    def backward(g):
        gd = g[None] if squeeze else g
        hp, wp = h + 2 * padding, wdt + 2 * padding
        if groups == 1:
            g2 = np.ascontiguousarray(gd.transpose(0, 2, 3, 1)).reshape(bsz * n, cout)
            wmat = w.data.reshape(cout, cin * kh * kw)
            gw = (g2.T @ cols).reshape(w.shape)
            # window grads laid out (C, kh, kw, B, H2, W2): per-tap slices are
            # contiguous in the spatial dims, so the scatter below is cheap
            gwin = (wmat.T @ g2.T).reshape(cin, kh, kw, bsz, h2, w2)
            gxp = np.zeros((cin, bsz, hp, wp), dtype=gd.dtype)
            for i in range(kh):
                for j in range(kw):
                    gxp[:, :, i : i + stride * h2 : stride, j : j + stride * w2 : stride] += \
                        gwin[:, i, j]
            gxp = gxp.transpose(1, 0, 2, 3)
        else:
            g2 = gd.reshape(bsz, groups, og, n).transpose(0, 1, 3, 2)  # (B,g,N,og)
            got = np.ascontiguousarray(g2.transpose(1, 3, 0, 2)).reshape(groups, og, bsz * n)
            colt = np.ascontiguousarray(cols.transpose(1, 0, 2, 3)).reshape(groups, bsz * n, -1)
            gw = (got @ colt).reshape(w.shape)
            gcols = g2 @ w.data.reshape(groups, og, cg * kh * kw)  # (B,g,N,cg*kh*kw)
            gwin = gcols.reshape(bsz, groups, h2, w2, cg, kh, kw).transpose(0, 1, 4, 2, 3, 5, 6)
            gwin = gwin.reshape(bsz, cin, h2, w2, kh, kw)
            gxp = np.zeros((bsz, cin, hp, wp), dtype=gd.dtype)
            for i in range(kh):
                for j in range(kw):
                    gxp[:, :, i : i + stride * h2 : stride, j : j + stride * w2 : stride] += \
                        gwin[:, :, :, :, i, j]
        gx = gxp[:, :, padding : padding + h, padding : padding + wdt] if padding else gxp
        if squeeze:
            gx = gx[0]
        grads = [(x, gx), (w, gw)]
        if b is not None:
            grads.append((b, gd.sum(axis=(0, 2, 3))))
        return tuple(grads)

    return _make(data, parents, backward)


_INTERP_CACHE: dict[tuple[int, int, type], np.ndarray] = {}


def _interp_matrix(n_in: int, n_out: int, dtype) -> np.ndarray:
    """Row-interpolation matrix for align-corners bilinear resizing."""
    key = (n_in, n_out, np.dtype(dtype).type)
    cached = _INTERP_CACHE.get(key)
    if cached is not None:
        return cached
    m = np.zeros((n_out, n_in), dtype=dtype)
    pos = np.linspace(0.0, n_in - 1.0, n_out)
    i0 = np.floor(pos).astype(np.int64)
    i0 = np.clip(i0, 0, n_in - 1)
    i1 = np.minimum(i0 + 1, n_in - 1)
    frac = pos - i0
    np.add.at(m, (np.arange(n_out), i0), 1.0 - frac)
    np.add.at(m, (np.arange(n_out), i1), frac)
    _INTERP_CACHE[key] = m
    return m


def bilinear_resize(x, out_h: int, out_w: int) -> Tensor:
    """Align-corners bilinear resize of the trailing two axes."""
    x = as_tensor(x)
    if out_h < 1 or out_w < 1:
        raise DimensionError("bilinear_resize needs positive output extents")
    h, w = x.shape[-2], x.shape[-1]
    ah = Tensor(_interp_matrix(h, out_h, x.data.dtype))
    aw = Tensor(_interp_matrix(w, out_w, x.data.dtype))
    return matmul(matmul(ah, x), transpose(aw, (1, 0)))


def assert_finite(t: Tensor, what: str = "tensor") -> Tensor:
    if not np.all(np.isfinite(t.data)):
        raise NumericError(f"{what} contains NaN/Inf")
    return t


# -- serialization ----------------------------------------------------------------

_MAGIC = b"MXT1"


def save_tensor(path, t) -> None:
    """Write one tensor as: magic 'MXT1', u32 rank, u64 extents, f64 payload."""
    arr = t.data if isinstance(t, Tensor) else np.asarray(t)
    arr = np.ascontiguousarray(arr, dtype=np.float64)
    with open(path, "wb") as fh:
        fh.write(_MAGIC)
        fh.write(struct.pack("<I", arr.ndim))
        fh.write(struct.pack(f"<{arr.ndim}Q", *arr.shape))
        fh.write(arr.astype("<f8").tobytes())


def load_tensor(path) -> np.ndarray:
    with open(path, "rb") as fh:
        if fh.read(4) != _MAGIC:
            raise UsageError(f"{path} is not a tensor container")
        (rank,) = struct.unpack("<I", fh.read(4))
        shape = struct.unpack(f"<{rank}Q", fh.read(8 * rank)) if rank else ()
        count = int(np.prod(shape)) if shape else 1
        payload = fh.read(8 * count)
        if len(payload) != 8 * count:
            raise UsageError(f"{path} is truncated")
        arr = np.frombuffer(payload, dtype="<f8").reshape(shape)
    return arr.astype(_DEFAULT_DTYPE, copy=True)
