"""Dense tensors with reverse-mode automatic differentiation.

A :class:`Tensor` wraps a numpy array. Every differentiable operation in
this module records its inputs and a backward rule on the output tensor,
so calling :func:`backward` on a scalar walks the graph in reverse
topological order and accumulates gradients into the leaves.

Two numeric modes are used in practice: float64 for gradient checking
and float32 for training. Results follow numpy's dtype promotion.
"""

from __future__ import annotations

import math
import threading
import warnings
from contextlib import contextmanager
from typing import Callable, Iterable, Optional, Sequence

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view
from scipy.special import erf

from ._kernels import gaussian_cdf_f32

from .errors import (
    DegenerateShape,
    DisconnectedGraphWarning,
    InvalidStride,
    NotScalar,
    ShapeMismatch,
)

_state = threading.local()
_DEBUG = False

_SQRT_HALF = 1.0 / math.sqrt(2.0)
_INV_SQRT_2PI = 1.0 / math.sqrt(2.0 * math.pi)


def _grad_enabled() -> bool:
    return getattr(_state, "grad_enabled", True)


@contextmanager
def no_grad():
    """Disable graph recording in the current thread."""
    prev = _grad_enabled()
    _state.grad_enabled = False
    try:
        yield
    finally:
        _state.grad_enabled = prev


def set_debug(flag: bool) -> None:
    """Raise FloatingPointError whenever an op produces NaN or Inf."""
    global _DEBUG
    _DEBUG = bool(flag)


class Tensor:
    """An n-dimensional float array that can take part in autodiff.

    Args:
        data: array-like payload. Non-float input is converted to float64.
        requires_grad: mark as a leaf whose gradient should be populated.
        dtype: optional explicit dtype.
        name: optional label, used in error messages and checkpoints.
    """

    __slots__ = ("data", "requires_grad", "grad", "_parents", "_backward", "name")
    __array_priority__ = 100

    def __init__(self, data, requires_grad: bool = False, dtype=None, name=None):
        if isinstance(data, Tensor):
            data = data.data
        if dtype is None:
            arr = np.asarray(data)
            if arr.dtype not in (np.float32, np.float64):
                arr = arr.astype(np.float64)
        else:
            arr = np.asarray(data, dtype=dtype)
        if arr.ndim and 0 in arr.shape:
            raise DegenerateShape(f"zero-sized dimension in shape {arr.shape}")
        self.data = arr
        self.requires_grad = bool(requires_grad)
        self.grad: Optional[np.ndarray] = None
        self._parents: tuple = ()
        self._backward: Optional[Callable] = None
        self.name = name

    # construction of op outputs skips validation on the hot path
    @classmethod
    def _from_op(cls, data: np.ndarray, parents: tuple, backward: Callable) -> "Tensor":
        if _DEBUG and not np.all(np.isfinite(data)):
            raise FloatingPointError("non-finite values produced by a forward op")
        out = cls.__new__(cls)
        out.data = data
        out.grad = None
        out.name = None
        track = _grad_enabled() and any(p.requires_grad for p in parents)
        out.requires_grad = track
        if track:
            out._parents = parents
            out._backward = backward
        else:
            out._parents = ()
            out._backward = None
        return out

    @property
    def shape(self) -> tuple:
        return self.data.shape

    @property
    def ndim(self) -> int:
        return self.data.ndim

    @property
    def dtype(self):
        return self.data.dtype

    @property
    def size(self) -> int:
        return self.data.size

    @property
    def is_leaf(self) -> bool:
        return self._backward is None

    def numpy(self) -> np.ndarray:
        return self.data

    def item(self) -> float:
        return float(self.data.reshape(-1)[0]) if self.data.size == 1 else float("nan")

    def detach(self) -> "Tensor":
        return Tensor(self.data)

    def zero_grad(self) -> None:
        self.grad = None

    def __repr__(self):
        flag = ", requires_grad=True" if self.requires_grad else ""
        return f"Tensor(shape={self.shape}, dtype={self.dtype}{flag})"

    def __len__(self):
        return self.shape[0]

    # arithmetic
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

    def __pow__(self, exponent):
        return power(self, exponent)

    def __matmul__(self, other):
        return matmul(self, other)

    def __rmatmul__(self, other):
        return matmul(other, self)

    def __getitem__(self, index):
        return getitem(self, index)

    def sum(self, axis=None, keepdims=False):
        return tsum(self, axis, keepdims)

    def mean(self, axis=None, keepdims=False):
        return mean(self, axis, keepdims)

    def reshape(self, *shape):
        if len(shape) == 1 and isinstance(shape[0], (tuple, list)):
            shape = tuple(shape[0])
        return reshape(self, shape)

    def transpose(self, *axes):
        if len(axes) == 1 and isinstance(axes[0], (tuple, list)):
            axes = tuple(axes[0])
        return transpose(self, axes or None)

    @property
    def T(self):
        return swap_last(self)


def as_tensor(x, dtype=None) -> Tensor:
    if isinstance(x, Tensor):
        return x
    if dtype is None and isinstance(x, (int, float)):
        return Tensor(np.asarray(x, dtype=np.float64))
    return Tensor(x, dtype=dtype)


def _coerce_pair(a, b):
    # python scalars adopt the tensor's dtype so float32 graphs stay float32
    if not isinstance(a, Tensor):
        ref = b.dtype if isinstance(b, Tensor) else None
        a = Tensor(np.asarray(a, dtype=ref))
    if not isinstance(b, Tensor):
        b = Tensor(np.asarray(b, dtype=a.dtype))
    return a, b


def _unbroadcast(g: np.ndarray, shape: tuple) -> np.ndarray:
    if g.shape == shape:
        return g
    extra = g.ndim - len(shape)
    if extra > 0:
        g = g.sum(axis=tuple(range(extra)))
    axes = tuple(i for i, s in enumerate(shape) if s == 1 and g.shape[i] != 1)
    if axes:
        g = g.sum(axis=axes, keepdims=True)
    return g.reshape(shape)


def _check_broadcast(a: Tensor, b: Tensor, op: str):
    try:
        np.broadcast_shapes(a.shape, b.shape)
    except ValueError:
        raise ShapeMismatch(f"{op}: cannot broadcast {a.shape} with {b.shape}") from None


# ---------------------------------------------------------------- elementwise


def add(a, b) -> Tensor:
    a, b = _coerce_pair(a, b)
    _check_broadcast(a, b, "add")
    sa, sb = a.shape, b.shape

    def backward(g):
        return _unbroadcast(g, sa), _unbroadcast(g, sb)

    return Tensor._from_op(a.data + b.data, (a, b), backward)


def sub(a, b) -> Tensor:
    a, b = _coerce_pair(a, b)
    _check_broadcast(a, b, "sub")
    sa, sb = a.shape, b.shape

    def backward(g):
        return _unbroadcast(g, sa), _unbroadcast(-g, sb)

    return Tensor._from_op(a.data - b.data, (a, b), backward)


def mul(a, b) -> Tensor:
    a, b = _coerce_pair(a, b)
    _check_broadcast(a, b, "mul")
    ad, bd = a.data, b.data

    def backward(g):
        ga = _unbroadcast(g * bd, ad.shape) if a.requires_grad else None
        gb = _unbroadcast(g * ad, bd.shape) if b.requires_grad else None
        return ga, gb

    return Tensor._from_op(ad * bd, (a, b), backward)


def div(a, b) -> Tensor:
    a, b = _coerce_pair(a, b)
    _check_broadcast(a, b, "div")
    ad, bd = a.data, b.data
    out = ad / bd

    def backward(g):
        ga = _unbroadcast(g / bd, ad.shape) if a.requires_grad else None
        gb = _unbroadcast(-g * out / bd, bd.shape) if b.requires_grad else None
        return ga, gb

    return Tensor._from_op(out, (a, b), backward)


def neg(a: Tensor) -> Tensor:
    return Tensor._from_op(-a.data, (a,), lambda g: (-g,))


def power(a: Tensor, exponent: float) -> Tensor:
    ad = a.data
    p = float(exponent)

    def backward(g):
        return (g * p * ad ** (p - 1.0),)

    return Tensor._from_op(ad**p, (a,), backward)


def exp(a: Tensor) -> Tensor:
    out = np.exp(a.data)
    return Tensor._from_op(out, (a,), lambda g: (g * out,))


def log(a: Tensor) -> Tensor:
    ad = a.data
    return Tensor._from_op(np.log(ad), (a,), lambda g: (g / ad,))


def relu(a: Tensor) -> Tensor:
    mask = a.data > 0
    return Tensor._from_op(a.data * mask, (a,), lambda g: (g * mask,))


def gelu(x: Tensor) -> Tensor:
    """Exact GELU, x * Phi(x) with the erf-based Gaussian CDF."""
    xd = x.data
    if xd.dtype == np.float32:
        cdf = gaussian_cdf_f32(xd)
    else:
        cdf = 0.5 * (1.0 + erf(xd * _SQRT_HALF))

    def backward(g):
        pdf = np.exp(-0.5 * xd * xd) * _INV_SQRT_2PI
        return (g * (cdf + xd * pdf),)

    return Tensor._from_op((xd * cdf).astype(xd.dtype, copy=False), (x,), backward)


# ------------------------------------------------------------------- shapes


def reshape(a: Tensor, shape) -> Tensor:
    src = a.shape
    return Tensor._from_op(a.data.reshape(shape), (a,), lambda g: (g.reshape(src),))


def transpose(a: Tensor, axes=None) -> Tensor:
    if axes is None:
        axes = tuple(reversed(range(a.ndim)))
    axes = tuple(axes)
    inverse = tuple(np.argsort(axes))
    return Tensor._from_op(
        np.transpose(a.data, axes), (a,), lambda g: (np.transpose(g, inverse),)
    )


def swap_last(a: Tensor) -> Tensor:
    return Tensor._from_op(
        np.swapaxes(a.data, -1, -2), (a,), lambda g: (np.swapaxes(g, -1, -2),)
    )


def expand(a: Tensor, shape) -> Tensor:
    """Broadcast ``a`` to ``shape``; the backward rule sums over the copies."""
    src = a.shape
    try:
        out = np.broadcast_to(a.data, shape)
    except ValueError:
        raise ShapeMismatch(f"expand: cannot broadcast {src} to {tuple(shape)}") from None
    return Tensor._from_op(out, (a,), lambda g: (_unbroadcast(g, src),))


def getitem(a: Tensor, index) -> Tensor:
    src_shape, dtype = a.shape, a.dtype
    fancy = _is_fancy(index)

    def backward(g):
        out = np.zeros(src_shape, dtype=g.dtype if g.dtype == dtype else dtype)
        if fancy:
            np.add.at(out, index, g)
        else:
            out[index] += g
        return (out,)

    data = a.data[index]
    if not isinstance(data, np.ndarray):
        data = np.asarray(data)
    return Tensor._from_op(data, (a,), backward)


def _is_fancy(index) -> bool:
    items = index if isinstance(index, tuple) else (index,)
    return any(isinstance(i, (list, np.ndarray, Tensor)) for i in items)


def concat(tensors: Sequence[Tensor], axis: int = 0) -> Tensor:
    tensors = [as_tensor(t) for t in tensors]
    ref = tensors[0].shape
    ax = axis % len(ref)
    for t in tensors[1:]:
        if t.ndim != len(ref) or any(
            t.shape[i] != ref[i] for i in range(len(ref)) if i != ax
        ):
            raise ShapeMismatch(
                f"concat along axis {axis}: incompatible shapes {ref} and {t.shape}"
            )
    sizes = np.cumsum([t.shape[ax] for t in tensors])[:-1]

    def backward(g):
        return tuple(np.split(g, sizes, axis=ax))

    return Tensor._from_op(
        np.concatenate([t.data for t in tensors], axis=ax), tuple(tensors), backward
    )


# --------------------------------------------------------------- reductions


def tsum(a: Tensor, axis=None, keepdims: bool = False) -> Tensor:
    src = a.shape
    out = a.data.sum(axis=axis, keepdims=keepdims)

    def backward(g):
        if axis is not None and not keepdims:
            axes = (axis,) if isinstance(axis, int) else tuple(axis)
            axes = tuple(sorted(ax % len(src) for ax in axes))
            g = np.expand_dims(g, axes)
        return (np.broadcast_to(g, src).copy(),)

    return Tensor._from_op(np.asarray(out), (a,), backward)


def mean(a: Tensor, axis=None, keepdims: bool = False) -> Tensor:
    if axis is None:
        count = a.size
    else:
        axes = (axis,) if isinstance(axis, int) else tuple(axis)
        count = int(np.prod([a.shape[ax] for ax in axes]))
    return mul(tsum(a, axis, keepdims), 1.0 / count)


# ---------------------------------------------------------- linear algebra


def matmul(a, b) -> Tensor:
    """Batched matrix product ``a @ b`` with broadcasting over batch dims.

    Gradients are ``dA = G Bᵀ`` and ``dB = Aᵀ G``, summed over any batch
    dimensions that were broadcast.
    """
    a, b = as_tensor(a), as_tensor(b)
    if a.ndim < 2 or b.ndim < 2:
        raise ShapeMismatch(f"matmul needs matrices, got {a.shape} and {b.shape}")
    if a.shape[-1] != b.shape[-2]:
        raise ShapeMismatch(f"matmul inner dimensions differ: {a.shape} @ {b.shape}")
    try:
        np.broadcast_shapes(a.shape[:-2], b.shape[:-2])
    except ValueError:
        raise ShapeMismatch(
            f"matmul batch dimensions do not broadcast: {a.shape} @ {b.shape}"
        ) from None
    ad, bd = a.data, b.data

    def backward(g):
        ga = gb = None
        if a.requires_grad:
            ga = _unbroadcast(g @ np.swapaxes(bd, -1, -2), ad.shape)
        if b.requires_grad:
            if bd.ndim == 2 and ad.ndim > 2:
                # fold batch rows into one product instead of summing slices
                gb = ad.reshape(-1, ad.shape[-1]).T @ g.reshape(-1, g.shape[-1])
            else:
                gb = _unbroadcast(np.swapaxes(ad, -1, -2) @ g, bd.shape)
        return ga, gb

    return Tensor._from_op(ad @ bd, (a, b), backward)


def softmax_lastdim(x: Tensor) -> Tensor:
    """Softmax over the last axis, computed after subtracting the row max."""
    shifted = x.data - x.data.max(axis=-1, keepdims=True)
    e = np.exp(shifted)
    out = e / e.sum(axis=-1, keepdims=True)

    def backward(g):
        return (out * (g - (g * out).sum(axis=-1, keepdims=True)),)

    return Tensor._from_op(out, (x,), backward)


def layer_norm(x: Tensor, gamma: Tensor, beta: Tensor, eps: float = 1e-6) -> Tensor:
    """Normalize the last axis to zero mean and unit variance, then scale and shift."""
    x, gamma, beta = as_tensor(x), as_tensor(gamma), as_tensor(beta)
    d = x.shape[-1]
    if gamma.shape != (d,) or beta.shape != (d,):
        raise ShapeMismatch(
            f"layer_norm: feature size {d} vs gamma {gamma.shape}, beta {beta.shape}"
        )
    if eps <= 0:
        raise ValueError("eps must be positive")
    xd = x.data
    mu = xd.mean(axis=-1, keepdims=True)
    xc = xd - mu
    var = (xc * xc).mean(axis=-1, keepdims=True)
    rstd = 1.0 / np.sqrt(var + eps)
    xhat = xc * rstd
    gd = gamma.data
    out = xhat * gd + beta.data

    def backward(g):
        gx = ggamma = gbeta = None
        lead = tuple(range(g.ndim - 1))
        if gamma.requires_grad:
            ggamma = (g * xhat).sum(axis=lead)
        if beta.requires_grad:
            gbeta = g.sum(axis=lead)
        if x.requires_grad:
            dxhat = g * gd
            gx = rstd * (
                dxhat
                - dxhat.mean(axis=-1, keepdims=True)
                - xhat * (dxhat * xhat).mean(axis=-1, keepdims=True)
            )
        return gx, ggamma, gbeta

    return Tensor._from_op(out, (x, gamma, beta), backward)


def conv2d(x, kernel, stride: int = 1, padding: int = 0) -> Tensor:
    """2D cross-correlation of ``x[b,c,h,w]`` with ``kernel[o,c,kh,kw]``."""
    x, kernel = as_tensor(x), as_tensor(kernel)
    if stride < 1:
        raise InvalidStride(f"stride must be >= 1, got {stride}")
    if x.ndim != 4 or kernel.ndim != 4:
        raise ShapeMismatch(f"conv2d expects 4D input and kernel, got {x.shape}, {kernel.shape}")
    b, c, h, w = x.shape
    o, kc, kh, kw = kernel.shape
    if kc != c:
        raise ShapeMismatch(f"conv2d channel mismatch: input {x.shape}, kernel {kernel.shape}")
    if h + 2 * padding < kh or w + 2 * padding < kw:
        raise ShapeMismatch(
            f"conv2d kernel {kh}x{kw} larger than padded input {h + 2 * padding}x{w + 2 * padding}"
        )
    ho = (h + 2 * padding - kh) // stride + 1
    wo = (w + 2 * padding - kw) // stride + 1
    p = padding
    xp = np.pad(x.data, ((0, 0), (0, 0), (p, p), (p, p))) if p else x.data
    win = sliding_window_view(xp, (kh, kw), axis=(2, 3))[:, :, ::stride, ::stride][
        :, :, :ho, :wo
    ]
    kd = kernel.data
    out = np.tensordot(win, kd, axes=([1, 4, 5], [1, 2, 3])).transpose(0, 3, 1, 2)

    def backward(g):
        gx = gk = None
        if kernel.requires_grad:
            gk = np.tensordot(g, win, axes=([0, 2, 3], [0, 2, 3]))
        if x.requires_grad:
            gxp = np.zeros(xp.shape, dtype=g.dtype)
            for i in range(kh):
                for j in range(kw):
                    contrib = np.tensordot(g, kd[:, :, i, j], axes=([1], [0]))
                    gxp[
                        :,
                        :,
                        i : i + stride * (ho - 1) + 1 : stride,
                        j : j + stride * (wo - 1) + 1 : stride,
                    ] += contrib.transpose(0, 3, 1, 2)
            gx = gxp[:, :, p : p + h, p : p + w] if p else gxp
        return gx, gk

    return Tensor._from_op(np.ascontiguousarray(out), (x, kernel), backward)


def dropout(x: Tensor, p: float, rng: np.random.Generator) -> Tensor:
    if p <= 0.0:
        return x
    keep = (rng.random(x.shape) >= p).astype(x.dtype) / (1.0 - p)
    return Tensor._from_op(x.data * keep, (x,), lambda g: (g * keep,))


# ------------------------------------------------------------------ backward


def topological_order(root: Tensor) -> list:
    """Nodes reachable from ``root`` that carry gradients, inputs first."""
    order, seen = [], set()
    stack = [(root, False)]
    while stack:
        node, expanded = stack.pop()
        if expanded:
            order.append(node)
            continue
        if id(node) in seen:
            continue
        seen.add(id(node))
        stack.append((node, True))
        for parent in node._parents:
            if parent.requires_grad and id(parent) not in seen:
                stack.append((parent, False))
    return order


def backward(loss: Tensor, inputs: Optional[Iterable[Tensor]] = None) -> None:
    """Populate ``.grad`` of every leaf that ``loss`` depends on.

    Gradients accumulate into existing ``.grad`` arrays, so callers reset
    them between steps. Leaves listed in ``inputs`` that the loss does not
    reach get a zero gradient and trigger a DisconnectedGraphWarning.
    """
    if loss.size != 1:
        raise NotScalar(f"backward needs a scalar loss, got shape {loss.shape}")
    visited = set()
    if loss.requires_grad:
        order = topological_order(loss)
        grads = {id(loss): np.ones_like(loss.data)}
        for node in reversed(order):
            visited.add(id(node))
            g = grads.pop(id(node), None)
            if g is None:
                continue
            if node._backward is None:
                node.grad = g.copy() if node.grad is None else node.grad + g
                continue
            for parent, pg in zip(node._parents, node._backward(g)):
                if pg is None or not parent.requires_grad:
                    continue
                key = id(parent)
                if key in grads:
                    grads[key] = grads[key] + pg
                else:
                    grads[key] = pg
    if inputs is not None:
        for leaf in inputs:
            if id(leaf) not in visited:
                warnings.warn(
                    f"leaf {leaf.name or leaf.shape} is not reachable from the loss",
                    DisconnectedGraphWarning,
                    stacklevel=2,
                )
                if leaf.grad is None:
                    leaf.grad = np.zeros_like(leaf.data)


def zeros(*shape, dtype=np.float64, requires_grad=False) -> Tensor:
    return Tensor(np.zeros(shape, dtype=dtype), requires_grad=requires_grad)


def ones(*shape, dtype=np.float64, requires_grad=False) -> Tensor:
    return Tensor(np.ones(shape, dtype=dtype), requires_grad=requires_grad)
