"""Minimal reverse-mode autodiff over numpy arrays (NHWC layout).

Only the operations the five restoration networks and their losses need are
implemented; no general broadcasting rules beyond elementwise ops with
trailing-dim bias shapes.  Everything is deterministic: same inputs, same
float operations, same outputs.
"""

from __future__ import annotations

import contextlib
import ctypes
import os
import threading
from typing import Callable, Iterable

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view

from ..errors import ArgumentError

class _GradMode(threading.local):
    """Per-thread graph-construction switch (inference threads stay isolated)."""

    enabled = True


_MODE = _GradMode()


def _tune_allocator() -> None:
    """Keep large buffers on the heap so freed activations are reused.

    glibc mmaps allocations above a threshold and returns them to the kernel
    on free; the attention matrices then pay page-zeroing on every step.
    Raising M_MMAP_THRESHOLD avoids that.  No-op on other libc flavors.
    """
    if os.environ.get("MURALKIT_NO_MALLOC_TUNING"):
        return
    try:
        libc = ctypes.CDLL("libc.so.6", use_errno=True)
        M_MMAP_THRESHOLD = -3
        libc.mallopt(M_MMAP_THRESHOLD, 512 * 1024 * 1024)
    except (OSError, AttributeError):
        pass


_tune_allocator()


@contextlib.contextmanager
def no_grad():
    """Disable graph construction (inference mode) for the current thread."""
    prev = _MODE.enabled
    _MODE.enabled = False
    try:
        yield
    finally:
        _MODE.enabled = prev


def grad_enabled() -> bool:
    return _MODE.enabled


class Tensor:
    __slots__ = ("data", "grad", "requires_grad", "name", "_parents", "_backward")

    def __init__(
        self,
        data: np.ndarray,
        requires_grad: bool = False,
        name: str = "",
        _parents: tuple = (),
        _backward: Callable[[np.ndarray], None] | None = None,
    ):
        self.data = np.asarray(data)
        self.grad: np.ndarray | None = None
        self.requires_grad = requires_grad
        self.name = name
        self._parents = _parents
        self._backward = _backward

    @property
    def shape(self) -> tuple[int, ...]:
        return self.data.shape

    @property
    def dtype(self):
        return self.data.dtype

    def detach(self) -> "Tensor":
        return Tensor(self.data)

    def item(self) -> float:
        return float(self.data)

    def zero_grad(self) -> None:
        self.grad = None

    def accumulate(self, g: np.ndarray) -> None:
        # no copy: gradient buffers are never mutated in place anywhere
        if self.grad is None:
            self.grad = np.asarray(g)
        else:
            self.grad = self.grad + g

    def backward(self, grad: np.ndarray | None = None) -> None:
        """Reverse-mode sweep from this node; accumulates into .grad fields."""
        if grad is None:
            if self.data.size != 1:
                raise ArgumentError("backward() without a gradient needs a scalar output")
            grad = np.ones_like(self.data)
        order: list[Tensor] = []
        seen: set[int] = set()
        stack: list[tuple[Tensor, bool]] = [(self, False)]
        while stack:
            node, processed = stack.pop()
            if processed:
                order.append(node)
                continue
            if id(node) in seen:
                continue
            seen.add(id(node))
            stack.append((node, True))
            for p in node._parents:
                if id(p) not in seen:
                    stack.append((p, False))
        self.accumulate(np.asarray(grad, dtype=self.data.dtype))
        for node in reversed(order):
            if node._backward is not None and node.grad is not None:
                node._backward(node.grad)

    # Operator sugar; non-Tensor operands are treated as constants.
    def __add__(self, other):
        return add(self, other)

    def __radd__(self, other):
        return add(self, other)

    def __sub__(self, other):
        return sub(self, other)

    def __rsub__(self, other):
        return sub(_const(other, self), self)

    def __mul__(self, other):
        return mul(self, other)

    def __rmul__(self, other):
        return mul(self, other)

    def __truediv__(self, other):
        return div(self, other)

    def __neg__(self):
        return mul(self, -1.0)

    def __repr__(self):
        return f"Tensor(shape={self.data.shape}, grad={'yes' if self.requires_grad else 'no'}, name={self.name!r})"


class Parameter(Tensor):
    """Trainable leaf tensor."""

    def __init__(self, data: np.ndarray, name: str):
        super().__init__(np.asarray(data), requires_grad=True, name=name)


def _const(value, like: Tensor) -> Tensor:
    return Tensor(np.asarray(value, dtype=like.data.dtype))


def _as_tensor(value, like: Tensor) -> Tensor:
    return value if isinstance(value, Tensor) else _const(value, like)


def _node(data: np.ndarray, parents: Iterable[Tensor], backward) -> Tensor:
    parents = tuple(p for p in parents if isinstance(p, Tensor))
    if _MODE.enabled and any(p.requires_grad for p in parents):
        return Tensor(data, requires_grad=True, _parents=parents, _backward=backward)
    return Tensor(data)


def _unbroadcast(g: np.ndarray, shape: tuple[int, ...]) -> np.ndarray:
    """Sum a gradient down to ``shape`` (inverse of numpy broadcasting)."""
    if g.shape == shape:
        return g
    extra = g.ndim - len(shape)
    if extra > 0:
        g = g.sum(axis=tuple(range(extra)))
    axes = tuple(i for i, n in enumerate(shape) if n == 1 and g.shape[i] != 1)
    if axes:
        g = g.sum(axis=axes, keepdims=True)
    return g


# -- elementwise ------------------------------------------------------------


def add(a: Tensor, b) -> Tensor:
    b = _as_tensor(b, a)
    out = a.data + b.data

    def backward(g):
        if a.requires_grad or a._parents:
            a.accumulate(_unbroadcast(g, a.data.shape))
        if b.requires_grad or b._parents:
            b.accumulate(_unbroadcast(g, b.data.shape))

    return _node(out, (a, b), backward)


def sub(a: Tensor, b) -> Tensor:
    b = _as_tensor(b, a)
    out = a.data - b.data

    def backward(g):
        if a.requires_grad or a._parents:
            a.accumulate(_unbroadcast(g, a.data.shape))
        if b.requires_grad or b._parents:
            b.accumulate(_unbroadcast(-g, b.data.shape))

    return _node(out, (a, b), backward)


def mul(a: Tensor, b) -> Tensor:
    b = _as_tensor(b, a)
    out = a.data * b.data

    def backward(g):
        if a.requires_grad or a._parents:
            a.accumulate(_unbroadcast(g * b.data, a.data.shape))
        if b.requires_grad or b._parents:
            b.accumulate(_unbroadcast(g * a.data, b.data.shape))

    return _node(out, (a, b), backward)


def div(a: Tensor, b) -> Tensor:
    b = _as_tensor(b, a)
    out = a.data / b.data

    def backward(g):
        if a.requires_grad or a._parents:
            a.accumulate(_unbroadcast(g / b.data, a.data.shape))
        if b.requires_grad or b._parents:
            b.accumulate(_unbroadcast(-g * a.data / (b.data * b.data), b.data.shape))

    return _node(out, (a, b), backward)


def exp(a: Tensor) -> Tensor:
    out = np.exp(a.data)

    def backward(g):
        a.accumulate(g * out)

    return _node(out, (a,), backward)


def absolute(a: Tensor) -> Tensor:
    out = np.abs(a.data)

    def backward(g):
        a.accumulate(g * np.sign(a.data))

    return _node(out, (a,), backward)


def square(a: Tensor) -> Tensor:
    out = a.data * a.data

    def backward(g):
        a.accumulate(g * (2.0 * a.data))

    return _node(out, (a,), backward)


def relu(a: Tensor) -> Tensor:
    out = np.maximum(a.data, 0)

    def backward(g):
        a.accumulate(g * (a.data > 0))

    return _node(out, (a,), backward)


def leaky_relu(a: Tensor, alpha: float = 0.2) -> Tensor:
    out = np.where(a.data > 0, a.data, alpha * a.data)

    def backward(g):
        a.accumulate(g * np.where(a.data > 0, 1.0, alpha).astype(a.data.dtype))

    return _node(out, (a,), backward)


def sigmoid(a: Tensor) -> Tensor:
    x = a.data
    out = np.empty_like(x)
    pos = x >= 0
    out[pos] = 1.0 / (1.0 + np.exp(-x[pos]))
    ex = np.exp(x[~pos])
    out[~pos] = ex / (1.0 + ex)

    def backward(g):
        a.accumulate(g * out * (1.0 - out))

    return _node(out, (a,), backward)


def maximum(a: Tensor, floor: float) -> Tensor:
    """Elementwise max with a constant; gradient flows where a > floor."""
    out = np.maximum(a.data, floor)

    def backward(g):
        a.accumulate(g * (a.data > floor))

    return _node(out, (a,), backward)


# -- reductions / shape -----------------------------------------------------


def tsum(a: Tensor, axis=None, keepdims: bool = False) -> Tensor:
    out = a.data.sum(axis=axis, keepdims=keepdims)

    def backward(g):
        if axis is None:
            a.accumulate(np.broadcast_to(g, a.data.shape))
        else:
            gg = g if keepdims else np.expand_dims(g, axis)
            a.accumulate(np.broadcast_to(gg, a.data.shape))

    return _node(out, (a,), backward)


def tmean(a: Tensor, axis=None, keepdims: bool = False) -> Tensor:
    count = a.data.size if axis is None else np.prod([a.data.shape[i] for i in np.atleast_1d(axis)])
    return mul(tsum(a, axis=axis, keepdims=keepdims), 1.0 / float(count))


def reshape(a: Tensor, shape) -> Tensor:
    out = a.data.reshape(shape)

    def backward(g):
        a.accumulate(g.reshape(a.data.shape))

    return _node(out, (a,), backward)


def transpose(a: Tensor, axes) -> Tensor:
    out = a.data.transpose(axes)
    inverse = tuple(np.argsort(axes))

    def backward(g):
        a.accumulate(g.transpose(inverse))

    return _node(out, (a,), backward)


def concat(tensors: list[Tensor], axis: int = -1) -> Tensor:
    out = np.concatenate([t.data for t in tensors], axis=axis)
    sizes = [t.data.shape[axis] for t in tensors]
    offsets = np.cumsum([0] + sizes)

    def backward(g):
        for t, lo, hi in zip(tensors, offsets[:-1], offsets[1:]):
            key = [slice(None)] * g.ndim
            key[axis] = slice(lo, hi)
            t.accumulate(g[tuple(key)])

    return _node(out, tuple(tensors), backward)


def crop(a: Tensor, key: tuple) -> Tensor:
    """Basic slicing with zero-padded gradient."""
    out = a.data[key]

    def backward(g):
        full = np.zeros_like(a.data)
        full[key] += g
        a.accumulate(full)

    return _node(out, (a,), backward)


def matmul(a: Tensor, b: Tensor) -> Tensor:
    out = a.data @ b.data

    def backward(g):
        if a.requires_grad or a._parents:
            a.accumulate(_unbroadcast(g @ np.swapaxes(b.data, -1, -2), a.data.shape))
        if b.requires_grad or b._parents:
            b.accumulate(_unbroadcast(np.swapaxes(a.data, -1, -2) @ g, b.data.shape))

    return _node(out, (a, b), backward)


def softmax(a: Tensor, axis: int = -1) -> Tensor:
    shifted = a.data - a.data.max(axis=axis, keepdims=True)
    e = np.exp(shifted)
    out = e / e.sum(axis=axis, keepdims=True)

    def backward(g):
        dot = (g * out).sum(axis=axis, keepdims=True)
        a.accumulate(out * (g - dot))

    return _node(out, (a,), backward)


# -- spatial ops (NHWC) ------------------------------------------------------


def conv2d(x: Tensor, w: Tensor, stride: int = 1, padding: int = 0) -> Tensor:
    """Cross-correlation of NHWC input with (kh, kw, cin, cout) kernel.

    The im2col matrix is materialized once and shared by the forward GEMM
    and the weight-gradient GEMM; the input gradient accumulates per-tap
    GEMM results into strided slices, so no further large copies occur.
    """
    n, h, wd, cin = x.data.shape
    kh, kw, wcin, cout = w.data.shape
    if wcin != cin:
        raise ArgumentError(f"conv2d channel mismatch: input {cin} vs kernel {wcin}")
    xp = (
        np.pad(x.data, ((0, 0), (padding, padding), (padding, padding), (0, 0)))
        if padding
        else x.data
    )
    windows = sliding_window_view(xp, (kh, kw), axis=(1, 2))
    if stride > 1:
        windows = windows[:, ::stride, ::stride]
    nb, ho, wo = windows.shape[:3]
    cols = windows.reshape(nb * ho * wo, cin * kh * kw)  # the one big copy
    w_mat = w.data.transpose(2, 0, 1, 3).reshape(cin * kh * kw, cout)
    out = (cols @ w_mat).reshape(nb, ho, wo, cout)

    def backward(g):
        g_mat = g.reshape(nb * ho * wo, cout)
        if w.requires_grad or w._parents:
            dw = (cols.T @ g_mat).reshape(cin, kh, kw, cout)
            w.accumulate(dw.transpose(1, 2, 0, 3))
        if x.requires_grad or x._parents:
            dxp = np.zeros_like(xp)
            w_taps = w.data.transpose(0, 1, 3, 2)  # (kh, kw, cout, cin)
            for a in range(kh):
                for b in range(kw):
                    contrib = (g_mat @ w_taps[a, b]).reshape(nb, ho, wo, cin)
                    dxp[
                        :,
                        a : a + ho * stride : stride,
                        b : b + wo * stride : stride,
                    ] += contrib
            if padding:
                dxp = dxp[:, padding:-padding, padding:-padding]
            x.accumulate(dxp)

    return _node(out, (x, w), backward)


def upsample_nearest(x: Tensor, factor: int) -> Tensor:
    if factor == 1:
        return x
    out = x.data.repeat(factor, axis=1).repeat(factor, axis=2)

    def backward(g):
        n, h, wd, c = x.data.shape
        x.accumulate(g.reshape(n, h, factor, wd, factor, c).sum(axis=(2, 4)))

    return _node(out, (x,), backward)


def max_pool2x2(x: Tensor) -> Tensor:
    n, h, wd, c = x.data.shape
    r = x.data.reshape(n, h // 2, 2, wd // 2, 2, c).transpose(0, 1, 3, 5, 2, 4)
    flat = r.reshape(n, h // 2, wd // 2, c, 4)
    idx = flat.argmax(axis=-1)
    out = np.take_along_axis(flat, idx[..., None], axis=-1)[..., 0]

    def backward(g):
        dflat = np.zeros_like(flat)
        np.put_along_axis(dflat, idx[..., None], g[..., None], axis=-1)
        dx = dflat.reshape(n, h // 2, wd // 2, c, 2, 2).transpose(0, 1, 4, 2, 5, 3)
        x.accumulate(dx.reshape(n, h, wd, c))

    return _node(out, (x,), backward)
