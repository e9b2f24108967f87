"""Reverse-mode automatic differentiation on dense float32 arrays.

A Tape records primitive operations in creation order; since every node is
created after its inputs, iterating the tape in reverse is a valid reverse
topological order for the backward pass. Only the small set of primitives
needed by the rendering pipeline is implemented.
"""

from __future__ import annotations

import numpy as np


class UsageError(Exception):
    """Raised when the autodiff API is misused (non-scalar loss, shape bugs)."""


_TAPE_STACK: list["Tape"] = []


def _active_tape() -> "Tape | None":
    return _TAPE_STACK[-1] if _TAPE_STACK else None


class Tape:
    """Ordered record of primitive ops; context manager activates recording."""

    def __init__(self):
        self.nodes: list[Tensor] = []

    def __enter__(self) -> "Tape":
        _TAPE_STACK.append(self)
        return self

    def __exit__(self, *exc):
        _TAPE_STACK.pop()
        self.release()

    def backward(self, loss: "Tensor", release: bool = False) -> None:
        """Accumulate d(loss)/d(leaf) into .grad of every reachable tensor.

        With release=True each intermediate's grad and closure are dropped as
        soon as its backward runs, so the graph frees by refcount during the
        sweep instead of lingering until the tape is collected. Only safe when
        no second backward over the same graph follows.
        """
        if loss.data.size != 1:
            raise UsageError(f"backward expects a scalar loss, got shape {loss.data.shape}")
        loss.grad = np.ones_like(loss.data)
        for node in reversed(self.nodes):
            if node.grad is not None and node._backward is not None:
                node._backward(node.grad)
            if release:
                node.grad = None
                node._backward = None
        if release:
            self.nodes.clear()

    def release(self) -> None:
        """Drop intermediate grads and backward closures; leaf grads survive."""
        for node in self.nodes:
            node.grad = None
            node._backward = None
        self.nodes.clear()

    def zero_grad(self) -> None:
        for node in self.nodes:
            node.grad = None


def _as_array(value) -> np.ndarray:
    if isinstance(value, np.ndarray):
        return value.astype(np.float32, copy=False)
    return np.asarray(value, dtype=np.float32)


class Tensor:
    __slots__ = ("data", "grad", "requires_grad", "_backward", "name")

    def __init__(self, data, requires_grad: bool = False, name: str = ""):
        self.data = _as_array(data)
        self.grad: np.ndarray | None = None
        self.requires_grad = requires_grad
        self._backward = None
        self.name = name

    @property
    def shape(self):
        return self.data.shape

    def __repr__(self):
        return f"Tensor(shape={self.data.shape}, requires_grad={self.requires_grad})"

    def accumulate(self, grad: np.ndarray) -> None:
        if self.grad is None:
            self.grad = grad.astype(np.float32, copy=True)
        else:
            self.grad = self.grad + grad

    def detach(self) -> "Tensor":
        return Tensor(self.data)

    def item(self) -> float:
        return float(self.data.reshape(()))

    # arithmetic sugar
    def __add__(self, other):
        return add(self, other)

    __radd__ = __add__

    def __mul__(self, other):
        return mul(self, other)

    __rmul__ = __mul__

    def __sub__(self, other):
        return sub(self, other)

    def __rsub__(self, other):
        return sub(other, self)

    def __truediv__(self, other):
        return div(self, other)

    def __rtruediv__(self, other):
        return div(other, self)

    def __neg__(self):
        return mul(self, -1.0)

    def __matmul__(self, other):
        return matmul(self, other)

    def __pow__(self, p):
        return power(self, p)

    def __getitem__(self, idx):
        return getitem(self, idx)

    def sum(self, axis=None, keepdims=False):
        return tsum(self, axis=axis, keepdims=keepdims)

    def reshape(self, *shape):
        return reshape(self, shape if len(shape) > 1 or isinstance(shape[0], int) else shape[0])


def ensure_tensor(value) -> Tensor:
    return value if isinstance(value, Tensor) else Tensor(value)


def _record(out: Tensor, parents: tuple[Tensor, ...], backward_fn) -> Tensor:
    """Attach a backward closure when a tape is active and grads are needed."""
    tape = _active_tape()
    if tape is not None and any(p.requires_grad for p in parents):
        out.requires_grad = True
        out._backward = backward_fn
        tape.nodes.append(out)
    return out


def _unbroadcast(grad: np.ndarray, shape: tuple[int, ...]) -> np.ndarray:
    """Reduce a broadcasted gradient back to the original operand shape."""
    if grad.shape == shape:
        return grad
    extra = grad.ndim - len(shape)
    if extra > 0:
        grad = grad.sum(axis=tuple(range(extra)))
    axes = tuple(i for i, s in enumerate(shape) if s == 1 and grad.shape[i] != 1)
    if axes:
        grad = grad.sum(axis=axes, keepdims=True)
    return grad.astype(np.float32, copy=False)


def add(a, b) -> Tensor:
    a, b = ensure_tensor(a), ensure_tensor(b)
    out = Tensor(a.data + b.data)

    def backward(g):
        if a.requires_grad:
            a.accumulate(_unbroadcast(g, a.data.shape))
        if b.requires_grad:
            b.accumulate(_unbroadcast(g, b.data.shape))

    return _record(out, (a, b), backward)


def sub(a, b) -> Tensor:
    a, b = ensure_tensor(a), ensure_tensor(b)
    out = Tensor(a.data - b.data)

    def backward(g):
        if a.requires_grad:
            a.accumulate(_unbroadcast(g, a.data.shape))
        if b.requires_grad:
            b.accumulate(_unbroadcast(-g, b.data.shape))

    return _record(out, (a, b), backward)


def mul(a, b) -> Tensor:
    a, b = ensure_tensor(a), ensure_tensor(b)
    out = Tensor(a.data * b.data)

    def backward(g):
        if a.requires_grad:
            a.accumulate(_unbroadcast(g * b.data, a.data.shape))
        if b.requires_grad:
            b.accumulate(_unbroadcast(g * a.data, b.data.shape))

    return _record(out, (a, b), backward)


def div(a, b) -> Tensor:
    a, b = ensure_tensor(a), ensure_tensor(b)
    out = Tensor(a.data / b.data)

    def backward(g):
        if a.requires_grad:
            a.accumulate(_unbroadcast(g / b.data, a.data.shape))
        if b.requires_grad:
            b.accumulate(_unbroadcast(-g * a.data / (b.data * b.data), b.data.shape))

    return _record(out, (a, b), backward)


def power(a, p: float) -> Tensor:
    a = ensure_tensor(a)
    p = float(p)
    out = Tensor(a.data ** np.float32(p))

    def backward(g):
        if a.requires_grad:
            a.accumulate(g * p * a.data ** np.float32(p - 1.0))

    return _record(out, (a,), backward)


def matmul(a, b) -> Tensor:
    a, b = ensure_tensor(a), ensure_tensor(b)
    out = Tensor(a.data @ b.data)

    def backward(g):
        if a.requires_grad:
            a.accumulate(_unbroadcast(g @ np.swapaxes(b.data, -1, -2), a.data.shape))
        if b.requires_grad:
            b.accumulate(_unbroadcast(np.swapaxes(a.data, -1, -2) @ g, b.data.shape))

    return _record(out, (a, b), backward)


def exp(a) -> Tensor:
    a = ensure_tensor(a)
    out = Tensor(np.exp(a.data))

    def backward(g):
        if not a.requires_grad:
            return
        a.accumulate(g * out.data)

    return _record(out, (a,), backward)


def log(a) -> Tensor:
    a = ensure_tensor(a)
    out = Tensor(np.log(a.data))

    def backward(g):
        if not a.requires_grad:
            return
        a.accumulate(g / a.data)

    return _record(out, (a,), backward)


def log1p(a) -> Tensor:
    a = ensure_tensor(a)
    out = Tensor(np.log1p(a.data))

    def backward(g):
        if not a.requires_grad:
            return
        a.accumulate(g / (1.0 + a.data))

    return _record(out, (a,), backward)


def sin(a) -> Tensor:
    a = ensure_tensor(a)
    out = Tensor(np.sin(a.data))

    def backward(g):
        if not a.requires_grad:
            return
        a.accumulate(g * np.cos(a.data))

    return _record(out, (a,), backward)


def cos(a) -> Tensor:
    a = ensure_tensor(a)
    out = Tensor(np.cos(a.data))

    def backward(g):
        if not a.requires_grad:
            return
        a.accumulate(-g * np.sin(a.data))

    return _record(out, (a,), backward)


def sqrt(a) -> Tensor:
    a = ensure_tensor(a)
    out = Tensor(np.sqrt(a.data))

    def backward(g):
        if not a.requires_grad:
            return
        a.accumulate(g * 0.5 / np.maximum(out.data, 1e-12))

    return _record(out, (a,), backward)


def absolute(a) -> Tensor:
    a = ensure_tensor(a)
    out = Tensor(np.abs(a.data))

    def backward(g):
        if not a.requires_grad:
            return
        a.accumulate(g * np.sign(a.data))

    return _record(out, (a,), backward)


def relu(a) -> Tensor:
    a = ensure_tensor(a)
    out = Tensor(np.maximum(a.data, 0.0))

    def backward(g):
        if not a.requires_grad:
            return
        a.accumulate(g * (a.data > 0.0))

    return _record(out, (a,), backward)


def sigmoid(a) -> Tensor:
    a = ensure_tensor(a)
    out = Tensor(1.0 / (1.0 + np.exp(-a.data)))

    def backward(g):
        if not a.requires_grad:
            return
        a.accumulate(g * out.data * (1.0 - out.data))

    return _record(out, (a,), backward)


def softplus(a) -> Tensor:
    a = ensure_tensor(a)
    # numerically stable: log(1+exp(x)) = max(x,0) + log1p(exp(-|x|))
    out = Tensor(np.maximum(a.data, 0.0) + np.log1p(np.exp(-np.abs(a.data))))

    def backward(g):
        if not a.requires_grad:
            return
        a.accumulate(g / (1.0 + np.exp(-a.data)))

    return _record(out, (a,), backward)


def maximum(a, b) -> Tensor:
    a, b = ensure_tensor(a), ensure_tensor(b)
    out = Tensor(np.maximum(a.data, b.data))

    def backward(g):
        mask = a.data >= b.data
        if a.requires_grad:
            a.accumulate(_unbroadcast(g * mask, a.data.shape))
        if b.requires_grad:
            b.accumulate(_unbroadcast(g * ~mask, b.data.shape))

    return _record(out, (a, b), backward)


def clip(a, lo: float, hi: float) -> Tensor:
    a = ensure_tensor(a)
    out = Tensor(np.clip(a.data, lo, hi))

    def backward(g):
        if not a.requires_grad:
            return
        a.accumulate(g * ((a.data >= lo) & (a.data <= hi)))

    return _record(out, (a,), backward)


def tsum(a, axis=None, keepdims=False) -> Tensor:
    a = ensure_tensor(a)
    # accumulate in float64 to reduce summation error, store float32
    out = Tensor(a.data.sum(axis=axis, keepdims=keepdims, dtype=np.float64).astype(np.float32))

    def backward(g):
        if not a.requires_grad:
            return
        if axis is None:
            grad = np.broadcast_to(g.reshape(()), a.data.shape)
        else:
            g2 = g if keepdims else np.expand_dims(g, axis)
            grad = np.broadcast_to(g2, a.data.shape)
        a.accumulate(np.ascontiguousarray(grad))

    return _record(out, (a,), backward)


def mean(a, axis=None, keepdims=False) -> Tensor:
    a = ensure_tensor(a)
    n = a.data.size if axis is None else a.data.shape[axis]
    return mul(tsum(a, axis=axis, keepdims=keepdims), 1.0 / n)


def cumsum(a, axis: int) -> Tensor:
    a = ensure_tensor(a)
    out = Tensor(np.cumsum(a.data, axis=axis))

    def backward(g):
        if not a.requires_grad:
            return
        rev = np.flip(np.cumsum(np.flip(g, axis=axis), axis=axis), axis=axis)
        a.accumulate(rev)

    return _record(out, (a,), backward)


def concatenate(tensors, axis: int = -1) -> Tensor:
    tensors = [ensure_tensor(t) for t in tensors]
    out = Tensor(np.concatenate([t.data for t in tensors], axis=axis))
    sizes = [t.data.shape[axis] for t in tensors]
    offsets = np.cumsum([0] + sizes)

    def backward(g):
        for t, lo, hi in zip(tensors, offsets[:-1], offsets[1:]):
            if t.requires_grad:
                idx = [slice(None)] * g.ndim
                idx[axis] = slice(lo, hi)
                t.accumulate(g[tuple(idx)])

    return _record(out, tuple(tensors), backward)


def reshape(a, shape) -> Tensor:
    a = ensure_tensor(a)
    out = Tensor(a.data.reshape(shape))

    def backward(g):
        if not a.requires_grad:
            return
        a.accumulate(g.reshape(a.data.shape))

    return _record(out, (a,), backward)


def getitem(a, idx) -> Tensor:
    a = ensure_tensor(a)
    out = Tensor(a.data[idx])

    def backward(g):
        if not a.requires_grad:
            return
        grad = np.zeros_like(a.data)
        np.add.at(grad, idx, g)
        a.accumulate(grad)

    return _record(out, (a,), backward)


def take_rows(a, indices: np.ndarray) -> Tensor:
    """Gather rows along axis 0; backward scatter-adds into the source."""
    a = ensure_tensor(a)
    indices = np.asarray(indices)
    out = Tensor(a.data[indices])

    def backward(g):
        if not a.requires_grad:
            return
        grad = np.zeros_like(a.data)
        flat_idx = indices.reshape(-1)
        np.add.at(grad, flat_idx, g.reshape(-1, *a.data.shape[1:]))
        a.accumulate(grad)

    return _record(out, (a,), backward)


def scatter_rows(n_rows: int, indices: np.ndarray, values) -> Tensor:
    """Place rows of `values` at unique `indices` of a zero array of n_rows rows."""
    values = ensure_tensor(values)
    indices = np.asarray(indices)
    out_data = np.zeros((n_rows,) + values.data.shape[1:], np.float32)
    out_data[indices] = values.data
    out = Tensor(out_data)

    def backward(g):
        if values.requires_grad:
            values.accumulate(g[indices])

    return _record(out, (values,), backward)


def where(mask: np.ndarray, a, b) -> Tensor:
    """Select by a constant boolean mask (no gradient flows through mask)."""
    a, b = ensure_tensor(a), ensure_tensor(b)
    out = Tensor(np.where(mask, a.data, b.data))

    def backward(g):
        if a.requires_grad:
            a.accumulate(_unbroadcast(g * mask, a.data.shape))
        if b.requires_grad:
            b.accumulate(_unbroadcast(g * ~mask, b.data.shape))

    return _record(out, (a, b), backward)
