"""A small dynamic-tape reverse-mode autodiff over numpy arrays.

Only the operations the canonicalization model needs are provided.  Every
op records its parents and a closure that pushes the output gradient back;
:meth:`Tensor.backward` walks the graph in reverse topological order.
Gradients accumulate across backward calls until :meth:`Tensor.zero_grad`.
"""
from __future__ import annotations

from typing import Callable, Sequence

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view

from .errors import GradCheckFailure


def _unbroadcast(grad: np.ndarray, shape: tuple) -> np.ndarray:
    while grad.ndim > len(shape):
        grad = grad.sum(axis=0)
    for axis, size in enumerate(shape):
        if size == 1 and grad.shape[axis] != 1:
            grad = grad.sum(axis=axis, keepdims=True)
    return grad


class Tensor:
    __array_priority__ = 100  # make numpy defer to our reflected operators

    def __init__(self, data, requires_grad: bool = False, _parents: Sequence["Tensor"] = (),
                 _backward: Callable[[np.ndarray], None] | None = None, name: str | None = None):
        arr = np.asarray(data)
        if arr.dtype.kind != "f":
            arr = arr.astype(np.float64)
        self.data = arr
        self.grad: np.ndarray | None = None
        self.requires_grad = requires_grad or any(p.requires_grad for p in _parents)
        self._parents = tuple(_parents) if self.requires_grad else ()
        self._backward = _backward if self.requires_grad else None
        self.name = name

    # ---- bookkeeping -------------------------------------------------
    @property
    def shape(self):
        return self.data.shape

    @property
    def ndim(self):
        return self.data.ndim

    @property
    def dtype(self):
        return self.data.dtype

    def __repr__(self):
        return f"Tensor(shape={self.shape}, requires_grad={self.requires_grad})"

    def __len__(self):
        return len(self.data)

    def numpy(self) -> np.ndarray:
        return self.data

    def item(self) -> float:
        return float(self.data)

    def detach(self) -> "Tensor":
        return Tensor(self.data)

    def zero_grad(self):
        self.grad = None

    def _accumulate(self, g: np.ndarray):
        if not self.requires_grad:
            return
        g = np.asarray(g, dtype=self.data.dtype)
        if self.grad is None:
            self.grad = g.copy()
        else:
            self.grad = self.grad + g

    def backward(self, grad=None):
        if grad is None:
            if self.data.size != 1:
                raise ValueError("backward without a seed needs a scalar output")
            grad = np.ones_like(self.data)
        order: list[Tensor] = []
        seen: set[int] = set()
        stack = [(self, False)]
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
                if id(p) not in seen:
                    stack.append((p, False))
        # interior gradients live in a side table so only leaves keep .grad
        grads = {id(self): np.asarray(grad, dtype=self.data.dtype)}
        for node in reversed(order):
            g = grads.pop(id(node), None)
            if g is None:
                continue
            if node._backward is None:
                node._accumulate(g)
                continue
            for parent, pg in node._backward(g):
                if pg is None or not parent.requires_grad:
                    continue
                key = id(parent)
                grads[key] = grads[key] + pg if key in grads else pg

    # ---- elementwise arithmetic -------------------------------------
    def __add__(self, other):
        other = as_tensor(other, self.dtype)
        a, b = self, other
        return Tensor(a.data + b.data, _parents=(a, b), _backward=lambda g: (
            (a, _unbroadcast(g, a.shape)), (b, _unbroadcast(g, b.shape))))

    __radd__ = __add__

    def __neg__(self):
        a = self
        return Tensor(-a.data, _parents=(a,), _backward=lambda g: ((a, -g),))

    def __sub__(self, other):
        return self + (-as_tensor(other, self.dtype))

    def __rsub__(self, other):
        return as_tensor(other, self.dtype) + (-self)

    def __mul__(self, other):
        other = as_tensor(other, self.dtype)
        a, b = self, other
        return Tensor(a.data * b.data, _parents=(a, b), _backward=lambda g: (
            (a, _unbroadcast(g * b.data, a.shape)), (b, _unbroadcast(g * a.data, b.shape))))

    __rmul__ = __mul__

    def __truediv__(self, other):
        other = as_tensor(other, self.dtype)
        a, b = self, other
        out = a.data / b.data
        return Tensor(out, _parents=(a, b), _backward=lambda g: (
            (a, _unbroadcast(g / b.data, a.shape)),
            (b, _unbroadcast(-g * out / b.data, b.shape))))

    def __rtruediv__(self, other):
        return as_tensor(other, self.dtype) / self

    def __pow__(self, p: float):
        if isinstance(p, Tensor):
            raise TypeError("only constant exponents are supported")
        a = self
        return Tensor(a.data ** p, _parents=(a,),
                      _backward=lambda g: ((a, g * p * a.data ** (p - 1)),))

    def __matmul__(self, other):
        other = as_tensor(other, self.dtype)
        a, b = self, other

        def back(g):
            ga = g @ np.swapaxes(b.data, -1, -2) if b.ndim > 1 else np.multiply.outer(g, b.data)
            gb = np.swapaxes(a.data, -1, -2) @ g if a.ndim > 1 else np.multiply.outer(a.data, g)
            return (a, _unbroadcast(ga, a.shape)), (b, _unbroadcast(gb, b.shape))

        return Tensor(a.data @ b.data, _parents=(a, b), _backward=back)

    def __rmatmul__(self, other):
        return as_tensor(other, self.dtype) @ self

    # ---- unary functions --------------------------------------------
    def _unary(self, out, dfn):
        a = self
        return Tensor(out, _parents=(a,), _backward=lambda g: ((a, g * dfn(out)),))

    def exp(self):
        return self._unary(np.exp(self.data), lambda out: out)

    def log(self):
        x = self.data
        return self._unary(np.log(x), lambda out: 1.0 / x)

    def sqrt(self):
        return self._unary(np.sqrt(self.data), lambda out: 0.5 / out)

    def sin(self):
        x = self.data
        return self._unary(np.sin(x), lambda out: np.cos(x))

    def cos(self):
        x = self.data
        return self._unary(np.cos(x), lambda out: -np.sin(x))

    def tanh(self):
        return self._unary(np.tanh(self.data), lambda out: 1.0 - out * out)

    def sigmoid(self):
        out = np.empty_like(self.data)
        pos = self.data >= 0
        out[pos] = 1.0 / (1.0 + np.exp(-self.data[pos]))
        ex = np.exp(self.data[~pos])
        out[~pos] = ex / (1.0 + ex)
        return self._unary(out, lambda o: o * (1.0 - o))

    def leaky_relu(self, slope: float = 0.3):
        x = self.data
        return self._unary(np.where(x >= 0, x, slope * x),
                           lambda out: np.where(x >= 0, 1.0, slope).astype(x.dtype))

    # ---- reductions and shape ops -----------------------------------
    def sum(self, axis=None, keepdims: bool = False):
        a = self

        def back(g):
            if axis is not None and not keepdims:
                g = np.expand_dims(g, axis)
            return ((a, np.broadcast_to(g, a.shape)),)

        return Tensor(a.data.sum(axis=axis, keepdims=keepdims), _parents=(a,), _backward=back)

    def mean(self, axis=None, keepdims: bool = False):
        n = self.data.size if axis is None else np.prod([self.shape[i] for i in np.atleast_1d(axis)])
        return self.sum(axis=axis, keepdims=keepdims) * (1.0 / n)

    def norm(self, axis=-1, keepdims: bool = False):
        """Euclidean norm; the gradient at the origin is taken as 0."""
        a = self
        out = np.sqrt((a.data * a.data).sum(axis=axis, keepdims=True))

        def back(g):
            if not keepdims:
                g = np.expand_dims(g, axis)
            safe = np.where(out > 0, out, 1.0)
            return ((a, np.where(out > 0, g * a.data / safe, 0.0)),)

        return Tensor(out if keepdims else np.squeeze(out, axis=axis), _parents=(a,), _backward=back)

    def reshape(self, *shape):
        a = self
        if len(shape) == 1 and isinstance(shape[0], (tuple, list)):
            shape = tuple(shape[0])
        return Tensor(a.data.reshape(shape), _parents=(a,),
                      _backward=lambda g: ((a, g.reshape(a.shape)),))

    def transpose(self, *axes):
        a = self
        if len(axes) == 1 and isinstance(axes[0], (tuple, list)):
            axes = tuple(axes[0])
        axes = axes or tuple(reversed(range(a.ndim)))
        inv = np.argsort(axes)
        return Tensor(a.data.transpose(axes), _parents=(a,),
                      _backward=lambda g: ((a, g.transpose(inv)),))

    def __getitem__(self, idx):
        a = self

        def back(g):
            full = np.zeros_like(a.data)
            np.add.at(full, idx, g)
            return ((a, full),)

        return Tensor(a.data[idx], _parents=(a,), _backward=back)

    def max_detached(self, axis=-1, keepdims=True) -> np.ndarray:
        return self.data.max(axis=axis, keepdims=keepdims)


def as_tensor(x, dtype=None) -> Tensor:
    if isinstance(x, Tensor):
        return x
    arr = np.asarray(x, dtype=dtype if dtype is not None else None)
    return Tensor(arr)


def parameter(data) -> Tensor:
    return Tensor(np.array(data, copy=True), requires_grad=True)


def concat(tensors: Sequence[Tensor], axis: int = 0) -> Tensor:
    ts = [as_tensor(t) for t in tensors]
    sizes = [t.shape[axis] for t in ts]
    splits = np.cumsum(sizes)[:-1]

    def back(g):
        return tuple(zip(ts, np.split(g, splits, axis=axis)))

    return Tensor(np.concatenate([t.data for t in ts], axis=axis), _parents=ts, _backward=back)


def stack(tensors: Sequence[Tensor], axis: int = 0) -> Tensor:
    ts = [as_tensor(t) for t in tensors]

    def back(g):
        return tuple((t, np.take(g, i, axis=axis)) for i, t in enumerate(ts))

    return Tensor(np.stack([t.data for t in ts], axis=axis), _parents=ts, _backward=back)


def softmax(x: Tensor, axis: int = -1) -> Tensor:
    shifted = x - x.max_detached(axis=axis, keepdims=True)
    e = shifted.exp()
    return e / e.sum(axis=axis, keepdims=True)


def conv2d(x: Tensor, w: Tensor, b: Tensor | None = None, stride=(1, 1)) -> Tensor:
    """Valid 2D cross-correlation.

    x: (N, C_in, H, W); w: (C_out, C_in, KH, KW); b: (C_out,).
    Returns (N, C_out, H_out, W_out).
    """
    x, w = as_tensor(x), as_tensor(w)
    sh, sw = stride
    n, cin, h, wd = x.shape
    cout, cin2, kh, kw = w.shape
    if cin != cin2:
        raise ValueError(f"conv2d channel mismatch {cin} vs {cin2}")
    hout = (h - kh) // sh + 1
    wout = (wd - kw) // sw + 1
    if hout < 1 or wout < 1:
        raise ValueError("conv2d kernel larger than input")
    win = sliding_window_view(x.data, (kh, kw), axis=(2, 3))[:, :, ::sh, ::sw][:, :, :hout, :wout]
    # win: (N, C_in, H_out, W_out, KH, KW) -> cols (N, H_out, W_out, C_in*KH*KW)
    cols = win.transpose(0, 2, 3, 1, 4, 5).reshape(n, hout, wout, cin * kh * kw)
    wmat = w.data.reshape(cout, -1)
    out = cols @ wmat.T
    if b is not None:
        b = as_tensor(b)
        out = out + b.data
    out = out.transpose(0, 3, 1, 2)
    parents = (x, w) if b is None else (x, w, b)

    def back(g):
        g = g.transpose(0, 2, 3, 1)  # (N, H_out, W_out, C_out)
        gw = (g.reshape(-1, cout).T @ cols.reshape(-1, cin * kh * kw)).reshape(w.shape)
        res = [(w, gw)]
        if b is not None:
            res.append((b, g.reshape(-1, cout).sum(axis=0)))
        if x.requires_grad:
            gcols = (g @ wmat).reshape(n, hout, wout, cin, kh, kw)
            gx = np.zeros_like(x.data)
            for i in range(kh):
                for j in range(kw):
                    gx[:, :, i:i + sh * hout:sh, j:j + sw * wout:sw] += gcols[:, :, :, :, i, j].transpose(0, 3, 1, 2)
            res.append((x, gx))
        return res

    return Tensor(out, _parents=parents, _backward=back)


def conv1d(x: Tensor, w: Tensor, b: Tensor | None = None, stride: int = 1) -> Tensor:
    """Valid 1D cross-correlation. x: (N, C_in, L); w: (C_out, C_in, K)."""
    x, w = as_tensor(x), as_tensor(w)
    out = conv2d(x.reshape(x.shape[0], x.shape[1], 1, x.shape[2]),
                 w.reshape(w.shape[0], w.shape[1], 1, w.shape[2]), b, stride=(1, stride))
    return out.reshape(out.shape[0], out.shape[1], out.shape[3])


def grad_check(fn: Callable[..., Tensor], inputs: Sequence[np.ndarray], tol: float = 1e-4,
               step: float = 1e-5, raise_on_fail: bool = True) -> dict:
    """Compare backward gradients of scalar ``fn(*inputs)`` with central differences.

    Works in float64.  The relative error per input is
    ``max|g - g_fd| / max(max|g_fd|, max|g|, 1e-8)``.
    """
    arrays = [np.array(a, dtype=np.float64, copy=True) for a in inputs]
    tensors = [Tensor(a, requires_grad=True) for a in arrays]
    out = fn(*tensors)
    if out.data.size != 1:
        raise ValueError("grad_check needs a scalar-valued function")
    out.backward()
    report = {"max_rel_error": 0.0, "per_input": []}
    for a, t in zip(arrays, tensors):
        analytic = t.grad if t.grad is not None else np.zeros_like(a)
        numeric = np.zeros_like(a)
        flat = a.reshape(-1)
        for i in range(flat.size):
            orig = flat[i]
            flat[i] = orig + step
            fp = fn(*[Tensor(x) for x in arrays]).item()
            flat[i] = orig - step
            fm = fn(*[Tensor(x) for x in arrays]).item()
            flat[i] = orig
            numeric.reshape(-1)[i] = (fp - fm) / (2 * step)
        scale = max(np.abs(numeric).max(initial=0.0), np.abs(analytic).max(initial=0.0), 1e-8)
        rel = float(np.abs(analytic - numeric).max(initial=0.0) / scale)
        report["per_input"].append(rel)
        report["max_rel_error"] = max(report["max_rel_error"], rel)
    if raise_on_fail and report["max_rel_error"] > tol:
        raise GradCheckFailure(f"relative gradient error {report['max_rel_error']:.3g} > {tol}")
    return report
