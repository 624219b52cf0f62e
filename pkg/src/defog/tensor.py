"""Dense float64 tensors with reverse-mode automatic differentiation.

Every network and loss in the package runs on this engine. Graph nodes hold
a `_backward` closure plus references to their parents; `backward()` walks
the graph in reverse topological order and accumulates gradients into every
tensor that requires them. Nodes whose parents carry no gradient are created
as constants, so frozen subnetworks cost no graph memory.
"""

from __future__ import annotations

import numpy as np

from . import backend


class Tensor:
    __slots__ = ("data", "grad", "requires_grad", "_backward", "_prev")

    def __init__(self, data, requires_grad: bool = False):
        self.data = np.asarray(data, dtype=np.float64)
        self.grad = None
        self.requires_grad = bool(requires_grad)
        self._backward = None
        self._prev = ()

    # -- construction helpers -------------------------------------------------

    @staticmethod
    def _result(data, parents, backward):
        """Graph node if any parent needs grad, plain constant otherwise."""
        out = Tensor(data)
        parents = tuple(p for p in parents if p.requires_grad or p._prev)
        if parents:
            out.requires_grad = True
            out._prev = parents
            out._backward = backward
        return out

    def _accum(self, g):
        if self.grad is None:
            self.grad = np.zeros_like(self.data)
        self.grad += g

    @property
    def shape(self):
        return self.data.shape

    @property
    def size(self):
        return self.data.size

    def item(self) -> float:
        return float(self.data)

    def detach(self) -> "Tensor":
        return Tensor(self.data)

    def zero_grad(self):
        self.grad = None

    def __repr__(self):
        return f"Tensor(shape={self.data.shape}, requires_grad={self.requires_grad})"

    # -- backward -------------------------------------------------------------

    def backward(self, free_graph: bool = True):
        """Populate grads of all ancestors; loss must be scalar."""
        if self.data.size != 1:
            raise ValueError(f"backward: loss must be scalar, got shape {self.data.shape}")
        topo: list[Tensor] = []
        visited = set()
        stack = [(self, False)]
        while stack:
            node, expanded = stack.pop()
            if expanded:
                topo.append(node)
                continue
            if id(node) in visited:
                continue
            visited.add(id(node))
            stack.append((node, True))
            for p in node._prev:
                if id(p) not in visited:
                    stack.append((p, False))
        self.grad = np.ones_like(self.data)
        for node in reversed(topo):
            if node._backward is not None:
                node._backward(node.grad)
        if free_graph:
            for node in topo:
                if node is not self and node._prev:
                    node.grad = None
                node._prev = ()
                node._backward = None

    # -- elementwise arithmetic (broadcasting) ---------------------------------

    def __add__(self, other):
        other = as_tensor(other)
        out_data = self.data + other.data
        a, b = self, other

        def bw(g):
            if a.requires_grad or a._prev:
                a._accum(_unbroadcast(g, a.data.shape))
            if b.requires_grad or b._prev:
                b._accum(_unbroadcast(g, b.data.shape))
        return Tensor._result(out_data, (a, b), bw)

    def __mul__(self, other):
        other = as_tensor(other)
        a, b = self, other

        def bw(g):
            if a.requires_grad or a._prev:
                a._accum(_unbroadcast(g * b.data, a.data.shape))
            if b.requires_grad or b._prev:
                b._accum(_unbroadcast(g * a.data, b.data.shape))
        return Tensor._result(a.data * b.data, (a, b), bw)

    def __sub__(self, other):
        other = as_tensor(other)
        a, b = self, other

        def bw(g):
            if a.requires_grad or a._prev:
                a._accum(_unbroadcast(g, a.data.shape))
            if b.requires_grad or b._prev:
                b._accum(_unbroadcast(-g, b.data.shape))
        return Tensor._result(a.data - b.data, (a, b), bw)

    def __truediv__(self, other):
        other = as_tensor(other)
        a, b = self, other
        out_data = a.data / b.data

        def bw(g):
            if a.requires_grad or a._prev:
                a._accum(_unbroadcast(g / b.data, a.data.shape))
            if b.requires_grad or b._prev:
                b._accum(_unbroadcast(-g * out_data / b.data, b.data.shape))
        return Tensor._result(out_data, (a, b), bw)

    def __neg__(self):
        a = self

        def bw(g):
            a._accum(-g)
        return Tensor._result(-a.data, (a,), bw)

    def __radd__(self, other):
        return as_tensor(other) + self

    def __rsub__(self, other):
        return as_tensor(other) - self

    def __rmul__(self, other):
        return as_tensor(other) * self

    def __rtruediv__(self, other):
        return as_tensor(other) / self

    # -- matmul ----------------------------------------------------------------

    def __matmul__(self, other):
        other = as_tensor(other)
        a, b = self, other
        if a.data.ndim != 2 or b.data.ndim != 2:
            raise ValueError(f"matmul: expects 2-d operands, got {a.data.shape} @ {b.data.shape}")
        if a.data.shape[1] != b.data.shape[0]:
            raise ValueError(f"matmul: shape mismatch {a.data.shape} @ {b.data.shape}")

        def bw(g):
            if a.requires_grad or a._prev:
                a._accum(g @ b.data.T)
            if b.requires_grad or b._prev:
                b._accum(a.data.T @ g)
        return Tensor._result(a.data @ b.data, (a, b), bw)

    # -- unary nonlinearities ----------------------------------------------------

    def exp(self):
        a = self
        out_data = np.exp(a.data)

        def bw(g):
            a._accum(g * out_data)
        return Tensor._result(out_data, (a,), bw)

    def log(self):
        a = self

        def bw(g):
            a._accum(g / a.data)
        return Tensor._result(np.log(a.data), (a,), bw)

    def sqrt(self):
        a = self
        out_data = np.sqrt(a.data)

        def bw(g):
            a._accum(g * 0.5 / out_data)
        return Tensor._result(out_data, (a,), bw)

    def abs(self):
        a = self

        def bw(g):
            a._accum(g * np.sign(a.data))
        return Tensor._result(np.abs(a.data), (a,), bw)

    def sigmoid(self):
        a = self
        x = a.data
        out_data = np.where(x >= 0, 1.0 / (1.0 + np.exp(-np.abs(x))),
                            np.exp(-np.abs(x)) / (1.0 + np.exp(-np.abs(x))))

        def bw(g):
            a._accum(g * out_data * (1.0 - out_data))
        return Tensor._result(out_data, (a,), bw)

    def softplus(self):
        a = self
        out_data = np.logaddexp(0.0, a.data)

        def bw(g):
            x = a.data
            sig = np.where(x >= 0, 1.0 / (1.0 + np.exp(-np.abs(x))),
                           np.exp(-np.abs(x)) / (1.0 + np.exp(-np.abs(x))))
            a._accum(g * sig)
        return Tensor._result(out_data, (a,), bw)

    def leaky_relu(self, slope: float = 0.2):
        a = self
        mask = a.data > 0
        scale = np.where(mask, 1.0, slope)

        def bw(g):
            a._accum(g * scale)
        return Tensor._result(a.data * scale, (a,), bw)

    def clamp_min(self, lo: float):
        a = self
        mask = a.data > lo

        def bw(g):
            a._accum(g * mask)
        return Tensor._result(np.maximum(a.data, lo), (a,), bw)

    # -- reductions ---------------------------------------------------------------

    def sum(self, axis=None, keepdims: bool = False):
        a = self
        out_data = a.data.sum(axis=axis, keepdims=keepdims)

        def bw(g):
            gg = np.asarray(g)
            if axis is not None and not keepdims:
                gg = np.expand_dims(gg, axis)
            a._accum(np.broadcast_to(gg, a.data.shape).copy())
        return Tensor._result(out_data, (a,), bw)

    def mean(self, axis=None, keepdims: bool = False):
        a = self
        out_data = a.data.mean(axis=axis, keepdims=keepdims)
        count = a.data.size / max(out_data.size, 1)

        def bw(g):
            gg = np.asarray(g) / count
            if axis is not None and not keepdims:
                gg = np.expand_dims(gg, axis)
            a._accum(np.broadcast_to(gg, a.data.shape).copy())
        return Tensor._result(out_data, (a,), bw)

    # -- shape ops ------------------------------------------------------------------

    def reshape(self, *shape):
        if len(shape) == 1 and isinstance(shape[0], (tuple, list)):
            shape = tuple(shape[0])
        a = self
        src_shape = a.data.shape

        def bw(g):
            a._accum(g.reshape(src_shape))
        return Tensor._result(a.data.reshape(shape), (a,), bw)

    def transpose(self, axes):
        a = self
        inv = np.argsort(axes)

        def bw(g):
            a._accum(g.transpose(inv))
        return Tensor._result(np.ascontiguousarray(a.data.transpose(axes)), (a,), bw)

    def __getitem__(self, idx):
        a = self

        def bw(g):
            full = np.zeros_like(a.data)
            np.add.at(full, idx, g)
            a._accum(full)
        return Tensor._result(a.data[idx].copy(), (a,), bw)

    def pad2d(self, pad: int):
        """Zero padding on the last two axes."""
        a = self
        if pad == 0:
            return a

        def bw(g):
            a._accum(g[..., pad:-pad, pad:-pad])
        widths = [(0, 0)] * (a.data.ndim - 2) + [(pad, pad), (pad, pad)]
        return Tensor._result(np.pad(a.data, widths), (a,), bw)


# -- free functions ------------------------------------------------------------


def as_tensor(x) -> Tensor:
    return x if isinstance(x, Tensor) else Tensor(x)


def _unbroadcast(g: np.ndarray, shape) -> np.ndarray:
    """Reduce a broadcast gradient back to the operand's shape."""
    g = np.asarray(g)
    while g.ndim > len(shape):
        g = g.sum(axis=0)
    for ax, dim in enumerate(shape):
        if dim == 1 and g.shape[ax] != 1:
            g = g.sum(axis=ax, keepdims=True)
    return g


def concat(tensors, axis: int = 1) -> Tensor:
    """Concatenate along an axis (channel axis by default)."""
    tensors = [as_tensor(t) for t in tensors]
    sizes = [t.data.shape[axis] for t in tensors]
    out_data = np.concatenate([t.data for t in tensors], axis=axis)
    offsets = np.cumsum([0] + sizes)

    def bw(g):
        for t, lo, hi in zip(tensors, offsets[:-1], offsets[1:]):
            if t.requires_grad or t._prev:
                sl = [slice(None)] * g.ndim
                sl[axis] = slice(lo, hi)
                t._accum(g[tuple(sl)])
    return Tensor._result(out_data, tensors, bw)


def conv2d(x: Tensor, w: Tensor, b: Tensor | None = None,
           stride: int = 1, padding: int = 0) -> Tensor:
    """2-d convolution, NCHW: x (N,C,H,W), w (F,C,KH,KW), optional bias (F,).

    Output spatial size is floor((H + 2*pad - K)/stride) + 1.
    """
    x, w = as_tensor(x), as_tensor(w)
    if stride not in (1, 2):
        raise ValueError(f"conv2d: stride must be 1 or 2, got {stride}")
    if x.data.ndim != 4 or w.data.ndim != 4:
        raise ValueError(f"conv2d: expects 4-d input and weight, got {x.data.shape} and {w.data.shape}")
    if x.data.shape[1] != w.data.shape[1]:
        raise ValueError(f"conv2d: channel mismatch, input {x.data.shape} vs weight {w.data.shape}")
    xd = np.ascontiguousarray(x.data)
    wd = np.ascontiguousarray(w.data)
    out_data = backend.conv2d_forward(xd, wd, stride, padding)
    parents = [x, w]
    if b is not None:
        b = as_tensor(b)
        if b.data.shape != (w.data.shape[0],):
            raise ValueError(f"conv2d: bias shape {b.data.shape} does not match {w.data.shape[0]} filters")
        out_data = out_data + b.data[None, :, None, None]
        parents.append(b)

    def bw(g):
        g = np.ascontiguousarray(g)
        if x.requires_grad or x._prev:
            x._accum(backend.conv2d_grad_input(g, wd, stride, padding,
                                               xd.shape[2], xd.shape[3]))
        if w.requires_grad or w._prev:
            w._accum(backend.conv2d_grad_weight(xd, g, stride, padding,
                                                wd.shape[2], wd.shape[3]))
        if b is not None and (b.requires_grad or b._prev):
            b._accum(g.sum(axis=(0, 2, 3)))
    return Tensor._result(out_data, parents, bw)


def nearest_resize(x: Tensor, out_h: int, out_w: int) -> Tensor:
    """Nearest-neighbor spatial resize of an NCHW tensor."""
    x = as_tensor(x)
    n, c, h, w = x.data.shape
    idx_h = np.minimum((np.arange(out_h) * h) // out_h, h - 1)
    idx_w = np.minimum((np.arange(out_w) * w) // out_w, w - 1)
    out_data = np.ascontiguousarray(x.data[:, :, idx_h][:, :, :, idx_w])

    def bw(g):
        # reshape fast path for integer upscale, scatter-add otherwise
        if out_h % h == 0 and out_w % w == 0:
            rh, rw = out_h // h, out_w // w
            gx = g.reshape(n, c, h, rh, w, rw).sum(axis=(3, 5))
        else:
            tmp = np.zeros((n, c, h, out_w))
            np.add.at(tmp.transpose(2, 0, 1, 3), idx_h, g.transpose(2, 0, 1, 3))
            gx = np.zeros((n, c, h, w))
            np.add.at(gx.transpose(3, 0, 1, 2), idx_w, tmp.transpose(3, 0, 1, 2))
        x._accum(gx)
    return Tensor._result(out_data, (x,), bw)


def upsample2x(x: Tensor) -> Tensor:
    n, c, h, w = x.data.shape
    return nearest_resize(x, 2 * h, 2 * w)


def grad_check(f, x: np.ndarray, h: float = 1e-5) -> float:
    """Max relative error between analytic and central-difference gradients.

    f maps a Tensor to a scalar Tensor. Error per element is
    |analytic - numeric| / max(|analytic|, |numeric|, 1e-8).
    """
    x = np.asarray(x, dtype=np.float64)
    xt = Tensor(x.copy(), requires_grad=True)
    out = f(xt)
    out.backward()
    analytic = (xt.grad if xt.grad is not None else np.zeros_like(x)).reshape(-1)
    flat = x.reshape(-1).copy()
    numeric = np.empty_like(flat)
    for i in range(flat.size):
        orig = flat[i]
        flat[i] = orig + h
        fp = float(f(Tensor(flat.reshape(x.shape))).data)
        flat[i] = orig - h
        fm = float(f(Tensor(flat.reshape(x.shape))).data)
        flat[i] = orig
        numeric[i] = (fp - fm) / (2.0 * h)
    denom = np.maximum(np.maximum(np.abs(analytic), np.abs(numeric)), 1e-8)
    return float(np.max(np.abs(analytic - numeric) / denom))
