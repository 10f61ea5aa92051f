"""Reverse-mode differentiation over numpy float64 arrays.

A recorded graph of Tensor nodes, each with a backward closure, topologically
sorted on demand. Covers exactly the operator set the evidence network and the
differentiable losses need; no more. Graph state lives only in the tensors, so
independent computations never interact.
"""

import numpy as np
from scipy import special

from . import _kernels

_grad_enabled = True


class no_grad:
    """Context manager that disables graph recording."""

    def __enter__(self):
        global _grad_enabled
        self._saved = _grad_enabled
        _grad_enabled = False

    def __exit__(self, *exc):
        global _grad_enabled
        _grad_enabled = self._saved
        return False


class Tensor:
    __slots__ = ("data", "grad", "requires_grad", "_backward", "_prev")

    def __init__(self, data, requires_grad=False):
        self.data = np.asarray(data, dtype=np.float64)
        self.grad = None
        self.requires_grad = requires_grad
        self._backward = None
        self._prev = ()

    @property
    def shape(self):
        return self.data.shape

    def __repr__(self):
        return f"Tensor(shape={self.data.shape}, requires_grad={self.requires_grad})"

    def __float__(self):
        return float(self.data)

    def item(self):
        return float(self.data)

    def backward(self):
        if self.data.size != 1:
            raise ValueError("backward() requires a scalar tensor")
        topo = []
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
                node._backward()

    # -- arithmetic ---------------------------------------------------------

    def __add__(self, other):
        other = _lift(other)
        out = _node(self.data + other.data, (self, other))
        if out.requires_grad:

            def backward():
                _accum(self, out.grad)
                _accum(other, out.grad)

            out._backward = backward
        return out

    __radd__ = __add__

    def __mul__(self, other):
        other = _lift(other)
        out = _node(self.data * other.data, (self, other))
        if out.requires_grad:

            def backward():
                _accum(self, out.grad * other.data)
                _accum(other, out.grad * self.data)

            out._backward = backward
        return out

    __rmul__ = __mul__

    def __neg__(self):
        return self * -1.0

    def __sub__(self, other):
        return self + (-_lift(other))

    def __rsub__(self, other):
        return _lift(other) + (-self)

    def __truediv__(self, other):
        other = _lift(other)
        out = _node(self.data / other.data, (self, other))
        if out.requires_grad:

            def backward():
                _accum(self, out.grad / other.data)
                _accum(other, -out.grad * self.data / (other.data * other.data))

            out._backward = backward
        return out

    def __rtruediv__(self, other):
        return _lift(other) / self

    def __pow__(self, exponent):
        if not isinstance(exponent, (int, float)):
            raise TypeError("only scalar exponents are supported")
        out = _node(self.data**exponent, (self,))
        if out.requires_grad:

            def backward():
                _accum(self, out.grad * exponent * self.data ** (exponent - 1))

            out._backward = backward
        return out

    def __getitem__(self, key):
        out = _node(self.data[key].copy(), (self,))
        if out.requires_grad:

            def backward():
                g = np.zeros_like(self.data)
                g[key] = out.grad
                _accum(self, g)

            out._backward = backward
        return out

    # -- shape --------------------------------------------------------------

    def reshape(self, *shape):
        out = _node(self.data.reshape(*shape), (self,))
        if out.requires_grad:

            def backward():
                _accum(self, out.grad.reshape(self.data.shape))

            out._backward = backward
        return out

    def sum(self, axis=None, keepdims=False):
        out = _node(self.data.sum(axis=axis, keepdims=keepdims), (self,))
        if out.requires_grad:

            def backward():
                g = out.grad
                if axis is not None and not keepdims:
                    g = np.expand_dims(g, axis)
                _accum(self, np.broadcast_to(g, self.data.shape))

            out._backward = backward
        return out

    def mean(self, axis=None, keepdims=False):
        n = self.data.size if axis is None else np.prod(
            [self.data.shape[a] for a in np.atleast_1d(axis)]
        )
        return self.sum(axis=axis, keepdims=keepdims) * (1.0 / float(n))

    # -- elementwise functions ----------------------------------------------

    def exp(self):
        out = _node(np.exp(self.data), (self,))
        if out.requires_grad:

            def backward():
                _accum(self, out.grad * out.data)

            out._backward = backward
        return out

    def log(self):
        out = _node(np.log(self.data), (self,))
        if out.requires_grad:

            def backward():
                _accum(self, out.grad / self.data)

            out._backward = backward
        return out

    def relu(self):
        out = _node(np.maximum(self.data, 0.0), (self,))
        if out.requires_grad:

            def backward():
                # subgradient 0 at the kink
                _accum(self, out.grad * (self.data > 0.0))

            out._backward = backward
        return out

    def softplus(self):
        out = _node(np.logaddexp(0.0, self.data), (self,))
        if out.requires_grad:

            def backward():
                _accum(self, out.grad * special.expit(self.data))

            out._backward = backward
        return out

    def digamma(self):
        out = _node(special.psi(self.data), (self,))
        if out.requires_grad:

            def backward():
                _accum(self, out.grad * special.polygamma(1, self.data))

            out._backward = backward
        return out

    def gammaln(self):
        out = _node(special.gammaln(self.data), (self,))
        if out.requires_grad:

            def backward():
                _accum(self, out.grad * special.psi(self.data))

            out._backward = backward
        return out


def _lift(x):
    return x if isinstance(x, Tensor) else Tensor(x)


def _node(data, prev):
    out = Tensor(data)
    recording = _grad_enabled and any(p.requires_grad for p in prev)
    if recording:
        out.requires_grad = True
        out._prev = tuple(p for p in prev if p.requires_grad)
    return out


def _accum(t, g):
    if not t.requires_grad:
        return
    g = _unbroadcast(np.asarray(g, dtype=np.float64), t.data.shape)
    if t.grad is None:
        # copy: g may alias an upstream grad buffer or be a broadcast view
        t.grad = g.astype(np.float64, copy=True)
    else:
        t.grad += g


def _unbroadcast(g, shape):
    while g.ndim > len(shape):
        g = g.sum(axis=0)
    for i, s in enumerate(shape):
        if s == 1 and g.shape[i] != 1:
            g = g.sum(axis=i, keepdims=True)
    return g


def gather(t, indices):
    """Pick entries of the flattened tensor; gradient scatter-adds back."""
    t = _lift(t)
    idx = np.asarray(indices, dtype=np.intp)
    out = _node(t.data.ravel()[idx], (t,))
    if out.requires_grad:

        def backward():
            g = np.zeros(t.data.size, dtype=np.float64)
            np.add.at(g, idx.ravel(), out.grad.ravel())
            _accum(t, g.reshape(t.data.shape))

        out._backward = backward
    return out


def concat(tensors, axis):
    tensors = [_lift(t) for t in tensors]
    out = _node(np.concatenate([t.data for t in tensors], axis=axis), tuple(tensors))
    if out.requires_grad:
        sizes = [t.data.shape[axis] for t in tensors]

        def backward():
            start = 0
            for t, size in zip(tensors, sizes):
                key = [slice(None)] * out.grad.ndim
                key[axis] = slice(start, start + size)
                _accum(t, out.grad[tuple(key)])
                start += size

        out._backward = backward
    return out


def conv3x3(x, w, b):
    """3x3 convolution, stride 1, replicate padding; x is (N, C, H, W)."""
    x, w, b = _lift(x), _lift(w), _lift(b)
    out = _node(_kernels.conv3x3_fwd(x.data, w.data, b.data), (x, w, b))
    if out.requires_grad:

        def backward():
            gx, gw, gb = _kernels.conv3x3_bwd(x.data, w.data, out.grad)
            _accum(x, gx)
            _accum(w, gw)
            _accum(b, gb)

        out._backward = backward
    return out


def maxpool2(x):
    x = _lift(x)
    y, idx = _kernels.maxpool2_fwd(x.data)
    out = _node(y, (x,))
    if out.requires_grad:

        def backward():
            _accum(x, _kernels.maxpool2_bwd(idx, out.grad))

        out._backward = backward
    return out


def upsample2(x):
    x = _lift(x)
    out = _node(_kernels.upsample2_fwd(x.data), (x,))
    if out.requires_grad:

        def backward():
            _accum(x, _kernels.upsample2_bwd(out.grad))

        out._backward = backward
    return out


def relu(x):
    return _lift(x).relu()


def softplus(x):
    return _lift(x).softplus()


class Adam:
    """Standard Adam with bias correction; state per parameter, deterministic."""

    def __init__(self, params, lr=1e-3, betas=(0.9, 0.999), eps=1e-8):
        self.params = list(params)
        self.lr = lr
        self.beta1, self.beta2 = betas
        self.eps = eps
        self.t = 0
        self.m = [np.zeros_like(p.data) for p in self.params]
        self.v = [np.zeros_like(p.data) for p in self.params]

    def zero_grad(self):
        for p in self.params:
            p.grad = None

    def step(self):
        self.t += 1
        b1, b2 = self.beta1, self.beta2
        for i, p in enumerate(self.params):
            g = p.grad if p.grad is not None else np.zeros_like(p.data)
            self.m[i] = b1 * self.m[i] + (1.0 - b1) * g
            self.v[i] = b2 * self.v[i] + (1.0 - b2) * g * g
            m_hat = self.m[i] / (1.0 - b1**self.t)
            v_hat = self.v[i] / (1.0 - b2**self.t)
            p.data = p.data - self.lr * m_hat / (np.sqrt(v_hat) + self.eps)
