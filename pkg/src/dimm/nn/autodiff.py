"""Tape-based reverse-mode differentiation over float64 numpy arrays.

A :class:`Graph` records every operation in execution order, which is a
valid topological order, so the backward pass is a single reverse sweep.
The op set is deliberately small and shape-strict; the only implicit
broadcasting is the bias/scale vector over leading dimensions in
``linear`` and ``layer_norm``.
"""

from __future__ import annotations

import numpy as np


class Tensor:
    """A value in a graph.  ``grad`` is filled in by :meth:`Graph.backward`."""

    __slots__ = ("value", "grad", "node", "name")

    def __init__(self, value, name=None):
        self.value = np.asarray(value, dtype=np.float64)
        self.grad = None
        self.node = None
        self.name = name

    @property
    def shape(self):
        return self.value.shape

    def __repr__(self):
        label = f" {self.name!r}" if self.name else ""
        return f"Tensor{label}(shape={self.shape})"


class Parameter(Tensor):
    """Persistent trainable array; gradients accumulate across backward calls
    until :meth:`zero_grad`."""

    __slots__ = ()

    def __init__(self, value, name=None):
        super().__init__(np.array(value, dtype=np.float64), name)
        self.grad = np.zeros_like(self.value)

    def zero_grad(self):
        self.grad = np.zeros_like(self.value)


class GraphError(RuntimeError):
    pass


class _Node:
    __slots__ = ("op", "inputs", "output", "backward")

    def __init__(self, op, inputs, output, backward):
        self.op = op
        self.inputs = inputs
        self.output = output
        self.backward = backward


def _accum(t: Tensor, g):
    if t.grad is None:
        t.grad = g.copy() if isinstance(t, Parameter) else g
    else:
        t.grad = t.grad + g


class Graph:
    """Records ops; call :meth:`backward` once per forward."""

    def __init__(self):
        self.nodes = []
        self._done = False

    # -- bookkeeping -------------------------------------------------------

    def _record(self, op, inputs, value, backward) -> Tensor:
        out = Tensor(value)
        node = _Node(op, inputs, out, backward)
        out.node = node
        self.nodes.append(node)
        return out

    def input(self, value, name=None) -> Tensor:
        return Tensor(value, name)

    def backward(self, output: Tensor, output_grad=None) -> None:
        """Propagate ``output_grad`` (default: ones) back through every node.

        Parameter grads accumulate; intermediate tensors and inputs get fresh
        ``grad`` arrays.
        """
        if not self.nodes or output.node is None or output.node not in self.nodes:
            raise GraphError("backward() called before a forward pass produced this output")
        if self._done:
            raise GraphError("graph already differentiated; run a new forward pass")
        g = np.ones_like(output.value) if output_grad is None else np.asarray(output_grad, float)
        if g.shape != output.shape:
            raise GraphError(f"output grad shape {g.shape} != output shape {output.shape}")
        output.grad = g
        stop = self.nodes.index(output.node)
        for node in reversed(self.nodes[:stop + 1]):
            out = node.output
            if out.grad is None:
                continue
            grads = node.backward(out.grad)
            for t, gi in zip(node.inputs, grads):
                if gi is not None:
                    _accum(t, gi)
        self._done = True

    # -- ops ---------------------------------------------------------------

    def linear(self, x: Tensor, W: Tensor, b: Tensor = None) -> Tensor:
        """``x @ W + b`` with ``x`` (..., din), ``W`` (din, dout), ``b`` (dout,)."""
        if x.shape[-1] != W.shape[0]:
            raise GraphError(f"linear: input width {x.shape[-1]} != weight rows {W.shape[0]}"
                             f" ({W.name})")
        xv, Wv = x.value, W.value
        lead = xv.shape[:-1]
        x2 = xv.reshape(-1, xv.shape[-1])
        y = x2 @ Wv
        if b is not None:
            y += b.value
        y = y.reshape(lead + (Wv.shape[1],))

        def back(g):
            g2 = g.reshape(-1, g.shape[-1])
            gx = (g2 @ Wv.T).reshape(xv.shape)
            gW = x2.T @ g2
            if b is None:
                return gx, gW
            return gx, gW, g2.sum(axis=0)
        return self._record("linear", (x, W, b) if b is not None else (x, W), y, back)

    def add(self, a: Tensor, b: Tensor) -> Tensor:
        if a.shape != b.shape:
            raise GraphError(f"add: shape mismatch {a.shape} vs {b.shape}")
        return self._record("add", (a, b), a.value + b.value, lambda g: (g, g))

    def sub(self, a: Tensor, b: Tensor) -> Tensor:
        if a.shape != b.shape:
            raise GraphError(f"sub: shape mismatch {a.shape} vs {b.shape}")
        return self._record("sub", (a, b), a.value - b.value, lambda g: (g, -g))

    def mul(self, a: Tensor, b: Tensor) -> Tensor:
        if a.shape != b.shape:
            raise GraphError(f"mul: shape mismatch {a.shape} vs {b.shape}")
        av, bv = a.value, b.value
        return self._record("mul", (a, b), av * bv, lambda g: (g * bv, g * av))

    def scale(self, x: Tensor, c: float) -> Tensor:
        return self._record("scale", (x,), x.value * c, lambda g: (g * c,))

    def relu(self, x: Tensor) -> Tensor:
        mask = x.value > 0
        return self._record("relu", (x,), x.value * mask, lambda g: (g * mask,))

    def tanh(self, x: Tensor) -> Tensor:
        y = np.tanh(x.value)
        return self._record("tanh", (x,), y, lambda g: (g * (1.0 - y * y),))

    def square(self, x: Tensor) -> Tensor:
        xv = x.value
        return self._record("square", (x,), xv * xv, lambda g: (2.0 * g * xv,))

    def softmax(self, x: Tensor) -> Tensor:
        """Softmax over the last axis."""
        z = x.value - x.value.max(axis=-1, keepdims=True)
        e = np.exp(z)
        y = e / e.sum(axis=-1, keepdims=True)

        def back(g):
            return (y * (g - (g * y).sum(axis=-1, keepdims=True)),)
        return self._record("softmax", (x,), y, back)

    def layer_norm(self, x: Tensor, gamma: Tensor, beta: Tensor, eps: float = 1e-5) -> Tensor:
        xv = x.value
        mu = xv.mean(axis=-1, keepdims=True)
        xc = xv - mu
        var = (xc * xc).mean(axis=-1, keepdims=True)
        inv = 1.0 / np.sqrt(var + eps)
        xh = xc * inv
        y = xh * gamma.value + beta.value
        n = xv.shape[-1]

        def back(g):
            gxh = g * gamma.value
            gx = inv / n * (n * gxh - gxh.sum(axis=-1, keepdims=True)
                            - xh * (gxh * xh).sum(axis=-1, keepdims=True))
            g2 = g.reshape(-1, n)
            return gx, (g2 * xh.reshape(-1, n)).sum(axis=0), g2.sum(axis=0)
        return self._record("layer_norm", (x, gamma, beta), y, back)

    def bmm(self, a: Tensor, b: Tensor, transpose_b: bool = False) -> Tensor:
        """Batched matmul over leading dims: (..., m, k) @ (..., k, n)."""
        av, bv = a.value, b.value
        bt = np.swapaxes(bv, -1, -2) if transpose_b else bv
        if av.shape[:-2] != bt.shape[:-2] or av.shape[-1] != bt.shape[-2]:
            raise GraphError(f"bmm: incompatible shapes {a.shape} and {b.shape}")
        y = av @ bt

        def back(g):
            ga = g @ np.swapaxes(bt, -1, -2)
            gbt = np.swapaxes(av, -1, -2) @ g
            return ga, (np.swapaxes(gbt, -1, -2) if transpose_b else gbt)
        return self._record("bmm", (a, b), y, back)

    def reshape(self, x: Tensor, shape) -> Tensor:
        old = x.shape
        return self._record("reshape", (x,), x.value.reshape(shape), lambda g: (g.reshape(old),))

    def transpose(self, x: Tensor, axes) -> Tensor:
        inv = np.argsort(axes)
        return self._record("transpose", (x,), x.value.transpose(axes),
                            lambda g: (g.transpose(inv),))

    def concat(self, xs, axis: int = -1) -> Tensor:
        vals = [t.value for t in xs]
        ax = axis % vals[0].ndim
        for v in vals[1:]:
            if v.ndim != vals[0].ndim or v.shape[:ax] + v.shape[ax + 1:] != \
                    vals[0].shape[:ax] + vals[0].shape[ax + 1:]:
                raise GraphError(f"concat: incompatible shapes {[t.shape for t in xs]}")
        splits = np.cumsum([v.shape[ax] for v in vals])[:-1]
        return self._record("concat", tuple(xs), np.concatenate(vals, axis=ax),
                            lambda g: tuple(np.split(g, splits, axis=ax)))

    def mean(self, x: Tensor, axis: int) -> Tensor:
        """Mean over one axis (dropped)."""
        n = x.shape[axis]
        shp = x.shape

        def back(g):
            return (np.broadcast_to(np.expand_dims(g, axis) / n, shp).copy(),)
        return self._record("mean", (x,), x.value.mean(axis=axis), back)

    def repeat(self, x: Tensor, n: int, axis: int) -> Tensor:
        """Insert a new axis of length ``n`` at ``axis`` by copying."""
        y = np.repeat(np.expand_dims(x.value, axis), n, axis=axis)
        return self._record("repeat", (x,), y, lambda g: (g.sum(axis=axis),))

    def add_const(self, x: Tensor, c) -> Tensor:
        """Add a constant array broadcast over leading dims (e.g. positions)."""
        c = np.asarray(c, dtype=np.float64)
        return self._record("add_const", (x,), x.value + c, lambda g: (g,))

    def sum_all(self, x: Tensor) -> Tensor:
        shp = x.shape
        return self._record("sum", (x,), np.array(x.value.sum()),
                            lambda g: (np.full(shp, float(g)),))

    def mse(self, pred: Tensor, target) -> Tensor:
        """Mean squared error against a constant target array."""
        t = np.asarray(target, dtype=np.float64)
        if t.shape != pred.shape:
            raise GraphError(f"mse: target shape {t.shape} != prediction shape {pred.shape}")
        d = pred.value - t
        n = d.size
        return self._record("mse", (pred,), np.array((d * d).mean()),
                            lambda g: (float(g) * 2.0 * d / n,))
