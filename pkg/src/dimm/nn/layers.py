"""Layers built on :class:`~dimm.nn.autodiff.Graph`.

Each layer owns named :class:`Parameter` objects registered in a shared
:class:`ParamStore`; calling a layer records its ops on the graph passed in.
"""

from __future__ import annotations

import math
from collections import OrderedDict

import numpy as np

from .autodiff import Graph, GraphError, Parameter, Tensor


class ParamStore:
    """Ordered name -> Parameter registry.  Order is creation order and is
    what checkpoints and the optimizer iterate over."""

    def __init__(self):
        self._params: "OrderedDict[str, Parameter]" = OrderedDict()

    def add(self, name: str, value) -> Parameter:
        if name in self._params:
            raise KeyError(f"duplicate parameter name {name!r}")
        p = Parameter(value, name)
        self._params[name] = p
        return p

    def __getitem__(self, name):
        return self._params[name]

    def __contains__(self, name):
        return name in self._params

    def __iter__(self):
        return iter(self._params.values())

    def __len__(self):
        return len(self._params)

    def names(self):
        return list(self._params)

    def items(self):
        return self._params.items()

    def zero_grad(self):
        for p in self._params.values():
            p.zero_grad()

    def snapshot(self) -> dict:
        return {k: p.value.copy() for k, p in self._params.items()}

    def load(self, values: dict, strict: bool = True):
        for k, p in self._params.items():
            if k not in values:
                if strict:
                    raise KeyError(f"missing parameter {k!r}")
                continue
            v = np.asarray(values[k], dtype=np.float64)
            if v.shape != p.value.shape:
                raise ValueError(f"parameter {k!r}: shape {v.shape} != expected {p.value.shape}")
            p.value = v.copy()
        if strict:
            extra = set(values) - set(self._params)
            if extra:
                raise KeyError(f"unexpected parameters: {sorted(extra)}")

    def n_values(self) -> int:
        return sum(p.value.size for p in self._params.values())


class Dense:
    """``y = x W + b``; Glorot-uniform weights, zero bias."""

    def __init__(self, store: ParamStore, name: str, din: int, dout: int, rng, bias: bool = True):
        lim = math.sqrt(6.0 / (din + dout))
        self.W = store.add(f"{name}.W", rng.uniform(-lim, lim, (din, dout)))
        self.b = store.add(f"{name}.b", np.zeros(dout)) if bias else None
        self.din, self.dout = din, dout

    def __call__(self, g: Graph, x: Tensor) -> Tensor:
        return g.linear(x, self.W, self.b)


class LayerNorm:
    def __init__(self, store: ParamStore, name: str, width: int, eps: float = 1e-5):
        self.gamma = store.add(f"{name}.gamma", np.ones(width))
        self.beta = store.add(f"{name}.beta", np.zeros(width))
        self.eps = eps

    def __call__(self, g: Graph, x: Tensor) -> Tensor:
        return g.layer_norm(x, self.gamma, self.beta, self.eps)


class MultiHeadAttention:
    """Scaled dot-product attention with ``heads`` heads over (N, S, width).

    The key projection has no bias: it would add the same amount to every
    score of a query row, which the softmax cancels, so its gradient is
    identically zero.
    """

    def __init__(self, store: ParamStore, name: str, width: int, heads: int, rng):
        if heads <= 0 or width % heads:
            raise GraphError(f"{name}: width {width} not divisible by {heads} heads")
        self.width, self.heads, self.dh = width, heads, width // heads
        self.q = Dense(store, f"{name}.q", width, width, rng)
        self.k = Dense(store, f"{name}.k", width, width, rng, bias=False)
        self.v = Dense(store, f"{name}.v", width, width, rng)
        self.o = Dense(store, f"{name}.o", width, width, rng)
        self.last_weights = None

    def _split(self, g, t, N, S):
        h, dh = self.heads, self.dh
        t = g.reshape(t, (N, S, h, dh))
        t = g.transpose(t, (0, 2, 1, 3))
        return g.reshape(t, (N * h, S, dh))

    def __call__(self, g: Graph, q_in: Tensor, k_in: Tensor = None, v_in: Tensor = None) -> Tensor:
        k_in = q_in if k_in is None else k_in
        v_in = k_in if v_in is None else v_in
        for t in (q_in, k_in, v_in):
            if t.value.ndim != 3 or t.shape[-1] != self.width:
                raise GraphError(f"attention expects (N, S, {self.width}), got {t.shape}")
        N, Sq, _ = q_in.shape
        Sk = k_in.shape[1]
        Q = self._split(g, self.q(g, q_in), N, Sq)
        K = self._split(g, self.k(g, k_in), N, Sk)
        V = self._split(g, self.v(g, v_in), N, Sk)
        scores = g.scale(g.bmm(Q, K, transpose_b=True), 1.0 / math.sqrt(self.dh))
        att = g.softmax(scores)
        self.last_weights = att.value.reshape(N, self.heads, Sq, Sk)
        ctx = g.bmm(att, V)
        ctx = g.reshape(ctx, (N, self.heads, Sq, self.dh))
        ctx = g.transpose(ctx, (0, 2, 1, 3))
        ctx = g.reshape(ctx, (N, Sq, self.width))
        return self.o(g, ctx)


class EncoderBlock:
    """Pre-norm transformer block: ``x + MHA(LN(x))`` then ``x + FFN(LN(x))``.

    With ``zero_residual`` the output projections of both branches start at
    zero, so a fresh block is the identity and attention is phased in by
    training rather than injecting noise from the first step.
    """

    def __init__(self, store: ParamStore, name: str, width: int, heads: int, rng,
                 ffn_mult: int = 2, zero_residual: bool = False):
        self.ln1 = LayerNorm(store, f"{name}.ln1", width)
        self.att = MultiHeadAttention(store, f"{name}.att", width, heads, rng)
        self.ln2 = LayerNorm(store, f"{name}.ln2", width)
        self.ff1 = Dense(store, f"{name}.ff1", width, ffn_mult * width, rng)
        self.ff2 = Dense(store, f"{name}.ff2", ffn_mult * width, width, rng)
        if zero_residual:
            self.att.o.W.value[...] = 0.0
            self.ff2.W.value[...] = 0.0

    def __call__(self, g: Graph, x: Tensor) -> Tensor:
        x = g.add(x, self.att(g, self.ln1(g, x)))
        h = self.ff2(g, g.relu(self.ff1(g, self.ln2(g, x))))
        return g.add(x, h)


class MLP:
    """Dense layers with ReLU between them; no activation after the last."""

    def __init__(self, store: ParamStore, name: str, sizes, rng):
        self.layers = [Dense(store, f"{name}.{i}", a, b, rng)
                       for i, (a, b) in enumerate(zip(sizes[:-1], sizes[1:]))]

    def __call__(self, g: Graph, x: Tensor) -> Tensor:
        for i, layer in enumerate(self.layers):
            x = layer(g, x)
            if i < len(self.layers) - 1:
                x = g.relu(x)
        return x
