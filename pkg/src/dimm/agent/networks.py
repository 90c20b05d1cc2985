"""Attention-based actor and critic.

The measurement window becomes a token sequence, one token per time step
holding that step's 3D measurement plus a learned position embedding.  It
passes through self-attention encoder blocks and is mean-pooled into a
context vector.  The dense heads then work one axis at a time with weights
shared across x, y and z: their input is the context vector concatenated with
that axis' own features (window, bank positions, previous fused position).

The actor head emits three scores per axis, bounded by ``A * tanh``.  Each
critic embeds ``[context, features, axis action]`` per axis, concatenates the
three embeddings and maps them to one Q value, so Q can depend on how the
axes interact.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from ..nn import Dense, EncoderBlock, Graph, MLP, ParamStore, Tensor


@dataclass(frozen=True)
class NetShape:
    window: int = 10          # L; the window holds L + 1 measurements
    width: int = 64           # attention model width
    heads: int = 4
    blocks: int = 2
    hidden: int = 64
    action_bound: float = 5.0

    @property
    def tokens(self) -> int:
        return self.window + 1

    @property
    def n_feat(self) -> int:
        """Per-axis feature count: window, three bank positions, previous fused."""
        return self.tokens + 4

    def to_dict(self):
        return {k: getattr(self, k) for k in self.__dataclass_fields__}


class _Encoder:
    def __init__(self, store: ParamStore, name: str, shape: NetShape, rng):
        self.shape = shape
        self.embed = Dense(store, f"{name}.embed", 3, shape.width, rng)
        self.pos = store.add(f"{name}.pos", 0.1 * rng.standard_normal((shape.tokens, shape.width)))
        self.blocks = [EncoderBlock(store, f"{name}.block{i}", shape.width, shape.heads, rng,
                                    zero_residual=True)
                       for i in range(shape.blocks)]

    def __call__(self, g: Graph, feats: np.ndarray) -> Tensor:
        """``feats`` (B, 3, n_feat) array -> pooled context (B, width)."""
        B = feats.shape[0]
        S = self.shape.tokens
        win = g.input(np.ascontiguousarray(feats[:, :, :S].transpose(0, 2, 1)))
        x = g.add(self.embed(g, win), g.repeat(self.pos, B, 0))
        for blk in self.blocks:
            x = blk(g, x)
        return g.mean(x, axis=1)


def _per_axis(g: Graph, ctx: Tensor) -> Tensor:
    """(B, width) context -> (3B, width), one copy per axis row."""
    B, w = ctx.shape
    return g.reshape(g.repeat(ctx, 3, 1), (3 * B, w))


def _flat(feats, n_feat):
    feats = np.asarray(feats, dtype=np.float64)
    if feats.ndim != 3 or feats.shape[1:] != (3, n_feat):
        raise ValueError(f"features must be (B, 3, {n_feat}), got {feats.shape}")
    return feats, np.ascontiguousarray(feats).reshape(-1, n_feat)


class Actor:
    def __init__(self, shape: NetShape, rng, prefix: str = "actor"):
        self.shape = shape
        self.store = ParamStore()
        self.encoder = _Encoder(self.store, f"{prefix}.enc", shape, rng)
        self.head = MLP(self.store, f"{prefix}.head",
                        [shape.width + shape.n_feat, shape.hidden, shape.hidden, 3], rng)

    def forward(self, g: Graph, feats: np.ndarray) -> Tensor:
        """``feats`` (B, 3, n_feat) -> bounded action (B, 9), rows x, y, z."""
        feats, flat = _flat(feats, self.shape.n_feat)
        B = feats.shape[0]
        ctx = _per_axis(g, self.encoder(g, feats))
        h = self.head(g, g.concat([ctx, g.input(flat)], axis=-1))
        a = g.scale(g.tanh(h), self.shape.action_bound)
        return g.reshape(a, (B, 9))

    def act(self, feats) -> np.ndarray:
        g = Graph()
        return self.forward(g, feats).value


class Critic:
    def __init__(self, shape: NetShape, rng, prefix: str = "critic"):
        self.shape = shape
        self.store = ParamStore()
        self.encoder = _Encoder(self.store, f"{prefix}.enc", shape, rng)
        self.embed = MLP(self.store, f"{prefix}.embed",
                         [shape.width + shape.n_feat + 3, shape.hidden, shape.hidden], rng)
        self.head = MLP(self.store, f"{prefix}.head", [3 * shape.hidden, shape.hidden, 1], rng)

    def forward(self, g: Graph, feats: np.ndarray, action: Tensor,
                encoder_grad: bool = True) -> Tensor:
        """``feats`` (B, 3, n_feat), ``action`` (B, 9) tensor -> Q (B,).

        With ``encoder_grad=False`` the encoder runs off the tape; use it when
        only gradients with respect to the action are wanted.
        """
        feats, flat = _flat(feats, self.shape.n_feat)
        B = feats.shape[0]
        if encoder_grad:
            ctx = self.encoder(g, feats)
        else:
            ctx = g.input(self.encoder(Graph(), feats).value)
        a = g.reshape(action, (3 * B, 3))
        e = g.relu(self.embed(g, g.concat([_per_axis(g, ctx), g.input(flat), a], axis=-1)))
        q = self.head(g, g.reshape(e, (B, 3 * self.shape.hidden)))
        return g.reshape(q, (B,))

    def q(self, feats, action) -> np.ndarray:
        g = Graph()
        return self.forward(g, feats, g.input(action)).value
