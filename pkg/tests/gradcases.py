"""Gradient-check instances: one builder per op, layer and network.

Each builder takes an rng and returns ``(fn, params)`` for
:func:`dimm.nn.gradcheck.check_gradients`.  Every differentiable input is a
Parameter so finite differences cover it.
"""

import numpy as np

from dimm.agent.networks import Actor, Critic, NetShape
from dimm.nn import EncoderBlock, LayerNorm, MLP, MultiHeadAttention, ParamStore
from dimm.nn.gradcheck import as_params


def _away_from_zero(rng, shape, gap=1e-3):
    x = rng.normal(size=shape)
    return np.where(np.abs(x) < gap, gap * np.sign(x + 1e-300), x)


def _randomise(store, rng, scale=0.3):
    # zero-initialised projections would hide the attention path from the check
    for p in store:
        p.value = p.value + scale * rng.standard_normal(p.value.shape)


def linear(rng):
    ps = as_params(x=rng.normal(size=(2, 3, 4)), W=rng.normal(size=(4, 5)), b=rng.normal(size=5))
    return (lambda g, p: g.linear(*p)), ps


def linear_nobias(rng):
    ps = as_params(x=rng.normal(size=(3, 4)), W=rng.normal(size=(4, 2)))
    return (lambda g, p: g.linear(*p)), ps


def add(rng):
    return (lambda g, p: g.add(*p)), as_params(a=rng.normal(size=(2, 3)), b=rng.normal(size=(2, 3)))


def sub(rng):
    return (lambda g, p: g.sub(*p)), as_params(a=rng.normal(size=(4,)), b=rng.normal(size=(4,)))


def mul(rng):
    return (lambda g, p: g.mul(*p)), as_params(a=rng.normal(size=(3, 2)), b=rng.normal(size=(3, 2)))


def scale(rng):
    c = rng.normal()
    return (lambda g, p: g.scale(p[0], c)), as_params(x=rng.normal(size=(2, 5)))


def relu(rng):
    return (lambda g, p: g.relu(p[0])), as_params(x=_away_from_zero(rng, (3, 4)))


def tanh(rng):
    return (lambda g, p: g.tanh(p[0])), as_params(x=rng.normal(size=(3, 4)))


def square(rng):
    return (lambda g, p: g.square(p[0])), as_params(x=rng.normal(size=(6,)))


def softmax(rng):
    return (lambda g, p: g.softmax(p[0])), as_params(x=2 * rng.normal(size=(2, 3, 5)))


def layer_norm(rng):
    ps = as_params(x=rng.normal(size=(2, 3, 6)), gamma=1 + 0.3 * rng.normal(size=6),
                   beta=rng.normal(size=6))
    return (lambda g, p: g.layer_norm(*p)), ps


def bmm(rng):
    ps = as_params(a=rng.normal(size=(2, 3, 4)), b=rng.normal(size=(2, 4, 5)))
    return (lambda g, p: g.bmm(*p)), ps


def bmm_transposed(rng):
    ps = as_params(a=rng.normal(size=(2, 3, 4)), b=rng.normal(size=(2, 5, 4)))
    return (lambda g, p: g.bmm(p[0], p[1], transpose_b=True)), ps


def reshape(rng):
    return (lambda g, p: g.reshape(p[0], (3, 4))), as_params(x=rng.normal(size=(2, 6)))


def transpose(rng):
    return (lambda g, p: g.transpose(p[0], (2, 0, 1))), as_params(x=rng.normal(size=(2, 3, 4)))


def concat(rng):
    ps = as_params(a=rng.normal(size=(2, 3)), b=rng.normal(size=(2, 1)), c=rng.normal(size=(2, 2)))
    return (lambda g, p: g.concat(p, axis=-1)), ps


def mean(rng):
    return (lambda g, p: g.mean(p[0], axis=1)), as_params(x=rng.normal(size=(2, 4, 3)))


def repeat(rng):
    return (lambda g, p: g.repeat(p[0], 3, 1)), as_params(x=rng.normal(size=(2, 4)))


def add_const(rng):
    c = rng.normal(size=4)
    return (lambda g, p: g.add_const(p[0], c)), as_params(x=rng.normal(size=(3, 4)))


def sum_all(rng):
    return (lambda g, p: g.sum_all(p[0])), as_params(x=rng.normal(size=(3, 4)))


def mse(rng):
    t = rng.normal(size=(5,))
    return (lambda g, p: g.mse(p[0], t)), as_params(x=rng.normal(size=(5,)))


def _store_case(build, inputs):
    def make(rng):
        store = ParamStore()
        layer = build(store, rng)
        _randomise(store, rng)
        xs = as_params(**{k: v(rng) for k, v in inputs.items()})
        params = xs + list(store)

        def fn(g, p):
            return layer(g, *p[:len(xs)])
        return fn, params
    return make


dense_layer = _store_case(lambda s, r: MLP(s, "mlp", [4, 6, 3], r),
                          {"x": lambda r: r.normal(size=(5, 4))})
layer_norm_layer = _store_case(lambda s, r: LayerNorm(s, "ln", 5),
                               {"x": lambda r: r.normal(size=(2, 3, 5))})
attention = _store_case(lambda s, r: MultiHeadAttention(s, "att", 6, 2, r),
                        {"x": lambda r: r.normal(size=(2, 4, 6))})
cross_attention = _store_case(lambda s, r: MultiHeadAttention(s, "att", 4, 2, r),
                              {"q": lambda r: r.normal(size=(2, 3, 4)),
                               "kv": lambda r: r.normal(size=(2, 5, 4))})
encoder_block = _store_case(lambda s, r: EncoderBlock(s, "blk", 4, 2, r, zero_residual=True),
                            {"x": lambda r: r.normal(size=(2, 3, 4))})

SMALL_NET = NetShape(window=3, width=4, heads=2, blocks=1, hidden=5, action_bound=5.0)


def _feats(rng, B=2):
    return rng.normal(size=(B, 3, SMALL_NET.n_feat))


def actor(rng):
    net = Actor(SMALL_NET, rng)
    _randomise(net.store, rng)
    f = _feats(rng)
    return (lambda g, p: net.forward(g, f)), list(net.store)


def critic(rng):
    net = Critic(SMALL_NET, rng)
    _randomise(net.store, rng)
    f = _feats(rng)
    a = as_params(action=rng.uniform(-5, 5, (2, 9)))
    return (lambda g, p: net.forward(g, f, p[0])), a + list(net.store)


def critic_action(rng):
    """dQ/da alone: the gradient the actor update follows."""
    net = Critic(SMALL_NET, rng)
    _randomise(net.store, rng)
    f = _feats(rng)
    a = as_params(action=rng.uniform(-5, 5, (3, 9)))
    return (lambda g, p: net.forward(g, f[:1].repeat(3, 0), p[0], encoder_grad=False)), a


OPS = {f.__name__: f for f in (linear, linear_nobias, add, sub, mul, scale, relu, tanh, square,
                                softmax, layer_norm, bmm, bmm_transposed, reshape, transpose,
                                concat, mean, repeat, add_const, sum_all, mse)}
LAYERS = {"dense_mlp": dense_layer, "layer_norm_layer": layer_norm_layer,
          "attention": attention, "cross_attention": cross_attention,
          "encoder_block": encoder_block}
NETWORKS = {"actor": actor, "critic": critic, "critic_action": critic_action}
ALL_CASES = {**OPS, **LAYERS, **NETWORKS}
