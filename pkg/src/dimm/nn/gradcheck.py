"""Central finite-difference check of analytic gradients."""

from __future__ import annotations

import numpy as np

from .autodiff import Graph, Parameter


def rel_error(a, b, floor: float = 1e-6) -> float:
    """``||a - b|| / max(||a||, ||b||, floor)`` over whole arrays.

    The floor stops a gradient that vanishes identically from turning
    finite-difference rounding noise into a large ratio.
    """
    a = np.asarray(a, float)
    b = np.asarray(b, float)
    den = max(np.linalg.norm(a), np.linalg.norm(b), floor)
    return float(np.linalg.norm(a - b) / den)


def check_gradients(fn, params, rng, h: float = 1e-5):
    """Compare backprop against central differences for every entry of ``params``.

    ``fn(g, params)`` records a computation on graph ``g`` and returns its
    output tensor.  The scalar being differentiated is ``sum(out * R)`` with a
    fixed random ``R``, which exercises every output entry.  Returns a dict
    name -> relative error.
    """
    params = list(params)
    for p in params:
        p.zero_grad()
    g = Graph()
    out = fn(g, params)
    R = rng.standard_normal(out.shape)
    g.backward(out, R)
    analytic = [p.grad.copy() for p in params]

    def f():
        return float((fn(Graph(), params).value * R).sum())

    errs = {}
    for k, p in enumerate(params):
        num = np.zeros_like(p.value)
        flat = p.value.reshape(-1)
        nflat = num.reshape(-1)
        for i in range(flat.size):
            old = flat[i]
            flat[i] = old + h
            fp = f()
            flat[i] = old - h
            fm = f()
            flat[i] = old
            nflat[i] = (fp - fm) / (2.0 * h)
        errs[p.name or f"param{k}"] = rel_error(analytic[k], num)
    return errs


def as_params(**arrays):
    return [Parameter(v, name) for name, v in arrays.items()]
