"""Per-axis fusion of the bank's position estimates.

An action holds one score per (axis, model).  A softmax over models turns
each axis' scores into a row of the importance matrix ``W`` (rows: x, y, z;
columns: CV, CA, CJ).  Column ``i`` of ``W`` is the diagonal of model ``i``'s
transformation matrix, and the fused position is ``sum_i T_i @ p_i``.

Normalization runs over the three models of one axis.  Summing over the axes
instead would not make the weights of one axis add up to one, and the fused
point would leave the per-axis convex hull.
"""

from __future__ import annotations

import numpy as np


def as_action_matrix(a) -> np.ndarray:
    """(..., 9) flat action or (..., 3, 3) -> (..., 3 axes, 3 models)."""
    a = np.asarray(a, dtype=float)
    if a.shape[-1] == 9:
        return a.reshape(a.shape[:-1] + (3, 3))
    if a.shape[-2:] == (3, 3):
        return a
    raise ValueError(f"action must have 9 entries, got shape {a.shape}")


def importance_weights(a) -> np.ndarray:
    """Row-wise softmax of the action; works on batches too."""
    A = as_action_matrix(a)
    e = np.exp(A - A.max(axis=-1, keepdims=True))
    return e / e.sum(axis=-1, keepdims=True)


def transformation_matrices(W) -> np.ndarray:
    """(3 models, 3, 3) stack of diagonal matrices; ``T[i] = diag(W[:, i])``."""
    W = np.asarray(W, dtype=float)
    T = np.zeros((3, 3, 3))
    for i in range(3):
        np.fill_diagonal(T[i], W[:, i])
    return T


def weights_from_transforms(T) -> np.ndarray:
    return np.stack([np.diag(t) for t in T], axis=1)


def fuse_positions(T, p) -> np.ndarray:
    """``p`` is (3 models, 3 axes)."""
    p = np.asarray(p, dtype=float)
    return np.einsum("iab,ib->a", T, p)


def fuse_with_weights(W, p) -> np.ndarray:
    """Batched shortcut: ``W`` (..., 3 axes, 3 models), ``p`` (..., 3 models, 3 axes)."""
    return np.einsum("...am,...ma->...a", W, p)


def uniform_weights() -> np.ndarray:
    return np.full((3, 3), 1.0 / 3.0)


def _simplex_grid(res: int) -> np.ndarray:
    pts = [(i / res, j / res, (res - i - j) / res)
           for i in range(res + 1) for j in range(res + 1 - i)]
    return np.array(pts)


def _project_simplex(v):
    u = np.sort(v)[::-1]
    css = np.cumsum(u) - 1.0
    k = np.arange(1, len(v) + 1)
    rho = np.nonzero(u - css / k > 0)[0][-1]
    return np.maximum(v - css[rho] / (rho + 1.0), 0.0)


def vector_weight_gap(p, target, grid: int = 200, refine_iters: int = 500):
    """Best reachable error with per-axis weights vs. one shared weight vector.

    ``matrix_err`` is exact: each axis independently clamps the target into
    the interval spanned by the models.  ``vector_err`` minimises over the
    2-simplex by a grid search followed by projected-gradient refinement from
    the best grid point.
    """
    p = np.asarray(p, dtype=float)
    target = np.asarray(target, dtype=float)
    lo, hi = p.min(axis=0), p.max(axis=0)
    matrix_err = float(np.linalg.norm(np.clip(target, lo, hi) - target))

    G = _simplex_grid(grid)
    errs = np.linalg.norm(G @ p - target, axis=1)
    mu = G[errs.argmin()]
    A = p.T  # (3 axes, M)
    L = max(np.linalg.norm(A, 2) ** 2, 1e-300)
    for _ in range(refine_iters):
        g = A.T @ (A @ mu - target)
        mu = _project_simplex(mu - g / L)
    vector_err = float(min(errs.min(), np.linalg.norm(A @ mu - target)))
    return matrix_err, vector_err

