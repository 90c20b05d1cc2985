"""Classic interacting multiple model estimator over unequal-order models.

Mixing happens in the layout of the largest model: each posterior is
zero-padded (mean 0, variance ``pad_var`` on the missing derivatives), mixed,
and truncated back to the receiving model's own state.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass

import numpy as np

from . import kernels
from .errors import IllConditionedError
from .filter_bank import COND_MAX, FilterState, init_filter_state, kf_predict, kf_update

log = logging.getLogger(__name__)

PAD_VARIANCE = 1e6


def default_transition(M: int = 3, stay: float = 0.95) -> np.ndarray:
    if not 0.0 <= stay <= 1.0:
        raise ValueError("stay probability must lie in [0, 1]")
    Pi = np.full((M, M), (1.0 - stay) / (M - 1))
    np.fill_diagonal(Pi, stay)
    return Pi


def _layout(specs):
    """Common-layout index map: axis a, derivative d -> a * order_max + d."""
    omax = max(m.axis_order for m in specs)
    idx = np.zeros((len(specs), 3 * omax), dtype=np.int64)
    for i, m in enumerate(specs):
        o = m.axis_order
        for a in range(3):
            for d in range(o):
                idx[i, a * o + d] = a * omax + d
    return idx, 3 * omax


@dataclass(frozen=True)
class ImmState:
    specs: tuple
    filters: tuple  # FilterState per model
    mu: np.ndarray
    Pi: np.ndarray
    pad_var: float = PAD_VARIANCE

    def __post_init__(self):
        if abs(self.mu.sum() - 1.0) > 1e-12 or (self.mu < 0).any():
            raise ValueError("mu must be a probability vector")
        if np.abs(self.Pi.sum(axis=1) - 1.0).max() > 1e-12 or (self.Pi < 0).any():
            raise ValueError("Pi rows must be probability vectors")

    def positions(self) -> np.ndarray:
        return np.array([m.H @ fs.mean for m, fs in zip(self.specs, self.filters)])

    def combined_position(self) -> np.ndarray:
        return self.mu @ self.positions()


def imm_init(specs, z0, p0_scale: float = 100.0, Pi=None, mu0=None,
             pad_var: float = PAD_VARIANCE) -> ImmState:
    M = len(specs)
    Pi = default_transition(M) if Pi is None else np.asarray(Pi, dtype=float)
    mu0 = np.full(M, 1.0 / M) if mu0 is None else np.asarray(mu0, dtype=float)
    filters = tuple(init_filter_state(m, z0, p0_scale) for m in specs)
    return ImmState(tuple(specs), filters, mu0, Pi, pad_var)


def mixing_probabilities(mu, Pi):
    """Return (omega, cbar) with omega[i, j] = P(model i at k-1 | model j at k).

    Columns whose predicted probability ``cbar[j]`` is zero fall back to uniform.
    """
    M = len(mu)
    cbar = Pi.T @ mu
    omega = np.empty((M, M))
    for j in range(M):
        if cbar[j] > 0.0:
            omega[:, j] = Pi[:, j] * mu / cbar[j]
        else:
            log.warning("IMM mixing column %d has zero mass; using uniform weights", j)
            omega[:, j] = 1.0 / M
    return omega, cbar


def imm_interact(s: ImmState) -> list[FilterState]:
    """Mixed initial conditions for each model's next cycle."""
    idx, N = _layout(s.specs)
    M = len(s.specs)
    omega, _ = mixing_probabilities(s.mu, s.Pi)
    xf = np.zeros((M, N))
    Pf = np.zeros((M, N, N))
    for i, (m, fs) in enumerate(zip(s.specs, s.filters)):
        sel = idx[i, :m.n]
        Pf[i] = np.eye(N) * s.pad_var
        xf[i, sel] = fs.mean
        Pf[i][np.ix_(sel, sel)] = fs.cov
    out = []
    for j, m in enumerate(s.specs):
        xm = omega[:, j] @ xf
        d = xf - xm
        Pm = np.einsum("i,ikl->kl", omega[:, j], Pf + d[:, :, None] * d[:, None, :])
        sel = idx[j, :m.n]
        out.append(FilterState(mean=xm[sel], cov=Pm[np.ix_(sel, sel)]))
    return out


def imm_step(s: ImmState, z) -> tuple[ImmState, np.ndarray]:
    """One interact / filter / reweight / combine cycle."""
    mixed = imm_interact(s)
    _, cbar = mixing_probabilities(s.mu, s.Pi)
    filters = []
    like = np.empty(len(s.specs))
    for j, (m, fs) in enumerate(zip(s.specs, mixed)):
        fs = kf_update(kf_predict(fs, m), m, z)
        filters.append(fs)
        like[j] = fs.last_likelihood
    tot = cbar @ like
    if tot > 0.0 and np.isfinite(tot):
        mu = cbar * like / tot
        mu = mu / mu.sum()
    else:
        log.warning("all IMM likelihoods underflowed; keeping previous model probabilities")
        mu = s.mu
    new = ImmState(s.specs, tuple(filters), mu, s.Pi, s.pad_var)
    return new, new.combined_position()


@dataclass
class ImmRun:
    combined: np.ndarray   # (T, 3)
    positions: np.ndarray  # (T, M, 3)
    mu: np.ndarray         # (T, M)


def imm_run(specs, zs, p0_scale: float = 100.0, Pi=None, mu0=None,
            pad_var: float = PAD_VARIANCE) -> ImmRun:
    """Whole-sequence IMM in the compiled kernel; same arithmetic as
    repeated :func:`imm_step` calls after :func:`imm_init`."""
    zs = np.ascontiguousarray(zs, dtype=float)
    s = imm_init(specs, zs[0], p0_scale, Pi, mu0, pad_var)
    idx, N = _layout(specs)
    M = len(specs)
    Fp = np.zeros((M, N, N))
    Qp = np.zeros((M, N, N))
    Hp = np.zeros((M, 3, N))
    x0 = np.zeros((M, N))
    P0 = np.zeros((M, N, N))
    dims = np.array([m.n for m in specs], dtype=np.int64)
    for i, (m, fs) in enumerate(zip(specs, s.filters)):
        n = m.n
        Fp[i, :n, :n] = m.F
        Qp[i, :n, :n] = m.Q
        Hp[i, :, :n] = m.H
        x0[i, :n] = fs.mean
        P0[i, :n, :n] = fs.cov
    R = specs[0].R
    comb, pos, mus, n_fb, n_uf, fail = kernels.imm_run(
        Fp, Qp, Hp, R, dims, idx, x0, P0, s.mu, s.Pi, zs, pad_var, COND_MAX)
    if n_fb:
        log.warning("IMM mixing fell back to uniform weights %d times", n_fb)
    if n_uf:
        log.warning("IMM likelihoods underflowed on %d steps; probabilities held", n_uf)
    if fail != kernels.OK:
        raise IllConditionedError(f"IMM filter failed at step {fail}", step=int(fail))
    return ImmRun(comb, pos, mus)
