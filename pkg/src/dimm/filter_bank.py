"""One Kalman filter per motion model, all fed the same position stream."""

from __future__ import annotations

import math
from dataclasses import dataclass, replace

import numpy as np

from . import kernels
from .errors import IllConditionedError
from .motion_models import ModelSpec

# Reject S when (max/min Cholesky diagonal)^2, a cheap condition estimate,
# exceeds this.
COND_MAX = 1e14


@dataclass(frozen=True)
class FilterState:
    mean: np.ndarray
    cov: np.ndarray
    last_innovation: np.ndarray = None
    last_innovation_cov: np.ndarray = None
    last_log_likelihood: float = float("nan")

    @property
    def last_likelihood(self) -> float:
        return math.exp(self.last_log_likelihood)


def kf_predict(fs: FilterState, m: ModelSpec) -> FilterState:
    x, P = kernels.kf_predict_core(fs.mean, fs.cov, m.F, m.Q)
    return replace(fs, mean=x, cov=P)


def kf_update(fs: FilterState, m: ModelSpec, z) -> FilterState:
    """Measurement update; raises :class:`IllConditionedError` if S cannot be
    inverted reliably."""
    z = np.asarray(z, dtype=float)
    x, P, y, S, ll, ok = kernels.kf_update_core(fs.mean, fs.cov, m.H, m.R, z, COND_MAX)
    if not ok:
        raise IllConditionedError(f"innovation covariance ill-conditioned for {m.kind}",
                                  model=m.kind)
    return FilterState(mean=x, cov=P, last_innovation=y, last_innovation_cov=S,
                       last_log_likelihood=float(ll))


def position(fs: FilterState, m: ModelSpec) -> np.ndarray:
    return m.H @ fs.mean


@dataclass(frozen=True)
class BankState:
    filters: tuple  # ((ModelSpec, FilterState), ...) in CV, CA, CJ order

    @property
    def specs(self):
        return [m for m, _ in self.filters]

    def positions(self) -> np.ndarray:
        """(3 models, 3 axes) array of current position estimates."""
        return np.array([position(fs, m) for m, fs in self.filters])


def init_filter_state(m: ModelSpec, z0, p0_scale: float) -> FilterState:
    x = np.zeros(m.n)
    x[m.H.argmax(axis=1)] = np.asarray(z0, dtype=float)
    return FilterState(mean=x, cov=p0_scale * np.eye(m.n))


def bank_init(specs, z0, p0_scale: float = 100.0) -> BankState:
    if not p0_scale > 0:
        raise ValueError("p0_scale must be positive")
    return BankState(tuple((m, init_filter_state(m, z0, p0_scale)) for m in specs))


def bank_step(bank: BankState, z) -> tuple[BankState, np.ndarray]:
    out = []
    for m, fs in bank.filters:
        try:
            fs = kf_update(kf_predict(fs, m), m, z)
        except IllConditionedError as exc:
            raise IllConditionedError(str(exc), model=m.kind) from exc
        out.append((m, fs))
    bank = BankState(tuple(out))
    return bank, bank.positions()


def filter_sequence(m: ModelSpec, zs, p0_scale: float = 100.0):
    """Run one filter over a (T, 3) measurement array.

    Returns (means (T, n), positions (T, 3), log-likelihoods (T,)).  Index 0
    is the measurement-anchored initial state.
    """
    zs = np.ascontiguousarray(zs, dtype=float)
    fs = init_filter_state(m, zs[0], p0_scale)
    means, _, ll, fail = kernels.kf_run(m.F, m.Q, m.H, m.R, fs.mean, fs.cov, zs, COND_MAX)
    if fail != kernels.OK:
        raise IllConditionedError(f"{m.kind} filter failed at step {fail}", model=m.kind,
                                  step=int(fail))
    return means, means @ m.H.T, ll


def bank_run(specs, zs, p0_scale: float = 100.0) -> np.ndarray:
    """Per-step positions of every bank filter, shape (T, n_models, 3).

    Equivalent to ``bank_init`` followed by repeated ``bank_step`` but runs in
    the compiled kernel.
    """
    return np.stack([filter_sequence(m, zs, p0_scale)[1] for m in specs], axis=1)
