"""Discretized linear motion models.

All state vectors are stored axis-major: ``[x, vx, (ax), (jx), y, ..., z, ...]``
so that the CV/CA/CJ transition matrices are literally block diagonal with one
identical block per axis.  The coordinated-turn model (CT) couples the x and y
blocks and is only used to generate data.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Optional

import numpy as np

AXES = ("x", "y", "z")

_ORDER = {"CV": 2, "CA": 3, "CJ": 4, "CT": 2}
CT_MIN_TURN_RATE = 1e-9


@dataclass(frozen=True)
class ModelKind:
    """Motion model family; ``turn_rate`` is only meaningful for CT."""

    name: str
    turn_rate: Optional[float] = None

    def __post_init__(self):
        if self.name not in _ORDER:
            raise ValueError(f"unknown model kind {self.name!r}")
        if self.name == "CT":
            if self.turn_rate is None or not math.isfinite(self.turn_rate) or self.turn_rate == 0.0:
                raise ValueError("CT needs a finite nonzero turn rate")
        elif self.turn_rate is not None:
            raise ValueError(f"{self.name} takes no turn rate")

    @classmethod
    def ct(cls, turn_rate: float) -> "ModelKind":
        return cls("CT", float(turn_rate))

    @property
    def axis_order(self) -> int:
        """Number of state entries per axis (position plus derivatives)."""
        return _ORDER[self.name]

    @property
    def state_dim(self) -> int:
        return 3 * self.axis_order

    def __str__(self):
        return self.name if self.turn_rate is None else f"CT({self.turn_rate:g})"


CV = ModelKind("CV")
CA = ModelKind("CA")
CJ = ModelKind("CJ")
BANK_KINDS = (CV, CA, CJ)


def _check_dt(dt):
    if not dt > 0:
        raise ValueError(f"dt must be positive, got {dt}")


def axis_transition_block(order: int, dt: float) -> np.ndarray:
    """Polynomial kinematics block: entry (i, j) = dt**(j-i) / (j-i)!."""
    blk = np.zeros((order, order))
    for i in range(order):
        for j in range(i, order):
            blk[i, j] = dt ** (j - i) / math.factorial(j - i)
    return blk


def axis_process_noise_block(order: int, dt: float, q: float) -> np.ndarray:
    """Continuous white noise of intensity ``q`` on the derivative above the
    highest modelled one, integrated exactly over ``dt``."""
    blk = np.empty((order, order))
    top = order - 1
    for i in range(order):
        for j in range(order):
            p = 2 * top - i - j + 1
            blk[i, j] = dt ** p / (math.factorial(top - i) * math.factorial(top - j) * p)
    return q * blk


def _block_diag3(blk: np.ndarray) -> np.ndarray:
    o = blk.shape[0]
    out = np.zeros((3 * o, 3 * o))
    for a in range(3):
        out[a * o:(a + 1) * o, a * o:(a + 1) * o] = blk
    return out


def transition_matrix(kind: ModelKind, dt: float) -> np.ndarray:
    if not (dt >= 0 and math.isfinite(dt)):
        raise ValueError(f"dt must be nonnegative, got {dt}")
    if kind.name != "CT" or abs(kind.turn_rate) < CT_MIN_TURN_RATE:
        return _block_diag3(axis_transition_block(kind.axis_order, dt))
    w = kind.turn_rate
    s, c = math.sin(w * dt), math.cos(w * dt)
    F = _block_diag3(axis_transition_block(2, dt))
    # x block rows 0-1, y block rows 2-3
    F[0, :4] = [1.0, s / w, 0.0, -(1.0 - c) / w]
    F[1, :4] = [0.0, c, 0.0, -s]
    F[2, :4] = [0.0, (1.0 - c) / w, 1.0, s / w]
    F[3, :4] = [0.0, s, 0.0, c]
    return F


def process_noise(kind: ModelKind, dt: float, q: float) -> np.ndarray:
    _check_dt(dt)
    if q < 0:
        raise ValueError(f"noise intensity must be nonnegative, got {q}")
    return _block_diag3(axis_process_noise_block(kind.axis_order, dt, q))


def position_indices(kind: ModelKind) -> np.ndarray:
    return np.arange(3) * kind.axis_order


def measurement_model(kind: ModelKind, sigma: float) -> tuple[np.ndarray, np.ndarray]:
    """Position selector ``H`` and isotropic noise ``R = sigma**2 I``."""
    if not sigma > 0:
        raise ValueError(f"sigma must be positive, got {sigma}")
    H = np.zeros((3, kind.state_dim))
    H[np.arange(3), position_indices(kind)] = 1.0
    return H, sigma ** 2 * np.eye(3)


@dataclass(frozen=True)
class ModelSpec:
    kind: ModelKind
    dt: float
    F: np.ndarray = field(repr=False)
    Q: np.ndarray = field(repr=False)
    H: np.ndarray = field(repr=False)
    R: np.ndarray = field(repr=False)
    q: float = 0.0

    @property
    def n(self) -> int:
        return self.F.shape[0]

    @property
    def axis_order(self) -> int:
        return self.kind.axis_order


def make_model(kind: ModelKind, dt: float, q: float, sigma: float) -> ModelSpec:
    F = transition_matrix(kind, dt)
    _check_dt(dt)
    Q = process_noise(kind, dt, q)
    H, R = measurement_model(kind, sigma)
    return ModelSpec(kind=kind, dt=float(dt), F=F, Q=Q, H=H, R=R, q=float(q))


def make_bank_models(dt: float, qs, sigma: float) -> list[ModelSpec]:
    """CV, CA, CJ specs in that order; ``qs`` is one intensity per model."""
    qs = tuple(qs)
    if len(qs) != 3:
        raise ValueError("need one process-noise intensity per bank model")
    return [make_model(k, dt, q, sigma) for k, q in zip(BANK_KINDS, qs)]


@dataclass
class GroundTruthState:
    position: np.ndarray
    velocity: np.ndarray
    model_label: ModelKind
    acceleration: Optional[np.ndarray] = None
    jerk: Optional[np.ndarray] = None
