"""Position-error metrics and per-method reports.

MSE is the mean over steps of the squared Euclidean position error
``||p - p_hat||^2``; MAE is the mean of ``||p - p_hat||``.  The first
``warmup`` steps of each trajectory are skipped for every method alike, so
filter start-up transients do not dominate the comparison.  A method's
aggregate is the plain mean over trajectories.
"""

from __future__ import annotations

import csv
from dataclasses import dataclass, field

import numpy as np

EVAL_WARMUP = 20

HEADER = ("MSE = mean over steps of ||p - p_hat||_2^2; MAE = mean over steps of ||p - p_hat||_2; "
          "first {warmup} steps of each trajectory excluded; aggregate = mean over trajectories")


def position_errors(truth, estimate, warmup: int = EVAL_WARMUP) -> np.ndarray:
    truth = np.asarray(truth, dtype=float)
    estimate = np.asarray(estimate, dtype=float)
    if truth.shape != estimate.shape:
        raise ValueError(f"shape mismatch {truth.shape} vs {estimate.shape}")
    if warmup >= len(truth):
        raise ValueError(f"warmup {warmup} leaves no steps of a {len(truth)}-step trajectory")
    return np.linalg.norm(truth[warmup:] - estimate[warmup:], axis=-1)


def mse_mae(truth, estimate, warmup: int = EVAL_WARMUP) -> tuple[float, float]:
    e = position_errors(truth, estimate, warmup)
    return float(np.mean(e * e)), float(np.mean(e))


@dataclass
class MetricReport:
    method: str
    warmup: int = EVAL_WARMUP
    rows: list = field(default_factory=list)   # (trajectory id, mse, mae)

    def add(self, traj_id, truth, estimate):
        m, a = mse_mae(truth, estimate, self.warmup)
        self.rows.append((traj_id, m, a))

    @property
    def mse(self) -> float:
        return float(np.mean([r[1] for r in self.rows]))

    @property
    def mae(self) -> float:
        return float(np.mean([r[2] for r in self.rows]))

    def header(self) -> str:
        return HEADER.format(warmup=self.warmup)

    def summary(self) -> dict:
        return {"method": self.method, "mse": self.mse, "mae": self.mae,
                "n_trajectories": len(self.rows), "warmup": self.warmup}

    def write_csv(self, path):
        with open(path, "w", newline="") as fh:
            fh.write(f"# {self.header()}\n")
            w = csv.writer(fh)
            w.writerow(["trajectory", "method", "mse", "mae"])
            for tid, m, a in sorted(self.rows, key=lambda r: r[0]):
                w.writerow([tid, self.method, repr(m), repr(a)])
            w.writerow(["mean", self.method, repr(self.mse), repr(self.mae)])
