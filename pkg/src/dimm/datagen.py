"""Synthetic trajectories: Markov-switching CV/CA/CJ/CT motion and Lorenz-63.

Truth is kept in a 12-entry axis-major layout ``[p, v, a, j]`` per axis.
Entries a segment's model does not carry (acceleration for CV/CT, jerk for
CV/CA/CT) are held at zero and flagged absent.
"""

from __future__ import annotations

import hashlib
import json
import logging
from dataclasses import asdict, dataclass, field
from pathlib import Path
from typing import Optional

import numpy as np

from . import kernels
from .errors import DataFormatError, DivergenceError
from .motion_models import (CA, CJ, CV, GroundTruthState, ModelKind, axis_process_noise_block,
                            transition_matrix)

log = logging.getLogger(__name__)

GEN_KINDS = ("CV", "CA", "CJ", "CT")
_ORDER = {"CV": 2, "CA": 3, "CJ": 4, "CT": 2}


def switching_matrix(mean_segment_length: float, n: int = 4) -> np.ndarray:
    """Markov matrix whose sojourn times are geometric with the given mean."""
    if mean_segment_length < 1:
        raise ValueError("mean segment length must be >= 1 step")
    stay = 1.0 - 1.0 / mean_segment_length
    Pi = np.full((n, n), (1.0 - stay) / (n - 1))
    np.fill_diagonal(Pi, stay)
    return Pi


def cruise_switching_matrix(cruise_len: float, maneuver_len: float) -> np.ndarray:
    """CV cruise that occasionally enters a CA/CJ/CT maneuver and always
    returns to CV afterwards.  Both sojourns are geometric with the given
    means (in steps)."""
    if cruise_len < 1 or maneuver_len < 1:
        raise ValueError("mean segment lengths must be >= 1 step")
    s = 1.0 - 1.0 / cruise_len
    m = 1.0 - 1.0 / maneuver_len
    Pi = np.zeros((4, 4))
    Pi[0] = [s, (1 - s) / 3, (1 - s) / 3, (1 - s) / 3]
    for i in range(1, 4):
        Pi[i, 0] = 1.0 - m
        Pi[i, i] = m
    return Pi


@dataclass
class GenConfig:
    dt: float = 0.1
    length: int = 500
    sigma_meas: float = 5.0
    Pi_gen: list = field(default_factory=lambda: cruise_switching_matrix(200.0, 40.0).tolist())
    start_probs: list = field(default_factory=lambda: [1.0, 0.0, 0.0, 0.0])
    speed_range: tuple = (5.0, 20.0)
    accel_range: tuple = (0.5, 3.0)
    jerk_range: tuple = (0.2, 1.5)
    turn_rate_range: tuple = (0.1, 0.5)
    # probability that an axis receives a nonzero acceleration / jerk draw
    axis_active_prob: float = 0.3
    # white-noise intensities on the highest carried derivative while generating
    q_gen: dict = field(default_factory=lambda: {"CV": 0.0, "CA": 0.0, "CJ": 0.0, "CT": 0.0})

    def __post_init__(self):
        self.validate()

    def validate(self):
        Pi = np.asarray(self.Pi_gen, dtype=float)
        if Pi.shape != (4, 4) or (Pi < 0).any() or np.abs(Pi.sum(axis=1) - 1).max() > 1e-9:
            raise ValueError("Pi_gen must be a 4x4 row-stochastic matrix")
        sp = np.asarray(self.start_probs, dtype=float)
        if sp.shape != (4,) or (sp < 0).any() or abs(sp.sum() - 1) > 1e-9:
            raise ValueError("start_probs must be a probability vector over CV, CA, CJ, CT")
        for name in ("speed_range", "accel_range", "jerk_range", "turn_rate_range"):
            lo, hi = getattr(self, name)
            if not (0 <= lo <= hi):
                raise ValueError(f"{name} must satisfy 0 <= lo <= hi")
        if self.turn_rate_range[0] <= 0:
            raise ValueError("turn rates must be bounded away from zero")
        if self.sigma_meas < 0:
            raise ValueError("sigma_meas must be nonnegative")
        if not self.dt > 0 or self.length < 1:
            raise ValueError("dt must be positive and length >= 1")
        if not 0.0 <= self.axis_active_prob <= 1.0:
            raise ValueError("axis_active_prob must lie in [0, 1]")
        unknown = set(self.q_gen) - set(GEN_KINDS)
        if unknown or any(v < 0 for v in self.q_gen.values()):
            raise ValueError(f"bad q_gen entries: {sorted(unknown) or self.q_gen}")

    def to_dict(self) -> dict:
        d = asdict(self)
        for k, v in d.items():
            if isinstance(v, tuple):
                d[k] = list(v)
        return d

    @classmethod
    def from_dict(cls, d: dict) -> "GenConfig":
        known = set(cls.__dataclass_fields__)
        bad = sorted(set(d) - known)
        if bad:
            raise ValueError("unknown config keys: " + ", ".join(bad))
        d = dict(d)
        for k in ("speed_range", "accel_range", "jerk_range", "turn_rate_range"):
            if k in d:
                d[k] = tuple(d[k])
        if "q_gen" in d:
            d["q_gen"] = {**{k: 0.0 for k in GEN_KINDS}, **d["q_gen"]}
        return cls(**d)

    def hash(self) -> str:
        blob = json.dumps(self.to_dict(), sort_keys=True).encode()
        return hashlib.sha256(blob).hexdigest()[:16]


@dataclass
class Trajectory:
    dt: float
    truth: np.ndarray          # (T, 12): per axis [p, v, a, j]
    labels: list               # ModelKind (or None for unlabelled generators) per step
    measurements: np.ndarray   # (T, 3)
    seed: int
    generator_tag: str
    config_hash: str = ""

    def __len__(self):
        return len(self.measurements)

    @property
    def positions(self) -> np.ndarray:
        return self.truth[:, 0::4]

    @property
    def velocities(self) -> np.ndarray:
        return self.truth[:, 1::4]

    def state(self, k: int) -> GroundTruthState:
        lab = self.labels[k]
        order = lab.axis_order if lab is not None else 2
        return GroundTruthState(
            position=self.truth[k, 0::4].copy(),
            velocity=self.truth[k, 1::4].copy(),
            acceleration=self.truth[k, 2::4].copy() if order >= 3 else None,
            jerk=self.truth[k, 3::4].copy() if order >= 4 else None,
            model_label=lab,
        )

    def steps(self):
        for k in range(len(self)):
            yield self.state(k), self.measurements[k]


def _signed(rng, lo, hi, size=None):
    mag = rng.uniform(lo, hi, size=size)
    return mag * rng.choice((-1.0, 1.0), size=size)


def _sample_labels(rng, Pi, start, T):
    u = rng.random(T)
    cum = np.cumsum(Pi, axis=1)
    labels = np.empty(T, dtype=np.int64)
    labels[0] = min(int(np.searchsorted(np.cumsum(start), u[0], side="right")), 3)
    for k in range(1, T):
        labels[k] = min(int(np.searchsorted(cum[labels[k - 1]], u[k], side="right")), 3)
    return labels


def gen_multi_model(cfg: GenConfig, seed: int) -> Trajectory:
    """Markov-switching trajectory.

    Each step's model is drawn from ``Pi_gen`` given the previous step's.  On
    entering a segment, acceleration (CA), jerk (CJ) or turn rate (CT) is
    drawn afresh from the configured ranges; position and velocity stay
    continuous.
    """
    cfg.validate()
    rng = np.random.default_rng(seed)
    T, dt = cfg.length, cfg.dt
    Pi = np.asarray(cfg.Pi_gen, dtype=float)
    lab = _sample_labels(rng, Pi, np.asarray(cfg.start_probs, dtype=float), T)
    meas_noise = rng.standard_normal((T, 3))

    F_poly = transition_matrix(CJ, dt)
    proc_noise = rng.standard_normal((T, 12))
    noise_factor = {name: _noise_factor(name, dt, cfg.q_gen.get(name, 0.0)) for name in GEN_KINDS}

    truth = np.zeros((T, 12))
    labels = []
    x = np.zeros(12)
    direction = rng.standard_normal(3)
    x[1::4] = rng.uniform(*cfg.speed_range) * direction / np.linalg.norm(direction)
    F = F_poly
    for k in range(T):
        name = GEN_KINDS[lab[k]]
        if k == 0 or lab[k] != lab[k - 1]:
            x, omega = _enter_segment(rng, cfg, x, name)
            if name == "CT":
                kind = ModelKind.ct(omega)
                F = _embed_ct(transition_matrix(kind, dt))
            else:
                kind = {"CV": CV, "CA": CA, "CJ": CJ}[name]
                F = F_poly
        if k > 0:
            x = F @ x + noise_factor[name] @ proc_noise[k]
            _zero_absent(x, name)
        truth[k] = x
        labels.append(kind)
    meas = truth[:, 0::4] + cfg.sigma_meas * meas_noise
    return Trajectory(dt=dt, truth=truth, labels=labels, measurements=meas, seed=int(seed),
                      generator_tag="multi_model", config_hash=cfg.hash())


def _enter_segment(rng, cfg, x, name):
    """Redraw the derivatives a new segment starts with; returns (x, turn_rate).

    Position and velocity are never touched.  When the speed has drifted out
    of ``speed_range`` the new acceleration/jerk signs are chosen to push it
    back (decelerate when too fast, accelerate when too slow).
    """
    x = x.copy()
    active = rng.random(3) < cfg.axis_active_prob
    v = x[1::4]
    sp = np.linalg.norm(v)
    lo, hi = cfg.speed_range
    steer = np.where(v >= 0, 1.0, -1.0)
    if sp > hi:
        steer = -steer
    elif sp >= lo:
        steer = None
    omega = 0.0
    if name in ("CA", "CJ"):
        rng_lo, rng_hi = cfg.accel_range if name == "CA" else cfg.jerk_range
        draw = _signed(rng, rng_lo, rng_hi, size=3)
        if steer is not None:
            draw = np.abs(draw) * steer
        x[2 if name == "CA" else 3::4] = draw * active
    elif name == "CT":
        omega = float(_signed(rng, *cfg.turn_rate_range))
    _zero_absent(x, name)
    return x, omega


def _embed_ct(F6):
    F = np.zeros((12, 12))
    for r in range(3):
        for c in range(3):
            F[r * 4:r * 4 + 2, c * 4:c * 4 + 2] = F6[r * 2:r * 2 + 2, c * 2:c * 2 + 2]
    return F


def _noise_factor(name, dt, q):
    """L with L @ L.T equal to the model's process noise, in the 12-layout."""
    o = _ORDER[name]
    w, V = np.linalg.eigh(axis_process_noise_block(o, dt, q))
    Lb = V * np.sqrt(np.clip(w, 0.0, None))
    L = np.zeros((12, 12))
    for a in range(3):
        L[a * 4:a * 4 + o, a * 4:a * 4 + o] = Lb
    return L


def _zero_absent(x, name):
    o = _ORDER[name]
    for d in range(o, 4):
        x[d::4] = 0.0
LORENZ_SIGMA = 10.0
LORENZ_RHO = 28.0
LORENZ_BETA = 8.0 / 3.0
LORENZ_BOUND = 1e6


def lorenz_states(x0, dt: float, steps: int) -> np.ndarray:
    """Noise-free RK4 integration of the canonical chaotic Lorenz-63 system."""
    if not 0 < dt <= 0.05:
        raise ValueError("Lorenz dt must lie in (0, 0.05]")
    x0 = np.asarray(x0, dtype=float)
    states, fail = kernels.lorenz_rk4(x0, float(dt), int(steps), LORENZ_SIGMA, LORENZ_RHO,
                                      LORENZ_BETA, LORENZ_BOUND)
    if fail != kernels.OK:
        raise DivergenceError(f"Lorenz integration left |x| <= {LORENZ_BOUND:g} at step {fail}; "
                              f"last state {states[fail].tolist()}")
    return states


def lorenz_trajectory(x0, dt: float, steps: int, sigma_meas: float, seed: int = 0) -> Trajectory:
    states = lorenz_states(x0, dt, steps)
    vel = np.array([kernels.lorenz_deriv(s, LORENZ_SIGMA, LORENZ_RHO, LORENZ_BETA)
                    for s in states]).reshape(-1, 3)
    truth = np.zeros((steps, 12))
    truth[:, 0::4] = states
    truth[:, 1::4] = vel
    rng = np.random.default_rng(seed)
    meas = states + sigma_meas * rng.standard_normal((steps, 3))
    return Trajectory(dt=float(dt), truth=truth, labels=[None] * steps, measurements=meas,
                      seed=int(seed), generator_tag="lorenz")


# ---------------------------------------------------------------------------
# dataset files

FORMAT_HEADER = "# dimm-dataset v1"
COLUMNS = ("t", "px", "py", "pz", "vx", "vy", "vz", "ax", "ay", "az", "jx", "jy", "jz",
           "model_label", "zx", "zy", "zz")


def _fmt(v: float) -> str:
    return format(float(v), ".17g")


def _label_str(kind: Optional[ModelKind]) -> str:
    if kind is None:
        return "-"
    if kind.name == "CT":
        return "CT:" + _fmt(kind.turn_rate)
    return kind.name


def _parse_label(s: str) -> Optional[ModelKind]:
    if s == "-":
        return None
    if s.startswith("CT:"):
        return ModelKind.ct(float(s[3:]))
    return ModelKind(s)


def write_dataset(trajs, path) -> None:
    """Line-oriented text format; floats use 17 significant digits so a
    read-back is value-exact.  Absent derivative blocks are empty fields."""
    lines = [FORMAT_HEADER, f"# trajectories={len(trajs)}"]
    for tr in trajs:
        lines.append(f"@trajectory dt={_fmt(tr.dt)} seed={tr.seed} generator_tag={tr.generator_tag} "
                     f"config_hash={tr.config_hash or '-'} length={len(tr)}")
        lines.append(",".join(COLUMNS))
        for k in range(len(tr)):
            lab = tr.labels[k]
            order = lab.axis_order if lab is not None else 2
            x = tr.truth[k]
            cells = [_fmt(k * tr.dt)]
            for d in range(4):
                if d < order:
                    cells += [_fmt(x[a * 4 + d]) for a in range(3)]
                else:
                    cells += ["", "", ""]
            cells.append(_label_str(lab))
            cells += [_fmt(v) for v in tr.measurements[k]]
            lines.append(",".join(cells))
        lines.append("@end")
    Path(path).write_text("\n".join(lines) + "\n")


def _parse_header(line, lineno):
    fields = {}
    for tok in line.split()[1:]:
        if "=" not in tok:
            raise DataFormatError(f"bad header token {tok!r}", lineno)
        k, v = tok.split("=", 1)
        fields[k] = v
    missing = {"dt", "seed", "generator_tag", "config_hash", "length"} - set(fields)
    if missing:
        raise DataFormatError(f"header missing {sorted(missing)}", lineno)
    return fields


def read_dataset(path, expected_config_hash: Optional[str] = None) -> list:
    lines = Path(path).read_text().split("\n")
    if lines and lines[-1] == "":
        lines.pop()
    if not lines or lines[0] != FORMAT_HEADER:
        raise DataFormatError("not a dimm dataset (bad magic line)", 1)
    trajs = []
    i = 1
    n_expected = None
    while i < len(lines):
        line = lines[i]
        lineno = i + 1
        if line.startswith("# trajectories="):
            n_expected = int(line.split("=", 1)[1])
            i += 1
            continue
        if line.startswith("#") or not line.strip():
            i += 1
            continue
        if not line.startswith("@trajectory"):
            raise DataFormatError(f"expected '@trajectory', got {line[:40]!r}", lineno)
        h = _parse_header(line, lineno)
        T = int(h["length"])
        if i + 1 >= len(lines) or lines[i + 1] != ",".join(COLUMNS):
            raise DataFormatError("missing or wrong column header", i + 2)
        truth = np.zeros((T, 12))
        meas = np.zeros((T, 3))
        labels = []
        for k in range(T):
            j = i + 2 + k
            if j >= len(lines) or lines[j] == "@end":
                raise DataFormatError(f"trajectory truncated after {k} of {T} rows", j + 1)
            cells = lines[j].split(",")
            if len(cells) != len(COLUMNS):
                raise DataFormatError(f"expected {len(COLUMNS)} fields, got {len(cells)}", j + 1)
            try:
                for d in range(4):
                    for a in range(3):
                        c = cells[1 + d * 3 + a]
                        truth[k, a * 4 + d] = float(c) if c else 0.0
                labels.append(_parse_label(cells[13]))
                meas[k] = [float(c) for c in cells[14:17]]
            except ValueError as exc:
                raise DataFormatError(str(exc), j + 1) from None
        end = i + 2 + T
        if end >= len(lines) or lines[end] != "@end":
            raise DataFormatError("missing '@end' marker", end + 1)
        chash = "" if h["config_hash"] == "-" else h["config_hash"]
        if expected_config_hash is not None and chash != expected_config_hash:
            log.warning("dataset config hash %s does not match expected %s", chash,
                        expected_config_hash)
        trajs.append(Trajectory(dt=float(h["dt"]), truth=truth, labels=labels, measurements=meas,
                                seed=int(h["seed"]), generator_tag=h["generator_tag"],
                                config_hash=chash))
        i = end + 1
    if n_expected is not None and n_expected != len(trajs):
        raise DataFormatError(f"header announces {n_expected} trajectories, found {len(trajs)}",
                              len(lines))
    return trajs


def generate_dataset(cfg: GenConfig, n: int, seed: int) -> list:
    """``n`` trajectories with per-trajectory seeds derived from ``seed``."""
    seeds = np.random.SeedSequence(seed).generate_state(n)
    return [gen_multi_model(cfg, int(s)) for s in seeds]
