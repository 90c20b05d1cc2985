"""Fusion MDP: state, reward, and the environments built on the filter bank.

Time step ``k`` works like this.  The state ``s_k`` holds the measurement
window ending at ``z_k``, the bank positions after absorbing ``z_k``, and
the previous fused position.  The action ``a_k`` weights those bank
positions into the fused estimate at ``k``, which is scored against the
truth at ``k`` to give ``r_k``.  The bank then absorbs ``z_{k+1}`` to form
``s_{k+1}``.

:class:`FusionEnv` runs the filters step by step (bank and IMM advance
inside ``step``).  :class:`BatchEnv` replays tracks computed up front by the
whole-sequence kernels.  Neither bank nor IMM depends on the actions, so
both envs see the same positions, and the batched one is what training uses.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass, field

import numpy as np

from ..errors import IllConditionedError
from ..filter_bank import bank_init, bank_run, bank_step
from ..fusion import fuse_with_weights, importance_weights
from ..imm import PAD_VARIANCE, default_transition, imm_init, imm_run, imm_step
from ..motion_models import ModelKind, make_bank_models, make_model

log = logging.getLogger(__name__)

REWARD_MODES = ("hierarchical", "simple")


@dataclass(frozen=True)
class BankConfig:
    """Filter settings shared by the bank, the IMM anchor and every baseline."""

    qs: tuple = (0.03, 0.3, 10.0)     # CV, CA, CJ process-noise intensities
    sigma: float = 5.0                # measurement std assumed by the filters
    p0_scale: float = 100.0
    imm_stay: float = 0.95
    imm_group: str = "cv_ca_cj"       # or "cv_ca_ct"
    ct_turn_rate: float = 0.3
    pad_var: float = PAD_VARIANCE

    def __post_init__(self):
        if len(self.qs) != 3 or min(self.qs) < 0:
            raise ValueError("qs needs three nonnegative intensities")
        if not self.sigma > 0:
            raise ValueError("filter sigma must be positive")
        if self.imm_group not in ("cv_ca_cj", "cv_ca_ct"):
            raise ValueError(f"imm_group must be cv_ca_cj or cv_ca_ct, got {self.imm_group!r}")

    def bank_specs(self, dt):
        return make_bank_models(dt, self.qs, self.sigma)

    def imm_specs(self, dt):
        specs = self.bank_specs(dt)
        if self.imm_group == "cv_ca_ct":
            # the CT model reuses the CV intensity on its velocity states
            specs = specs[:2] + [make_model(ModelKind.ct(self.ct_turn_rate), dt,
                                            self.qs[0], self.sigma)]
        return specs

    def to_dict(self):
        d = {k: getattr(self, k) for k in self.__dataclass_fields__}
        d["qs"] = list(self.qs)
        return d

    @classmethod
    def from_dict(cls, d):
        bad = sorted(set(d) - set(cls.__dataclass_fields__))
        if bad:
            raise ValueError("unknown bank config keys: " + ", ".join(bad))
        d = dict(d)
        if "qs" in d:
            d["qs"] = tuple(d["qs"])
        return cls(**d)


# -- state -----------------------------------------------------------------

@dataclass(frozen=True)
class EnvState:
    window: np.ndarray          # (L + 1, 3), oldest first, current measurement last
    bank_positions: np.ndarray  # (3 models, 3 axes)
    fused_prev: np.ndarray      # (3,)
    n_pad: int = 0              # leading window rows that are zero padding

    @property
    def L(self) -> int:
        return self.window.shape[0] - 1

    def flat(self) -> np.ndarray:
        return np.concatenate([self.window.ravel(), self.bank_positions.ravel(), self.fused_prev])

    @classmethod
    def from_flat(cls, v, L: int, n_pad: int = 0) -> "EnvState":
        v = np.asarray(v, dtype=float)
        if v.shape != (state_dim(L),):
            raise ValueError(f"flat state must have {state_dim(L)} entries, got {v.shape}")
        w = 3 * (L + 1)
        return cls(v[:w].reshape(L + 1, 3), v[w:w + 9].reshape(3, 3), v[w + 9:], n_pad)


def state_dim(L: int) -> int:
    return 3 * (L + 1) + 12


def measurement_window(zs, k: int, L: int):
    """Window of ``L + 1`` rows ending at ``zs[k]``; rows before the start are zero.
    Returns ``(window, n_pad)``."""
    n_pad = max(0, L - k)
    w = np.zeros((L + 1, 3))
    w[n_pad:] = zs[k - (L - n_pad):k + 1]
    return w, n_pad


def signed_log(x):
    return np.sign(x) * np.log1p(np.abs(x))


def features(flat_states, n_pad, L: int, scale: float) -> np.ndarray:
    """Network input from flattened states: (B, 45) -> (B, 3 axes, L + 5).

    Per axis: window, bank positions and previous fused position, all taken
    relative to the CA filter's position, divided by ``scale`` and
    compressed with a signed log.  Padded window rows are replaced by the
    first real measurement so padding does not look like a huge offset.
    """
    S = np.atleast_2d(np.asarray(flat_states, dtype=float))
    B = S.shape[0]
    w = 3 * (L + 1)
    win = S[:, :w].reshape(B, L + 1, 3).copy()
    bank = S[:, w:w + 9].reshape(B, 3, 3)
    fprev = S[:, w + 9:w + 12]
    n_pad = np.broadcast_to(np.asarray(n_pad, dtype=np.int64), (B,))
    if n_pad.any():
        rows = np.maximum(np.arange(L + 1)[None, :], n_pad[:, None])
        win = np.take_along_axis(win, rows[:, :, None], axis=1)
    ref = bank[:, 1][:, None, :]                      # CA position, (B, 1, 3)
    parts = np.concatenate([win, bank, fprev[:, None, :]], axis=1) - ref
    return signed_log(parts.transpose(0, 2, 1) / scale)


# -- reward ----------------------------------------------------------------

def simple_reward(truth, estimate):
    """Negative Euclidean position error; works on batches."""
    return -np.linalg.norm(np.asarray(truth, float) - np.asarray(estimate, float), axis=-1)


def step_reward(truth, fused, imm, mode: str):
    r = simple_reward(truth, fused)
    if mode == "hierarchical":
        return r - simple_reward(truth, imm)
    if mode == "simple":
        return r
    raise ValueError(f"reward mode must be one of {REWARD_MODES}, got {mode!r}")


def _check_action(a, bound):
    a = np.asarray(a, dtype=float)
    if a.shape[-1] != 9:
        raise ValueError(f"action must have 9 entries, got shape {a.shape}")
    if not np.isfinite(a).all() or np.abs(a).max() > bound:
        raise ValueError(f"action outside [-{bound}, {bound}]")
    return a


# -- step-by-step environment ----------------------------------------------

class FusionEnv:
    """One trajectory, filters advanced live.  Mirrors the textbook API."""

    def __init__(self, bank_cfg: BankConfig = BankConfig(), L: int = 10,
                 action_bound: float = 5.0, reward: str = "hierarchical"):
        if reward not in REWARD_MODES:
            raise ValueError(f"reward mode must be one of {REWARD_MODES}, got {reward!r}")
        self.bank_cfg, self.L, self.bound, self.reward_mode = bank_cfg, L, action_bound, reward
        self.active = False

    def reset(self, traj) -> EnvState:
        zs = np.asarray(traj.measurements, dtype=float)
        if len(zs) <= self.L:
            raise ValueError(f"trajectory of length {len(zs)} is not longer than window L={self.L}")
        self.traj, self.zs, self.truth = traj, zs, traj.positions
        self.k = 0
        self.bank = bank_init(self.bank_cfg.bank_specs(traj.dt), zs[0], self.bank_cfg.p0_scale)
        specs = self.bank_cfg.imm_specs(traj.dt)
        self.imm = imm_init(specs, zs[0], self.bank_cfg.p0_scale,
                            default_transition(len(specs), self.bank_cfg.imm_stay),
                            pad_var=self.bank_cfg.pad_var)
        self.imm_pos = self.imm.combined_position()
        self.fused_prev = zs[0].copy()
        self.active = True
        self.state = self._state(self.bank.positions())
        return self.state

    def _state(self, bank_pos) -> EnvState:
        w, n_pad = measurement_window(self.zs, self.k, self.L)
        return EnvState(w, bank_pos, self.fused_prev.copy(), n_pad)

    def step(self, a):
        """Returns ``(next_state, reward, done, info)``."""
        if not self.active:
            raise RuntimeError("env_step on an inactive environment; call reset first")
        a = _check_action(a, self.bound)
        k = self.k
        W = importance_weights(a)
        fused = fuse_with_weights(W, self.state.bank_positions)
        truth = self.truth[k]
        r = float(step_reward(truth, fused, self.imm_pos, self.reward_mode))
        info = {"k": k, "fused": fused, "imm": self.imm_pos.copy(), "W": W}
        self.fused_prev = fused
        if k + 1 >= len(self.zs):
            self.active = False
            return self.state, r, True, info
        try:
            self.bank, bank_pos = bank_step(self.bank, self.zs[k + 1])
            self.imm, self.imm_pos = imm_step(self.imm, self.zs[k + 1])
        except IllConditionedError as exc:
            log.warning("filter failure at step %d ends the episode: %s", k + 1, exc)
            self.active = False
            info["failure"] = str(exc)
            return self.state, 0.0, True, info
        self.k = k + 1
        self.state = self._state(bank_pos)
        return self.state, r, False, info


# -- precomputed tracks ----------------------------------------------------

@dataclass
class Track:
    """Everything the agent needs from one trajectory, computed once."""

    zs: np.ndarray        # (T, 3)
    truth: np.ndarray     # (T, 3)
    bank: np.ndarray      # (T, 3 models, 3 axes)
    imm: np.ndarray       # (T, 3)
    flat: np.ndarray = field(repr=False, default=None)   # (T, state_dim) without fused_prev
    n_pad: np.ndarray = field(repr=False, default=None)

    def __len__(self):
        return len(self.zs)


def make_track(traj, bank_cfg: BankConfig, L: int) -> Track:
    zs = np.asarray(traj.measurements, dtype=float)
    if len(zs) <= L:
        raise ValueError(f"trajectory of length {len(zs)} is not longer than window L={L}")
    bank = bank_run(bank_cfg.bank_specs(traj.dt), zs, bank_cfg.p0_scale)
    specs = bank_cfg.imm_specs(traj.dt)
    imm = imm_run(specs, zs, bank_cfg.p0_scale, default_transition(len(specs), bank_cfg.imm_stay),
                  pad_var=bank_cfg.pad_var).combined
    T = len(zs)
    flat = np.zeros((T, state_dim(L)))
    n_pad = np.zeros(T, dtype=np.int64)
    w = 3 * (L + 1)
    for k in range(T):
        win, n_pad[k] = measurement_window(zs, k, L)
        flat[k, :w] = win.ravel()
        flat[k, w:w + 9] = bank[k].ravel()
    return Track(zs, np.asarray(traj.positions, dtype=float), bank, imm, flat, n_pad)


class BatchEnv:
    """Lockstep rollout over several precomputed tracks.

    Tracks may differ in length; finished ones are masked out.
    """

    def __init__(self, tracks, L: int, action_bound: float, reward: str):
        if reward not in REWARD_MODES:
            raise ValueError(f"reward mode must be one of {REWARD_MODES}, got {reward!r}")
        self.tracks, self.L, self.bound, self.reward_mode = list(tracks), L, action_bound, reward
        self.T = np.array([len(t) for t in self.tracks])
        self.k = 0
        self.fused_prev = np.stack([t.zs[0] for t in self.tracks])

    @property
    def active(self) -> np.ndarray:
        return self.k < self.T

    def states(self):
        """Flattened states and pad counts of the active envs."""
        idx = np.nonzero(self.active)[0]
        flat = np.stack([self.tracks[i].flat[self.k] for i in idx])
        flat[:, -3:] = self.fused_prev[idx]
        return idx, flat, np.array([self.tracks[i].n_pad[self.k] for i in idx])

    def step(self, idx, actions):
        """Apply actions for the envs in ``idx``.

        Returns (fused, rewards, next_flat, next_pad, done, W).
        """
        actions = _check_action(actions, self.bound)
        k = self.k
        bank = np.stack([self.tracks[i].bank[k] for i in idx])
        W = importance_weights(actions)
        fused = fuse_with_weights(W, bank)
        truth = np.stack([self.tracks[i].truth[k] for i in idx])
        imm = np.stack([self.tracks[i].imm[k] for i in idx])
        r = step_reward(truth, fused, imm, self.reward_mode)
        self.fused_prev[idx] = fused
        done = (k + 1) >= self.T[idx]
        nxt = np.stack([self.tracks[i].flat[min(k + 1, len(self.tracks[i]) - 1)] for i in idx])
        nxt[:, -3:] = fused
        npad = np.array([self.tracks[i].n_pad[min(k + 1, len(self.tracks[i]) - 1)] for i in idx])
        self.k += 1
        return fused, r, nxt, npad, done, W
