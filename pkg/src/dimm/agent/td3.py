"""TD3 learner for the fusion weights, plus training and evaluation loops."""

from __future__ import annotations

import json
import logging
import math
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from ..errors import TrainingAborted
from ..metrics import EVAL_WARMUP, mse_mae
from ..nn import Adam, Graph, load_params, save_params
from .env import REWARD_MODES, BankConfig, BatchEnv, features, make_track, state_dim
from .networks import Actor, Critic, NetShape
from .replay import ReplayBuffer

log = logging.getLogger(__name__)


@dataclass
class Td3Config:
    gamma: float = 0.99
    tau: float = 0.005
    policy_delay: int = 2
    target_noise: float = 0.2
    target_clip: float = 0.5
    explore_noise: float = 0.1      # std as a fraction of the action bound
    batch: int = 256
    capacity: int = 100_000
    lr_actor: float = 3e-4
    lr_critic: float = 1e-3
    action_bound: float = 5.0
    window: int = 10
    width: int = 64
    heads: int = 4
    blocks: int = 2
    hidden: int = 64
    warmup: int = 1000              # transitions collected before the first update
    n_envs: int = 16                # trajectories rolled out in lockstep
    updates_per_step: int = 1       # gradient updates per lockstep env step
    reward: str = "hierarchical"
    reward_scale: float | None = None   # None: 1 / filter sigma
    eval_every: int = 5             # rounds between validation passes
    seed: int = 0

    def __post_init__(self):
        self.validate()

    def validate(self):
        if not 0.0 <= self.gamma < 1.0:
            raise ValueError("gamma must lie in [0, 1)")
        if not 0.0 < self.tau <= 1.0:
            raise ValueError("tau must lie in (0, 1]")
        if not self.action_bound > 0:
            raise ValueError("action bound must be positive")
        if self.policy_delay < 1 or self.batch < 1 or self.n_envs < 1 or self.updates_per_step < 1:
            raise ValueError("policy_delay, batch, n_envs and updates_per_step must be >= 1")
        if self.warmup < self.batch:
            raise ValueError("warmup must be at least one batch")
        if self.capacity < self.warmup:
            raise ValueError("capacity must hold the warmup transitions")
        if self.reward not in REWARD_MODES:
            raise ValueError(f"reward must be one of {REWARD_MODES}")
        if min(self.target_noise, self.target_clip, self.explore_noise) < 0:
            raise ValueError("noise settings must be nonnegative")
        if self.width % self.heads:
            raise ValueError("attention width must be divisible by the head count")

    @property
    def net_shape(self) -> NetShape:
        return NetShape(self.window, self.width, self.heads, self.blocks, self.hidden,
                        self.action_bound)

    def to_dict(self):
        return {k: getattr(self, k) for k in self.__dataclass_fields__}

    @classmethod
    def from_dict(cls, d):
        bad = sorted(set(d) - set(cls.__dataclass_fields__))
        if bad:
            raise ValueError("unknown td3 config keys: " + ", ".join(bad))
        return cls(**d)


def _copy_into(dst_store, src_store):
    for (_, d), (_, s) in zip(dst_store.items(), src_store.items()):
        d.value = s.value.copy()


class Td3Agent:
    """Online and target networks, optimizers and noise streams."""

    def __init__(self, cfg: Td3Config, bank_cfg: BankConfig = BankConfig()):
        self.cfg, self.bank_cfg = cfg, bank_cfg
        self.scale = bank_cfg.sigma
        self.reward_scale = cfg.reward_scale if cfg.reward_scale is not None else 1.0 / bank_cfg.sigma
        ss = np.random.SeedSequence(cfg.seed)
        s_actor, s_c1, s_c2, s_noise, s_buf, s_sched = ss.spawn(6)
        shape = cfg.net_shape
        self.actor = Actor(shape, np.random.default_rng(s_actor))
        self.critic1 = Critic(shape, np.random.default_rng(s_c1), prefix="critic1")
        self.critic2 = Critic(shape, np.random.default_rng(s_c2), prefix="critic2")
        self.actor_t = Actor(shape, np.random.default_rng(0))
        self.critic1_t = Critic(shape, np.random.default_rng(0), prefix="critic1")
        self.critic2_t = Critic(shape, np.random.default_rng(0), prefix="critic2")
        for t, o in ((self.actor_t, self.actor), (self.critic1_t, self.critic1),
                     (self.critic2_t, self.critic2)):
            _copy_into(t.store, o.store)
        self.opt_actor = Adam(self.actor.store, cfg.lr_actor)
        self.opt_critic = Adam(list(self.critic1.store) + list(self.critic2.store), cfg.lr_critic)
        self.noise_rng = np.random.default_rng(s_noise)
        self.buffer_seed = int(s_buf.generate_state(1)[0])
        self.schedule_rng = np.random.default_rng(s_sched)
        self.n_updates = 0

    def features(self, flat, n_pad):
        return features(flat, n_pad, self.cfg.window, self.scale)

    def act(self, flat, n_pad, explore: bool = False) -> np.ndarray:
        a = self.actor.act(self.features(flat, n_pad))
        if explore:
            A = self.cfg.action_bound
            a = np.clip(a + self.noise_rng.normal(0.0, self.cfg.explore_noise * A, a.shape), -A, A)
        return a


def polyak(target_store, online_store, tau: float):
    for (_, t), (_, o) in zip(target_store.items(), online_store.items()):
        t.value = (1.0 - tau) * t.value + tau * o.value


def td3_targets(agent: Td3Agent, b: dict) -> dict:
    """Critic regression targets ``y = r + gamma (1 - done) min(Q1', Q2')``
    for a sampled batch, with the smoothed, re-clipped target action.

    With ``gamma = 0`` the target networks are not evaluated at all.
    """
    cfg = agent.cfg
    r = b["r"] * agent.reward_scale
    if cfg.gamma == 0.0:
        return {"y": r}
    f2 = agent.features(b["s2"], b["s2_pad"])
    A = cfg.action_bound
    noise = np.clip(agent.noise_rng.normal(0.0, cfg.target_noise, b["a"].shape),
                    -cfg.target_clip, cfg.target_clip)
    a2 = np.clip(agent.actor_t.act(f2) + noise, -A, A)
    q1, q2 = agent.critic1_t.q(f2, a2), agent.critic2_t.q(f2, a2)
    q_next = np.minimum(q1, q2)
    return {"y": r + cfg.gamma * (1.0 - b["done"]) * q_next, "a2": a2, "q1": q1, "q2": q2,
            "q_next": q_next}


def td3_update(agent: Td3Agent, buf: ReplayBuffer) -> dict:
    """One critic step and, every ``policy_delay`` calls, one actor step plus
    target updates.  Returns loss diagnostics."""
    cfg = agent.cfg
    if len(buf) < cfg.warmup:
        raise RuntimeError(f"td3_update before warmup: {len(buf)} of {cfg.warmup} transitions")
    b = buf.sample(cfg.batch)
    f = agent.features(b["s"], b["s_pad"])
    y = td3_targets(agent, b)["y"]

    agent.critic1.store.zero_grad()
    agent.critic2.store.zero_grad()
    g = Graph()
    act = g.input(b["a"])
    q1 = agent.critic1.forward(g, f, act)
    q2 = agent.critic2.forward(g, f, act)
    loss = g.add(g.mse(q1, y), g.mse(q2, y))
    g.backward(loss)
    agent.opt_critic.step()
    agent.n_updates += 1
    diag = {"critic_loss": float(loss.value), "q1_mean": float(q1.value.mean()),
            "target_mean": float(np.mean(y)), "actor_loss": None}

    if agent.n_updates % cfg.policy_delay == 0:
        agent.actor.store.zero_grad()
        g = Graph()
        a = agent.actor.forward(g, f)
        q = agent.critic1.forward(g, f, a, encoder_grad=False)
        B = q.shape[0]
        g.backward(q, np.full(B, -1.0 / B))
        agent.opt_actor.step()
        diag["actor_loss"] = float(-q.value.mean())
        polyak(agent.actor_t.store, agent.actor.store, cfg.tau)
        polyak(agent.critic1_t.store, agent.critic1.store, cfg.tau)
        polyak(agent.critic2_t.store, agent.critic2.store, cfg.tau)
    return diag


# -- evaluation ------------------------------------------------------------

@dataclass
class Rollout:
    fused: list      # per track, (T, 3)
    weights: list    # per track, (T, 3 axes, 3 models)
    rewards: list    # per track, (T,)


def uniform_policy(flat, n_pad):
    return np.zeros((np.atleast_2d(flat).shape[0], 9))


def rollout(policy, tracks, L: int, action_bound: float, reward: str = "hierarchical") -> Rollout:
    """Run ``policy(flat, n_pad) -> actions`` over tracks in lockstep, without noise."""
    env = BatchEnv(tracks, L, action_bound, reward)
    fused = [np.zeros((len(t), 3)) for t in tracks]
    W = [np.zeros((len(t), 3, 3)) for t in tracks]
    rew = [np.zeros(len(t)) for t in tracks]
    while env.active.any():
        k = env.k
        idx, flat, npad = env.states()
        a = policy(flat, npad)
        f, r, _, _, _, w = env.step(idx, a)
        for j, i in enumerate(idx):
            fused[i][k] = f[j]
            W[i][k] = w[j]
            rew[i][k] = r[j]
    return Rollout(fused, W, rew)


def agent_policy(agent_or_actor, scale: float = None, L: int = None):
    if isinstance(agent_or_actor, Td3Agent):
        ag = agent_or_actor
        return lambda flat, npad: ag.act(flat, npad)
    actor = agent_or_actor
    if scale is None:
        raise ValueError("a bare actor needs the feature scale it was trained with")
    L = actor.shape.window if L is None else L
    return lambda flat, npad: actor.act(features(flat, npad, L, scale))


def evaluate_mse(policy, tracks, L, action_bound, warmup: int = EVAL_WARMUP) -> float:
    ro = rollout(policy, tracks, L, action_bound)
    return float(np.mean([mse_mae(t.truth, f, warmup)[0] for t, f in zip(tracks, ro.fused)]))


# -- training --------------------------------------------------------------

@dataclass
class TrainResult:
    agent: Td3Agent
    reward_curve: np.ndarray            # cumulative (unscaled) reward per episode
    val_curve: list = field(default_factory=list)   # (episodes so far, val MSE)
    best_val: float = math.inf
    best_episode: int = 0
    n_updates: int = 0


def prepare_tracks(trajs, bank_cfg: BankConfig, L: int):
    return [make_track(t, bank_cfg, L) for t in trajs]


def _abort(msg, diag, agent, abort_dir):
    info = {"message": msg, "n_updates": agent.n_updates, "last": diag,
            "param_norms": {k: float(np.linalg.norm(p.value))
                            for st in (agent.actor.store, agent.critic1.store, agent.critic2.store)
                            for k, p in st.items()}}
    if abort_dir is not None:
        p = Path(abort_dir) / "nan_abort.json"
        p.parent.mkdir(parents=True, exist_ok=True)
        p.write_text(json.dumps(info, indent=2, default=str))
        info["path"] = str(p)
    raise TrainingAborted(msg, info)


def train(train_tracks, cfg: Td3Config, episodes: int, bank_cfg: BankConfig = BankConfig(),
          val_tracks=None, abort_dir=None, progress=None) -> TrainResult:
    """Train for ``episodes`` trajectory rollouts (``n_envs`` at a time).

    The actor with the lowest validation MSE seen is loaded back into the
    agent at the end.  ``progress(dict)`` is called after each validation.
    """
    if not train_tracks:
        raise ValueError("training set is empty")
    if episodes < 1:
        raise ValueError("episodes must be >= 1")
    L = cfg.window
    for t in train_tracks:
        if t.flat.shape[1] != state_dim(L):
            raise ValueError("tracks were prepared for a different window length")
    val_tracks = list(val_tracks) if val_tracks else list(train_tracks[:4])
    agent = Td3Agent(cfg, bank_cfg)
    buf = ReplayBuffer(cfg.capacity, state_dim(L), 9, seed=agent.buffer_seed)
    curve = np.zeros(episodes)
    res = TrainResult(agent, curve)
    best_params = agent.actor.store.snapshot()
    done_eps = 0
    rounds = 0
    order = []
    n = len(train_tracks)

    def validate():
        mse = evaluate_mse(agent_policy(agent), val_tracks, L, cfg.action_bound)
        res.val_curve.append((done_eps, mse))
        if mse < res.best_val:
            res.best_val, res.best_episode = mse, done_eps
            best_params.update(agent.actor.store.snapshot())
        if progress is not None:
            progress({"episodes": done_eps, "val_mse": mse, "updates": agent.n_updates})

    while done_eps < episodes:
        m = min(cfg.n_envs, episodes - done_eps)
        while len(order) < m:
            order.extend(agent.schedule_rng.permutation(n).tolist())
        picks, order = order[:m], order[m:]
        env = BatchEnv([train_tracks[i] for i in picks], L, cfg.action_bound, cfg.reward)
        ep_ret = np.zeros(m)
        while env.active.any():
            idx, flat, npad = env.states()
            a = agent.act(flat, npad, explore=True)
            _, r, nxt, npad2, done, _ = env.step(idx, a)
            buf.add(flat, a, r, nxt, done, npad, npad2)
            ep_ret[idx] += r
            if len(buf) >= cfg.warmup:
                for _ in range(cfg.updates_per_step):
                    diag = td3_update(agent, buf)
                    bad = not math.isfinite(diag["critic_loss"]) or (
                        diag["actor_loss"] is not None and not math.isfinite(diag["actor_loss"]))
                    if bad:
                        _abort("non-finite loss", diag, agent, abort_dir)
        curve[done_eps:done_eps + m] = ep_ret
        done_eps += m
        rounds += 1
        if rounds % cfg.eval_every == 0 or done_eps >= episodes:
            validate()
    agent.actor.store.load(best_params)
    res.n_updates = agent.n_updates
    return res


# -- checkpoints -----------------------------------------------------------

def save_actor(path, agent: Td3Agent, extra: dict | None = None):
    meta = {"kind": "dimm-actor", "net": agent.cfg.net_shape.to_dict(),
            "bank": agent.bank_cfg.to_dict(), "td3": agent.cfg.to_dict(),
            "feature_scale": agent.scale}
    if extra:
        meta.update(extra)
    save_params(path, agent.actor.store.snapshot(), meta)


def load_actor(path, expected: NetShape | None = None):
    """Returns ``(actor, meta)``; rejects a checkpoint whose network shape
    differs from ``expected``."""
    params, meta = load_params(path)
    if meta.get("kind") != "dimm-actor":
        raise ValueError(f"{path}: not an actor checkpoint")
    shape = NetShape(**meta["net"])
    if expected is not None and expected != shape:
        raise ValueError(f"checkpoint network {shape} does not match configured {expected}")
    actor = Actor(shape, np.random.default_rng(0))
    actor.store.load(params)
    return actor, meta
