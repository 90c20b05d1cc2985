"""Fusion-weight agent: MDP environment, attention actor/critic and TD3."""

from .env import (REWARD_MODES, BankConfig, BatchEnv, EnvState, FusionEnv, Track, features,
                  make_track, simple_reward, state_dim, step_reward)
from .networks import Actor, Critic, NetShape
from .replay import ReplayBuffer
from .td3 import (Td3Agent, Td3Config, TrainResult, evaluate_mse, load_actor, prepare_tracks,
                  rollout, save_actor, td3_targets, td3_update, train, uniform_policy)

__all__ = [
    "Actor", "BankConfig", "BatchEnv", "Critic", "EnvState", "FusionEnv", "NetShape",
    "REWARD_MODES", "ReplayBuffer", "Td3Agent", "Td3Config", "Track", "TrainResult",
    "evaluate_mse", "features", "load_actor", "make_track", "prepare_tracks", "rollout",
    "save_actor", "simple_reward", "state_dim", "step_reward", "td3_targets", "td3_update", "train",
    "uniform_policy",
]
