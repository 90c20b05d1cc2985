"""Decoupled IMM: per-axis fusion of a CV/CA/CJ Kalman filter bank with
weights learned by an attention-based TD3 agent."""

__version__ = "0.1.0"
