"""Ring-buffer experience replay with seeded uniform sampling."""

from __future__ import annotations

import numpy as np


class ReplayBuffer:
    def __init__(self, capacity: int, state_dim: int, action_dim: int = 9, seed: int = 0):
        if capacity < 1:
            raise ValueError("capacity must be positive")
        self.capacity = int(capacity)
        self.s = np.zeros((capacity, state_dim))
        self.s_pad = np.zeros(capacity, dtype=np.int64)
        self.a = np.zeros((capacity, action_dim))
        self.r = np.zeros(capacity)
        self.s2 = np.zeros((capacity, state_dim))
        self.s2_pad = np.zeros(capacity, dtype=np.int64)
        self.done = np.zeros(capacity)
        self.rng = np.random.default_rng(seed)
        self.ptr = 0
        self.size = 0

    def __len__(self):
        return self.size

    def add(self, s, a, r, s2, done, s_pad=0, s2_pad=0):
        """Append one transition, or a batch when ``s`` is 2-D."""
        s = np.atleast_2d(s)
        n = s.shape[0]
        a = np.reshape(a, (n, -1))
        r = np.broadcast_to(np.asarray(r, dtype=float), (n,))
        if not np.isfinite(r).all():
            raise ValueError("non-finite reward")
        cols = (self.s, self.a, self.r, self.s2, self.done, self.s_pad, self.s2_pad)
        vals = (s, a, r, np.atleast_2d(s2), np.broadcast_to(np.asarray(done, float), (n,)),
                np.broadcast_to(s_pad, (n,)), np.broadcast_to(s2_pad, (n,)))
        idx = (self.ptr + np.arange(n)) % self.capacity
        for col, v in zip(cols, vals):
            col[idx] = v
        self.ptr = int((self.ptr + n) % self.capacity)
        self.size = min(self.size + n, self.capacity)

    def sample_indices(self, batch: int) -> np.ndarray:
        if self.size < batch:
            raise ValueError(f"buffer holds {self.size} transitions, fewer than batch {batch}")
        return self.rng.integers(0, self.size, batch)

    def sample(self, batch: int) -> dict:
        i = self.sample_indices(batch)
        return {"s": self.s[i], "s_pad": self.s_pad[i], "a": self.a[i], "r": self.r[i],
                "s2": self.s2[i], "s2_pad": self.s2_pad[i], "done": self.done[i]}
