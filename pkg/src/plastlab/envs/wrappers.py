"""Observation and reward wrappers shared by the scenario protocols."""

from __future__ import annotations

from collections import deque

import numpy as np


class FrameStack:
    """Concatenates the last k observations; repeats the first at reset."""

    def __init__(self, env, k: int = 4):
        self.env = env
        self.k = k
        self.frames: deque = deque(maxlen=k)
        self.n_actions = env.n_actions

    @property
    def obs_dim(self) -> int:
        return self.k * self.env.obs_dim

    def reset(self) -> np.ndarray:
        obs = self.env.reset()
        self.frames.clear()
        for _ in range(self.k):
            self.frames.append(obs)
        return np.concatenate(self.frames)

    def step(self, action):
        obs, reward, done = self.env.step(action)
        self.frames.append(obs)
        return np.concatenate(self.frames), reward, done


class RewardNormalizer:
    """Scales rewards by the running std of the discounted return.

    Tracks R_t = gamma * R_{t-1} + r_t across steps, accumulates its variance
    with Welford updates, and emits r_t / sqrt(var + 1e-8). Raw rewards stay
    available to callers for episode-return logging.
    """

    def __init__(self, gamma: float = 0.99):
        self.gamma = gamma
        self.ret = 0.0
        self.count = 0
        self.mean = 0.0
        self.m2 = 0.0

    def update(self, reward: float, done: bool) -> float:
        self.ret = self.gamma * self.ret + reward
        self.count += 1
        delta = self.ret - self.mean
        self.mean += delta / self.count
        self.m2 += delta * (self.ret - self.mean)
        var = self.m2 / self.count if self.count > 1 else 1.0
        if done:
            self.ret = 0.0
        return float(reward / np.sqrt(var + 1e-8))
