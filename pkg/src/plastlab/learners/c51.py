"""Categorical distributional Q-learning over a fixed atom support.

The network emits n_actions * n_atoms logits; per-action softmax over atoms
gives a return distribution whose expectation ranks actions. Bellman targets
are projected back onto the support and fit by cross-entropy.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from ..errors import InvalidInputError
from ..net import ForwardTrace, Gradients, NetworkState, backward, clone_network, forward
from ..numkit import RngStream
from ..mitigations import OptimizerState, optimizer_step, reg_loss
from .common import ReplayBuffer


@dataclass
class C51Config:
    lr: float = 2.5e-4
    gamma: float = 0.99
    n_atoms: int = 51
    v_min: float = -10.0
    v_max: float = 10.0
    buffer_size: int = 1_000_000
    batch_size: int = 32
    total_steps: int = 10_000_000
    learning_starts: int = 80_000
    train_frequency: int = 4
    target_network_frequency: int = 10_000
    start_epsilon: float = 1.0
    end_epsilon: float = 0.01
    exploration_fraction: float = 0.10
    action_selection: str = "target"


def c51_support(v_min: float, v_max: float, n: int) -> np.ndarray:
    """Evenly spaced return atoms, endpoints inclusive."""
    if n < 2:
        raise InvalidInputError(f"need at least 2 atoms, got {n}")
    if not v_max > v_min:
        raise InvalidInputError(f"v_max must exceed v_min, got [{v_min}, {v_max}]")
    return np.linspace(float(v_min), float(v_max), int(n))


@dataclass
class CategoricalHead:
    n_atoms: int
    v_min: float
    v_max: float
    atoms: np.ndarray = field(init=False)
    delta_z: float = field(init=False)

    def __post_init__(self) -> None:
        self.atoms = c51_support(self.v_min, self.v_max, self.n_atoms)
        self.delta_z = (self.v_max - self.v_min) / (self.n_atoms - 1)


def _check_dist(dist: np.ndarray, n_atoms: int) -> np.ndarray:
    dist = np.asarray(dist, dtype=np.float64)
    if dist.shape[-1] != n_atoms:
        raise InvalidInputError(f"distribution has {dist.shape[-1]} atoms, head expects {n_atoms}")
    sums = dist.sum(axis=-1)
    if np.any(np.abs(sums - 1.0) > 1e-6) or np.any(dist < 0.0):
        raise InvalidInputError("next-state distribution is not a probability vector")
    return dist


def _support_coords(tz: np.ndarray, head: CategoricalHead) -> np.ndarray:
    """Fractional atom index of each target value, snapped when a hair off.

    Division dust can turn an exactly aligned target into 24.999...96, which
    would leak mass to a neighbor and can push ceil past the last atom; any
    b within 1e-12 of an integer is treated as aligned.
    """
    b = (tz - head.v_min) / head.delta_z
    nearest = np.round(b)
    b = np.where(np.abs(b - nearest) < 1e-12, nearest, b)
    return np.clip(b, 0.0, head.n_atoms - 1.0)


def categorical_projection(
    next_dist: np.ndarray, r: float, done: bool, gamma: float, head: CategoricalHead
) -> np.ndarray:
    """Project the shifted/scaled distribution back onto the fixed support.

    Each atom's mass lands between its two bracketing support points, split
    linearly by proximity; an exactly aligned atom keeps all its mass.
    """
    p = _check_dist(next_dist, head.n_atoms)
    tz = np.clip(r + gamma * (0.0 if done else 1.0) * head.atoms, head.v_min, head.v_max)
    b = _support_coords(tz, head)
    lo = np.floor(b).astype(np.int64)
    hi = np.ceil(b).astype(np.int64)
    aligned = lo == hi
    m = np.zeros(head.n_atoms)
    np.add.at(m, lo, np.where(aligned, p, p * (hi - b)))
    np.add.at(m, hi, np.where(aligned, 0.0, p * (b - lo)))
    return m


def categorical_projection_batch(
    next_dists: np.ndarray,
    rewards: np.ndarray,
    dones: np.ndarray,
    gamma: float,
    head: CategoricalHead,
) -> np.ndarray:
    """Vectorized projection of a batch of next-state distributions."""
    p = _check_dist(np.atleast_2d(next_dists), head.n_atoms)
    n_batch = p.shape[0]
    rewards = np.asarray(rewards, dtype=np.float64).reshape(n_batch, 1)
    not_done = 1.0 - np.asarray(dones, dtype=np.float64).reshape(n_batch, 1)
    tz = np.clip(rewards + gamma * not_done * head.atoms, head.v_min, head.v_max)
    b = _support_coords(tz, head)
    lo = np.floor(b).astype(np.int64)
    hi = np.ceil(b).astype(np.int64)
    aligned = lo == hi
    offsets = np.arange(n_batch)[:, None] * head.n_atoms
    m = np.zeros(n_batch * head.n_atoms)
    np.add.at(m, (lo + offsets).ravel(), np.where(aligned, p, p * (hi - b)).ravel())
    np.add.at(m, (hi + offsets).ravel(), np.where(aligned, 0.0, p * (b - lo)).ravel())
    return m.reshape(n_batch, head.n_atoms)


def _log_softmax(logits: np.ndarray) -> np.ndarray:
    shifted = logits - logits.max(axis=-1, keepdims=True)
    return shifted - np.log(np.sum(np.exp(shifted), axis=-1, keepdims=True))


def c51_loss(projected: np.ndarray, logits: np.ndarray) -> float:
    """Cross-entropy of the projected target against the predicted atoms."""
    m = np.asarray(projected, dtype=np.float64)
    if abs(m.sum() - 1.0) > 1e-6:
        raise InvalidInputError("projected target must sum to 1")
    return -float(np.sum(m * _log_softmax(np.asarray(logits, dtype=np.float64))))


def epsilon_schedule(step: int, start: float, end: float, fraction: float, total: int) -> float:
    """Linear ramp from start to end over fraction*total steps, then flat."""
    if not 0.0 < fraction <= 1.0:
        raise InvalidInputError(f"fraction must be in (0, 1], got {fraction}")
    duration = fraction * total
    t = step / duration
    if t >= 1.0:
        return float(end)
    return start + (end - start) * t


def _dist_probs(net: NetworkState, obs: np.ndarray, n_actions: int, n_atoms: int) -> np.ndarray:
    """Per-action atom probabilities, shape (batch, actions, atoms)."""
    out = forward(net, obs).outputs.reshape(obs.shape[0], n_actions, n_atoms)
    return np.exp(_log_softmax(out))


def c51_update(
    buffer: ReplayBuffer,
    online: NetworkState,
    target: NetworkState,
    head: CategoricalHead,
    batch_size: int,
    gamma: float,
    stream: RngStream,
    learning_starts: int = 0,
    action_selection: str = "target",
) -> tuple[float, Gradients, ForwardTrace] | None:
    """One distributional Bellman fit on a sampled batch.

    Returns None (skip, not failure) while the buffer is below the
    learning-starts threshold. Greedy next actions come from the target
    network by default; action_selection="online" switches the argmax to
    the online network while still bootstrapping from the target.
    """
    if len(buffer) < max(learning_starts, batch_size):
        return None
    if action_selection not in ("target", "online"):
        raise InvalidInputError(f"unknown action selection {action_selection!r}")
    batch = buffer.sample(batch_size, stream)
    n_actions = online.layers[-1].width_out // head.n_atoms

    target_probs = _dist_probs(target, batch["next_obs"], n_actions, head.n_atoms)
    if action_selection == "online":
        select_probs = _dist_probs(online, batch["next_obs"], n_actions, head.n_atoms)
    else:
        select_probs = target_probs
    q_next = np.sum(select_probs * head.atoms, axis=2)
    best = np.argmax(q_next, axis=1)
    next_dist = target_probs[np.arange(batch_size), best]
    m = categorical_projection_batch(next_dist, batch["rewards"], batch["dones"], gamma, head)

    trace = forward(online, batch["obs"])
    out = trace.outputs.reshape(batch_size, n_actions, head.n_atoms)
    actions = batch["actions"].astype(np.int64)
    chosen = out[np.arange(batch_size), actions]
    log_p = _log_softmax(chosen)
    loss = -float(np.mean(np.sum(m * log_p, axis=1)))

    block = (np.exp(log_p) - m) / batch_size
    output_grad = np.zeros((batch_size, n_actions * head.n_atoms))
    for a in range(n_actions):
        rows = actions == a
        output_grad[rows, a * head.n_atoms : (a + 1) * head.n_atoms] = block[rows]
    grads = backward(online, trace, output_grad)
    return loss, grads, trace


class C51Learner:
    """Replay-driven C51 agent: epsilon-greedy acting, periodic target sync."""

    def __init__(
        self,
        net: NetworkState,
        n_actions: int,
        cfg: C51Config,
        opt: OptimizerState,
        obs_dim: int,
        reg_terms: tuple[tuple[str, float, float], ...] = (),
    ):
        head_width = net.layers[-1].width_out
        if head_width != n_actions * cfg.n_atoms:
            raise InvalidInputError(
                f"network head must emit {n_actions * cfg.n_atoms} logits, got {head_width}"
            )
        self.net = net
        self.target = clone_network(net)
        self.n_actions = n_actions
        self.cfg = cfg
        self.opt = opt
        self.reg_terms = tuple(reg_terms)
        self.head = CategoricalHead(cfg.n_atoms, cfg.v_min, cfg.v_max)
        self.buffer = ReplayBuffer(cfg.buffer_size, obs_dim)
        self.post_step = None  # callable fired after each gradient step

    def q_values(self, obs: np.ndarray) -> np.ndarray:
        probs = _dist_probs(self.net, np.atleast_2d(obs), self.n_actions, self.head.n_atoms)
        return np.sum(probs * self.head.atoms, axis=2)

    def act(self, obs: np.ndarray, step: int, stream: RngStream) -> int:
        cfg = self.cfg
        eps = epsilon_schedule(
            step, cfg.start_epsilon, cfg.end_epsilon, cfg.exploration_fraction, cfg.total_steps
        )
        if stream.uniform(0.0, 1.0, 1)[0] < eps:
            return int(stream.randint(self.n_actions, 1)[0])
        return int(np.argmax(self.q_values(obs)[0]))

    def remember(self, obs, action, reward, next_obs, done) -> None:
        self.buffer.add(obs, action, reward, next_obs, done)

    def sync_target(self) -> None:
        self.target = clone_network(self.net)

    def update(self, step: int, stream: RngStream) -> dict[str, float] | None:
        """Train every train_frequency steps; hard-sync the target on schedule."""
        cfg = self.cfg
        stats: dict[str, float] | None = None
        if step % cfg.train_frequency == 0:
            result = c51_update(
                self.buffer, self.net, self.target, self.head,
                cfg.batch_size, cfg.gamma, stream,
                learning_starts=cfg.learning_starts,
                action_selection=cfg.action_selection,
            )
            if result is not None:
                loss, grads, trace = result
                for kind, alpha, s in self.reg_terms:
                    value, reg_grads = reg_loss(kind, self.net, alpha, s)
                    loss += value
                    for name, g in reg_grads.items():
                        if name in grads.by_name:
                            grads.by_name[name] = grads.by_name[name] + g
                        else:
                            grads.by_name[name] = g
                optimizer_step(self.opt, self.net, trace, grads, cfg.lr)
                if self.post_step is not None:
                    self.post_step()
                stats = {"loss": loss}
        if step % cfg.target_network_frequency == 0:
            self.sync_target()
        return stats
