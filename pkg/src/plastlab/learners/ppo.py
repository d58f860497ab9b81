"""Clipped-ratio policy optimization over the manual-backprop network.

One network produces [policy outputs | value] from a shared torso. Discrete
policies are categorical over logits; continuous policies are diagonal
Gaussians with a state-independent learned log-std stored as an extra
parameter ("log_std") on the same NetworkState, so optimizers, checkpoints,
and drift metrics see it like any other parameter.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from ..errors import InvalidInputError, NumericError
from ..net import Gradients, NetworkState, backward, forward
from ..numkit import RngStream
from ..mitigations import OptimizerState, optimizer_step, reg_loss
from .common import TrajectoryBatch, clip_gradients, gae

_LOG_2PI = float(np.log(2.0 * np.pi))


@dataclass
class PPOConfig:
    lr: float = 3e-4
    gamma: float = 0.99
    gae_lambda: float = 0.95
    clip_eps: float = 0.2
    vf_coef: float = 0.5
    ent_coef: float = 0.0
    value_clip: float = 0.2
    max_grad_norm: float = 0.5
    n_minibatches: int = 32
    update_epochs: int = 4
    rollout_len: int = 2048
    init_std: float = 1.0


def normalize_advantages(adv: np.ndarray) -> np.ndarray:
    return (adv - adv.mean()) / (adv.std() + 1e-8)


def ppo_loss(
    batch: TrajectoryBatch,
    new_log_probs: np.ndarray,
    new_values: np.ndarray,
    entropy: np.ndarray,
    clip_eps: float,
    vf_coef: float,
    ent_coef: float,
    value_clip: float = 0.2,
) -> tuple[float, dict[str, float]]:
    """Clipped surrogate + clipped value regression - entropy bonus.

    Advantages are normalized here, per mini-batch. The value term regresses
    against GAE returns, keeping the clipped branch when it is worse (the
    pessimistic max).
    """
    if clip_eps <= 0.0:
        raise InvalidInputError(f"clip_eps must be > 0, got {clip_eps}")
    if batch.advantages is None or batch.returns is None:
        raise InvalidInputError("batch needs advantages and returns (run gae first)")
    adv = normalize_advantages(batch.advantages)
    with np.errstate(over="ignore"):
        ratio = np.exp(new_log_probs - batch.log_probs)
    if not np.all(np.isfinite(ratio)):
        raise NumericError("non-finite probability ratio in policy loss")
    clipped_ratio = np.clip(ratio, 1.0 - clip_eps, 1.0 + clip_eps)
    policy = -float(np.mean(np.minimum(ratio * adv, clipped_ratio * adv)))
    v_err = (new_values - batch.returns) ** 2
    v_clipped = batch.values + np.clip(new_values - batch.values, -value_clip, value_clip)
    v_err_clipped = (v_clipped - batch.returns) ** 2
    value = 0.5 * float(np.mean(np.maximum(v_err, v_err_clipped)))
    ent = float(np.mean(entropy))
    total = policy + vf_coef * value - ent_coef * ent
    return total, {"policy": policy, "value": value, "entropy": ent, "total": total}


def gaussian_policy(
    mean: np.ndarray,
    log_std: np.ndarray,
    stream: RngStream | None = None,
    actions: np.ndarray | None = None,
) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    """Diagonal Gaussian sample (or evaluation), log-prob, and entropy.

    Log-probs are plain Gaussian densities; any squashing happens at the
    environment boundary and is not corrected for here.
    """
    mean = np.atleast_2d(mean)
    if not np.all(np.isfinite(mean)):
        raise NumericError("non-finite policy mean")
    std = np.exp(log_std)
    if actions is None:
        if stream is None:
            raise InvalidInputError("sampling needs a stream")
        noise = stream.normal(0.0, 1.0, mean.size).reshape(mean.shape)
        actions = mean + std * noise
    z = (actions - mean) / std
    log_prob = -0.5 * np.sum(z * z, axis=1) - np.sum(log_std) - 0.5 * mean.shape[1] * _LOG_2PI
    entropy_row = float(np.sum(log_std + 0.5 * (_LOG_2PI + 1.0)))
    entropy = np.full(mean.shape[0], entropy_row)
    return actions, log_prob, entropy


def _log_softmax(logits: np.ndarray) -> np.ndarray:
    shifted = logits - logits.max(axis=1, keepdims=True)
    return shifted - np.log(np.sum(np.exp(shifted), axis=1, keepdims=True))


class PPOLearner:
    """Rollout-consuming PPO update loop over one shared-torso network.

    `reg_terms` is a list of (kind, alpha, s) regularizers added to every
    minibatch loss; the optimizer is whatever the mitigation plan selected.
    """

    def __init__(
        self,
        net: NetworkState,
        n_actions: int,
        discrete: bool,
        cfg: PPOConfig,
        opt: OptimizerState,
        reg_terms: tuple[tuple[str, float, float], ...] = (),
    ):
        head_width = net.layers[-1].width_out
        if head_width != n_actions + 1:
            raise InvalidInputError(
                f"network head must emit n_actions + 1 = {n_actions + 1} values, got {head_width}"
            )
        self.net = net
        self.n_actions = n_actions
        self.discrete = discrete
        self.cfg = cfg
        self.opt = opt
        self.reg_terms = tuple(reg_terms)
        self.post_step = None  # callable fired after each gradient step
        if not discrete and "log_std" not in net.params:
            net.params["log_std"] = np.full(n_actions, float(np.log(cfg.init_std)))
            net.param_order = net.param_order + ("log_std",)
            snap = net.params["log_std"].copy()
            snap.flags.writeable = False
            net.init_snapshot["log_std"] = snap

    # ---------------------------------------------------------- acting

    def act(self, obs: np.ndarray, stream: RngStream) -> tuple[np.ndarray | int, float, float]:
        """Sample one action; returns (action, log_prob, value)."""
        out = forward(self.net, np.atleast_2d(obs)).outputs
        value = float(out[0, -1])
        if self.discrete:
            log_p = _log_softmax(out[:, :-1])[0]
            cdf = np.cumsum(np.exp(log_p))
            u = stream.uniform(0.0, 1.0, 1)[0]
            action = min(int(np.searchsorted(cdf, u, side="right")), self.n_actions - 1)
            return action, float(log_p[action]), value
        mean = out[:, :-1]
        actions, log_prob, _ = gaussian_policy(mean, self.net.params["log_std"], stream)
        return actions[0], float(log_prob[0]), value

    def evaluate_actions(self, obs: np.ndarray, actions: np.ndarray):
        """Log-probs, entropy, and values for stored actions (no sampling)."""
        trace = forward(self.net, obs)
        out = trace.outputs
        values = out[:, -1]
        if self.discrete:
            log_all = _log_softmax(out[:, :-1])
            idx = actions.astype(np.int64)
            log_probs = log_all[np.arange(len(idx)), idx]
            probs = np.exp(log_all)
            entropy = -np.sum(probs * log_all, axis=1)
            return trace, log_probs, entropy, values
        _, log_probs, entropy = gaussian_policy(
            out[:, :-1], self.net.params["log_std"], actions=actions
        )
        return trace, log_probs, entropy, values

    # ---------------------------------------------------------- updating

    def update(
        self, traj: TrajectoryBatch, bootstrap_value: float, stream: RngStream
    ) -> dict[str, float]:
        """GAE, then several epochs of shuffled minibatch gradient steps."""
        cfg = self.cfg
        traj.advantages, traj.returns = gae(
            traj.rewards, traj.values, traj.dones, bootstrap_value, cfg.gamma, cfg.gae_lambda
        )
        n = len(traj)
        stats: dict[str, float] = {}
        for _ in range(cfg.update_epochs):
            order = stream.permutation(n)
            for chunk in np.array_split(order, cfg.n_minibatches):
                if chunk.size == 0:
                    continue
                stats = self._minibatch_step(traj.take(chunk))
        return stats

    def _minibatch_step(self, mb: TrajectoryBatch) -> dict[str, float]:
        cfg = self.cfg
        trace, new_log_probs, entropy, new_values = self.evaluate_actions(
            mb.observations, mb.actions
        )
        total, parts = ppo_loss(
            mb, new_log_probs, new_values, entropy,
            cfg.clip_eps, cfg.vf_coef, cfg.ent_coef, cfg.value_clip,
        )
        grads = self._loss_grads(mb, trace, new_log_probs, new_values)
        for kind, alpha, s in self.reg_terms:
            value, reg_grads = reg_loss(kind, self.net, alpha, s)
            total += value
            for name, g in reg_grads.items():
                if name in grads.by_name:
                    grads.by_name[name] = grads.by_name[name] + g
                else:
                    grads.by_name[name] = g
        if not np.isfinite(total):
            raise NumericError(f"non-finite loss: {parts}")
        parts["grad_norm"] = clip_gradients(grads.by_name, cfg.max_grad_norm)
        optimizer_step(self.opt, self.net, trace, grads, cfg.lr)
        if self.post_step is not None:
            self.post_step()
        parts["total"] = total
        return parts

    def _loss_grads(
        self,
        mb: TrajectoryBatch,
        trace,
        new_log_probs: np.ndarray,
        new_values: np.ndarray,
    ) -> Gradients:
        """Analytic gradient of the clipped objective wrt network outputs.

        The clipped min contributes nothing for samples pushed past the clip
        band in the advantage-improving direction; the clipped value max
        contributes nothing where the clamp saturates and is worse.
        """
        cfg = self.cfg
        b = len(mb)
        adv = normalize_advantages(mb.advantages)
        ratio = np.exp(new_log_probs - mb.log_probs)
        clip_dead = ((ratio > 1.0 + cfg.clip_eps) & (adv > 0.0)) | (
            (ratio < 1.0 - cfg.clip_eps) & (adv < 0.0)
        )
        g_log_prob = np.where(clip_dead, 0.0, -adv * ratio) / b

        v_err = (new_values - mb.returns) ** 2
        v_clipped = mb.values + np.clip(new_values - mb.values, -cfg.value_clip, cfg.value_clip)
        v_err_clipped = (v_clipped - mb.returns) ** 2
        g_value = np.where(v_err >= v_err_clipped, new_values - mb.returns, 0.0)
        g_value = cfg.vf_coef * g_value / b

        out = trace.outputs
        output_grad = np.zeros_like(out)
        output_grad[:, -1] = g_value
        if self.discrete:
            log_all = _log_softmax(out[:, :-1])
            probs = np.exp(log_all)
            idx = mb.actions.astype(np.int64)
            one_hot = np.zeros_like(probs)
            one_hot[np.arange(b), idx] = 1.0
            output_grad[:, :-1] = g_log_prob[:, None] * (one_hot - probs)
            # entropy bonus: dH/dlogits = -p * (log p + H)
            ent_rows = -np.sum(probs * log_all, axis=1, keepdims=True)
            output_grad[:, :-1] += (cfg.ent_coef / b) * probs * (log_all + ent_rows)
            return backward(self.net, trace, output_grad)
        mean = out[:, :-1]
        log_std = self.net.params["log_std"]
        std = np.exp(log_std)
        z = (mb.actions - mean) / std
        output_grad[:, :-1] = g_log_prob[:, None] * (z / std)
        grads = backward(self.net, trace, output_grad)
        g_ls = np.sum(g_log_prob[:, None] * (z * z - 1.0), axis=0) - cfg.ent_coef
        grads.by_name["log_std"] = g_ls
        return grads
