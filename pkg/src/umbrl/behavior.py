"""Latent actor and critic learned in imagination."""

from __future__ import annotations

from dataclasses import dataclass
from typing import Callable

import numpy as np

from .ndgrad import (
    Adam,
    DenseNet,
    Module,
    Tensor,
    backward,
    clip,
    concat,
    exp,
    frozen_graph,
    no_grad,
    stack,
    stop_gradient,
    tanh,
)
from .worldmodel import ModelState, Rollout, imagine

LOG_STD_MIN, LOG_STD_MAX = -5.0, 2.0
_GAUSS_ENT_CONST = 0.5 * np.log(2.0 * np.pi * np.e)


@dataclass
class BehaviorConfig:
    gamma: float = 0.99
    lam: float = 0.95
    entropy_scale: float = 1e-4
    actor_lr: float = 8e-5
    critic_lr: float = 8e-5
    horizon: int = 15
    slow_interval: int = 100
    hidden: int = 64
    layers: int = 2
    init_log_std: float = 0.0

    def __post_init__(self):
        if not (0 < self.gamma <= 1 and 0 < self.lam <= 1):
            raise ValueError(f"gamma and lambda must lie in (0, 1], got {self.gamma}, {self.lam}")


def lambda_returns(rewards, values, gamma: float, lam: float) -> Tensor:
    """GAE-lambda returns over the leading (time) axis.

    ``V_H = v_H`` and ``V_t = r_t + gamma * ((1 - lam) * v_{t+1} + lam * V_{t+1})``.
    Works on Tensors (differentiable) or plain arrays.
    """
    r = rewards if isinstance(rewards, Tensor) else Tensor(rewards)
    v = values if isinstance(values, Tensor) else Tensor(values)
    if r.data.shape != v.data.shape:
        raise ValueError(f"rewards {r.data.shape} and values {v.data.shape} differ in shape")
    H = r.data.shape[0]
    if H < 1:
        raise ValueError("need at least one step")
    out = [v[H - 1]]
    for t in range(H - 2, -1, -1):
        out.append(r[t] + ((1.0 - lam) * v[t + 1] + lam * out[-1]) * gamma)
    return stack(out[::-1], axis=0)


class Actor(Module):
    """Squashed-Gaussian policy: ``a = tanh(mean + std * eps)``."""

    def __init__(self, in_width: int, act_dim: int, cfg: BehaviorConfig, rng: np.random.Generator):
        self.act_dim = act_dim
        self.net = DenseNet([in_width, *[cfg.hidden] * cfg.layers, 2 * act_dim], rng)
        # shift the log-std output so a fresh actor starts at the configured spread
        self.net.layers[-1].bias.data[act_dim:] = cfg.init_log_std

    def dist(self, x: Tensor) -> tuple[Tensor, Tensor]:
        out = self.net(x)
        mean = out[..., : self.act_dim]
        log_std = clip(out[..., self.act_dim :], LOG_STD_MIN, LOG_STD_MAX)
        return mean, log_std

    def sample(self, x: Tensor, rng: np.random.Generator) -> tuple[Tensor, Tensor]:
        """Reparameterized sample and the pre-squash Gaussian entropy."""
        mean, log_std = self.dist(x)
        eps = rng.standard_normal(mean.data.shape)
        action = tanh(mean + exp(log_std) * eps)
        entropy = (log_std + _GAUSS_ENT_CONST).sum(axis=-1)
        return action, entropy

    def mode(self, x: Tensor) -> Tensor:
        mean, _ = self.dist(x)
        return tanh(mean)


class Critic(Module):
    """Value net with a slow target copy refreshed every ``interval`` updates."""

    def __init__(self, in_width: int, cfg: BehaviorConfig, rng: np.random.Generator):
        widths = [in_width, *[cfg.hidden] * cfg.layers, 1]
        self.net = DenseNet(widths, rng)
        self._slow = DenseNet(widths, np.random.default_rng(0))
        self._slow.copy_from(self.net)
        for p in self._slow.parameters():
            p.requires_grad = False
        self.interval = cfg.slow_interval
        self.updates = 0

    @property
    def slow(self) -> DenseNet:
        return self._slow

    def value(self, x: Tensor) -> Tensor:
        out = self.net(x)
        return out.reshape(out.data.shape[:-1])

    def slow_value(self, x: Tensor) -> Tensor:
        out = self._slow(x)
        return out.reshape(out.data.shape[:-1])

    def advance(self) -> None:
        self.updates += 1
        if self.updates % self.interval == 0:
            self._slow.copy_from(self.net)
            for p in self._slow.parameters():
                p.requires_grad = False

    def full_state(self) -> dict:
        state = {f"net.{k}": v for k, v in self.net.state_dict().items()}
        state.update({f"slow.{k}": v for k, v in self._slow.state_dict().items()})
        state["updates"] = np.array(float(self.updates))
        return state

    def load_full_state(self, state: dict) -> None:
        self.net.load_state_dict({k[4:]: v for k, v in state.items() if k.startswith("net.")}, "critic")
        self._slow.load_state_dict({k[5:]: v for k, v in state.items() if k.startswith("slow.")}, "critic")
        for p in self._slow.parameters():
            p.requires_grad = False
        self.updates = int(state["updates"])


def with_context(feat: Tensor, context: np.ndarray | None) -> Tensor:
    if context is None or context.shape[-1] == 0:
        return feat
    ctx = np.broadcast_to(context, feat.data.shape[:-1] + (context.shape[-1],))
    return concat([feat, Tensor(ctx)], axis=-1)


def act(actor: Actor, feat, mode: str = "sample", rng=None, context=None) -> np.ndarray:
    """Action for a batch of states; ``mode`` is ``"sample"`` or ``"mode"``."""
    x = with_context(feat if isinstance(feat, Tensor) else Tensor(feat), context)
    with no_grad():
        if mode == "mode":
            return actor.mode(x).data.copy()
        if mode != "sample":
            raise ValueError(f"unknown action mode {mode!r}")
        return actor.sample(x, rng)[0].data.copy()


RewardFn = Callable[[Rollout], Tensor]


def actor_update(
    model,
    actor: Actor,
    critic: Critic,
    start: ModelState,
    cfg: BehaviorConfig,
    opt: Adam | None,
    rng: np.random.Generator,
    reward_fn: RewardFn | None = None,
    context: np.ndarray | None = None,
    extra_frozen=(),
):
    """Dynamics-backprop actor step in imagination.

    Loss ``-mean(V_lambda) - entropy_scale * mean(entropy)``; only actor
    parameters are updated. Returns ``(loss, rollout, returns, grads)`` with
    rollout and returns detached.
    """
    start = start.detach()
    entropies: list[Tensor] = []

    def policy(state: ModelState) -> Tensor:
        a, ent = actor.sample(with_context(state.feat(), context), rng)
        entropies.append(ent)
        return a

    modules = [m for m in (model if isinstance(model, Module) else None, critic, *extra_frozen) if m is not None]
    with frozen_graph(*modules):
        rollout = imagine(model, start, policy, cfg.horizon, rng)
        rewards = reward_fn(rollout) if reward_fn is not None else rollout.rewards
        values = critic.slow_value(with_context(rollout.feats[1:], context))
        returns = lambda_returns(rewards, values, cfg.gamma, cfg.lam)
        entropy = stack(entropies, axis=0)
        loss = -returns.mean() - entropy.mean() * cfg.entropy_scale
    if not np.isfinite(loss.item()) or abs(loss.item()) > 1e6:
        raise FloatingPointError(f"actor loss exploded: {loss.item()}")
    grads = backward(loss, actor.parameters())
    if opt is not None:
        opt.step(grads)
    rollout = Rollout(
        feats=stop_gradient(rollout.feats),
        actions=stop_gradient(rollout.actions),
        deter=stop_gradient(rollout.deter),
        rewards=stop_gradient(rewards),
        entropy=stop_gradient(entropy),
    )
    return loss.item(), rollout, stop_gradient(returns), grads


def critic_update(
    critic: Critic,
    feats: Tensor,
    targets: Tensor,
    opt: Adam | None,
    context: np.ndarray | None = None,
):
    """Regress ``v(z_t)`` onto detached lambda-returns for t < H.

    ``feats`` and ``targets`` are indexed by imagined time, shape (H, N, F)
    and (H, N). Returns ``(loss, grads)`` and advances the slow-copy counter.
    """
    feats = stop_gradient(feats)
    targets = stop_gradient(targets)
    H = targets.data.shape[0]
    if H > 1:
        feats, targets = feats[: H - 1], targets[: H - 1]
    diff = critic.value(with_context(feats, context)) - targets
    loss = (diff * diff).mean() * 0.5
    grads = backward(loss, critic.net.parameters())
    if opt is not None:
        opt.step(grads)
    critic.advance()
    return loss.item(), grads


class Behavior:
    """Actor, critic and their optimizers."""

    def __init__(
        self,
        feat_dim: int,
        act_dim: int,
        cfg: BehaviorConfig,
        rng: np.random.Generator,
        context_dim: int = 0,
        optim: dict | None = None,
    ):
        optim = optim or {}
        self.cfg = cfg
        self.act_dim = act_dim
        self.context_dim = context_dim
        self.actor = Actor(feat_dim + context_dim, act_dim, cfg, rng)
        self.critic = Critic(feat_dim + context_dim, cfg, rng)
        self.actor_opt = Adam(self.actor.parameters(), cfg.actor_lr, name="actor", **optim)
        self.critic_opt = Adam(self.critic.net.parameters(), cfg.critic_lr, name="critic", **optim)

    def reset_actor(self, rng: np.random.Generator, optim: dict | None = None) -> None:
        self.actor = Actor(self.actor.net.widths[0], self.act_dim, self.cfg, rng)
        self.actor_opt = Adam(self.actor.parameters(), self.cfg.actor_lr, name="actor", **(optim or {}))

    def train(self, model, start: ModelState, rng, reward_fn=None, context=None, extra_frozen=()):
        actor_loss, rollout, returns, _ = actor_update(
            model, self.actor, self.critic, start, self.cfg, self.actor_opt, rng,
            reward_fn, context, extra_frozen,
        )
        critic_loss, _ = critic_update(self.critic, rollout.feats[1:], returns, self.critic_opt, context)
        metrics = {
            "actor_loss": actor_loss,
            "critic_loss": critic_loss,
            "imag_reward": float(rollout.rewards.data.mean()),
            "actor_entropy": float(rollout.entropy.data.mean()),
        }
        return metrics, rollout
