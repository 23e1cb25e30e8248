"""Dyna-MPC: MPPI over latent rollouts, seeded by the imagination actor."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .behavior import lambda_returns, with_context
from .ndgrad import Tensor, no_grad


@dataclass
class PlannerConfig:
    iterations: int = 12
    num_samples: int = 512
    top_k: int = 64
    mixture: float = 0.05
    min_std: float = 0.1
    temperature: float = 0.5
    momentum: float = 0.1
    horizon: int = 5
    init_std: float = 0.5
    use_critic: bool = True
    gamma: float = 0.99
    lam: float = 0.95

    @property
    def num_policy(self) -> int:
        if self.mixture <= 0:
            return 0
        return max(1, int(round(self.mixture * self.num_samples)))

    def __post_init__(self):
        if self.iterations < 1 or self.horizon < 1 or self.num_samples < 0:
            raise ValueError(f"invalid planner config {self}")
        if not 1 <= self.top_k <= self.num_samples + self.num_policy:
            raise ValueError(
                f"top_k={self.top_k} must lie in [1, N + N_pi = {self.num_samples + self.num_policy}]"
            )

    @classmethod
    def zero_shot(cls, **overrides) -> "PlannerConfig":
        """Pure MPPI preset: more samples, longer horizon, no actor or critic."""
        base = dict(num_samples=1000, top_k=100, horizon=15, mixture=0.0, use_critic=False)
        base.update(overrides)
        return cls(**base)


@dataclass
class PlanDistribution:
    mean: np.ndarray  # (H, A)
    std: np.ndarray  # (H, A)

    def copy(self) -> "PlanDistribution":
        return PlanDistribution(self.mean.copy(), self.std.copy())


def initial_plan(horizon: int, act_dim: int, init_std: float) -> PlanDistribution:
    return PlanDistribution(np.zeros((horizon, act_dim)), np.full((horizon, act_dim), init_std))


def warm_start(prev: PlanDistribution | None, horizon: int, act_dim: int, init_std: float) -> PlanDistribution:
    """Shift the previous mean one step left (zero-fill the tail) and reset the std."""
    if prev is None or prev.mean.shape != (horizon, act_dim):
        return initial_plan(horizon, act_dim, init_std)
    mean = np.zeros_like(prev.mean)
    mean[:-1] = prev.mean[1:]
    return PlanDistribution(mean, np.full_like(prev.std, init_std))


def softmax_weights(returns: np.ndarray, temperature: float) -> np.ndarray:
    z = temperature * np.asarray(returns, dtype=np.float64)
    z = z - z.max()
    w = np.exp(z)
    return w / w.sum()


def mppi_update(
    elites: np.ndarray,
    returns: np.ndarray,
    dist: PlanDistribution,
    temperature: float,
    min_std: float,
    momentum: float,
) -> PlanDistribution:
    """Importance-weighted refit of (mean, std) to the top-k sequences.

    ``elites`` is (k, H, A). The fresh estimate is blended with the current
    one as ``m * old + (1 - m) * new``; std is floored at ``min_std`` both
    before and after blending.
    """
    elites = np.asarray(elites, dtype=np.float64)
    if elites.shape[0] < 1:
        raise ValueError("need at least one elite trajectory")
    if not np.all(np.isfinite(returns)):
        raise FloatingPointError("non-finite returns passed to mppi_update")
    rho = softmax_weights(returns, temperature)[:, None, None]
    mean_new = (rho * elites).sum(axis=0)
    std_new = np.sqrt((rho * (elites - mean_new) ** 2).sum(axis=0))
    std_new = np.maximum(std_new, min_std)
    mean = momentum * dist.mean + (1.0 - momentum) * mean_new
    std = np.maximum(momentum * dist.std + (1.0 - momentum) * std_new, min_std)
    return PlanDistribution(np.clip(mean, -1.0, 1.0), std)


@dataclass
class PlanStats:
    actor_calls: int = 0
    best_returns: list | None = None


def score_trajectories(model, critic, start, actions_fn, cfg: PlannerConfig, n: int, rng, context=None):
    """Roll ``n`` copies of ``start`` for ``cfg.horizon`` steps and score them.

    ``actions_fn(t, state) -> (n, A)`` supplies actions. Returns the first
    lambda-return of each trajectory and the (n, H, A) actions taken.
    """
    state = model.repeat_state(start, n)
    feats, acts = [], []
    for t in range(cfg.horizon):
        a = np.clip(actions_fn(t, state), -1.0, 1.0)
        _, state = model.img_step(state, Tensor(a), rng, True)
        acts.append(a)
        feats.append(state.feat())
    feat = np.stack([f.data for f in feats], axis=0)
    rewards = model.reward(Tensor(feat)).data
    if cfg.use_critic and critic is not None:
        values = critic.slow_value(with_context(Tensor(feat), context)).data
    else:
        values = np.zeros_like(rewards)
    for name, arr in (("reward head", rewards), ("critic", values)):
        if not np.all(np.isfinite(arr)):
            raise FloatingPointError(f"non-finite {name} output during planning")
    returns = lambda_returns(rewards, values, cfg.gamma, cfg.lam).data[0]
    return returns, np.stack(acts, axis=1)


def plan(
    state,
    model,
    actor,
    critic,
    cfg: PlannerConfig,
    rng: np.random.Generator,
    prev: PlanDistribution | None = None,
    context: np.ndarray | None = None,
    explore: bool = True,
    stats: PlanStats | None = None,
):
    """Choose an action for a single latent ``state`` (batch of one).

    Each iteration scores N Gaussian sequences and N_pi actor rollouts from
    ``state`` with lambda-returns (reward head plus slow critic), keeps the
    top-k of the combined pool and refits the Gaussian. The returned action
    is a clamped sample from the first-step Gaussian, or its mean when
    ``explore`` is false. Parameters are never modified.
    """
    A = model.act_dim
    H = cfg.horizon
    dist = warm_start(prev, H, A, cfg.init_std)
    N, Npi = cfg.num_samples, cfg.num_policy if actor is not None else 0
    with no_grad():
        for _ in range(cfg.iterations):
            noise = rng.standard_normal((N, H, A))
            seqs = np.clip(dist.mean[None] + dist.std[None] * noise, -1.0, 1.0)

            def actions(t, s):
                if Npi == 0:
                    return seqs[:, t]
                if stats is not None:
                    stats.actor_calls += 1
                feat = s.feat()[N:]
                pi = actor.sample(with_context(feat, context), rng)[0].data
                return np.concatenate([seqs[:, t], pi], axis=0)

            returns, seqs_all = score_trajectories(model, critic, state, actions, cfg, N + Npi, rng, context)
            k = min(cfg.top_k, len(returns))
            top = np.argsort(-returns, kind="stable")[:k]
            if stats is not None:
                stats.best_returns = (stats.best_returns or []) + [float(returns[top[0]])]
            dist = mppi_update(seqs_all[top], returns[top], dist, cfg.temperature, cfg.min_std, cfg.momentum)
    if explore:
        action = np.clip(dist.mean[0] + dist.std[0] * rng.standard_normal(A), -1.0, 1.0)
    else:
        action = dist.mean[0].copy()
    return action, dist


__all__ = [
    "PlanDistribution",
    "PlanStats",
    "PlannerConfig",
    "initial_plan",
    "mppi_update",
    "plan",
    "softmax_weights",
    "warm_start",
]
