"""Discrete-latent recurrent state-space model.

The latent state is ``z = (h, s)``: a GRU hidden vector ``h`` and a block
of ``L`` categorical factors with ``C`` classes each, carried as one-hot
samples (straight-through) or as probabilities. Observations are vectors;
encoder and decoder are MLPs.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Callable

import numpy as np

from .ndgrad import (
    DenseNet,
    GruCell,
    Module,
    Tensor,
    concat,
    log_softmax,
    maximum,
    no_grad,
    softmax,
    stack,
    stop_gradient,
    straight_through_onehot,
)


@dataclass
class WorldModelConfig:
    deter: int = 32
    stoch: int = 8
    classes: int = 8
    embed: int = 32
    hidden: int = 64
    layers: int = 2
    kl_alpha: float = 0.8
    free_nats: float = 1.0
    kl_scale: float = 1.0
    intrinsic_head: bool = False

    @property
    def stoch_width(self) -> int:
        return self.stoch * self.classes

    @property
    def feat_width(self) -> int:
        return self.deter + self.stoch * self.classes


class ModelState:
    """Batch of latent states: ``h`` (N, deter) and ``stoch`` (N, L*C)."""

    __slots__ = ("h", "stoch")

    def __init__(self, h: Tensor, stoch: Tensor):
        self.h = h
        self.stoch = stoch

    def feat(self) -> Tensor:
        return concat([self.h, self.stoch], axis=-1)

    def detach(self) -> "ModelState":
        return ModelState(stop_gradient(self.h), stop_gradient(self.stoch))

    def __len__(self) -> int:
        return self.h.data.shape[0]

    def repeat(self, n: int) -> "ModelState":
        return ModelState(
            Tensor(np.repeat(self.h.data, n, axis=0)), Tensor(np.repeat(self.stoch.data, n, axis=0))
        )

    @classmethod
    def from_feat(cls, feat: np.ndarray, deter: int) -> "ModelState":
        feat = np.asarray(feat, dtype=np.float64)
        return cls(Tensor(feat[..., :deter]), Tensor(feat[..., deter:]))


class StateDistribution:
    """Categorical factors given by ``logits`` of shape (..., L, C)."""

    __slots__ = ("logits",)

    def __init__(self, logits: Tensor):
        self.logits = logits if isinstance(logits, Tensor) else Tensor(logits)

    @classmethod
    def from_probs(cls, probs) -> "StateDistribution":
        return cls(Tensor(np.log(np.asarray(probs, dtype=np.float64))))

    @property
    def probs(self) -> Tensor:
        return softmax(self.logits, axis=-1)

    @property
    def log_probs(self) -> Tensor:
        return log_softmax(self.logits, axis=-1)

    def detach(self) -> "StateDistribution":
        return StateDistribution(stop_gradient(self.logits))


def categorical_kl(p: StateDistribution, q: StateDistribution) -> Tensor:
    """KL(p || q) summed over the L factors; shape = leading batch dims."""
    lp = p.log_probs
    lq = q.log_probs
    return (softmax(p.logits, axis=-1) * (lp - lq)).sum(axis=-1).sum(axis=-1)


def kl_balanced(
    post: StateDistribution, prior: StateDistribution, alpha: float = 0.8, free_nats: float = 1.0
) -> Tensor:
    """Balanced KL with a free-nats floor, averaged over the batch.

    ``max(alpha * KL(sg(post) || prior) + (1 - alpha) * KL(post || sg(prior)), free_nats)``.
    The first term trains the prior, the second the posterior.
    """
    if not 0.0 <= alpha <= 1.0:
        raise ValueError(f"alpha must be in [0, 1], got {alpha}")
    if free_nats < 0:
        raise ValueError(f"free_nats must be >= 0, got {free_nats}")
    lhs = categorical_kl(post.detach(), prior).mean()
    rhs = categorical_kl(post, prior.detach()).mean()
    return maximum(lhs * alpha + rhs * (1.0 - alpha), free_nats)


@dataclass
class ElboBreakdown:
    recon: Tensor
    reward_nll: Tensor
    kl: Tensor
    total: Tensor

    def as_floats(self) -> dict[str, float]:
        return {
            "recon": self.recon.item(),
            "reward_nll": self.reward_nll.item(),
            "kl": self.kl.item(),
            "model_loss": self.total.item(),
        }


@dataclass
class ObserveResult:
    """Per-step outputs of a posterior unroll, each stacked as (B, T, ...)."""

    feat: Tensor
    deter: Tensor
    post_logits: Tensor
    prior_logits: Tensor
    embed: Tensor


@dataclass
class Rollout:
    """Imagined trajectory. ``feats`` includes the start state at index 0."""

    feats: Tensor  # (H+1, N, F)
    actions: Tensor  # (H, N, A)
    deter: Tensor  # (H+1, N, D)
    rewards: Tensor | None = None  # (H, N), reward head on z_1..z_H
    entropy: Tensor | None = None  # (H, N)

    @property
    def horizon(self) -> int:
        return self.actions.data.shape[0]


def _check_finite(t: Tensor, component: str) -> None:
    if not np.all(np.isfinite(t.data)):
        raise FloatingPointError(f"non-finite logits from {component}")


class WorldModel(Module):
    """Encoder, decoder, recurrent prior dynamics, posterior and reward heads."""

    def __init__(self, obs_dim: int, act_dim: int, cfg: WorldModelConfig, rng: np.random.Generator):
        self.cfg = cfg
        self.obs_dim = obs_dim
        self.act_dim = act_dim
        hid = [cfg.hidden] * cfg.layers
        feat = cfg.feat_width
        logits = cfg.stoch * cfg.classes
        self.encoder = DenseNet([obs_dim, *hid, cfg.embed], rng)
        self.decoder = DenseNet([feat, *hid, obs_dim], rng)
        self.gru = GruCell(cfg.stoch_width + act_dim, cfg.deter, rng)
        self.prior_net = DenseNet([cfg.deter, cfg.hidden, logits], rng)
        self.post_net = DenseNet([cfg.deter + cfg.embed, cfg.hidden, logits], rng)
        self.reward_head = DenseNet([feat, *hid, 1], rng)
        self.intrinsic_head = DenseNet([feat, *hid, 1], rng) if cfg.intrinsic_head else None
        self._encoder_calls = 0
        self.decoder_frozen = False

    # -- bookkeeping ---------------------------------------------------
    @property
    def encoder_calls(self) -> int:
        return self._encoder_calls

    def named_parameters(self, prefix: str = ""):
        out = []
        for name in ("encoder", "decoder", "gru", "prior_net", "post_net", "reward_head", "intrinsic_head"):
            mod = getattr(self, name)
            if mod is not None:
                out.extend(mod.named_parameters(f"{prefix}{name}."))
        return out

    def component(self, name: str) -> Module:
        return getattr(self, name)

    # -- state helpers -------------------------------------------------
    def initial_state(self, batch: int) -> ModelState:
        """Zero ``h`` and a uniform-probability stochastic block."""
        cfg = self.cfg
        return ModelState(
            Tensor(np.zeros((batch, cfg.deter))),
            Tensor(np.full((batch, cfg.stoch_width), 1.0 / cfg.classes)),
        )

    def repeat_state(self, state: ModelState, n: int) -> ModelState:
        return state.repeat(n)

    def _reset(self, state: ModelState, action: Tensor, is_first: np.ndarray):
        keep = (1.0 - np.asarray(is_first, dtype=np.float64))[:, None]
        init = self.initial_state(len(keep))
        h = state.h * keep
        stoch = state.stoch * keep + init.stoch.data * (1.0 - keep)
        return ModelState(h, stoch), action * keep

    def _split_logits(self, flat: Tensor) -> Tensor:
        return flat.reshape(flat.data.shape[:-1] + (self.cfg.stoch, self.cfg.classes))

    def _sample(self, dist: StateDistribution, rng) -> Tensor:
        one_hot = straight_through_onehot(dist.probs, rng)
        return one_hot.reshape(one_hot.data.shape[:-2] + (self.cfg.stoch_width,))

    # -- components ------------------------------------------------------
    def encode(self, obs) -> Tensor:
        self._encoder_calls += 1
        return self.encoder(obs if isinstance(obs, Tensor) else Tensor(obs))

    def prior(self, h: Tensor) -> StateDistribution:
        logits = self._split_logits(self.prior_net(h))
        _check_finite(logits, "prior")
        return StateDistribution(logits)

    def posterior(self, h: Tensor, embed: Tensor) -> StateDistribution:
        logits = self._split_logits(self.post_net(concat([h, embed], axis=-1)))
        _check_finite(logits, "posterior")
        return StateDistribution(logits)

    def recurrent(self, state: ModelState, action) -> Tensor:
        action = action if isinstance(action, Tensor) else Tensor(action)
        return self.gru(concat([state.stoch, action], axis=-1), state.h)

    def reward(self, feat: Tensor) -> Tensor:
        out = self.reward_head(feat)
        return out.reshape(out.data.shape[:-1])

    def intrinsic(self, feat: Tensor) -> Tensor:
        if self.intrinsic_head is None:
            raise ValueError("world model was built without an intrinsic-reward head")
        out = self.intrinsic_head(feat)
        return out.reshape(out.data.shape[:-1])

    def decode(self, feat: Tensor) -> Tensor:
        return self.decoder(feat)

    # -- steps ---------------------------------------------------------
    def observe_step(self, prev: ModelState, action, obs, rng=None, sample: bool = True):
        """One posterior step: returns ``(posterior, prior, next_state)``."""
        return self.observe_step_embed(prev, action, self.encode(obs), rng, sample)

    def observe_step_embed(self, prev: ModelState, action, embed: Tensor, rng=None, sample=True):
        h = self.recurrent(prev, action)
        prior = self.prior(h)
        post = self.posterior(h, embed)
        stoch = self._sample(post, rng if sample else None)
        return post, prior, ModelState(h, stoch)

    def img_step(self, prev: ModelState, action, rng=None, sample: bool = True):
        """One prior step: returns ``(prior, next_state)``. Never touches observations."""
        h = self.recurrent(prev, action)
        prior = self.prior(h)
        stoch = self._sample(prior, rng if sample else None)
        return prior, ModelState(h, stoch)

    def observe(self, obs, action, is_first, rng=None, sample: bool = True) -> ObserveResult:
        """Posterior unroll over (B, T) sequences, resetting wherever ``is_first``."""
        obs = np.asarray(obs, dtype=np.float64)
        action = np.asarray(action, dtype=np.float64)
        is_first = np.asarray(is_first, dtype=bool)
        B, T = obs.shape[:2]
        embed = self.encode(obs.reshape(B * T, -1)).reshape(B, T, self.cfg.embed)
        state = self.initial_state(B)
        hs, stochs, posts = [], [], []
        for t in range(T):
            a = Tensor(action[:, t])
            if t == 0 or is_first[:, t].any():
                state, a = self._reset(state, a, is_first[:, t] | (t == 0))
            h = self.recurrent(state, a)
            post = self.posterior(h, embed[:, t])
            stoch = self._sample(post, rng if sample else None)
            state = ModelState(h, stoch)
            hs.append(h)
            stochs.append(stoch)
            posts.append(post.logits)
        deter = stack(hs, axis=1)
        prior_logits = self._split_logits(self.prior_net(deter))
        _check_finite(prior_logits, "prior")
        return ObserveResult(
            feat=concat([deter, stack(stochs, axis=1)], axis=-1),
            deter=deter,
            post_logits=stack(posts, axis=1),
            prior_logits=prior_logits,
            embed=embed,
        )

    def elbo_loss(
        self,
        batch: dict,
        rng=None,
        train_reward: bool = True,
        reward_stop_grad: bool = False,
    ) -> tuple[ElboBreakdown, ObserveResult]:
        """Negative ELBO on a (B, T) batch with ``obs``, ``action``, ``reward``, ``is_first``.

        Reconstruction and reward terms are unit-variance Gaussian NLLs
        (``0.5 * squared error``) averaged over steps. With
        ``train_reward=False`` the reward term is reported as 0.
        """
        obs = np.asarray(batch["obs"], dtype=np.float64)
        if obs.ndim != 3 or obs.shape[1] < 2:
            raise ValueError(f"elbo needs (B, T>=2, obs) sequences, got shape {obs.shape}")
        cfg = self.cfg
        out = self.observe(obs, batch["action"], batch["is_first"], rng)
        B, T = obs.shape[:2]
        feat = out.feat.reshape(B * T, cfg.feat_width)
        diff = self.decode(feat) - obs.reshape(B * T, -1)
        recon = (diff * diff).sum(axis=-1).mean() * 0.5
        if train_reward:
            rin = stop_gradient(feat) if reward_stop_grad else feat
            rdiff = self.reward(rin) - np.asarray(batch["reward"], dtype=np.float64).reshape(B * T)
            reward_nll = (rdiff * rdiff).mean() * 0.5
        else:
            reward_nll = Tensor(0.0)
        kl = kl_balanced(
            StateDistribution(out.post_logits),
            StateDistribution(out.prior_logits),
            cfg.kl_alpha,
            cfg.free_nats,
        )
        total = recon + reward_nll + kl * cfg.kl_scale
        return ElboBreakdown(recon, reward_nll, kl, total), out

    def imagine(self, start: ModelState, policy: Callable, horizon: int, rng=None, sample=True) -> Rollout:
        return imagine(self, start, policy, horizon, rng, sample)


def imagine(model, start: ModelState, policy: Callable, horizon: int, rng=None, sample: bool = True) -> Rollout:
    """Roll the prior dynamics forward under ``policy(state) -> action``.

    ``model`` needs ``img_step``, ``reward`` and states with ``feat()`` and
    ``h``. Rewards come from the reward head on z_1..z_H.
    """
    if horizon < 1:
        raise ValueError("imagination horizon must be >= 1")
    state = start
    feats = [state.feat()]
    deters = [state.h]
    actions = []
    for _ in range(horizon):
        action = policy(state)
        _, state = model.img_step(state, action, rng, sample)
        actions.append(action if isinstance(action, Tensor) else Tensor(action))
        feats.append(state.feat())
        deters.append(state.h)
    feats_t = stack(feats, axis=0)
    rollout = Rollout(feats=feats_t, actions=stack(actions, axis=0), deter=stack(deters, axis=0))
    rollout.rewards = model.reward(feats_t[1:])
    return rollout


def freeze_decoder(model: WorldModel, frozen: bool = True) -> WorldModel:
    """Exclude (or re-include) the decoder from optimizer updates."""
    for p in model.decoder.parameters():
        p.frozen = frozen
    model.decoder_frozen = frozen
    return model


def observe_sequence_no_grad(model: WorldModel, obs, action, is_first, sample: bool = False) -> ObserveResult:
    with no_grad():
        return model.observe(obs, action, is_first, None, sample)
