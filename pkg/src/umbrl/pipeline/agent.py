"""Agent: world model, actor-critic, optional reward source, and the acting loop state."""

from __future__ import annotations

import dataclasses

import numpy as np

from ..behavior import Behavior, act
from ..explore import make_reward_source, needs_intrinsic_head, regress_skill_aps, select_skill_diayn
from ..ndgrad import Adam, Tensor, backward, no_grad, softmax
from ..planner import plan
from ..worldmodel import ModelState, WorldModel, freeze_decoder, observe_sequence_no_grad
from .snapshot import Snapshot, SnapshotError


class Agent:
    def __init__(self, obs_dim: int, act_dim: int, cfg, rng: np.random.Generator, method: str | None = None):
        self.cfg = cfg
        self.obs_dim = obs_dim
        self.act_dim = act_dim
        self.method = method
        model_cfg = dataclasses.replace(cfg.model, intrinsic_head=bool(method) and needs_intrinsic_head(method))
        self.model = WorldModel(obs_dim, act_dim, model_cfg, rng)
        self.model_opt = Adam(self._model_params(), cfg.run.model_lr, name="model")
        self.source = None
        if method is not None:
            explore_cfg = dataclasses.replace(cfg.explore, method=method)
            self.source = make_reward_source(explore_cfg, self.model, rng)
        context_dim = self.source.skill_dim if self.source is not None else 0
        self.behavior = Behavior(model_cfg.feat_width, act_dim, cfg.behavior, rng, context_dim)
        self.context = None
        self.reward_head_trained = False
        self.reset()

    def _model_params(self):
        return [p for n, p in self.model.named_parameters() if not n.startswith("intrinsic_head.")]

    @property
    def actor(self):
        return self.behavior.actor

    @property
    def critic(self):
        return self.behavior.critic

    @property
    def skill_dim(self) -> int:
        return self.source.skill_dim if self.source is not None else 0

    # -- acting ------------------------------------------------------------
    def reset(self) -> None:
        self.state = self.model.initial_state(1)
        self.prev_action = np.zeros(self.act_dim)
        self.plan_dist = None

    def observe(self, obs, is_first: bool) -> None:
        if is_first:
            self.reset()
        with no_grad():
            _, _, self.state = self.model.observe_step(self.state, self.prev_action[None], np.asarray(obs)[None], None, False)

    def act(self, rng: np.random.Generator, explore: bool = True, planner_cfg=None, random: bool = False):
        if random:
            action = rng.uniform(-1.0, 1.0, size=self.act_dim)
        elif planner_cfg is not None:
            action, self.plan_dist = plan(
                self.state, self.model, self.actor, self.critic, planner_cfg, rng,
                prev=self.plan_dist, context=self.context, explore=explore,
            )
        else:
            action = act(self.actor, self.state.feat(), "sample" if explore else "mode", rng, self.context)[0]
        self.prev_action = np.asarray(action, dtype=np.float64)
        return self.prev_action.copy()

    # -- learning ----------------------------------------------------------
    def update(self, batch: dict, rng: np.random.Generator, phase: str) -> dict:
        """One model update and one actor-critic update.

        ``phase`` is ``"pt"`` (intrinsic rewards, reward head untouched unless
        the run is reward-known) or ``"ft"`` (extrinsic rewards via the head).
        """
        run = self.cfg.run
        pt = phase == "pt"
        train_reward = (not pt) or run.reward_known
        elbo, out = self.model.elbo_loss(batch, rng, train_reward=train_reward, reward_stop_grad=pt)
        if not np.isfinite(elbo.total.item()):
            raise FloatingPointError(f"world model loss is not finite: {elbo.total.item()}")
        self.model_opt.step(backward(elbo.total, self._model_params()))
        if train_reward:
            self.reward_head_trained = True
        metrics = elbo.as_floats()
        aux = {}
        if pt and self.source is not None:
            aux.update(self.source.train(self.model, batch, out, rng))
        if pt and self.method == "random":
            metrics["aux"] = aux
            return metrics

        feat = out.feat.data.reshape(-1, out.feat.data.shape[-1])
        n = min(run.imag_starts, len(feat))
        rows = rng.choice(len(feat), size=n, replace=False)
        start = ModelState.from_feat(feat[rows], self.model.cfg.deter)
        if pt and self.source is not None:
            context = self.source.sample_context(rng, n)
            source = self.source
            model = self.model

            def reward_fn(rollout):
                return source.imagined_reward(model, rollout, context)

            frozen = source.frozen_modules()
        else:
            context, reward_fn, frozen = self.context, None, ()
        bmetrics, rollout = self.behavior.train(self.model, start, rng, reward_fn, context, frozen)
        metrics.update(bmetrics)
        if pt and self.source is not None:
            aux.update(self.source.train_on_rollout(rollout, context))
            metrics["intrinsic_mean"] = bmetrics["imag_reward"]
        metrics["aux"] = aux
        return metrics

    # -- skills --------------------------------------------------------------
    def sample_skill(self, rng) -> None:
        self.context = self.source.sample_context(rng) if self.skill_dim else None

    def choose_skill(self, data: dict) -> dict:
        """Fix the skill for fine-tuning from the transitions collected so far."""
        if not self.skill_dim:
            return {}
        obs = data["obs"][None]
        out = observe_sequence_no_grad(self.model, obs, data["action"][None], data["is_first"][None])
        feat = out.feat.data[0]
        rewards = data["reward"]
        with no_grad():
            if self.method == "diayn":
                probs = softmax(self.source.discriminator(Tensor(feat)), axis=-1).data
                idx = select_skill_diayn(probs, rewards)
                self.context = np.eye(self.skill_dim)[idx]
                return {"skill": idx}
            phi = self.source.unit_features(Tensor(feat)).data
        w, info = regress_skill_aps(phi, rewards)
        self.context = w
        return info

    # -- snapshots ---------------------------------------------------------
    def snapshot(self, pt_steps: int, seed: int) -> Snapshot:
        groups = {
            "model": self.model.state_dict(),
            "actor": self.actor.state_dict(),
            "critic": self.critic.full_state(),
        }
        if self.source is not None:
            groups["explore"] = self.source.state_dict()
        meta = {
            "obs_dim": self.obs_dim,
            "act_dim": self.act_dim,
            "domain": self.cfg.env.domain,
            "reward_head_trained": bool(self.reward_head_trained),
            "decoder_frozen": bool(self.model.decoder_frozen),
            "model": dataclasses.asdict(self.model.cfg),
            "behavior": dataclasses.asdict(self.cfg.behavior),
        }
        return Snapshot(groups, int(pt_steps), self.method or "none", int(seed), meta)

    @classmethod
    def from_snapshot(cls, snap: Snapshot, cfg, rng, use_actor: bool = True) -> "Agent":
        """Fresh agent whose model (and optionally actor) come from ``snap``; critic stays fresh."""
        method = None if snap.method == "none" else snap.method
        agent = cls(snap.meta.get("obs_dim", 6), snap.meta.get("act_dim", 2), cfg, rng, method)
        agent.model.load_state_dict(snap.group("model"), "model")
        if use_actor:
            agent.actor.load_state_dict(snap.group("actor"), "actor")
        if agent.source is not None and "explore" in snap.groups:
            agent.source.load_state_dict(snap.group("explore"))
        agent.reward_head_trained = bool(snap.meta.get("reward_head_trained", False))
        return agent

    def freeze_decoder(self) -> None:
        freeze_decoder(self.model, True)


__all__ = ["Agent", "SnapshotError"]
