"""Intrinsic-reward sources for reward-free pre-training.

Pure reward functions live at module level and work on numpy arrays; the
``*Source`` classes wrap them with the networks they train, the state
representation they read and the normalization they apply.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .ndgrad import (
    Adam,
    DenseNet,
    Module,
    Tensor,
    backward,
    concat,
    log,
    log_softmax,
    sqrt,
    stack,
    stop_gradient,
)

METHODS = ("icm", "p2e", "rnd", "lbs", "apt", "diayn", "aps", "random")
NORM_MODES = {
    "icm": "ema",
    "lbs": "ema",
    "p2e": "ema",
    "apt": "ema",
    "diayn": "ema",
    "rnd": "rnd_native",
    "aps": "none",
    "random": "none",
}
HEAD_METHODS = ("icm", "rnd", "lbs")


# -- pure reward functions ---------------------------------------------------


def icm_reward(pred: np.ndarray, target: np.ndarray) -> np.ndarray:
    """Squared forward-model error ``||g(e_prev, a) - e||^2`` over the last axis."""
    d = np.asarray(pred, dtype=np.float64) - np.asarray(target, dtype=np.float64)
    return np.sum(d * d, axis=-1)


def rnd_reward(pred: np.ndarray, target: np.ndarray) -> np.ndarray:
    d = np.asarray(pred, dtype=np.float64) - np.asarray(target, dtype=np.float64)
    return np.sum(d * d, axis=-1)


def p2e_reward(preds: np.ndarray) -> np.ndarray:
    """Ensemble disagreement: population variance over members (axis 0), mean over dims."""
    preds = np.asarray(preds, dtype=np.float64)
    if preds.shape[0] < 2:
        raise ValueError(f"disagreement needs at least 2 ensemble members, got {preds.shape[0]}")
    # centering on one member first makes identical members give exactly zero
    shifted = preds - preds[:1]
    return shifted.var(axis=0).mean(axis=-1)


def lbs_reward(post_probs: np.ndarray, prior_probs: np.ndarray) -> np.ndarray:
    """KL(posterior || prior) over (..., factors, classes), summed over factors."""
    p = np.asarray(post_probs, dtype=np.float64)
    q = np.asarray(prior_probs, dtype=np.float64)
    with np.errstate(divide="ignore", invalid="ignore"):
        terms = np.where(p > 0, p * (np.log(p) - np.log(q)), 0.0)
    return terms.sum(axis=-1).sum(axis=-1)


def knn_distances(query: np.ndarray, particles: np.ndarray, exclude_self: bool = False) -> np.ndarray:
    query = np.atleast_2d(np.asarray(query, dtype=np.float64))
    particles = np.atleast_2d(np.asarray(particles, dtype=np.float64))
    if query.shape[1] != particles.shape[1]:
        raise ValueError(f"query width {query.shape[1]} != particle width {particles.shape[1]}")
    # accumulate one coordinate at a time: fixed summation order, no (n, m, d) temporary
    d2 = np.zeros((query.shape[0], particles.shape[0]))
    for j in range(query.shape[1]):
        diff = query[:, j, None] - particles[None, :, j]
        d2 += diff * diff
    if exclude_self:
        if query.shape != particles.shape:
            raise ValueError("exclude_self needs the query set to be the particle set")
        np.fill_diagonal(d2, np.inf)
    return d2


def knn_entropy(
    query: np.ndarray,
    particles: np.ndarray,
    k: int = 12,
    c: float = 1e-6,
    exclude_self: bool = False,
) -> np.ndarray:
    """Particle entropy reward ``sum_{i<=k} log(||q - p_i||^2 + c)`` over the k nearest.

    ``query`` is (n, d) or (d,); returns (n,) or a scalar. The k smallest
    log terms are added in ascending order of distance.
    """
    single = np.ndim(query) == 1
    d2 = knn_distances(query, particles, exclude_self)
    available = d2.shape[1] - (1 if exclude_self else 0)
    if k < 1 or k > available:
        raise ValueError(f"knn_entropy needs 1 <= k <= {available} particles, got k={k}")
    nearest = np.sort(d2, axis=1)[:, :k]
    logs = np.log(nearest + c)
    total = np.zeros(d2.shape[0])
    for j in range(k):
        total = total + logs[:, j]
    return total[0] if single else total


def knn_entropy_tensor(query: Tensor, k: int = 12, c: float = 1e-6) -> Tensor:
    """Differentiable particle reward of each row of ``query`` against the others.

    Neighbors are chosen on values and detached; gradients reach the query only.
    """
    q = query.data
    d2 = knn_distances(q, q, exclude_self=True)
    if k > q.shape[0] - 1:
        raise ValueError(f"knn_entropy needs at least {k + 1} states, got {q.shape[0]}")
    idx = np.argsort(d2, axis=1, kind="stable")[:, :k]
    neighbors = q[idx]  # (n, k, d), constants
    diff = query.reshape(q.shape[0], 1, q.shape[1]) - neighbors
    return log((diff * diff).sum(axis=-1) + c).sum(axis=-1)


def diayn_reward(skill_log_probs: np.ndarray, skills: np.ndarray) -> np.ndarray:
    """``log q(w | z)`` of the active one-hot skill."""
    return np.sum(np.asarray(skill_log_probs) * np.asarray(skills), axis=-1)


def aps_reward(entropy_term: np.ndarray, features: np.ndarray, skills: np.ndarray) -> np.ndarray:
    """Particle entropy plus the successor-feature alignment ``w . phi(z)``."""
    return np.asarray(entropy_term) + np.sum(np.asarray(features) * np.asarray(skills), axis=-1)


def unit_normalize(x: np.ndarray, eps: float = 1e-12) -> np.ndarray:
    x = np.asarray(x, dtype=np.float64)
    return x / np.maximum(np.linalg.norm(x, axis=-1, keepdims=True), eps)


# -- normalizers ---------------------------------------------------------------


class EmaNormalizer:
    """Divide by an EMA of the mean absolute reward."""

    mode = "ema"

    def __init__(self, momentum: float = 0.95, floor: float = 1e-8):
        self.momentum = momentum
        self.floor = floor
        self.scale = 0.0
        self.updates = 0

    def update(self, raw) -> None:
        raw = np.asarray(raw, dtype=np.float64)
        self.scale = self.momentum * self.scale + (1.0 - self.momentum) * float(np.mean(np.abs(raw)))
        self.updates += 1

    def factor(self) -> float:
        return 1.0 / max(self.scale, self.floor)

    def __call__(self, raw):
        self.update(raw)
        return np.asarray(raw, dtype=np.float64) * self.factor()

    def state(self) -> dict:
        return {"scale": np.array(self.scale), "updates": np.array(float(self.updates))}

    def load(self, state: dict) -> None:
        self.scale = float(state["scale"])
        self.updates = int(state["updates"])


class RunningRms:
    """Divide by the running root-mean-square of every reward seen so far."""

    mode = "rnd_native"

    def __init__(self, floor: float = 1e-8):
        self.floor = floor
        self.mean_sq = 0.0
        self.count = 0.0

    def update(self, raw) -> None:
        raw = np.asarray(raw, dtype=np.float64)
        n = raw.size
        if n == 0:
            return
        self.mean_sq += (float(np.mean(raw * raw)) - self.mean_sq) * n / (self.count + n)
        self.count += n

    def factor(self) -> float:
        return 1.0 / max(np.sqrt(self.mean_sq), self.floor)

    def __call__(self, raw):
        self.update(raw)
        return np.asarray(raw, dtype=np.float64) * self.factor()

    def state(self) -> dict:
        return {"mean_sq": np.array(self.mean_sq), "count": np.array(self.count)}

    def load(self, state: dict) -> None:
        self.mean_sq = float(state["mean_sq"])
        self.count = float(state["count"])


class Identity:
    mode = "none"

    def update(self, raw) -> None:
        pass

    def factor(self) -> float:
        return 1.0

    def __call__(self, raw):
        return np.asarray(raw, dtype=np.float64)

    def state(self) -> dict:
        return {}

    def load(self, state: dict) -> None:
        pass


def make_normalizer(mode: str):
    if mode == "ema":
        return EmaNormalizer()
    if mode == "rnd_native":
        return RunningRms()
    if mode == "none":
        return Identity()
    raise ValueError(f"unknown normalization mode {mode!r}")


# -- fine-tuning skill selection -------------------------------------------------


def select_skill_diayn(skill_probs: np.ndarray, rewards: np.ndarray) -> int:
    """Skill with the highest expected task reward over initial FT states.

    ``skill_probs`` is (T, W): the discriminator's ``q(w | z_t)``; each skill's
    expected reward is the q-weighted mean of ``rewards``. Ties go to the
    lowest index.
    """
    probs = np.asarray(skill_probs, dtype=np.float64)
    rewards = np.asarray(rewards, dtype=np.float64)
    if probs.ndim != 2 or probs.shape[0] != rewards.shape[0] or probs.shape[0] == 0:
        raise ValueError(f"need (T, W) skill probabilities for T rewards, got {probs.shape}, {rewards.shape}")
    mass = probs.sum(axis=0)
    expected = np.where(mass > 0, (probs * rewards[:, None]).sum(axis=0) / np.where(mass > 0, mass, 1.0), -np.inf)
    return int(np.argmax(expected))


def regress_skill_aps(features: np.ndarray, rewards: np.ndarray, ridge: float = 1e-6):
    """Least-squares skill ``w`` with ``features @ w ~ rewards``, projected to unit norm.

    Returns ``(w, info)``; ``info`` flags the ridge fallback for a
    rank-deficient design and the basis-vector fallback for a zero solve.
    """
    X = np.asarray(features, dtype=np.float64)
    y = np.asarray(rewards, dtype=np.float64)
    n, W = X.shape
    if n < W:
        raise ValueError(f"need at least {W} transitions to regress a skill, got {n}")
    info = {"ridge_fallback": False, "basis_fallback": False, "rank": int(np.linalg.matrix_rank(X))}
    if info["rank"] < W:
        info["ridge_fallback"] = True
        w = np.linalg.solve(X.T @ X + ridge * np.eye(W), X.T @ y)
    else:
        w = np.linalg.lstsq(X, y, rcond=None)[0]
    norm = np.linalg.norm(w)
    if not np.isfinite(norm) or norm < 1e-12:
        info["basis_fallback"] = True
        w = np.zeros(W)
        w[0] = 1.0
        return w, info
    return w / norm, info


# -- reward sources ------------------------------------------------------------


@dataclass
class ExploreConfig:
    method: str = "icm"
    skills: int = 16
    ensemble: int = 5
    knn_k: int = 12
    knn_c: float = 1e-6
    hidden: int = 64
    layers: int = 2
    lr: float = 3e-4
    rnd_out: int = 32

    def __post_init__(self):
        if self.method not in METHODS:
            raise ValueError(f"unknown exploration method {self.method!r}; choose from {METHODS}")


def _valid_transitions(is_first: np.ndarray) -> np.ndarray:
    """Mask over (B, T) of steps with a predecessor inside the same episode."""
    valid = ~np.asarray(is_first, dtype=bool)
    valid[:, 0] = False
    return valid


def _masked_mse(pred: Tensor, target: np.ndarray, mask: np.ndarray) -> Tensor:
    diff = pred - target
    per = (diff * diff).sum(axis=-1) if diff.data.ndim > mask.ndim else diff * diff
    w = mask.astype(np.float64)
    return (per * w).sum() * (1.0 / max(w.sum(), 1.0))


class RewardSource:
    """Base reward source. Subclasses define the method-specific pieces."""

    method = "random"
    representation = "none"
    uses_head = False
    skill_dim = 0

    def __init__(self, cfg: ExploreConfig, model, rng: np.random.Generator):
        self.cfg = cfg
        self.normalizer = make_normalizer(NORM_MODES[self.method])
        self.head_opt = None
        if self.uses_head:
            if model.intrinsic_head is None:
                raise ValueError(f"{self.method} needs a world model built with an intrinsic-reward head")
            self.head_opt = Adam(model.intrinsic_head.parameters(), cfg.lr, name="intrinsic_head")

    @property
    def norm_mode(self) -> str:
        return self.normalizer.mode

    def modules(self) -> dict[str, Module]:
        return {}

    def frozen_modules(self) -> list[Module]:
        return list(self.modules().values())

    # raw rewards for the batch transitions, (B, T) array; only for head methods
    def batch_rewards(self, model, batch: dict, out) -> tuple[np.ndarray, np.ndarray, dict]:
        raise NotImplementedError

    def train(self, model, batch: dict, out, rng) -> dict[str, float]:
        """One update on a replay batch; ``out`` is the model's posterior unroll."""
        if not self.uses_head:
            return {}
        raw, mask, metrics = self.batch_rewards(model, batch, out)
        feat = stop_gradient(out.feat)
        loss = _masked_mse(model.intrinsic(feat), raw, mask) * 0.5
        grads = backward(loss, model.intrinsic_head.parameters())
        self.head_opt.step(grads)
        metrics["intrinsic_head_loss"] = loss.item()
        metrics["intrinsic_batch_mean"] = float((raw * mask).sum() / max(mask.sum(), 1))
        return metrics

    def train_on_rollout(self, rollout, context) -> dict[str, float]:
        return {}

    def raw_imagined(self, model, rollout, context) -> Tensor:
        if self.uses_head:
            return model.intrinsic(rollout.feats[1:])
        return Tensor(np.zeros(rollout.feats.data.shape[:2])[1:])

    def imagined_reward(self, model, rollout, context=None) -> Tensor:
        """Normalized intrinsic reward for z_1..z_H of an imagined rollout, (H, N)."""
        raw = self.raw_imagined(model, rollout, context)
        if not np.all(np.isfinite(raw.data)):
            raise FloatingPointError(f"non-finite {self.method} reward in imagination")
        self.normalizer.update(raw.data)
        return raw * self.normalizer.factor()

    def sample_context(self, rng: np.random.Generator, n: int | None = None):
        return None

    # serialization
    def state_dict(self) -> dict[str, np.ndarray]:
        state = {}
        for name, mod in self.modules().items():
            state.update({f"{name}.{k}": v for k, v in mod.state_dict().items()})
        state.update({f"norm.{k}": v for k, v in self.normalizer.state().items()})
        return state

    def load_state_dict(self, state: dict) -> None:
        for name, mod in self.modules().items():
            prefix = f"{name}."
            mod.load_state_dict({k[len(prefix):]: v for k, v in state.items() if k.startswith(prefix)}, name)
        self.normalizer.load({k[5:]: v for k, v in state.items() if k.startswith("norm.")})


class RandomSource(RewardSource):
    method = "random"


class IcmSource(RewardSource):
    """Forward-model error in (detached) encoder embedding space."""

    method = "icm"
    representation = "embedding"
    uses_head = True

    def __init__(self, cfg, model, rng):
        super().__init__(cfg, model, rng)
        e, a = model.cfg.embed, model.act_dim
        self.forward_model = DenseNet([e + a, *[cfg.hidden] * cfg.layers, e], rng)
        self.opt = Adam(self.forward_model.parameters(), cfg.lr, name="icm")

    def modules(self):
        return {"forward_model": self.forward_model}

    def batch_rewards(self, model, batch, out):
        embed = out.embed.data
        action = np.asarray(batch["action"], dtype=np.float64)
        mask = _valid_transitions(batch["is_first"])
        prev = np.concatenate([np.zeros_like(embed[:, :1]), embed[:, :-1]], axis=1)
        pred = self.forward_model(Tensor(np.concatenate([prev, action], axis=-1)))
        loss = _masked_mse(pred, embed, mask) * 0.5
        self.opt.step(backward(loss, self.forward_model.parameters()))
        raw = icm_reward(pred.data, embed) * mask
        return raw, mask, {"icm_forward_loss": loss.item()}


class RndSource(RewardSource):
    """Distillation error of a frozen random network on observations."""

    method = "rnd"
    representation = "observation"
    uses_head = True

    def __init__(self, cfg, model, rng):
        super().__init__(cfg, model, rng)
        widths = [model.obs_dim, *[cfg.hidden] * cfg.layers, cfg.rnd_out]
        self.predictor = DenseNet(widths, rng)
        self.target = DenseNet(widths, rng)
        for p in self.target.parameters():
            p.requires_grad = False
            p.frozen = True
        self.opt = Adam(self.predictor.parameters(), cfg.lr, name="rnd")

    def modules(self):
        return {"predictor": self.predictor, "target": self.target}

    def batch_rewards(self, model, batch, out):
        obs = np.asarray(batch["obs"], dtype=np.float64)
        mask = np.ones(obs.shape[:2], dtype=bool)
        target = self.target(Tensor(obs)).data
        pred = self.predictor(Tensor(obs))
        loss = _masked_mse(pred, target, mask) * 0.5
        self.opt.step(backward(loss, self.predictor.parameters()))
        return rnd_reward(pred.data, target), mask, {"rnd_loss": loss.item()}

    def load_state_dict(self, state):
        super().load_state_dict(state)
        for p in self.target.parameters():
            p.requires_grad = False
            p.frozen = True


class LbsSource(RewardSource):
    """Posterior-to-prior KL of the world model's own latent transitions."""

    method = "lbs"
    representation = "latent"
    uses_head = True

    def batch_rewards(self, model, batch, out):
        post = np.exp(out.post_logits.data - out.post_logits.data.max(-1, keepdims=True))
        post /= post.sum(-1, keepdims=True)
        prior = np.exp(out.prior_logits.data - out.prior_logits.data.max(-1, keepdims=True))
        prior /= prior.sum(-1, keepdims=True)
        mask = np.ones(post.shape[:2], dtype=bool)
        return lbs_reward(post, prior), mask, {}


class P2eSource(RewardSource):
    """Disagreement of an ensemble predicting the next embedding from (z, a)."""

    method = "p2e"
    representation = "latent"

    def __init__(self, cfg, model, rng):
        super().__init__(cfg, model, rng)
        if cfg.ensemble < 2:
            raise ValueError("p2e needs an ensemble of at least 2 members")
        widths = [model.cfg.feat_width + model.act_dim, *[cfg.hidden] * cfg.layers, model.cfg.embed]
        self.members = [DenseNet(widths, rng) for _ in range(cfg.ensemble)]
        self.opts = [Adam(m.parameters(), cfg.lr, name=f"p2e.{i}") for i, m in enumerate(self.members)]

    def modules(self):
        return {f"member{i}": m for i, m in enumerate(self.members)}

    def predict(self, feat: Tensor, action: Tensor) -> Tensor:
        x = concat([feat, action], axis=-1)
        return stack([m(x) for m in self.members], axis=0)

    def train(self, model, batch, out, rng):
        feat = out.feat.data
        action = np.asarray(batch["action"], dtype=np.float64)
        mask = _valid_transitions(batch["is_first"])
        prev = np.concatenate([np.zeros_like(feat[:, :1]), feat[:, :-1]], axis=1)
        x = Tensor(np.concatenate([prev, action], axis=-1))
        losses = []
        for m, opt in zip(self.members, self.opts):
            loss = _masked_mse(m(x), out.embed.data, mask) * 0.5
            opt.step(backward(loss, m.parameters()))
            losses.append(loss.item())
        return {"p2e_ensemble_loss": float(np.mean(losses))}

    def raw_imagined(self, model, rollout, context):
        preds = self.predict(rollout.feats[:-1], rollout.actions)  # (K, H, N, E)
        preds = preds - stop_gradient(preds[:1])
        centered = preds - preds.mean(axis=0, keepdims=True)
        return (centered * centered).mean(axis=0).mean(axis=-1)


def _per_step_entropy(deter: Tensor, k: int, c: float) -> Tensor:
    """Particle reward of each imagined state against the batch at the same step."""
    return stack([knn_entropy_tensor(deter[t], k, c) for t in range(deter.data.shape[0])], axis=0)


class AptSource(RewardSource):
    """Particle entropy of deterministic latents across the imagined batch."""

    method = "apt"
    representation = "latent"

    def raw_imagined(self, model, rollout, context):
        return _per_step_entropy(rollout.deter[1:], self.cfg.knn_k, self.cfg.knn_c)


class DiaynSource(RewardSource):
    """Skill discriminability ``log q(w | z)`` over one-hot skills."""

    method = "diayn"
    representation = "latent"

    def __init__(self, cfg, model, rng):
        super().__init__(cfg, model, rng)
        self.skill_dim = cfg.skills
        self.discriminator = DenseNet([model.cfg.feat_width, *[cfg.hidden] * cfg.layers, cfg.skills], rng)
        self.opt = Adam(self.discriminator.parameters(), cfg.lr, name="diayn")

    def modules(self):
        return {"discriminator": self.discriminator}

    def sample_context(self, rng, n=None):
        idx = rng.integers(self.skill_dim, size=1 if n is None else n)
        skills = np.eye(self.skill_dim)[idx]
        return skills[0] if n is None else skills

    def skill_log_probs(self, feat: Tensor) -> Tensor:
        return log_softmax(self.discriminator(feat), axis=-1)

    def raw_imagined(self, model, rollout, context):
        return (self.skill_log_probs(rollout.feats[1:]) * context).sum(axis=-1)

    def train_on_rollout(self, rollout, context):
        feats = stop_gradient(rollout.feats[1:])
        loss = -(self.skill_log_probs(feats) * context).sum(axis=-1).mean()
        self.opt.step(backward(loss, self.discriminator.parameters()))
        return {"diayn_disc_loss": loss.item()}


class ApsSource(RewardSource):
    """Particle entropy plus alignment of unit successor features with the skill."""

    method = "aps"
    representation = "latent"

    def __init__(self, cfg, model, rng):
        super().__init__(cfg, model, rng)
        self.skill_dim = cfg.skills
        self.features = DenseNet([model.cfg.feat_width, *[cfg.hidden] * cfg.layers, cfg.skills], rng)
        self.opt = Adam(self.features.parameters(), cfg.lr, name="aps")

    def modules(self):
        return {"features": self.features}

    def sample_context(self, rng, n=None):
        w = unit_normalize(rng.standard_normal((1 if n is None else n, self.skill_dim)))
        return w[0] if n is None else w

    def unit_features(self, feat: Tensor) -> Tensor:
        phi = self.features(feat)
        return phi / sqrt((phi * phi).sum(axis=-1, keepdims=True) + 1e-12)

    def raw_imagined(self, model, rollout, context):
        feats = rollout.feats[1:]
        ent = _per_step_entropy(rollout.deter[1:], self.cfg.knn_k, self.cfg.knn_c)
        return ent + (self.unit_features(feats) * context).sum(axis=-1)

    def train_on_rollout(self, rollout, context):
        feats = stop_gradient(rollout.feats[1:])
        loss = -(self.unit_features(feats) * context).sum(axis=-1).mean()
        self.opt.step(backward(loss, self.features.parameters()))
        return {"aps_feature_loss": loss.item()}


SOURCES = {
    "icm": IcmSource,
    "p2e": P2eSource,
    "rnd": RndSource,
    "lbs": LbsSource,
    "apt": AptSource,
    "diayn": DiaynSource,
    "aps": ApsSource,
    "random": RandomSource,
}


def needs_intrinsic_head(method: str) -> bool:
    return method in HEAD_METHODS


def make_reward_source(cfg: ExploreConfig, model, rng: np.random.Generator) -> RewardSource:
    return SOURCES[cfg.method](cfg, model, rng)


__all__ = [
    "METHODS",
    "NORM_MODES",
    "EmaNormalizer",
    "ExploreConfig",
    "RewardSource",
    "RunningRms",
    "aps_reward",
    "diayn_reward",
    "icm_reward",
    "knn_entropy",
    "knn_entropy_tensor",
    "lbs_reward",
    "make_normalizer",
    "make_reward_source",
    "needs_intrinsic_head",
    "p2e_reward",
    "regress_skill_aps",
    "rnd_reward",
    "select_skill_diayn",
    "unit_normalize",
]
