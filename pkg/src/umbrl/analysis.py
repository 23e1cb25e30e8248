"""Diagnostics: latent dynamics discrepancy, reward/score correlation, zero-shot MPC."""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .envs import make_env
from .ndgrad import Tensor, no_grad
from .pipeline.runner import build_ft_agent, evaluate
from .planner import PlannerConfig
from .worldmodel import ModelState, Rollout

# -- divergences ----------------------------------------------------------------


def _kl_terms(p: np.ndarray, q: np.ndarray) -> np.ndarray:
    with np.errstate(divide="ignore", invalid="ignore"):
        return np.where(p > 0, p * (np.log(p) - np.log(q)), 0.0).sum(axis=-1)


def js_divergence(p, q) -> np.ndarray:
    """Jensen-Shannon divergence over the last (class) axis, in nats."""
    p = np.asarray(p, dtype=np.float64)
    q = np.asarray(q, dtype=np.float64)
    if p.shape != q.shape:
        raise ValueError(f"distribution shapes differ: {p.shape} vs {q.shape}")
    m = 0.5 * (p + q)
    js = 0.5 * _kl_terms(p, m) + 0.5 * _kl_terms(q, m)
    return np.clip(js, 0.0, math.log(2.0))


@dataclass
class OracleTrajectorySet:
    """Expert episodes: ``obs`` (E, T+1, O), ``actions`` (E, T, A), ``rewards`` (E, T)."""

    obs: np.ndarray
    actions: np.ndarray
    rewards: np.ndarray

    def __post_init__(self):
        if np.any(np.abs(self.actions) > 1.0):
            raise ValueError("oracle actions must lie in [-1, 1]")
        if self.obs.shape[1] != self.actions.shape[1] + 1:
            raise ValueError("each trajectory needs one more observation than actions")

    def __len__(self) -> int:
        return self.obs.shape[0]

    def as_sequences(self):
        """(B, T+1) model inputs: action[t] led to obs[t]; the first action is zero."""
        E, T1 = self.obs.shape[:2]
        action = np.concatenate([np.zeros_like(self.actions[:, :1]), self.actions], axis=1)
        is_first = np.zeros((E, T1), dtype=bool)
        is_first[:, 0] = True
        return self.obs, action, is_first


def collect_oracle_trajectories(agent, cfg, task: str, count: int = 30, seed: int = 0) -> OracleTrajectorySet:
    """Roll out ``agent`` deterministically for ``count`` complete episodes."""
    env = make_env(task, "ft", seed=20_000 + seed, episode_length=cfg.env.episode_length)
    rng = np.random.default_rng([seed, 4])
    obs_all, act_all, rew_all = [], [], []
    for _ in range(count):
        obs = env.reset()
        agent.observe(obs, True)
        obs_l, act_l, rew_l = [obs], [], []
        done = False
        while not done:
            a = agent.act(rng, explore=False)
            res = env.step(a)
            agent.observe(res.observation, False)
            obs_l.append(res.observation)
            act_l.append(a)
            rew_l.append(res.reward)
            done = res.done
        obs_all.append(obs_l)
        act_all.append(act_l)
        rew_all.append(rew_l)
    agent.reset()
    return OracleTrajectorySet(np.array(obs_all), np.array(act_all), np.array(rew_all))


def ldd(pt_model, ft_model, oracle: OracleTrajectorySet) -> float:
    """Mean per-factor JS divergence between FT and PT prior predictions.

    States are inferred with the FT posterior along the oracle trajectories;
    both models then predict the next stochastic state from the same state
    and action.
    """
    if not getattr(ft_model, "decoder_frozen", False):
        raise ValueError("ldd needs a fine-tuned model trained with its decoder frozen")
    obs, action, is_first = oracle.as_sequences()
    with no_grad():
        out = ft_model.observe(obs, action, is_first, None, False)
        E, T1 = obs.shape[:2]
        deter = ft_model.cfg.deter
        feat = out.feat.data[:, :-1].reshape(E * (T1 - 1), -1)
        acts = Tensor(oracle.actions.reshape(E * (T1 - 1), -1))
        state = ModelState.from_feat(feat, deter)
        p_ft = ft_model.img_step(state, acts, None, False)[0].probs.data
        p_pt = pt_model.img_step(state, acts, None, False)[0].probs.data
    return float(js_divergence(p_ft, p_pt).mean())


# -- correlation ---------------------------------------------------------------------


def _betacf(a: float, b: float, x: float, max_iter: int = 500, tol: float = 1e-15) -> float:
    """Continued fraction for the incomplete beta function (modified Lentz)."""
    tiny = 1e-300
    qab, qap, qam = a + b, a + 1.0, a - 1.0
    c = 1.0
    d = 1.0 - qab * x / qap
    d = 1.0 / (d if abs(d) > tiny else tiny)
    h = d
    for m in range(1, max_iter + 1):
        m2 = 2 * m
        aa = m * (b - m) * x / ((qam + m2) * (a + m2))
        d = 1.0 + aa * d
        d = 1.0 / (d if abs(d) > tiny else tiny)
        c = 1.0 + aa / c
        c = c if abs(c) > tiny else tiny
        h *= d * c
        aa = -(a + m) * (qab + m) * x / ((a + m2) * (qap + m2))
        d = 1.0 + aa * d
        d = 1.0 / (d if abs(d) > tiny else tiny)
        c = 1.0 + aa / c
        c = c if abs(c) > tiny else tiny
        delta = d * c
        h *= delta
        if abs(delta - 1.0) < tol:
            return h
    raise ArithmeticError("incomplete beta continued fraction did not converge")


def betainc(a: float, b: float, x: float) -> float:
    """Regularized incomplete beta ``I_x(a, b)``."""
    if not 0.0 <= x <= 1.0:
        raise ValueError(f"x must lie in [0, 1], got {x}")
    if x == 0.0 or x == 1.0:
        return x
    log_front = (
        math.lgamma(a + b) - math.lgamma(a) - math.lgamma(b) + a * math.log(x) + b * math.log1p(-x)
    )
    front = math.exp(log_front)
    if x < (a + 1.0) / (a + b + 2.0):
        return front * _betacf(a, b, x) / a
    return 1.0 - front * _betacf(b, a, 1.0 - x) / b


def t_two_sided_p(t: float, dof: int) -> float:
    if math.isinf(t):
        return 0.0
    return betainc(dof / 2.0, 0.5, dof / (dof + t * t))


@dataclass(frozen=True)
class CorrelationReport:
    r: float
    p: float
    n: int


def pearson_p_from_r(r: float, n: int) -> float:
    if n < 3:
        raise ValueError("need at least 3 samples")
    if abs(r) >= 1.0:
        return 0.0
    t = r * math.sqrt((n - 2) / (1.0 - r * r))
    return t_two_sided_p(t, n - 2)


def pearson_p(x, y) -> CorrelationReport:
    """Pearson r with a two-sided p-value from Student's t on n-2 degrees of freedom."""
    x = np.asarray(x, dtype=np.float64)
    y = np.asarray(y, dtype=np.float64)
    if x.shape != y.shape or x.ndim != 1:
        raise ValueError("x and y must be 1-D arrays of equal length")
    n = x.size
    if n < 3:
        raise ValueError(f"need at least 3 samples, got {n}")
    dx = x - x.mean()
    dy = y - y.mean()
    sxx, syy = float(dx @ dx), float(dy @ dy)
    scale_x = float(np.max(np.abs(x))) or 1.0
    scale_y = float(np.max(np.abs(y))) or 1.0
    if sxx <= (1e-14 * scale_x) ** 2 * n or syy <= (1e-14 * scale_y) ** 2 * n:
        raise ValueError("correlation undefined: an input has zero variance")
    r = float(np.clip((dx @ dy) / math.sqrt(sxx * syy), -1.0, 1.0))
    return CorrelationReport(r, pearson_p_from_r(r, n), n)


def reward_correlation_study(intrinsic: dict, scores: dict) -> dict:
    """Per method, correlate mean intrinsic reward per task with FT performance per task.

    ``intrinsic[method][task]`` and ``scores[method][task]`` are floats.
    """
    reports = {}
    for method in sorted(intrinsic):
        tasks = sorted(set(intrinsic[method]) & set(scores.get(method, {})))
        x = [intrinsic[method][t] for t in tasks]
        y = [scores[method][t] for t in tasks]
        reports[method] = pearson_p(x, y)
    return reports


def mean_intrinsic_on_oracle(agent, oracle: OracleTrajectorySet, seed: int = 0) -> float:
    """Unnormalized mean intrinsic reward of ``agent``'s reward source along oracle states.

    The oracle episodes are treated as a batch of trajectories; batch-based
    sources (particle entropy) compare states at the same time index.
    """
    source = agent.source
    if source is None or source.method == "random":
        raise ValueError("agent has no intrinsic reward source")
    obs, action, is_first = oracle.as_sequences()
    with no_grad():
        out = agent.model.observe(obs, action, is_first, None, False)
        feats = Tensor(np.swapaxes(out.feat.data, 0, 1))
        deter = Tensor(np.swapaxes(out.deter.data, 0, 1))
        acts = Tensor(np.swapaxes(oracle.actions, 0, 1))
        rollout = Rollout(feats=feats, actions=acts, deter=deter)
        context = source.sample_context(np.random.default_rng(seed), len(oracle)) if source.skill_dim else None
        raw = source.raw_imagined(agent.model, rollout, context)
    return float(np.mean(raw.data))


# -- zero-shot -----------------------------------------------------------------------


def zero_shot_eval(snapshot, task: str, cfg, seed: int = 0, planner_cfg: PlannerConfig | None = None) -> float:
    """Pure-MPC evaluation of a snapshot whose reward head saw PT rewards.

    No parameter is updated; the score is the mean deterministic return.
    """
    if not snapshot.meta.get("reward_head_trained", False):
        raise ValueError("snapshot has no trained reward head; pre-train with run.reward_known=true")
    agent, _ = build_ft_agent(cfg, snapshot, task, seed, cfg.transfer)
    returns = evaluate(agent, cfg, task, seed, planner_cfg or PlannerConfig.zero_shot())
    return float(np.mean(returns))


__all__ = [
    "CorrelationReport",
    "OracleTrajectorySet",
    "betainc",
    "collect_oracle_trajectories",
    "js_divergence",
    "ldd",
    "mean_intrinsic_on_oracle",
    "pearson_p",
    "pearson_p_from_r",
    "reward_correlation_study",
    "t_two_sided_p",
    "zero_shot_eval",
]
