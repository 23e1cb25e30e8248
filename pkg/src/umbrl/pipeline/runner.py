"""Pre-training, fine-tuning, expert training and experiment grids."""

from __future__ import annotations

import csv
import os
import pickle
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from ..envs import domain_of, make_env
from .agent import Agent
from .config import ExperimentConfig, TransferPolicy
from .replay import ReplayBuffer
from .scores import RunScore, ScoreTable, mean_stderr
from .snapshot import Snapshot, SnapshotError, snapshot_filename

METRIC_COLUMNS = [
    "run_id", "phase", "step", "model_loss", "recon", "reward_nll", "kl",
    "actor_loss", "critic_loss", "intrinsic_mean", "episode_return", "aux",
]
SUMMARY_COLUMNS = ["run_id", "method", "snapshot", "task", "seed", "raw", "normalized", "status"]


class PretrainDiverged(RuntimeError):
    def __init__(self, message: str, snapshot: Snapshot, path=None):
        super().__init__(message)
        self.snapshot = snapshot
        self.path = path


def fmt(value) -> str:
    if value is None:
        return ""
    if isinstance(value, (bool, np.bool_)):
        return str(bool(value))
    if isinstance(value, (int, np.integer)):
        return str(int(value))
    if isinstance(value, (float, np.floating)):
        return f"{float(value):.10g}"
    if isinstance(value, dict):
        return ";".join(f"{k}={fmt(v)}" for k, v in sorted(value.items()))
    return str(value)


def write_csv(path, columns, rows) -> None:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    tmp = path.with_suffix(path.suffix + ".tmp")
    with open(tmp, "w", newline="") as fh:
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(columns)
        for row in rows:
            writer.writerow([fmt(row.get(c)) for c in columns])
    os.replace(tmp, path)


class Interaction:
    """Steps an environment with an agent and records into a replay buffer."""

    def __init__(self, env, agent: Agent, buffer: ReplayBuffer, read_reward: bool, resample_skill: bool):
        self.env = env
        self.agent = agent
        self.buffer = buffer
        self.read_reward = read_reward
        self.resample_skill = resample_skill
        self.done = True
        self.episode_return = 0.0
        self.episodes = 0
        self.returns: list[float] = []

    def step(self, rng, explore: bool = True, planner_cfg=None, random: bool = False) -> float | None:
        """Advance one frame; returns the episode return when an episode ends."""
        if self.done:
            obs = self.env.reset()
            if self.resample_skill:
                self.agent.sample_skill(rng)
            self.agent.observe(obs, True)
            self.buffer.add(obs, np.zeros(self.agent.act_dim), 0.0, True)
            self.done = False
            self.episode_return = 0.0
        action = self.agent.act(rng, explore, planner_cfg, random)
        res = self.env.step(action)
        reward = res.reward if self.read_reward else 0.0
        self.agent.observe(res.observation, False)
        self.buffer.add(res.observation, action, reward, False)
        self.episode_return += reward
        self.done = res.done
        if res.done:
            self.episodes += 1
            self.returns.append(self.episode_return)
            return self.episode_return
        return None


def _metric_row(run_id: str, phase: str, step: int, metrics: dict, episode_return=None) -> dict:
    row = {"run_id": run_id, "phase": phase, "step": step, "episode_return": episode_return}
    for key in METRIC_COLUMNS[3:-2]:
        if key in metrics:
            row[key] = metrics[key]
    row["aux"] = metrics.get("aux", {})
    return row


# -- pre-training --------------------------------------------------------------


@dataclass
class PretrainRun:
    cfg: ExperimentConfig
    method: str
    seed: int
    run_id: str
    agent: Agent
    env: object
    buffer: ReplayBuffer
    interaction: Interaction
    rng: np.random.Generator
    step: int = 0
    snapshots: dict = field(default_factory=dict)
    metrics: list = field(default_factory=list)

    @property
    def finished(self) -> bool:
        return self.step >= self.cfg.run.pt_frames

    def save_checkpoint(self, path) -> None:
        tmp = f"{path}.tmp"
        with open(tmp, "wb") as fh:
            pickle.dump(self, fh, protocol=pickle.HIGHEST_PROTOCOL)
        os.replace(tmp, path)

    @staticmethod
    def load_checkpoint(path) -> "PretrainRun":
        with open(path, "rb") as fh:
            return pickle.load(fh)


def start_pretrain(cfg: ExperimentConfig, method: str, seed: int = 0, run_id: str | None = None) -> PretrainRun:
    cfg = cfg.with_value("explore.method", method)
    rng = np.random.default_rng([seed, 0])
    mode = "ft" if cfg.run.reward_known else "pt"
    env = make_env(cfg.env.task, mode, seed=seed, episode_length=cfg.env.episode_length)
    agent = Agent(env.spec.obs_dim, env.spec.act_dim, cfg, rng, method)
    buffer = ReplayBuffer(env.spec.obs_dim, env.spec.act_dim, phase="pt")
    interaction = Interaction(env, agent, buffer, read_reward=cfg.run.reward_known, resample_skill=True)
    return PretrainRun(cfg, method, seed, run_id or f"pt_{method}_seed{seed}", agent, env, buffer, interaction, rng)


def pretrain(
    cfg: ExperimentConfig,
    method: str,
    seed: int = 0,
    out_dir=None,
    resume=None,
    stop_at: int | None = None,
) -> PretrainRun:
    """Reward-free pre-training with snapshots at the scheduled steps.

    ``resume`` is a :class:`PretrainRun` or a checkpoint path. With
    ``stop_at`` the loop halts early (and checkpoints when ``out_dir`` is
    set). A non-finite loss aborts with :class:`PretrainDiverged` after the
    last good parameters are stored as a snapshot.
    """
    if resume is None:
        run = start_pretrain(cfg, method, seed)
    elif isinstance(resume, PretrainRun):
        run = resume
    else:
        run = PretrainRun.load_checkpoint(resume)
    rc = run.cfg.run
    out = Path(out_dir) if out_dir is not None else None
    if out is not None:
        out.mkdir(parents=True, exist_ok=True)
    schedule = set(rc.snapshots)
    while not run.finished:
        if stop_at is not None and run.step >= stop_at:
            break
        random = run.step < rc.pt_seed_frames or run.method == "random"
        ep_return = run.interaction.step(run.rng, explore=True, random=random)
        run.step += 1
        if run.step >= rc.pt_seed_frames and run.step % rc.frames_per_update == 0 and len(run.buffer) >= rc.seq_len:
            batch = run.buffer.sample(rc.batch_size, rc.seq_len, run.rng)
            try:
                metrics = run.agent.update(batch, run.rng, "pt")
            except FloatingPointError as exc:
                snap = run.agent.snapshot(run.step, run.seed)
                snap.meta["diverged"] = str(exc)
                path = None
                if out is not None:
                    path = out / f"{run.method}_seed{run.seed}_lastgood.snap"
                    snap.save(path)
                raise PretrainDiverged(f"pre-training diverged at step {run.step}: {exc}", snap, path) from exc
            run.metrics.append(_metric_row(run.run_id, "pt", run.step, metrics, ep_return))
        elif ep_return is not None:
            run.metrics.append(_metric_row(run.run_id, "pt", run.step, {}, ep_return))
        if run.step in schedule:
            snap = run.agent.snapshot(run.step, run.seed)
            run.snapshots[run.step] = snap
            if out is not None:
                snap.save(out / snapshot_filename(run.method, run.seed, run.step))
        if out is not None and rc.checkpoint_every and run.step % rc.checkpoint_every == 0:
            run.save_checkpoint(out / f"{run.method}_seed{run.seed}.ckpt")
    if out is not None:
        if run.finished:
            run.buffer.save(out / f"{run.method}_seed{run.seed}_replay.npz")
        else:
            run.save_checkpoint(out / f"{run.method}_seed{run.seed}.ckpt")
    return run


# -- fine-tuning -------------------------------------------------------------------


@dataclass
class FinetuneResult:
    score: float
    eval_returns: list
    train_returns: list
    metrics: list
    agent: Agent
    buffer: ReplayBuffer
    skill_info: dict = field(default_factory=dict)


def build_ft_agent(cfg: ExperimentConfig, snapshot: Snapshot | None, task: str, seed: int, transfer: TransferPolicy):
    rng = np.random.default_rng([seed, 1])
    if snapshot is None:
        env_dim = make_env(task, "ft", seed=seed).spec
        return Agent(env_dim.obs_dim, env_dim.act_dim, cfg, rng, None), rng
    domain = snapshot.meta.get("domain")
    if domain is not None and domain != domain_of(task):
        raise SnapshotError(f"snapshot was pre-trained on {domain!r} but task {task!r} is in {domain_of(task)!r}")
    return Agent.from_snapshot(snapshot, cfg, rng, use_actor=transfer.actor_for(task)), rng


def evaluate(agent: Agent, cfg: ExperimentConfig, task: str, seed: int, planner_cfg=None, episodes=None) -> list[float]:
    """Returns of evaluation episodes with exploration disabled. Parameters are not modified."""
    episodes = episodes or cfg.run.eval_episodes
    env = make_env(
        task, "ft", seed=10_000 + seed, episode_length=cfg.env.episode_length,
        perturbation=cfg.env.perturbation, radius_scale=cfg.env.radius_scale,
    )
    rng = np.random.default_rng([seed, 2])
    if agent.skill_dim and agent.context is None:
        agent.sample_skill(np.random.default_rng([seed, 3]))
    returns = []
    for _ in range(episodes):
        obs = env.reset()
        agent.observe(obs, True)
        total, done = 0.0, False
        while not done:
            res = env.step(agent.act(rng, explore=False, planner_cfg=planner_cfg))
            agent.observe(res.observation, False)
            total += res.reward
            done = res.done
        returns.append(total)
    agent.reset()
    return returns


def finetune(
    cfg: ExperimentConfig,
    snapshot: Snapshot | None = None,
    task: str | None = None,
    seed: int = 0,
    planner: bool | None = None,
    planner_cfg=None,
    transfer: TransferPolicy | None = None,
    ft_frames: int | None = None,
    run_id: str = "ft",
) -> FinetuneResult:
    """Fine-tune on ``task``'s rewards; ``snapshot=None`` trains from scratch.

    The critic and replay buffer are always fresh. The score is the mean
    return over ``cfg.run.eval_episodes`` deterministic episodes.
    """
    task = task or cfg.env.task
    transfer = transfer or cfg.transfer
    rc = cfg.run
    frames = rc.ft_frames if ft_frames is None else ft_frames
    use_planner = rc.planner if planner is None else planner
    if planner_cfg is None and use_planner:
        planner_cfg = cfg.planner
    agent, rng = build_ft_agent(cfg, snapshot, task, seed, transfer)
    if rc.freeze_decoder:
        agent.freeze_decoder()
    env = make_env(
        task, "ft", seed=seed + 1, episode_length=cfg.env.episode_length,
        perturbation=cfg.env.perturbation, radius_scale=cfg.env.radius_scale,
    )
    buffer = ReplayBuffer(env.spec.obs_dim, env.spec.act_dim, phase="ft")
    inter = Interaction(env, agent, buffer, read_reward=True, resample_skill=bool(agent.skill_dim))
    metrics, skill_info = [], {}
    for step in range(1, frames + 1):
        random = step <= rc.ft_seed_frames
        ep_return = inter.step(rng, explore=True, planner_cfg=None if random else planner_cfg, random=random)
        if ep_return is not None and inter.resample_skill and inter.episodes >= rc.skill_episodes:
            skill_info = agent.choose_skill(buffer.arrays())
            inter.resample_skill = False
        if step > rc.ft_seed_frames and step % rc.frames_per_update == 0 and len(buffer) >= rc.seq_len:
            m = agent.update(buffer.sample(rc.batch_size, rc.seq_len, rng), rng, "ft")
            metrics.append(_metric_row(run_id, "ft", step, m, ep_return))
        elif ep_return is not None:
            metrics.append(_metric_row(run_id, "ft", step, {}, ep_return))
    if inter.resample_skill and agent.skill_dim and len(buffer) >= agent.skill_dim:
        skill_info = agent.choose_skill(buffer.arrays())
    elif inter.resample_skill:
        agent.context = None
    returns = evaluate(agent, cfg, task, seed, planner_cfg)
    score = float(np.mean(returns))
    metrics.append(_metric_row(run_id, "eval", frames, {}, score))
    return FinetuneResult(score, returns, list(inter.returns), metrics, agent, buffer, skill_info)


def train_expert(cfg: ExperimentConfig, task: str | None = None, frames: int | None = None, seed: int = 0):
    """Supervised agent trained from scratch; its score is the normalization reference."""
    frames = cfg.run.expert_budget if frames is None else frames
    return finetune(cfg, None, task, seed, planner=False, ft_frames=frames, run_id=f"expert_{task or cfg.env.task}")


# -- grids ----------------------------------------------------------------------


@dataclass
class MatrixResult:
    table: ScoreTable
    summary_rows: list
    metrics: list
    errors: dict


def summary_rows(table: ScoreTable) -> list[dict]:
    rows = []
    for r in table.runs:
        rows.append({
            "run_id": r.run_id, "method": r.method, "snapshot": r.snapshot, "task": r.task,
            "seed": r.seed, "raw": r.raw, "normalized": table.normalized(r.task, r.raw), "status": r.status,
        })
    for method, snap in table.groups():
        agg = table.aggregate(method, snap)
        ok = [r for r in table.runs if r.method == method and r.snapshot == snap and r.status == "ok"]
        per_seed = {}
        for r in ok:
            per_seed.setdefault(r.seed, []).append(r.raw)
        _, se = mean_stderr([np.mean(v) for _, v in sorted(per_seed.items())])
        rows.append({
            "run_id": f"aggregate_{method}_step{snap}", "method": method, "snapshot": snap, "task": "*",
            "seed": "*", "raw": agg["raw_mean"], "normalized": agg["normalized_mean"],
            "status": f"aggregate n_tasks={agg['n_tasks']} stderr={fmt(se)}",
        })
    return rows


def run_matrix(
    cfg: ExperimentConfig,
    methods,
    tasks,
    seeds=None,
    snapshots=None,
    out_dir=None,
    experts: dict | None = None,
) -> MatrixResult:
    """Pre-train every (method, seed), fine-tune every (snapshot, task), write CSVs.

    A failing cell is recorded with its error and the grid continues.
    """
    seeds = tuple(cfg.run.seeds if seeds is None else seeds)
    if len(seeds) < 3:
        raise ValueError(f"a matrix run needs at least 3 seeds, got {len(seeds)}")
    tasks = list(tasks)
    domains = {domain_of(t) for t in tasks}
    if len(domains) != 1:
        raise ValueError(f"all tasks of a matrix must share a domain, got {sorted(domains)}")
    snapshots = tuple(cfg.run.snapshots if snapshots is None else snapshots)
    pt_cfg = cfg.with_values({"env.task": tasks[0], "run.snapshots": list(snapshots)})
    table = ScoreTable(experts)
    metrics, errors = [], {}
    for method in methods:
        for seed in seeds:
            try:
                run = pretrain(pt_cfg, method, seed, out_dir=Path(out_dir) / "snapshots" if out_dir else None)
                metrics.extend(run.metrics)
                pt_error = None
            except Exception as exc:  # recorded per cell; the grid goes on
                run, pt_error = None, f"pretrain: {type(exc).__name__}: {exc}"
            for step in snapshots:
                for task in tasks:
                    run_id = f"{method}_step{step}_{task}_seed{seed}"
                    if pt_error is not None:
                        errors[run_id] = pt_error
                        table.add(RunScore(run_id, method, step, task, seed, None, "error"))
                        continue
                    try:
                        res = finetune(cfg, run.snapshots[step], task, seed, run_id=run_id)
                        metrics.extend(res.metrics)
                        table.add(RunScore(run_id, method, step, task, seed, res.score))
                    except Exception as exc:
                        errors[run_id] = f"{type(exc).__name__}: {exc}"
                        table.add(RunScore(run_id, method, step, task, seed, None, "error"))
    rows = summary_rows(table)
    if out_dir is not None:
        write_csv(Path(out_dir) / "summary.csv", SUMMARY_COLUMNS, rows)
        write_csv(Path(out_dir) / "metrics.csv", METRIC_COLUMNS, metrics)
        if errors:
            write_csv(Path(out_dir) / "errors.csv", ["run_id", "error"],
                      [{"run_id": k, "error": v} for k, v in errors.items()])
    return MatrixResult(table, rows, metrics, errors)


__all__ = [
    "FinetuneResult",
    "Interaction",
    "MatrixResult",
    "PretrainDiverged",
    "PretrainRun",
    "evaluate",
    "finetune",
    "pretrain",
    "run_matrix",
    "start_pretrain",
    "summary_rows",
    "train_expert",
    "write_csv",
]
