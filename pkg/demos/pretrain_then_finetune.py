"""Reward-free pre-training, a snapshot, then fine-tuning on two tasks.

Small networks and short budgets so the whole script runs in about a minute.
"""

import numpy as np

from umbrl.pipeline import ExperimentConfig, TransferPolicy, finetune, pretrain

cfg = ExperimentConfig().with_values({
    "run.pt_frames": 1000, "run.ft_frames": 300, "run.snapshots": [500, 1000],
    "run.pt_seed_frames": 200, "env.episode_length": 100, "run.eval_episodes": 3,
    "behavior.actor_lr": 3e-4, "behavior.critic_lr": 3e-4, "run.model_lr": 1e-3,
})

run = pretrain(cfg, "lbs", seed=0)
print("snapshots at", sorted(run.snapshots), "| PT reward reads:", run.env.reward_reads)

snap = run.snapshots[1000]
for task in ("run_right", "spin"):
    scratch = finetune(cfg, None, task, seed=0).score
    model_only = finetune(cfg, snap, task, seed=0, transfer=TransferPolicy(use_actor=False)).score
    with_actor = finetune(cfg, snap, task, seed=0, transfer=TransferPolicy(use_actor=True)).score
    print(f"{task:10s} scratch {scratch:7.2f}  model only {model_only:7.2f}  model+actor {with_actor:7.2f}")

snap.save("/tmp/lbs_seed0_step1000.snap")
print("saved; finetune it again with: umbrl finetune --snapshot /tmp/lbs_seed0_step1000.snap --task spin --out /tmp/ft")
print("params per group:", {g: int(sum(np.size(v) for v in arrays.values())) for g, arrays in snap.groups.items()})
