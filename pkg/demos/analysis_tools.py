"""Jensen-Shannon divergence, p-values for small correlation studies, LDD."""

import numpy as np

from umbrl.analysis import collect_oracle_trajectories, js_divergence, ldd, pearson_p, pearson_p_from_r
from umbrl.pipeline import Agent, ExperimentConfig, finetune, pretrain, train_expert
from umbrl.worldmodel import freeze_decoder

print("JS((0.9,0.1) || (0.5,0.5)) =", round(float(js_divergence([0.9, 0.1], [0.5, 0.5])), 5))
print("JS of disjoint supports   =", float(js_divergence([1.0, 0.0], [0.0, 1.0])), "= ln 2")

for r in (-0.60, -0.54):
    print(f"r = {r:+.2f} over 12 tasks: two-sided p = {pearson_p_from_r(r, 12):.4f}")
x = np.arange(12.0)
print("pearson on a noisy line:", pearson_p(x, x + np.random.default_rng(0).normal(size=12) * 3))

# latent dynamics drift: how far fine-tuning moves the world model's predictions
cfg = ExperimentConfig().with_values({
    "run.pt_frames": 600, "run.ft_frames": 600, "run.snapshots": [600], "run.pt_seed_frames": 200,
    "env.episode_length": 100, "run.eval_episodes": 2, "run.freeze_decoder": True,
})
snap = pretrain(cfg, "icm", 0).snapshots[600]
expert = train_expert(cfg, "run_right", frames=300)
oracle = collect_oracle_trajectories(expert.agent, cfg, "run_right", count=5)
pt = Agent.from_snapshot(snap, cfg, np.random.default_rng(0)).model
freeze_decoder(pt)
for frames in (0, 200, 600):
    ft = finetune(cfg, snap, "run_right", ft_frames=frames).agent.model
    print(f"LDD after {frames:3d} FT frames: {ldd(pt, ft, oracle):.4e}")
