"""Dyna-MPC on a landscape whose optimum is known.

The "world model" here just copies the action into the latent and scores it
by distance to a target, so the planner's first-step mean should walk to the
target as iterations accumulate.
"""

import numpy as np

from umbrl import ndgrad as nd
from umbrl.planner import PlannerConfig, plan
from umbrl.worldmodel import ModelState


class ToyModel:
    def __init__(self, target):
        self.target = np.asarray(target, dtype=np.float64)
        self.act_dim = self.target.size

    def repeat_state(self, state, n):
        return state.repeat(n)

    def img_step(self, prev, action, rng=None, sample=True):
        return None, ModelState(nd.Tensor(action.data.copy()), nd.Tensor(np.zeros((len(prev), 0))))

    def reward(self, feat):
        return nd.Tensor(-((feat.data - self.target) ** 2).sum(-1))


target = np.array([0.3, -0.5])
start = ModelState(nd.Tensor(np.zeros((1, 2))), nd.Tensor(np.zeros((1, 0))))
for iterations in (1, 2, 4, 8, 12):
    cfg = PlannerConfig(iterations=iterations)
    _, dist = plan(start, ToyModel(target), None, None, cfg, np.random.default_rng(0), explore=False)
    print(f"{iterations:2d} iterations: mean {np.round(dist.mean[0], 3)}  std {np.round(dist.std[0], 3)}")
print("target", target)
