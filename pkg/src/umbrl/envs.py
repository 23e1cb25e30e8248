"""Toy continuous-control domains and real-world-style perturbation wrappers.

Two domains share the benchmark's structure: one transition function per
domain and four reward functions (tasks) on top of it.

* ``mass``: 2-D point mass on a periodic arena with linear friction. Dense
  tasks reward velocity functionals every step.
* ``reach``: planar two-link arm driven by joint-velocity commands. Sparse
  tasks pay 1 per step while the tip is inside a quadrant target disc.

An environment built in ``pt`` mode reports a zero reward; ``ft`` mode fills
in the task reward. Observations never depend on the mode.
"""

from __future__ import annotations

import csv
from collections import deque
from dataclasses import dataclass

import numpy as np

MASS_TASKS = {
    "run_right": "dense",
    "run_left": "dense",
    "spin": "dense",
    "flip_velocity": "dense",
}
REACH_TASKS = {
    "reach_bottom_left": "sparse",
    "reach_bottom_right": "sparse",
    "reach_top_left": "sparse",
    "reach_top_right": "sparse",
}

# Reach targets sit in the four quadrants around the arm's home tip position,
# close enough that undirected motion near the start can stumble on them.
REACH_HOME_Q = (np.pi / 4, np.pi - 0.3)
REACH_TARGET_OFFSET = 0.15


def _home_tip() -> tuple:
    q1, q2 = REACH_HOME_Q
    return (0.6 * np.cos(q1) + 0.5 * np.cos(q1 + q2), 0.6 * np.sin(q1) + 0.5 * np.sin(q1 + q2))


REACH_TARGETS = {
    name: (_home_tip()[0] + sx * REACH_TARGET_OFFSET, _home_tip()[1] + sy * REACH_TARGET_OFFSET)
    for name, sx, sy in (
        ("reach_bottom_left", -1, -1),
        ("reach_bottom_right", 1, -1),
        ("reach_top_left", -1, 1),
        ("reach_top_right", 1, 1),
    )
}


@dataclass(frozen=True)
class EnvSpec:
    domain: str
    obs_dim: int
    act_dim: int
    episode_length: int
    tasks: dict

    def density(self, task: str) -> str:
        return self.tasks[task]


def env_spec(domain: str, episode_length: int = 200) -> EnvSpec:
    if domain == "mass":
        return EnvSpec("mass", 6, 2, episode_length, dict(MASS_TASKS))
    if domain == "reach":
        return EnvSpec("reach", 6, 2, episode_length, dict(REACH_TASKS))
    raise ValueError(f"unknown domain {domain!r}")


def domain_of(task: str) -> str:
    if task in MASS_TASKS:
        return "mass"
    if task in REACH_TASKS:
        return "reach"
    raise ValueError(f"unknown task {task!r}")


class StepResult:
    """Observation, reward and done flag of one environment step.

    Reading ``reward`` is counted on the owning environment so callers can
    prove that reward-free phases never look at it.
    """

    __slots__ = ("observation", "done", "_reward", "_owner")

    def __init__(self, observation: np.ndarray, reward: float, done: bool, owner=None):
        self.observation = observation
        self.done = done
        self._reward = float(reward)
        self._owner = owner

    @property
    def reward(self) -> float:
        if self._owner is not None:
            self._owner.reward_reads += 1
        return self._reward


class ToyEnv:
    """Common episode bookkeeping for both domains."""

    spec: EnvSpec

    def __init__(self, task: str, mode: str = "ft", seed: int = 0, episode_length: int = 200):
        if mode not in ("pt", "ft"):
            raise ValueError(f"mode must be 'pt' or 'ft', got {mode!r}")
        self.spec = env_spec(self.domain, episode_length)
        if task not in self.spec.tasks:
            raise ValueError(f"task {task!r} does not belong to domain {self.domain!r}")
        self.task = task
        self.mode = mode
        self.rng = np.random.default_rng(seed)
        self.morphology = 1.0
        self.reward_reads = 0
        self.clamped_actions = 0
        self.low_level_steps = 0
        self.t = 0

    def reset(self) -> np.ndarray:
        self.t = 0
        self._reset_state()
        return self.observe()

    def step(self, action) -> StepResult:
        a = np.asarray(action, dtype=np.float64).reshape(self.spec.act_dim)
        if np.any(np.abs(a) > 1.0):
            self.clamped_actions += 1
            a = np.clip(a, -1.0, 1.0)
        self._advance(a)
        self.low_level_steps += 1
        self.t += 1
        reward = self.task_reward() if self.mode == "ft" else 0.0
        return StepResult(self.observe(), reward, self.t >= self.spec.episode_length, self)

    # domain hooks
    domain = ""

    def _reset_state(self) -> None:
        raise NotImplementedError

    def _advance(self, a: np.ndarray) -> None:
        raise NotImplementedError

    def observe(self) -> np.ndarray:
        raise NotImplementedError

    def task_reward(self) -> float:
        raise NotImplementedError


def wrap_position(p: np.ndarray) -> np.ndarray:
    return np.mod(p + 1.0, 2.0) - 1.0


class MassEnv(ToyEnv):
    """Point mass on the periodic square [-1, 1)^2.

    Semi-implicit Euler with ``dt = 0.1``::

        v' = v + dt * (gain * a / (mass * morphology) - friction * v)
        p' = wrap(p + dt * v')

    Observation: ``[sin(pi x), cos(pi x), sin(pi y), cos(pi y), vx, vy]``.
    """

    domain = "mass"
    dt = 0.1
    gain = 1.0
    mass = 1.0
    friction = 1.0

    def _reset_state(self) -> None:
        self.pos = self.rng.uniform(-0.2, 0.2, size=2)
        self.vel = np.zeros(2)

    def _advance(self, a: np.ndarray) -> None:
        accel = self.gain * a / (self.mass * self.morphology) - self.friction * self.vel
        self.vel = self.vel + self.dt * accel
        self.pos = wrap_position(self.pos + self.dt * self.vel)

    def observe(self) -> np.ndarray:
        x, y = np.pi * self.pos
        return np.array([np.sin(x), np.cos(x), np.sin(y), np.cos(y), self.vel[0], self.vel[1]])

    def angular_momentum(self) -> float:
        return float(self.pos[0] * self.vel[1] - self.pos[1] * self.vel[0])

    def task_reward(self) -> float:
        if self.task == "run_right":
            r = self.vel[0]
        elif self.task == "run_left":
            r = -self.vel[0]
        elif self.task == "spin":
            r = 2.0 * self.angular_momentum()
        else:  # flip_velocity: clockwise rotation
            r = -2.0 * self.angular_momentum()
        return float(np.clip(r, -1.0, 1.0))


class ReachEnv(ToyEnv):
    """Two-link planar arm with joint-velocity control.

    ``q' = q + joint_speed * a``; tip ``= l1 e(q1) + l2 e(q1 + q2)`` with
    ``l1 = 0.6 * morphology`` and ``l2 = 0.5``. The arm starts folded with
    the tip near the base. Observation:
    ``[cos q1, sin q1, cos q2, sin q2, tip_x, tip_y]``.
    """

    domain = "reach"
    joint_speed = 0.1
    link1 = 0.6
    link2 = 0.5
    base_radius = 0.1

    def __init__(self, *args, **kwargs):
        super().__init__(*args, **kwargs)
        self.radius = self.base_radius

    def _reset_state(self) -> None:
        self.q = np.array(REACH_HOME_Q) + self.rng.uniform(-0.05, 0.05, size=2)

    def _advance(self, a: np.ndarray) -> None:
        self.q = self.q + self.joint_speed * a

    def tip(self) -> np.ndarray:
        l1 = self.link1 * self.morphology
        q1, q2 = self.q
        return np.array(
            [
                l1 * np.cos(q1) + self.link2 * np.cos(q1 + q2),
                l1 * np.sin(q1) + self.link2 * np.sin(q1 + q2),
            ]
        )

    def observe(self) -> np.ndarray:
        q1, q2 = self.q
        tip = self.tip()
        return np.array([np.cos(q1), np.sin(q1), np.cos(q2), np.sin(q2), tip[0], tip[1]])

    def task_reward(self) -> float:
        target = np.asarray(REACH_TARGETS[self.task])
        return 1.0 if np.linalg.norm(self.tip() - target) <= self.radius else 0.0


def make_env(
    task: str,
    mode: str = "ft",
    seed: int = 0,
    episode_length: int = 200,
    perturbation: "PerturbationConfig | str | None" = None,
    radius_scale: float = 1.0,
):
    domain = domain_of(task)
    cls = MassEnv if domain == "mass" else ReachEnv
    env = cls(task, mode=mode, seed=seed, episode_length=episode_length)
    if radius_scale != 1.0:
        env = make_sparsity_variant(env, radius_scale)
    if perturbation is not None:
        if isinstance(perturbation, str):
            perturbation = PerturbationConfig.preset(perturbation, domain)
        env = wrap_perturbed(env, perturbation, seed=seed + 7919)
    return env


def make_sparsity_variant(env: ReachEnv, scale: float) -> ReachEnv:
    """Scale the reach target radius in place (<1 sparser, >1 denser)."""
    if getattr(env, "domain", None) != "reach":
        raise ValueError("sparsity variants only exist for the reach domain")
    if scale <= 0:
        raise ValueError(f"radius scale must be positive, got {scale}")
    env.radius = env.base_radius * scale
    return env


# ---------------------------------------------------------------------------
# perturbations

# Morphology ranges are the source benchmark's limb-length ranges divided by
# the nominal length: quadruped shin pattern for mass, walker thigh for reach.
_MORPHOLOGY = {
    "mass": {
        "easy": ((1.0, 1.2), 0.02),
        "medium": ((1.0, 3.2), 0.2),
        "hard": ((1.0, 5.6), 0.4),
    },
    "reach": {
        "easy": ((1.0, 1.111), 0.0089),
        "medium": ((1.0, 1.778), 0.0667),
        "hard": ((0.667, 2.444), 0.178),
    },
}
_DELAY = {"easy": 3, "medium": 6, "hard": 9}
_REPEAT = {"easy": 1, "medium": 2, "hard": 3}
_NOISE = {"easy": 0.1, "medium": 0.3, "hard": 1.0}


@dataclass
class PerturbationConfig:
    delay: int = 0
    repeat: int = 1
    noise_std: float = 0.0
    morphology_range: tuple | None = None
    morphology_std: float = 0.0
    preset: str = "none"

    def __post_init__(self):
        if self.delay < 0 or self.repeat < 1 or self.noise_std < 0 or self.morphology_std < 0:
            raise ValueError(f"invalid perturbation config {self}")
        if self.morphology_range is not None:
            lo, hi = self.morphology_range
            if not 0 < lo <= hi:
                raise ValueError(f"invalid morphology range {self.morphology_range}")

    @classmethod
    def preset(cls, name: str, domain: str = "mass") -> "PerturbationConfig":
        if name not in _DELAY:
            raise ValueError(f"unknown perturbation preset {name!r}")
        rng_, std = _MORPHOLOGY[domain][name]
        return cls(_DELAY[name], _REPEAT[name], _NOISE[name], rng_, std, name)


class PerturbedEnv:
    """Delay queue, action repeat, action noise and morphology drift around an env."""

    def __init__(self, env: ToyEnv, cfg: PerturbationConfig, seed: int = 0):
        self.env = env
        self.cfg = cfg
        self.rng = np.random.default_rng(seed)
        self.spec = env.spec
        self.queue: deque = deque()
        self.episode_morphology = 1.0

    def __getattr__(self, name):
        return getattr(self.env, name)

    def reset(self) -> np.ndarray:
        self.queue = deque(np.zeros(self.spec.act_dim) for _ in range(self.cfg.delay))
        if self.cfg.morphology_range is not None:
            lo, hi = self.cfg.morphology_range
            self.episode_morphology = float(self.rng.uniform(lo, hi))
            self.env.morphology = self.episode_morphology
        return self.env.reset()

    def step(self, action) -> StepResult:
        issued = np.clip(np.asarray(action, dtype=np.float64).reshape(self.spec.act_dim), -1, 1)
        self.queue.append(issued)
        applied = self.queue.popleft()
        if self.cfg.noise_std > 0:
            applied = applied + self.rng.normal(0.0, self.cfg.noise_std, size=applied.shape)
        applied = np.clip(applied, -1.0, 1.0)
        total = 0.0
        result = None
        for _ in range(self.cfg.repeat):
            if self.cfg.morphology_range is not None and self.cfg.morphology_std > 0:
                jitter = self.rng.normal(0.0, self.cfg.morphology_std)
                self.env.morphology = max(self.episode_morphology + jitter, 1e-3)
            result = self.env.step(applied)
            total += result._reward
            if result.done:
                break
        return StepResult(result.observation, total, result.done, self.env)


def wrap_perturbed(env: ToyEnv, cfg: PerturbationConfig, seed: int = 0) -> PerturbedEnv:
    return PerturbedEnv(env, cfg, seed=seed)


def random_policy_return(env, episodes: int, rng: np.random.Generator) -> float:
    """Mean return of uniform random actions, used as a floor in comparisons."""
    total = 0.0
    for _ in range(episodes):
        env.reset()
        done = False
        while not done:
            res = env.step(rng.uniform(-1, 1, size=env.spec.act_dim))
            total += res.reward
            done = res.done
    return total / episodes


def dump_trajectory_csv(path, observations, actions, rewards) -> None:
    """Write one row per step: t, obs_*, act_*, reward."""
    observations = np.asarray(observations)
    actions = np.asarray(actions)
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(
            ["t"]
            + [f"obs_{i}" for i in range(observations.shape[1])]
            + [f"act_{i}" for i in range(actions.shape[1])]
            + ["reward"]
        )
        for t in range(len(actions)):
            w.writerow([t, *(repr(float(v)) for v in observations[t]), *(repr(float(v)) for v in actions[t]), repr(float(rewards[t]))])
