"""Experiment configuration: nested dataclasses addressed by dotted keys."""

from __future__ import annotations

import dataclasses
from dataclasses import dataclass, field

import yaml

from ..behavior import BehaviorConfig
from ..envs import domain_of, env_spec
from ..explore import ExploreConfig
from ..planner import PlannerConfig
from ..worldmodel import WorldModelConfig


class ConfigError(ValueError):
    pass


@dataclass
class EnvConfig:
    task: str = "run_right"
    domain: str | None = None
    episode_length: int = 200
    perturbation: str | None = None
    radius_scale: float = 1.0

    def __post_init__(self):
        try:
            actual = domain_of(self.task)
        except ValueError as exc:
            raise ConfigError(str(exc)) from None
        if self.domain is not None and self.domain != actual:
            raise ConfigError(f"task {self.task!r} belongs to domain {actual!r}, not {self.domain!r}")
        self.domain = actual
        if self.episode_length < 1:
            raise ConfigError("episode_length must be positive")


@dataclass
class TransferPolicy:
    """Which pre-trained components initialize fine-tuning.

    The model is always transferred and the critic never is. ``use_actor``
    of ``None`` resolves to the task's reward density: kept for dense
    tasks, discarded for sparse ones.
    """

    use_model: bool = True
    use_actor: bool | None = None
    use_critic: bool = False

    def __post_init__(self):
        if self.use_critic:
            raise ConfigError("transfer.use_critic is not allowed: the pre-trained critic is always discarded")
        if not self.use_model:
            raise ConfigError("transfer.use_model must be true; run fine-tuning without a snapshot instead")

    def actor_for(self, task: str) -> bool:
        if self.use_actor is not None:
            return bool(self.use_actor)
        return env_spec(domain_of(task)).density(task) == "dense"


@dataclass
class RunConfig:
    pt_frames: int = 50_000
    ft_frames: int = 5_000
    frames_per_update: int = 10
    snapshots: tuple = (5_000, 20_000, 50_000)
    planner: bool = False
    seeds: tuple = (0, 1, 2)
    batch_size: int = 16
    seq_len: int = 16
    imag_starts: int = 64
    pt_seed_frames: int = 500
    ft_seed_frames: int = 0
    eval_episodes: int = 10
    model_lr: float = 3e-4
    reward_known: bool = False
    freeze_decoder: bool = False
    checkpoint_every: int = 0
    expert_frames: int | None = None
    skill_episodes: int = 1

    def __post_init__(self):
        self.snapshots = tuple(int(s) for s in self.snapshots)
        self.seeds = tuple(int(s) for s in self.seeds)
        if list(self.snapshots) != sorted(self.snapshots):
            raise ConfigError(f"snapshot schedule must be sorted ascending, got {self.snapshots}")
        if self.snapshots and self.snapshots[-1] > self.pt_frames:
            raise ConfigError(f"snapshot at {self.snapshots[-1]} exceeds pt_frames={self.pt_frames}")
        if self.ft_frames > self.pt_frames:
            raise ConfigError(f"ft_frames ({self.ft_frames}) must not exceed pt_frames ({self.pt_frames})")
        if self.frames_per_update < 1 or self.batch_size < 1 or self.seq_len < 2:
            raise ConfigError("frames_per_update, batch_size must be >= 1 and seq_len >= 2")
        if self.eval_episodes < 1:
            raise ConfigError("eval_episodes must be >= 1")

    @property
    def expert_budget(self) -> int:
        return self.expert_frames if self.expert_frames is not None else 10 * self.ft_frames


@dataclass
class ExperimentConfig:
    env: EnvConfig = field(default_factory=EnvConfig)
    run: RunConfig = field(default_factory=RunConfig)
    model: WorldModelConfig = field(default_factory=WorldModelConfig)
    behavior: BehaviorConfig = field(default_factory=BehaviorConfig)
    explore: ExploreConfig = field(default_factory=ExploreConfig)
    planner: PlannerConfig = field(default_factory=PlannerConfig)
    transfer: TransferPolicy = field(default_factory=TransferPolicy)

    def to_dict(self) -> dict:
        return dataclasses.asdict(self)

    @classmethod
    def from_dict(cls, data: dict | None) -> "ExperimentConfig":
        return cls().with_values(flatten(data or {}))

    def with_value(self, key: str, value) -> "ExperimentConfig":
        return self.with_values({key: value})

    def with_values(self, values: dict) -> "ExperimentConfig":
        """Set several ``section.field`` keys; each section is validated once."""
        grouped: dict[str, dict] = {}
        for key, value in values.items():
            section, _, name = key.partition(".")
            if not name or "." in name:
                raise ConfigError(f"config keys have the form section.field, got {key!r}")
            if section not in _SECTIONS:
                raise ConfigError(f"unknown config section {section!r} in {key!r}")
            if name not in {f.name for f in dataclasses.fields(getattr(self, section))}:
                raise ConfigError(f"unknown config key {key!r}")
            grouped.setdefault(section, {})[name] = tuple(value) if isinstance(value, list) else value
        cfg = self
        for section, changes in grouped.items():
            if section == "env" and "task" in changes:
                changes.setdefault("domain", None)
            try:
                updated = dataclasses.replace(getattr(cfg, section), **changes)
            except ConfigError:
                raise
            except (TypeError, ValueError) as exc:
                raise ConfigError(f"{section}: {exc}") from None
            cfg = dataclasses.replace(cfg, **{section: updated})
        return cfg

    def with_overrides(self, overrides) -> "ExperimentConfig":
        """Apply ``key=value`` strings; values are parsed as YAML scalars or lists."""
        values = {}
        for item in overrides or ():
            key, sep, raw = item.partition("=")
            if not sep:
                raise ConfigError(f"override must look like key=value, got {item!r}")
            values[key.strip()] = yaml.safe_load(raw)
        return self.with_values(values)


_SECTIONS = ("env", "run", "model", "behavior", "explore", "planner", "transfer")


def flatten(data: dict, prefix: str = "") -> dict:
    """Nested mappings and dotted keys both become ``section.field`` keys."""
    out = {}
    for key, value in data.items():
        full = f"{prefix}{key}"
        if isinstance(value, dict):
            out.update(flatten(value, full + "."))
        else:
            out[full] = value
    return out


def load_config(path=None, overrides=()) -> ExperimentConfig:
    data = {}
    if path is not None:
        with open(path) as fh:
            data = yaml.safe_load(fh) or {}
        if not isinstance(data, dict):
            raise ConfigError(f"{path}: expected a mapping at the top level")
    return ExperimentConfig.from_dict(data).with_overrides(overrides)


def dump_config(cfg: ExperimentConfig) -> str:
    return yaml.safe_dump(_plain(cfg.to_dict()), sort_keys=True)


def _plain(obj):
    if isinstance(obj, dict):
        return {k: _plain(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_plain(v) for v in obj]
    return obj
