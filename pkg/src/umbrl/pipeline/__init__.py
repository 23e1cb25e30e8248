"""Two-phase protocol: reward-free pre-training, snapshots, task fine-tuning, grids."""

from .agent import Agent
from .config import (
    ConfigError,
    EnvConfig,
    ExperimentConfig,
    RunConfig,
    TransferPolicy,
    dump_config,
    load_config,
)
from .replay import ReplayBuffer
from .runner import (
    FinetuneResult,
    MatrixResult,
    PretrainDiverged,
    PretrainRun,
    evaluate,
    finetune,
    pretrain,
    run_matrix,
    train_expert,
)
from .scores import ScoreTable, normalize_score
from .snapshot import Snapshot, SnapshotError

__all__ = [
    "Agent",
    "ConfigError",
    "EnvConfig",
    "ExperimentConfig",
    "FinetuneResult",
    "MatrixResult",
    "PretrainDiverged",
    "PretrainRun",
    "ReplayBuffer",
    "RunConfig",
    "ScoreTable",
    "Snapshot",
    "SnapshotError",
    "TransferPolicy",
    "dump_config",
    "evaluate",
    "finetune",
    "load_config",
    "normalize_score",
    "pretrain",
    "run_matrix",
    "train_expert",
]
