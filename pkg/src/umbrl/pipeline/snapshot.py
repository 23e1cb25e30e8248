"""Snapshots of pre-trained agents: parameter groups plus run metadata."""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from ..ndgrad import record

SNAPSHOT_VERSION = 1
GROUPS = ("model", "actor", "critic")


class SnapshotError(ValueError):
    pass


@dataclass
class Snapshot:
    groups: dict
    pt_steps: int
    method: str
    seed: int
    meta: dict = field(default_factory=dict)
    version: int = SNAPSHOT_VERSION

    def __post_init__(self):
        missing = [g for g in GROUPS if g not in self.groups]
        if missing:
            raise SnapshotError(f"snapshot lacks parameter groups {missing}")

    def group(self, name: str) -> dict[str, np.ndarray]:
        if name not in self.groups:
            raise SnapshotError(f"snapshot has no group {name!r}")
        return self.groups[name]

    def _header(self) -> dict:
        return {
            "snapshot_version": self.version,
            "pt_steps": self.pt_steps,
            "method": self.method,
            "seed": self.seed,
            "meta": self.meta,
        }

    def to_bytes(self) -> bytes:
        return record.dumps(self.groups, self._header())

    @classmethod
    def from_bytes(cls, raw: bytes) -> "Snapshot":
        groups, meta = record.loads(raw)
        version = meta.get("snapshot_version")
        if version != SNAPSHOT_VERSION:
            raise SnapshotError(f"unsupported snapshot version {version!r} (expected {SNAPSHOT_VERSION})")
        return cls(groups, int(meta["pt_steps"]), meta["method"], int(meta["seed"]), meta.get("meta", {}), version)

    def save(self, path) -> None:
        record.save(path, self.groups, self._header())

    @classmethod
    def load(cls, path) -> "Snapshot":
        with open(path, "rb") as fh:
            return cls.from_bytes(fh.read())


def snapshot_filename(method: str, seed: int, step: int) -> str:
    return f"{method}_seed{seed}_step{step}.snap"
