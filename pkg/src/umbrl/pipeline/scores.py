"""Score bookkeeping: expert normalization and per-cell statistics."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np


def normalize_score(raw: float, expert: float) -> float:
    """``raw / expert`` without clipping."""
    if expert == 0:
        raise ZeroDivisionError("expert reference score is zero; cannot normalize")
    return float(raw) / float(expert)


def mean_stderr(values) -> tuple[float, float]:
    v = np.asarray(values, dtype=np.float64)
    if v.size == 0:
        return float("nan"), float("nan")
    if v.size == 1:
        return float(v[0]), 0.0
    return float(v.mean()), float(v.std(ddof=1) / np.sqrt(v.size))


@dataclass
class RunScore:
    run_id: str
    method: str
    snapshot: int
    task: str
    seed: int
    raw: float | None
    status: str = "ok"


class ScoreTable:
    def __init__(self, experts: dict | None = None):
        self.experts = dict(experts or {})
        self.runs: list[RunScore] = []

    def add(self, run: RunScore) -> None:
        self.runs.append(run)

    def normalized(self, task: str, raw: float | None) -> float | None:
        # a zero reference leaves the score unnormalized rather than failing the grid
        if raw is None or not self.experts.get(task):
            return None
        return normalize_score(raw, self.experts[task])

    def _ok(self, method, snapshot, task=None):
        return [
            r for r in self.runs
            if r.status == "ok" and r.method == method and r.snapshot == snapshot and (task is None or r.task == task)
        ]

    def cell(self, method: str, snapshot: int, task: str) -> dict:
        runs = self._ok(method, snapshot, task)
        raw_mean, raw_se = mean_stderr([r.raw for r in runs])
        out = {"n": len(runs), "raw_mean": raw_mean, "raw_stderr": raw_se}
        norm = [self.normalized(task, r.raw) for r in runs]
        if runs and all(v is not None for v in norm):
            out["normalized_mean"], out["normalized_stderr"] = mean_stderr(norm)
        return out

    def tasks(self, method, snapshot) -> list[str]:
        return sorted({r.task for r in self._ok(method, snapshot)})

    def aggregate(self, method: str, snapshot: int) -> dict:
        """Mean over tasks of the per-task seed means."""
        cells = {t: self.cell(method, snapshot, t) for t in self.tasks(method, snapshot)}
        if not cells:
            return {"n_tasks": 0, "raw_mean": float("nan"), "normalized_mean": None}
        raw = float(np.mean([c["raw_mean"] for c in cells.values()]))
        norm = None
        if all("normalized_mean" in c for c in cells.values()):
            norm = float(np.mean([c["normalized_mean"] for c in cells.values()]))
        return {"n_tasks": len(cells), "raw_mean": raw, "normalized_mean": norm}

    def groups(self) -> list[tuple[str, int]]:
        seen = []
        for r in self.runs:
            key = (r.method, r.snapshot)
            if key not in seen:
                seen.append(key)
        return seen
