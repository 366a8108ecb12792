"""Trajectory data model: loading, validation, windowing, and splitting.

A trajectory is a time-ordered sequence of (timestamp, state vector, action)
triples observed at irregular intervals. Datasets are collections of
trajectories with a shared state dimension and a shared discrete action space.
"""

from __future__ import annotations

import csv
import json
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np


class DataError(ValueError):
    """An input file or record failed validation."""


@dataclass(frozen=True, eq=False)
class Trajectory:
    """One demonstration: states (T, m), integer actions (T,), timestamps (T,).

    Timestamps must be strictly increasing; all three fields must agree on T.
    Instances are treated as immutable after construction.
    """

    id: str
    states: np.ndarray
    actions: np.ndarray
    timestamps: np.ndarray

    def __post_init__(self):
        states = np.asarray(self.states, dtype=np.float64)
        actions = np.asarray(self.actions)
        timestamps = np.asarray(self.timestamps, dtype=np.float64)
        if states.ndim != 2 or states.shape[0] < 1:
            raise DataError(f"trajectory {self.id!r}: states must be a (T, m) array with T >= 1")
        T = states.shape[0]
        if actions.shape != (T,) or timestamps.shape != (T,):
            raise DataError(
                f"trajectory {self.id!r}: field lengths disagree "
                f"(states {T}, actions {actions.shape}, timestamps {timestamps.shape})"
            )
        if not np.issubdtype(actions.dtype, np.integer):
            if not np.all(actions == np.floor(actions)):
                raise DataError(f"trajectory {self.id!r}: actions must be integers")
            actions = actions.astype(np.int64)
        if np.any(actions < 0):
            raise DataError(f"trajectory {self.id!r}: actions must be non-negative")
        if not np.all(np.isfinite(states)) or not np.all(np.isfinite(timestamps)):
            raise DataError(f"trajectory {self.id!r}: non-finite state or timestamp")
        if T > 1 and not np.all(np.diff(timestamps) > 0):
            raise DataError(f"trajectory {self.id!r}: timestamps must be strictly increasing")
        object.__setattr__(self, "states", states)
        object.__setattr__(self, "actions", actions.astype(np.int64))
        object.__setattr__(self, "timestamps", timestamps)

    def __len__(self) -> int:
        return self.states.shape[0]

    @property
    def state_dim(self) -> int:
        return self.states.shape[1]

    @property
    def delta_t(self) -> np.ndarray:
        """Gaps between consecutive timestamps, length T - 1. All positive."""
        return np.diff(self.timestamps)


@dataclass(frozen=True, eq=False)
class StackedWindow:
    """A stacked observation window ending at one timestep.

    vector has length m * omega: the omega consecutive states ending at
    end_index, concatenated oldest first. Windows near the start of a
    trajectory are left-padded by repeating the first state; padded marks
    those windows.
    """

    vector: np.ndarray
    trajectory_id: str
    end_index: int
    padded: bool


@dataclass(frozen=True, eq=False)
class Dataset:
    """A collection of trajectories with shared feature and action spaces."""

    trajectories: tuple[Trajectory, ...]
    feature_names: tuple[str, ...]
    action_count: int

    def __post_init__(self):
        trajs = tuple(self.trajectories)
        if not trajs:
            raise DataError("dataset has no trajectories")
        m = trajs[0].state_dim
        for tr in trajs:
            if tr.state_dim != m:
                raise DataError(
                    f"trajectory {tr.id!r} has state dim {tr.state_dim}, expected {m}"
                )
        seen: set[str] = set()
        for tr in trajs:
            if tr.id in seen:
                raise DataError(f"duplicate trajectory id {tr.id!r}")
            seen.add(tr.id)
        names = tuple(self.feature_names) if self.feature_names else tuple(f"f{j}" for j in range(m))
        if len(names) != m:
            raise DataError(f"{len(names)} feature names for state dim {m}")
        a_max = max(int(tr.actions.max()) for tr in trajs)
        count = int(self.action_count) if self.action_count else 0
        if count == 0:
            count = max(2, a_max + 1)
        if a_max >= count:
            raise DataError(f"action id {a_max} out of range for action_count {count}")
        object.__setattr__(self, "trajectories", trajs)
        object.__setattr__(self, "feature_names", names)
        object.__setattr__(self, "action_count", count)

    def __len__(self) -> int:
        return len(self.trajectories)

    @property
    def state_dim(self) -> int:
        return self.trajectories[0].state_dim

    @property
    def ids(self) -> list[str]:
        return [tr.id for tr in self.trajectories]

    @property
    def total_steps(self) -> int:
        return sum(len(tr) for tr in self.trajectories)

    def by_id(self, traj_id: str) -> Trajectory:
        for tr in self.trajectories:
            if tr.id == traj_id:
                return tr
        raise KeyError(traj_id)


def _build_dataset(groups: dict[str, list[tuple[float, list[float], int]]],
                   feature_names=(), action_count=0) -> Dataset:
    trajs = []
    for tid, rows in groups.items():
        rows.sort(key=lambda r: r[0])
        ts = np.array([r[0] for r in rows], dtype=np.float64)
        xs = np.array([r[1] for r in rows], dtype=np.float64)
        acts = np.array([r[2] for r in rows], dtype=np.int64)
        trajs.append(Trajectory(id=tid, states=xs, actions=acts, timestamps=ts))
    return Dataset(trajectories=tuple(trajs), feature_names=tuple(feature_names),
                   action_count=action_count)


def load_dataset(path, fmt: str | None = None, action_count: int = 0) -> Dataset:
    """Load a dataset from JSONL (canonical) or CSV (ingestion only).

    JSONL: one record per line, {"traj": str, "t": float, "x": [float, ...],
    "a": int}. CSV: header ``traj,t,x0,...,x{m-1},a``. Rows are grouped by
    trajectory id (first-seen order) and sorted by timestamp within each
    trajectory. Validation failures raise DataError naming the line.
    """
    path = Path(path)
    if fmt is None:
        fmt = "csv" if path.suffix.lower() == ".csv" else "jsonl"
    if fmt not in ("jsonl", "csv"):
        raise DataError(f"unknown format {fmt!r}; expected 'jsonl' or 'csv'")
    groups: dict[str, list[tuple[float, list[float], int]]] = {}
    state_dim = None
    if fmt == "jsonl":
        with open(path, "r", encoding="utf-8") as fh:
            for lineno, line in enumerate(fh, 1):
                line = line.strip()
                if not line:
                    continue
                try:
                    rec = json.loads(line)
                except json.JSONDecodeError as exc:
                    raise DataError(f"{path}:{lineno}: invalid JSON: {exc}") from None
                try:
                    tid = str(rec["traj"])
                    t = float(rec["t"])
                    x = [float(v) for v in rec["x"]]
                    a = int(rec["a"])
                except (KeyError, TypeError, ValueError) as exc:
                    raise DataError(f"{path}:{lineno}: bad record fields: {exc}") from None
                if state_dim is None:
                    state_dim = len(x)
                elif len(x) != state_dim:
                    raise DataError(
                        f"{path}:{lineno}: state has {len(x)} features, expected {state_dim}"
                    )
                groups.setdefault(tid, []).append((t, x, a))
        if not groups:
            raise DataError(f"{path}: empty dataset")
        return _build_dataset(groups, action_count=action_count)
    with open(path, "r", encoding="utf-8", newline="") as fh:
        reader = csv.reader(fh)
        try:
            header = next(reader)
        except StopIteration:
            raise DataError(f"{path}: empty CSV") from None
        m = len(header) - 3
        expected = ["traj", "t"] + [f"x{j}" for j in range(m)] + ["a"]
        if m < 1 or header != expected:
            raise DataError(f"{path}:1: bad CSV header {header!r}; expected {expected!r}")
        for lineno, row in enumerate(reader, 2):
            if not row:
                continue
            if len(row) != m + 3:
                raise DataError(f"{path}:{lineno}: expected {m + 3} columns, got {len(row)}")
            try:
                tid = row[0]
                t = float(row[1])
                x = [float(v) for v in row[2:2 + m]]
                a = int(row[2 + m])
            except ValueError as exc:
                raise DataError(f"{path}:{lineno}: bad value: {exc}") from None
            groups.setdefault(tid, []).append((t, x, a))
    if not groups:
        raise DataError(f"{path}: CSV has a header but no rows")
    return _build_dataset(groups, feature_names=[f"x{j}" for j in range(m)],
                          action_count=action_count)


def save_dataset(dataset: Dataset, path) -> None:
    """Write a dataset as canonical JSONL. Round-trips exactly.

    Floats are serialized with repr, which preserves float64 bit patterns.
    """
    path = Path(path)
    with open(path, "w", encoding="utf-8") as fh:
        for tr in dataset.trajectories:
            for t in range(len(tr)):
                rec = {
                    "traj": tr.id,
                    "t": float(tr.timestamps[t]),
                    "x": [float(v) for v in tr.states[t]],
                    "a": int(tr.actions[t]),
                }
                fh.write(json.dumps(rec) + "\n")


def window_matrix(traj: Trajectory, omega: int) -> tuple[np.ndarray, np.ndarray]:
    """Stacked windows for one trajectory as a (T, m * omega) matrix.

    Window t holds states t-omega+1 .. t concatenated oldest first; indices
    before the start repeat state 0 (left padding). Also returns a boolean
    (T,) array marking padded windows (t < omega - 1).
    """
    if omega < 1:
        raise ValueError(f"omega must be >= 1, got {omega}")
    T, m = traj.states.shape
    cols = []
    for lag in range(omega - 1, -1, -1):
        idx = np.maximum(np.arange(T) - lag, 0)
        cols.append(traj.states[idx])
    mat = np.concatenate(cols, axis=1) if omega > 1 else traj.states.copy()
    padded = np.arange(T) < (omega - 1)
    return mat, padded


def stack_windows(traj: Trajectory, omega: int) -> list[StackedWindow]:
    """Stacked windows for one trajectory, one StackedWindow per timestep."""
    mat, padded = window_matrix(traj, omega)
    return [
        StackedWindow(vector=mat[t], trajectory_id=traj.id, end_index=t, padded=bool(padded[t]))
        for t in range(len(traj))
    ]


def flatten_pairs(dataset: Dataset) -> tuple[np.ndarray, np.ndarray]:
    """All (state, action) pairs pooled in dataset order: (n, m) and (n,)."""
    X = np.concatenate([tr.states for tr in dataset.trajectories], axis=0)
    a = np.concatenate([tr.actions for tr in dataset.trajectories])
    return X, a


def split_dataset(dataset: Dataset, test_fraction: float, seed: int) -> tuple[Dataset, Dataset]:
    """Split by whole trajectories into (train, test), deterministically.

    Both splits are non-empty; trajectory order within each split follows the
    original dataset order.
    """
    if not 0.0 < test_fraction < 1.0:
        raise ValueError(f"test_fraction must be in (0, 1), got {test_fraction}")
    n = len(dataset)
    if n < 2:
        raise ValueError("need at least 2 trajectories to split")
    n_test = int(round(test_fraction * n))
    n_test = min(max(n_test, 1), n - 1)
    rng = np.random.default_rng(seed)
    perm = rng.permutation(n)
    test_idx = set(perm[:n_test].tolist())
    train = tuple(tr for i, tr in enumerate(dataset.trajectories) if i not in test_idx)
    test = tuple(tr for i, tr in enumerate(dataset.trajectories) if i in test_idx)
    mk = lambda trs: Dataset(trajectories=trs, feature_names=dataset.feature_names,
                             action_count=dataset.action_count)
    return mk(train), mk(test)
