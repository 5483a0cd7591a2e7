"""Domain types and the JSONL dataset format shared by every other module."""

from __future__ import annotations

import enum
import json
import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterable, Sequence

import numpy as np

STATE_COORDS = ("block_x", "block_y", "block_yaw", "effector_x", "effector_y")
ACTION_COORDS = ("d_effector_x", "d_effector_y")
POSITION_IDX = (0, 1, 3, 4)
YAW_IDX = 2
SCHEMA_VERSION = 1


class ValidationError(ValueError):
    """Input violates a documented precondition."""


class DatasetParseError(ValueError):
    def __init__(self, lineno: int, msg: str):
        super().__init__(f"line {lineno}: {msg}")
        self.lineno = lineno


class DatasetSchemaError(ValueError):
    pass


def wrap_angle(x):
    """Map angles to (-pi, pi]; in-range inputs come back bit-identical."""
    x = np.asarray(x, dtype=float)
    inside = (x > -np.pi) & (x <= np.pi)
    out = np.where(inside, x, np.pi - np.mod(np.pi - x, 2.0 * np.pi))
    return float(out) if np.ndim(out) == 0 else out


@dataclass(frozen=True)
class WorkspaceConfig:
    """Workspace extents and the per-step effector displacement limit."""

    bound: float = 1.0
    a_max: float = 0.02

    def __post_init__(self):
        if not (self.bound > 0 and self.a_max > 0):
            raise ValidationError("bound and a_max must be positive")


@dataclass(frozen=True)
class EnvState:
    block_x: float
    block_y: float
    block_yaw: float
    effector_x: float
    effector_y: float

    def __post_init__(self):
        vals = [float(getattr(self, n)) for n in STATE_COORDS]
        if not all(math.isfinite(v) for v in vals):
            raise ValidationError(f"non-finite state {vals}")
        for n, v in zip(STATE_COORDS, vals):
            object.__setattr__(self, n, v)
        object.__setattr__(self, "block_yaw", wrap_angle(self.block_yaw))

    def to_array(self) -> np.ndarray:
        return np.array([getattr(self, n) for n in STATE_COORDS])

    @classmethod
    def from_array(cls, arr) -> "EnvState":
        arr = np.asarray(arr, dtype=float)
        if arr.shape != (5,):
            raise ValidationError(f"state must have 5 entries, got shape {arr.shape}")
        return cls(*arr.tolist())


@dataclass(frozen=True)
class EnvAction:
    d_effector_x: float
    d_effector_y: float

    def __post_init__(self):
        for n in ACTION_COORDS:
            v = float(getattr(self, n))
            if not math.isfinite(v):
                raise ValidationError(f"non-finite action component {n}={v}")
            object.__setattr__(self, n, v)

    def to_array(self) -> np.ndarray:
        return np.array([self.d_effector_x, self.d_effector_y])

    @classmethod
    def from_array(cls, arr) -> "EnvAction":
        arr = np.asarray(arr, dtype=float)
        if arr.shape != (2,):
            raise ValidationError(f"action must have 2 entries, got shape {arr.shape}")
        return cls(*arr.tolist())

    def clamped(self, a_max: float) -> "EnvAction":
        return EnvAction.from_array(np.clip(self.to_array(), -a_max, a_max))


@dataclass(frozen=True)
class Pose2Target:
    target_x: float
    target_y: float
    target_yaw: float = 0.0

    def __post_init__(self):
        vals = (self.target_x, self.target_y, self.target_yaw)
        if not all(math.isfinite(float(v)) for v in vals):
            raise ValidationError("non-finite target")
        object.__setattr__(self, "target_yaw", wrap_angle(self.target_yaw))

    def to_array(self) -> np.ndarray:
        return np.array([self.target_x, self.target_y, self.target_yaw], dtype=float)


@dataclass(frozen=True)
class Transition:
    state: EnvState
    action: EnvAction
    next_state: EnvState


class Tag(str, enum.Enum):
    REAL = "real"
    SIM = "sim"


def _readonly(arr, shape_tail, name) -> np.ndarray:
    arr = np.array(arr, dtype=float, copy=True)
    if arr.size == 0:
        arr = arr.reshape((0,) + shape_tail)
    if arr.ndim != 2 or arr.shape[1:] != shape_tail:
        raise ValidationError(f"{name} must have shape (M, {shape_tail[0]}), got {arr.shape}")
    arr.setflags(write=False)
    return arr


@dataclass(frozen=True, eq=False)
class Dataset:
    """Ordered, tagged transitions stored column-wise.

    ``episodes`` holds an integer episode id per transition so reset
    boundaries survive serialization; it defaults to all zeros.
    """

    states: np.ndarray
    actions: np.ndarray
    next_states: np.ndarray
    tag: Tag = Tag.REAL
    iteration: int = 0
    episodes: np.ndarray = field(default=None)

    def __post_init__(self):
        s = _readonly(self.states, (5,), "states")
        a = _readonly(self.actions, (2,), "actions")
        s1 = _readonly(self.next_states, (5,), "next_states")
        if not (len(s) == len(a) == len(s1)):
            raise ValidationError("states/actions/next_states length mismatch")
        for arr in (s, a, s1):
            if not np.all(np.isfinite(arr)):
                raise ValidationError("dataset contains non-finite values")
        if int(self.iteration) < 0:
            raise ValidationError("iteration must be nonnegative")
        ep = np.zeros(len(s), dtype=np.int64) if self.episodes is None else np.array(self.episodes, dtype=np.int64)
        if ep.shape != (len(s),):
            raise ValidationError("episodes must have one entry per transition")
        ep.setflags(write=False)
        object.__setattr__(self, "states", s)
        object.__setattr__(self, "actions", a)
        object.__setattr__(self, "next_states", s1)
        object.__setattr__(self, "episodes", ep)
        object.__setattr__(self, "tag", Tag(self.tag))
        object.__setattr__(self, "iteration", int(self.iteration))

    @classmethod
    def empty(cls, tag=Tag.REAL, iteration: int = 0) -> "Dataset":
        return cls(np.zeros((0, 5)), np.zeros((0, 2)), np.zeros((0, 5)), tag, iteration)

    @classmethod
    def from_transitions(cls, transitions: Iterable[Transition], tag=Tag.REAL, iteration: int = 0,
                         episodes=None) -> "Dataset":
        ts = list(transitions)
        if not ts:
            return cls.empty(tag, iteration)
        return cls(
            np.array([t.state.to_array() for t in ts]),
            np.array([t.action.to_array() for t in ts]),
            np.array([t.next_state.to_array() for t in ts]),
            tag, iteration, episodes,
        )

    def __len__(self) -> int:
        return len(self.states)

    def __getitem__(self, i: int) -> Transition:
        return Transition(
            EnvState.from_array(self.states[i]),
            EnvAction.from_array(self.actions[i]),
            EnvState.from_array(self.next_states[i]),
        )

    @property
    def transitions(self) -> list:
        return [self[i] for i in range(len(self))]

    def __eq__(self, other) -> bool:
        if not isinstance(other, Dataset):
            return NotImplemented
        return (
            self.tag == other.tag
            and self.iteration == other.iteration
            and np.array_equal(self.states, other.states)
            and np.array_equal(self.actions, other.actions)
            and np.array_equal(self.next_states, other.next_states)
            and np.array_equal(self.episodes, other.episodes)
        )

    def with_next_states(self, next_states, tag=None) -> "Dataset":
        return Dataset(self.states, self.actions, next_states,
                       self.tag if tag is None else tag, self.iteration, self.episodes)

    def subset(self, idx) -> "Dataset":
        return Dataset(self.states[idx], self.actions[idx], self.next_states[idx],
                       self.tag, self.iteration, self.episodes[idx])


def dataset_append(ds: Dataset, t: Transition, episode: int | None = None) -> Dataset:
    """Return a new dataset with ``t`` appended; ``ds`` is left untouched."""
    if not isinstance(t, Transition):
        raise ValidationError("expected a Transition")
    rows = [t.state.to_array(), t.action.to_array(), t.next_state.to_array()]
    if not all(np.all(np.isfinite(r)) for r in rows):
        raise ValidationError("non-finite transition")
    if episode is None:
        episode = int(ds.episodes[-1]) if len(ds) else 0
    return Dataset(
        np.vstack([ds.states, rows[0]]),
        np.vstack([ds.actions, rows[1]]),
        np.vstack([ds.next_states, rows[2]]),
        ds.tag, ds.iteration,
        np.append(ds.episodes, episode),
    )


def concat_datasets(parts: Sequence[Dataset], tag=None, iteration=None) -> Dataset:
    if not parts:
        raise ValidationError("nothing to concatenate")
    return Dataset(
        np.vstack([p.states for p in parts]),
        np.vstack([p.actions for p in parts]),
        np.vstack([p.next_states for p in parts]),
        parts[0].tag if tag is None else tag,
        parts[0].iteration if iteration is None else iteration,
        np.concatenate([p.episodes for p in parts]),
    )


def dataset_save(ds: Dataset, path) -> None:
    """Write ``ds`` as JSONL: a header record, then one record per transition.

    Floats go through ``repr`` (shortest round-trip form), so loading gives
    back bit-identical arrays.
    """
    path = Path(path)
    lines = [json.dumps({"tag": ds.tag.value, "iteration": ds.iteration,
                         "schema_version": SCHEMA_VERSION})]
    for s, a, s1, ep in zip(ds.states.tolist(), ds.actions.tolist(),
                            ds.next_states.tolist(), ds.episodes.tolist()):
        lines.append(json.dumps({"s": s, "a": a, "s_next": s1, "ep": ep}))
    path.write_text("\n".join(lines) + "\n")


def _vector(rec, key, n, lineno):
    if key not in rec:
        raise DatasetSchemaError(f"line {lineno}: missing field {key!r}")
    v = rec[key]
    if not isinstance(v, list) or len(v) != n:
        raise DatasetSchemaError(f"line {lineno}: field {key!r} must be a list of {n} numbers")
    try:
        return [float(x) for x in v]
    except (TypeError, ValueError):
        raise DatasetSchemaError(f"line {lineno}: field {key!r} has non-numeric entries") from None


def dataset_load(path) -> Dataset:
    text = Path(path).read_text()
    lines = text.splitlines()
    if not lines or not lines[0].strip():
        raise DatasetSchemaError("missing header record")
    records = []
    for lineno, line in enumerate(lines, start=1):
        if not line.strip():
            continue
        try:
            rec = json.loads(line)
        except json.JSONDecodeError as exc:
            raise DatasetParseError(lineno, exc.msg) from None
        if not isinstance(rec, dict):
            raise DatasetParseError(lineno, "record is not a JSON object")
        records.append((lineno, rec))
    _, header = records[0]
    for key in ("tag", "iteration", "schema_version"):
        if key not in header:
            raise DatasetSchemaError(f"line 1: header missing {key!r}")
    if header["schema_version"] != SCHEMA_VERSION:
        raise DatasetSchemaError(f"unsupported schema_version {header['schema_version']}")
    try:
        tag = Tag(header["tag"])
    except ValueError:
        raise DatasetSchemaError(f"line 1: unknown tag {header['tag']!r}") from None
    s, a, s1, ep = [], [], [], []
    for lineno, rec in records[1:]:
        s.append(_vector(rec, "s", 5, lineno))
        a.append(_vector(rec, "a", 2, lineno))
        s1.append(_vector(rec, "s_next", 5, lineno))
        ep.append(int(rec.get("ep", 0)))
    if not s:
        return Dataset.empty(tag, header["iteration"])
    return Dataset(np.array(s), np.array(a), np.array(s1), tag, header["iteration"], np.array(ep))


def marginal(ds: Dataset, selector: Sequence[str]) -> np.ndarray:
    """Project next states onto the named coordinates, one row per transition."""
    if isinstance(selector, str):
        selector = [selector]
    cols = []
    for name in selector:
        if name not in STATE_COORDS:
            raise ValidationError(f"unknown coordinate {name!r}; expected one of {STATE_COORDS}")
        cols.append(STATE_COORDS.index(name))
    if not cols:
        raise ValidationError("empty selector")
    return ds.next_states[:, cols].copy()
