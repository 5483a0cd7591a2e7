"""Vectorized block-pushing task: resets, observations, task rewards, success test."""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from ..core import Pose2Target, ValidationError, wrap_angle
from ..diffsim.dynamics import SimGeometry, SimParams, step_batch
from ..diffsim.proxy import RealProxyConfig, real_step_batch

CUBE_WEIGHTS = (6.0, 3.0)
TBLOCK_WEIGHTS = (3.0, 6.0)
OBS_SCALE = 10.0  # metres to decimetres keeps observations O(1)
_SHAPE_DEFAULTS = {
    "target_radius": (0.1, 0.03),
    "block_yaw_range": (np.pi, 1.0),
    "tblock_guidance": (0.0, 1.0),
    "weights": (CUBE_WEIGHTS, TBLOCK_WEIGHTS),
}


@dataclass(frozen=True)
class TaskConfig:
    """Episode layout. ``shape`` is ``"square"`` (cube task) or ``"tblock"``."""

    shape: str = "square"
    horizon: int = 150
    block_jitter: float = 0.05
    target_radius: float | None = None
    effector_reset: tuple = (0.07, 0.09)
    success_radius: float = 0.02
    yaw_tolerance: float = 0.15
    block_yaw_range: float | None = None
    target_yaw_range: float = 0.0
    weights: tuple | None = None
    # effector-to-block guidance weight added to the T-block reward
    tblock_guidance: float | None = None

    def __post_init__(self):
        if self.shape not in ("square", "tblock"):
            raise ValidationError(f"unknown task shape {self.shape!r}")
        if self.horizon < 1:
            raise ValidationError("horizon must be >= 1")
        # unset fields take per-shape defaults (square, tblock)
        for name, pair in _SHAPE_DEFAULTS.items():
            if getattr(self, name) is None:
                object.__setattr__(self, name, pair[self.shape != "square"])
        object.__setattr__(self, "weights", tuple(float(w) for w in self.weights))
        object.__setattr__(self, "effector_reset", tuple(float(v) for v in self.effector_reset))

    @property
    def obs_dim(self) -> int:
        return 10 if self.shape == "square" else 17

    def geometry(self, base: SimGeometry | None = None) -> SimGeometry:
        base = base or SimGeometry()
        if base.shape == self.shape:
            return base
        d = base.to_dict()
        d["shape"] = self.shape
        return SimGeometry.from_dict(d)


def task_reward_cube(state, target, weights=CUBE_WEIGHTS) -> np.ndarray:
    """``-l_d |block - target| - l_ee |effector - block|``; works on single rows or batches."""
    s = np.asarray(state, dtype=float)
    t = np.asarray(target.to_array() if isinstance(target, Pose2Target) else target, dtype=float)
    r_d = -np.linalg.norm(s[..., 0:2] - t[..., 0:2], axis=-1)
    r_ee = -np.linalg.norm(s[..., 3:5] - s[..., 0:2], axis=-1)
    out = weights[0] * r_d + weights[1] * r_ee
    return float(out) if np.ndim(out) == 0 else out


def task_reward_tblock(state, target, weights=TBLOCK_WEIGHTS) -> np.ndarray:
    """``-l_d |block - target| - l_o |wrap(yaw_b - yaw_t)|``."""
    s = np.asarray(state, dtype=float)
    t = np.asarray(target.to_array() if isinstance(target, Pose2Target) else target, dtype=float)
    r_d = -np.linalg.norm(s[..., 0:2] - t[..., 0:2], axis=-1)
    r_o = -np.abs(wrap_angle(s[..., 2] - t[..., 2]))
    out = weights[0] * r_d + weights[1] * r_o
    return float(out) if np.ndim(out) == 0 else out


def observe(states: np.ndarray, targets: np.ndarray, shape: str = "square") -> np.ndarray:
    """Observation rows: effector, block, target, block - target, effector - block.

    Positions are scaled by ``OBS_SCALE``; the T-block variant adds block yaw,
    target yaw and their wrapped difference.
    """
    s = np.atleast_2d(np.asarray(states, dtype=float))
    t = np.atleast_2d(np.asarray(targets, dtype=float))
    ee, blk, tgt = s[:, 3:5], s[:, 0:2], t[:, 0:2]
    pos = OBS_SCALE * np.concatenate([ee, blk, tgt, blk - tgt, ee - blk], axis=1)
    if shape == "square":
        return pos
    dyaw = wrap_angle(s[:, 2] - t[:, 2])
    yaw = np.stack([s[:, 2], t[:, 2], dyaw], axis=1)
    # effector offset in the block frame and the yaw error as a unit vector
    c, sn = np.cos(s[:, 2]), np.sin(s[:, 2])
    rel = ee - blk
    local = OBS_SCALE * np.stack([c * rel[:, 0] + sn * rel[:, 1], -sn * rel[:, 0] + c * rel[:, 1]], axis=1)
    return np.concatenate([pos, yaw, local, np.stack([np.cos(dyaw), np.sin(dyaw)], axis=1)], axis=1)


class PushEnv:
    """A batch of independent pushing episodes with auto-reset.

    Dynamics come from the simulator at ``params`` or, when ``proxy`` is
    given, from the noisy hidden-parameter proxy.
    """

    def __init__(self, task: TaskConfig, n_envs: int, rng: np.random.Generator,
                 params: SimParams | None = None, proxy: RealProxyConfig | None = None,
                 geom: SimGeometry | None = None):
        if (params is None) == (proxy is None):
            raise ValidationError("give exactly one of params / proxy")
        self.task = task
        self.n = int(n_envs)
        self.rng = rng
        self.params = params
        self.proxy = proxy
        self.geom = task.geometry(geom)
        self.a_max = self.geom.workspace.a_max
        self.states = np.zeros((self.n, 5))
        self.targets = np.zeros((self.n, 3))
        self.t = np.zeros(self.n, dtype=np.int64)
        self.reset_all()

    def _sample_resets(self, k: int):
        task, rng = self.task, self.rng
        block = rng.uniform(-task.block_jitter, task.block_jitter, size=(k, 2))
        yaw = rng.uniform(-task.block_yaw_range, task.block_yaw_range, size=k) if task.block_yaw_range > 0 else np.zeros(k)
        ang = rng.uniform(0.0, 2 * np.pi, size=k)
        dist = rng.uniform(*task.effector_reset, size=k)
        ee = block + dist[:, None] * np.stack([np.cos(ang), np.sin(ang)], axis=1)
        r = task.target_radius * np.sqrt(rng.uniform(size=k))
        phi = rng.uniform(0.0, 2 * np.pi, size=k)
        tyaw = rng.uniform(-task.target_yaw_range, task.target_yaw_range, size=k) if task.target_yaw_range > 0 else np.zeros(k)
        states = np.column_stack([block, wrap_angle(yaw), ee])
        targets = np.column_stack([r * np.cos(phi), r * np.sin(phi), tyaw])
        return states, targets

    def reset_all(self) -> np.ndarray:
        self.states, self.targets = self._sample_resets(self.n)
        self.t[:] = 0
        return self.obs()

    def obs(self) -> np.ndarray:
        return observe(self.states, self.targets, self.task.shape)

    def reward(self, states: np.ndarray) -> np.ndarray:
        if self.task.shape == "square":
            return task_reward_cube(states, self.targets, self.task.weights)
        r = task_reward_tblock(states, self.targets, self.task.weights)
        if self.task.tblock_guidance:
            r = r - self.task.tblock_guidance * np.linalg.norm(states[:, 3:5] - states[:, 0:2], axis=1)
        return r

    def success(self, states: np.ndarray) -> np.ndarray:
        ok = np.linalg.norm(states[:, 0:2] - self.targets[:, 0:2], axis=1) <= self.task.success_radius
        if self.task.shape == "tblock":
            ok &= np.abs(wrap_angle(states[:, 2] - self.targets[:, 2])) <= self.task.yaw_tolerance
        return ok

    def step(self, actions_unit: np.ndarray):
        """Advance every episode by one step.

        ``actions_unit`` are policy outputs; they are clipped to [-1, 1] and
        scaled by ``a_max``. Returns a dict with the transition, task reward,
        success and done flags; finished episodes are reset in place, so
        ``next_obs`` already belongs to the new episode for those rows.
        """
        a = np.clip(np.asarray(actions_unit, dtype=float), -1.0, 1.0) * self.a_max
        s = self.states
        if self.proxy is not None:
            s1 = real_step_batch(self.proxy, s, a, self.rng, self.geom)
        else:
            s1 = step_batch(self.params, s, a, self.geom)
        r = self.reward(s1)
        succ = self.success(s1)
        self.t += 1
        timeout = self.t >= self.task.horizon
        done = succ | timeout
        out = {"state": s, "action": a, "next_state": s1, "reward": r, "success": succ,
               "done": done, "timeout": timeout & ~succ, "target": self.targets.copy(),
               "terminal_obs": observe(s1, self.targets, self.task.shape)}
        self.states = s1
        if np.any(done):
            idx = np.flatnonzero(done)
            ns, nt = self._sample_resets(len(idx))
            self.states = self.states.copy()
            self.states[idx] = ns
            self.targets[idx] = nt
            self.t[idx] = 0
        out["next_obs"] = self.obs()
        return out
