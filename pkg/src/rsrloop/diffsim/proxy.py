"""Hidden-parameter stand-in for the physical robot, plus replay and rollout."""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Callable

import numpy as np

from ..core import POSITION_IDX, Dataset, EnvAction, EnvState, Tag, ValidationError
from .dynamics import SimGeometry, SimParams, step_batch


@dataclass(frozen=True)
class RealProxyConfig:
    true_params: SimParams = field(default_factory=lambda: SimParams(mu_table=0.6))
    obs_noise_sigma: float = 1e-3
    seed: int = 0

    def __post_init__(self):
        if not self.obs_noise_sigma >= 0:
            raise ValidationError("obs_noise_sigma must be >= 0")


def real_step_batch(cfg: RealProxyConfig, states, actions, rng: np.random.Generator,
                    geom: SimGeometry | None = None) -> np.ndarray:
    """Proxy dynamics: the true-parameter step plus Gaussian noise on positions.

    Noise is drawn only when ``obs_noise_sigma > 0``, so a noiseless proxy
    leaves the generator untouched.
    """
    geom = geom or SimGeometry()
    out = step_batch(cfg.true_params, states, actions, geom)
    if cfg.obs_noise_sigma > 0:
        idx = list(POSITION_IDX)
        out[:, idx] += rng.normal(0.0, cfg.obs_noise_sigma, size=(len(out), len(idx)))
        lim = geom.workspace.bound
        out[:, idx] = np.clip(out[:, idx], -lim, lim)
    return out


def real_step(cfg: RealProxyConfig, s: EnvState, a: EnvAction, rng: np.random.Generator,
              geom: SimGeometry | None = None) -> EnvState:
    out = real_step_batch(cfg, s.to_array()[None], a.to_array()[None], rng, geom)
    return EnvState.from_array(out[0])


def replay(params, real_ds: Dataset, geom: SimGeometry | None = None) -> Dataset:
    """Teacher-forced replay: each real (state, action) pushed one step through the sim."""
    if len(real_ds) == 0:
        raise ValidationError("cannot replay an empty dataset")
    nxt = step_batch(params, real_ds.states, real_ds.actions, geom)
    return real_ds.with_next_states(nxt, tag=Tag.SIM)


def rollout(params, policy: Callable, s0: EnvState, horizon: int, rng: np.random.Generator,
            geom: SimGeometry | None = None, iteration: int = 0) -> Dataset:
    """Roll ``policy(state_array, rng) -> action_array`` forward in the simulator."""
    if horizon < 1:
        raise ValidationError("horizon must be >= 1")
    geom = geom or SimGeometry()
    s = s0.to_array()
    S, A, S1 = [], [], []
    for _ in range(horizon):
        a = np.clip(np.asarray(policy(s, rng), dtype=float), -geom.workspace.a_max, geom.workspace.a_max)
        s1 = step_batch(params, s[None], a[None], geom)[0]
        S.append(s)
        A.append(a)
        S1.append(s1)
        s = s1
    return Dataset(np.array(S), np.array(A), np.array(S1), Tag.SIM, iteration)
