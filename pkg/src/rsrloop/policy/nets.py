"""Gaussian policy and value networks, action sampling, checkpoints."""

from __future__ import annotations

import math
from dataclasses import asdict, dataclass
from pathlib import Path

import numpy as np
import torch
from torch import nn

from ..core import EnvAction, ValidationError

LOG_STD_MIN, LOG_STD_MAX = -5.0, 1.0
CHECKPOINT_VERSION = 1
_HALF_LOG_2PI = 0.5 * math.log(2.0 * math.pi)


def _mlp(n_in: int, n_out: int, hidden: int) -> nn.Sequential:
    return nn.Sequential(nn.Linear(n_in, hidden), nn.Tanh(), nn.Linear(hidden, hidden), nn.Tanh(),
                         nn.Linear(hidden, n_out))


def _init(seq: nn.Sequential, last_gain: float):
    layers = [m for m in seq if isinstance(m, nn.Linear)]
    for m in layers[:-1]:
        nn.init.orthogonal_(m.weight, gain=math.sqrt(2.0))
        nn.init.zeros_(m.bias)
    if last_gain == 0.0:
        nn.init.zeros_(layers[-1].weight)
    else:
        nn.init.orthogonal_(layers[-1].weight, gain=last_gain)
    nn.init.zeros_(layers[-1].bias)


class PolicyNet(nn.Module):
    """Observation -> 64 tanh -> 64 tanh -> action mean, plus a free log-std vector.

    Actions are in normalized units; the environment scales them by ``a_max``.
    """

    def __init__(self, obs_dim: int, act_dim: int = 2, hidden: int = 64, init_std: float = 0.5,
                 last_gain: float = 0.01):
        super().__init__()
        self.obs_dim, self.act_dim, self.hidden = obs_dim, act_dim, hidden
        self.body = _mlp(obs_dim, act_dim, hidden)
        _init(self.body, last_gain)
        self.log_std = nn.Parameter(torch.full((act_dim,), math.log(init_std), dtype=torch.float64))
        self.double()

    def forward(self, obs: torch.Tensor):
        mean = self.body(obs)
        log_std = self.log_std.clamp(LOG_STD_MIN, LOG_STD_MAX)
        return mean, log_std.expand_as(mean)


class ValueNet(nn.Module):
    def __init__(self, obs_dim: int, hidden: int = 64):
        super().__init__()
        self.obs_dim, self.hidden = obs_dim, hidden
        self.body = _mlp(obs_dim, 1, hidden)
        _init(self.body, 1.0)
        self.double()

    def forward(self, obs: torch.Tensor) -> torch.Tensor:
        return self.body(obs).squeeze(-1)


def gaussian_log_prob(x, mean, log_std):
    """Diagonal Gaussian log-density summed over the last axis (numpy or torch)."""
    z = (x - mean) / (torch.exp(log_std) if isinstance(log_std, torch.Tensor) else np.exp(log_std))
    terms = -0.5 * z * z - (log_std + _HALF_LOG_2PI)
    return terms.sum(-1)


def _check_obs(net: PolicyNet, obs) -> np.ndarray:
    obs = np.asarray(obs, dtype=float)
    if obs.shape[-1] != net.obs_dim:
        raise ValidationError(f"observation length {obs.shape[-1]} != {net.obs_dim}")
    if not np.all(np.isfinite(obs)):
        raise ValidationError("non-finite observation")
    return obs


@dataclass(frozen=True)
class ActionDist:
    mean: np.ndarray
    std: np.ndarray

    def log_prob(self, raw) -> np.ndarray:
        lp = gaussian_log_prob(np.asarray(raw, dtype=float), self.mean, np.log(self.std))
        return lp


@dataclass(frozen=True)
class ActionSample:
    raw: np.ndarray  # pre-clamp normalized sample
    action: np.ndarray  # clamped and scaled to metres
    log_prob: np.ndarray

    def as_env_action(self) -> EnvAction:
        return EnvAction.from_array(np.asarray(self.action).reshape(2))


def policy_forward(net: PolicyNet, obs) -> ActionDist:
    obs = _check_obs(net, obs)
    with torch.no_grad():
        mean, log_std = net(torch.as_tensor(obs, dtype=torch.float64))
    return ActionDist(mean.numpy(), np.exp(log_std.numpy()))


def sample_action(dist: ActionDist, rng: np.random.Generator, a_max: float = 0.02) -> ActionSample:
    raw = dist.mean + dist.std * rng.standard_normal(np.shape(dist.mean))
    return ActionSample(raw, np.clip(raw, -1.0, 1.0) * a_max, dist.log_prob(raw))


def as_callable(net: PolicyNet, target, shape: str = "square", deterministic: bool = False, a_max: float = 0.02):
    """Wrap a policy as ``f(state_array, rng) -> action`` for :func:`rollout`."""
    from .env import observe

    tgt = np.asarray(target, dtype=float)

    def act(state, rng):
        dist = policy_forward(net, observe(state, tgt, shape)[0])
        if deterministic:
            return np.clip(dist.mean, -1.0, 1.0) * a_max
        return sample_action(dist, rng, a_max).action

    return act


def save_checkpoint(path, policy: PolicyNet, value: ValueNet, task=None, meta: dict | None = None) -> None:
    payload = {
        "format": "rsrloop-ppo",
        "version": CHECKPOINT_VERSION,
        "obs_dim": policy.obs_dim,
        "act_dim": policy.act_dim,
        "hidden": policy.hidden,
        "policy": policy.state_dict(),
        "value": value.state_dict(),
        "task": asdict(task) if task is not None else None,
        "meta": meta or {},
    }
    Path(path).parent.mkdir(parents=True, exist_ok=True)
    torch.save(payload, path)


def load_checkpoint(path):
    """Returns ``(policy, value, task_dict, meta)``."""
    payload = torch.load(path, map_location="cpu", weights_only=True)
    if payload.get("format") != "rsrloop-ppo" or payload.get("version") != CHECKPOINT_VERSION:
        raise ValidationError(f"{path} is not a version-{CHECKPOINT_VERSION} policy checkpoint")
    policy = PolicyNet(payload["obs_dim"], payload["act_dim"], payload["hidden"])
    value = ValueNet(payload["obs_dim"], payload["hidden"])
    policy.load_state_dict(payload["policy"])
    value.load_state_dict(payload["value"])
    return policy, value, payload["task"], payload["meta"]
