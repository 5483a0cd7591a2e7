"""Clipped-surrogate policy optimization on the vectorized pushing task."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
import torch
from sklearn.base import BaseEstimator
from sklearn.utils.validation import check_is_fitted

from ..core import ValidationError
from ..diffsim.dynamics import SimGeometry, SimParams
from ..diffsim.proxy import RealProxyConfig
from ..infogap import GapContext, intrinsic_rewards
from .env import PushEnv, TaskConfig
from .nets import PolicyNet, ValueNet, gaussian_log_prob, policy_forward, sample_action


@dataclass(frozen=True)
class PpoConfig:
    gamma: float = 0.99
    gae_lambda: float = 0.95
    clip_eps: float = 0.2
    epochs: int = 10
    minibatch_size: int = 256
    actor_lr: float = 1e-3
    critic_lr: float = 1e-3
    total_steps: int = 50_000
    entropy_coef: float = 0.0
    n_envs: int = 16
    rollout_len: int = 128
    max_grad_norm: float = 0.5
    # rewards are multiplied by this before advantage and value targets
    reward_scale: float = 0.1
    init_std: float = 0.5
    deterministic: bool = True

    def __post_init__(self):
        if not (0 <= self.gamma <= 1 and 0 <= self.gae_lambda <= 1):
            raise ValidationError("gamma and gae_lambda must lie in [0, 1]")
        if not self.clip_eps > 0:
            raise ValidationError("clip_eps must be positive")
        if min(self.epochs, self.minibatch_size, self.n_envs, self.rollout_len) < 1:
            raise ValidationError("epochs, minibatch_size, n_envs and rollout_len must be >= 1")
        if self.total_steps < 0:
            raise ValidationError("total_steps must be >= 0")


def gae_advantages(rewards, values, last_value, gamma: float, lam: float, dones=None,
                   next_values=None, terminals=None):
    """Generalized advantage estimates and returns.

    Arrays are time-major, ``(T,)`` or ``(T, N)``. ``next_values[t]`` is
    V(s_{t+1}) and defaults to ``values[t + 1]`` with ``last_value`` at the
    end. ``terminals`` zero the bootstrap; ``dones`` (a superset that also
    covers time-limit cuts) stop the recursion. With ``lam = 0`` the
    advantage is the one-step TD error ``r + gamma V(s') - V(s)``.
    """
    r = np.asarray(rewards, dtype=float)
    v = np.asarray(values, dtype=float)
    if r.shape != v.shape or r.shape[0] == 0:
        raise ValidationError(f"rewards {r.shape} and values {v.shape} must be aligned and nonempty")
    last = np.broadcast_to(np.asarray(last_value, dtype=float), r.shape[1:])
    nv = np.concatenate([v[1:], last[None]], axis=0) if next_values is None else np.asarray(next_values, dtype=float)
    term = np.zeros(r.shape) if terminals is None else np.asarray(terminals, dtype=float)
    done = term if dones is None else np.asarray(dones, dtype=float)
    if nv.shape != r.shape or term.shape != r.shape or done.shape != r.shape:
        raise ValidationError("next_values / terminals / dones must match rewards")
    delta = r + gamma * nv * (1.0 - term) - v
    adv = np.zeros_like(r)
    acc = np.zeros(r.shape[1:])
    for t in range(len(r) - 1, -1, -1):
        acc = delta[t] + gamma * lam * (1.0 - done[t]) * acc
        adv[t] = acc
    return adv, adv + v


def clipped_surrogate(ratio, adv, eps: float):
    """Per-sample objective ``min(ratio * A, clip(ratio, 1-eps, 1+eps) * A)``."""
    if isinstance(ratio, torch.Tensor):
        return torch.min(ratio * adv, torch.clamp(ratio, 1 - eps, 1 + eps) * adv)
    ratio = np.asarray(ratio, dtype=float)
    return np.minimum(ratio * adv, np.clip(ratio, 1 - eps, 1 + eps) * adv)


def normalize_advantages(adv: torch.Tensor) -> torch.Tensor:
    if adv.numel() < 2:
        return adv - adv.mean()
    return (adv - adv.mean()) / (adv.std() + 1e-8)


def make_optimizers(policy: PolicyNet, value: ValueNet, cfg: PpoConfig):
    return (torch.optim.Adam(policy.parameters(), lr=cfg.actor_lr),
            torch.optim.Adam(value.parameters(), lr=cfg.critic_lr))


def ppo_update(policy: PolicyNet, value: ValueNet, batch: dict, cfg: PpoConfig, optimizers=None,
               generator: torch.Generator | None = None) -> dict:
    """Several epochs of minibatch Adam steps on the clipped surrogate and value MSE.

    ``batch`` holds ``obs``, ``raw_actions``, ``old_log_probs``,
    ``advantages`` and ``returns``. Advantages are normalized once over the
    whole batch.
    """
    n = len(batch.get("obs", ()))
    if n == 0:
        raise ValidationError("empty PPO batch")
    opt_pi, opt_v = optimizers or make_optimizers(policy, value, cfg)
    t = {k: torch.as_tensor(np.asarray(batch[k]), dtype=torch.float64)
         for k in ("obs", "raw_actions", "old_log_probs", "advantages", "returns")}
    adv = normalize_advantages(t["advantages"])
    stats = {"policy_loss": [], "value_loss": [], "clip_frac": [], "approx_kl": []}
    for _ in range(cfg.epochs):
        perm = torch.randperm(n, generator=generator)
        for lo in range(0, n, cfg.minibatch_size):
            idx = perm[lo:lo + cfg.minibatch_size]
            mean, log_std = policy(t["obs"][idx])
            logp = gaussian_log_prob(t["raw_actions"][idx], mean, log_std)
            ratio = torch.exp(logp - t["old_log_probs"][idx])
            surr = clipped_surrogate(ratio, adv[idx], cfg.clip_eps)
            loss_pi = -surr.mean()
            if cfg.entropy_coef:
                loss_pi = loss_pi - cfg.entropy_coef * log_std.sum(-1).mean()
            opt_pi.zero_grad()
            loss_pi.backward()
            torch.nn.utils.clip_grad_norm_(policy.parameters(), cfg.max_grad_norm)
            opt_pi.step()

            loss_v = ((value(t["obs"][idx]) - t["returns"][idx]) ** 2).mean()
            opt_v.zero_grad()
            loss_v.backward()
            torch.nn.utils.clip_grad_norm_(value.parameters(), cfg.max_grad_norm)
            opt_v.step()

            with torch.no_grad():
                stats["policy_loss"].append(float(loss_pi))
                stats["value_loss"].append(float(loss_v))
                stats["clip_frac"].append(float(((ratio - 1).abs() > cfg.clip_eps).double().mean()))
                stats["approx_kl"].append(float((t["old_log_probs"][idx] - logp).mean()))
    return {k: float(np.mean(v)) for k, v in stats.items()}


def _values(value: ValueNet, obs: np.ndarray) -> np.ndarray:
    with torch.no_grad():
        return value(torch.as_tensor(obs, dtype=torch.float64)).numpy()


def _seed_torch(rng: np.random.Generator) -> torch.Generator:
    gen = torch.Generator()
    gen.manual_seed(int(rng.integers(2**62)))
    return gen


def train_policy(sim_params: SimParams, gap_ctx: GapContext | None, cfg: PpoConfig | None = None,
                 rng: np.random.Generator | None = None, task: TaskConfig | None = None,
                 init: tuple | None = None, geom: SimGeometry | None = None):
    """Train on the simulator at ``sim_params`` with task plus intrinsic rewards.

    ``init`` optionally warm-starts from an existing ``(policy, value)``
    pair, which is copied rather than modified. Returns ``(policy, value,
    log)`` where ``log`` holds one dict per update.
    """
    cfg = cfg or PpoConfig()
    task = task or TaskConfig()
    rng = rng if rng is not None else np.random.default_rng(0)
    if cfg.deterministic:
        torch.set_num_threads(1)
    gen = _seed_torch(rng)
    torch.manual_seed(int(rng.integers(2**62)))
    if init is None:
        policy = PolicyNet(task.obs_dim, init_std=cfg.init_std)
        value = ValueNet(task.obs_dim)
    else:
        policy = PolicyNet(task.obs_dim, init[0].act_dim, init[0].hidden)
        value = ValueNet(task.obs_dim, init[1].hidden)
        policy.load_state_dict(init[0].state_dict())
        value.load_state_dict(init[1].state_dict())
    opts = make_optimizers(policy, value, cfg)
    env = PushEnv(task, cfg.n_envs, rng, params=sim_params, geom=geom)
    obs = env.obs()
    ep_ret = np.zeros(cfg.n_envs)
    log = []
    steps = 0
    T, N = cfg.rollout_len, cfg.n_envs
    while steps < cfg.total_steps:
        buf = {k: [] for k in ("obs", "raw", "logp", "rew", "val", "next_val", "term", "done", "task", "intr")}
        finished, successes = [], []
        for _ in range(T):
            dist = policy_forward(policy, obs)
            smp = sample_action(dist, rng)
            out = env.step(smp.raw)
            r_task = out["reward"]
            if gap_ctx is None:
                r_intr = np.zeros(N)
            else:
                r_intr = intrinsic_rewards(gap_ctx, out["next_state"])
            r_total = r_task + r_intr
            nxt = out["next_obs"].copy()
            cut = out["done"]
            # time-limit cuts bootstrap from the pre-reset observation
            nxt[cut] = out["terminal_obs"][cut]
            buf["obs"].append(obs)
            buf["raw"].append(smp.raw)
            buf["logp"].append(smp.log_prob)
            buf["rew"].append(r_total)
            buf["task"].append(r_task)
            buf["intr"].append(r_intr)
            buf["val"].append(_values(value, obs))
            buf["next_val"].append(_values(value, nxt))
            buf["term"].append(out["success"])
            buf["done"].append(cut)
            ep_ret += r_total
            for i in np.flatnonzero(cut):
                finished.append(ep_ret[i])
                successes.append(bool(out["success"][i]))
                ep_ret[i] = 0.0
            obs = out["next_obs"]
        steps += T * N
        arr = {k: np.asarray(v) for k, v in buf.items()}
        adv, ret = gae_advantages(arr["rew"] * cfg.reward_scale, arr["val"], None, cfg.gamma, cfg.gae_lambda,
                                  dones=arr["done"], next_values=arr["next_val"], terminals=arr["term"])
        batch = {
            "obs": arr["obs"].reshape(T * N, -1),
            "raw_actions": arr["raw"].reshape(T * N, -1),
            "old_log_probs": arr["logp"].reshape(-1),
            "advantages": adv.reshape(-1),
            "returns": ret.reshape(-1),
        }
        stats = ppo_update(policy, value, batch, cfg, opts, gen)
        task_sum = float(np.abs(arr["task"]).sum())
        intr_sum = float(np.abs(arr["intr"]).sum())
        stats.update(
            steps=steps,
            mean_episode_return=float(np.mean(finished)) if finished else float("nan"),
            success_rate=float(np.mean(successes)) if successes else float("nan"),
            mean_task_reward=float(arr["task"].mean()),
            mean_intrinsic_reward=float(arr["intr"].mean()),
            intrinsic_share=intr_sum / (task_sum + intr_sum) if task_sum + intr_sum > 0 else 0.0,
            reward_residual=float(np.max(np.abs(arr["rew"] - (arr["task"] + arr["intr"])))),
            policy_std=float(policy.log_std.detach().clamp(-5, 1).exp().mean()),
        )
        log.append(stats)
    return policy, value, log


def evaluate_policy(policy: PolicyNet, task: TaskConfig | None = None, n_episodes: int = 100,
                    rng: np.random.Generator | None = None, params: SimParams | None = None,
                    proxy: RealProxyConfig | None = None, deterministic: bool = True,
                    geom: SimGeometry | None = None, record: bool = False) -> dict:
    """Run ``n_episodes`` episodes in parallel, one per environment slot.

    Success means the block came within the success radius (and yaw
    tolerance for the T-block) before the horizon ran out.
    """
    task = task or TaskConfig()
    rng = rng if rng is not None else np.random.default_rng(0)
    env = PushEnv(task, n_episodes, rng, params=params, proxy=proxy, geom=geom)
    active = np.ones(n_episodes, dtype=bool)
    success = np.zeros(n_episodes, dtype=bool)
    final = np.zeros((n_episodes, 5))
    targets = env.targets.copy()
    trace = [env.states.copy()] if record else None
    obs = env.obs()
    for _ in range(task.horizon):
        dist = policy_forward(policy, obs)
        raw = dist.mean if deterministic else sample_action(dist, rng).raw
        out = env.step(raw)
        if record:
            trace.append(np.where(active[:, None], out["next_state"], np.nan))
        ended = active & out["done"]
        final[ended] = out["next_state"][ended]
        success[ended] = out["success"][ended]
        active &= ~out["done"]
        obs = out["next_obs"]
        if not active.any():
            break
    dist_err = np.linalg.norm(final[:, 0:2] - targets[:, 0:2], axis=1)
    yaw_err = np.abs(np.angle(np.exp(1j * (final[:, 2] - targets[:, 2]))))
    res = {
        "success_rate": float(success.mean()),
        "mean_final_distance": float(dist_err.mean()),
        "mean_abs_yaw_error": float(yaw_err.mean()),
        "success": success,
        "final_states": final,
        "targets": targets,
    }
    if record:
        res["trace"] = np.stack(trace, axis=1)
    return res


class PPOAgent(BaseEstimator):
    """Estimator wrapper around :func:`train_policy`.

    ``fit(sim_params, gap_ctx=None)`` trains; ``predict(obs)`` returns the
    mean action in normalized units.
    """

    def __init__(self, shape="square", total_steps=50_000, seed=0, actor_lr=1e-3, critic_lr=1e-3):
        self.shape = shape
        self.total_steps = total_steps
        self.seed = seed
        self.actor_lr = actor_lr
        self.critic_lr = critic_lr

    def fit(self, X: SimParams, gap_ctx: GapContext | None = None):
        cfg = PpoConfig(total_steps=self.total_steps, actor_lr=self.actor_lr, critic_lr=self.critic_lr)
        self.task_ = TaskConfig(shape=self.shape)
        self.policy_, self.value_, self.log_ = train_policy(X, gap_ctx, cfg, np.random.default_rng(self.seed),
                                                             self.task_)
        self.n_features_in_ = self.task_.obs_dim
        return self

    def predict(self, X) -> np.ndarray:
        check_is_fitted(self, "policy_")
        return policy_forward(self.policy_, X).mean

    def score(self, X: SimParams | RealProxyConfig, y=None, n_episodes: int = 100) -> float:
        """Success rate over ``n_episodes`` in the simulator or proxy ``X``."""
        check_is_fitted(self, "policy_")
        kw = {"proxy": X} if isinstance(X, RealProxyConfig) else {"params": X}
        return evaluate_policy(self.policy_, self.task_, n_episodes, np.random.default_rng(self.seed + 1),
                               **kw)["success_rate"]
