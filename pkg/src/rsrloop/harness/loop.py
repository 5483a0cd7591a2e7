"""The outer real-sim-real loop, real-data collection and baseline samplers."""

from __future__ import annotations

import dataclasses
import enum
import itertools
import math
import time
from dataclasses import dataclass, field

import numpy as np
import torch

from ..core import Dataset, Tag, ValidationError
from ..diffsim.dynamics import PARAM_NAMES, SimGeometry, SimParams
from ..diffsim.proxy import RealProxyConfig, real_step_batch, replay
from ..infogap import GapContext, gap_coefficient, per_axis_kl
from ..policy.env import PushEnv, TaskConfig
from ..policy.nets import PolicyNet, ValueNet, policy_forward, sample_action
from ..policy.ppo import evaluate_policy, train_policy
from ..tuner import TuneReport, tune
from .config import RsrConfig


class ComponentError(RuntimeError):
    """A loop component failed; ``iteration`` says where."""

    def __init__(self, iteration: int, stage: str, cause: Exception):
        super().__init__(f"iteration {iteration}, {stage}: {type(cause).__name__}: {cause}")
        self.iteration = iteration
        self.stage = stage
        self.cause = cause


class Strategy(str, enum.Enum):
    RANDOM = "random"
    GRID = "grid"
    TRAJECTORY = "trajectory"


def set_deterministic(flag: bool = True) -> None:
    if flag:
        torch.set_num_threads(1)
        torch.use_deterministic_algorithms(True)


def init_policy(task: TaskConfig, rng: np.random.Generator, init_std: float = 0.5):
    """Randomly initialized policy/value pair (pi_0), seeded from ``rng``."""
    torch.manual_seed(int(rng.integers(2**62)))
    return PolicyNet(task.obs_dim, init_std=init_std), ValueNet(task.obs_dim)


def collect_real(policy: PolicyNet, proxy: RealProxyConfig, M: int, rng: np.random.Generator,
                 task: TaskConfig | None = None, iteration: int = 0, geom: SimGeometry | None = None,
                 deterministic: bool = False) -> Dataset:
    """Roll ``policy`` in the proxy for ``M`` transitions, one episode at a time.

    Exploration comes from the policy's own Gaussian noise unless
    ``deterministic`` is set. Episode ids mark reset boundaries.
    """
    if M < 1:
        raise ValidationError("M must be >= 1")
    task = task or TaskConfig()
    env = PushEnv(task, 1, rng, proxy=proxy, geom=geom)
    S, A, S1, E = [], [], [], []
    ep = 0
    obs = env.obs()
    for _ in range(M):
        dist = policy_forward(policy, obs)
        raw = dist.mean if deterministic else sample_action(dist, rng).raw
        out = env.step(raw)
        S.append(out["state"][0])
        A.append(out["action"][0])
        S1.append(out["next_state"][0])
        E.append(ep)
        if out["done"][0]:
            ep += 1
        obs = out["next_obs"]
    return Dataset(np.array(S), np.array(A), np.array(S1), Tag.REAL, iteration, np.array(E))


def grid_lattice(n: int, geom: SimGeometry | None = None) -> np.ndarray:
    """Row-major ``n**7`` lattice over (state, action); yaw excludes its duplicate endpoint."""
    geom = geom or SimGeometry()
    b, am = geom.workspace.bound, geom.workspace.a_max
    pos = np.linspace(-b, b, n)
    yaw = np.linspace(-np.pi, np.pi, n, endpoint=False) if n > 1 else np.zeros(1)
    act = np.linspace(-am, am, n)
    return np.array(list(itertools.product(pos, pos, yaw, pos, pos, act, act)))


def grid_points_per_axis(M: int) -> int:
    n = max(1, math.ceil(M ** (1 / 7)))
    while n**7 < M:
        n += 1
    return n


def baseline_sample(strategy, proxy: RealProxyConfig, M: int, rng: np.random.Generator,
                    policy: PolicyNet | None = None, task: TaskConfig | None = None,
                    geom: SimGeometry | None = None, iteration: int = 0, grid_n: int | None = None) -> Dataset:
    """Reference collection schemes: uniform random, lattice, or on-policy trajectories."""
    strategy = Strategy(strategy)
    if M < 1:
        raise ValidationError("M must be >= 1")
    task = task or TaskConfig()
    geom = task.geometry(geom)
    if strategy is Strategy.TRAJECTORY:
        if policy is None:
            raise ValidationError("the trajectory strategy needs a policy")
        return collect_real(policy, proxy, M, rng, task, iteration, geom)
    if strategy is Strategy.RANDOM:
        b, am = geom.workspace.bound, geom.workspace.a_max
        pos = rng.uniform(-b, b, size=(M, 4))
        yaw = rng.uniform(-np.pi, np.pi, size=M)
        states = np.column_stack([pos[:, 0:2], yaw, pos[:, 2:4]])
        actions = rng.uniform(-am, am, size=(M, 2))
    else:
        lat = grid_lattice(grid_n or grid_points_per_axis(M), geom)
        if len(lat) < M:
            raise ValidationError(f"lattice has {len(lat)} points, fewer than M={M}")
        lat = lat[:M]
        states, actions = lat[:, :5], lat[:, 5:]
    nxt = real_step_batch(proxy, states, actions, rng, geom)
    return Dataset(states, actions, nxt, Tag.REAL, iteration, np.arange(M))


@dataclass
class IterationReport:
    iteration: int
    kl_before: dict
    kl_after: dict
    gap_coeff: float
    theta: SimParams
    tune_iterations: int
    tune_converged: bool
    tune_stop_reason: str
    tune_final_loss: float
    train_final_return: float
    train_success_rate: float
    intrinsic_share: float
    eval_success_rate: float
    eval_final_distance: float
    eval_yaw_error: float
    wall_clock: float = 0.0

    def __post_init__(self):
        for d in (self.kl_before, self.kl_after):
            if any(not v >= 0 for v in d.values()):
                raise ValidationError("KL values must be >= 0")

    def metrics_row(self) -> dict:
        """Everything except wall-clock, which would break run-to-run equality."""
        row = {"iteration": self.iteration, "gap_coeff": self.gap_coeff}
        row.update({f"kl_before_{k}": v for k, v in self.kl_before.items()})
        row.update({f"kl_after_{k}": v for k, v in self.kl_after.items()})
        row.update({f"theta_{n}": getattr(self.theta, n) for n in PARAM_NAMES})
        row.update(tune_iterations=self.tune_iterations, tune_converged=self.tune_converged,
                   tune_stop_reason=self.tune_stop_reason, tune_final_loss=self.tune_final_loss,
                   train_final_return=self.train_final_return, train_success_rate=self.train_success_rate,
                   intrinsic_share=self.intrinsic_share, eval_success_rate=self.eval_success_rate,
                   eval_final_distance=self.eval_final_distance, eval_yaw_error=self.eval_yaw_error)
        return row


@dataclass
class RsrState:
    """Loop state after iteration ``k``; histories hold one entry per finished iteration."""

    iteration: int = 0
    theta: SimParams = field(default_factory=SimParams)
    policy: PolicyNet | None = None
    value: ValueNet | None = None
    d_real: Dataset | None = None
    d_sim_prev: Dataset | None = None
    d_sim: Dataset | None = None
    gap_history: list = field(default_factory=list)
    kl_history: list = field(default_factory=list)
    theta_history: list = field(default_factory=list)
    datasets: list = field(default_factory=list)  # (d_real_k, d_sim_prev_k, d_sim_k) per k
    policies: list = field(default_factory=list)
    reports: list = field(default_factory=list)

    def check(self):
        n = self.iteration
        if not (len(self.gap_history) == len(self.kl_history) == len(self.theta_history) == n):
            raise ValidationError("loop histories are out of step with the iteration counter")


def kl_report(state: RsrState) -> list:
    """One row per iteration: index plus per-axis KL(real || untuned sim)."""
    if not state.kl_history:
        raise ValidationError("no iterations recorded")
    return [{"iteration": k + 1, **{f"kl_{a}": v for a, v in kl.items()}}
            for k, kl in enumerate(state.kl_history)]


def _streams(cfg: RsrConfig):
    ss = np.random.SeedSequence([cfg.seed, cfg.proxy.seed])
    init, collect, train, evaluate = ss.spawn(4)
    return init, collect.spawn(cfg.iterations + 1), train.spawn(cfg.iterations), evaluate.spawn(cfg.iterations)


def _stage(k: int, name: str, fn, *a, **kw):
    try:
        return fn(*a, **kw)
    except Exception as exc:  # attach the iteration index and re-raise
        raise ComponentError(k, name, exc) from exc


def rsr_run(cfg: RsrConfig, callback=None, state: RsrState | None = None) -> list:
    """Run the loop; returns the list of :class:`IterationReport`.

    ``callback(state, report, train_log, tune_report)`` runs after every
    iteration (the writer hooks in here). Pass an empty ``state`` to inspect
    the datasets and policies afterwards.
    """
    set_deterministic(cfg.deterministic)
    state = state if state is not None else RsrState()
    task, geom, coords = cfg.task, cfg.geometry, cfg.coordinates
    s_init, s_collect, s_train, s_eval = _streams(cfg)
    rng0 = np.random.default_rng(s_init)
    policy, value = init_policy(task, rng0, cfg.ppo.init_std)
    theta = cfg.theta0
    state.theta = theta
    d_real = _stage(1, "collect", collect_real, policy, cfg.proxy, cfg.transitions,
                    np.random.default_rng(s_collect[0]), task, 1, geom)
    for k in range(1, cfg.iterations + 1):
        t0 = time.perf_counter()
        # D_sim^{k-1}: the inherited parameters on this iteration's real data
        d_sim_prev = dataclasses.replace(_stage(k, "replay", replay, theta, d_real, geom), iteration=k - 1)
        kl_before = _stage(k, "kl", per_axis_kl, d_real, d_sim_prev, coords)
        gap = float(np.mean(list(kl_before.values())))
        rep: TuneReport = _stage(k, "tune", tune, theta, d_real, cfg.tuner, geom)
        theta = rep.final_params
        d_sim = _stage(k, "replay", replay, theta, d_real, geom)
        for d in (d_sim_prev, d_sim):
            assert np.array_equal(d.states, d_real.states) and np.array_equal(d.actions, d_real.actions)
        kl_after = _stage(k, "kl", per_axis_kl, d_real, d_sim, coords)
        ctx = _stage(k, "gap", GapContext.build, gap, d_sim, cfg.infogap.lambda_sr, coords, cfg.infogap.order)
        policy, value, log = _stage(k, "train", train_policy, theta, ctx, cfg.ppo,
                                    np.random.default_rng(s_train[k - 1]), task, (policy, value), geom)
        ev = _stage(k, "evaluate", evaluate_policy, policy, task, cfg.eval_episodes,
                    np.random.default_rng(s_eval[k - 1]), proxy=cfg.proxy, deterministic=True, geom=geom)
        tail = log[-max(1, len(log) // 10):] if log else []

        def _tail_mean(key):
            vals = [r[key] for r in tail if np.isfinite(r[key])]
            return float(np.mean(vals)) if vals else float("nan")

        report = IterationReport(
            iteration=k, kl_before=kl_before, kl_after=kl_after, gap_coeff=gap, theta=theta,
            tune_iterations=rep.iterations_used, tune_converged=rep.converged,
            tune_stop_reason=rep.stop_reason, tune_final_loss=float(rep.loss_history[-1]),
            train_final_return=_tail_mean("mean_episode_return"),
            train_success_rate=_tail_mean("success_rate"),
            intrinsic_share=float(max((r["intrinsic_share"] for r in log), default=0.0)),
            eval_success_rate=ev["success_rate"], eval_final_distance=ev["mean_final_distance"],
            eval_yaw_error=ev["mean_abs_yaw_error"],
        )
        state.iteration = k
        state.theta, state.policy, state.value = theta, policy, value
        state.d_real, state.d_sim_prev, state.d_sim = d_real, d_sim_prev, d_sim
        state.gap_history.append(gap)
        state.kl_history.append(kl_before)
        state.theta_history.append(theta)
        state.datasets.append((d_real, d_sim_prev, d_sim))
        state.policies.append((policy, value))
        state.check()
        done = k == cfg.iterations or (cfg.early_exit and gap <= cfg.gap_tol)
        if not done:
            d_real = _stage(k, "collect", collect_real, policy, cfg.proxy, cfg.transitions,
                            np.random.default_rng(s_collect[k]), task, k + 1, geom)
        report.wall_clock = time.perf_counter() - t0
        state.reports.append(report)
        if callback is not None:
            callback(state, report, log, rep)
        if done:
            break
    return state.reports


def recompute_gap_history(datasets, coordinates) -> list:
    """Gap coefficients recomputed from stored ``(real, sim_prev, sim)`` triples."""
    return [gap_coefficient(r, sp, coordinates) for r, sp, _ in datasets]
