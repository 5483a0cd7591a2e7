"""Run-directory layout and the plot-ready report tables.

::

    run_dir/
      config.snapshot
      datasets/real_k.jsonl, sim_prev_k.jsonl, sim_k.jsonl
      checkpoints/policy_k.pt
      metrics.csv      one row per iteration
      report.csv       per-axis KL(real || untuned sim) per iteration
      training_k.csv   per-update PPO statistics
      tune_k.csv       tuner loss and parameter history
      timing.csv       wall-clock per iteration (kept apart so metrics stay reproducible)
"""

from __future__ import annotations

import csv
from pathlib import Path

import numpy as np

from ..core import dataset_load, dataset_save
from ..diffsim.dynamics import PARAM_NAMES
from ..infogap import per_axis_kl
from ..policy.nets import load_checkpoint, save_checkpoint
from ..policy.ppo import evaluate_policy
from .config import RsrConfig, dump_config, load_config


def _fmt(v):
    if isinstance(v, (bool, np.bool_)):
        return int(v)
    if isinstance(v, (float, np.floating)):
        return repr(float(v))
    return v


def write_csv(path, rows: list, fieldnames=None) -> None:
    rows = list(rows)
    fieldnames = fieldnames or (list(rows[0]) if rows else [])
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with path.open("w", newline="") as fh:
        w = csv.DictWriter(fh, fieldnames=fieldnames, lineterminator="\n")
        w.writeheader()
        for r in rows:
            w.writerow({k: _fmt(r.get(k, "")) for k in fieldnames})


def read_csv(path) -> list:
    with Path(path).open(newline="") as fh:
        return list(csv.DictReader(fh))


class RunWriter:
    """Callback for :func:`rsr_run` that persists every iteration as it finishes."""

    def __init__(self, run_dir, cfg: RsrConfig):
        self.dir = Path(run_dir)
        self.cfg = cfg
        for sub in ("datasets", "checkpoints"):
            (self.dir / sub).mkdir(parents=True, exist_ok=True)
        (self.dir / "config.snapshot").write_text(dump_config(cfg))
        self.metrics, self.report, self.timing = [], [], []

    def __call__(self, state, report, train_log, tune_report):
        k = report.iteration
        real, sim_prev, sim = state.datasets[-1]
        dataset_save(real, self.dir / "datasets" / f"real_{k}.jsonl")
        dataset_save(sim_prev, self.dir / "datasets" / f"sim_prev_{k}.jsonl")
        dataset_save(sim, self.dir / "datasets" / f"sim_{k}.jsonl")
        save_checkpoint(self.dir / "checkpoints" / f"policy_{k}.pt", state.policy, state.value, self.cfg.task,
                        {"iteration": k, "theta": {n: getattr(state.theta, n) for n in PARAM_NAMES}})
        self.metrics.append(report.metrics_row())
        self.report.append({"iteration": k, **{f"kl_{a}": v for a, v in report.kl_before.items()}})
        self.timing.append({"iteration": k, "wall_clock_s": report.wall_clock})
        write_csv(self.dir / "metrics.csv", self.metrics)
        write_csv(self.dir / "report.csv", self.report)
        write_csv(self.dir / "timing.csv", self.timing)
        if train_log:
            write_csv(self.dir / f"training_{k}.csv", train_log)
        tune_rows = [{"step": i, "loss": l, **{n: float(getattr(p, n)) for n in PARAM_NAMES}}
                     for i, (l, p) in enumerate(zip(tune_report.loss_history, tune_report.param_history))]
        write_csv(self.dir / f"tune_{k}.csv", tune_rows)


def _iterations(run_dir: Path) -> list:
    ks = sorted(int(p.stem.split("_")[1]) for p in (run_dir / "checkpoints").glob("policy_*.pt"))
    if not ks:
        raise FileNotFoundError(f"no checkpoints under {run_dir}")
    return ks


def build_report(run_dir, n_episodes: int = 10, seed: int = 0) -> dict:
    """Recompute the KL table from stored datasets and roll out traces for plotting.

    Writes ``kl_table.csv``, ``traces.csv`` (block/effector paths and
    targets), ``axis_errors.csv`` (mean |x| and |y| error per step) and
    ``yaw_errors.csv`` (mean |yaw| error per step). Every iteration's
    policy is evaluated in the proxy on the same episode starts.
    """
    run_dir = Path(run_dir)
    cfg = load_config(run_dir / "config.snapshot")
    ks = _iterations(run_dir)
    kl_rows, traces, axis_rows, yaw_rows = [], [], [], []
    for k in ks:
        real = dataset_load(run_dir / "datasets" / f"real_{k}.jsonl")
        sim_prev = dataset_load(run_dir / "datasets" / f"sim_prev_{k}.jsonl")
        sim = dataset_load(run_dir / "datasets" / f"sim_{k}.jsonl")
        before = per_axis_kl(real, sim_prev, cfg.coordinates)
        after = per_axis_kl(real, sim, cfg.coordinates)
        kl_rows.append({"iteration": k, **{f"kl_{a}": v for a, v in before.items()},
                        **{f"kl_tuned_{a}": v for a, v in after.items()}})
        policy, _, _, _ = load_checkpoint(run_dir / "checkpoints" / f"policy_{k}.pt")
        ev = evaluate_policy(policy, cfg.task, n_episodes, np.random.default_rng(seed), proxy=cfg.proxy,
                             deterministic=True, geom=cfg.geometry, record=True)
        tr, tgt = ev["trace"], ev["targets"]
        for e in range(n_episodes):
            for t in range(tr.shape[1]):
                s = tr[e, t]
                if np.isnan(s[0]):
                    break
                traces.append({"iteration": k, "episode": e, "t": t, "block_x": s[0], "block_y": s[1],
                               "block_yaw": s[2], "effector_x": s[3], "effector_y": s[4],
                               "target_x": tgt[e, 0], "target_y": tgt[e, 1], "target_yaw": tgt[e, 2]})
        # finished episodes hold their last state so the curves stay defined to the horizon
        filled = tr.copy()
        for e in range(n_episodes):
            ok = ~np.isnan(filled[e, :, 0])
            last = np.flatnonzero(ok)[-1]
            filled[e, last + 1:] = filled[e, last]
        err = filled[:, :, 0:3] - tgt[:, None, :]
        yaw = np.abs(np.angle(np.exp(1j * err[:, :, 2])))
        for t in range(filled.shape[1]):
            axis_rows.append({"iteration": k, "t": t, "abs_err_x": float(np.abs(err[:, t, 0]).mean()),
                              "abs_err_y": float(np.abs(err[:, t, 1]).mean())})
            yaw_rows.append({"iteration": k, "t": t, "abs_err_yaw": float(yaw[:, t].mean())})
    write_csv(run_dir / "kl_table.csv", kl_rows)
    write_csv(run_dir / "traces.csv", traces)
    write_csv(run_dir / "axis_errors.csv", axis_rows)
    write_csv(run_dir / "yaw_errors.csv", yaw_rows)
    return {"kl_table": kl_rows, "traces": traces, "axis_errors": axis_rows, "yaw_errors": yaw_rows}
