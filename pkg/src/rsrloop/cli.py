"""``rsr`` command line: the full loop or any single step of it.

Exit codes: 0 success, 2 configuration error, 3 component failure.
"""

from __future__ import annotations

import argparse
import configparser
import dataclasses
import sys
from pathlib import Path

import numpy as np

from .core import DatasetParseError, DatasetSchemaError, dataset_load, dataset_save
from .diffsim.dynamics import PARAM_NAMES
from .diffsim.proxy import replay
from .harness.config import (ConfigError, RsrConfig, dump_params, load_config, load_params, load_proxy,
                             parse_config)
from .harness.loop import Strategy, baseline_sample, rsr_run, set_deterministic
from .harness.output import RunWriter, build_report, write_csv
from .infogap import GapContext, gap_coefficient
from .policy.env import TaskConfig
from .policy.nets import load_checkpoint, save_checkpoint
from .policy.ppo import train_policy
from .tuner import tune

EXIT_OK, EXIT_CONFIG, EXIT_COMPONENT = 0, 2, 3


def _base_config(path) -> RsrConfig:
    return load_config(path) if path else parse_config("")


def cmd_run(args) -> int:
    cfg = _base_config(args.config)
    kw = {}
    if args.seed is not None:
        kw["seed"] = args.seed
    if args.deterministic:
        kw["deterministic"] = True
    if args.iterations is not None:
        kw["iterations"] = args.iterations
    cfg = cfg.replace(output=str(args.out), **kw)
    writer = RunWriter(args.out, cfg)
    reports = rsr_run(cfg, writer)
    for r in reports:
        kls = " ".join(f"{a}={v:.3g}" for a, v in r.kl_before.items())
        print(f"iteration {r.iteration}: KL {kls} gap={r.gap_coeff:.3g} "
              f"mu_table={r.theta.mu_table:.4f} success={r.eval_success_rate:.2f} "
              f"({r.wall_clock:.1f}s)")
    return EXIT_OK


def cmd_tune(args) -> int:
    cfg = _base_config(args.config)
    params0 = load_params(args.params)
    data = dataset_load(args.data)
    rep = tune(params0, data, cfg.tuner, cfg.geometry)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    (out / "params.ini").write_text(dump_params(rep.final_params))
    write_csv(out / "tune.csv", [{"step": i, "loss": l, **{n: getattr(p, n) for n in PARAM_NAMES}}
                                 for i, (l, p) in enumerate(zip(rep.loss_history, rep.param_history))])
    # the pieces `rsr train` needs: tuned replay and the untuned gap
    sim = replay(rep.final_params, data, cfg.geometry)
    dataset_save(sim, out / "sim.jsonl")
    gap = gap_coefficient(data, replay(params0, data, cfg.geometry), cfg.coordinates)
    (out / "gap.ini").write_text(
        f"[gap]\ngap_coeff = {gap!r}\nsim_data = sim.jsonl\nlambda_sr = {cfg.infogap.lambda_sr!r}\n"
        f"order = {cfg.infogap.order!r}\ncoordinates = {','.join(cfg.coordinates)}\n")
    print(f"{rep.stop_reason} after {rep.iterations_used} steps, loss {rep.loss_history[-1]:.4g}; "
          + " ".join(f"{n}={getattr(rep.final_params, n):.5g}" for n in PARAM_NAMES))
    return EXIT_OK


def load_gap(path) -> GapContext:
    parser = configparser.ConfigParser(interpolation=None)
    try:
        parser.read_string(Path(path).read_text())
        sec = parser["gap"]
        gap = float(sec["gap_coeff"])
        sim_path = Path(path).parent / sec["sim_data"]
        coords = tuple(c.strip() for c in sec.get("coordinates", "block_x,block_y").split(","))
        lam = float(sec.get("lambda_sr", "1.0"))
        order = float(sec.get("order", "1.0"))
    except (OSError, KeyError, ValueError, configparser.Error) as exc:
        raise ConfigError(f"bad gap file {path}: {exc}") from None
    return GapContext.build(gap, dataset_load(sim_path), lam, coords, order)


def cmd_train(args) -> int:
    cfg = _base_config(args.config)
    if args.deterministic:
        set_deterministic(True)
    params = load_params(args.params)
    ctx = load_gap(args.gap) if args.gap else None
    ppo = cfg.ppo if args.steps is None else dataclasses.replace(cfg.ppo, total_steps=args.steps)
    init = None
    if args.init:
        pol, val, _, _ = load_checkpoint(args.init)
        init = (pol, val)
    rng = np.random.default_rng(args.seed if args.seed is not None else cfg.seed)
    policy, value, log = train_policy(params, ctx, ppo, rng, cfg.task, init, cfg.geometry)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    save_checkpoint(out / "policy.pt", policy, value, cfg.task,
                    {"theta": {n: getattr(params, n) for n in PARAM_NAMES}})
    write_csv(out / "training.csv", log)
    last = log[-1] if log else {}
    print(f"trained {last.get('steps', 0)} steps; last success rate {last.get('success_rate', float('nan')):.2f}")
    return EXIT_OK


def cmd_collect(args) -> int:
    proxy = load_proxy(args.proxy)
    strategy = Strategy(args.strategy)
    policy, task = None, TaskConfig(shape=args.task)
    if args.policy:
        policy, _, task_d, _ = load_checkpoint(args.policy)
        if task_d:
            task_d = {k: tuple(v) if isinstance(v, list) else v for k, v in task_d.items()}
            task = TaskConfig(**task_d)
    elif strategy is Strategy.TRAJECTORY:
        raise ConfigError("--policy is required for the trajectory strategy")
    rng = np.random.default_rng(args.seed)
    ds = baseline_sample(strategy, proxy, args.M, rng, policy, task, iteration=args.iteration)
    Path(args.out).parent.mkdir(parents=True, exist_ok=True)
    dataset_save(ds, args.out)
    print(f"wrote {len(ds)} transitions ({int(ds.episodes.max()) + 1 if len(ds) else 0} episodes) to {args.out}")
    return EXIT_OK


def cmd_report(args) -> int:
    res = build_report(args.run, n_episodes=args.episodes, seed=args.seed)
    rows = res["kl_table"]
    keys = [k for k in rows[0] if k != "iteration"]
    print("iteration," + ",".join(keys))
    for r in rows:
        print(f"{r['iteration']}," + ",".join(f"{r[k]:.6g}" for k in keys))
    return EXIT_OK


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="rsr", description="Real-sim-real loop for planar pushing.")
    sub = p.add_subparsers(dest="command", required=True)

    r = sub.add_parser("run", help="full loop")
    r.add_argument("--config")
    r.add_argument("--out", required=True)
    r.add_argument("--seed", type=int)
    r.add_argument("--iterations", type=int)
    r.add_argument("--deterministic", action="store_true")
    r.set_defaults(func=cmd_run)

    t = sub.add_parser("tune", help="fit simulator parameters to a real dataset")
    t.add_argument("--params", required=True)
    t.add_argument("--data", required=True)
    t.add_argument("--out", required=True)
    t.add_argument("--config")
    t.set_defaults(func=cmd_tune)

    tr = sub.add_parser("train", help="train a policy in the simulator")
    tr.add_argument("--params", required=True)
    tr.add_argument("--gap", help="gap file written by `rsr tune`; omit for task reward only")
    tr.add_argument("--out", required=True)
    tr.add_argument("--config")
    tr.add_argument("--init", help="warm-start checkpoint")
    tr.add_argument("--steps", type=int)
    tr.add_argument("--seed", type=int)
    tr.add_argument("--deterministic", action="store_true")
    tr.set_defaults(func=cmd_train)

    c = sub.add_parser("collect", help="collect transitions from the proxy")
    c.add_argument("--policy")
    c.add_argument("--proxy", required=True)
    c.add_argument("-M", type=int, required=True)
    c.add_argument("--out", required=True)
    c.add_argument("--strategy", choices=[s.value for s in Strategy], default="trajectory")
    c.add_argument("--task", choices=["square", "tblock"], default="square")
    c.add_argument("--seed", type=int, default=0)
    c.add_argument("--iteration", type=int, default=0)
    c.set_defaults(func=cmd_collect)

    rep = sub.add_parser("report", help="KL table and plot-ready CSVs for a run directory")
    rep.add_argument("--run", required=True)
    rep.add_argument("--episodes", type=int, default=10)
    rep.add_argument("--seed", type=int, default=0)
    rep.set_defaults(func=cmd_report)
    return p


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return EXIT_OK if exc.code == 0 else EXIT_CONFIG
    try:
        return args.func(args)
    except ConfigError as exc:
        print(f"rsr: config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except (DatasetParseError, DatasetSchemaError, FileNotFoundError) as exc:
        print(f"rsr: input error: {exc}", file=sys.stderr)
        return EXIT_COMPONENT
    except Exception as exc:  # any component failure
        print(f"rsr: {type(exc).__name__}: {exc}", file=sys.stderr)
        return EXIT_COMPONENT


if __name__ == "__main__":
    sys.exit(main())
