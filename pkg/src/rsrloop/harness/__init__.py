"""Outer loop, data collection, configuration and run outputs."""

from .config import (ConfigError, InfoGapSettings, RsrConfig, dump_config, dump_params, load_config,
                     load_params, load_proxy, parse_config)
from .loop import (ComponentError, IterationReport, RsrState, Strategy, baseline_sample, collect_real,
                   grid_lattice, grid_points_per_axis, init_policy, kl_report, recompute_gap_history,
                   rsr_run, set_deterministic)
from .output import RunWriter, build_report, read_csv, write_csv

__all__ = [
    "ComponentError", "ConfigError", "InfoGapSettings", "IterationReport", "RsrConfig", "RsrState",
    "RunWriter", "Strategy", "baseline_sample", "build_report", "collect_real", "dump_config",
    "dump_params", "grid_lattice", "grid_points_per_axis", "init_policy", "kl_report", "load_config",
    "load_params", "load_proxy", "parse_config", "read_csv", "recompute_gap_history", "rsr_run",
    "set_deterministic", "write_csv",
]
