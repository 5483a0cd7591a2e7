from .dynamics import (PARAM_NAMES, SimGeometry, SimParams, Sensitivity, step, step_batch,
                       step_with_sensitivity, step_with_sensitivity_batch)
from .proxy import RealProxyConfig, real_step, real_step_batch, replay, rollout

__all__ = [
    "PARAM_NAMES", "SimGeometry", "SimParams", "Sensitivity", "step", "step_batch",
    "step_with_sensitivity", "step_with_sensitivity_batch",
    "RealProxyConfig", "real_step", "real_step_batch", "replay", "rollout",
]
