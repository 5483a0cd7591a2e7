"""Gradient-based identification of the simulator parameters from real transitions.

The loss is the mean squared one-step prediction error over the four position
coordinates plus the wrapped yaw (weighted by ``w_yaw``). Descent runs in
units of ``param_scale`` so that a friction coefficient and a stiffness of a
few hundred move at comparable rates; with unit scales it is the textbook
update ``theta <- theta - alpha * grad``.
"""

from __future__ import annotations

import enum
from dataclasses import dataclass, field
from typing import Callable

import numpy as np
from sklearn.base import BaseEstimator, RegressorMixin
from sklearn.utils.validation import check_is_fitted

from .core import YAW_IDX, Dataset, ValidationError, wrap_angle
from .diffsim.dynamics import PARAM_NAMES, SimGeometry, SimParams, step_batch, step_with_sensitivity_batch

DEFAULT_BOUNDS = {
    "mu_table": (0.05, 2.0),
    "mu_contact": (0.05, 2.0),
    "block_mass": (0.05, 5.0),
    "contact_stiffness": (50.0, 5000.0),
}
DEFAULT_SCALE = {"mu_table": 0.5, "mu_contact": 0.2, "block_mass": 0.3, "contact_stiffness": 400.0}


class Optimizer(str, enum.Enum):
    GD = "gd"
    ADAM = "adam"


class TunerInitError(ValueError):
    """The loss is not finite at the starting parameters."""


@dataclass(frozen=True)
class TunerConfig:
    learning_rate: float = 0.05
    max_iters: int = 500
    grad_tol: float = 1e-6
    loss_tol: float = 1e-10
    optimizer: Optimizer = Optimizer.GD
    param_bounds: dict = field(default_factory=lambda: dict(DEFAULT_BOUNDS))
    param_scale: dict = field(default_factory=lambda: dict(DEFAULT_SCALE))
    # residuals are measured in units of length_scale inside the optimizer
    length_scale: float = 0.01
    w_yaw: float = 0.1
    max_halvings: int = 20
    adam_betas: tuple = (0.9, 0.999)
    adam_eps: float = 1e-8

    def __post_init__(self):
        object.__setattr__(self, "optimizer", Optimizer(self.optimizer))
        if not self.learning_rate > 0:
            raise ValidationError("learning_rate must be positive")
        if int(self.max_iters) < 0:
            raise ValidationError("max_iters must be >= 0")
        if not (self.grad_tol > 0 and self.loss_tol > 0 and self.length_scale > 0):
            raise ValidationError("tolerances and length_scale must be positive")
        if self.w_yaw < 0:
            raise ValidationError("w_yaw must be >= 0")
        for name in PARAM_NAMES:
            lo, hi = self.param_bounds[name]
            if not (0 < lo < hi):
                raise ValidationError(f"bounds for {name} must satisfy 0 < lo < hi")
            if not self.param_scale[name] > 0:
                raise ValidationError(f"scale for {name} must be positive")

    def bounds_array(self) -> tuple:
        lo = np.array([self.param_bounds[n][0] for n in PARAM_NAMES], dtype=float)
        hi = np.array([self.param_bounds[n][1] for n in PARAM_NAMES], dtype=float)
        return lo, hi

    def scale_array(self) -> np.ndarray:
        return np.array([self.param_scale[n] for n in PARAM_NAMES], dtype=float)


@dataclass(frozen=True)
class TuneReport:
    final_params: SimParams
    loss_history: tuple
    iterations_used: int
    converged: bool
    stop_reason: str = ""
    param_history: tuple = ()

    def __post_init__(self):
        if not self.loss_history or min(self.loss_history) < 0:
            raise ValidationError("loss_history must be nonempty and nonnegative")


def _weights(w_yaw: float) -> np.ndarray:
    w = np.ones(5)
    w[YAW_IDX] = w_yaw
    return w


def _residuals(pred: np.ndarray, real: np.ndarray) -> np.ndarray:
    r = real - pred
    r[:, YAW_IDX] = wrap_angle(r[:, YAW_IDX])
    return r


def _check_data(d_real: Dataset):
    if len(d_real) == 0:
        raise ValidationError("physical loss needs a nonempty dataset")


def physical_loss(params, d_real: Dataset, geom: SimGeometry | None = None, w_yaw: float = 0.1) -> float:
    """Mean weighted squared one-step error of the sim against ``d_real``."""
    _check_data(d_real)
    pred = step_batch(params, d_real.states, d_real.actions, geom)
    r = _residuals(pred, d_real.next_states)
    return float(np.mean(np.sum(_weights(w_yaw) * r * r, axis=1)))


def loss_and_grad(params, d_real: Dataset, geom: SimGeometry | None = None, w_yaw: float = 0.1):
    _check_data(d_real)
    pred, jac = step_with_sensitivity_batch(params, d_real.states, d_real.actions, geom)
    r = _residuals(pred, d_real.next_states)
    w = _weights(w_yaw)
    loss = float(np.mean(np.sum(w * r * r, axis=1)))
    # dL/dtheta = -2/M sum_m sum_c w_c r_mc J_mc
    per = np.einsum("mc,mcj->mj", w * r, jac)
    grad = -2.0 * per.mean(axis=0)
    return loss, grad


def physical_loss_grad(params, d_real: Dataset, geom: SimGeometry | None = None, w_yaw: float = 0.1) -> np.ndarray:
    return loss_and_grad(params, d_real, geom, w_yaw)[1]


def descend(fun: Callable, grad_fun: Callable, x0, cfg: TunerConfig, scale=None, bounds=None,
            loss_scale: float = 1.0):
    """Projected, backtracking descent on a generic objective.

    ``grad_fun(x)`` returns ``(loss, grad)``; ``fun(x)`` the loss alone. The
    step is ``alpha * scale**2 * grad / loss_scale`` for plain GD, which is
    ordinary gradient descent on ``loss / loss_scale`` in the variables
    ``x / scale``. Returns ``(x, losses, xs, iterations, converged, reason)``.
    """
    x = np.array(x0, dtype=float)
    n = len(x)
    scale = np.ones(n) if scale is None else np.asarray(scale, dtype=float)
    lo, hi = (np.full(n, -np.inf), np.full(n, np.inf)) if bounds is None else bounds
    loss, g = grad_fun(x)
    if not np.isfinite(loss):
        raise TunerInitError(f"non-finite loss at the initial parameters: {loss}")
    losses, xs = [loss], [x.copy()]
    b1, b2 = cfg.adam_betas
    m = np.zeros(n)
    v = np.zeros(n)
    it = t_adam = 0
    fresh = False
    reason = "max_iters"
    converged = False
    while True:
        gu = g * scale / loss_scale
        if loss <= cfg.loss_tol:
            converged, reason = True, "loss_tol"
            break
        if np.linalg.norm(gu) <= cfg.grad_tol:
            converged, reason = True, "grad_tol"
            break
        if it >= cfg.max_iters:
            break
        if cfg.optimizer is Optimizer.ADAM:
            m = b1 * m + (1 - b1) * gu
            v = b2 * v + (1 - b2) * gu * gu
            t_adam += 1
            mh = m / (1 - b1 ** t_adam)
            vh = v / (1 - b2 ** t_adam)
            direction = scale * mh / (np.sqrt(vh) + cfg.adam_eps)
        else:
            direction = scale * gu
        step = cfg.learning_rate
        for _ in range(cfg.max_halvings + 1):
            cand = np.clip(x - step * direction, lo, hi)
            cand_loss = fun(cand)
            if np.isfinite(cand_loss) and cand_loss <= loss:
                break
            step *= 0.5
        else:
            if cfg.optimizer is Optimizer.ADAM and not fresh:
                # stale momentum can point uphill; restart from the bare gradient
                m[:] = 0.0
                v[:] = 0.0
                t_adam = 0
                fresh = True
                continue
            reason = "line_search"
            break
        fresh = False
        it += 1
        x = cand
        loss, g = grad_fun(x)
        losses.append(loss)
        xs.append(x.copy())
    return x, losses, xs, it, converged, reason


def tune(params0, d_real: Dataset, cfg: TunerConfig | None = None, geom: SimGeometry | None = None) -> TuneReport:
    """Fit the simulator parameters to ``d_real`` by projected gradient descent."""
    cfg = cfg or TunerConfig()
    geom = geom or SimGeometry()
    _check_data(d_real)
    theta0 = params0.to_array() if isinstance(params0, SimParams) else np.asarray(params0, dtype=float)
    lo, hi = cfg.bounds_array()
    ls2 = cfg.length_scale ** 2

    def fun(th):
        return physical_loss(th, d_real, geom, cfg.w_yaw)

    def grad_fun(th):
        return loss_and_grad(th, d_real, geom, cfg.w_yaw)

    x, losses, xs, it, converged, reason = descend(
        fun, grad_fun, theta0, cfg, scale=cfg.scale_array(), bounds=(lo, hi), loss_scale=ls2)
    return TuneReport(SimParams.from_array(x), tuple(losses), it, converged, reason,
                      tuple(SimParams.from_array(t) for t in xs))


class SimParamEstimator(RegressorMixin, BaseEstimator):
    """Estimator view of :func:`tune`.

    ``fit`` takes a real :class:`Dataset`; ``predict`` maps rows of
    ``[state (5), action (2)]`` to simulated next states.
    """

    def __init__(self, init_params=None, learning_rate=0.05, max_iters=500, optimizer="gd", w_yaw=0.1):
        self.init_params = init_params
        self.learning_rate = learning_rate
        self.max_iters = max_iters
        self.optimizer = optimizer
        self.w_yaw = w_yaw

    def fit(self, X: Dataset, y=None):
        if not isinstance(X, Dataset):
            raise ValidationError("fit expects a Dataset")
        cfg = TunerConfig(learning_rate=self.learning_rate, max_iters=self.max_iters,
                          optimizer=self.optimizer, w_yaw=self.w_yaw)
        p0 = self.init_params if self.init_params is not None else SimParams()
        self.report_ = tune(p0, X, cfg)
        self.params_ = self.report_.final_params
        self.n_features_in_ = 7
        return self

    def predict(self, X) -> np.ndarray:
        check_is_fitted(self, "params_")
        X = np.atleast_2d(np.asarray(X, dtype=float))
        if X.shape[1] != 7:
            raise ValidationError("predict expects rows of [state (5), action (2)]")
        return step_batch(self.params_, X[:, :5], X[:, 5:])

    def score(self, X: Dataset, y=None) -> float:
        """Negative physical loss on a dataset."""
        check_is_fitted(self, "params_")
        return -physical_loss(self.params_, X, w_yaw=self.w_yaw)
