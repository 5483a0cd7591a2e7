"""Adaptive InfoGap cost: a frozen gap coefficient times per-transition informativeness.

The gap coefficient is a KL divergence between real and simulated next-state
marginals; informativeness is the Wasserstein shift a single new transition
would cause in the simulated baseline. Their product, negated, is the loss;
the reward form used during policy training is its per-transition negative.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Sequence

import numpy as np
from sklearn.base import BaseEstimator, TransformerMixin
from sklearn.utils.validation import check_is_fitted

from .core import STATE_COORDS, Dataset, Transition, ValidationError, marginal
from .density import GaussianKDE, kde_fit, kl_divergence, wasserstein

DEFAULT_COORDS = ("block_x", "block_y")


def _check_coords(coordinates) -> tuple:
    coords = (coordinates,) if isinstance(coordinates, str) else tuple(coordinates)
    if not coords:
        raise ValidationError("empty coordinate selector")
    for c in coords:
        if c not in STATE_COORDS:
            raise ValidationError(f"unknown coordinate {c!r}")
    return coords


@dataclass(frozen=True, eq=False)
class GapContext:
    """Everything the intrinsic reward needs, fixed for one training phase."""

    gap_coeff: float
    sim_baseline: GaussianKDE
    sim_samples: np.ndarray
    lambda_sr: float = 1.0
    coordinates: tuple = DEFAULT_COORDS
    order: float = 1.0

    def __post_init__(self):
        if not (np.isfinite(self.gap_coeff) and self.gap_coeff >= 0):
            raise ValidationError("gap_coeff must be finite and >= 0")
        if not (np.isfinite(self.lambda_sr) and self.lambda_sr >= 0):
            raise ValidationError("lambda_sr must be finite and >= 0")
        coords = _check_coords(self.coordinates)
        samples = np.array(self.sim_samples, dtype=float, copy=True).reshape(-1, len(coords))
        if len(samples) == 0:
            raise ValidationError("empty sim baseline")
        samples.setflags(write=False)
        object.__setattr__(self, "coordinates", coords)
        object.__setattr__(self, "sim_samples", samples)
        object.__setattr__(self, "gap_coeff", float(self.gap_coeff))
        object.__setattr__(self, "lambda_sr", float(self.lambda_sr))
        # sorted columns make the per-probe evaluation cheap
        object.__setattr__(self, "_sorted", np.sort(samples, axis=0))

    @classmethod
    def build(cls, gap_coeff: float, d_sim_k: Dataset, lambda_sr: float = 1.0,
              coordinates=DEFAULT_COORDS, order: float = 1.0) -> "GapContext":
        coords = _check_coords(coordinates)
        if len(d_sim_k) == 0:
            raise ValidationError("empty sim dataset")
        samples = marginal(d_sim_k, coords)
        return cls(gap_coeff, kde_fit(samples), samples, lambda_sr, coords, order)

    def with_gap(self, gap_coeff: float) -> "GapContext":
        return GapContext(gap_coeff, self.sim_baseline, self.sim_samples,
                          self.lambda_sr, self.coordinates, self.order)


def gap_coefficient(d_real_k: Dataset, d_sim_prev: Dataset, coordinates=DEFAULT_COORDS) -> float:
    """Mean over the selected coordinates of KL(real || sim) between 1-D KDEs."""
    coords = _check_coords(coordinates)
    if len(d_real_k) == 0 or len(d_sim_prev) == 0:
        raise ValidationError("gap coefficient needs two nonempty datasets")
    kls = per_axis_kl(d_real_k, d_sim_prev, coords)
    return float(np.mean(list(kls.values())))


def per_axis_kl(d_real: Dataset, d_sim: Dataset, coordinates=DEFAULT_COORDS) -> dict:
    coords = _check_coords(coordinates)
    out = {}
    for c in coords:
        p = kde_fit(marginal(d_real, [c]))
        q = kde_fit(marginal(d_sim, [c]))
        out[c] = kl_divergence(p, q)
    return out


def _probe_points(ctx: GapContext, batch) -> np.ndarray:
    """Next-state marginals of a batch given as a Dataset, Transitions or raw next states."""
    if isinstance(batch, Dataset):
        return marginal(batch, ctx.coordinates)
    if isinstance(batch, Transition):
        batch = [batch]
    if isinstance(batch, np.ndarray):
        arr = np.atleast_2d(np.asarray(batch, dtype=float))
        if arr.shape[1] != len(STATE_COORDS):
            raise ValidationError("raw batches must be next-state rows of length 5")
    else:
        items = list(batch)
        if not all(isinstance(t, Transition) for t in items):
            raise ValidationError("batch must hold Transitions")
        arr = np.array([t.next_state.to_array() for t in items]).reshape(-1, len(STATE_COORDS))
    if not np.all(np.isfinite(arr)):
        raise ValidationError("non-finite next state in batch")
    cols = [STATE_COORDS.index(c) for c in ctx.coordinates]
    return arr[:, cols]


def _w1_single_probe(sorted_col: np.ndarray, probe: np.ndarray) -> np.ndarray:
    """W1 between a baseline plus one probe and the baseline alone.

    The CDFs differ by ``(1[y >= x] - F(y)) / (n + 1)``, which integrates to
    ``mean |x - b_i| / (n + 1)``.
    """
    n = len(sorted_col)
    csum = np.concatenate([[0.0], np.cumsum(sorted_col)])
    k = np.searchsorted(sorted_col, probe, side="right")
    below = k * probe - csum[k]
    above = (csum[n] - csum[k]) - (n - k) * probe
    return np.maximum(below + above, 0.0) / (n * (n + 1))


def informativeness(ctx: GapContext, batch) -> np.ndarray:
    """Per-transition Wasserstein shift of the sim baseline, in batch order."""
    probes = _probe_points(ctx, batch)
    base = ctx.sim_samples
    if ctx.order == 1.0:
        cols = [_w1_single_probe(ctx._sorted[:, d], probes[:, d]) for d in range(probes.shape[1])]
        return np.mean(cols, axis=0)
    return np.array([wasserstein(np.vstack([base, p[None]]), base, ctx.order) for p in probes])


def infogap_loss(ctx: GapContext, batch) -> float:
    info = informativeness(ctx, batch)
    if len(info) == 0:
        raise ValidationError("empty batch")
    return -(ctx.gap_coeff * float(np.mean(info)) * ctx.lambda_sr)


def intrinsic_rewards(ctx: GapContext, batch) -> np.ndarray:
    """Vectorized reward form, ``gap_coeff * informativeness * lambda_sr``."""
    return ctx.gap_coeff * informativeness(ctx, batch) * ctx.lambda_sr


def intrinsic_reward(ctx: GapContext, t: Transition) -> float:
    return float(intrinsic_rewards(ctx, [t])[0])


class InfoGapReward(TransformerMixin, BaseEstimator):
    """Estimator wrapper: ``fit`` freezes a :class:`GapContext`, ``transform`` scores next states.

    ``fit(d_real_k, d_sim_prev, d_sim_k)`` computes the gap coefficient from
    the first two datasets and builds the baseline from the third.
    """

    def __init__(self, lambda_sr=1.0, coordinates=DEFAULT_COORDS, order=1.0):
        self.lambda_sr = lambda_sr
        self.coordinates = coordinates
        self.order = order

    def fit(self, d_real_k: Dataset, d_sim_prev: Dataset, d_sim_k: Dataset | None = None):
        gap = gap_coefficient(d_real_k, d_sim_prev, self.coordinates)
        self.context_ = GapContext.build(gap, d_sim_k if d_sim_k is not None else d_sim_prev,
                                         self.lambda_sr, self.coordinates, self.order)
        self.gap_coeff_ = gap
        return self

    def transform(self, X) -> np.ndarray:
        check_is_fitted(self, "context_")
        return intrinsic_rewards(self.context_, X)

    def score(self, X) -> float:
        """Negative InfoGap loss on a batch, so larger is better."""
        check_is_fitted(self, "context_")
        return -infogap_loss(self.context_, X)
