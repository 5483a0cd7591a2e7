"""Kernel density estimates and the two divergences built on them.

``GaussianKDE`` follows the scikit-learn estimator protocol. Bandwidths are
kept in standardized units: the kernel width along dimension ``d`` is
``bandwidth_ * scale_[d]``.
"""

from __future__ import annotations

import warnings
from dataclasses import dataclass

import numpy as np
from scipy.special import ndtr
from sklearn.base import BaseEstimator
from sklearn.utils.validation import check_array, check_is_fitted

from .core import ValidationError

H_MIN = 1e-4
KL_EPS = 1e-12
_SQRT_2PI = np.sqrt(2.0 * np.pi)


class DegenerateSampleWarning(UserWarning):
    """Bandwidth fell back to the floor because the samples have no spread."""


def _as_samples(x, name="samples") -> np.ndarray:
    x = np.asarray(x, dtype=float)
    if x.ndim == 1:
        x = x[:, None]
    x = check_array(x, ensure_min_samples=1, input_name=name)
    return x


def _spread(x: np.ndarray):
    """Per-column ``(std, min(std, IQR/1.34))``; IQR of zero falls back to std."""
    n = len(x)
    std = x.std(axis=0, ddof=1) if n > 1 else np.zeros(x.shape[1])
    q75, q25 = np.percentile(x, [75, 25], axis=0)
    iqr = (q75 - q25) / 1.34
    robust = np.where(iqr > 0, np.minimum(std, iqr), std)
    return std, robust


def _silverman(x: np.ndarray, h_min: float):
    """Shared standardized bandwidth, per-column scale, degenerate flag."""
    n, _ = x.shape
    std, robust = _spread(x)
    degenerate = n < 2 or np.any(std <= 0)
    scale = np.where(std > 0, std, 1.0)
    if degenerate:
        return h_min, scale, True
    h = 0.9 * float(np.min(robust / scale)) * n ** (-0.2)
    return max(h, h_min), scale, False


def silverman_bandwidth(samples, h_min: float = H_MIN):
    """Silverman's rule of thumb, ``0.9 * min(std, IQR/1.34) * n**(-1/5)``.

    Returns the kernel width in the samples' own units: a float for 1-D
    input, one width per column for 2-D input. Fewer than two samples, or
    zero spread, gives ``h_min`` and a :class:`DegenerateSampleWarning`.
    """
    arr = np.asarray(samples, dtype=float)
    x = _as_samples(arr)
    h, scale, degenerate = _silverman(x, h_min)
    if degenerate:
        warnings.warn("samples have no spread; bandwidth set to the floor",
                      DegenerateSampleWarning, stacklevel=2)
    widths = h * scale
    return float(widths[0]) if arr.ndim == 1 else widths


class GaussianKDE(BaseEstimator):
    """Product-Gaussian kernel density estimate.

    Parameters
    ----------
    bandwidth : float or None
        Kernel width in data units applied to every dimension. ``None``
        selects Silverman's rule on standardized data.
    h_min : float
        Floor for the automatic bandwidth.
    """

    def __init__(self, bandwidth=None, h_min=H_MIN):
        self.bandwidth = bandwidth
        self.h_min = h_min

    def fit(self, X, y=None):
        X = _as_samples(X, "X")
        if not np.all(np.isfinite(X)):
            raise ValidationError("non-finite samples")
        self.samples_ = X
        self.n_features_in_ = X.shape[1]
        if self.bandwidth is None:
            h, scale, degenerate = _silverman(X, self.h_min)
            if degenerate:
                warnings.warn("samples have no spread; bandwidth set to the floor",
                              DegenerateSampleWarning, stacklevel=2)
            self.bandwidth_, self.scale_, self.degenerate_ = h, scale, degenerate
        else:
            if not float(self.bandwidth) > 0:
                raise ValidationError("bandwidth must be positive")
            self.bandwidth_ = float(self.bandwidth)
            self.scale_ = np.ones(X.shape[1])
            self.degenerate_ = False
        return self

    @property
    def widths_(self) -> np.ndarray:
        return self.bandwidth_ * self.scale_

    def _kernel_matrices(self, axes):
        """Per-dimension ``(n, len(axis))`` kernel values, already divided by width."""
        out = []
        for d, axis in enumerate(axes):
            w = self.widths_[d]
            z = (np.asarray(axis, dtype=float)[None, :] - self.samples_[:, d:d + 1]) / w
            out.append(np.exp(-0.5 * z * z) / (_SQRT_2PI * w))
        return out

    def density(self, X) -> np.ndarray:
        check_is_fitted(self, "samples_")
        X = np.asarray(X, dtype=float)
        if X.ndim == 1 and self.n_features_in_ == 1:
            X = X[:, None]
        X = np.atleast_2d(X)
        if X.shape[1] != self.n_features_in_:
            raise ValidationError(f"query has {X.shape[1]} columns, model has {self.n_features_in_}")
        if not np.all(np.isfinite(X)):
            raise ValidationError("non-finite query")
        out = np.empty(len(X))
        # chunk queries to bound the (n, chunk) kernel matrices
        for lo in range(0, len(X), 512):
            mats = self._kernel_matrices(X[lo:lo + 512].T)
            prod = mats[0]
            for m in mats[1:]:
                prod = prod * m
            out[lo:lo + 512] = prod.mean(axis=0)
        return out

    def score_samples(self, X) -> np.ndarray:
        with np.errstate(divide="ignore"):
            return np.log(self.density(X))

    def cell_masses(self, grid: "GridSpec") -> np.ndarray:
        """Probability mass of each grid cell, shape ``grid.points``.

        Cells are centred on the grid nodes and meet halfway between them;
        the outermost cells extend half a spacing past the ends. Integrating
        the kernels (rather than sampling them at the nodes) keeps narrow
        kernels from falling between nodes.
        """
        check_is_fitted(self, "samples_")
        if grid.dim != self.n_features_in_:
            raise ValidationError("grid dimension does not match the model")
        mats = []
        for d, axis in enumerate(grid.axes()):
            half = 0.5 * (axis[1] - axis[0])
            edges = np.concatenate([[axis[0] - half], 0.5 * (axis[1:] + axis[:-1]), [axis[-1] + half]])
            cdf = ndtr((edges[None, :] - self.samples_[:, d:d + 1]) / self.widths_[d])
            mats.append(np.diff(cdf, axis=1))
        return _separable_mean(mats)

    def density_on_grid(self, grid: "GridSpec") -> np.ndarray:
        """Density on the tensor grid, shape ``grid.points`` (separable kernels)."""
        check_is_fitted(self, "samples_")
        if grid.dim != self.n_features_in_:
            raise ValidationError("grid dimension does not match the model")
        return _separable_mean(self._kernel_matrices(grid.axes()))


def _separable_mean(mats) -> np.ndarray:
    """Mean over samples of the outer product of per-dimension ``(n, G_d)`` factors."""
    if len(mats) == 1:
        return mats[0].mean(axis=0)
    if len(mats) == 2:
        n = len(mats[0])
        acc = np.zeros((mats[0].shape[1], mats[1].shape[1]))
        for lo in range(0, n, 256):
            acc += (mats[0][lo:lo + 256, :, None] * mats[1][lo:lo + 256, None, :]).sum(axis=0)
        return acc / n
    raise ValidationError("grids above two dimensions are not supported")


def kde_fit(samples, h=None) -> GaussianKDE:
    return GaussianKDE(bandwidth=h).fit(samples)


def kde_eval(model: GaussianKDE, x):
    """Density at ``x``; a single point gives a float, a batch an array."""
    x = np.asarray(x, dtype=float)
    single = x.ndim == 0 or (x.ndim == 1 and model.n_features_in_ > 1)
    out = model.density(x.reshape(-1, model.n_features_in_))
    return float(out[0]) if single else out


@dataclass(frozen=True)
class GridSpec:
    lower: tuple
    upper: tuple
    points: tuple

    def __post_init__(self):
        lo, hi, pts = (tuple(np.atleast_1d(v).tolist()) for v in (self.lower, self.upper, self.points))
        if not (len(lo) == len(hi) == len(pts)):
            raise ValidationError("lower/upper/points must have one entry per dimension")
        if any(not l < h for l, h in zip(lo, hi)):
            raise ValidationError("need lower < upper in every dimension")
        if any(int(p) < 2 for p in pts):
            raise ValidationError("need at least 2 points per dimension")
        object.__setattr__(self, "lower", tuple(float(v) for v in lo))
        object.__setattr__(self, "upper", tuple(float(v) for v in hi))
        object.__setattr__(self, "points", tuple(int(v) for v in pts))

    @property
    def dim(self) -> int:
        return len(self.lower)

    def axes(self) -> list:
        return [np.linspace(l, h, p) for l, h, p in zip(self.lower, self.upper, self.points)]

    @property
    def cell_volume(self) -> float:
        return float(np.prod([(h - l) / (p - 1) for l, h, p in zip(self.lower, self.upper, self.points)]))

    @classmethod
    def covering(cls, *models: GaussianKDE, pad: float = 3.0, points=None) -> "GridSpec":
        """Grid spanning every model's samples, padded by ``pad`` widest kernels."""
        dim = models[0].n_features_in_
        if any(m.n_features_in_ != dim for m in models):
            raise ValidationError("models differ in dimension")
        widths = np.max([m.widths_ for m in models], axis=0)
        lo = np.min([m.samples_.min(axis=0) for m in models], axis=0) - pad * widths
        hi = np.max([m.samples_.max(axis=0) for m in models], axis=0) + pad * widths
        if points is None:
            points = (256,) if dim == 1 else (64,) * dim
        return cls(tuple(lo), tuple(hi), tuple(np.broadcast_to(points, (dim,))))


def kl_divergence(p: GaussianKDE, q: GaussianKDE, grid: GridSpec | None = None) -> float:
    """KL(p || q) by quadrature of both KDEs on a shared grid.

    Each KDE's mass per grid cell is normalized and clamped at
    ``KL_EPS`` before summing ``p log(p / q)``, which keeps the result finite
    and nonnegative.
    """
    if p.n_features_in_ != q.n_features_in_:
        raise ValidationError("p and q differ in dimension")
    grid = grid or GridSpec.covering(p, q)
    pv = p.cell_masses(grid).ravel()
    qv = q.cell_masses(grid).ravel()
    if not (pv.sum() > 0 and qv.sum() > 0):
        raise ValidationError("grid carries no probability mass for p or q")
    pv = np.maximum(pv / pv.sum(), KL_EPS)
    qv = np.maximum(qv / qv.sum(), KL_EPS)
    pv /= pv.sum()
    qv /= qv.sum()
    return max(float(np.sum(pv * np.log(pv / qv))), 0.0)


def _wasserstein_1d(x: np.ndarray, y: np.ndarray, order: float) -> float:
    x = np.sort(x)
    y = np.sort(y)
    n, m = len(x), len(y)
    if n == m:
        return float(np.mean(np.abs(x - y) ** order) ** (1.0 / order))
    # exact: both quantile functions are step functions on a merged grid
    cuts = np.union1d(np.arange(n + 1) / n, np.arange(m + 1) / m)
    mid = 0.5 * (cuts[1:] + cuts[:-1])
    xi = x[np.minimum((mid * n).astype(int), n - 1)]
    yi = y[np.minimum((mid * m).astype(int), m - 1)]
    return float(np.sum(np.diff(cuts) * np.abs(xi - yi) ** order) ** (1.0 / order))


def wasserstein(p_samples, q_samples, order: float = 1.0) -> float:
    """Order-``order`` Wasserstein distance between two empirical distributions.

    In 1-D this is the exact transport cost between the sorted samples;
    sets of different size are matched through their quantile functions.
    With more than one column, the per-column distances are averaged.
    """
    if not order >= 1:
        raise ValidationError("order must be >= 1")
    x = np.asarray(p_samples, dtype=float)
    y = np.asarray(q_samples, dtype=float)
    if x.size == 0 or y.size == 0:
        raise ValidationError("empty sample set")
    x = x[:, None] if x.ndim == 1 else x
    y = y[:, None] if y.ndim == 1 else y
    if x.shape[1] != y.shape[1]:
        raise ValidationError("sample sets differ in dimension")
    return float(np.mean([_wasserstein_1d(x[:, d], y[:, d], order) for d in range(x.shape[1])]))
