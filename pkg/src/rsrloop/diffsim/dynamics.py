"""Quasi-static planar pushing with smooth contact.

One step moves the effector disc by the (clamped) commanded displacement in
``substeps`` equal increments. At each increment the disc may press into the
block; a softplus penalty on the penetration gives the normal force and a
tanh-smoothed Coulomb drag acts along the face. The block slides only by the
amount its planar wrench exceeds the table friction limit
``mu_table * m * g``, with mobility ``dt_eff**2 / m``. At the end of the step
the effector, a delta-position controller with spring ``effector_stiffness``,
yields to the remaining contact force; the next step re-targets from that
measured position. All switches are smoothed, so every output is
differentiable in the four parameters.

The same code runs on plain arrays and on :class:`~rsrloop.diffsim.dual.Dual`
parameters; the dual run's values are bit-identical to the plain run.
"""

from __future__ import annotations

from dataclasses import asdict, dataclass, field
from functools import cached_property

import numpy as np

from ..core import EnvAction, EnvState, ValidationError, WorkspaceConfig
from . import dual as D
from .dual import Dual

PARAM_NAMES = ("mu_table", "mu_contact", "block_mass", "contact_stiffness")
GRAVITY = 9.81


@dataclass(frozen=True)
class SimParams:
    mu_table: float = 0.5
    mu_contact: float = 0.5
    block_mass: float = 0.3
    contact_stiffness: float = 400.0

    def __post_init__(self):
        vals = self.to_array()
        if not np.all(np.isfinite(vals)) or np.any(vals <= 0):
            raise ValidationError(f"parameters must be finite and positive, got {vals}")
        if self.mu_table > 2.0 or self.mu_contact > 2.0:
            raise ValidationError("friction coefficients must be <= 2")
        for n in PARAM_NAMES:
            object.__setattr__(self, n, float(getattr(self, n)))

    def to_array(self) -> np.ndarray:
        return np.array([getattr(self, n) for n in PARAM_NAMES], dtype=float)

    @classmethod
    def from_array(cls, arr) -> "SimParams":
        return cls(*np.asarray(arr, dtype=float).tolist())

    def replace(self, **kw) -> "SimParams":
        d = asdict(self)
        d.update(kw)
        return SimParams(**d)


@dataclass(frozen=True)
class SimGeometry:
    """Geometry and integration constants of the pushing model.

    ``shape`` is ``"square"`` (side ``block_side``) or ``"tblock"`` (a bar
    over a stem). ``effector_stiffness`` is the position-controller spring
    the contact force works against; the effector's resulting lag makes the
    force observable, which is what separates stiffness from mass.
    """

    shape: str = "square"
    block_side: float = 0.06
    effector_radius: float = 0.02
    softplus_beta: float = 500.0
    slip_velocity: float = 3e-3
    contact_cutoff: float = 0.01
    corner_radius: float = 0.004
    effector_stiffness: float = 250.0
    dt_eff: float = 0.02
    substeps: int = 10
    stick_sharpness: float = 20.0
    workspace: WorkspaceConfig = field(default_factory=WorkspaceConfig)

    def __post_init__(self):
        if self.shape not in ("square", "tblock"):
            raise ValidationError(f"unknown block shape {self.shape!r}")
        if self.substeps < 1:
            raise ValidationError("substeps must be >= 1")
        for name in ("block_side", "effector_radius", "softplus_beta", "slip_velocity",
                     "contact_cutoff", "effector_stiffness", "dt_eff", "stick_sharpness"):
            if not getattr(self, name) > 0:
                raise ValidationError(f"{name} must be positive")
        if not 0 <= self.corner_radius < self.block_side / 4:
            raise ValidationError("corner_radius must lie in [0, block_side / 4)")

    @cached_property
    def rects(self) -> tuple:
        """Block outline as ``(cx, cy, hx, hy)`` boxes about the area centroid."""
        if self.shape == "square":
            h = self.block_side / 2
            return ((0.0, 0.0, h, h),)
        L = self.block_side
        bar = (0.0, 0.0, 5 * L / 6, L / 4)
        stem = (0.0, -(L / 4 + 7 * L / 12), L / 4, 7 * L / 12)
        areas = [4 * r[2] * r[3] for r in (bar, stem)]
        cy = (areas[0] * bar[1] + areas[1] * stem[1]) / sum(areas)
        return tuple((r[0], r[1] - cy, r[2], r[3]) for r in (bar, stem))

    @cached_property
    def gyration_radius(self) -> float:
        area = inertia = 0.0
        for cx, cy, hx, hy in self.rects:
            a = 4 * hx * hy
            area += a
            inertia += a * ((4 * hx * hx + 4 * hy * hy) / 12 + cx * cx + cy * cy)
        return float(np.sqrt(inertia / area))

    def to_dict(self) -> dict:
        d = {k: getattr(self, k) for k in self.__dataclass_fields__ if k != "workspace"}
        d["workspace_bound"] = self.workspace.bound
        d["a_max"] = self.workspace.a_max
        return d

    @classmethod
    def from_dict(cls, d: dict) -> "SimGeometry":
        d = dict(d)
        ws = WorkspaceConfig(float(d.pop("workspace_bound", 1.0)), float(d.pop("a_max", 0.02)))
        kinds = {"shape": str, "substeps": int}
        kw = {k: kinds.get(k, float)(v) for k, v in d.items()}
        return cls(workspace=ws, **kw)


def _box_contact(qx, qy, rect, rounding):
    """Signed distance and outward normal from a rounded box, in block frame."""
    cx, cy, hx, hy = rect
    hx, hy = hx - rounding, hy - rounding
    px = qx - cx
    py = qy - cy
    sx = np.where(D.value(px) >= 0, 1.0, -1.0)
    sy = np.where(D.value(py) >= 0, 1.0, -1.0)
    ax = px * sx - hx
    ay = py * sy - hy
    ox = np.maximum(ax, 0.0)
    oy = np.maximum(ay, 0.0)
    d_out = np.sqrt(ox * ox + oy * oy + 1e-24)
    inside = (D.value(ax) <= 0) & (D.value(ay) <= 0)
    x_face = D.value(ax) >= D.value(ay)
    dist = D.where(inside, np.maximum(ax, ay), d_out) - rounding
    nx = D.where(inside, np.where(x_face, sx, 0.0), ox * sx / d_out)
    ny = D.where(inside, np.where(x_face, 0.0, sy), oy * sy / d_out)
    return dist, nx, ny


def _block_contact(qx, qy, rects, rounding):
    best = _box_contact(qx, qy, rects[0], rounding)
    for rect in rects[1:]:
        cand = _box_contact(qx, qy, rect, rounding)
        closer = D.value(cand[0]) < D.value(best[0])
        best = tuple(D.where(closer, c, b) for c, b in zip(cand, best))
    return best


def _contact_forces(ex, ey, bx, by, yaw, ax, ay, k, mu_c, geom):
    """Normal/tangential contact force on the block for a disc at ``(ex, ey)``."""
    beta = geom.softplus_beta
    cut = -geom.contact_cutoff
    c, sn = np.cos(yaw), np.sin(yaw)
    dx, dy = ex - bx, ey - by
    qx = c * dx + sn * dy
    qy = c * dy - sn * dx
    dist, nlx, nly = _block_contact(qx, qy, geom.rects, geom.corner_radius)
    nx = c * nlx - sn * nly
    ny = sn * nlx + c * nly
    pen = geom.effector_radius - dist
    active = D.value(pen) > cut
    if not np.any(active):
        return None
    # softplus ramp with value and slope both zero at the cutoff
    ramp = (D.softplus(pen, beta) - float(D.softplus(cut, beta))
            - float(D.sigmoid(cut, beta)) * (pen - cut))
    fn = k * D.where(active, ramp, 0.0)
    tx, ty = -ny, nx
    ft = mu_c * fn * np.tanh((ax * tx + ay * ty) / geom.slip_velocity)
    return fn, ft, nx, ny, tx, ty, dist


def _dynamics(theta, s, a, geom: SimGeometry):
    """Advance ``(B, 5)`` states under ``(B, 2)`` actions.

    ``theta`` is a 4-sequence of floats or Duals. Returns five ``(B,)``
    components (arrays or Duals).
    """
    mu_t, mu_c, mass, k = theta
    ws = geom.workspace
    a = np.clip(a, -ws.a_max, ws.a_max)
    ax, ay = a[:, 0], a[:, 1]
    bx, by, yaw = s[:, 0], s[:, 1], s[:, 2]
    ex0, ey0 = s[:, 3], s[:, 4]

    friction_limit = mu_t * mass * GRAVITY
    mobility = geom.dt_eff ** 2 / mass
    rho = geom.gyration_radius
    n_sub = geom.substeps

    for j in range(n_sub):
        frac = (j + 1) / n_sub
        ex = ex0 + ax * frac
        ey = ey0 + ay * frac
        contact = _contact_forces(ex, ey, bx, by, yaw, ax, ay, k, mu_c, geom)
        if contact is None:
            continue
        fn, ft, nx, ny, tx, ty, dist = contact
        fx = ft * tx - fn * nx
        fy = ft * ty - fn * ny
        lx = ex - nx * dist - bx
        ly = ey - ny * dist - by
        wz = (lx * fy - ly * fx) / rho
        wn = np.sqrt(fx * fx + fy * fy + wz * wz + 1e-18)
        excess = D.softplus(wn - friction_limit, geom.stick_sharpness)
        gain = mobility * excess / wn
        bx = bx + gain * fx
        by = by + gain * fy
        yaw = yaw + gain * wz / rho

    # the controller spring yields to whatever contact force remains
    ex = ex0 + ax
    ey = ey0 + ay
    contact = _contact_forces(ex, ey, bx, by, yaw, ax, ay, k, mu_c, geom)
    if contact is not None:
        fn, ft, nx, ny, tx, ty, _ = contact
        kc = geom.effector_stiffness
        ex = ex + (fn * nx - ft * tx) / kc
        ey = ey + (fn * ny - ft * ty) / kc

    lim = ws.bound
    clamp = lambda v: np.minimum(np.maximum(v, -lim), lim)
    yaw_v = D.value(yaw)
    in_range = (yaw_v > -np.pi) & (yaw_v <= np.pi)
    yaw = D.where(in_range, yaw, yaw - (yaw_v - (np.pi - np.mod(np.pi - yaw_v, 2 * np.pi))))
    return clamp(bx), clamp(by), yaw, clamp(ex), clamp(ey)


def _as_theta(params, n: int) -> np.ndarray:
    """Parameters as a ``(4,)`` vector or ``(n, 4)`` per-row matrix."""
    if isinstance(params, SimParams):
        return params.to_array()
    theta = np.asarray(params, dtype=float)
    if theta.shape != (4,) and theta.shape != (n, 4):
        raise ValidationError(f"expected 4 parameters (or {n} rows of 4), got shape {theta.shape}")
    return theta


def _seed(theta: np.ndarray) -> list:
    if theta.ndim == 1:
        return Dual.seed(theta)
    eye = np.eye(4)
    return [Dual(theta[:, i], np.broadcast_to(eye[i], (len(theta), 4))) for i in range(4)]


def _as_batch(s, a):
    s = np.atleast_2d(np.asarray(s, dtype=float))
    a = np.atleast_2d(np.asarray(a, dtype=float))
    if s.shape[1:] != (5,) or a.shape[1:] != (2,) or len(s) != len(a):
        raise ValidationError(f"bad batch shapes {s.shape} / {a.shape}")
    return s, a


def step_batch(params, states, actions, geom: SimGeometry | None = None) -> np.ndarray:
    """Vectorised :func:`step` over ``(B, 5)`` states and ``(B, 2)`` actions."""
    geom = geom or SimGeometry()
    s, a = _as_batch(states, actions)
    theta = _as_theta(params, len(s))
    out = _dynamics(tuple(theta.T), s, a, geom)
    return np.stack([np.broadcast_to(o, (len(s),)) for o in out], axis=1)


def step_with_sensitivity_batch(params, states, actions, geom: SimGeometry | None = None):
    """Next states ``(B, 5)`` and Jacobians ``(B, 5, 4)`` w.r.t. the parameters."""
    geom = geom or SimGeometry()
    s, a = _as_batch(states, actions)
    theta = _seed(_as_theta(params, len(s)))
    out = _dynamics(theta, s, a, geom)
    n = len(s)
    nxt = np.stack([np.broadcast_to(D.value(o), (n,)) for o in out], axis=1)
    jac = np.stack([np.broadcast_to(D.tangent(o, 4), (n, 4)) for o in out], axis=1)
    return nxt, np.array(jac)


@dataclass(frozen=True)
class Sensitivity:
    """``jacobian[i, j]`` is d next_state[i] / d theta[j]."""

    jacobian: np.ndarray


def step(params, s: EnvState, a: EnvAction, geom: SimGeometry | None = None) -> EnvState:
    out = step_batch(params, s.to_array()[None], a.to_array()[None], geom)
    return EnvState.from_array(out[0])


def step_with_sensitivity(params, s: EnvState, a: EnvAction, geom: SimGeometry | None = None):
    nxt, jac = step_with_sensitivity_batch(params, s.to_array()[None], a.to_array()[None], geom)
    return EnvState.from_array(nxt[0]), Sensitivity(jac[0])
