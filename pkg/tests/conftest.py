import sys
from pathlib import Path

import numpy as np
import pytest

sys.path.insert(0, str(Path(__file__).parent))

from rsrloop.core import Dataset, Tag  # noqa: E402
from rsrloop.diffsim import RealProxyConfig, SimGeometry, real_step_batch  # noqa: E402

PARAM_LO = np.array([0.1, 0.1, 0.1, 150.0])
PARAM_HI = np.array([1.2, 1.2, 1.5, 1500.0])


def random_params(rng, n=None):
    shape = (4,) if n is None else (n, 4)
    return rng.uniform(PARAM_LO, PARAM_HI, size=shape)


def near_block_cases(rng, n, geom=None, reach=(0.035, 0.075)):
    """States with the effector close to the block and actions aimed roughly at it.

    About half end up in contact within the step; the rest stay clear, so
    both regimes are covered.
    """
    geom = geom or SimGeometry()
    block = rng.uniform(-0.1, 0.1, (n, 2))
    yaw = rng.uniform(-np.pi, np.pi, n)
    ang = rng.uniform(0, 2 * np.pi, n)
    dist = rng.uniform(*reach, n)
    ee = block + dist[:, None] * np.stack([np.cos(ang), np.sin(ang)], 1)
    toward = -np.stack([np.cos(ang), np.sin(ang)], 1)
    mag = rng.uniform(0.2, 1.0, n)[:, None] * geom.workspace.a_max
    jitter = rng.normal(0, 0.4, (n, 2))
    actions = np.clip(mag * (toward + jitter), -geom.workspace.a_max, geom.workspace.a_max)
    states = np.column_stack([block, yaw, ee])
    return states, actions


def contact_rich_dataset(true_params, n=200, seed=0, sigma=0.0, geom=None):
    """Pushes aimed at the block centre from just outside contact, with varied magnitudes.

    Next states come from the proxy at ``true_params`` with noise ``sigma``.
    """
    geom = geom or SimGeometry()
    rng = np.random.default_rng(seed)
    ang = rng.uniform(0, 2 * np.pi, n)
    d = rng.uniform(0.035, 0.06, n)
    bx, by = rng.uniform(-0.1, 0.1, n), rng.uniform(-0.1, 0.1, n)
    yaw = rng.uniform(-np.pi, np.pi, n)
    states = np.stack([bx, by, yaw, bx + d * np.cos(ang), by + d * np.sin(ang)], 1)
    mag = rng.uniform(0.003, 0.02, n)
    actions = -(mag * np.stack([np.cos(ang), np.sin(ang)])).T + rng.normal(0, 0.005, (n, 2))
    actions = np.clip(actions, -geom.workspace.a_max, geom.workspace.a_max)
    cfg = RealProxyConfig(true_params, sigma)
    nxt = real_step_batch(cfg, states, actions, np.random.default_rng(100 + seed), geom)
    return Dataset(states, actions, nxt, Tag.REAL, 1)


@pytest.fixture
def rng():
    return np.random.default_rng(12345)


# one line per acceptance criterion, printed after the test summary
ACCEPTANCE = {}


def record_acceptance(n: int, ok: bool, detail: str) -> bool:
    ACCEPTANCE[n] = (bool(ok), detail)
    return bool(ok)


def pytest_terminal_summary(terminalreporter):
    if not ACCEPTANCE:
        return
    terminalreporter.section("acceptance criteria")
    for n in sorted(ACCEPTANCE):
        ok, detail = ACCEPTANCE[n]
        terminalreporter.write_line(f"criterion {n}: {'PASS' if ok else 'FAIL'}  {detail}")
