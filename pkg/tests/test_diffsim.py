import dataclasses

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

import oracles as O
from conftest import near_block_cases, random_params
from rsrloop.core import Dataset, EnvAction, EnvState, Tag, ValidationError
from rsrloop.diffsim import (RealProxyConfig, SimGeometry, SimParams, real_step, real_step_batch, replay, rollout,
                             step, step_batch, step_with_sensitivity, step_with_sensitivity_batch)
from rsrloop.diffsim.dual import Dual

GEOM = SimGeometry()
TBLOCK = SimGeometry(shape="tblock")


def fd_jacobian(theta, s, a, geom, rel=1e-6):
    cols = []
    for i in range(4):
        h = rel * abs(theta[i])
        cols.append(O.richardson_diff(lambda th: step_batch(th, s[None], a[None], geom)[0], theta, i, h))
    return np.stack(cols, axis=1)


def assert_jac_close(jac, fd, rtol=1e-4, atol=1e-8):
    err = np.abs(jac - fd)
    assert np.all(err <= np.maximum(rtol * np.abs(fd), atol)), (jac, fd)


class TestParams:
    def test_positive(self):
        with pytest.raises(ValidationError):
            SimParams(mu_table=0.0)
        with pytest.raises(ValidationError):
            SimParams(mu_contact=2.5)
        with pytest.raises(ValidationError):
            SimParams(block_mass=float("nan"))

    def test_array_round_trip(self):
        p = SimParams(0.4, 0.7, 0.2, 900.0)
        assert SimParams.from_array(p.to_array()) == p

    def test_geometry_dict_round_trip(self):
        g = SimGeometry(shape="tblock", substeps=7)
        assert SimGeometry.from_dict(g.to_dict()) == g


class TestStep:
    def test_far_effector_moves_exactly(self):
        s = EnvState(0.0, 0.0, 0.2, 0.5, 0.0)
        a = EnvAction(0.013, -0.007)
        out = step(SimParams(), s, a)
        assert out.block_x == 0.0 and out.block_y == 0.0 and out.block_yaw == 0.2
        assert out.effector_x == 0.5 + 0.013 and out.effector_y == -0.007

    def test_zero_action_fixed_point(self):
        s = EnvState(0.1, -0.2, 1.0, -0.3, 0.4)
        assert step(SimParams(), s, EnvAction(0.0, 0.0)) == s

    def test_action_clamped(self):
        s = EnvState(0.0, 0.0, 0.0, 0.5, 0.5)
        out = step(SimParams(), s, EnvAction(0.5, -0.5))
        assert out.effector_x == 0.52 and out.effector_y == 0.48

    def test_push_plus_x_matches_oracle(self):
        theta = SimParams().to_array()
        s = np.array([0.0, 0.0, 0.0, -0.05, 0.0])
        a = np.array([0.02, 0.0])
        out = step_batch(theta, s[None], a[None])[0]
        assert out[0] > 0.0
        # same discretization: scalar re-implementation agrees to rounding
        np.testing.assert_allclose(out, O.step_square(theta, s, a, GEOM), rtol=0, atol=1e-12)
        fine_geom = dataclasses.replace(GEOM, substeps=GEOM.substeps * 100)
        fine = O.step_square(theta, s, a, GEOM, substeps=GEOM.substeps * 100)
        np.testing.assert_allclose(step_batch(theta, s[None], a[None], fine_geom)[0], fine, atol=1e-12)
        mid = O.step_square(theta, s, a, GEOM, substeps=GEOM.substeps * 10)
        # refining the effector increments converges toward the fine oracle
        err_default = abs(out[0] - fine[0])
        err_mid = abs(mid[0] - fine[0])
        assert err_mid < err_default
        assert err_default <= 0.2 * (fine[0] - s[0])

    def test_matches_oracle_random(self, rng):
        S, A = near_block_cases(rng, 40)
        P = random_params(rng, 40)
        out = step_batch(P, S, A)
        for i in range(40):
            np.testing.assert_allclose(out[i], O.step_square(P[i], S[i], A[i], GEOM), atol=1e-12)

    def test_deterministic(self, rng):
        S, A = near_block_cases(rng, 50)
        assert step_batch(SimParams(), S, A).tobytes() == step_batch(SimParams(), S, A).tobytes()

    def test_tblock_push_moves_block(self):
        s = np.array([0.0, 0.0, 0.0, -0.08, 0.0])
        out = step_batch(SimParams(), s[None], np.array([[0.02, 0.0]]), TBLOCK)[0]
        assert out[0] > 0.0

    def test_workspace_clamp(self):
        s = EnvState(0.0, 0.0, 0.0, 0.995, 0.0)
        out = step(SimParams(), s, EnvAction(0.02, 0.0))
        assert out.effector_x == 1.0

    def test_dual_values_bit_identical(self, rng):
        S, A = near_block_cases(rng, 64)
        plain = step_batch(SimParams(), S, A)
        nxt, _ = step_with_sensitivity_batch(SimParams(), S, A)
        assert plain.tobytes() == nxt.tobytes()


class TestSensitivity:
    def test_no_contact_zero(self):
        s = EnvState(0.0, 0.0, 0.0, 0.5, 0.0)
        _, sens = step_with_sensitivity(SimParams(), s, EnvAction(0.01, 0.01))
        assert sens.jacobian.shape == (5, 4)
        assert np.all(sens.jacobian == 0.0)

    @pytest.mark.parametrize("geom", [GEOM, TBLOCK], ids=["square", "tblock"])
    def test_contact_vs_fd(self, rng, geom):
        S, A = near_block_cases(rng, 60, geom, reach=(0.04, 0.06) if geom is GEOM else (0.04, 0.09))
        P = random_params(rng, 60)
        _, jac = step_with_sensitivity_batch(P, S, A, geom)
        n_contact = 0
        for i in range(60):
            fd = fd_jacobian(P[i], S[i], A[i], geom)
            assert_jac_close(jac[i], fd)
            n_contact += bool(np.any(jac[i] != 0))
        assert n_contact >= 20

    def test_stiffness_doubling(self):
        s = np.array([0.0, 0.0, 0.0, -0.042, 0.004])
        a = np.array([0.01, 0.0])
        grads = []
        for k in (400.0, 800.0):
            theta = np.array([0.5, 0.5, 0.3, k])
            _, jac = step_with_sensitivity_batch(theta, s[None], a[None])
            fd = fd_jacobian(theta, s, a, GEOM)
            assert_jac_close(jac[0], fd)
            grads.append(jac[0, 0, 3])
        assert grads[0] != 0.0 and grads[1] != 0.0

    @settings(max_examples=40, deadline=None)
    @given(st.floats(0.0, 2 * np.pi), st.floats(0.12, 0.8), st.floats(-0.02, 0.02), st.floats(-0.02, 0.02))
    def test_no_contact_independence(self, ang, dist, ax, ay):
        s = np.array([0.0, 0.0, 0.3, dist * np.cos(ang), dist * np.sin(ang)])
        _, jac = step_with_sensitivity_batch(SimParams(), s[None], np.array([[ax, ay]]))
        assert np.all(jac == 0.0)

    def test_smoothness(self, rng):
        S, A = near_block_cases(rng, 30, reach=(0.04, 0.055))
        theta = SimParams().to_array()
        base, jac = step_with_sensitivity_batch(theta, S, A)
        for _ in range(5):
            d = rng.normal(0, 1e-6, 4) * np.abs(theta)
            moved = step_batch(theta + d, S, A)
            lin = np.einsum("bcj,j->bc", jac, d)
            bound = 2.0 * np.abs(lin) + 1e-12
            assert np.all(np.abs(moved - base) <= bound)


class TestProxy:
    def test_noiseless_equals_step(self, rng):
        S, A = near_block_cases(rng, 20)
        cfg = RealProxyConfig(SimParams(mu_table=0.6), 0.0)
        out = real_step_batch(cfg, S, A, np.random.default_rng(0))
        assert np.array_equal(out, step_batch(cfg.true_params, S, A))

    def test_seeded_determinism(self):
        cfg = RealProxyConfig()
        s, a = EnvState(0, 0, 0, -0.05, 0), EnvAction(0.01, 0)
        assert real_step(cfg, s, a, np.random.default_rng(3)) == real_step(cfg, s, a, np.random.default_rng(3))

    def test_noise_std(self):
        cfg = RealProxyConfig(obs_noise_sigma=1e-3)
        S = np.tile([0.0, 0.0, 0.0, 0.5, 0.0], (10_000, 1))
        A = np.zeros((10_000, 2))
        out = real_step_batch(cfg, S, A, np.random.default_rng(7))
        assert abs(out[:, 0].std(ddof=1) / 1e-3 - 1) < 0.05
        assert np.all(out[:, 2] == 0.0)

    def test_negative_sigma(self):
        with pytest.raises(ValidationError):
            RealProxyConfig(obs_noise_sigma=-1.0)


class TestReplay:
    def _real(self, rng, n=50, sigma=0.0, params=SimParams(mu_table=0.6)):
        S, A = near_block_cases(rng, n)
        nxt = real_step_batch(RealProxyConfig(params, sigma), S, A, rng)
        return Dataset(S, A, nxt, Tag.REAL, 3)

    def test_self_consistency(self, rng):
        ds = self._real(rng)
        out = replay(SimParams(mu_table=0.6), ds)
        np.testing.assert_array_equal(out.next_states, ds.next_states)

    def test_structure(self, rng):
        ds = self._real(rng, sigma=1e-3)
        out = replay(SimParams(), ds)
        assert len(out) == 50 and out.tag is Tag.SIM and out.iteration == 3
        assert out.states.tobytes() == ds.states.tobytes()
        assert out.actions.tobytes() == ds.actions.tobytes()

    def test_perturbed_mu_table(self, rng):
        true = SimParams(mu_table=0.6)
        ds = self._real(rng, params=true)
        pert = true.replace(mu_table=0.9)
        out = replay(pert, ds)
        sens = np.abs(step_with_sensitivity_batch(true, ds.states, ds.actions)[1][:, :, 0]).max(axis=1)
        moved = sens > 1e-6
        gap = np.linalg.norm(out.next_states - ds.next_states, axis=1)
        assert moved.sum() >= 10
        assert np.all(gap[moved] > 0)
        assert np.all(gap[sens == 0] == 0)
        for i in np.flatnonzero(moved)[:10]:
            ref = O.step_square(pert.to_array(), ds.states[i], ds.actions[i], GEOM)
            np.testing.assert_allclose(out.next_states[i], ref, atol=1e-12)

    def test_empty(self):
        with pytest.raises(ValidationError):
            replay(SimParams(), Dataset.empty())


class TestRollout:
    @staticmethod
    def policy(s, rng):
        return np.array([0.01, 0.3 * (s[1] - s[4])]) + rng.normal(0, 0.002, 2)

    def test_horizon_one(self):
        ds = rollout(SimParams(), self.policy, EnvState(0, 0, 0, -0.08, 0), 1, np.random.default_rng(0))
        assert len(ds) == 1

    def test_determinism(self):
        s0 = EnvState(0, 0, 0, -0.08, 0)
        a = rollout(SimParams(), self.policy, s0, 30, np.random.default_rng(5))
        b = rollout(SimParams(), self.policy, s0, 30, np.random.default_rng(5))
        assert a == b

    def test_chaining(self):
        ds = rollout(SimParams(), self.policy, EnvState(0, 0, 0, -0.08, 0), 20, np.random.default_rng(1))
        assert np.array_equal(ds.states[1:], ds.next_states[:-1])
        assert ds.next_states[-1, 0] > 0.0
        assert np.all(np.abs(ds.actions) <= GEOM.workspace.a_max)


def test_dual_arithmetic():
    x = Dual(2.0, np.array([1.0, 0.0]))
    y = Dual(3.0, np.array([0.0, 1.0]))
    z = np.tanh(x * y) + np.sqrt(x) / y
    h = 1e-6
    fx = (np.tanh((2 + h) * 3) + np.sqrt(2 + h) / 3 - np.tanh((2 - h) * 3) - np.sqrt(2 - h) / 3) / (2 * h)
    assert z.tangent[0] == pytest.approx(fx, rel=1e-6)
