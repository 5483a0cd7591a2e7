import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

import oracles as O
from conftest import contact_rich_dataset
from rsrloop.core import Dataset, Tag, ValidationError
from rsrloop.diffsim import RealProxyConfig, SimGeometry, SimParams, real_step_batch, step_batch
from rsrloop.tuner import (Optimizer, SimParamEstimator, TunerConfig, TunerInitError, descend, loss_and_grad,
                           physical_loss, physical_loss_grad, tune)

GEOM = SimGeometry()
TRUE = SimParams(mu_table=0.5)


@pytest.fixture(scope="module")
def data():
    return contact_rich_dataset(TRUE)


def oracle_loss(theta, ds, w_yaw=0.1):
    total = 0.0
    for s, a, s1 in zip(ds.states, ds.actions, ds.next_states):
        pred = O.step_square(theta, s, a, GEOM)
        r = s1 - pred
        r[2] = np.arctan2(np.sin(r[2]), np.cos(r[2]))
        total += r[0] ** 2 + r[1] ** 2 + w_yaw * r[2] ** 2 + r[3] ** 2 + r[4] ** 2
    return total / len(ds)


class TestLoss:
    def test_self_data_zero(self, data):
        assert physical_loss(TRUE, data) == 0.0

    def test_perturbed_positive(self, data):
        pert = TRUE.replace(mu_table=0.75)
        val = physical_loss(pert, data)
        assert val > 0
        assert val == pytest.approx(oracle_loss(pert.to_array(), data), rel=1e-9)

    def test_permutation(self, data, rng):
        perm = rng.permutation(len(data))
        shuf = Dataset(data.states[perm], data.actions[perm], data.next_states[perm], Tag.REAL, 1)
        pert = TRUE.replace(mu_contact=0.3)
        assert physical_loss(pert, shuf) == pytest.approx(physical_loss(pert, data), rel=1e-12)

    def test_empty(self):
        with pytest.raises(ValidationError):
            physical_loss(TRUE, Dataset.empty())


class TestGradient:
    def test_zero_at_truth(self, data):
        assert np.max(np.abs(physical_loss_grad(TRUE, data))) <= 1e-10

    def test_no_contact_zero(self, rng):
        n = 30
        states = np.column_stack([rng.uniform(-0.1, 0.1, (n, 3)), rng.uniform(0.4, 0.6, (n, 2))])
        actions = rng.uniform(-0.02, 0.02, (n, 2))
        nxt = real_step_batch(RealProxyConfig(TRUE, 1e-3), states, actions, rng)
        ds = Dataset(states, actions, nxt, Tag.REAL, 1)
        assert np.all(physical_loss_grad(SimParams(), ds) == 0.0)

    @pytest.mark.parametrize("theta", [[0.3, 0.5, 0.3, 400.0], [0.8, 0.3, 0.6, 900.0]])
    def test_vs_fd(self, data, theta):
        theta = np.array(theta)
        g = physical_loss_grad(theta, data)
        for i in range(4):
            fd = O.richardson_diff(lambda th: physical_loss(th, data), theta, i, 1e-6 * abs(theta[i]))
            assert abs(g[i] - fd) <= max(1e-4 * abs(fd), 1e-12), (i, g[i], fd)

    def test_loss_and_grad_consistent(self, data):
        p = TRUE.replace(block_mass=0.5)
        loss, grad = loss_and_grad(p, data)
        assert loss == physical_loss(p, data)
        assert np.array_equal(grad, physical_loss_grad(p, data))


class TestTune:
    def test_already_optimal(self, data):
        rep = tune(TRUE, data)
        assert rep.converged and rep.iterations_used <= 1
        assert rep.loss_history[-1] <= TunerConfig().loss_tol

    def test_recovers_mu_table(self, data):
        rep = tune(SimParams(mu_table=0.3), data)
        assert abs(rep.final_params.mu_table / 0.5 - 1) <= 0.05
        assert rep.loss_history[-1] < 1e-3 * rep.loss_history[0]

    def test_quadratic_closed_form(self):
        cfg = TunerConfig(learning_rate=0.1, max_iters=30, grad_tol=1e-14, loss_tol=1e-14)
        x, losses, xs, it, _, _ = descend(lambda t: float((t[0] - 2) ** 2),
                                          lambda t: (float((t[0] - 2) ** 2), np.array([2 * (t[0] - 2)])),
                                          [0.0], cfg, scale=np.ones(1), loss_scale=1.0)
        assert it == 30
        for n, xn in enumerate(xs):
            assert abs(xn[0] - (2 - 2 * 0.8 ** n)) <= 1e-12

    def test_monotone_and_bounded(self, data):
        cfg = TunerConfig(max_iters=100, param_bounds={"mu_table": (0.05, 0.45), "mu_contact": (0.05, 2.0),
                                                      "block_mass": (0.05, 5.0),
                                                      "contact_stiffness": (50.0, 5000.0)})
        rep = tune(SimParams(mu_table=0.2), data, cfg)
        assert np.all(np.diff(rep.loss_history) <= 0)
        lo, hi = cfg.bounds_array()
        for p in rep.param_history:
            th = p.to_array()
            assert np.all(th >= lo) and np.all(th <= hi)
        assert rep.final_params.mu_table == 0.45

    def test_unexcited_parameters_frozen(self, rng):
        n = 40
        states = np.column_stack([rng.uniform(-0.1, 0.1, (n, 3)), rng.uniform(0.4, 0.6, (n, 2))])
        actions = rng.uniform(-0.02, 0.02, (n, 2))
        nxt = real_step_batch(RealProxyConfig(TRUE, 1e-3), states, actions, rng)
        p0 = SimParams(0.3, 0.4, 0.2, 700.0)
        rep = tune(p0, Dataset(states, actions, nxt, Tag.REAL, 1))
        assert rep.final_params == p0

    def test_deterministic(self, data):
        cfg = TunerConfig(max_iters=40)
        a = tune(SimParams(mu_table=0.3), data, cfg)
        b = tune(SimParams(mu_table=0.3), data, cfg)
        assert a == b

    def test_adam(self, data):
        rep = tune(SimParams(mu_table=0.3), data, TunerConfig(optimizer="adam", learning_rate=0.02, max_iters=300))
        assert rep.loss_history[-1] < rep.loss_history[0]
        assert np.all(np.diff(rep.loss_history) <= 0)
        assert abs(rep.final_params.mu_table / 0.5 - 1) <= 0.05

    def test_init_error(self, data):
        with pytest.raises(TunerInitError):
            descend(lambda t: np.nan, lambda t: (np.nan, np.zeros(1)), [0.0], TunerConfig())

    def test_config_validation(self):
        with pytest.raises(ValidationError):
            TunerConfig(learning_rate=0.0)
        with pytest.raises(ValueError):
            TunerConfig(optimizer="sgd")
        assert TunerConfig(optimizer="adam").optimizer is Optimizer.ADAM

    @settings(max_examples=10, deadline=None)
    @given(st.floats(0.15, 1.0), st.floats(0.2, 1.0))
    def test_never_increases(self, mu_t, mass):
        ds = contact_rich_dataset(TRUE, n=40, seed=3)
        rep = tune(SimParams(mu_table=mu_t, block_mass=mass), ds, TunerConfig(max_iters=15))
        assert rep.loss_history[-1] <= rep.loss_history[0]
        assert np.all(np.diff(rep.loss_history) <= 0)


def test_estimator(data):
    est = SimParamEstimator(init_params=SimParams(mu_table=0.3)).fit(data)
    assert abs(est.params_.mu_table - 0.5) <= 0.025
    X = np.column_stack([data.states, data.actions])
    np.testing.assert_array_equal(est.predict(X), step_batch(est.params_, data.states, data.actions))
    assert est.score(data) == -physical_loss(est.params_, data)
    assert est.get_params()["learning_rate"] == 0.05
