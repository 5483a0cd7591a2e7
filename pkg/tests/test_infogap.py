import dataclasses

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from scipy import stats
from scipy.optimize import linprog

import oracles as O
from conftest import contact_rich_dataset
from rsrloop.core import Dataset, EnvAction, EnvState, Tag, Transition, ValidationError
from rsrloop.diffsim import SimParams, replay
from rsrloop.infogap import (GapContext, InfoGapReward, gap_coefficient, infogap_loss, informativeness,
                             intrinsic_reward, intrinsic_rewards, per_axis_kl)
from rsrloop.policy.ppo import PpoConfig, train_policy

X_ONLY = ("block_x",)


def _dataset(next_x, next_y=None, tag=Tag.SIM):
    n = len(next_x)
    nxt = np.zeros((n, 5))
    nxt[:, 0] = next_x
    nxt[:, 1] = 0.0 if next_y is None else next_y
    return Dataset(np.zeros((n, 5)), np.zeros((n, 2)), nxt, tag, 1)


def _probe(x, y=0.0):
    return Transition(EnvState(0, 0, 0, 0, 0), EnvAction(0, 0), EnvState(x, y, 0, 0, 0))


def _ctx(samples, gap=1.0, coords=X_ONLY, lam=1.0):
    samples = np.asarray(samples, float)
    ds = _dataset(samples[:, 0] if samples.ndim > 1 else samples,
                  samples[:, 1] if samples.ndim > 1 and samples.shape[1] > 1 else None)
    return GapContext.build(gap, ds, lam, coords)


def transport_lp(x, y):
    """W1 between two uniform empirical measures by solving the transport LP."""
    n, m = len(x), len(y)
    cost = np.abs(np.subtract.outer(x, y)).ravel()
    a_eq = np.zeros((n + m, n * m))
    for i in range(n):
        a_eq[i, i * m:(i + 1) * m] = 1
    for j in range(m):
        a_eq[n + j, j::m] = 1
    b_eq = np.concatenate([np.full(n, 1 / n), np.full(m, 1 / m)])
    return linprog(cost, A_eq=a_eq, b_eq=b_eq, bounds=(0, None), method="highs").fun


class TestGapCoefficient:
    def test_replay_at_truth(self):
        true = SimParams(mu_table=0.6)
        real = contact_rich_dataset(true)
        sim = replay(true, real)
        assert gap_coefficient(real, sim) <= 1e-6
        assert gap_coefficient(real, sim, ("block_x", "block_y", "block_yaw")) <= 1e-6

    def test_unit_shift(self):
        r = np.random.default_rng(0)
        real = _dataset(r.normal(0, 1, 5000), tag=Tag.REAL)
        sim = _dataset(r.normal(1, 1, 5000))
        assert abs(gap_coefficient(real, sim, X_ONLY) - O.gauss_kl(0, 1, 1, 1)) <= 0.1

    def test_mean_of_axes(self, rng):
        real = _dataset(rng.normal(size=200), rng.normal(size=200), Tag.REAL)
        sim = _dataset(rng.normal(0.5, 1, 200), rng.normal(0, 2, 200))
        kls = per_axis_kl(real, sim)
        assert gap_coefficient(real, sim) == pytest.approx(np.mean(list(kls.values())), rel=1e-15)

    def test_permutation_invariant(self, rng):
        real = _dataset(rng.normal(size=100), rng.normal(size=100), Tag.REAL)
        sim = _dataset(rng.normal(0.3, 1, 120), rng.normal(size=120))
        perm = rng.permutation(100)
        shuffled = Dataset(real.states[perm], real.actions[perm], real.next_states[perm], Tag.REAL, 1)
        assert gap_coefficient(shuffled, sim) == pytest.approx(gap_coefficient(real, sim), abs=1e-12)

    def test_empty(self, rng):
        with pytest.raises(ValidationError):
            gap_coefficient(Dataset.empty(), _dataset(rng.normal(size=5)))

    def test_unknown_coordinate(self, rng):
        d = _dataset(rng.normal(size=5))
        with pytest.raises(ValidationError):
            gap_coefficient(d, d, ("speed",))


class TestInformativeness:
    @pytest.mark.parametrize("n", [2, 4, 7])
    def test_duplicate_probe(self, rng, n):
        base = rng.normal(size=n)
        ctx = _ctx(base)
        v = informativeness(ctx, [_probe(base[1])])[0]
        aug = np.append(base, base[1])
        assert v == pytest.approx(transport_lp(aug, base), abs=1e-9)
        assert v == pytest.approx(O.w_cdf(aug, base), abs=1e-12)
        assert v > 0

    @settings(max_examples=40, deadline=None)
    @given(st.integers(0, 10**6))
    def test_matches_scipy(self, seed):
        r = np.random.default_rng(seed)
        base = r.normal(size=(r.integers(1, 40), 2))
        probe = r.normal(size=2) * 3
        ctx = _ctx(base, coords=("block_x", "block_y"))
        v = informativeness(ctx, [_probe(*probe)])[0]
        ref = np.mean([stats.wasserstein_distance(np.append(base[:, d], probe[d]), base[:, d]) for d in range(2)])
        assert v == pytest.approx(ref, abs=1e-12)

    def test_outlier_larger(self, rng):
        base = rng.normal(size=50)
        ctx = _ctx(base)
        far = base.mean() + 10 * base.std(ddof=1)
        v = informativeness(ctx, [_probe(base.mean()), _probe(far)])
        assert v[1] > v[0]

    def test_shape_and_order(self, rng):
        ctx = _ctx(rng.normal(size=30))
        xs = rng.normal(size=9) * 3
        v = informativeness(ctx, [_probe(x) for x in xs])
        assert v.shape == (9,)
        single = [informativeness(ctx, [_probe(x)])[0] for x in xs]
        np.testing.assert_array_equal(v, single)

    def test_monotone_outward(self, rng):
        # the transport cost of one extra atom is convex in its position with
        # its minimum at the median, so it grows along every ray from there
        base = rng.normal(size=(40, 2))
        ctx = _ctx(base, coords=("block_x", "block_y"))
        med = np.median(base, axis=0)
        for d, sign in [(0, 1), (0, -1), (1, 1), (1, -1)]:
            radii = np.linspace(0, 5, 20)
            pts = np.tile(med, (20, 1))
            pts[:, d] += sign * radii
            v = informativeness(ctx, [_probe(*p) for p in pts])
            assert np.all(np.diff(v) >= 0)

    def test_higher_order(self, rng):
        base = rng.normal(size=12)
        ctx = dataclasses.replace(_ctx(base), order=2.0)
        v = informativeness(ctx, [_probe(0.7)])[0]
        assert v == pytest.approx(O.w_cdf(np.append(base, 0.7), base, 2.0), abs=1e-12)

    def test_non_finite_probe(self, rng):
        ctx = _ctx(rng.normal(size=5))
        bad = np.zeros((1, 5))
        bad[0, 0] = np.nan
        with pytest.raises(ValidationError):
            informativeness(ctx, bad)


class TestLoss:
    def test_zero_gap(self, rng):
        ctx = _ctx(rng.normal(size=20), gap=0.0)
        batch = [_probe(x) for x in rng.normal(size=5) * 4]
        assert infogap_loss(ctx, batch) == 0.0
        assert np.all(intrinsic_rewards(ctx, batch) == 0.0)

    def test_arithmetic(self):
        # one baseline atom at 0 and a probe at 0.6: W1 = 0.6 / 2 = 0.3
        ctx = _ctx([0.0], gap=2.0)
        assert informativeness(ctx, [_probe(0.6)])[0] == pytest.approx(0.3, abs=1e-15)
        assert infogap_loss(ctx, [_probe(0.6)]) == pytest.approx(-0.6, abs=1e-15)

    def test_bilinear(self, rng):
        ctx = _ctx(rng.normal(size=25), gap=0.37, lam=0.8)
        batch = [_probe(x) for x in rng.normal(size=6)]
        assert infogap_loss(ctx.with_gap(0.74), batch) == 2 * infogap_loss(ctx, batch)
        np.testing.assert_allclose(intrinsic_rewards(ctx.with_gap(0.74 * 3), batch),
                                   3 * intrinsic_rewards(ctx.with_gap(0.74), batch), rtol=1e-14)

    @settings(max_examples=30, deadline=None)
    @given(st.integers(0, 10**6), st.floats(0, 5), st.floats(0, 3))
    def test_reward_matches_loss(self, seed, gap, lam):
        r = np.random.default_rng(seed)
        ctx = _ctx(r.normal(size=(15, 2)), gap, ("block_x", "block_y"), lam)
        t = _probe(*r.normal(size=2))
        assert intrinsic_reward(ctx, t) == -infogap_loss(ctx, [t])
        assert infogap_loss(ctx, [t]) <= 0

    def test_empty_batch(self, rng):
        with pytest.raises(ValidationError):
            infogap_loss(_ctx(rng.normal(size=5)), [])

    def test_context_validation(self, rng):
        with pytest.raises(ValidationError):
            _ctx(rng.normal(size=5), gap=-1.0)
        with pytest.raises(ValidationError):
            _ctx(rng.normal(size=5), lam=float("nan"))

    def test_estimator(self, rng):
        real = _dataset(rng.normal(size=100), rng.normal(size=100), Tag.REAL)
        sim = _dataset(rng.normal(0.4, 1, 100), rng.normal(size=100))
        est = InfoGapReward().fit(real, sim)
        assert est.gap_coeff_ == gap_coefficient(real, sim)
        batch = [_probe(x) for x in rng.normal(size=4)]
        np.testing.assert_array_equal(est.transform(batch), intrinsic_rewards(est.context_, batch))
        assert est.score(batch) == -infogap_loss(est.context_, batch)


def test_freezing_contract(rng):
    ctx = _ctx(rng.normal(0, 0.05, (200, 2)), gap=0.5, coords=("block_x", "block_y"))
    gap, base, samples = ctx.gap_coeff, ctx.sim_baseline, ctx.sim_samples.tobytes()
    base_samples = base.samples_.tobytes()
    with pytest.raises(dataclasses.FrozenInstanceError):
        ctx.gap_coeff = 1.0
    train_policy(SimParams(), ctx, PpoConfig(total_steps=2048), np.random.default_rng(0))
    assert ctx.gap_coeff is gap and ctx.sim_baseline is base
    assert ctx.sim_samples.tobytes() == samples and base.samples_.tobytes() == base_samples
