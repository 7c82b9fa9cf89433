import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from rampreg.loss import (CompositeQuantileLoss, SquaredLoss, cumulative_weights,
                          loss_from_dict, rescaled_score, single_quantile_loss)


def make_loss(taus, weights, intercepts):
    return CompositeQuantileLoss(taus=np.asarray(taus, float),
                                 intercepts=np.asarray(intercepts, float),
                                 weights=np.asarray(weights, float))


LOSS_EQUAL3 = make_loss([0.25, 0.5, 0.75], [1 / 3] * 3, [-0.6745, 0.0, 0.6745])
MEDIAN = single_quantile_loss(0.5)


def checkloss_sum(loss, x):
    # independent oracle: direct weighted sum of check losses
    x = np.asarray(x, float)[..., None]
    u, taus, w = loss.intercepts, loss.taus, loss.weights
    return np.sum(w * (x - u) * (taus - (x <= u)), axis=-1)


def grid_prox(loss, z, b, lo, hi, step=1e-4):
    xs = np.arange(lo, hi, step)
    obj = b * loss.value(xs) + 0.5 * (xs - z) ** 2
    return xs[np.argmin(obj)], obj.min()


class TestCumulativeWeights:
    def test_equal_thirds(self):
        h = cumulative_weights([0.25, 0.5, 0.75], [1 / 3] * 3)
        np.testing.assert_allclose(h, [-0.5, -1 / 6, 1 / 6, 0.5], atol=1e-15)

    def test_single_median(self):
        np.testing.assert_allclose(cumulative_weights([0.5], [1.0]), [-0.5, 0.5])

    @given(st.integers(1, 6), st.integers(0, 10_000))
    def test_differences_recover_weights(self, K, seed):
        rng = np.random.default_rng(seed)
        taus = np.sort(rng.uniform(0.05, 0.95, K))
        w = rng.dirichlet(np.ones(K))
        h = cumulative_weights(taus, w)
        np.testing.assert_allclose(np.diff(h), w, atol=1e-14)


class TestLossValue:
    def test_single_quantile_03(self):
        loss = single_quantile_loss(0.3)
        assert loss.value(1.0) == pytest.approx(0.3)
        assert loss.value(-1.0) == pytest.approx(0.7)

    def test_kink_continuity(self):
        loss = LOSS_EQUAL3
        u1 = loss.intercepts[0]
        expected = sum(loss.weights[k] * (1 - loss.taus[k]) * (loss.intercepts[k] - u1)
                       for k in range(1, 3))
        assert loss.value(u1) == pytest.approx(expected, abs=1e-14)
        for du in (-1e-9, 1e-9):
            assert loss.value(u1 + du) == pytest.approx(expected, abs=1e-8)

    @given(st.floats(-20, 20), st.integers(0, 10_000))
    def test_matches_weighted_sum_oracle(self, x, seed):
        rng = np.random.default_rng(seed)
        K = rng.integers(1, 5)
        taus = np.sort(rng.uniform(0.05, 0.95, K))
        u = np.sort(rng.normal(0, 1, K))
        if np.any(np.diff(taus) <= 0) or np.any(np.diff(u) <= 0):
            return
        w = rng.dirichlet(np.ones(K))
        loss = make_loss(taus, w, u)
        np.testing.assert_allclose(loss.value(x), checkloss_sum(loss, x), atol=1e-12)

    @given(st.floats(-5, 5), st.floats(-5, 5))
    def test_midpoint_convexity(self, a, c):
        m = 0.5 * (a + c)
        lhs = LOSS_EQUAL3.value(m)
        rhs = 0.5 * (LOSS_EQUAL3.value(a) + LOSS_EQUAL3.value(c))
        assert lhs <= rhs + 1e-12


class TestSubgradient:
    def test_median_at_one(self):
        assert MEDIAN.subgradient(1.0) == (0.5, 0.5)

    def test_kink_interval(self):
        loss = LOSS_EQUAL3
        lo, hi = loss.subgradient(float(loss.intercepts[0]))
        assert lo == pytest.approx(loss.h[0])
        assert hi == pytest.approx(loss.h[1])

    @given(st.floats(-10, 10))
    def test_bounded_by_h_extremes(self, x):
        lo, hi = LOSS_EQUAL3.subgradient(x)
        assert LOSS_EQUAL3.h[0] - 1e-15 <= lo <= hi <= LOSS_EQUAL3.h[-1] + 1e-15


class TestProx:
    def test_median_values(self):
        assert MEDIAN.prox(1.0, 1.0) == pytest.approx(0.5)
        assert MEDIAN.prox(0.3, 1.0) == pytest.approx(0.0)
        assert MEDIAN.prox(-2.0, 1.0) == pytest.approx(-1.5)

    def test_median_against_grid_argmin(self):
        for z in (1.0, 0.3, -2.0):
            x_star, _ = grid_prox(MEDIAN, z, 1.0, -3, 3, step=1e-6)
            assert float(MEDIAN.prox(z, 1.0)) == pytest.approx(x_star, abs=2e-6)

    def test_squared_loss_closed_form(self):
        sq = SquaredLoss()
        z = np.linspace(-4, 4, 17)
        np.testing.assert_allclose(sq.prox(z, 2.5), z / 3.5)

    def test_band_boundary_branches_agree(self):
        loss = LOSS_EQUAL3
        b = 0.7
        for el in range(1, loss.K + 1):
            z = loss.intercepts[el - 1] + b * loss.h[el]
            open_branch = z - b * loss.h[el]
            assert float(loss.prox(z, b)) == pytest.approx(open_branch, abs=1e-14)
            assert open_branch == pytest.approx(loss.intercepts[el - 1], abs=1e-14)

    def test_rejects_nonpositive_b(self):
        with pytest.raises(ValueError):
            MEDIAN.prox(1.0, 0.0)

    def test_grid_oracle_random_batch(self):
        rng = np.random.default_rng(7)
        for _ in range(20):
            K = rng.integers(1, 4)
            taus = np.sort(rng.uniform(0.1, 0.9, K))
            u = np.sort(rng.normal(0, 0.5, K))
            if np.any(np.diff(taus) <= 0) or np.any(np.diff(u) <= 0):
                continue
            loss = make_loss(taus, rng.dirichlet(np.ones(K)), u)
            b = rng.uniform(0.05, 2.0)
            z = rng.uniform(-3, 3, 50)
            px = loss.prox(z, b)
            obj_px = b * loss.value(px) + 0.5 * (px - z) ** 2
            xs = np.arange(-4, 4, 1e-3)
            vals = b * loss.value(xs)
            grid_min = (vals[None, :] + 0.5 * (xs[None, :] - z[:, None]) ** 2).min(axis=1)
            assert np.all(obj_px <= grid_min + 1e-10)


class TestEffectiveScore:
    def test_median_values(self):
        assert MEDIAN.effective_score(1.0, 1.0) == pytest.approx(0.5)
        assert MEDIAN.effective_score(0.3, 1.0) == pytest.approx(0.3)
        assert MEDIAN.effective_score(-2.0, 1.0) == pytest.approx(-0.5)

    def test_squared(self):
        sq = SquaredLoss()
        z = np.linspace(-2, 2, 9)
        np.testing.assert_allclose(sq.effective_score(z, 3.0), 3.0 * z / 4.0)

    @given(st.floats(-30, 30), st.floats(0.01, 5.0), st.integers(0, 10_000))
    @settings(max_examples=200)
    def test_identity_with_prox(self, z, b, seed):
        rng = np.random.default_rng(seed)
        K = rng.integers(1, 5)
        taus = np.sort(rng.uniform(0.05, 0.95, K))
        u = np.sort(rng.normal(0, 1, K))
        if np.any(np.diff(taus) <= 0) or np.any(np.diff(u) <= 0):
            return
        loss = make_loss(taus, rng.dirichlet(np.ones(K)), u)
        gt = float(loss.effective_score(z, b))
        assert gt == pytest.approx(z - float(loss.prox(z, b)), abs=1e-12)
        assert abs(gt) <= loss.score_bound(b) + 1e-12

    @given(st.floats(-10, 10), st.floats(-10, 10), st.floats(0.05, 3.0))
    @settings(max_examples=200)
    def test_monotone_and_lipschitz(self, z1, z2, b):
        z1, z2 = min(z1, z2), max(z1, z2)
        g1 = float(LOSS_EQUAL3.effective_score(z1, b))
        g2 = float(LOSS_EQUAL3.effective_score(z2, b))
        assert -1e-12 <= g2 - g1 <= (z2 - z1) + 1e-12


class TestRescaledScore:
    def test_scaling_factor(self):
        z = np.linspace(-2, 2, 11)
        g = rescaled_score(MEDIAN, z, 1.0, delta=0.5, omega=0.01)
        np.testing.assert_allclose(g, 50.0 * MEDIAN.effective_score(z, 1.0))

    def test_identity_when_omega_equals_delta(self):
        z = np.linspace(-2, 2, 11)
        g = rescaled_score(MEDIAN, z, 0.7, delta=0.4, omega=0.4)
        np.testing.assert_allclose(g, MEDIAN.effective_score(z, 0.7))

    def test_componentwise_matches_scalar(self):
        z = np.array([-1.2, 0.1, 2.3])
        vec = rescaled_score(LOSS_EQUAL3, z, 0.9, 0.5, 0.05)
        scal = [float(rescaled_score(LOSS_EQUAL3, zi, 0.9, 0.5, 0.05)) for zi in z]
        np.testing.assert_allclose(vec, scal)

    def test_rejects_zero_omega(self):
        with pytest.raises(ValueError):
            rescaled_score(MEDIAN, 1.0, 1.0, 0.5, 0.0)


class TestSingleQuantileReduction:
    @given(st.floats(0.05, 0.95), st.floats(-10, 10), st.floats(0.05, 3.0))
    @settings(max_examples=100)
    def test_all_ops_match_check_loss(self, tau, x, b):
        loss = single_quantile_loss(tau)
        direct = x * (tau - (x <= 0))
        assert float(loss.value(x)) == pytest.approx(direct, abs=1e-12)
        # prox of the check loss: shrink toward 0 by b*tau / b*(1-tau)
        if x > b * tau:
            expected = x - b * tau
        elif x < -b * (1 - tau):
            expected = x + b * (1 - tau)
        else:
            expected = 0.0
        assert float(loss.prox(x, b)) == pytest.approx(expected, abs=1e-12)


def test_round_trip_serialization():
    d = LOSS_EQUAL3.to_dict()
    loss2 = loss_from_dict(d)
    np.testing.assert_array_equal(loss2.taus, LOSS_EQUAL3.taus)
    np.testing.assert_array_equal(loss2.weights, LOSS_EQUAL3.weights)
    np.testing.assert_array_equal(loss2.intercepts, LOSS_EQUAL3.intercepts)
    assert isinstance(loss_from_dict(SquaredLoss().to_dict()), SquaredLoss)


def test_invalid_specs_rejected():
    with pytest.raises(ValueError):
        make_loss([0.5, 0.25], [0.5, 0.5], [0.0, 1.0])
    with pytest.raises(ValueError):
        make_loss([0.25, 0.5], [0.5, 0.5], [1.0, 0.0])
    with pytest.raises(ValueError):
        make_loss([0.25, 0.5], [0.9, 0.3], [0.0, 1.0])
