"""Tests for the choice-function likelihood, its reductions, and gradients."""

import numpy as np
import pytest
from scipy.special import ndtr
from scipy.stats import norm

from gpchoice.data import ChoiceDataset, ChoiceObservation, ObjectTable, encode_pairs
from gpchoice.errors import ValidationError
from gpchoice.likelihood import (
    SIGMA_MIN,
    batch_likelihood,
    dominance_prob,
    grad_log_lik,
    log1mexp,
    log_lik_dataset,
    log_lik_observation,
    per_observation_log_lik,
    preference_prob,
    probit_log_lik,
    validate_sigma,
)


def make_dataset(t, observations):
    """Dataset over t placeholder objects (features are irrelevant here)."""
    table = ObjectTable(np.arange(t, dtype=float)[:, None])
    return ChoiceDataset(table, tuple(ChoiceObservation(a, c) for a, c in observations))


def random_dataset(rng, t=8, m=6, max_size=4):
    obs = []
    for _ in range(m):
        size = int(rng.integers(2, max_size + 1))
        a = rng.choice(t, size=size, replace=False)
        n_chosen = int(rng.integers(1, size + 1))
        c = rng.choice(a, size=n_chosen, replace=False)
        obs.append((tuple(int(i) for i in a), tuple(int(i) for i in c)))
    return make_dataset(t, obs)


class TestValidateSigma:
    def test_floor(self):
        with pytest.raises(ValidationError):
            validate_sigma(SIGMA_MIN / 2)
        with pytest.raises(ValidationError):
            validate_sigma(0.0)

    def test_non_finite(self):
        with pytest.raises(ValidationError):
            validate_sigma(np.nan)
        with pytest.raises(ValidationError):
            validate_sigma(np.inf)

    def test_passthrough(self):
        assert validate_sigma(0.3) == 0.3
        assert validate_sigma(SIGMA_MIN) == SIGMA_MIN


class TestLog1mexp:
    def test_matches_reference_formulas(self):
        # Cross-check each implementation branch against an independently
        # accurate formula for that region.
        deep = np.linspace(-30.0, -10.0, 50)  # log(1-t) ~ -(t + t^2/2 + t^3/3)
        t = np.exp(deep)
        np.testing.assert_allclose(log1mexp(deep), -(t + t**2 / 2 + t**3 / 3), rtol=1e-12)
        small = np.linspace(-9.0, -0.8, 50)  # implementation: log1p(-exp(x))
        np.testing.assert_allclose(log1mexp(small), np.log(-np.expm1(small)), rtol=1e-12)
        large = np.linspace(-0.6, -0.01, 50)  # implementation: log(-expm1(x))
        np.testing.assert_allclose(log1mexp(large), np.log1p(-np.exp(large)), rtol=1e-12)

    def test_complement_identity(self):
        x = -np.logspace(-12, 2, 200)
        np.testing.assert_allclose(np.exp(log1mexp(x)) + np.exp(x), 1.0, rtol=1e-10)

    def test_tiny_argument(self):
        # log(1 - exp(-eps)) ~ log(eps); the naive form would return -inf.
        np.testing.assert_allclose(log1mexp(np.array(-1e-15)), np.log(1e-15), rtol=1e-6)


class TestDominanceProb:
    def test_equal_utilities_two_dims(self):
        assert dominance_prob([0.3, -1.0], [0.3, -1.0], 1.0) == 0.25

    def test_zero_difference_one_dim(self):
        assert dominance_prob([2.0], [2.0], 1.0) == 0.5

    def test_indicator_limit(self):
        # o strictly below v in one coordinate: small sigma drives the product to 0.
        assert dominance_prob([1.0, 0.0], [0.0, 1.0], 1e-3) < 1e-12
        # o strictly above in every coordinate: limit is 1.
        assert dominance_prob([1.0, 1.0], [0.0, 0.0], 1e-3) > 1.0 - 1e-12

    def test_shape_mismatch(self):
        with pytest.raises(ValidationError):
            dominance_prob([1.0, 0.0], [1.0], 1.0)

    def test_range_and_monotonicity(self):
        rng = np.random.default_rng(0)
        for _ in range(50):
            o, v = rng.normal(size=(2, 3))
            sigma = float(rng.uniform(0.05, 2.0))
            p = dominance_prob(o, v, sigma)
            assert 0.0 <= p <= 1.0
            # raising any coordinate of o cannot lower the dominance probability
            bumped = o.copy()
            bumped[int(rng.integers(3))] += 0.5
            assert dominance_prob(bumped, v, sigma) >= p


class TestLogLikObservation:
    def test_binary_zero_difference(self):
        obs = ChoiceObservation((0, 1), (0,))
        u = np.zeros((2, 1))
        np.testing.assert_allclose(log_lik_observation(obs, u, 1.0), np.log(0.5), rtol=1e-12)

    def test_incomparable_pair_zero_difference(self):
        obs = ChoiceObservation((0, 1), (0, 1))
        u = np.zeros((2, 2))
        # 1 - Phi(0)^2 - Phi(0)^2 = 0.5
        np.testing.assert_allclose(log_lik_observation(obs, u, 1.0), np.log(0.5), rtol=1e-12)

    def test_front_with_rejected_middle_is_near_certain(self):
        u = np.array([[1.0, 0.0], [0.54, -0.84], [0.0, 1.0]])
        obs = ChoiceObservation((0, 1, 2), (0, 2))
        value = log_lik_observation(obs, u, 0.01)
        assert value > np.log(0.99)

    def test_nonpositive(self):
        rng = np.random.default_rng(1)
        for _ in range(50):
            ds = random_dataset(rng, t=6, m=1)
            u = rng.normal(size=(6, 2))
            assert log_lik_observation(ds.observations[0], u, 0.7) <= 0.0


class TestLogLikDataset:
    def test_single_observation_matches(self):
        rng = np.random.default_rng(2)
        ds = random_dataset(rng, t=5, m=1)
        u = rng.normal(size=(5, 3))
        np.testing.assert_allclose(
            log_lik_dataset(ds, u, 0.5),
            log_lik_observation(ds.observations[0], u, 0.5),
            rtol=1e-14,
        )

    def test_column_permutation_invariance(self):
        rng = np.random.default_rng(3)
        for _ in range(20):
            d = int(rng.integers(2, 5))
            ds = random_dataset(rng, t=7, m=5)
            u = rng.normal(size=(7, d))
            base = log_lik_dataset(ds, u, 0.6)
            perm = rng.permutation(d)
            assert abs(log_lik_dataset(ds, u[:, perm], 0.6) - base) <= 1e-12

    def test_binary_reduction_to_probit(self):
        # Exact in the regime where no factor reaches the clamp, i.e. every
        # scaled difference stays above Phi^{-1}(1e-12) ~ -7.
        rng = np.random.default_rng(4)
        for _ in range(50):
            t = 6
            obs = []
            diffs = []
            u = rng.normal(size=(t, 1))
            for _ in range(8):
                i, j = rng.choice(t, size=2, replace=False)
                obs.append(((int(i), int(j)), (int(i),)))
                diffs.append(u[i, 0] - u[j, 0])
            ds = make_dataset(t, obs)
            sigma = float(rng.uniform(0.8, 2.0))
            assert abs(log_lik_dataset(ds, u, sigma) - probit_log_lik(diffs, sigma)) <= 1e-12

    def test_translation_invariance_per_column(self):
        rng = np.random.default_rng(5)
        ds = random_dataset(rng, t=8, m=6)
        u = rng.normal(size=(8, 3))
        base = log_lik_dataset(ds, u, 0.4)
        for i in range(3):
            shifted = u.copy()
            shifted[:, i] += 7.3
            np.testing.assert_allclose(log_lik_dataset(ds, shifted, 0.4), base, rtol=1e-9)

    def test_sigma_limit_on_consistent_data(self):
        # Choices equal to the exact Pareto front: every factor saturates at 1.
        u = np.array([[2.0, 0.0], [1.0, 1.0], [0.0, 2.0], [-1.0, -1.0]])
        ds = make_dataset(4, [((0, 1, 2, 3), (0, 1, 2))])
        assert log_lik_dataset(ds, u, SIGMA_MIN) > -1e-6

    def test_sigma_limit_on_violating_data(self):
        # The rejected object dominates the chosen one: factor collapses to eps.
        u = np.array([[1.0, 1.0], [0.0, 0.0]])
        ds = make_dataset(2, [((0, 1), (1,))])
        assert log_lik_dataset(ds, u, SIGMA_MIN) < -20.0

    def test_monotone_sensibility_of_rejection_factors(self):
        rng = np.random.default_rng(6)
        for _ in range(25):
            u = rng.normal(size=(4, 2))
            ds = make_dataset(4, [((0, 1, 2, 3), (0,))])
            before = log_lik_dataset(ds, u, 0.5)
            raised = u.copy()
            raised[0] += 0.3  # chosen object improves in every dimension
            assert log_lik_dataset(ds, raised, 0.5) >= before - 1e-12


class TestPerObservation:
    def test_sums_to_dataset_value(self):
        rng = np.random.default_rng(7)
        ds = random_dataset(rng, t=9, m=7)
        enc = encode_pairs(ds)
        u = rng.normal(size=(9, 2))
        per = per_observation_log_lik(enc, u, 0.8)
        assert per.shape == (7,)
        np.testing.assert_allclose(per.sum(), log_lik_dataset(ds, u, 0.8), rtol=1e-12)

    def test_matches_per_observation_direct_eval(self):
        rng = np.random.default_rng(8)
        ds = random_dataset(rng, t=8, m=10)
        enc = encode_pairs(ds)
        u = rng.normal(size=(8, 2))
        per = per_observation_log_lik(enc, u, 0.6)
        direct = [log_lik_observation(o, u, 0.6) for o in ds.observations]
        np.testing.assert_allclose(per, direct, rtol=1e-12)

    def test_batched_utilities(self):
        rng = np.random.default_rng(9)
        ds = random_dataset(rng, t=6, m=5)
        enc = encode_pairs(ds)
        batch = rng.normal(size=(4, 6, 2))
        out = per_observation_log_lik(enc, batch, 0.5)
        assert out.shape == (4, 5)
        for s in range(4):
            np.testing.assert_allclose(
                out[s], per_observation_log_lik(enc, batch[s], 0.5), rtol=1e-13
            )

    def test_trailing_observation_without_rejection_groups(self):
        # Last observation chooses everything: it contributes pair factors only.
        # Segment reduction must keep its (empty) rejection segment at zero.
        ds = make_dataset(
            5, [((0, 1, 2), (0,)), ((0, 1), (0,)), ((2, 3, 4), (2, 3, 4))]
        )
        rng = np.random.default_rng(10)
        u = rng.normal(size=(5, 2))
        enc = encode_pairs(ds)
        per = per_observation_log_lik(enc, u, 0.7)
        direct = [log_lik_observation(o, u, 0.7) for o in ds.observations]
        np.testing.assert_allclose(per, direct, rtol=1e-12)

    def test_trailing_binary_observation_without_pairs(self):
        # Last observation is binary: no incomparability pairs at the tail.
        ds = make_dataset(
            5, [((0, 1, 2), (0, 1)), ((1, 2, 3), (1, 2)), ((3, 4), (3,))]
        )
        rng = np.random.default_rng(11)
        u = rng.normal(size=(5, 2))
        enc = encode_pairs(ds)
        per = per_observation_log_lik(enc, u, 0.7)
        direct = [log_lik_observation(o, u, 0.7) for o in ds.observations]
        np.testing.assert_allclose(per, direct, rtol=1e-12)

    def test_interleaved_empty_segments(self):
        # Alternate factor kinds so both pointer arrays contain interior gaps.
        ds = make_dataset(
            6,
            [
                ((0, 1), (0,)),          # group only
                ((1, 2, 3), (1, 2, 3)),  # pairs only
                ((3, 4), (4,)),          # group only
                ((0, 4, 5), (0, 5)),     # pairs and one group
            ],
        )
        rng = np.random.default_rng(12)
        u = rng.normal(size=(6, 2))
        per = per_observation_log_lik(encode_pairs(ds), u, 0.9)
        direct = [log_lik_observation(o, u, 0.9) for o in ds.observations]
        np.testing.assert_allclose(per, direct, rtol=1e-12)


def fd_grad(ds, u, sigma, h=1e-5):
    """Central finite differences of log_lik_dataset in u and sigma."""
    gu = np.zeros_like(u)
    for idx in np.ndindex(*u.shape):
        up, dn = u.copy(), u.copy()
        up[idx] += h
        dn[idx] -= h
        gu[idx] = (log_lik_dataset(ds, up, sigma) - log_lik_dataset(ds, dn, sigma)) / (2 * h)
    gs = (log_lik_dataset(ds, u, sigma + h) - log_lik_dataset(ds, u, sigma - h)) / (2 * h)
    return gu, gs


class TestGradLogLik:
    def test_matches_finite_differences(self):
        # Utilities and sigma are drawn so factors stay clear of the clamp;
        # crossing the clamp within the step h would make the FD one-sided.
        rng = np.random.default_rng(13)
        for _ in range(25):
            t = int(rng.integers(4, 9))
            d = int(rng.integers(1, 3))
            ds = random_dataset(rng, t=t, m=5)
            u = 0.7 * rng.normal(size=(t, d))
            sigma = float(rng.uniform(0.5, 1.5))
            gu, gs = grad_log_lik(ds, u, sigma)
            fu, fs = fd_grad(ds, u, sigma)
            np.testing.assert_allclose(gu, fu, rtol=1e-5, atol=1e-6)
            np.testing.assert_allclose(gs, fs, rtol=1e-5, atol=1e-6)

    def test_antisymmetric_at_symmetric_point(self):
        ds = make_dataset(2, [((0, 1), (0, 1))])
        gu, _ = grad_log_lik(ds, np.zeros((2, 2)), 1.0)
        np.testing.assert_allclose(gu[0] + gu[1], 0.0, atol=1e-14)
        np.testing.assert_allclose(gu[0], -gu[1], atol=1e-14)

    def test_columns_sum_to_zero(self):
        # Translation invariance forces each latent column's gradient to sum to 0.
        rng = np.random.default_rng(14)
        for _ in range(10):
            ds = random_dataset(rng, t=7, m=6)
            u = rng.normal(size=(7, 2))
            gu, _ = grad_log_lik(ds, u, 0.6)
            np.testing.assert_allclose(gu.sum(axis=0), 0.0, atol=1e-10)

    def test_binary_probit_gradient(self):
        # d=1 pairwise data: the gradient is the probit score phi/Phi on each row.
        rng = np.random.default_rng(15)
        u = rng.normal(size=(4, 1))
        ds = make_dataset(4, [((0, 1), (0,)), ((2, 3), (2,))])
        sigma = 0.8
        gu, _ = grad_log_lik(ds, u, sigma)
        expected = np.zeros((4, 1))
        for i, j in [(0, 1), (2, 3)]:
            z = (u[i, 0] - u[j, 0]) / sigma
            score = norm.pdf(z) / ndtr(z) / sigma
            expected[i, 0] += score
            expected[j, 0] -= score
        np.testing.assert_allclose(gu, expected, rtol=1e-10)

    def test_clamped_factor_has_zero_gradient(self):
        # A hopeless observation saturates at the clamp; its gradient vanishes,
        # matching finite differences of the clamped objective.
        u = np.array([[5.0, 5.0], [0.0, 0.0]])
        ds = make_dataset(2, [((0, 1), (1,))])
        gu, gs = grad_log_lik(ds, u, 0.1)
        np.testing.assert_allclose(gu, 0.0, atol=1e-12)
        np.testing.assert_allclose(gs, 0.0, atol=1e-12)


class TestBatchLikelihood:
    def test_single_rejected_closed_form(self):
        rng = np.random.default_rng(16)
        for _ in range(50):
            o, v = rng.normal(size=2)
            sigma = float(rng.uniform(0.05, 2.0))
            got = batch_likelihood(o, [v], sigma)
            want = float(ndtr((o - v) / (np.sqrt(2.0) * sigma)))
            np.testing.assert_allclose(got, want, rtol=1e-8)

    def test_zero_difference(self):
        np.testing.assert_allclose(batch_likelihood(0.0, [0.0], 0.5), 0.5, rtol=1e-10)

    def test_lower_bound_property(self):
        # All factors share the draw w and increase in it, so the integral
        # dominates the product of its per-comparison marginals Phi(d/(sqrt2 s)).
        rng = np.random.default_rng(17)
        for _ in range(50):
            n_rej = int(rng.integers(2, 7))
            o = float(rng.normal())
            v = rng.normal(size=n_rej)
            sigma = float(rng.uniform(0.05, 2.0))
            marginals = ndtr((o - v) / (np.sqrt(2.0) * sigma))
            product = float(np.exp(np.sum(np.log(marginals))))
            assert product <= batch_likelihood(o, v, sigma) + 1e-9

    def test_range(self):
        rng = np.random.default_rng(18)
        for _ in range(20):
            value = batch_likelihood(rng.normal(), rng.normal(size=3), 0.3)
            assert 0.0 <= value <= 1.0

    def test_quadrature_order_floor(self):
        with pytest.raises(ValidationError):
            batch_likelihood(0.0, [0.0], 1.0, quadrature_order=8)


class TestProbitHelpers:
    def test_probit_log_lik_zero_differences(self):
        np.testing.assert_allclose(probit_log_lik(np.zeros(5), 1.0), 5 * np.log(0.5))

    def test_probit_log_lik_matches_sum(self):
        rng = np.random.default_rng(19)
        d = rng.normal(size=10)
        want = float(np.sum(np.log(ndtr(d / 0.7))))
        np.testing.assert_allclose(probit_log_lik(d, 0.7), want, rtol=1e-12)

    def test_preference_prob_symmetry(self):
        assert preference_prob(0.0, 1.0) == 0.5
        for delta in (0.3, 1.7, 4.0):
            total = preference_prob(delta, 0.9) + preference_prob(-delta, 0.9)
            np.testing.assert_allclose(total, 1.0, rtol=1e-12)
        assert preference_prob(1.0, 0.5) > preference_prob(0.5, 0.5)
