import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from tailrlab.distributions import *

probability_weights = st.lists(st.floats(min_value=1e-3, max_value=1.0), min_size=2, max_size=8)


def _normalized(weights) -> CategoricalDist:
    weights = np.asarray(weights)
    return CategoricalDist(weights / weights.sum())


@pytest.fixture
def p():
    return CategoricalDist([0.5, 0.3, 0.2])


@pytest.fixture
def q():
    return CategoricalDist([0.2, 0.2, 0.6])


class TestCategoricalDist:
    @pytest.mark.parametrize('probs,reason', [
        ([], 'at least one entry'),
        ([0.5, float('nan')], 'finite'),
        ([1.5, -0.5], 'lie in [0, 1]'),
        ([0.5, 0.4], 'sum to'),
    ])
    def test_rejects_invalid_vectors(self, probs, reason):
        with pytest.raises(InvalidDistributionError) as exception_info:
            CategoricalDist(probs)

        assert reason in str(exception_info.value)

    def test_renormalizes_within_tolerance(self):
        dist = CategoricalDist([0.5, 0.5 + 1e-11])
        assert dist.probs.sum() == pytest.approx(1.0, abs=1e-15)

    def test_is_immutable(self, p):
        with pytest.raises(ValueError):
            p.probs[0] = 1.0

    def test_from_log_probs_and_uniform(self):
        assert CategoricalDist.from_log_probs(np.log([0.25, 0.75]))[1] == pytest.approx(0.75)
        assert CategoricalDist.uniform(4) == CategoricalDist([0.25] * 4)

    def test_one_hot_and_mixture_bounds(self, p):
        with pytest.raises(InvalidDistributionError):
            OneHot(3, 3)
        with pytest.raises(InvalidDistributionError):
            MixtureProxy(0.5, 5, p)
        with pytest.raises(GammaOutOfRangeError):
            MixtureProxy(1.5, 0, p)


class TestDivergences:
    def test_tvd_forms_agree(self, p, q):
        assert tvd_abs(p, q) == pytest.approx(0.4)
        assert tvd_min(p, q) == pytest.approx(0.4)

    def test_kld_known_value(self, p, q):
        expected = 0.5 * np.log(0.5 / 0.2) + 0.3 * np.log(0.3 / 0.2) + 0.2 * np.log(0.2 / 0.6)
        assert kld(p, q) == pytest.approx(expected)

    def test_kld_ignores_tokens_outside_the_support_of_p(self):
        assert kld(CategoricalDist([1.0, 0.0]), CategoricalDist([0.5, 0.5])) == pytest.approx(np.log(2.0))

    def test_kld_support_violation(self):
        with pytest.raises(SupportViolationError) as exception_info:
            kld(CategoricalDist([0.5, 0.5]), CategoricalDist([1.0, 0.0]))

        assert exception_info.value.index == 1
        assert 'infinite' in str(exception_info.value)

    def test_size_mismatch(self, p):
        with pytest.raises(SizeMismatchError) as exception_info:
            tvd_abs(p, CategoricalDist([0.5, 0.5]))

        assert str(exception_info.value) == 'Distributions have different vocabulary sizes: 3 and 2.'

    def test_rowwise_kld_matches_scalar_kld(self, p, q):
        values = rowwise_kld(np.stack([p.probs, q.probs]), np.stack([q.probs, p.probs]))
        np.testing.assert_allclose(values, [kld(p, q), kld(q, p)])

    def test_rowwise_kld_shape_mismatch(self):
        with pytest.raises(SizeMismatchError):
            rowwise_kld(np.ones((2, 3)) / 3, np.ones((2, 4)) / 4)

    @settings(derandomize=True, max_examples=50)
    @given(probability_weights, st.integers(min_value=0, max_value=2 ** 16))
    def test_tvd_is_bounded_and_symmetric(self, weights, seed):
        left = _normalized(weights)
        right = random_categorical(np.random.default_rng(seed), left.size)
        value = tvd_abs(left, right)
        assert 0.0 <= value <= 1.0
        assert value == pytest.approx(tvd_abs(right, left))
        assert value == pytest.approx(tvd_min(left, right), abs=1e-12)

    @settings(derandomize=True, max_examples=50)
    @given(probability_weights, st.integers(min_value=0, max_value=2 ** 16))
    def test_pinsker(self, weights, seed):
        left = _normalized(weights)
        right = random_categorical(np.random.default_rng(seed), left.size)
        assert tvd_abs(left, right) <= np.sqrt(kld(left, right) / 2.0) + 1e-12


class TestEntropies:
    def test_shannon(self):
        assert shannon_entropy(CategoricalDist.uniform(4)) == pytest.approx(np.log(4))
        assert shannon_entropy(OneHot(1, 3).as_dist()) == 0.0

    def test_tsallis_two_is_half_the_collision_complement(self, p):
        assert tsallis_entropy(p, 2.0) == pytest.approx(0.5 * onehot_variance(p))

    def test_tsallis_one_is_shannon(self, p):
        assert tsallis_entropy(p, 1.0) == shannon_entropy(p)

    def test_tsallis_approaches_shannon(self, p):
        assert tsallis_entropy(p, 1.0 + 1e-6) == pytest.approx(shannon_entropy(p), rel=1e-4)

    def test_tsallis_needs_positive_alpha(self, p):
        with pytest.raises(ValueError):
            tsallis_entropy(p, 0.0)


class TestProxy:
    def test_expected_onehot_is_the_distribution(self, p):
        np.testing.assert_allclose(expected_onehot(p).probs, p.probs)

    def test_onehot_variance_closed_form(self, p):
        assert onehot_variance_direct(p) == pytest.approx(onehot_variance(p))
        assert onehot_variance(p) == pytest.approx(1.0 - 0.25 - 0.09 - 0.04)

    def test_mixture_proxy(self, q):
        proxy = MixtureProxy(0.4, 2, q).as_dist()
        np.testing.assert_allclose(proxy.probs, [0.12, 0.12, 0.76])

    @pytest.mark.parametrize('w', [-1, -3, 3, 10])
    def test_mixture_proxy_rejects_tokens_outside_the_vocabulary(self, q, w):
        with pytest.raises(InvalidDistributionError) as exception_info:
            mixture_proxy_dist(0.5, w, q)

        assert f'target {w} outside vocabulary of size 3' in str(exception_info.value)

    @pytest.mark.parametrize('gamma', [0.0, 1e-3, 0.3, 0.7, 1.0])
    def test_bias_and_variance_closed_forms(self, p, q, gamma):
        assert proxy_bias_direct(gamma, p, q) == pytest.approx(proxy_bias(gamma, p, q), abs=1e-12)
        assert proxy_variance_direct(gamma, p, q) == pytest.approx(proxy_variance(gamma, p), abs=1e-12)

    def test_gamma_trades_bias_for_variance(self, p, q):
        gammas = [0.0, 0.25, 0.5, 0.75, 1.0]
        biases = [proxy_bias(gamma, p, q) for gamma in gammas]
        variances = [proxy_variance(gamma, p) for gamma in gammas]
        assert biases == sorted(biases, reverse=True)
        assert variances == sorted(variances)
        assert biases[-1] == 0.0 and variances[0] == 0.0

    def test_gamma_out_of_range(self, p, q):
        with pytest.raises(GammaOutOfRangeError) as exception_info:
            proxy_bias(-0.1, p, q)

        assert exception_info.value.gamma == -0.1


def test_random_categorical_is_strictly_positive_and_reproducible():
    first = random_categorical(np.random.default_rng(5), 6)
    second = random_categorical(np.random.default_rng(5), 6)
    assert first == second
    assert first.probs.min() > 0.0
