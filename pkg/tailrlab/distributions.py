"""
Exact algebra over finite categorical distributions.

All expectations over a token w are computed by iterating the full vocabulary, so results
carry no sampling noise.
"""
from typing import Sequence, Tuple, Union

import numpy as np
from scipy.special import xlogy

VALIDATION_TOLERANCE = 1e-10
RANDOM_FLOOR = 1e-12


class InvalidDistributionError(ValueError):
    """
    Error raised when a probability vector is not a valid distribution.
    """

    def __init__(self, reason: str):
        self.reason = reason

    def __str__(self):
        return f'Invalid categorical distribution: {self.reason}.'


class SizeMismatchError(ValueError):
    """
    Error raised when two distributions live on vocabularies of different size.
    """

    def __init__(self, left_size: int, right_size: int):
        self.left_size = left_size
        self.right_size = right_size

    def __str__(self):
        return f'Distributions have different vocabulary sizes: {self.left_size} and {self.right_size}.'


class SupportViolationError(ValueError):
    """
    Error raised when q assigns zero probability to a token that p supports, so KL(p || q) is infinite.
    """

    def __init__(self, index: int, p_value: float):
        self.index = index
        self.p_value = p_value

    def __str__(self):
        return (f'q has zero probability at index {self.index} where p has {self.p_value!r}; '
                f'KL(p || q) is infinite.')


class GammaOutOfRangeError(ValueError):
    """
    Error raised when a mixture coefficient lies outside [0, 1].
    """

    def __init__(self, gamma: float):
        self.gamma = gamma

    def __str__(self):
        return f'Mixture coefficient gamma must lie in [0, 1], got {self.gamma!r}.'


class CategoricalDist:
    """
    Probability vector over a vocabulary of size V. Validated with tolerance 1e-10, then
    renormalized; immutable afterwards.
    """

    __slots__ = ('_probs',)

    def __init__(self, probs: Union[Sequence[float], np.ndarray]):
        values = np.array(probs, dtype=np.float64).reshape(-1)
        if values.size < 1:
            raise InvalidDistributionError('vocabulary must have at least one entry')
        if not np.all(np.isfinite(values)):
            raise InvalidDistributionError('entries must be finite')
        if values.min() < -VALIDATION_TOLERANCE or values.max() > 1.0 + VALIDATION_TOLERANCE:
            raise InvalidDistributionError(f'entries must lie in [0, 1], got range [{values.min()!r}, {values.max()!r}]')
        mass = values.sum()
        if abs(mass - 1.0) > VALIDATION_TOLERANCE:
            raise InvalidDistributionError(f'entries sum to {mass!r}, expected 1')
        values = np.clip(values, 0.0, None)
        values = values / values.sum()
        values.setflags(write=False)
        self._probs = values

    @classmethod
    def from_log_probs(cls, log_probs: np.ndarray) -> 'CategoricalDist':
        return cls(np.exp(np.asarray(log_probs, dtype=np.float64)))

    @classmethod
    def uniform(cls, size: int) -> 'CategoricalDist':
        return cls(np.full(size, 1.0 / size))

    @property
    def probs(self) -> np.ndarray:
        return self._probs

    @property
    def size(self) -> int:
        return self._probs.size

    def __getitem__(self, index: int) -> float:
        return float(self._probs[index])

    def __len__(self):
        return self.size

    def __eq__(self, other: object) -> bool:
        return isinstance(other, CategoricalDist) and np.array_equal(other.probs, self.probs)

    def __repr__(self):
        return f'CategoricalDist(probs={np.array2string(self._probs, precision=4)})'


class OneHot:
    """
    The point mass e^(w) on token w over a vocabulary of size V.
    """

    def __init__(self, index: int, size: int):
        if not 0 <= index < size:
            raise InvalidDistributionError(f'one-hot index {index} outside vocabulary of size {size}')
        self.index = index
        self.size = size

    def as_dist(self) -> CategoricalDist:
        probs = np.zeros(self.size)
        probs[self.index] = 1.0
        return CategoricalDist(probs)

    def __repr__(self):
        return f'OneHot(index={self.index}, size={self.size})'


class MixtureProxy:
    """
    gamma * e^(w) + (1 - gamma) * base, the proxy that stands in for the unknown data
    distribution at one step.
    """

    def __init__(self, gamma: float, target: int, base: CategoricalDist):
        _check_gamma(gamma)
        _check_target(target, base.size)
        self.gamma = gamma
        self.target = target
        self.base = base

    def as_dist(self) -> CategoricalDist:
        return mixture_proxy_dist(self.gamma, self.target, self.base)

    def __repr__(self):
        return f'MixtureProxy(gamma={self.gamma}, target={self.target}, base={self.base})'


def _check_gamma(gamma: float):
    if not 0.0 <= gamma <= 1.0:
        raise GammaOutOfRangeError(gamma)


def _check_target(target: int, size: int):
    if not 0 <= target < size:
        raise InvalidDistributionError(f'target {target} outside vocabulary of size {size}')


def _pair(p: CategoricalDist, q: CategoricalDist) -> Tuple[np.ndarray, np.ndarray]:
    if p.size != q.size:
        raise SizeMismatchError(p.size, q.size)
    return p.probs, q.probs


def tvd_abs(p: CategoricalDist, q: CategoricalDist) -> float:
    """
    Total variation distance as half the L1 distance.
    """
    x, y = _pair(p, q)
    return float(0.5 * np.abs(x - y).sum())


def tvd_min(p: CategoricalDist, q: CategoricalDist) -> float:
    """
    Total variation distance as one minus the overlap mass.
    """
    x, y = _pair(p, q)
    return float(1.0 - np.minimum(x, y).sum())


def kld(p: CategoricalDist, q: CategoricalDist) -> float:
    """
    KL(p || q) with 0 log 0 = 0.

    :raises SupportViolationError: when q is zero where p is positive
    """
    x, y = _pair(p, q)
    unsupported = np.flatnonzero((x > 0) & (y <= 0))
    if unsupported.size:
        index = int(unsupported[0])
        raise SupportViolationError(index, float(x[index]))
    with np.errstate(divide='ignore', invalid='ignore'):
        terms = xlogy(x, x) - xlogy(x, np.where(x > 0, y, 1.0))
    return float(max(terms.sum(), 0.0))


def shannon_entropy(p: CategoricalDist) -> float:
    return float(-xlogy(p.probs, p.probs).sum())


def tsallis_entropy(p: CategoricalDist, alpha: float) -> float:
    """
    Tsallis alpha-entropy (1 / (alpha (alpha - 1))) (1 - sum p^alpha). At alpha = 1 this is
    the Shannon entropy.

    :param p: The distribution
    :param alpha: Entropic index, strictly positive
    :return: The entropy value
    """
    if alpha <= 0:
        raise ValueError(f'Tsallis entropy needs alpha > 0, got {alpha!r}')
    if alpha == 1.0:
        return shannon_entropy(p)
    return float((1.0 - np.power(p.probs, alpha).sum()) / (alpha * (alpha - 1.0)))


def onehot_variance(p: CategoricalDist) -> float:
    """
    E_{w~p}[TVD(e^(w), p)] in closed form, 1 - sum p_w^2.
    """
    return float(1.0 - np.dot(p.probs, p.probs))


def onehot_variance_direct(p: CategoricalDist) -> float:
    return float(sum(p[w] * tvd_abs(OneHot(w, p.size).as_dist(), p) for w in range(p.size)))


def expected_onehot(p: CategoricalDist) -> CategoricalDist:
    """
    sum_w p_w e^(w), accumulated one token at a time.
    """
    expectation = np.zeros(p.size)
    for w in range(p.size):
        expectation[w] += p.probs[w]
    return CategoricalDist(expectation)


def mixture_proxy_dist(gamma: float, w: int, base: CategoricalDist) -> CategoricalDist:
    """
    :param gamma: Weight on the one-hot component
    :param w: The observed token
    :param base: Model conditional being interpolated
    :return: gamma * e^(w) + (1 - gamma) * base
    """
    _check_gamma(gamma)
    _check_target(w, base.size)
    probs = (1.0 - gamma) * base.probs
    probs[w] += gamma
    return CategoricalDist(probs)


def expected_proxy(gamma: float, oracle: CategoricalDist, base: CategoricalDist) -> CategoricalDist:
    """
    E_{w~oracle}[gamma * e^(w) + (1 - gamma) * base], computed over the full vocabulary.
    """
    _pair(oracle, base)
    expectation = np.zeros(base.size)
    for w in range(base.size):
        expectation += oracle.probs[w] * mixture_proxy_dist(gamma, w, base).probs
    return CategoricalDist(expectation)


def proxy_bias(gamma: float, oracle: CategoricalDist, base: CategoricalDist) -> float:
    """
    Closed-form bias of the mixture proxy, (1 - gamma) * TVD(base, oracle).
    """
    _check_gamma(gamma)
    return (1.0 - gamma) * tvd_abs(base, oracle)


def proxy_bias_direct(gamma: float, oracle: CategoricalDist, base: CategoricalDist) -> float:
    return tvd_abs(expected_proxy(gamma, oracle, base), oracle)


def proxy_variance(gamma: float, oracle: CategoricalDist) -> float:
    """
    Closed-form variance of the mixture proxy, gamma * (1 - sum p_w^2).
    """
    _check_gamma(gamma)
    return gamma * onehot_variance(oracle)


def proxy_variance_direct(gamma: float, oracle: CategoricalDist, base: CategoricalDist) -> float:
    center = expected_proxy(gamma, oracle, base)
    return float(sum(oracle.probs[w] * tvd_abs(mixture_proxy_dist(gamma, w, base), center)
                     for w in range(oracle.size)))


def random_categorical(rng: np.random.Generator, size: int) -> CategoricalDist:
    """
    Normalized independent uniform(0, 1] weights, each clamped at 1e-12 first.
    """
    weights = 1.0 - rng.random(size)
    weights = np.maximum(weights, RANDOM_FLOOR)
    return CategoricalDist(weights / weights.sum())


def rowwise_kld(p_rows: np.ndarray, q_rows: np.ndarray) -> np.ndarray:
    """
    KL(p_i || q_i) for each row i of two stochastic matrices. q must be strictly positive
    where p is, as is always the case for softmax outputs.
    """
    p_rows = np.asarray(p_rows, dtype=np.float64)
    q_rows = np.asarray(q_rows, dtype=np.float64)
    if p_rows.shape != q_rows.shape:
        raise SizeMismatchError(p_rows.shape[-1], q_rows.shape[-1])
    with np.errstate(divide='ignore', invalid='ignore'):
        terms = xlogy(p_rows, p_rows) - xlogy(p_rows, np.where(p_rows > 0, q_rows, 1.0))
    return np.maximum(terms.sum(axis=-1), 0.0)
