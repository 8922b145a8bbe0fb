"""
Numerical verification of the TVD bounds, the proxy error decomposition and the gradient
branches, by exhaustive enumeration over tiny sequence spaces and exact expectations.
"""
import itertools
import logging
from typing import Callable, Dict, List, Optional, Sequence, Tuple

import numpy as np

from tailrlab import autodiff as ad
from tailrlab.distributions import (CategoricalDist, OneHot, mixture_proxy_dist, onehot_variance,
                                    onehot_variance_direct, proxy_bias, proxy_bias_direct, proxy_variance,
                                    proxy_variance_direct, random_categorical, tsallis_entropy, tvd_abs, tvd_min)
from tailrlab.model.core import ModelConfig, SequenceModel
from tailrlab.seeding import subseed, substream

logger = logging.getLogger(__name__)

ENUMERATION_BUDGET = 10 ** 6
TIGHTENING_POINTS = (1.0, 0.75, 0.5, 0.25, 0.0)


class EnumerationBudgetError(ValueError):
    """
    Error raised when a joint sequence space is too large to enumerate.
    """

    def __init__(self, vocab_size: int, horizon: int):
        self.vocab_size = vocab_size
        self.horizon = horizon

    def __str__(self):
        return (f'Enumerating {self.vocab_size}^{self.horizon} sequences exceeds the budget of '
                f'{ENUMERATION_BUDGET} joint outcomes.')


class VerificationFailedError(Exception):
    """
    Error raised when one or more checks exceed their tolerance.
    """

    def __init__(self, failures: Sequence[Tuple[str, str]]):
        self.failures = list(failures)

    def __str__(self):
        return 'Verification failed: ' + '; '.join(f'{name} ({description})' for name, description in self.failures)


class FactorizedSeqDist:
    """
    Distribution over V^T fixed-length sequences given by its conditionals.

    tables[t] is a V^t x V matrix whose row r is the conditional after the prefix with
    lexicographic index r.
    """

    def __init__(self, vocab_size: int, horizon: int, tables: Sequence[np.ndarray]):
        if vocab_size ** horizon > ENUMERATION_BUDGET:
            raise EnumerationBudgetError(vocab_size, horizon)
        if len(tables) != horizon:
            raise ValueError(f'Expected {horizon} conditional tables, got {len(tables)}')
        self.vocab_size = vocab_size
        self.horizon = horizon
        self.tables = []
        for t, table in enumerate(tables):
            table = np.asarray(table, dtype=np.float64)
            if table.shape != (vocab_size ** t, vocab_size):
                raise ad.ShapeMismatchError('conditional_table', table.shape, (vocab_size ** t, vocab_size))
            # validates every row
            rows = np.stack([CategoricalDist(row).probs for row in table])
            self.tables.append(rows)

    @classmethod
    def from_conditionals(cls, vocab_size: int, horizon: int,
                          conditionals: Dict[Tuple[int, ...], CategoricalDist]) -> 'FactorizedSeqDist':
        """
        :param conditionals: Mapping from every prefix (of length 0..T-1) to its conditional
        """
        tables = []
        for t in range(horizon):
            prefixes = itertools.product(range(vocab_size), repeat=t)
            tables.append(np.stack([conditionals[tuple(prefix)].probs for prefix in prefixes]))
        return cls(vocab_size, horizon, tables)

    @classmethod
    def random(cls, rng: np.random.Generator, vocab_size: int, horizon: int,
               prefix_dependent: bool = True) -> 'FactorizedSeqDist':
        tables = []
        for t in range(horizon):
            if prefix_dependent:
                rows = [random_categorical(rng, vocab_size).probs for _ in range(vocab_size ** t)]
            else:
                rows = [random_categorical(rng, vocab_size).probs] * (vocab_size ** t)
            tables.append(np.stack(rows))
        return cls(vocab_size, horizon, tables)

    def conditional(self, prefix: Sequence[int]) -> CategoricalDist:
        return CategoricalDist(self.tables[len(prefix)][_prefix_index(prefix, self.vocab_size)])

    def prefix_probs(self, t: int) -> np.ndarray:
        """
        Probability of every length-t prefix, in lexicographic order.
        """
        probs = np.ones(1)
        for s in range(t):
            probs = (probs[:, None] * self.tables[s]).reshape(-1)
        return probs

    def joint(self, order: str = 'lexicographic') -> np.ndarray:
        """
        All V^T joint probabilities. 'lexicographic' multiplies level by level; 'reversed'
        enumerates sequences one at a time with the last position varying slowest.
        """
        if order == 'lexicographic':
            return self.prefix_probs(self.horizon)
        if order != 'reversed':
            raise ValueError(f'Unknown enumeration order {order!r}')
        probs = []
        for reversed_sequence in itertools.product(range(self.vocab_size), repeat=self.horizon):
            sequence = reversed_sequence[::-1]
            value = 1.0
            for t in range(self.horizon):
                value *= self.tables[t][_prefix_index(sequence[:t], self.vocab_size), sequence[t]]
            probs.append(value)
        return np.array(probs)

    def mix(self, other: 'FactorizedSeqDist', weight: float) -> 'FactorizedSeqDist':
        """
        Conditional-wise convex combination weight * other + (1 - weight) * self.
        """
        _check_compatible(self, other)
        tables = [weight * b + (1.0 - weight) * a for a, b in zip(self.tables, other.tables)]
        return FactorizedSeqDist(self.vocab_size, self.horizon, tables)

    def __repr__(self):
        return f'FactorizedSeqDist(vocab_size={self.vocab_size}, horizon={self.horizon})'


def _prefix_index(prefix: Sequence[int], vocab_size: int) -> int:
    index = 0
    for token in prefix:
        index = index * vocab_size + token
    return index


def _check_compatible(p: FactorizedSeqDist, q: FactorizedSeqDist):
    if (p.vocab_size, p.horizon) != (q.vocab_size, q.horizon):
        raise ad.ShapeMismatchError('joint_tvd', (p.vocab_size, p.horizon), (q.vocab_size, q.horizon))


class BoundReport:
    """
    Outcome of a check over many trials. A violation is lhs - rhs for inequalities and the
    absolute difference for identities; positive values violate the bound.
    """

    def __init__(self, name: str, tolerance: float, seed: Optional[int] = None):
        self.name = name
        self.tolerance = tolerance
        self.seed = seed
        self.trials = 0
        self.max_violation = float('-inf')
        self.lhs_total = 0.0
        self.rhs_total = 0.0
        self.observations = 0

    def observe(self, lhs: float, rhs: float) -> 'BoundReport':
        self.observations += 1
        self.lhs_total += lhs
        self.rhs_total += rhs
        self.max_violation = max(self.max_violation, lhs - rhs)
        return self

    def observe_equal(self, left: float, right: float) -> 'BoundReport':
        return self.observe(abs(left - right), 0.0)

    def merge(self, other: 'BoundReport') -> 'BoundReport':
        self.trials += max(other.trials, 1)
        self.observations += other.observations
        self.lhs_total += other.lhs_total
        self.rhs_total += other.rhs_total
        self.max_violation = max(self.max_violation, other.max_violation)
        return self

    @property
    def lhs_mean(self) -> float:
        return self.lhs_total / self.observations if self.observations else 0.0

    @property
    def rhs_mean(self) -> float:
        return self.rhs_total / self.observations if self.observations else 0.0

    @property
    def passed(self) -> bool:
        return self.max_violation <= self.tolerance

    def row(self) -> Tuple:
        violation = self.max_violation if np.isfinite(self.max_violation) else 0.0
        return self.name, self.trials, self.tolerance, violation, self.passed, self.lhs_mean, self.rhs_mean, \
            self.seed if self.seed is not None else -1

    def __repr__(self):
        return (f'BoundReport(name={self.name}, trials={self.trials}, max_violation={self.max_violation!r}, '
                f'tolerance={self.tolerance!r}, passed={self.passed})')


REPORT_HEADER = ('check_name', 'trials', 'tolerance', 'max_violation', 'pass', 'lhs_mean', 'rhs_mean', 'seed')


def joint_tvd(p: FactorizedSeqDist, q: FactorizedSeqDist, order: str = 'lexicographic') -> float:
    """
    Exact TVD between the two joint distributions by full enumeration.
    """
    _check_compatible(p, q)
    return float(0.5 * np.abs(p.joint(order) - q.joint(order)).sum())


def token_level_bound(p: FactorizedSeqDist, q: FactorizedSeqDist) -> float:
    """
    E_{y~p}[sum_t TVD(p(.|y_<t), q(.|y_<t))] computed exactly over all prefixes.
    """
    _check_compatible(p, q)
    bound = 0.0
    for t in range(p.horizon):
        step_tvd = 0.5 * np.abs(p.tables[t] - q.tables[t]).sum(axis=1)
        bound += float(np.dot(p.prefix_probs(t), step_tvd))
    return bound


def verify_prop1(p: FactorizedSeqDist, q: FactorizedSeqDist, tolerance: float = 1e-10) -> BoundReport:
    """
    Sequence-level TVD is bounded by the expected sum of token-level TVDs.
    """
    return BoundReport('prop1', tolerance).observe(joint_tvd(p, q), token_level_bound(p, q))


def hybrid_product_bound(a: np.ndarray, b: np.ndarray) -> float:
    """
    sum_t |a_t - b_t| * prod_{i<t} a_i * prod_{j>t} b_j
    """
    total = 0.0
    for t in range(len(a)):
        total += abs(a[t] - b[t]) * float(np.prod(a[:t])) * float(np.prod(b[t + 1:]))
    return total


def verify_lemma_products(a: Sequence[float], b: Sequence[float], tolerance: float = 1e-12,
                          inject_fault: bool = False) -> BoundReport:
    """
    |prod a - prod b| <= hybrid product bound, for entries in [0, 1].

    :param inject_fault: Flips the sign of the bound; used as a negative control
    """
    a = np.asarray(a, dtype=np.float64)
    b = np.asarray(b, dtype=np.float64)
    if a.shape != b.shape:
        raise ad.ShapeMismatchError('lemma_products', a.shape, b.shape)
    if a.size and (a.min() < 0 or a.max() > 1 or b.min() < 0 or b.max() > 1):
        raise ValueError('Product lemma entries must lie in [0, 1]')
    rhs = hybrid_product_bound(a, b)
    if inject_fault:
        rhs = -rhs
    return BoundReport('lemma_products', tolerance).observe(abs(float(np.prod(a)) - float(np.prod(b))), rhs)


def convexity_bound(p: CategoricalDist, q: CategoricalDist) -> float:
    return float(sum(p[w] * tvd_abs(OneHot(w, p.size).as_dist(), q) for w in range(p.size)))


def verify_prop2(p: CategoricalDist, q: CategoricalDist, tolerance: float = 1e-12) -> BoundReport:
    """
    TVD(p, q) <= E_{w~p}[TVD(e^(w), q)], and that expectation equals 1 - sum_w p_w q_w.
    """
    rhs = convexity_bound(p, q)
    report = BoundReport('prop2', tolerance).observe(tvd_abs(p, q), rhs)
    return report.observe_equal(rhs, 1.0 - float(np.dot(p.probs, q.probs)))


def estimation_error(oracle: CategoricalDist, model: CategoricalDist, gamma: float) -> float:
    """
    E_{w~oracle}[TVD(proxy_w, model)] - TVD(oracle, model) for the gamma-mixture proxy.
    """
    practical = sum(oracle[w] * tvd_abs(mixture_proxy_dist(gamma, w, model), model) for w in range(oracle.size))
    return float(practical - tvd_abs(oracle, model))


def verify_error_decomposition(oracle: CategoricalDist, model: CategoricalDist, gamma: float,
                               tolerance: float = 1e-10) -> BoundReport:
    """
    Error <= Bias + Variance with the closed forms of the mixture proxy, plus agreement of the
    closed forms with direct expectations.
    """
    bias = proxy_bias(gamma, oracle, model)
    variance = proxy_variance(gamma, oracle)
    report = BoundReport('error_decomposition', tolerance)
    report.observe(estimation_error(oracle, model, gamma), bias + variance)
    report.observe_equal(bias, proxy_bias_direct(gamma, oracle, model))
    report.observe_equal(variance, proxy_variance_direct(gamma, oracle, model))
    return report


def verify_bias_variance_closed_form(oracle: CategoricalDist, model: CategoricalDist, gamma: float,
                                     tolerance: float = 1e-12) -> BoundReport:
    report = BoundReport('bias_variance_closed_form', tolerance)
    report.observe_equal(proxy_bias(gamma, oracle, model), proxy_bias_direct(gamma, oracle, model))
    return report.observe_equal(proxy_variance(gamma, oracle), proxy_variance_direct(gamma, oracle, model))


def verify_onehot_variance(p: CategoricalDist, tolerance: float = 1e-12) -> BoundReport:
    report = BoundReport('onehot_variance_tsallis', tolerance)
    report.observe_equal(onehot_variance(p), 2.0 * tsallis_entropy(p, 2.0))
    return report.observe_equal(onehot_variance(p), onehot_variance_direct(p))


def verify_tvd_forms(p: CategoricalDist, q: CategoricalDist, tolerance: float = 1e-12) -> BoundReport:
    return BoundReport('tvd_forms_agree', tolerance).observe_equal(tvd_abs(p, q), tvd_min(p, q))


def verify_joint_order(p: FactorizedSeqDist, q: FactorizedSeqDist, tolerance: float = 1e-12) -> BoundReport:
    return BoundReport('joint_tvd_order', tolerance).observe_equal(joint_tvd(p, q, 'lexicographic'),
                                                                    joint_tvd(p, q, 'reversed'))


def verify_prop1_tightening(p: FactorizedSeqDist, q: FactorizedSeqDist, tolerance: float = 1e-10,
                            points: Sequence[float] = TIGHTENING_POINTS) -> BoundReport:
    """
    Along q_lambda = lambda q + (1 - lambda) p, with lambda decreasing through points, the
    slack of the token-level bound never grows and vanishes at lambda = 0.
    """
    report = BoundReport('prop1_tightening', tolerance)
    previous = None
    for weight in points:
        q_weight = p.mix(q, weight)
        slack = token_level_bound(p, q_weight) - joint_tvd(p, q_weight)
        if previous is not None:
            report.observe(slack, previous)
        previous = slack
    return report.observe(abs(previous), 0.0) if points[-1] == 0.0 else report


def _gradient(build: Callable[[Dict[str, ad.Node]], ad.Node], model: SequenceModel) -> np.ndarray:
    params = model.nodes(trainable=True)
    build(params).backward()
    return np.concatenate([params[name].gradient.values.reshape(-1) for name in params])


def verify_gradient_cases(model: SequenceModel, oracle: FactorizedSeqDist, target: int,
                          tolerance: float = 1e-6) -> BoundReport:
    """
    Gradient branches of the sequence-level TVD and KLD terms for a one-step model.

    With p = p_theta(y*) and p_o = oracle(y*): the gradient of -min(1, p / p_o) must be
    -grad(p) / p_o when p < p_o and zero otherwise; the gradient of -log p must be
    -grad(p) / p; in the lower branch the KLD to TVD gradient norm ratio must equal p_o / p.
    """
    if oracle.horizon != 1 or oracle.vocab_size != model.vocab_size:
        raise ad.ShapeMismatchError('gradient_cases', (oracle.vocab_size, oracle.horizon), (model.vocab_size, 1))
    p_oracle = float(oracle.tables[0][0, target])

    def probability(params):
        return ad.exp(ad.pick(model.next_log_probs(params, ()), [target]))

    def tvd_term(params):
        ratio = ad.div(probability(params), p_oracle)
        return ad.total(ad.maximum(ad.neg(ratio), -1.0))

    def kld_term(params):
        return ad.total(ad.neg(ad.log(probability(params))))

    grad_p = _gradient(lambda params: ad.total(probability(params)), model)
    grad_tvd = _gradient(tvd_term, model)
    grad_kld = _gradient(kld_term, model)
    p_model = float(np.exp(model.next_log_probs(model.nodes(), ()).data[0, target]))
    scale = float(np.linalg.norm(grad_p)) + 1e-12

    report = BoundReport('gradient_branches', tolerance)
    expected_tvd = -grad_p / p_oracle if p_model < p_oracle else np.zeros_like(grad_p)
    report.observe(float(np.linalg.norm(grad_tvd - expected_tvd)) / scale, 0.0)
    report.observe(float(np.linalg.norm(grad_kld + grad_p / p_model)) / scale, 0.0)
    if p_model < p_oracle:
        ratio = float(np.linalg.norm(grad_kld)) / float(np.linalg.norm(grad_tvd))
        report.observe_equal(ratio / (p_oracle / p_model), 1.0)
    return report


def _random_pair(rng: np.random.Generator, max_vocab: int = 8) -> Tuple[CategoricalDist, CategoricalDist]:
    size = int(rng.integers(2, max_vocab + 1))
    return random_categorical(rng, size), random_categorical(rng, size)


def run_suite(trials: int = 1000, seed: int = 0, inject_fault: bool = False) -> List[BoundReport]:
    """
    Runs every check over seeded random trials. Check k draws from its own substream.

    :param trials: Trials per check
    :param seed: Suite seed, recorded in each report
    :param inject_fault: Negative control that breaks the product lemma
    :return: One merged report per check
    """
    checks: List[Tuple[str, float, Callable[[np.random.Generator], BoundReport]]] = []

    def prop1(rng):
        vocab_size, horizon = int(rng.integers(2, 5)), int(rng.integers(1, 4))
        return verify_prop1(FactorizedSeqDist.random(rng, vocab_size, horizon),
                            FactorizedSeqDist.random(rng, vocab_size, horizon))

    def lemma(rng):
        horizon = int(rng.integers(1, 7))
        return verify_lemma_products(rng.random(horizon), rng.random(horizon), inject_fault=inject_fault)

    def prop2(rng):
        return verify_prop2(*_random_pair(rng))

    def decomposition(rng):
        oracle, model = _random_pair(rng)
        return verify_error_decomposition(oracle, model, float(rng.random()))

    def closed_form(rng):
        oracle, model = _random_pair(rng)
        return verify_bias_variance_closed_form(oracle, model, float(rng.random()))

    def tsallis(rng):
        return verify_onehot_variance(_random_pair(rng)[0])

    def gradients(rng):
        vocab_size = int(rng.integers(2, 6))
        config = ModelConfig(vocab_size=vocab_size, embedding_dim=3, hidden_dim=4, output_gain=4.0)
        model = SequenceModel.initialize(config, rng)
        oracle = FactorizedSeqDist.random(rng, vocab_size, 1)
        target = int(rng.integers(vocab_size))
        return verify_gradient_cases(model, oracle, target)

    def order(rng):
        vocab_size, horizon = int(rng.integers(2, 5)), int(rng.integers(1, 4))
        return verify_joint_order(FactorizedSeqDist.random(rng, vocab_size, horizon),
                                  FactorizedSeqDist.random(rng, vocab_size, horizon))

    def tightening(rng):
        vocab_size, horizon = int(rng.integers(2, 5)), int(rng.integers(1, 4))
        return verify_prop1_tightening(FactorizedSeqDist.random(rng, vocab_size, horizon, prefix_dependent=False),
                                       FactorizedSeqDist.random(rng, vocab_size, horizon, prefix_dependent=False))

    def forms(rng):
        return verify_tvd_forms(*_random_pair(rng))

    checks.extend([
        ('prop1', 1e-10, prop1),
        ('lemma_products', 1e-12, lemma),
        ('prop2', 1e-12, prop2),
        ('error_decomposition', 1e-10, decomposition),
        ('bias_variance_closed_form', 1e-12, closed_form),
        ('onehot_variance_tsallis', 1e-12, tsallis),
        ('gradient_branches', 1e-6, gradients),
        ('joint_tvd_order', 1e-12, order),
        ('prop1_tightening', 1e-10, tightening),
        ('tvd_forms_agree', 1e-12, forms),
    ])

    reports = []
    for index, (name, tolerance, check) in enumerate(checks):
        rng = substream(seed, 'verify', index)
        report = BoundReport(name, tolerance, seed=subseed(seed, 'verify', index))
        for _ in range(trials):
            report.merge(check(rng))
        level = logging.INFO if report.passed else logging.ERROR
        logger.log(level, 'check %s: trials=%d max_violation=%.3e tolerance=%.1e', name, report.trials,
                   report.max_violation, tolerance)
        reports.append(report)
    return reports


def failures(reports: Sequence[BoundReport]) -> List[Tuple[str, str]]:
    return [(report.name, f'max_violation {report.max_violation!r} exceeds tolerance {report.tolerance!r}')
            for report in reports if not report.passed]
