"""
Exposure-bias measurement: the excess per-step error a learner accumulates when it conditions
on its own samples instead of oracle samples.
"""
import logging
import math
from typing import List, Optional, Sequence

import numpy as np
from pydantic import BaseModel, confloat, conint

from tailrlab.distributions import rowwise_kld
from tailrlab.model.core import SequenceModel, TokenSequence, sample_many, step_log_prob_rows
from tailrlab.seeding import substream
from tailrlab.serialization import CamelCaseAttributesMixin
from tailrlab.synth.core import ensure_same_vocab

logger = logging.getLogger(__name__)

MODEL_PREFIXES, ORACLE_PREFIXES, NEXT_TOKENS = 0, 1, 2
EXACC_HEADER = ('objective', 'l', 'exacc_percent', 'mode', 'regret', 'regret_se', 'epsilon', 'epsilon_se')


class ExAccConfig(BaseModel):
    context_length: conint(ge=1) = 15
    samples: conint(ge=1) = 1000
    importance_sampling: bool = False
    zero_epsilon_tolerance: confloat(ge=0.0) = 1e-12

    class Config:
        extra = 'forbid'


class ExAccReport(CamelCaseAttributesMixin):
    """
    Regret on learner-generated prefixes and mean per-step error on oracle-generated prefixes,
    with standard errors over the sampled prefixes.
    """

    def __init__(self,
                 context_length: int,
                 regret: float,
                 regret_se: float,
                 epsilon: float,
                 epsilon_se: float,
                 model_steps: Sequence[float],
                 oracle_steps: Sequence[float],
                 mode: str,
                 tolerance: float):
        self.context_length = context_length
        self.regret = regret
        self.regret_se = regret_se
        self.epsilon = epsilon
        self.epsilon_se = epsilon_se
        self.model_steps = list(model_steps)
        self.oracle_steps = list(oracle_steps)
        self.mode = mode
        self.tolerance = tolerance

    @property
    def percent(self) -> float:
        if self.epsilon < self.tolerance:
            return 0.0
        accumulated = self.context_length * self.epsilon
        return (self.regret - accumulated) / accumulated * 100.0

    def __repr__(self):
        return (f'ExAccReport(l={self.context_length}, regret={self.regret:.6g}, '
                f'epsilon={self.epsilon:.6g}, percent={self.percent:.3f}, mode={self.mode})')


def _sum(values: Sequence[float]) -> float:
    # correctly rounded, so the result does not depend on sample order
    return math.fsum(values)


def _mean_and_se(per_sample: np.ndarray):
    count = per_sample.size
    mean = _sum(per_sample) / count
    if count < 2:
        return mean, 0.0
    variance = _sum((per_sample - mean) ** 2) / (count - 1)
    return mean, math.sqrt(variance / count)


def _step_errors(model: SequenceModel,
                 oracle: SequenceModel,
                 prefixes: Sequence[TokenSequence],
                 context_length: int,
                 importance_rng: Optional[np.random.Generator] = None) -> np.ndarray:
    """
    Per-sample, per-step KL(p_o || p_theta) at each sampled prefix. A sample that ended before
    step t contributes 0 at t. With importance_rng the expectation over the next token is
    replaced by one draw from the learner weighted by p_o / p_theta.

    :return: Matrix of shape (samples, context_length)
    """
    bodies = [sequence.body for sequence in prefixes]
    errors = np.zeros((len(bodies), context_length))
    for step in range(context_length):
        alive = [row for row, body in enumerate(bodies) if len(body) >= step]
        if not alive:
            continue
        rows = [bodies[row][:step] for row in alive]
        log_p_o = step_log_prob_rows(oracle, rows)
        log_p_theta = step_log_prob_rows(model, rows)
        if importance_rng is None:
            errors[alive, step] = rowwise_kld(np.exp(log_p_o), np.exp(log_p_theta))
            continue
        probs = np.exp(log_p_theta)
        cumulative = np.cumsum(probs, axis=1)
        draws = importance_rng.random(len(alive))
        tokens = np.minimum((cumulative < draws[:, None] * cumulative[:, -1:]).sum(axis=1), model.vocab_size - 1)
        index = np.arange(len(alive))
        log_ratio = log_p_o[index, tokens] - log_p_theta[index, tokens]
        errors[alive, step] = np.exp(log_ratio) * log_ratio
    return errors


def exacc_report(model: SequenceModel, oracle: SequenceModel, config: ExAccConfig, seed: int = 0) -> ExAccReport:
    """
    Estimates the regret over the first l steps on prefixes sampled from the learner and the
    mean per-step error over the first l steps on prefixes sampled from the oracle.

    :param model: The learner
    :param oracle: The oracle, sharing the learner's vocabulary
    :param config: Context length, sample count and estimation mode
    :param seed: Run seed; prefixes come from substreams of (seed, 'exacc')
    :return: The report; its percent is the excess accumulated error
    """
    ensure_same_vocab(model, oracle)
    length = config.context_length
    model_prefixes = sample_many(model, config.samples, length, substream(seed, 'exacc', MODEL_PREFIXES))
    oracle_prefixes = sample_many(oracle, config.samples, length, substream(seed, 'exacc', ORACLE_PREFIXES))
    importance_rng = substream(seed, 'exacc', NEXT_TOKENS) if config.importance_sampling else None

    model_errors = _step_errors(model, oracle, model_prefixes, length, importance_rng)
    oracle_errors = _step_errors(model, oracle, oracle_prefixes, length, importance_rng)

    regret, regret_se = _mean_and_se(np.array([_sum(row) for row in model_errors]))
    epsilon, epsilon_se = _mean_and_se(np.array([_sum(row) / length for row in oracle_errors]))
    report = ExAccReport(length, regret, regret_se, epsilon, epsilon_se,
                         [_sum(column) / config.samples for column in model_errors.T],
                         [_sum(column) / config.samples for column in oracle_errors.T],
                         'importance' if config.importance_sampling else 'exact',
                         config.zero_epsilon_tolerance)
    if epsilon < config.zero_epsilon_tolerance:
        logger.info('Per-step error %.3g is below tolerance %.3g; excess error reported as 0', epsilon,
                    config.zero_epsilon_tolerance)
    logger.debug('%r', report)
    return report


def exacc_err(model: SequenceModel, oracle: SequenceModel, config: ExAccConfig, seed: int = 0) -> float:
    return exacc_report(model, oracle, config, seed).percent


def exacc_rows(label: str, reports: List[ExAccReport]) -> List[tuple]:
    """
    CSV rows (objective, l, exacc_percent, mode, regret, regret_se, epsilon, epsilon_se).
    """
    return [(label, report.context_length, report.percent, report.mode, report.regret, report.regret_se,
             report.epsilon, report.epsilon_se) for report in reports]
