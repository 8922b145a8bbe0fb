"""
Corpus-level generation metrics and paired bootstrap significance.

A corpus is a list of token bodies (EOS stripped); tokens can be any hashable values.
BLEU is computed per hypothesis against the whole reference corpus (n-gram counts clipped by
their maximum count in any single reference, closest reference length for the brevity
penalty), without smoothing, and averaged over hypotheses.
"""
import logging
import math
from collections import Counter
from typing import Dict, Hashable, List, Optional, Sequence, Tuple

import numpy as np
from nltk.translate.bleu_score import brevity_penalty
from nltk.util import ngrams

from tailrlab.seeding import substream
from tailrlab.serialization import CamelCaseAttributesMixin

logger = logging.getLogger(__name__)

Corpus = Sequence[Sequence[Hashable]]
METRIC_HEADER = ('metric', 'parameter', 'value', 'hypotheses', 'references', 'seed')


class EmptyCorpusError(ValueError):
    def __init__(self, metric: str, role: str = 'corpus'):
        self.metric = metric
        self.role = role

    def __str__(self):
        return f'{self.metric} needs a nonempty {self.role}.'


class CorpusTooSmallError(ValueError):
    """
    Error raised when a corpus holds fewer items than a metric needs.
    """

    def __init__(self, metric: str, required: int, actual: int, unit: str = 'sequences'):
        self.metric = metric
        self.required = required
        self.actual = actual
        self.unit = unit

    def __str__(self):
        return f'{self.metric} needs at least {self.required} {self.unit}, got {self.actual}.'


class LengthMismatchError(ValueError):
    def __init__(self, left: int, right: int):
        self.left = left
        self.right = right

    def __str__(self):
        return f'Paired values must have equal lengths, got {self.left} and {self.right}.'


class MetricReport(CamelCaseAttributesMixin):
    def __init__(self, name: str, parameter: int, value: float, hypotheses: int, references: int = 0,
                 seed: Optional[int] = None):
        self.name = name
        self.parameter = parameter
        self.value = value
        self.hypotheses = hypotheses
        self.references = references
        self.seed = seed

    @property
    def column(self) -> str:
        return f'{self.name}{self.parameter}'

    def row(self) -> Tuple:
        return (self.name, self.parameter, self.value, self.hypotheses, self.references,
                '' if self.seed is None else self.seed)

    def __repr__(self):
        return f'MetricReport({self.column}={self.value!r}, hypotheses={self.hypotheses})'


def _check_order(n: int):
    if not 1 <= n <= 4:
        raise ValueError(f'n-gram order must be between 1 and 4, got {n}')


class _ReferenceIndex:
    """
    Per n-gram, the largest and second largest count in any single reference and how many
    references reach the largest, so clipping against all references but one is exact.
    """

    def __init__(self, references: Corpus, n: int):
        self.top: List[Dict[tuple, Tuple[int, int, int]]] = []
        for order in range(1, n + 1):
            table: Dict[tuple, Tuple[int, int, int]] = {}
            for reference in references:
                for gram, count in Counter(ngrams(reference, order)).items():
                    best, second, ties = table.get(gram, (0, 0, 0))
                    if count > best:
                        best, second, ties = count, best, 1
                    elif count == best:
                        ties += 1
                    elif count > second:
                        second = count
                    table[gram] = (best, second, ties)
            self.top.append(table)
        self.lengths = Counter(len(reference) for reference in references)

    def clip(self, order: int, gram: tuple, excluded: int = 0) -> int:
        """
        Largest count of gram in one reference, leaving out one reference whose count is excluded.
        """
        best, second, ties = self.top[order - 1].get(gram, (0, 0, 0))
        if excluded and excluded == best and ties == 1:
            return second
        return best

    def closest_length(self, hypothesis_length: int, excluded: Optional[int] = None) -> int:
        lengths = [length for length, count in self.lengths.items() if length != excluded or count > 1]
        return min(lengths, key=lambda length: (abs(length - hypothesis_length), length))


def _sentence_bleu(hypothesis: Sequence[Hashable], index: _ReferenceIndex, n: int, leave_out: bool = False) -> float:
    """
    BLEU of one hypothesis in [0, 1]. With leave_out the hypothesis is itself one of the
    indexed references and is ignored as a reference.
    """
    log_precision = 0.0
    for order in range(1, n + 1):
        counts = Counter(ngrams(hypothesis, order))
        total = sum(counts.values())
        if total == 0:
            return 0.0
        matched = sum(min(count, index.clip(order, gram, count if leave_out else 0)) for gram, count in counts.items())
        if matched == 0:
            return 0.0
        log_precision += math.log(matched / total) / n
    closest = index.closest_length(len(hypothesis), len(hypothesis) if leave_out else None)
    return brevity_penalty(closest, len(hypothesis)) * math.exp(log_precision)


def bleu_n(hypotheses: Corpus, references: Corpus, n: int = 4) -> float:
    """
    Mean per-hypothesis BLEU-n against the full reference corpus.

    :param hypotheses: Generated bodies
    :param references: Reference bodies
    :param n: Highest n-gram order, uniformly weighted
    :return: Score in [0, 100]
    """
    _check_order(n)
    if not hypotheses:
        raise EmptyCorpusError('BLEU', 'hypothesis corpus')
    if not references:
        raise EmptyCorpusError('BLEU', 'reference corpus')
    index = _ReferenceIndex(references, n)
    return 100.0 * math.fsum(_sentence_bleu(hypothesis, index, n) for hypothesis in hypotheses) / len(hypotheses)


def subsample(corpus: Corpus, cap: Optional[int], seed: int) -> List[Sequence[Hashable]]:
    """
    At most cap items drawn without replacement from substream (seed, 'selfbleu'), kept in
    corpus order; the whole corpus when it is not larger than cap.
    """
    if cap is None or len(corpus) <= cap:
        return list(corpus)
    chosen = np.sort(substream(seed, 'selfbleu').choice(len(corpus), size=cap, replace=False))
    return [corpus[i] for i in chosen]


def self_bleu_n(corpus: Corpus, n: int = 4, cap: Optional[int] = None, seed: int = 0) -> float:
    """
    Mean BLEU-n of each sample against all other samples, on a seeded subsample of at most
    cap sequences.

    :return: Score in [0, 100]
    """
    _check_order(n)
    if len(corpus) < 2:
        raise CorpusTooSmallError('SelfBLEU', 2, len(corpus))
    sample = subsample(corpus, cap, seed)
    if len(sample) < 2:
        raise CorpusTooSmallError('SelfBLEU', 2, len(sample))
    index = _ReferenceIndex(sample, n)
    return 100.0 * math.fsum(_sentence_bleu(hypothesis, index, n, leave_out=True) for hypothesis in sample) / len(sample)


def distinct_n(corpus: Corpus, n: int) -> float:
    """
    Unique n-grams over all n-grams in the corpus.
    """
    if n < 1:
        raise ValueError(f'n must be at least 1, got {n}')
    grams = [gram for sequence in corpus for gram in ngrams(sequence, n)]
    if not grams:
        raise CorpusTooSmallError(f'Distinct-{n}', 1, 0, f'{n}-grams')
    return len(set(grams)) / len(grams)


def rep_l(corpus: Corpus, l: int) -> float:
    """
    Fraction of token positions whose token already occurs among the previous l tokens of
    the same sequence, pooled over the corpus.
    """
    if l < 1:
        raise ValueError(f'l must be at least 1, got {l}')
    if not corpus:
        raise EmptyCorpusError(f'rep-{l}')
    repeated = positions = 0
    for sequence in corpus:
        for position, token in enumerate(sequence):
            repeated += token in sequence[max(0, position - l):position]
            positions += 1
    return repeated / positions if positions else 0.0


def paired_bootstrap(a: Sequence[float], b: Sequence[float], resamples: int = 1000, seed: int = 0) -> float:
    """
    Paired bootstrap over items. The p-value is the fraction of resamples whose mean
    difference a - b is not strictly on the same side of zero as the full-data difference,
    so identical systems give 1.

    :param a: Per-item metric values of system A
    :param b: Per-item metric values of system B, paired with a
    :param resamples: Number of bootstrap resamples, at least 100
    :param seed: Run seed; indices come from substream (seed, 'bootstrap')
    """
    a = np.asarray(a, dtype=np.float64)
    b = np.asarray(b, dtype=np.float64)
    if a.shape != b.shape:
        raise LengthMismatchError(a.size, b.size)
    if a.size == 0:
        raise EmptyCorpusError('Paired bootstrap', 'list of paired values')
    if resamples < 100:
        raise ValueError(f'Paired bootstrap needs at least 100 resamples, got {resamples}')
    differences = a - b
    observed = np.sign(differences.mean())
    indices = substream(seed, 'bootstrap').integers(0, differences.size, size=(resamples, differences.size))
    means = differences[indices].mean(axis=1)
    return float(np.mean(means * observed <= 0))


def generation_reports(hypotheses: Corpus,
                       references: Corpus,
                       names: Sequence[str],
                       bleu_order: int = 4,
                       selfbleu_cap: Optional[int] = 1000,
                       distinct_order: int = 2,
                       rep_window: int = 16,
                       seed: int = 0) -> List[MetricReport]:
    """
    The requested metrics, in the requested order, for one learner's samples.
    """
    reports = []
    for name in names:
        if name == 'bleu':
            value = bleu_n(hypotheses, references, bleu_order)
            reports.append(MetricReport('bleu', bleu_order, value, len(hypotheses), len(references)))
        elif name == 'selfbleu':
            value = self_bleu_n(hypotheses, bleu_order, selfbleu_cap, seed)
            size = min(len(hypotheses), selfbleu_cap or len(hypotheses))
            reports.append(MetricReport('selfbleu', bleu_order, value, size, size - 1, seed))
        elif name == 'distinct':
            reports.append(MetricReport('distinct', distinct_order, distinct_n(hypotheses, distinct_order),
                                        len(hypotheses)))
        elif name == 'rep':
            reports.append(MetricReport('rep', rep_window, rep_l(hypotheses, rep_window), len(hypotheses)))
        else:
            raise ValueError(f'Unknown metric {name!r}')
        logger.debug('%r', reports[-1])
    return reports
