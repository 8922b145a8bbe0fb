"""
Perturbation chains and the estimation-error tables built from them.
"""
import logging
from collections import defaultdict
from typing import Dict, List, Optional, Sequence, Tuple

import numpy as np

from tailrlab.model.core import SequenceModel, TokenSequence, sequence_logprobs
from tailrlab.serialization import PathLike, read_csv, write_csv
from tailrlab.seeding import substream
from tailrlab.synth.core import ensure_same_vocab

logger = logging.getLogger(__name__)

KINDS = ('repeat', 'delete', 'substitute')
ORIGIN = 'origin'
TRACE_HEADER = ('origin_id', 'step', 'kind', 'length', 'log_p_o', 'log_p_theta', 'error')
ERROR_MAP_HEADER = ('bucket', 'log_p_o_low', 'log_p_o_high', 'step', 'mean_error', 'count')
LENGTH_HEADER = ('length', 'mean_max_error', 'count')


class PerturbationError(ValueError):
    """
    Error raised when a perturbation's precondition does not hold for a sequence.
    """

    def __init__(self, kind: str, body_length: int, reason: str):
        self.kind = kind
        self.body_length = body_length
        self.reason = reason

    def __str__(self):
        return f'Cannot apply {self.kind} to a body of {self.body_length} tokens: {self.reason}.'


def perturb(sequence: TokenSequence, kind: str, rng: np.random.Generator, vocab_size: int) -> TokenSequence:
    """
    Applies one edit to the body of a sequence; EOS is always kept.

    repeat duplicates a uniformly chosen body token in place, delete removes the last body
    token and substitute replaces a uniformly chosen body token with a different uniformly
    chosen body token.

    :raises PerturbationError: when the body is too short for the edit
    """
    body = list(sequence.body)
    if kind == 'repeat':
        if len(body) < 1:
            raise PerturbationError(kind, len(body), 'needs at least one body token')
        index = int(rng.integers(len(body)))
        body.insert(index, body[index])
    elif kind == 'delete':
        if len(body) < 2:
            raise PerturbationError(kind, len(body), 'needs at least two body tokens')
        body.pop()
    elif kind == 'substitute':
        if len(body) < 1:
            raise PerturbationError(kind, len(body), 'needs at least one body token')
        if vocab_size < 3:
            raise PerturbationError(kind, len(body), f'vocabulary of {vocab_size} has no alternative body token')
        index = int(rng.integers(len(body)))
        # uniform over the vocab_size - 2 body tokens other than the current one
        replacement = int(rng.integers(1, vocab_size - 1))
        if replacement >= body[index]:
            replacement += 1
        body[index] = replacement
    else:
        raise ValueError(f'Unknown perturbation kind {kind!r}; expected one of {KINDS}')
    return TokenSequence.from_body(body, sequence.context)


class PerturbationTrace:
    """
    An origin sequence (step 0) and its chain of perturbed variants with the log-probabilities
    of every step under the oracle and the learner.
    """

    def __init__(self,
                 origin_id: int,
                 kinds: Sequence[str],
                 lengths: Sequence[int],
                 log_p_o: Sequence[float],
                 log_p_theta: Sequence[float],
                 sequences: Optional[Sequence[TokenSequence]] = None):
        self.origin_id = origin_id
        self.kinds = list(kinds)
        self.lengths = list(lengths)
        self.log_p_o = np.asarray(log_p_o, dtype=np.float64)
        self.log_p_theta = np.asarray(log_p_theta, dtype=np.float64)
        self.sequences = list(sequences) if sequences is not None else None

    @property
    def errors(self) -> np.ndarray:
        return self.log_p_theta - self.log_p_o

    @property
    def steps(self) -> int:
        return len(self.kinds) - 1

    @property
    def origin_length(self) -> int:
        return self.lengths[0]

    def rows(self) -> List[Tuple]:
        return [(self.origin_id, step, self.kinds[step], self.lengths[step], float(self.log_p_o[step]),
                 float(self.log_p_theta[step]), float(self.errors[step])) for step in range(len(self.kinds))]

    def __repr__(self):
        return f'PerturbationTrace(origin_id={self.origin_id}, steps={self.steps})'


def perturbation_chain(origin: TokenSequence, steps: int, kinds: Sequence[str], rng: np.random.Generator,
                       vocab_size: int) -> Tuple[List[TokenSequence], List[str]]:
    """
    Up to steps successive edits. Each kind is drawn uniformly from kinds; when it does not
    apply, the remaining kinds are tried in random order, and the chain ends early when none does.
    """
    sequences, applied = [origin], [ORIGIN]
    current = origin
    for step in range(1, steps + 1):
        first = kinds[int(rng.integers(len(kinds)))] if len(kinds) > 1 else kinds[0]
        others = [kind for kind in kinds if kind != first]
        candidates = [first] + [others[i] for i in rng.permutation(len(others))]
        for kind in candidates:
            try:
                current = perturb(current, kind, rng, vocab_size)
            except PerturbationError as ex:
                logger.debug('Step %d: %s', step, ex)
                continue
            sequences.append(current)
            applied.append(kind)
            break
        else:
            logger.warning('Perturbation chain stopped after %d of %d steps: no kind in %s applies to %s',
                           step - 1, steps, list(kinds), current)
            break
    return sequences, applied


def build_traces(dataset: Sequence[TokenSequence],
                 model: SequenceModel,
                 oracle: SequenceModel,
                 steps: int,
                 kinds: Sequence[str] = KINDS,
                 seed: int = 0,
                 batch_size: int = 256) -> List[PerturbationTrace]:
    """
    Builds one trace per origin in dataset, origin i drawing from substream (seed, 'perturb', i).
    Log-probabilities of all steps of all traces are computed in one pass per model, in trace
    order, with the given batch size.
    """
    ensure_same_vocab(model, oracle)
    unknown = [kind for kind in kinds if kind not in KINDS]
    if unknown or not kinds:
        raise ValueError(f'Perturbation kinds must be a nonempty subset of {KINDS}, got {list(kinds)}')

    chains = []
    for origin_id, origin in enumerate(dataset):
        rng = substream(seed, 'perturb', origin_id)
        chains.append(perturbation_chain(origin, steps, kinds, rng, oracle.vocab_size))

    flat = [sequence for sequences, _ in chains for sequence in sequences]
    log_p_o = sequence_logprobs(oracle, flat, batch_size)
    log_p_theta = sequence_logprobs(model, flat, batch_size)

    traces, offset = [], 0
    for origin_id, (sequences, applied) in enumerate(chains):
        end = offset + len(sequences)
        traces.append(PerturbationTrace(origin_id, applied, [len(sequence) for sequence in sequences],
                                        log_p_o[offset:end], log_p_theta[offset:end], sequences))
        offset = end
    return traces


def trace_sequences(traces: Sequence[PerturbationTrace]) -> List[TokenSequence]:
    """
    All step sequences in the order build_traces scores them.
    """
    return [sequence for trace in traces for sequence in trace.sequences]


def write_traces(path: PathLike, traces: Sequence[PerturbationTrace]):
    return write_csv(path, TRACE_HEADER, [row for trace in traces for row in trace.rows()])


def read_traces(path: PathLike) -> List[PerturbationTrace]:
    grouped: Dict[int, List[Dict[str, str]]] = defaultdict(list)
    for row in read_csv(path):
        grouped[int(row['origin_id'])].append(row)
    traces = []
    for origin_id in sorted(grouped):
        rows = sorted(grouped[origin_id], key=lambda row: int(row['step']))
        traces.append(PerturbationTrace(origin_id,
                                        [row['kind'] for row in rows],
                                        [int(row['length']) for row in rows],
                                        [float(row['log_p_o']) for row in rows],
                                        [float(row['log_p_theta']) for row in rows]))
    return traces


def error_map(traces: Sequence[PerturbationTrace], buckets: int = 20) -> List[Tuple]:
    """
    Mean error per (log p_o bucket, perturbation step). Buckets split the observed log p_o range
    into equal widths; cells without variants are omitted.

    :return: Rows (bucket, low, high, step, mean_error, count) sorted by bucket then step
    """
    if not traces:
        raise ValueError('Error map needs at least one trace')
    values = np.concatenate([trace.log_p_o for trace in traces])
    low, high = float(values.min()), float(values.max())
    width = (high - low) / buckets

    sums: Dict[Tuple[int, int], float] = defaultdict(float)
    counts: Dict[Tuple[int, int], int] = defaultdict(int)
    for trace in traces:
        errors = trace.errors
        for step, value in enumerate(trace.log_p_o):
            bucket = min(int((value - low) / width), buckets - 1) if width > 0 else 0
            sums[bucket, step] += float(errors[step])
            counts[bucket, step] += 1

    rows = []
    for bucket, step in sorted(counts):
        rows.append((bucket, low + bucket * width, low + (bucket + 1) * width, step,
                     sums[bucket, step] / counts[bucket, step], counts[bucket, step]))
    return rows


def max_overestimation_by_length(traces: Sequence[PerturbationTrace], width: int = 1) -> List[Tuple]:
    """
    For each origin, the maximum error over its perturbed variants, averaged within buckets of
    origin length (tokens including EOS). Origins without variants are left out.

    :return: Rows (length bucket start, mean max error, origin count) sorted by length
    """
    if not traces:
        raise ValueError('Overestimation table needs at least one trace')
    grouped: Dict[int, List[float]] = defaultdict(list)
    for trace in traces:
        if trace.steps < 1:
            continue
        grouped[trace.origin_length // width * width].append(float(trace.errors[1:].max()))
    return [(length, float(np.mean(values)), len(values)) for length, values in sorted(grouped.items())]


def overestimation_slope(table: Sequence[Tuple]) -> float:
    """
    Least-squares slope of mean max error against length.
    """
    if len(table) < 2:
        return 0.0
    lengths = np.array([row[0] for row in table], dtype=np.float64)
    values = np.array([row[1] for row in table], dtype=np.float64)
    return float(np.polyfit(lengths, values, 1)[0])


def variant_nll(traces: Sequence[PerturbationTrace]) -> float:
    """
    Mean learner NLL over all perturbed variants.
    """
    values = [-trace.log_p_theta[1:] for trace in traces if trace.steps > 0]
    return float(np.concatenate(values).mean()) if values else 0.0
