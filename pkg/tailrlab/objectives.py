"""
Token-level training losses over batch-major log-probability matrices.

Every loss takes a log-probability Node with one row per (sequence, position) pair, row index
b * T + t, and a TargetBatch holding the target ids and the padding mask for the same rows.
"""
import logging
from collections import deque
from typing import Callable, Deque, Iterable, List, Literal, Optional, Sequence, Tuple

import numpy as np
from pydantic import BaseModel, confloat, conint, validator

from tailrlab import autodiff as ad
from tailrlab.distributions import CategoricalDist, mixture_proxy_dist

logger = logging.getLogger(__name__)

UNLIKELIHOOD_CLAMP = 1e-5


class TargetOutOfRangeError(ValueError):
    """
    Error raised when a target id does not index the model's output vocabulary.
    """

    def __init__(self, row: int, position: int, token: int, vocab_size: int):
        self.row = row
        self.position = position
        self.token = token
        self.vocab_size = vocab_size

    def __str__(self):
        return (f'Target id {self.token} at sequence {self.row}, position {self.position} '
                f'is outside the vocabulary of size {self.vocab_size}.')


class EmptyTargetError(ValueError):
    """
    Error raised when a batch has no unmasked position to average over.
    """

    def __str__(self):
        return 'Target batch has no unmasked positions.'


class TailrConfig(BaseModel):
    """
    Mixture coefficient gamma and weight floor b_m of the TaiLr weight
    max(b_m, p / (gamma + (1 - gamma) p)).
    """
    gamma: confloat(ge=0.0, le=1.0) = 1e-3
    weight_floor: confloat(ge=0.0, lt=1.0) = 0.0


class ObjectiveSpec(BaseModel):
    """
    Objective tag with its hyperparameters. Fields that do not belong to the chosen kind are
    ignored.
    """
    kind: Literal['mle', 'tailr', 'unlikelihood', 'loss_truncation', 'gold'] = 'mle'
    label: Optional[str] = None
    tailr: TailrConfig = TailrConfig()
    alpha: confloat(ge=0.0) = 1.0
    candidates: Literal['repeated', 'prefix'] = 'repeated'
    drop_fraction: confloat(ge=0.0, lt=1.0) = 0.1
    hotstart_steps: conint(ge=0) = 1000
    window: conint(ge=1) = 1000
    weight_lower_bound: confloat(gt=0.0, le=1.0) = 0.1

    @validator('label', always=True)
    def default_label(cls, value, values):
        return value or values.get('kind')

    class Config:
        extra = 'forbid'


class TargetBatch:
    """
    Target ids and padding mask for B sequences padded to horizon T.
    """

    def __init__(self, ids: np.ndarray, mask: np.ndarray):
        ids = np.asarray(ids, dtype=np.int64)
        mask = np.asarray(mask, dtype=np.float64)
        if ids.ndim != 2 or ids.shape != mask.shape:
            raise ad.ShapeMismatchError('target_batch', ids.shape, mask.shape)
        self.ids = ids
        self.mask = mask

    @classmethod
    def from_sequences(cls, sequences: Sequence) -> 'TargetBatch':
        """
        :param sequences: Token sequences (anything with a tokens attribute, EOS included)
        :return: Padded batch; padding positions carry id 0 and mask 0
        """
        horizon = max(len(sequence.tokens) for sequence in sequences)
        ids = np.zeros((len(sequences), horizon), dtype=np.int64)
        mask = np.zeros((len(sequences), horizon))
        for row, sequence in enumerate(sequences):
            ids[row, :len(sequence.tokens)] = sequence.tokens
            mask[row, :len(sequence.tokens)] = 1.0
        return cls(ids, mask)

    @property
    def batch_size(self) -> int:
        return self.ids.shape[0]

    @property
    def horizon(self) -> int:
        return self.ids.shape[1]

    @property
    def flat_ids(self) -> np.ndarray:
        return self.ids.reshape(-1)

    @property
    def flat_mask(self) -> np.ndarray:
        return self.mask.reshape(-1)

    def with_mask(self, mask: np.ndarray) -> 'TargetBatch':
        return TargetBatch(self.ids, mask)

    def __repr__(self):
        return f'TargetBatch(batch_size={self.batch_size}, horizon={self.horizon})'


class LossBreakdown:
    """
    Per-position losses and weights (B x T arrays) plus the differentiable total, the mean
    over unmasked positions.
    """

    def __init__(self, total: ad.Node, per_position_loss: np.ndarray, per_position_weight: np.ndarray,
                 mask: np.ndarray):
        self.total = total
        self.per_position_loss = per_position_loss
        self.per_position_weight = per_position_weight
        self.mask = mask

    @property
    def value(self) -> float:
        return self.total.value.item()

    @property
    def mean_weight(self) -> float:
        count = self.mask.sum()
        return float((self.per_position_weight * self.mask).sum() / count) if count else 0.0

    def sequence_nll(self) -> np.ndarray:
        return (self.per_position_loss * self.mask).sum(axis=1)

    def __repr__(self):
        return f'LossBreakdown(total={self.value!r}, mean_weight={self.mean_weight!r})'


class TruncationState:
    """
    Streaming (1 - c)-quantile of recent sequence NLLs over a bounded window.
    """

    def __init__(self, fraction: float, hotstart_steps: int = 0, window: int = 1000):
        if not 0.0 <= fraction < 1.0:
            raise ValueError(f'Drop fraction must lie in [0, 1), got {fraction!r}')
        self.fraction = fraction
        self.hotstart_steps = hotstart_steps
        self.buffer: Deque[float] = deque(maxlen=window)
        self.steps = 0
        self.quantile_estimate = float('inf')
        self.dropped = 0

    @property
    def in_hotstart(self) -> bool:
        return self.steps <= self.hotstart_steps

    def __repr__(self):
        return (f'TruncationState(fraction={self.fraction}, steps={self.steps}, '
                f'quantile_estimate={self.quantile_estimate!r})')


def _validated(log_probs: ad.Node, targets: TargetBatch) -> Tuple[np.ndarray, np.ndarray]:
    rows, vocab_size = log_probs.shape
    if rows != targets.batch_size * targets.horizon:
        raise ad.ShapeMismatchError('loss', log_probs.shape, targets.ids.shape)
    bad = np.argwhere((targets.ids < 0) | (targets.ids >= vocab_size))
    if bad.size:
        row, position = (int(i) for i in bad[0])
        raise TargetOutOfRangeError(row, position, int(targets.ids[row, position]), vocab_size)
    if targets.mask.sum() <= 0:
        raise EmptyTargetError()
    return targets.flat_ids, targets.flat_mask


def _masked_mean(per_position: ad.Node, mask: np.ndarray) -> ad.Node:
    count = max(float(mask.sum()), 1.0)
    return ad.div(ad.total(ad.mul(per_position, ad.constant(mask))), count)


def _breakdown(per_position: ad.Node, weights: np.ndarray, targets: TargetBatch, mask: np.ndarray) -> LossBreakdown:
    shape = targets.ids.shape
    return LossBreakdown(total=_masked_mean(per_position, mask),
                         per_position_loss=per_position.data.reshape(shape).copy(),
                         per_position_weight=np.asarray(weights, dtype=np.float64).reshape(shape),
                         mask=mask.reshape(shape))


def _weighted_nll(log_probs: ad.Node,
                  targets: TargetBatch,
                  weight: Callable[[ad.Node], ad.Node]) -> LossBreakdown:
    ids, mask = _validated(log_probs, targets)
    target_log_probs = ad.pick(log_probs, ids)
    weights = ad.stop_gradient(weight(ad.exp(target_log_probs)))
    per_position = ad.neg(ad.mul(weights, target_log_probs))
    return _breakdown(per_position, weights.data, targets, mask)


def nll_loss(log_probs: ad.Node, targets: TargetBatch) -> LossBreakdown:
    """
    Negative log-likelihood of the targets. Weights are 1 everywhere.

    :param log_probs: Node of shape (B * T, V)
    :param targets: Target ids and padding mask
    :return: Loss breakdown with total = mean over unmasked positions
    """
    ids, mask = _validated(log_probs, targets)
    per_position = ad.neg(ad.pick(log_probs, ids))
    return _breakdown(per_position, np.ones(ids.shape), targets, mask)


def tailr_weight(probability: ad.Node, config: TailrConfig) -> ad.Node:
    gamma = config.gamma
    if gamma == 0.0:
        return ad.constant(np.ones(probability.shape))
    weight = ad.div(probability, ad.add(ad.mul(probability, 1.0 - gamma), gamma))
    return ad.maximum(weight, config.weight_floor)


def tailr_loss(log_probs: ad.Node, targets: TargetBatch, config: TailrConfig) -> LossBreakdown:
    """
    NLL scaled per position by max(b_m, p / (gamma + (1 - gamma) p)). The weight is computed
    from the same forward pass and detached, so only the log term receives gradient.
    """
    return _weighted_nll(log_probs, targets, lambda probability: tailr_weight(probability, config))


def gold_loss(log_probs: ad.Node, targets: TargetBatch, weight_lower_bound: float) -> LossBreakdown:
    """
    Importance weighted NLL with a uniform behavior policy: the detached weight is
    max(bound, p).
    """
    if not 0.0 < weight_lower_bound <= 1.0:
        raise ValueError(f'Weight lower bound must lie in (0, 1], got {weight_lower_bound!r}')
    return _weighted_nll(log_probs, targets, lambda probability: ad.maximum(probability, weight_lower_bound))


def proxy_tvd_estimate(model_dist: CategoricalDist, w: int, gamma: float) -> float:
    """
    Exact value of the proxy TVD expectation 1 - E_{y~proxy}[min(1, p(y) / proxy(y))] over the
    full vocabulary.

    :param model_dist: The model conditional p
    :param w: Observed token
    :param gamma: Mixture coefficient of the proxy
    :return: The estimate, equal to TVD(proxy, p)
    """
    proxy = mixture_proxy_dist(gamma, w, model_dist).probs
    model = model_dist.probs
    supported = proxy > 0
    ratios = np.minimum(1.0, model[supported] / proxy[supported])
    return float(1.0 - np.dot(proxy[supported], ratios))


def _negative_candidates(sequence: np.ndarray, length: int, rule: str) -> List[Tuple[int, int]]:
    candidates = []
    counts = {}
    for position in range(length):
        target = int(sequence[position])
        for token, count in counts.items():
            if token != target and (rule == 'prefix' or count >= 2):
                candidates.append((position, token))
        counts[target] = counts.get(target, 0) + 1
    return candidates


def unlikelihood_loss(log_probs: ad.Node,
                      targets: TargetBatch,
                      alpha: float,
                      candidates: str = 'repeated') -> LossBreakdown:
    """
    NLL plus alpha * sum_c -log(1 - p(c)) over negative candidates c at each position.

    With candidates='prefix' every distinct earlier token other than the target is a candidate.
    With candidates='repeated' only earlier tokens that already occurred at least twice are, so a
    sequence without repeats incurs no penalty at all. 1 - p(c) is clamped at 1e-5.
    """
    if alpha < 0:
        raise ValueError(f'Unlikelihood alpha must be non-negative, got {alpha!r}')
    if candidates not in ('repeated', 'prefix'):
        raise ValueError(f'Unknown candidate rule {candidates!r}')
    ids, mask = _validated(log_probs, targets)
    per_position = ad.neg(ad.pick(log_probs, ids))

    horizon = targets.horizon
    rows, tokens = [], []
    for b in range(targets.batch_size):
        length = int(targets.mask[b].sum())
        for position, token in _negative_candidates(targets.ids[b], length, candidates):
            rows.append(b * horizon + position)
            tokens.append(token)

    if alpha > 0 and rows:
        candidate_log_probs = ad.pick(ad.take_rows(log_probs, rows), tokens)
        complement = ad.maximum(ad.sub(1.0, ad.exp(candidate_log_probs)), UNLIKELIHOOD_CLAMP)
        penalties = ad.neg(ad.log(complement))
        assignment = np.zeros((per_position.shape[0], len(rows)))
        assignment[rows, np.arange(len(rows))] = 1.0
        position_penalty = ad.reshape(ad.matmul(assignment, ad.reshape(penalties, (len(rows), 1))),
                                      per_position.shape)
        per_position = ad.add(per_position, ad.mul(position_penalty, alpha))

    return _breakdown(per_position, np.ones(ids.shape), targets, mask)


def loss_truncation_step(sequence_nll: float, state: TruncationState) -> Tuple[bool, TruncationState]:
    """
    Observes one sequence NLL and decides whether to keep it.

    The value joins the window first, then the (1 - c)-quantile of the window is re-estimated.
    The sequence is dropped iff its NLL lies strictly above that quantile; during hotstart it
    is always kept.

    :param sequence_nll: Summed token NLL of the sequence
    :param state: Truncation state, updated in place
    :return: Keep decision and the updated state
    """
    state.steps += 1
    state.buffer.append(float(sequence_nll))
    state.quantile_estimate = float(np.quantile(np.fromiter(state.buffer, dtype=np.float64), 1.0 - state.fraction))
    if state.in_hotstart or state.fraction == 0.0:
        return True, state
    keep = sequence_nll <= state.quantile_estimate
    if not keep:
        state.dropped += 1
    return keep, state


def loss_truncation_loss(log_probs: ad.Node, targets: TargetBatch, state: TruncationState) -> LossBreakdown:
    """
    NLL over the sequences that loss_truncation_step keeps. Dropped sequences are masked
    out and carry weight 0.
    """
    full = nll_loss(log_probs, targets)
    keep = np.array([loss_truncation_step(nll, state)[0] for nll in full.sequence_nll()], dtype=np.float64)
    if not keep.all():
        logger.debug('Loss truncation dropped %d of %d sequences (quantile %.4f)',
                     int((keep == 0).sum()), keep.size, state.quantile_estimate)
    mask = targets.mask * keep[:, None]
    ids = targets.flat_ids
    per_position = ad.neg(ad.pick(log_probs, ids))
    return _breakdown(per_position, np.broadcast_to(keep[:, None], targets.ids.shape), targets, mask.reshape(-1))


class Objective:
    """
    A configured objective. Loss truncation keeps its streaming state across calls.
    """

    def __init__(self, spec: ObjectiveSpec):
        self.spec = spec
        self.state: Optional[TruncationState] = None
        if spec.kind == 'loss_truncation':
            self.state = TruncationState(spec.drop_fraction, spec.hotstart_steps, spec.window)

    @property
    def label(self) -> str:
        return self.spec.label

    def __call__(self, log_probs: ad.Node, targets: TargetBatch) -> LossBreakdown:
        kind = self.spec.kind
        if kind == 'mle':
            return nll_loss(log_probs, targets)
        if kind == 'tailr':
            return tailr_loss(log_probs, targets, self.spec.tailr)
        if kind == 'unlikelihood':
            return unlikelihood_loss(log_probs, targets, self.spec.alpha, self.spec.candidates)
        if kind == 'gold':
            return gold_loss(log_probs, targets, self.spec.weight_lower_bound)
        return loss_truncation_loss(log_probs, targets, self.state)

    def __repr__(self):
        return f'Objective(label={self.label}, kind={self.spec.kind})'


def weight_curve(gammas: Iterable[float], grid: Optional[Sequence[float]] = None) -> List[Tuple[float, float, float]]:
    """
    Rows of (gamma, p, p / (gamma + (1 - gamma) p)) over a probability grid, without floor.
    """
    grid = np.linspace(0.0, 1.0, 101) if grid is None else np.asarray(grid, dtype=np.float64)
    rows = []
    for gamma in gammas:
        weights = tailr_weight(ad.constant(grid), TailrConfig(gamma=gamma, weight_floor=0.0)).data
        rows.extend((float(gamma), float(p), float(weight)) for p, weight in zip(grid, weights))
    return rows
