import logging
from typing import Dict, List, Literal, Optional, Sequence, Tuple

import numpy as np
from pydantic import BaseModel, confloat, conint

from tailrlab.model.core import PARAMETER_NAMES, SequenceModel, TokenSequence, perplexity
from tailrlab.objectives import LossBreakdown, Objective, ObjectiveSpec
from tailrlab.seeding import substream

logger = logging.getLogger(__name__)


class TrainingDivergedError(RuntimeError):
    """
    Error raised when a loss or gradient stops being finite.
    """

    def __init__(self, epoch: int, step: int, batch: Sequence[int], loss_terms: Dict[str, float]):
        self.epoch = epoch
        self.step = step
        self.batch = list(batch)
        self.loss_terms = loss_terms

    def __str__(self):
        return (f'Training diverged at epoch {self.epoch}, step {self.step} on batch items {self.batch[:8]}'
                f'{"..." if len(self.batch) > 8 else ""}: {self.loss_terms}')


class TrainRun(BaseModel):
    """
    Everything that determines a training run besides the dataset.
    """
    objective: ObjectiveSpec = ObjectiveSpec()
    optimizer: Literal['adam', 'sgd'] = 'adam'
    learning_rate: confloat(gt=0.0) = 1e-3
    beta1: confloat(ge=0.0, lt=1.0) = 0.9
    beta2: confloat(ge=0.0, lt=1.0) = 0.999
    eps: confloat(gt=0.0) = 1e-8
    clip_norm: Optional[confloat(gt=0.0)] = 1.0
    weight_decay: confloat(ge=0.0) = 0.0
    epochs: conint(ge=0) = 10
    batch_size: conint(ge=1) = 32
    seed: conint(ge=0) = 0
    selection: Literal['dev_ppl', 'last'] = 'dev_ppl'

    class Config:
        extra = 'forbid'


class EpochLog:
    def __init__(self, epoch: int, train_loss: float, dev_ppl: float, mean_weight: float, dropped: int):
        self.epoch = epoch
        self.train_loss = train_loss
        self.dev_ppl = dev_ppl
        self.mean_weight = mean_weight
        self.dropped = dropped

    def row(self) -> Tuple[int, float, float, float, int]:
        return self.epoch, self.train_loss, self.dev_ppl, self.mean_weight, self.dropped

    def __repr__(self):
        return (f'EpochLog(epoch={self.epoch}, train_loss={self.train_loss!r}, dev_ppl={self.dev_ppl!r}, '
                f'mean_weight={self.mean_weight!r}, dropped={self.dropped})')


class Sgd:
    """
    Plain gradient descent: delta = -lr * (grad + weight_decay * param).
    """

    def __init__(self, learning_rate: float, weight_decay: float = 0.0):
        self.learning_rate = learning_rate
        self.weight_decay = weight_decay

    def step(self, parameters: Dict[str, np.ndarray], gradients: Dict[str, np.ndarray]):
        for name in PARAMETER_NAMES:
            grad = gradients[name] + self.weight_decay * parameters[name]
            parameters[name] -= self.learning_rate * grad


class Adam:
    """
    Adaptive moment estimation with bias correction. Weight decay is added to the gradient.
    """

    def __init__(self, learning_rate: float, beta1: float = 0.9, beta2: float = 0.999, eps: float = 1e-8,
                 weight_decay: float = 0.0):
        self.learning_rate = learning_rate
        self.beta1 = beta1
        self.beta2 = beta2
        self.eps = eps
        self.weight_decay = weight_decay
        self.steps = 0
        self.first: Dict[str, np.ndarray] = {}
        self.second: Dict[str, np.ndarray] = {}

    def step(self, parameters: Dict[str, np.ndarray], gradients: Dict[str, np.ndarray]):
        self.steps += 1
        correction1 = 1.0 - self.beta1 ** self.steps
        correction2 = 1.0 - self.beta2 ** self.steps
        for name in PARAMETER_NAMES:
            grad = gradients[name] + self.weight_decay * parameters[name]
            first = self.first.get(name, np.zeros_like(grad))
            second = self.second.get(name, np.zeros_like(grad))
            first = self.beta1 * first + (1.0 - self.beta1) * grad
            second = self.beta2 * second + (1.0 - self.beta2) * grad * grad
            self.first[name], self.second[name] = first, second
            parameters[name] -= self.learning_rate * (first / correction1) / (np.sqrt(second / correction2) + self.eps)


def build_optimizer(run: TrainRun):
    if run.optimizer == 'sgd':
        return Sgd(run.learning_rate, run.weight_decay)
    return Adam(run.learning_rate, run.beta1, run.beta2, run.eps, run.weight_decay)


def clip_gradients(gradients: Dict[str, np.ndarray], clip_norm: Optional[float]) -> float:
    """
    Scales gradients in place so their global L2 norm is at most clip_norm.

    :return: The norm before clipping
    """
    norm = float(np.sqrt(sum(float((grad * grad).sum()) for grad in gradients.values())))
    if clip_norm is not None and norm > clip_norm:
        scale = clip_norm / norm
        for name in gradients:
            gradients[name] = gradients[name] * scale
    return norm


def loss_and_gradients(model: SequenceModel,
                       batch: Sequence[TokenSequence],
                       objective: Objective) -> Tuple[LossBreakdown, Dict[str, np.ndarray]]:
    """
    One forward and backward pass of the objective on a batch.
    """
    params = model.nodes(trainable=True)
    log_probs, targets = model.forward(batch, params)
    breakdown = objective(log_probs, targets)
    breakdown.total.backward()
    return breakdown, {name: params[name].gradient.values.copy() for name in PARAMETER_NAMES}


def train_step(model: SequenceModel, batch: Sequence[TokenSequence], objective: Objective, optimizer,
               clip_norm: Optional[float]) -> Tuple[LossBreakdown, Dict[str, np.ndarray]]:
    """
    Applies one optimizer step to the model parameters in place.

    :return: The loss breakdown and the (clipped) gradients that were applied
    """
    breakdown, gradients = loss_and_gradients(model, batch, objective)
    clip_gradients(gradients, clip_norm)
    optimizer.step(model.parameters, gradients)
    return breakdown, gradients


def _finite(breakdown: LossBreakdown, gradients: Dict[str, np.ndarray]) -> bool:
    return np.isfinite(breakdown.value) and all(np.all(np.isfinite(grad)) for grad in gradients.values())


def train(model: SequenceModel,
          dataset: Sequence[TokenSequence],
          run: TrainRun,
          dev: Optional[Sequence[TokenSequence]] = None,
          max_steps: Optional[int] = None) -> Tuple[SequenceModel, List[EpochLog]]:
    """
    Mini-batch training with the configured objective and optimizer.

    Batches are drawn from a seeded permutation per epoch. After every epoch the dev
    perplexity is logged; with selection 'dev_ppl' the parameters of the best epoch are
    returned, otherwise those of the last one.

    :param model: Initial model, left unchanged
    :param dataset: Training sequences
    :param run: Run settings
    :param dev: Held-out sequences for checkpoint selection, the training set when omitted
    :param max_steps: Optional cap on optimizer steps over the whole run
    :return: The selected model and one log entry per epoch
    """
    if not dataset:
        raise ValueError('Training needs a nonempty dataset')
    dev = dev or dataset
    current = model.copy()
    objective = Objective(run.objective)
    optimizer = build_optimizer(run)
    rng = substream(run.seed, 'batches')

    best, best_ppl, log = current.copy(), float('inf'), []
    steps = 0
    for epoch in range(1, run.epochs + 1):
        order = rng.permutation(len(dataset))
        losses, weights, counts = [], [], []
        for start in range(0, len(order), run.batch_size):
            if max_steps is not None and steps >= max_steps:
                break
            items = order[start:start + run.batch_size]
            batch = [dataset[i] for i in items]
            breakdown, gradients = loss_and_gradients(current, batch, objective)
            if not _finite(breakdown, gradients):
                raise TrainingDivergedError(epoch, steps, [int(i) for i in items],
                                            {'total': breakdown.value, 'mean_weight': breakdown.mean_weight})
            clip_gradients(gradients, run.clip_norm)
            optimizer.step(current.parameters, gradients)
            steps += 1
            losses.append(breakdown.value)
            weights.append(breakdown.mean_weight)
            counts.append(float(breakdown.mask.sum()))

        dev_ppl = perplexity(current, dev)
        dropped = objective.state.dropped if objective.state is not None else 0
        entry = EpochLog(epoch,
                         float(np.average(losses, weights=counts)) if losses else 0.0,
                         dev_ppl,
                         float(np.average(weights, weights=counts)) if weights else 0.0,
                         dropped)
        log.append(entry)
        logger.info('[%s] epoch %d loss=%.4f dev_ppl=%.3f mean_weight=%.4f dropped=%d',
                    objective.label, epoch, entry.train_loss, dev_ppl, entry.mean_weight, dropped)
        if not np.isfinite(dev_ppl):
            raise TrainingDivergedError(epoch, steps, [], {'dev_ppl': dev_ppl})
        if run.selection == 'last' or dev_ppl < best_ppl:
            best, best_ppl = current.copy(), dev_ppl

    if not log:
        return current, log
    return best, log
