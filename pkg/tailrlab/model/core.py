"""
Gated recurrent language model with exact conditionals.

Output vocabulary: EOS = 0 and body tokens 1..V-1. Input-only ids: BOS = V and PAD = V + 1,
so the embedding table has V + 2 rows.
"""
import logging
from typing import Dict, List, Optional, Sequence, Tuple

import numpy as np
from pydantic import BaseModel, confloat, conint

from tailrlab import autodiff as ad
from tailrlab.distributions import CategoricalDist
from tailrlab.objectives import TargetBatch

logger = logging.getLogger(__name__)

EOS = 0

PARAMETER_NAMES = (
    'emb',
    'w_xr', 'w_xz', 'w_xn',
    'w_hr', 'w_hz', 'w_hn',
    'b_r', 'b_z', 'b_xn', 'b_hn',
    'w_out', 'b_out',
)


class InvalidSequenceError(ValueError):
    """
    Error raised when a token sequence breaks the EOS or vocabulary contract.
    """

    def __init__(self, tokens: Sequence[int], reason: str):
        self.tokens = tuple(tokens)
        self.reason = reason

    def __str__(self):
        return f'Invalid token sequence {list(self.tokens)}: {self.reason}.'


class Vocab:
    """
    Reserved ids of a vocabulary with V output tokens, plus optional surface words.
    """

    def __init__(self, size: int, words: Optional[Sequence[str]] = None):
        if size < 2:
            raise ValueError(f'Vocabulary needs EOS and at least one body token, got size {size}')
        if words is not None and len(words) != size:
            raise ValueError(f'Expected {size} words, got {len(words)}')
        self.size = size
        self.words = list(words) if words is not None else None

    eos = EOS

    @property
    def bos(self) -> int:
        return self.size

    @property
    def pad(self) -> int:
        return self.size + 1

    @property
    def input_size(self) -> int:
        return self.size + 2

    @property
    def body_tokens(self) -> range:
        return range(1, self.size)

    def decode(self, tokens: Sequence[int]) -> str:
        if self.words is None:
            return ' '.join(str(token) for token in tokens)
        return ' '.join(self.words[token] for token in tokens if token != self.eos)

    def __eq__(self, other: object) -> bool:
        return isinstance(other, Vocab) and other.size == self.size

    def __repr__(self):
        return f'Vocab(size={self.size})'


class TokenSequence:
    """
    Token ids ending in EOS, with an optional conditioning context of body ids.
    """

    __slots__ = ('tokens', 'context', 'truncated')

    def __init__(self, tokens: Sequence[int], context: Sequence[int] = (), truncated: bool = False):
        tokens = tuple(int(token) for token in tokens)
        if not tokens:
            raise InvalidSequenceError(tokens, 'a sequence holds at least the EOS token')
        if tokens[-1] != EOS or EOS in tokens[:-1]:
            raise InvalidSequenceError(tokens, 'EOS must appear exactly once, as the last token')
        if min(tokens) < 0:
            raise InvalidSequenceError(tokens, 'token ids must be non-negative')
        self.tokens = tokens
        self.context = tuple(int(token) for token in context)
        self.truncated = truncated

    @classmethod
    def from_body(cls, body: Sequence[int], context: Sequence[int] = ()) -> 'TokenSequence':
        return cls(tuple(body) + (EOS,), context)

    @property
    def body(self) -> Tuple[int, ...]:
        return self.tokens[:-1]

    def __len__(self):
        return len(self.tokens)

    def __eq__(self, other: object) -> bool:
        return isinstance(other, TokenSequence) and other.tokens == self.tokens and other.context == self.context

    def __hash__(self):
        return hash((self.tokens, self.context))

    def __repr__(self):
        return f'TokenSequence(tokens={list(self.tokens)})'


class ModelConfig(BaseModel):
    """
    Architecture of the recurrent model.
    """
    vocab_size: conint(ge=2) = 50
    embedding_dim: conint(ge=1) = 64
    hidden_dim: conint(ge=1) = 128
    output_gain: confloat(gt=0.0) = 1.0
    zero_init: bool = False

    class Config:
        extra = 'forbid'


def parameter_shapes(config: ModelConfig) -> Dict[str, Tuple[int, ...]]:
    """
    Array shape of every parameter; the embedding table also holds the BOS and PAD rows.
    """
    vocab_input = config.vocab_size + 2
    e, h, v = config.embedding_dim, config.hidden_dim, config.vocab_size
    return {
        'emb': (vocab_input, e),
        'w_xr': (e, h), 'w_xz': (e, h), 'w_xn': (e, h),
        'w_hr': (h, h), 'w_hz': (h, h), 'w_hn': (h, h),
        'b_r': (h,), 'b_z': (h,), 'b_xn': (h,), 'b_hn': (h,),
        'w_out': (h, v), 'b_out': (v,),
    }


class SequenceModel:
    """
    One-layer gated recurrent cell with an output projection, used as both oracle and learner.

    Parameters are plain float64 arrays in PARAMETER_NAMES order. Every forward pass builds
    a graph from them, with parameter leaves when gradients are wanted and constants otherwise.
    """

    def __init__(self, config: ModelConfig, parameters: Dict[str, np.ndarray], vocab: Optional[Vocab] = None):
        shapes = parameter_shapes(config)
        missing = [name for name in PARAMETER_NAMES if name not in parameters]
        if missing:
            raise ValueError(f'Missing model parameters: {missing}')
        for name in PARAMETER_NAMES:
            if parameters[name].shape != shapes[name]:
                raise ad.ShapeMismatchError(name, parameters[name].shape, shapes[name])
        self.config = config
        self.vocab = vocab or Vocab(config.vocab_size)
        self.parameters = {name: np.array(parameters[name], dtype=np.float64) for name in PARAMETER_NAMES}

    @classmethod
    def initialize(cls, config: ModelConfig, rng: np.random.Generator, vocab: Optional[Vocab] = None) -> 'SequenceModel':
        """
        Draws parameters in PARAMETER_NAMES order: embeddings from N(0, 1), everything else from
        U(-1/sqrt(H), 1/sqrt(H)); the output matrix is scaled by output_gain. zero_init gives
        all-zero parameters and hence a uniform model.
        """
        parameters = {}
        bound = 1.0 / np.sqrt(config.hidden_dim)
        for name, shape in parameter_shapes(config).items():
            if config.zero_init:
                parameters[name] = np.zeros(shape)
            elif name == 'emb':
                parameters[name] = rng.standard_normal(shape)
            else:
                parameters[name] = rng.uniform(-bound, bound, size=shape)
        parameters['w_out'] = parameters['w_out'] * config.output_gain
        return cls(config, parameters, vocab)

    @property
    def vocab_size(self) -> int:
        return self.config.vocab_size

    def copy(self) -> 'SequenceModel':
        return SequenceModel(self.config, {name: value.copy() for name, value in self.parameters.items()}, self.vocab)

    def nodes(self, trainable: bool = False) -> Dict[str, ad.Node]:
        build = ad.parameter if trainable else ad.constant
        return {name: build(self.parameters[name]) for name in PARAMETER_NAMES}

    def check(self, sequence: TokenSequence):
        if max(sequence.tokens) >= self.vocab_size:
            raise InvalidSequenceError(sequence.tokens, f'ids must be below the vocabulary size {self.vocab_size}')
        if sequence.context and max(sequence.context) >= self.vocab_size:
            raise InvalidSequenceError(sequence.context, f'context ids must be below {self.vocab_size}')

    def _cell(self, params: Dict[str, ad.Node], inputs: np.ndarray, hidden: ad.Node) -> ad.Node:
        x = ad.take_rows(params['emb'], inputs)
        reset = ad.sigmoid(ad.add(ad.add_bias(ad.matmul(x, params['w_xr']), params['b_r']),
                                  ad.matmul(hidden, params['w_hr'])))
        update = ad.sigmoid(ad.add(ad.add_bias(ad.matmul(x, params['w_xz']), params['b_z']),
                                   ad.matmul(hidden, params['w_hz'])))
        candidate = ad.tanh(ad.add(ad.add_bias(ad.matmul(x, params['w_xn']), params['b_xn']),
                                   ad.mul(reset, ad.add_bias(ad.matmul(hidden, params['w_hn']), params['b_hn']))))
        return ad.add(ad.mul(ad.sub(1.0, update), candidate), ad.mul(update, hidden))

    def rollout(self, params: Dict[str, ad.Node], inputs: np.ndarray) -> List[ad.Node]:
        """
        Runs the cell over a B x L matrix of input ids and returns the L hidden states.
        """
        hidden = ad.constant(np.zeros((inputs.shape[0], self.config.hidden_dim)))
        states = []
        for step in range(inputs.shape[1]):
            hidden = self._cell(params, inputs[:, step], hidden)
            states.append(hidden)
        return states

    def output_log_probs(self, params: Dict[str, ad.Node], hidden: ad.Node) -> ad.Node:
        return ad.softmax_log_probs(ad.add_bias(ad.matmul(hidden, params['w_out']), params['b_out']))

    def next_log_probs(self, params: Dict[str, ad.Node], prefix: Sequence[int], context: Sequence[int] = ()) -> ad.Node:
        """
        1 x V log-probabilities of the token following prefix (body ids) under context.
        """
        inputs = np.array([tuple(context) + (self.vocab.bos,) + tuple(prefix)], dtype=np.int64)
        return self.output_log_probs(params, self.rollout(params, inputs)[-1])

    def forward(self, sequences: Sequence[TokenSequence], params: Optional[Dict[str, ad.Node]] = None
                ) -> Tuple[ad.Node, TargetBatch]:
        """
        Teacher-forced log-probabilities for a batch.

        :param sequences: Target sequences, each conditioned on its own context
        :param params: Graph leaves to use; constants built from the current parameters by default
        :return: Batch-major (B * T) x V log-probability node and the matching target batch
        """
        params = params or self.nodes()
        for sequence in sequences:
            self.check(sequence)
        targets = TargetBatch.from_sequences(sequences)
        batch, horizon = targets.ids.shape
        offsets = [len(sequence.context) for sequence in sequences]
        length = max(offsets) + horizon

        inputs = np.full((batch, length), self.vocab.pad, dtype=np.int64)
        for row, sequence in enumerate(sequences):
            prefix = sequence.context + (self.vocab.bos,) + sequence.tokens[:-1]
            inputs[row, :len(prefix)] = prefix

        states = ad.concat_rows(self.rollout(params, inputs))
        rows = [(offsets[b] + t) * batch + b for b in range(batch) for t in range(horizon)]
        return self.output_log_probs(params, ad.take_rows(states, rows)), targets

    def __repr__(self):
        return (f'SequenceModel(vocab_size={self.config.vocab_size}, embedding_dim={self.config.embedding_dim}, '
                f'hidden_dim={self.config.hidden_dim})')


def step_dist(model: SequenceModel, prefix: Sequence[int], context: Sequence[int] = ()) -> CategoricalDist:
    """
    p(. | prefix, context) from a fresh forward pass.

    :param model: The model
    :param prefix: Body ids generated so far
    :param context: Conditioning ids
    :return: The exact next-token distribution
    """
    return CategoricalDist.from_log_probs(model.next_log_probs(model.nodes(), prefix, context).data[0])


def step_log_prob_rows(model: SequenceModel, prefixes: Sequence[Sequence[int]]) -> np.ndarray:
    """
    Next-token log-probabilities for equal-length prefixes, one row each.
    """
    params = model.nodes()
    inputs = np.array([(model.vocab.bos,) + tuple(prefix) for prefix in prefixes], dtype=np.int64)
    hidden = model.rollout(params, inputs)[-1]
    return model.output_log_probs(params, hidden).data.copy()


def sequence_logprobs(model: SequenceModel, sequences: Sequence[TokenSequence], batch_size: int = 256) -> np.ndarray:
    """
    Exact log p(y | x) per sequence, EOS term included. Batches are taken in the given order,
    so equal inputs give bitwise equal outputs.
    """
    results = np.empty(len(sequences))
    for start in range(0, len(sequences), batch_size):
        chunk = sequences[start:start + batch_size]
        log_probs, targets = model.forward(chunk)
        picked = log_probs.data[np.arange(targets.flat_ids.size), targets.flat_ids].reshape(targets.ids.shape)
        results[start:start + len(chunk)] = (picked * targets.mask).sum(axis=1)
    return results


def sequence_logprob(model: SequenceModel, sequence: TokenSequence) -> float:
    return float(sequence_logprobs(model, [sequence])[0])


def sample_many(model: SequenceModel,
                count: int,
                max_len: int,
                rng: np.random.Generator,
                context: Sequence[int] = ()) -> List[TokenSequence]:
    """
    Ancestral sampling by inverse CDF, all sequences advanced together.

    max_len counts tokens including EOS. A sequence that reaches it without emitting EOS
    is closed with EOS and flagged truncated.
    """
    if max_len < 1:
        raise ValueError(f'max_len must be at least 1, got {max_len}')
    if count < 1:
        return []
    params = model.nodes()
    hidden = ad.constant(np.zeros((count, model.config.hidden_dim)))
    if context:
        for token in context:
            hidden = model._cell(params, np.full(count, token, dtype=np.int64), hidden)
    inputs = np.full(count, model.vocab.bos, dtype=np.int64)
    bodies: List[List[int]] = [[] for _ in range(count)]
    active = np.ones(count, dtype=bool)
    truncated = np.zeros(count, dtype=bool)

    for step in range(max_len):
        hidden = model._cell(params, inputs, hidden)
        probs = np.exp(model.output_log_probs(params, hidden).data)
        cumulative = np.cumsum(probs, axis=1)
        draws = rng.random(count)
        tokens = np.minimum((cumulative < draws[:, None] * cumulative[:, -1:]).sum(axis=1), model.vocab_size - 1)
        if step == max_len - 1:
            truncated |= active & (tokens != EOS)
            tokens = np.where(active, EOS, tokens)
        for row in np.flatnonzero(active & (tokens != EOS)):
            bodies[row].append(int(tokens[row]))
        active &= tokens != EOS
        if not active.any():
            break
        inputs = np.where(active, tokens, model.vocab.pad)

    return [TokenSequence(tuple(body) + (EOS,), context, bool(cut)) for body, cut in zip(bodies, truncated)]


def sample(model: SequenceModel, max_len: int, rng: np.random.Generator, context: Sequence[int] = ()) -> TokenSequence:
    return sample_many(model, 1, max_len, rng, context)[0]


def token_count(sequences: Sequence[TokenSequence]) -> int:
    return sum(len(sequence.tokens) for sequence in sequences)


def perplexity(model: SequenceModel, dataset: Sequence[TokenSequence]) -> float:
    """
    exp of the mean per-token NLL over the dataset, EOS included and padding excluded.
    """
    if not dataset:
        raise ValueError('Perplexity needs a nonempty dataset')
    return float(np.exp(-sequence_logprobs(model, dataset).sum() / token_count(dataset)))
