"""
Oracle construction and synthetic data generation.
"""
import logging
import os
from collections import Counter
from pathlib import Path
from typing import Dict, List, Literal, Optional, Sequence, Tuple

import numpy as np
from pydantic import BaseModel, confloat, conint, validator
from scipy.special import logit

from tailrlab.model.core import EOS, ModelConfig, SequenceModel, TokenSequence, Vocab, perplexity, sample_many
from tailrlab.model.checkpoint import model_hash
from tailrlab.model.train import TrainRun, train
from tailrlab.serialization import PathLike, to_json, write_atomic
from tailrlab.seeding import subseed, substream
from tailrlab.synth.core import DATASET_FORMAT_VERSION, write_dataset

logger = logging.getLogger(__name__)

CALIBRATION_SEQUENCES = 256
UNK = '<unk>'


class MissingCorpusError(FileNotFoundError):
    """
    Error raised when a corpus-trained oracle is requested without a readable corpus file.
    """

    def __init__(self, corpus_path: Optional[str]):
        self.corpus_path = corpus_path

    def __str__(self):
        if not self.corpus_path:
            return 'Oracle mode trained-on-corpus needs a corpus_path.'
        return f'Corpus file {self.corpus_path} does not exist.'


class OracleSpec(BaseModel):
    """
    How the oracle is obtained. fixed-seeded-random draws parameters from the seed and
    calibrates the EOS bias to the expected length; trained-on-corpus fits an MLE model to a
    whitespace tokenized text file.
    """
    mode: Literal['fixed-seeded-random', 'trained-on-corpus'] = 'fixed-seeded-random'
    corpus_path: Optional[str] = None
    model: ModelConfig = ModelConfig(output_gain=6.0)
    seed: conint(ge=0) = 7
    expected_length: confloat(gt=1.0) = 10.0
    max_len: conint(ge=1) = 20
    dev_fraction: confloat(gt=0.0, lt=1.0) = 0.1
    training: TrainRun = TrainRun(epochs=5)

    @validator('corpus_path', always=True)
    def corpus_required(cls, value, values):
        if values.get('mode') == 'trained-on-corpus' and not value:
            raise ValueError('corpus_path is required when mode is trained-on-corpus')
        return value

    class Config:
        extra = 'forbid'


class SyntheticData:
    """
    Train, dev and test splits sampled from an oracle, with what is needed to reproduce them.
    """

    def __init__(self, train: List[TokenSequence], dev: List[TokenSequence], test: List[TokenSequence],
                 oracle_hash: str, seeds: Dict[str, int], max_len: int, resampled: Dict[str, int]):
        self.train = train
        self.dev = dev
        self.test = test
        self.oracle_hash = oracle_hash
        self.seeds = seeds
        self.max_len = max_len
        self.resampled = resampled

    @property
    def splits(self) -> Dict[str, List[TokenSequence]]:
        return {'train': self.train, 'dev': self.dev, 'test': self.test}

    def manifest(self) -> Dict:
        return {
            'formatVersion': DATASET_FORMAT_VERSION,
            'oracleHash': self.oracle_hash,
            'maxLen': self.max_len,
            'seeds': self.seeds,
            'counts': {name: len(split) for name, split in self.splits.items()},
            'resampled': self.resampled,
        }

    def __repr__(self):
        return f'SyntheticData(train={len(self.train)}, dev={len(self.dev)}, test={len(self.test)})'


def calibrate_eos(model: SequenceModel, expected_length: float, rng: np.random.Generator, max_len: int) -> float:
    """
    Shifts the EOS output bias so that at states reached by random body prefixes the mean
    EOS log-odds equals logit(1 / expected_length).

    :return: The applied shift
    """
    lengths = rng.integers(1, max_len + 1, size=CALIBRATION_SEQUENCES)
    random_prefixes = [TokenSequence.from_body(rng.integers(1, model.vocab_size, size=length - 1))
                       for length in lengths]
    log_probs, targets = model.forward(random_prefixes)
    eos = log_probs.data[:, EOS]
    log_odds = eos - np.log(-np.expm1(eos))
    shift = float(logit(1.0 / expected_length) - np.average(log_odds, weights=targets.flat_mask))
    model.parameters['b_out'][EOS] += shift
    return shift


def read_corpus(path: PathLike) -> List[List[str]]:
    with open(path, encoding='utf-8') as file:
        return [line.split() for line in file if line.strip()]


def build_vocab(lines: Sequence[Sequence[str]], size: int) -> Vocab:
    """
    EOS, the size - 2 most frequent words (ties broken alphabetically) and UNK.
    """
    counts = Counter(word for line in lines for word in line)
    frequent = sorted(counts.items(), key=lambda item: (-item[1], item[0]))[:size - 2]
    words = ['</s>'] + [word for word, _ in frequent]
    words += [f'<pad{i}>' for i in range(size - 1 - len(words))]
    return Vocab(size, words + [UNK])


def encode(lines: Sequence[Sequence[str]], vocab: Vocab, max_len: int) -> List[TokenSequence]:
    index = {word: i for i, word in enumerate(vocab.words)}
    unk = vocab.size - 1
    return [TokenSequence.from_body([index.get(word, unk) for word in line[:max_len - 1]]) for line in lines]


def _trained_oracle(spec: OracleSpec) -> SequenceModel:
    if not spec.corpus_path or not os.path.isfile(spec.corpus_path):
        raise MissingCorpusError(spec.corpus_path)
    lines = read_corpus(spec.corpus_path)
    vocab = build_vocab(lines, spec.model.vocab_size)
    sequences = encode(lines, vocab, spec.max_len)
    order = substream(spec.seed, 'oracle').permutation(len(sequences))
    cut = max(1, int(round(len(sequences) * spec.dev_fraction)))
    dev = [sequences[i] for i in order[:cut]]
    train_split = [sequences[i] for i in order[cut:]] or dev

    initial = SequenceModel.initialize(spec.model, substream(spec.seed, 'oracle', 1), vocab)
    run = spec.training.copy(update={'seed': spec.seed})
    oracle, log = train(initial, train_split, run, dev)
    logger.info('Oracle trained on %d sequences from %s for %d epochs: dev perplexity %.3f',
                len(train_split), spec.corpus_path, len(log), perplexity(oracle, dev))
    return oracle


def build_oracle(spec: OracleSpec) -> SequenceModel:
    """
    Builds the oracle described by spec. The result is deterministic in the spec.

    :param spec: Oracle specification
    :return: The oracle model, never trained further
    """
    if spec.mode == 'trained-on-corpus':
        return _trained_oracle(spec)
    oracle = SequenceModel.initialize(spec.model, substream(spec.seed, 'oracle'))
    shift = calibrate_eos(oracle, spec.expected_length, substream(spec.seed, 'oracle', 1), spec.max_len)
    logger.info('Fixed random oracle (seed %d): EOS bias shifted by %.4f', spec.seed, shift)
    return oracle


def sample_terminated(model: SequenceModel, count: int, max_len: int, rng: np.random.Generator,
                      max_rounds: int = 1000) -> Tuple[List[TokenSequence], int]:
    """
    Samples count sequences that end in EOS within max_len, replacing truncated draws.

    :return: The sequences and the number of resampled draws
    """
    accepted: List[TokenSequence] = []
    resampled = 0
    for _ in range(max_rounds):
        needed = count - len(accepted)
        if needed <= 0:
            break
        draws = sample_many(model, needed, max_len, rng)
        accepted.extend(draw for draw in draws if not draw.truncated)
        resampled += sum(draw.truncated for draw in draws)
    if len(accepted) < count:
        raise RuntimeError(f'Only {len(accepted)} of {count} samples ended within {max_len} tokens')
    return accepted, resampled


def synthesize(oracle: SequenceModel, n_train: int, n_dev: int, n_test: int, max_len: int, seed: int) -> SyntheticData:
    """
    Draws i.i.d. samples for the three splits, each from its own substream.
    """
    for name, size in (('n_train', n_train), ('n_dev', n_dev), ('n_test', n_test)):
        if size < 1:
            raise ValueError(f'{name} must be at least 1, got {size}')
    splits, seeds, resampled = {}, {}, {}
    for name, size in (('train', n_train), ('dev', n_dev), ('test', n_test)):
        seeds[name] = subseed(seed, name)
        splits[name], resampled[name] = sample_terminated(oracle, size, max_len, substream(seed, name))
        level = logging.WARNING if resampled[name] > size else logging.INFO
        logger.log(level, 'Sampled %d %s sequences (%d truncated draws resampled)', size, name, resampled[name])
    return SyntheticData(splits['train'], splits['dev'], splits['test'], model_hash(oracle), seeds, max_len, resampled)


def reference_mean_length(oracle: SequenceModel, max_len: int, draws: int, seed: int) -> Tuple[float, float]:
    """
    Mean and standard deviation of token counts (EOS included) over reference draws that
    obey the same max_len rule as synthesize.
    """
    sequences, _ = sample_terminated(oracle, draws, max_len, substream(seed, 'reference'))
    lengths = np.array([len(sequence) for sequence in sequences], dtype=np.float64)
    return float(lengths.mean()), float(lengths.std())


def persist(data: SyntheticData, directory: PathLike) -> List[Path]:
    """
    Writes train.txt, dev.txt, test.txt and datasets.json.
    """
    directory = Path(directory)
    written = [write_dataset(directory / f'{name}.txt', split) for name, split in data.splits.items()]
    written.append(write_atomic(directory / 'datasets.json', to_json(data.manifest())))
    return written
