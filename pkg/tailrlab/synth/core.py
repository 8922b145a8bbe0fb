from pathlib import Path
from typing import List, Sequence

from tailrlab.model.core import SequenceModel, TokenSequence
from tailrlab.serialization import PathLike, write_atomic

DATASET_FORMAT_VERSION = 1


class VocabularyMismatchError(ValueError):
    """
    Error raised when two models that must share a vocabulary do not.
    """

    def __init__(self, left_size: int, right_size: int, left_name: str = 'learner', right_name: str = 'oracle'):
        self.left_size = left_size
        self.right_size = right_size
        self.left_name = left_name
        self.right_name = right_name

    def __str__(self):
        return (f'The {self.left_name} has a vocabulary of {self.left_size} tokens but the '
                f'{self.right_name} has {self.right_size}.')


def ensure_same_vocab(model: SequenceModel, oracle: SequenceModel, model_name: str = 'learner'):
    if model.vocab_size != oracle.vocab_size:
        raise VocabularyMismatchError(model.vocab_size, oracle.vocab_size, model_name, 'oracle')


def write_dataset(path: PathLike, sequences: Sequence[TokenSequence]) -> Path:
    """
    One sequence per line as space separated ids, terminal EOS included.
    """
    text = ''.join(' '.join(str(token) for token in sequence.tokens) + '\n' for sequence in sequences)
    return write_atomic(path, text)


def read_dataset(path: PathLike) -> List[TokenSequence]:
    with open(path, encoding='utf-8') as file:
        return [TokenSequence([int(token) for token in line.split()]) for line in file if line.strip()]


def bodies(sequences: Sequence[TokenSequence]) -> List[List[int]]:
    """
    Token bodies with EOS stripped, the corpus form the metrics work on.
    """
    return [list(sequence.body) for sequence in sequences]
