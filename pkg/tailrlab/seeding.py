"""
Counter-based seed splitting. Every stochastic stage draws from a generator derived from the
run seed and a fixed key path, so stages never share a stream and reruns are identical.
"""
from typing import Union

import numpy as np

Key = Union[int, str]

# Stable integer codes for the named streams.
STREAMS = {
    'oracle': 1,
    'train': 2,
    'dev': 3,
    'test': 4,
    'learner': 5,
    'samples': 6,
    'perturb': 7,
    'exacc': 8,
    'verify': 9,
    'selfbleu': 10,
    'bootstrap': 11,
    'reference': 12,
    'batches': 13,
}


def _code(key: Key) -> int:
    if isinstance(key, str):
        try:
            return STREAMS[key]
        except KeyError:
            raise ValueError(f'Unknown seed stream {key!r}; expected one of {sorted(STREAMS)}')
    if key < 0:
        raise ValueError(f'Seed keys must be non-negative, got {key}')
    return int(key)


def seed_sequence(seed: int, *keys: Key) -> np.random.SeedSequence:
    return np.random.SeedSequence(entropy=int(seed), spawn_key=tuple(_code(key) for key in keys))


def substream(seed: int, *keys: Key) -> np.random.Generator:
    """
    :param seed: The run seed
    :param keys: Stream names or item counters identifying the consumer
    :return: A generator independent of every other key path
    """
    return np.random.Generator(np.random.PCG64(seed_sequence(seed, *keys)))


def subseed(seed: int, *keys: Key) -> int:
    """
    A 32 bit integer seed for the given key path, recorded in manifests.
    """
    return int(seed_sequence(seed, *keys).generate_state(1)[0])
