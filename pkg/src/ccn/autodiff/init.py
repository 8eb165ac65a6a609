"""Seeded parameter initialisers.

Every parameter draws from its own stream keyed by (seed, crc32(name)), so a
parameter shared by two model variants starts from the same values in both.
"""

import zlib
from typing import Tuple

import numpy as np


def param_rng(seed: int, name: str) -> np.random.Generator:
    return np.random.default_rng([int(seed), zlib.crc32(name.encode("utf-8"))])


def uniform_init(seed: int, name: str, shape: Tuple[int, ...], limit: float) -> np.ndarray:
    return param_rng(seed, name).uniform(-limit, limit, size=shape)


def xavier_init(seed: int, name: str, shape: Tuple[int, int]) -> np.ndarray:
    """Glorot uniform for a (fan_in, fan_out) weight matrix."""
    fan_in, fan_out = shape
    limit = np.sqrt(6.0 / (fan_in + fan_out))
    return uniform_init(seed, name, shape, limit)


def zeros_init(shape: Tuple[int, ...]) -> np.ndarray:
    return np.zeros(shape, dtype=np.float64)
