from hashlib import sha256
from random import SystemRandom

import numpy as np
from numpy import random
from pandas import DataFrame
from pandas.util import hash_pandas_object


def checksum(df: DataFrame) -> str:
    """
    Calculate SHA256 checksum of a DataFrame and return the first 8 characters.
    Two completely identical DataFrames will always return the exact same value,
    whereas two similar, but not completely identical DataFrames will return
    entirely different values.

    Parameters
    ----------
    df : DataFrame
        Any valid DataFrame, such as a per-round metric table.

    Returns
    -------
    str
        The first 8 characters of the SHA256 checksum of the input DataFrame.
    """
    return sha256(bytearray(hash_pandas_object(df).values)).hexdigest()[0:8]


def gen_rng(seed: int = None, *keys: int) -> random.Generator:
    """
    Create a seeded numpy default_rng() object. Additional integer `keys` are mixed into
    the seed so that independent, reproducible streams can be derived for e.g. each
    (round, client) pair without sharing state.

    Parameters
    ----------
    seed : int
        A non-negative integer used to seed the random number generator. A seed is randomly
        generated using gen_seed() if one is not provided.
    keys : int
        Optional non-negative integers identifying the derived stream.

    Returns
    -------
    numpy.random.Generator
    """
    if seed is None:
        seed = gen_seed()
    _validate_seed(seed, *keys)
    if keys:
        return random.default_rng([seed, *keys])
    return random.default_rng(seed=seed)


def derive_seed(seed: int, *keys: int) -> int:
    """
    Derive a single integer seed from a base seed and a sequence of integer keys.

    Parameters
    ----------
    seed : int
        Base seed.
    keys : int
        Integers identifying the derived stream, e.g. round and client id.

    Returns
    -------
    int
        A 32-bit integer seed.
    """
    _validate_seed(seed, *keys)
    return int(np.random.SeedSequence([seed, *keys]).generate_state(1)[0])


def gen_seed() -> int:
    """
    Generate a 16-digit random integer to seed random number generators.

    Returns
    -------
    int
        A 16 digit random integer.
    """

    return int(SystemRandom().random() * (10**16))


def _validate_seed(*values: int) -> bool:
    for value in values:
        if isinstance(value, bool) or int(value) != value or value < 0:
            raise ValueError(f"Seeds and stream keys must be non-negative integers, got {value}.")
    return True


def _validate_vector(vector: np.ndarray, length: int, name: str = "vector") -> np.ndarray:
    vector = np.asarray(vector, dtype=float)
    if vector.ndim != 1 or vector.shape[0] != length:
        raise ValueError(
            f"Dimension mismatch: {name} has shape {vector.shape}, expected ({length},)."
        )
    return vector


def _validate_finite(values: np.ndarray, message: str) -> bool:
    if not np.all(np.isfinite(values)):
        raise ValueError(message)
    return True
