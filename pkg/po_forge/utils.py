"""Utilities
===============

"""
import os
from typing import Optional

import numpy as np

__all__ = (
    'get_class_bases', 'rng_stream', 'resolve_seed', 'empirical_quantile',
    'SEED_ENV')

SEED_ENV = 'PO_FORGE_SEED'
"""Environment variable used as the seed when none is configured.
"""


def get_class_bases(cls):
    """Gets all the base-classes of the class.

    :param cls:
    :return:
    """
    for base in cls.__bases__:
        if base.__name__ == 'object':
            break
        for cbase in get_class_bases(base):
            yield cbase
        yield base


def rng_stream(seed: int, *keys: int) -> np.random.Generator:
    """Returns an independent random generator keyed by ``(seed, *keys)``.

    Streams with different keys never share state, so tasks seeded this way
    can run in any order or thread and produce identical results.
    """
    return np.random.default_rng([int(seed)] + [int(k) for k in keys])


def resolve_seed(seed: Optional[int], default: int = 0) -> int:
    """Returns ``seed`` if given, otherwise the value of :data:`SEED_ENV`,
    otherwise ``default``.
    """
    if seed is not None:
        return int(seed)
    value = os.environ.get(SEED_ENV, '').strip()
    if value:
        return int(value)
    return default


def empirical_quantile(values, level: float) -> float:
    """Linear-interpolation (type 7) empirical quantile.
    """
    return float(np.quantile(np.asarray(values, dtype=float), level))
