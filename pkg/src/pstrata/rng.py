"""Deterministic random streams.

Every stream is a Philox (counter-based) generator keyed by a master seed
and a path of integers, e.g. ``stream(seed, replicate, BOOTSTRAP, k)``.
Streams never depend on how work is split across threads or processes.
"""
from __future__ import annotations

import numpy as np

# second path element separating the kinds of draws made for one replicate
DATA = 0
BOOTSTRAP = 1


def _split(seed):
    if isinstance(seed, tuple):
        return int(seed[0]), tuple(int(k) for k in seed[1:])
    return int(seed), ()


def stream(seed, *key) -> np.random.Generator:
    """Generator for master ``seed`` (an int or ``(int, *prefix)``) and sub-path ``key``."""
    entropy, prefix = _split(seed)
    ss = np.random.SeedSequence(entropy=entropy, spawn_key=prefix + tuple(int(k) for k in key))
    return np.random.Generator(np.random.Philox(ss))


def child(seed, *key) -> tuple:
    """Seed tuple naming a sub-stream, to be passed on to :func:`stream`."""
    entropy, prefix = _split(seed)
    return (entropy, *prefix, *(int(k) for k in key))
