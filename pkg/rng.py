# rng.py
"""Deterministic random streams for Monte Carlo ensembles and scans.

Every atom owns one `numpy.random.Generator`, derived from
(seed, atom_index) through a `SeedSequence` spawn key, so an atom's
trajectory never depends on which worker ran it or in which order.
"""

from __future__ import annotations

import hashlib
from typing import Union

import numpy as np

Part = Union[str, int, float]


def derive_seed(master_seed: int, *parts: Part) -> int:
    """
    Stable 64-bit seed for a sub-task, e.g. derive_seed(seed, "echo", 6, 3).

    Uses BLAKE2b over the textual parts, so it is identical across
    processes and Python versions (unlike hash()).
    """
    h = hashlib.blake2b(digest_size=8)
    h.update(repr(int(master_seed)).encode())
    for part in parts:
        h.update(b"\x1f")
        h.update(repr(part).encode())
    return int.from_bytes(h.digest(), "big")


def atom_stream(seed: int, atom_index: int) -> np.random.Generator:
    """Independent generator for atom `atom_index` of the ensemble seeded by `seed`."""
    ss = np.random.SeedSequence(entropy=int(seed), spawn_key=(int(atom_index),))
    return np.random.Generator(np.random.PCG64(ss))
