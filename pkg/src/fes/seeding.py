"""Deterministic seed derivation.

All stochastic operations in the toolkit accept one integer seed. Internal
consumers (per-fluctuator generators, chain-noise realizations, Monte-Carlo
sweeps) derive independent sub-streams from that master seed by hashing it
together with a sequence of string/int labels. Same seed + same labels gives
the same stream; different labels give statistically independent streams.
"""

from __future__ import annotations

import hashlib

import numpy as np

__all__ = ["derive_seed_sequence", "derive_rng", "derive_subseed"]


def derive_seed_sequence(master_seed: int, *labels) -> np.random.SeedSequence:
    """Hash a master seed with a label path into a SeedSequence."""
    h = hashlib.sha256()
    h.update(str(int(master_seed)).encode("ascii"))
    for label in labels:
        h.update(b"/")
        h.update(str(label).encode("utf-8"))
    entropy = int.from_bytes(h.digest()[:16], "little")
    return np.random.SeedSequence(entropy)


def derive_rng(master_seed: int, *labels) -> np.random.Generator:
    """Dedicated generator for one labeled sub-stream of a master seed."""
    return np.random.default_rng(derive_seed_sequence(master_seed, *labels))


def derive_subseed(master_seed: int, *labels) -> int:
    """Labeled integer sub-seed, for APIs that take a seed rather than a rng."""
    h = hashlib.sha256()
    h.update(str(int(master_seed)).encode("ascii"))
    for label in labels:
        h.update(b"/")
        h.update(str(label).encode("utf-8"))
    return int.from_bytes(h.digest()[16:24], "little") >> 1
