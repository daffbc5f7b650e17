"""Deterministic RNG substreams derived from one master seed.

Every source of randomness in the package (data generation, minibatch
sampling, DP noise, parameter init, simulation) pulls from a named
substream so that components are independently reproducible and two runs
can share one stream (e.g. the DP noise) while differing elsewhere.
"""

from __future__ import annotations

import hashlib

import numpy as np

# Canonical stream names used across the package.
DATA = "data"
SAMPLING = "sampling"
DP_NOISE = "dp-noise"
INIT = "init"
SYSTEM = "system"


def _label_key(label: str | int) -> int:
    # Stable across processes (unlike hash()); 8 bytes is plenty of entropy.
    digest = hashlib.blake2s(str(label).encode(), digest_size=8).digest()
    return int.from_bytes(digest, "big")


def substream(master_seed: int, *labels: str | int) -> np.random.Generator:
    """Return a Generator for the substream named by ``labels``.

    Same (master_seed, labels) always yields a bit-identical stream.
    """
    entropy = [int(master_seed)] + [_label_key(lab) for lab in labels]
    return np.random.default_rng(np.random.SeedSequence(entropy))
