"""Child-seed derivation so every stage and job is reproducible on its own."""
from __future__ import annotations

import hashlib

import numpy as np


def derive_seed(master: int, *parts: object) -> int:
    """Stable 63-bit seed from a master seed and any labels (stage, learner, fold...)."""
    text = ":".join([str(int(master))] + [str(p) for p in parts])
    digest = hashlib.sha256(text.encode("utf-8")).digest()
    return int.from_bytes(digest[:8], "little") & ((1 << 63) - 1)


def rng_for(master: int, *parts: object) -> np.random.Generator:
    return np.random.default_rng(derive_seed(master, *parts))
