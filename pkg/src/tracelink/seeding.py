"""Deterministic seed derivation.

A single master seed fans out into independent per-stage generators.  Each
stage (and, where needed, each epoch/window inside a stage) hashes its label
path together with the master seed, so changing iteration order in one stage
can never perturb the random stream of another.
"""
from __future__ import annotations

import hashlib

import numpy as np


def derive_seed(master: int, *labels: object) -> int:
    """Hash (master, labels...) into a 64-bit seed."""
    text = ":".join([str(master), *(str(part) for part in labels)])
    digest = hashlib.sha256(text.encode("utf-8")).digest()
    return int.from_bytes(digest[:8], "little")


def derive_rng(master: int, *labels: object) -> np.random.Generator:
    """Generator seeded from the label path; independent per distinct path."""
    return np.random.default_rng(derive_seed(master, *labels))
