"""Deterministic, labeled random streams.

Every source of randomness in the package (weight init, dropout, data
shuffling, phantom geometry, mask selection) draws from an RngStream
identified by a (seed, label) pair. The label is hashed with SHA-256 so the
mapping is stable across processes and platforms, unlike Python's builtin
hash(). Child streams derive new labels, so e.g. per-item or per-step
streams never depend on how much the parent has already drawn.
"""
from __future__ import annotations

import hashlib

import numpy as np


def _label_digest(label: str) -> int:
    return int.from_bytes(hashlib.sha256(label.encode("utf-8")).digest()[:16], "little")


class RngStream:
    """A named PCG64 stream; identical (seed, label) gives identical draws."""

    def __init__(self, seed: int, label: str = "root"):
        if seed < 0:
            raise ValueError(f"seed must be non-negative, got {seed}")
        self.seed = int(seed)
        self.label = label
        ss = np.random.SeedSequence([self.seed, _label_digest(label)])
        self._gen = np.random.Generator(np.random.PCG64(ss))

    def child(self, label: str) -> "RngStream":
        """Derive an independent stream; does not consume draws from self."""
        return RngStream(self.seed, f"{self.label}/{label}")

    def normal(self, size, scale: float = 1.0) -> np.ndarray:
        return self._gen.normal(0.0, scale, size=size)

    def uniform(self, size=None, low: float = 0.0, high: float = 1.0):
        return self._gen.uniform(low, high, size=size)

    def integers(self, low: int, high: int, size=None):
        return self._gen.integers(low, high, size=size)

    def permutation(self, n: int) -> np.ndarray:
        return self._gen.permutation(n)

    def choice(self, pool, size: int, replace: bool = False) -> np.ndarray:
        return self._gen.choice(pool, size=size, replace=replace)

    def __repr__(self) -> str:
        return f"RngStream(seed={self.seed}, label={self.label!r})"
