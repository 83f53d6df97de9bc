"""Deterministic random streams.

Every source of randomness in the package flows through an RngStream so a
single root seed reproduces a whole experiment.  The underlying generator is
numpy's PCG64, whose output stream is fixed for a given seed across platforms.
Named child streams are derived by hashing (seed, name), so the order in which
components consume randomness never perturbs one another.
"""

from __future__ import annotations

import hashlib

import numpy as np


def _derive_seed(seed: int, name: str) -> int:
    digest = hashlib.sha256(f"{seed}/{name}".encode("utf-8")).digest()
    return int.from_bytes(digest[:8], "little")


class RngStream:
    """A named, seeded wrapper around numpy's PCG64 generator."""

    algorithm = "pcg64"

    def __init__(self, seed: int, name: str = "root"):
        self.seed = int(seed)
        self.name = name
        self.gen = np.random.Generator(np.random.PCG64(self.seed))

    def child(self, name: str) -> "RngStream":
        """Derive an independent stream keyed by ``name``."""
        return RngStream(_derive_seed(self.seed, name), name=name)

    # Thin pass-throughs, so callers never touch .gen's unseeded cousins.
    def uniform(self, low=0.0, high=1.0, size=None):
        return self.gen.uniform(low, high, size)

    def normal(self, loc=0.0, scale=1.0, size=None):
        return self.gen.normal(loc, scale, size)

    def integers(self, low, high=None, size=None):
        return self.gen.integers(low, high, size)

    def choice(self, a, size=None, replace=True):
        return self.gen.choice(a, size=size, replace=replace)

    def permutation(self, x):
        return self.gen.permutation(x)

    def state(self) -> dict:
        """JSON-serializable snapshot of the generator position."""
        return self.gen.bit_generator.state

    def set_state(self, state: dict) -> None:
        self.gen.bit_generator.state = state

    def __repr__(self):
        return f"RngStream(seed={self.seed}, name={self.name!r}, algorithm={self.algorithm})"
