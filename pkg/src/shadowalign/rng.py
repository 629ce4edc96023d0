"""Deterministic randomness built on counter-based generators.

All stochastic behaviour in the package flows through named streams so that a
run can be replayed bit-exactly. Two primitives are used:

* ``Philox4x64-10`` (numpy's ``np.random.Philox`` bit generator), keyed
  directly by a 64-bit seed. A given seed always yields the same stream, on
  any platform, independent of how many values other streams have consumed.
* ``splitmix64`` for deriving child seeds from a master seed and an integer
  tag. The algorithm is the SplitMix64 finaliser of Steele et al., the same
  mixer used by ``java.util.SplittableRandom``.

Frozen test vectors for both live in ``tests/test_prng_vectors.py``.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

MASK64 = (1 << 64) - 1

# Stream tags used when deriving per-purpose seeds from a master seed.
TAG_WEIGHT_INIT = 0x5749  # 'WI'
TAG_BATCH_ORDER = 0x424F  # 'BO'
TAG_DROPOUT = 0x4453  # 'DS'
TAG_SPLITS = 0x5350  # 'SP'
TAG_METRICS = 0x4D45  # 'ME'
TAG_META_CLASSIFIER = 0x4D43  # 'MC'
TAG_DATA = 0x4441  # 'DA'


def splitmix64(x: int) -> int:
    """One SplitMix64 step: advance by the golden-gamma and finalise."""
    x = (x + 0x9E3779B97F4A7C15) & MASK64
    z = x
    z = ((z ^ (z >> 30)) * 0xBF58476D1CE4E5B9) & MASK64
    z = ((z ^ (z >> 27)) * 0x94D049BB133111EB) & MASK64
    return (z ^ (z >> 31)) & MASK64


def derive_seed(master: int, *tags: int) -> int:
    """Derive a child seed from a master seed and a sequence of integer tags.

    The master is avalanched before tags are mixed in, so related masters
    cannot collide with related tags."""
    s = splitmix64(master & MASK64)
    for t in tags:
        s = splitmix64(s ^ splitmix64(t & MASK64))
    return s


def stream(seed: int) -> np.random.Generator:
    """Open the Philox stream keyed by ``seed``."""
    return np.random.Generator(np.random.Philox(key=seed & MASK64))


@dataclass(frozen=True)
class SeedBundle:
    """Three independent seeds, one per training randomness factor.

    Each seed keys its own Philox stream; the streams never cross-consume, so
    e.g. changing the batch-order seed cannot perturb the weight draws.
    """

    weight_init: int
    batch_order: int
    dropout: int

    @classmethod
    def from_master(cls, master: int) -> "SeedBundle":
        return cls(
            weight_init=derive_seed(master, TAG_WEIGHT_INIT),
            batch_order=derive_seed(master, TAG_BATCH_ORDER),
            dropout=derive_seed(master, TAG_DROPOUT),
        )

    def weight_init_stream(self) -> np.random.Generator:
        return stream(self.weight_init)

    def batch_order_stream(self) -> np.random.Generator:
        return stream(self.batch_order)

    def dropout_stream(self) -> np.random.Generator:
        return stream(self.dropout)

    def as_dict(self) -> dict:
        return {
            "weight_init": self.weight_init,
            "batch_order": self.batch_order,
            "dropout": self.dropout,
        }
