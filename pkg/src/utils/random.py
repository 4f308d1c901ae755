"""
Platform-stable seeded randomness.

Splits and cohort labelling must produce identical partitions on every
platform and NumPy release, so they avoid `Generator.permutation` (whose
stream is not covered by NumPy's compatibility policy) and shuffle with
the raw 64-bit output of the PCG64 bit generator instead:

    raw = PCG64(seed).random_raw(n - 1)
    for i = n-1 .. 1:  j = raw[n-1-i] % (i + 1);  swap(a[i], a[j])
"""
import hashlib
from typing import List, Sequence, TypeVar

import numpy as np

T = TypeVar("T")


def derive_seed(seed: int, key: str) -> int:
    """
    Derive a per-item seed from a run seed and an item key.

    SHA-256 of ``"{seed}:{key}"``, first 8 bytes read little-endian.
    Independent of thread count and processing order.
    """
    digest = hashlib.sha256(f"{seed}:{key}".encode("utf-8")).digest()
    return int.from_bytes(digest[:8], "little")


def seeded_permutation(n: int, seed: int) -> np.ndarray:
    """Return a permutation of ``range(n)`` (Fisher-Yates over raw PCG64 output)."""
    order = np.arange(n, dtype=np.int64)
    if n < 2:
        return order
    raw = np.random.PCG64(seed).random_raw(n - 1)
    for step, i in enumerate(range(n - 1, 0, -1)):
        j = int(raw[step] % np.uint64(i + 1))
        order[i], order[j] = order[j], order[i]
    return order


def seeded_shuffle(items: Sequence[T], seed: int) -> List[T]:
    """Shuffle a sequence with :func:`seeded_permutation`."""
    return [items[i] for i in seeded_permutation(len(items), seed)]
