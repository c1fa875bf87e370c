"""Counter-based, splittable random streams.

Every random quantity in the package comes from a Philox generator keyed by
``(seed, label, block)``.  Draw ``i`` of a stream always lives in block
``i // BLOCK_SIZE`` so the values never depend on how blocks are scheduled,
and evaluating the same stream at different arguments reuses the same draws
(common random numbers).
"""
from __future__ import annotations

import hashlib
from typing import Callable

import numpy as np

BLOCK_SIZE = 1 << 16


def stream_key(seed: int, label: str, block: int) -> np.ndarray:
    """128-bit Philox key derived from ``(seed, label, block)``."""
    digest = hashlib.blake2b(
        f"{int(seed)}|{label}|{int(block)}".encode(), digest_size=16
    ).digest()
    return np.frombuffer(digest, dtype="<u8").copy()


def generator(seed: int, label: str, block: int = 0) -> np.random.Generator:
    return np.random.Generator(np.random.Philox(key=stream_key(seed, label, block)))


def block_sizes(n: int, block_size: int = BLOCK_SIZE) -> list[int]:
    if n < 1:
        raise ValueError(f"need at least one draw, got n={n}")
    full, rest = divmod(n, block_size)
    return [block_size] * full + ([rest] if rest else [])


def blocked_draws(
    n: int,
    seed: int,
    label: str,
    sampler: Callable[[int, np.random.Generator], np.ndarray],
    block_size: int = BLOCK_SIZE,
) -> np.ndarray:
    """Concatenate ``sampler(size, gen)`` over independent keyed blocks.

    The result for the first ``k`` draws does not depend on ``n``.
    """
    parts = [
        sampler(size, generator(seed, label, b))
        for b, size in enumerate(block_sizes(n, block_size))
    ]
    return np.concatenate(parts, axis=0)


def standard_normal(n: int, dim: int, seed: int, label: str) -> np.ndarray:
    return blocked_draws(n, seed, label, lambda k, g: g.standard_normal((k, dim)))


def uniform(n: int, dim: int, seed: int, label: str) -> np.ndarray:
    return blocked_draws(n, seed, label, lambda k, g: g.random((k, dim)))
