"""Shared helpers for building random test fixtures."""

from __future__ import annotations

import numpy as np

from evmem.events import EventStream


def random_stream(
    rng: np.random.Generator,
    width: int | None = None,
    height: int | None = None,
    n: int | None = None,
    max_t: int = 1_000_000,
) -> EventStream:
    width = int(rng.integers(1, 64)) if width is None else width
    height = int(rng.integers(1, 64)) if height is None else height
    n = int(rng.integers(0, 200)) if n is None else n
    t = np.sort(rng.integers(0, max_t, size=n).astype(np.uint64))
    x = rng.integers(0, width, size=n)
    y = rng.integers(0, height, size=n)
    pol = rng.choice([-1, 1], size=n)
    return EventStream(width, height, t, x, y, pol)
