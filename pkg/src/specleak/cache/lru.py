"""Concrete set-associative LRU simulation.

:class:`LRUCache` is the readable reference model.  :func:`lru_batch` runs
many traces at once and is the hot loop of the residency check; it comes from
the compiled ``_lru`` extension when available and from the pure-Python
:func:`_lru_batch_py` otherwise.  Setting ``SPECLEAK_PURE=1`` forces the
fallback.
"""
from __future__ import annotations

import os
from dataclasses import dataclass
from typing import Iterable, Sequence

import numpy as np

from .config import CacheConfig


class LRUCache:
    """Set-associative LRU; each set is a list of block ids, most recent first."""

    def __init__(self, config: CacheConfig):
        self.config = config
        self.sets: list[list[int]] = [[] for _ in range(config.sets)]
        self.hits = 0
        self.misses = 0

    def access_block(self, block: int) -> tuple[bool, int | None]:
        """Touch ``block``; returns (hit, evicted block or None)."""
        lines = self.sets[block & (self.config.sets - 1)]
        if block in lines:
            lines.remove(block)
            lines.insert(0, block)
            self.hits += 1
            return True, None
        lines.insert(0, block)
        self.misses += 1
        if len(lines) > self.config.ways:
            return False, lines.pop()
        return False, None

    def access(self, addr: int) -> tuple[bool, int | None]:
        return self.access_block(addr >> self.config.B)

    def contains_block(self, block: int) -> bool:
        return block in self.sets[block & (self.config.sets - 1)]

    def contains(self, addr: int) -> bool:
        return self.contains_block(addr >> self.config.B)

    def contents(self) -> dict[int, tuple[int, ...]]:
        return {i: tuple(s) for i, s in enumerate(self.sets) if s}


@dataclass
class SimulationResult:
    contents: dict[int, tuple[int, ...]]
    resident: list[bool]
    hits: int
    misses: int


def concrete_lru_simulate(addresses: Iterable[int | tuple[int, str]], config: CacheConfig) -> SimulationResult:
    """Exact LRU over concrete byte addresses (optionally ``(addr, kind)`` pairs).

    ``resident[k]`` tells whether the block touched by the k-th access is
    still cached at the end.
    """
    cache = LRUCache(config)
    blocks = []
    for a in addresses:
        addr = a[0] if isinstance(a, tuple) else a
        b = addr >> config.B
        blocks.append(b)
        cache.access_block(b)
    return SimulationResult(cache.contents(), [cache.contains_block(b) for b in blocks],
                            cache.hits, cache.misses)


def _lru_batch_py(blocks: np.ndarray, active: np.ndarray, nsets: int, ways: int,
                  probe: np.ndarray) -> np.ndarray:
    """Per row: replay the active columns into an empty cache, then test each probe block.

    ``probe`` entries < 0 are ignored (result 0).
    """
    rows, n = blocks.shape
    out = np.zeros(probe.shape, dtype=np.uint8)
    mask = nsets - 1
    for r in range(rows):
        sets: dict[int, list[int]] = {}
        brow = blocks[r].tolist()
        arow = active[r].tolist()
        for j in range(n):
            if not arow[j]:
                continue
            b = brow[j]
            lines = sets.get(b & mask)
            if lines is None:
                sets[b & mask] = [b]
                continue
            if b in lines:
                if lines[0] != b:
                    lines.remove(b)
                    lines.insert(0, b)
            else:
                lines.insert(0, b)
                if len(lines) > ways:
                    lines.pop()
        for k, b in enumerate(probe[r].tolist()):
            if b >= 0 and b in sets.get(b & mask, ()):
                out[r, k] = 1
    return out


KERNEL = "python"
_lru_batch_c = None
if os.environ.get("SPECLEAK_PURE", "") not in ("1", "true", "yes"):
    try:
        from ._lru import lru_batch as _lru_batch_c  # type: ignore
        KERNEL = "cython"
    except ImportError:  # pragma: no cover - depends on the build
        _lru_batch_c = None


def lru_batch(blocks, active, nsets: int, ways: int, probe, *, pure: bool = False) -> np.ndarray:
    blocks = np.ascontiguousarray(blocks, dtype=np.int64)
    active = np.ascontiguousarray(active, dtype=np.uint8)
    probe = np.ascontiguousarray(probe, dtype=np.int64)
    if blocks.shape != active.shape or blocks.shape[0] != probe.shape[0]:
        raise ValueError("blocks, active and probe must agree on the row count")
    if nsets < 1 or nsets & (nsets - 1) or ways < 1:
        raise ValueError("bad cache geometry")
    if _lru_batch_c is not None and not pure:
        return np.asarray(_lru_batch_c(blocks, active, nsets, ways, probe), dtype=np.uint8)
    return _lru_batch_py(blocks, active, nsets, ways, probe)
