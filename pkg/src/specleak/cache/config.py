"""Cache geometry and the symbolic set/tag maps."""
from __future__ import annotations

import re
from dataclasses import dataclass

from .. import expr as E
from ..expr import Expr


def _log2(n: int, what: str) -> int:
    if n < 1 or n & (n - 1):
        raise ValueError(f"{what} must be a power of two, got {n}")
    return n.bit_length() - 1


@dataclass(frozen=True)
class CacheConfig:
    """``sets`` x ``line_bytes`` x ``ways``, LRU replacement."""

    sets: int = 256
    line_bytes: int = 64
    ways: int = 2
    policy: str = "lru"

    def __post_init__(self):
        _log2(self.sets, "set count")
        _log2(self.line_bytes, "line size")
        if self.ways < 1:
            raise ValueError("associativity must be >= 1")
        if self.policy != "lru":
            raise ValueError("only LRU replacement is modelled")

    @classmethod
    def from_size(cls, size: int = 32768, line_bytes: int = 64, ways: int = 2) -> "CacheConfig":
        if size % (line_bytes * ways):
            raise ValueError("cache size must be a multiple of line size times associativity")
        return cls(size // (line_bytes * ways), line_bytes, ways)

    @classmethod
    def parse(cls, text: str) -> "CacheConfig":
        """``SETSxLINExWAYS``, e.g. ``256x64x2``."""
        m = re.fullmatch(r"\s*(\d+)\s*[xX]\s*(\d+)\s*[xX]\s*(\d+)\s*", text)
        if not m:
            raise ValueError(f"cache geometry must look like SETSxLINExWAYS, got {text!r}")
        return cls(int(m.group(1)), int(m.group(2)), int(m.group(3)))

    @property
    def S(self) -> int:
        return _log2(self.sets, "set count")

    @property
    def B(self) -> int:
        return _log2(self.line_bytes, "line size")

    @property
    def size(self) -> int:
        return self.sets * self.line_bytes * self.ways

    def block(self, addr: int) -> int:
        return addr >> self.B

    def set_of(self, addr: int) -> int:
        return (addr >> self.B) & (self.sets - 1)

    def tag_of(self, addr: int) -> int:
        return addr >> (self.B + self.S)

    def describe(self) -> str:
        return f"{self.size // 1024}KB/{self.line_bytes}B/{self.ways}-way ({self.sets} sets)"


def set_index(sigma: Expr, config: CacheConfig) -> Expr:
    """(sigma >> B) & (sets - 1)."""
    w = sigma.width
    return E.binop("and", E.binop("lshr", sigma, E.const(w, config.B)), E.const(w, config.sets - 1))


def tag(sigma: Expr, config: CacheConfig) -> Expr:
    """sigma >> (B + S)."""
    return E.binop("lshr", sigma, E.const(sigma.width, config.B + config.S))


def block_id(sigma: Expr, config: CacheConfig) -> Expr:
    return E.binop("lshr", sigma, E.const(sigma.width, config.B))
