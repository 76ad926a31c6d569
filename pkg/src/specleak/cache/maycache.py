"""Over-approximate cache abstraction used as a cheap eviction pre-filter.

Concrete normal-path accesses drive an exact LRU state per set.  Each
secret-dependent access becomes a *virtual* entry placed in every set it may
map to, with a life counter starting at the associativity.  A concrete miss
in a set ages the virtual entries of that set; an access that may touch the
entry's own block renews it.  An entry that has died in every set cannot be
cached at the end of the trace.
"""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .. import expr as E
from ..expr import Expr
from ..solver import BudgetExceeded, Constraint, EnumerationBackend, Solver, evaluate_vec, \
    enumerate_assignments, pinned_symbols, slice_for
from .config import CacheConfig, block_id
from .trace import NORM, SPEC, CacheTrace

POSSIBLY_RESIDENT = "possibly-resident"
DEFINITELY_EVICTED = "definitely-evicted"


def feasible_values(expr: Expr, pi: Constraint, budget_bits: int = 16) -> np.ndarray | None:
    """Every value ``expr`` takes over the models of ``pi`` (restricted to the
    terms that share symbols with it), or None if enumeration is over budget."""
    if expr.is_const:
        return np.array([expr.value], dtype=np.uint64)
    rel = slice_for(pi, _SymCarrier(expr))
    syms = set(expr.syms)
    for t in rel.terms:
        syms |= t.syms
    syms -= set(pi.definitions)
    syms = sorted(syms, key=lambda s: s.name)
    pins = pinned_symbols(rel.terms)
    if sum(s.width for s in syms if s not in pins) > budget_bits:
        return None
    env, n = enumerate_assignments(syms, pins)
    memo: dict = {id(s): v for s, v in env.items()}
    ok = np.ones(n, dtype=bool)
    for t in rel.terms:
        ok &= evaluate_vec([t], {}, n, memo)[0] != 0
    vals = evaluate_vec([expr], {}, n, memo)[0][ok]
    return np.unique(vals)


class _SymCarrier:
    """Duck-typed stand-in accepted by :func:`slice_for`: only ``syms`` is read."""

    __slots__ = ("syms",)

    def __init__(self, expr: Expr):
        self.syms = expr.syms


@dataclass
class VirtualEntry:
    event: int
    life: int


@dataclass
class MayCacheState:
    config: CacheConfig
    concrete: list[list[int]] = field(default_factory=list)
    virtual: list[dict[int, int]] = field(default_factory=list)

    def __post_init__(self):
        if not self.concrete:
            self.concrete = [[] for _ in range(self.config.sets)]
            self.virtual = [{} for _ in range(self.config.sets)]

    def snapshot(self) -> dict[int, tuple[tuple[int, ...], dict[int, int]]]:
        return {k: (tuple(self.concrete[k]), dict(self.virtual[k]))
                for k in range(self.config.sets) if self.concrete[k] or self.virtual[k]}


class MayCache:
    """Replays a trace through :class:`MayCacheState`."""

    def __init__(self, trace: CacheTrace, config: CacheConfig, solver: Solver | None = None,
                 budget_bits: int | None = None, max_feasible_sets: int | None = None):
        self.trace = trace
        self.config = config
        self.solver = solver or Solver()
        if budget_bits is None:
            be = self.solver.backend
            budget_bits = be.budget_bits if isinstance(be, EnumerationBackend) else 16
        self.budget_bits = budget_bits
        self.max_feasible_sets = max_feasible_sets
        self.state = MayCacheState(config)
        self._blocks: dict[int, np.ndarray | None] = {}

    def blocks_of(self, k: int) -> np.ndarray | None:
        """Feasible block ids of event k, or None when unknown."""
        if k not in self._blocks:
            ev = self.trace.events[k]
            self._blocks[k] = feasible_values(block_id(ev.sigma, self.config), self.trace.pi,
                                              self.budget_bits)
        return self._blocks[k]

    def feasible_sets(self, k: int) -> list[int]:
        blocks = self.blocks_of(k)
        if blocks is None:
            return list(range(self.config.sets))
        sets = sorted({int(b) & (self.config.sets - 1) for b in blocks})
        if self.max_feasible_sets is not None and len(sets) > self.max_feasible_sets:
            return list(range(self.config.sets))
        return sets

    def may_alias(self, k: int, entry: int) -> bool:
        bk, be = self.blocks_of(k), self.blocks_of(entry)
        if bk is not None and be is not None:
            return bool(np.intersect1d(bk, be, assume_unique=True).size)
        cond = E.cmp("eq", block_id(self.trace.events[k].sigma, self.config),
                     block_id(self.trace.events[entry].sigma, self.config))
        return self.solver.may_be_true(self.trace.pi, cond)

    def run(self) -> dict[int, str]:
        cfg = self.config
        st = self.state
        A = cfg.ways
        live: dict[int, set[int]] = {}      # entry -> sets it still occupies
        home: dict[int, list[int]] = {}     # entry -> every set it may map to
        for k, ev in enumerate(self.trace.events):
            # an access that may touch an entry's block reloads it, even after it died
            for e, where in live.items():
                if self.may_alias(k, e):
                    where.update(home[e])
                    for s in home[e]:
                        st.virtual[s][e] = A
            if ev.kind == SPEC:
                home[k] = self.feasible_sets(k)
                where = set(home[k])
                live[k] = where
                for s in where:
                    st.virtual[s][k] = A
                continue
            if not ev.concrete:
                continue
            b = ev.sigma.value >> cfg.B
            s = b & (cfg.sets - 1)
            lines = st.concrete[s]
            if b in lines:
                lines.remove(b)
                lines.insert(0, b)
                continue
            lines.insert(0, b)
            if len(lines) > A:
                lines.pop()
            for e in list(st.virtual[s]):
                if self.may_alias(k, e):
                    continue
                st.virtual[s][e] -= 1
                if st.virtual[s][e] <= 0:
                    del st.virtual[s][e]
                    live[e].discard(s)
        return {e: (POSSIBLY_RESIDENT if where else DEFINITELY_EVICTED) for e, where in live.items()}


def maycache_filter(trace: CacheTrace, config: CacheConfig, solver: Solver | None = None,
                    **kw) -> dict[int, str]:
    """Per N_s event index: possibly-resident or definitely-evicted."""
    return MayCache(trace, config, solver, **kw).run()
