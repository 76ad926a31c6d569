"""Symbolic residency model for secret-dependent cache blocks and the residency check.

For every secret-dependent access i and later normal access j the model
defines a 0/1 indicator ``cnf.i.j`` that is 1 exactly when j maps to the
same set with a different tag, j is the last normal access to its block, and
i's block is not touched again after j.  ``spec.i`` holds when fewer than
``ways`` indicators are set, and the model asks whether some ``spec.i`` can
hold under the trace's path condition.
"""
from __future__ import annotations

from dataclasses import dataclass, field
from typing import Sequence

import numpy as np

from .. import expr as E
from ..expr import Expr
from ..solver import (SAT, UNKNOWN, UNSAT, BudgetExceeded, Constraint, EnumerationBackend,
                      Solver, enumerate_assignments, evaluate_vec, partition,
                      pinned_symbols)
from .config import CacheConfig, set_index, tag
from .lru import LRUCache, lru_batch
from .maycache import DEFINITELY_EVICTED, maycache_filter
from .trace import NORM, SPEC, CacheTrace

MAY_REMAIN = "may-remain"
EVICTED = "definitely-evicted"
UNKNOWN_V = "unknown"
INFEASIBLE = "infeasible"
ACCESS, TRACE = "access", "trace"


class NoSymbolicAccess(ValueError):
    """The trace has no secret-dependent access to check."""

    def __init__(self):
        super().__init__("no symbolic accesses")


@dataclass
class GammaModel:
    constraint: Constraint
    spec: dict[int, Expr]
    cnf: dict[tuple[int, int], Expr]
    definition: dict[tuple[int, int], Expr]
    sums: dict[int, Expr]


def _same_block(si, ti, sj, tj) -> Expr:
    return E.land(E.cmp("eq", si, sj), E.cmp("eq", ti, tj))


def build_gamma_spectre(trace: CacheTrace, config: CacheConfig, *, only: int | None = None,
                        include_pi: bool = True, prefix: str = "") -> GammaModel:
    """Residency constraint for ``trace``.

    With ``only`` set, the final disjunction is replaced by ``spec.only`` so
    the query asks about a single secret-dependent access.
    """
    ev = trace.events
    n = len(ev)
    ns = trace.n_s
    if not ns:
        raise NoSymbolicAccess()
    nt = [k for k in range(n) if ev[k].kind == NORM]
    sets = [set_index(e.sigma, config) for e in ev]
    tags = [tag(e.sigma, config) for e in ev]
    A = config.ways

    # uniqueness of each normal access among later normal accesses
    unq: dict[int, Expr] = {}
    last_concrete: dict[int, int] = {}
    later_symbolic: list[int] = []
    for j in reversed(nt):
        e = ev[j]
        parts = [E.lnot(_same_block(sets[j], tags[j], sets[k], tags[k])) for k in later_symbolic]
        if e.concrete:
            b = e.sigma.value >> config.B
            if b in last_concrete:
                unq[j] = E.FALSE
            else:
                unq[j] = E.land(*parts)
            last_concrete.setdefault(b, j)
        else:
            conc = [E.lnot(_same_block(sets[j], tags[j], sets[k], tags[k])) for k in last_concrete.values()]
            unq[j] = E.land(*(parts + conc))
            later_symbolic.append(j)

    terms: list[Expr] = list(trace.pi.terms) if include_pi else []
    defs: dict[Expr, Expr] = {}
    spec: dict[int, Expr] = {}
    cnf: dict[tuple[int, int], Expr] = {}
    definition: dict[tuple[int, int], Expr] = {}
    sums: dict[int, Expr] = {}
    width = max((len(nt) + 1).bit_length(), A.bit_length()) + 1
    for i in ns:
        # no reload of i's block after j: suffix conjunction over every later event
        rel: dict[int, Expr] = {}
        acc = E.TRUE
        for k in range(n - 1, i, -1):
            rel[k] = acc
            acc = E.land(E.lnot(_same_block(sets[i], tags[i], sets[k], tags[k])), acc)
        total = E.const(width, 0)
        for j in nt:
            if j <= i:
                continue
            conflict = E.land(E.cmp("eq", sets[i], sets[j]), E.cmp("ne", tags[i], tags[j]))
            d = E.land(conflict, unq[j], rel[j])
            definition[(i, j)] = d
            if d.is_const:
                c = d
            else:
                c = E.symbol(f"{prefix}cnf.{i}.{j}", 1)
                defs[c] = d
                terms.append(E.implies(d, c))                    # conflict propagates
                terms.append(E.implies(E.lnot(d), E.lnot(c)))    # otherwise no conflict
            cnf[(i, j)] = c
            total = E.binop("add", total, E.zext(c, width))
        sums[i] = total
        below = E.cmp("ult", total, E.const(width, A))
        if below.is_const:
            s = below
        else:
            s = E.symbol(f"{prefix}spec.{i}", 1)
            defs[s] = below
            terms.append(E.implies(below, s))
            terms.append(E.implies(E.lnot(below), E.lnot(s)))
        spec[i] = s
    if only is not None:
        if only not in spec:
            raise KeyError(f"event {only} is not a secret-dependent access")
        terms.append(spec[only])
    else:
        terms.append(E.lor(*(spec[i] for i in ns)))
    return GammaModel(Constraint(terms, defs), spec, cnf, definition, sums)


# -- verdicts -----------------------------------------------------------------

@dataclass
class EventVerdict:
    event: int
    status: str
    model: dict | None = None
    addresses: list[int] | None = None
    contents: dict | None = None
    note: str = ""
    route: str = ""

    @property
    def leaks(self) -> bool:
        return self.status in (MAY_REMAIN, UNKNOWN_V)


@dataclass
class ResidencyVerdict:
    attacker: str
    events: dict[int, EventVerdict]
    observation: int | None = None
    flagged_unknown: bool = False

    @property
    def status(self) -> str:
        sts = [v.status for v in self.events.values()]
        if MAY_REMAIN in sts:
            return MAY_REMAIN
        if UNKNOWN_V in sts:
            return UNKNOWN_V
        if sts and all(s == INFEASIBLE for s in sts):
            return INFEASIBLE
        return EVICTED

    @property
    def leaks(self) -> bool:
        return self.status in (MAY_REMAIN, UNKNOWN_V)


def _filtered_active(blocks_row: np.ndarray, kinds_t: np.ndarray, i: int) -> np.ndarray:
    active = kinds_t.copy()
    same = blocks_row == blocks_row[:, i:i + 1]
    same[:, :i] = False
    active |= same
    return active


class _Direct:
    """Decide residency by enumerating the inputs the addresses depend on."""

    def __init__(self, trace: CacheTrace, config: CacheConfig, budget_bits: int):
        self.trace = trace
        self.config = config
        sig_syms = set()
        for e in trace.events:
            sig_syms |= e.sigma.syms
        groups = partition(list(trace.pi.terms), trace.pi.definitions)
        rel_terms, other = [], []
        syms = set(sig_syms)
        for ts, ss in groups:
            if ss & sig_syms:
                rel_terms += ts
                syms |= ss
            else:
                other.append((ts, ss))
        self.rel_terms = rel_terms
        self.other_groups = other
        self.syms = sorted(syms - set(trace.pi.definitions), key=lambda s: s.name)
        self.pins = pinned_symbols(rel_terms)
        bits = sum(s.width for s in self.syms if s not in self.pins)
        if bits > budget_bits:
            raise BudgetExceeded(bits, budget_bits)

    def run(self, candidates: Sequence[int], backend: EnumerationBackend) -> dict[int, EventVerdict]:
        trace, cfg = self.trace, self.config
        env, n = enumerate_assignments(self.syms, self.pins)
        memo = {id(s): v for s, v in env.items()}
        ok = np.ones(n, dtype=bool)
        for t in self.rel_terms:
            ok &= evaluate_vec([t], {}, n, memo)[0] != 0
        if not ok.any():
            return {i: EventVerdict(i, INFEASIBLE, route="simulate") for i in candidates}
        rows_idx = np.flatnonzero(ok)
        sig = evaluate_vec([e.sigma for e in trace.events], {}, n, memo)
        addrs = np.stack([np.asarray(s)[rows_idx] for s in sig], axis=1) if sig else \
            np.zeros((rows_idx.size, 0), dtype=np.uint64)
        blocks = (addrs >> np.uint64(cfg.B)).astype(np.int64)
        uniq, first = np.unique(blocks, axis=0, return_index=True)
        kinds_t = np.array([e.kind == NORM for e in trace.events], dtype=bool)[None, :]
        out: dict[int, EventVerdict] = {}
        for i in candidates:
            active = _filtered_active(uniq, np.repeat(kinds_t, uniq.shape[0], axis=0), i)
            probe = uniq[:, i:i + 1]
            res = lru_batch(uniq, active.astype(np.uint8), cfg.sets, cfg.ways, probe)[:, 0]
            hits = np.flatnonzero(res)
            if hits.size == 0:
                out[i] = EventVerdict(i, EVICTED, route="simulate")
                continue
            u = int(hits[0])
            row = int(rows_idx[first[u]])
            model = {s.name: int(np.broadcast_to(env[s], (n,))[row]) for s in self.syms}
            addr_row = [int(a) for a in addrs[first[u]]]
            cache = LRUCache(cfg)
            for k, b in enumerate(uniq[u]):
                if active[u, k]:
                    cache.access_block(int(b))
            s_i = int(uniq[u, i]) & (cfg.sets - 1)
            out[i] = EventVerdict(i, MAY_REMAIN, model, addr_row,
                                  {s_i: tuple(cache.sets[s_i])}, route="simulate")
        if any(v.status == MAY_REMAIN for v in out.values()):
            # inputs the addresses do not depend on still have to admit a model;
            # eviction verdicts hold regardless
            for ts, ss in self.other_groups:
                try:
                    _, gok = backend.group_models(ts, ss, trace.pi.definitions)
                except BudgetExceeded as exc:
                    for v in out.values():
                        if v.status == MAY_REMAIN:
                            v.note = f"independent constraints not decided ({exc})"
                    continue
                if not gok.any():
                    return {i: EventVerdict(i, INFEASIBLE, route="simulate") for i in candidates}
        return out


def _constraint_route(trace: CacheTrace, config: CacheConfig, solver: Solver,
                      candidates: Sequence[int]) -> dict[int, EventVerdict]:
    out = {}
    for i in candidates:
        gm = build_gamma_spectre(trace, config, only=i)
        res = solver.check(gm.constraint)
        if res.status == SAT:
            addrs = None
            try:
                addrs = [E.evaluate(e.sigma, res.model) for e in trace.events]
            except E.UnboundSymbol:
                pass
            out[i] = EventVerdict(i, MAY_REMAIN, res.model, addrs, route="constraint")
        elif res.status == UNSAT:
            out[i] = EventVerdict(i, EVICTED, route="constraint")
        else:
            out[i] = EventVerdict(i, UNKNOWN_V, note=res.note, route="constraint")
    return out


def _access_check(trace: CacheTrace, config: CacheConfig, solver: Solver, route: str,
                  use_filter: bool) -> dict[int, EventVerdict]:
    ns = trace.n_s
    verdicts: dict[int, EventVerdict] = {}
    candidates = list(ns)
    if use_filter:
        flt = maycache_filter(trace, config, solver)
        candidates = []
        for i in ns:
            if flt.get(i) == DEFINITELY_EVICTED:
                verdicts[i] = EventVerdict(i, EVICTED, route="maycache")
            else:
                candidates.append(i)
    if not candidates:
        return verdicts
    backend = solver.backend
    if route in ("auto", "simulate") and isinstance(backend, EnumerationBackend):
        try:
            verdicts.update(_Direct(trace, config, backend.budget_bits).run(candidates, backend))
            return verdicts
        except BudgetExceeded as exc:
            if route == "simulate":
                for i in candidates:
                    verdicts[i] = EventVerdict(i, UNKNOWN_V, note=str(exc), route="simulate")
                return verdicts
    verdicts.update(_constraint_route(trace, config, solver, candidates))
    return verdicts


def check_residency(trace: CacheTrace, config: CacheConfig, attacker: str = ACCESS,
                    solver: Solver | None = None, *, route: str = "auto",
                    use_filter: bool = True) -> ResidencyVerdict:
    """Can a secret-dependent block of ``trace`` be observed in the cache?

    ``route`` picks the decision procedure: ``constraint`` always builds and
    solves the residency constraint, ``simulate`` enumerates inputs and
    replays exact LRU, ``auto`` simulates when the enumeration backend is in
    use and falls back to the constraint otherwise.
    """
    if attacker not in (ACCESS, TRACE):
        raise ValueError(f"unknown attacker model {attacker!r}")
    if route not in ("auto", "simulate", "constraint"):
        raise ValueError(f"unknown route {route!r}")
    ns = trace.n_s
    if not ns:
        raise NoSymbolicAccess()
    solver = solver or Solver()
    if attacker == ACCESS:
        v = _access_check(trace, config, solver, route, use_filter)
        res = ResidencyVerdict(ACCESS, v, len(trace))
    else:
        res = None
        for k in range(ns[0] + 1, len(trace) + 1):
            v = _access_check(trace.prefix(k), config, solver, route, use_filter)
            r = ResidencyVerdict(TRACE, v, k)
            if r.leaks:
                res = r
                break
            res = r
    res.flagged_unknown = any(ev.status == UNKNOWN_V for ev in res.events.values())
    return res
