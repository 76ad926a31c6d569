"""Path constraints and satisfiability backends.

Two backends answer the same question:

* :class:`EnumerationBackend` enumerates every assignment of the free symbols
  with numpy, exact within a bit budget.  Queries are first split into
  independent groups of terms (no shared symbols) and the budget applies to
  each group.
* :class:`SmtBackend` prints a QF_BV script and pipes it to an external
  solver executable.

Auxiliary symbols can be *defined* by an expression (see
:class:`Constraint.definitions`).  Enumeration computes them instead of
enumerating them; the SMT exporter declares them as ordinary constants and
relies on the constraint's own terms to pin them down.
"""
from __future__ import annotations

import logging
import os
import re
import shutil
import subprocess
import threading
import time
from dataclasses import dataclass, field
from typing import Iterable, Mapping, Sequence

import numpy as np

from . import expr as E
from .expr import Expr

log = logging.getLogger(__name__)

SAT, UNSAT, UNKNOWN = "sat", "unsat", "unknown"


class BudgetExceeded(RuntimeError):
    """Enumeration would need more free-symbol bits than the configured budget."""

    def __init__(self, bits: int, budget: int):
        super().__init__(f"query has {bits} free bits in one dependent group, budget is {budget}")
        self.bits = bits
        self.budget = budget


class Constraint:
    """An order-insensitive conjunction of 1-bit terms.

    ``definitions`` maps auxiliary symbols to the expression that determines
    them; it is only a hint for backends that can exploit it.
    """

    __slots__ = ("terms", "_set", "definitions")

    def __init__(self, terms: Iterable[Expr] = (), definitions: Mapping[Expr, Expr] | None = None):
        out: list[Expr] = []
        seen: set[Expr] = set()
        for t in terms:
            if t.width != 1:
                raise E.WidthError("constraint terms must be 1 bit")
            if t is E.TRUE or t in seen:
                continue
            seen.add(t)
            out.append(t)
        self.terms: tuple[Expr, ...] = tuple(out)
        self._set = frozenset(out)
        self.definitions: dict[Expr, Expr] = dict(definitions or {})

    @classmethod
    def true(cls) -> "Constraint":
        return _TRUE_PI

    def add(self, *terms: Expr) -> "Constraint":
        new = [t for t in terms if t is not E.TRUE and t not in self._set]
        if not new:
            return self
        return Constraint(self.terms + tuple(new), self.definitions)

    def __and__(self, other: "Constraint") -> "Constraint":
        defs = dict(self.definitions)
        defs.update(other.definitions)
        return Constraint(self.terms + other.terms, defs)

    def __iter__(self):
        return iter(self.terms)

    def __len__(self) -> int:
        return len(self.terms)

    def __contains__(self, t: Expr) -> bool:
        return t in self._set

    def __eq__(self, other) -> bool:
        return isinstance(other, Constraint) and self._set == other._set

    def __hash__(self) -> int:
        return hash(self._set)

    @property
    def trivially_false(self) -> bool:
        return E.FALSE in self._set

    def free_symbols(self) -> frozenset:
        syms = frozenset().union(*(t.syms for t in self.terms)) if self.terms else frozenset()
        return syms - frozenset(self.definitions)

    def __repr__(self) -> str:
        return "Constraint(" + " & ".join(E.to_text(t, 40) for t in self.terms) + ")"


_TRUE_PI = Constraint()


@dataclass
class SatResult:
    status: str
    model: dict[str, int] | None = None
    note: str = ""

    @property
    def sat(self) -> bool:
        return self.status == SAT

    @property
    def unsat(self) -> bool:
        return self.status == UNSAT

    def __bool__(self) -> bool:  # pragma: no cover - guard against accidental truthiness
        raise TypeError("use .sat / .unsat / .status")


# -- independence ----------------------------------------------------------

def _expanded_syms(t: Expr, definitions: Mapping[Expr, Expr], cache: dict) -> frozenset:
    out = set()
    for s in t.syms:
        if s in definitions:
            if s not in cache:
                cache[s] = frozenset()  # cycle guard
                cache[s] = _expanded_syms(definitions[s], definitions, cache) | {s}
            out |= cache[s]
        else:
            out.add(s)
    return frozenset(out)


def partition(terms: Sequence[Expr], definitions: Mapping[Expr, Expr] | None = None
              ) -> list[tuple[list[Expr], frozenset]]:
    """Split terms into groups that share no free symbol.

    Returns ``(terms, symbols)`` pairs; defined symbols are expanded to the
    free symbols of their definitions.
    """
    definitions = definitions or {}
    cache: dict = {}
    parent: dict[Expr, Expr] = {}

    def find(x):
        while parent[x] is not x:
            parent[x] = parent[parent[x]]
            x = parent[x]
        return x

    term_syms = []
    for t in terms:
        syms = _expanded_syms(t, definitions, cache)
        term_syms.append(syms)
        first = None
        for s in syms:
            parent.setdefault(s, s)
            if first is None:
                first = find(s)
            else:
                r = find(s)
                if r is not first:
                    parent[r] = first
    groups: dict = {}
    closed: list[tuple[list[Expr], frozenset]] = []
    for t, syms in zip(terms, term_syms):
        if not syms:
            closed.append(([t], frozenset()))
            continue
        root = find(next(iter(syms)))
        g = groups.setdefault(root, ([], set()))
        g[0].append(t)
        g[1].update(syms)
    return closed + [(ts, frozenset(ss)) for ts, ss in groups.values()]


# -- vectorized evaluation -------------------------------------------------

_U64 = np.uint64


def _vmask(width: int):
    return _U64((1 << width) - 1)


def _vsigned_key(width: int, a):
    # maps two's-complement order onto unsigned order
    return a ^ _U64(1 << (width - 1))


def evaluate_vec(roots: Sequence[Expr], env: Mapping[Expr, np.ndarray], n: int,
                 memo: dict | None = None) -> list[np.ndarray]:
    """Evaluate expressions over ``n`` assignments at once.

    ``env`` maps symbol nodes (and optionally other nodes) to uint64 arrays.
    Constants are broadcast as scalars, so results may be 0-d.
    """
    vals: dict[int, object] = {} if memo is None else memo
    for k, v in env.items():
        vals.setdefault(id(k), v)
    for node in E._postorder(roots):
        k = id(node)
        if k in vals:
            continue
        op = node.op
        w = node.width
        if op == "const":
            v = _U64(node.value)
        elif op == "sym":
            raise E.UnboundSymbol(node.name)
        elif op == "select":
            c, a, b = node.args
            v = np.where(vals[id(c)] != 0, vals[id(a)], vals[id(b)]).astype(_U64)
        elif op == "not":
            v = ~vals[id(node.args[0])] & _vmask(w)
        elif op in ("zext", "trunc"):
            v = vals[id(node.args[0])] & _vmask(w)
        elif op == "sext":
            a = node.args[0]
            av = vals[id(a)]
            hi = _U64(((1 << w) - 1) ^ ((1 << a.width) - 1))
            v = np.where((av >> _U64(a.width - 1)) & _U64(1), av | hi, av).astype(_U64)
        elif op in E.CMPOPS:
            a, b = node.args
            av, bv = vals[id(a)], vals[id(b)]
            if op == "eq":
                r = av == bv
            elif op == "ne":
                r = av != bv
            elif op == "ult":
                r = av < bv
            elif op == "ule":
                r = av <= bv
            elif op == "slt":
                r = _vsigned_key(a.width, av) < _vsigned_key(a.width, bv)
            else:
                r = _vsigned_key(a.width, av) <= _vsigned_key(a.width, bv)
            v = np.asarray(r).astype(_U64)
        else:
            a, b = node.args
            av, bv = vals[id(a)], vals[id(b)]
            m = _vmask(w)
            if op == "add":
                v = (av + bv) & m
            elif op == "sub":
                v = (av - bv) & m
            elif op == "mul":
                v = (av * bv) & m
            elif op == "and":
                v = av & bv
            elif op == "or":
                v = av | bv
            elif op == "xor":
                v = av ^ bv
            elif op in ("shl", "lshr"):
                big = bv >= _U64(w)
                sh = np.minimum(bv, _U64(63))
                r = (av << sh) & m if op == "shl" else av >> sh
                v = np.where(big, _U64(0), r).astype(_U64)
            else:  # pragma: no cover
                raise ValueError(op)
        vals[k] = v
    return [np.broadcast_to(np.asarray(vals[id(r)], dtype=_U64), (n,)) for r in roots]


def enumerate_assignments(symbols: Sequence[Expr], fixed: Mapping[Expr, int] | None = None
                          ) -> tuple[dict[Expr, np.ndarray], int]:
    """Every assignment of ``symbols`` as one array per symbol.

    Symbols in ``fixed`` take their single given value and cost no bits.
    """
    fixed = fixed or {}
    bits = sum(s.width for s in symbols if s not in fixed)
    n = 1 << bits
    idx = np.arange(n, dtype=_U64)
    env = {}
    shift = 0
    for s in symbols:
        if s in fixed:
            env[s] = np.full(n, fixed[s], dtype=_U64)
            continue
        env[s] = (idx >> _U64(shift)) & _vmask(s.width)
        shift += s.width
    return env, n


def pinned_symbols(terms: Iterable[Expr]) -> dict[Expr, int]:
    """Symbols a conjunction forces to one value through ``sym == const`` terms.

    A second, different pin for the same symbol is left to the enumeration,
    which then finds the conjunction unsatisfiable.
    """
    out: dict[Expr, int] = {}
    for t in terms:
        if t.op != "eq":
            continue
        a, b = t.args
        if a.is_const:
            a, b = b, a
        if a.op == "sym" and b.is_const:
            out.setdefault(a, b.value)
    return out


def _order_symbols(syms: Iterable[Expr]) -> list[Expr]:
    return sorted(syms, key=lambda s: (s.name, s.width))


# -- backends --------------------------------------------------------------

class EnumerationBackend:
    """Exact satisfiability by exhaustive enumeration of each independent group."""

    name = "enum"

    def __init__(self, budget_bits: int = 16):
        self.budget_bits = budget_bits

    def group_models(self, terms: Sequence[Expr], syms: frozenset,
                     definitions: Mapping[Expr, Expr]):
        """Assignments of one independent group that satisfy all its terms.

        Returns ``(env, mask)``: per-symbol arrays (defined symbols included)
        and the boolean array selecting satisfying rows.
        """
        free = _order_symbols(s for s in syms if s not in definitions)
        pins = pinned_symbols(terms)
        bits = sum(s.width for s in free if s not in pins)
        if bits > self.budget_bits:
            raise BudgetExceeded(bits, self.budget_bits)
        env, n = enumerate_assignments(free, pins)
        memo: dict = {}
        for s, _v in env.items():
            memo[id(s)] = _v
        for d in _order_defs(syms, definitions):
            env[d] = evaluate_vec([definitions[d]], {}, n, memo)[0]
            memo[id(d)] = env[d]
        ok = np.ones(n, dtype=bool)
        for t in terms:
            ok &= evaluate_vec([t], {}, n, memo)[0] != 0
            live = int(np.count_nonzero(ok))
            if not live:
                break
            if live * 4 < n:
                # keep only surviving rows; later terms evaluate on far fewer
                keep = np.flatnonzero(ok)
                env = {s: np.broadcast_to(a, (n,))[keep] for s, a in env.items()}
                memo = {id(s): a for s, a in env.items()}
                n = keep.size
                ok = np.ones(n, dtype=bool)
        return env, ok

    def check(self, pi: Constraint, extra: Sequence[Expr] = ()) -> SatResult:
        terms = list(pi.terms) + [t for t in extra if t is not E.TRUE]
        if any(t is E.FALSE for t in terms):
            return SatResult(UNSAT)
        model: dict[str, int] = {}
        for group, syms in partition(terms, pi.definitions):
            env, ok = self.group_models(group, syms, pi.definitions)
            hits = np.flatnonzero(ok)
            if hits.size == 0:
                return SatResult(UNSAT)
            row = int(hits[0])
            for s, arr in env.items():
                if s.op == "sym":
                    model[s.name] = int(np.broadcast_to(arr, ok.shape)[row])
        return SatResult(SAT, model)


def _order_defs(syms: Iterable[Expr], definitions: Mapping[Expr, Expr]) -> list[Expr]:
    """Defined symbols among ``syms`` in dependency order."""
    wanted = [s for s in syms if s in definitions]
    order: list[Expr] = []
    state: dict[Expr, int] = {}

    def visit(s):
        st = state.get(s)
        if st == 2:
            return
        if st == 1:
            raise ValueError(f"cyclic definition through {s.name}")
        state[s] = 1
        for dep in definitions[s].syms:
            if dep in definitions:
                visit(dep)
        state[s] = 2
        order.append(s)

    for s in sorted(wanted, key=lambda s: s.name):
        visit(s)
    return order


# -- SMT-LIB2 --------------------------------------------------------------

_SMT_BIN = {"add": "bvadd", "sub": "bvsub", "mul": "bvmul", "and": "bvand", "or": "bvor",
            "xor": "bvxor", "shl": "bvshl", "lshr": "bvlshr"}
_SMT_CMP = {"eq": "=", "ult": "bvult", "ule": "bvule", "slt": "bvslt", "sle": "bvsle"}


def _smt_name(name: str) -> str:
    return "|" + name.replace("|", "_").replace("\\", "_") + "|"


def _bv(width: int, value: int) -> str:
    return f"(_ bv{value} {width})"


def export_smtlib2(pi: Constraint, extra: Sequence[tuple[str, Expr]] | Sequence[Expr] = ()) -> str:
    """A QF_BV script asserting every term of ``pi`` plus the named extras."""
    named: list[tuple[str | None, Expr]] = []
    for item in extra:
        if isinstance(item, tuple):
            named.append(item)
        else:
            named.append((None, item))
    terms = [(None, t) for t in pi.terms] + named
    syms = set()
    for _, t in terms:
        syms |= t.syms
    lines = ["(set-logic QF_BV)", "(set-option :produce-models true)"]
    for s in _order_symbols(syms):
        lines.append(f"(declare-const {_smt_name(s.name)} (_ BitVec {s.width}))")
    names: dict[int, str] = {}
    for s in syms:
        names[id(s)] = _smt_name(s.name)
    counter = 0

    def ref(n: Expr) -> str:
        if n.op == "const":
            return _bv(n.width, n.value)
        return names[id(n)]

    for n in E._postorder([t for _, t in terms]):
        if n.op in ("const", "sym") or id(n) in names:
            continue
        a = n.args
        op = n.op
        if op == "select":
            body = f"(ite (= {ref(a[0])} #b1) {ref(a[1])} {ref(a[2])})"
        elif op == "not":
            body = f"(bvnot {ref(a[0])})"
        elif op == "zext":
            body = f"((_ zero_extend {n.width - a[0].width}) {ref(a[0])})"
        elif op == "sext":
            body = f"((_ sign_extend {n.width - a[0].width}) {ref(a[0])})"
        elif op == "trunc":
            body = f"((_ extract {n.width - 1} 0) {ref(a[0])})"
        elif op == "ne":
            body = f"(ite (= {ref(a[0])} {ref(a[1])}) #b0 #b1)"
        elif op in _SMT_CMP:
            body = f"(ite ({_SMT_CMP[op]} {ref(a[0])} {ref(a[1])}) #b1 #b0)"
        else:
            body = f"({_SMT_BIN[op]} {ref(a[0])} {ref(a[1])})"
        name = f"n{counter}"
        counter += 1
        names[id(n)] = name
        lines.append(f"(define-fun {name} () (_ BitVec {n.width}) {body})")
    for label, t in terms:
        atom = f"(= {ref(t)} #b1)"
        if label:
            lines.append(f"(assert (! {atom} :named {label}))")
        else:
            lines.append(f"(assert {atom})")
    lines.append("(check-sat)")
    if syms:
        lines.append("(get-model)")
    return "\n".join(lines) + "\n"


_MODEL_RE = re.compile(
    r"\(define-fun\s+(\|[^|]*\||[^\s()]+)\s+\(\)\s+\(_\s+BitVec\s+\d+\)\s+(#x[0-9a-fA-F]+|#b[01]+|\(_\s+bv\d+\s+\d+\))\s*\)")


def parse_model(text: str) -> dict[str, int]:
    model = {}
    for name, val in _MODEL_RE.findall(text):
        if name.startswith("|"):
            name = name[1:-1]
        if val.startswith("#x"):
            v = int(val[2:], 16)
        elif val.startswith("#b"):
            v = int(val[2:], 2)
        else:
            v = int(val.split()[1][2:])
        model[name] = v
    return model


def default_solver_args(path: str) -> list[str]:
    base = os.path.basename(path)
    if base.startswith("z3"):
        return ["-in", "-smt2"]
    if base.startswith("cvc5") or base.startswith("cvc4"):
        return ["--lang", "smt2", "--produce-models", "-"]
    if base.startswith("boolector") or base.startswith("bitwuzla"):
        return ["--smt2", "-m"]
    return []


class SmtBackend:
    """Shells out to an SMT-LIB2 solver over stdin/stdout."""

    name = "smt"

    def __init__(self, path: str, args: Sequence[str] | None = None, timeout: float = 30.0):
        resolved = shutil.which(path) or path
        self.path = resolved
        self.args = list(args) if args is not None else default_solver_args(resolved)
        self.timeout = timeout

    def check(self, pi: Constraint, extra: Sequence[Expr] = ()) -> SatResult:
        script = export_smtlib2(pi, list(extra))
        try:
            proc = subprocess.run([self.path, *self.args], input=script, capture_output=True,
                                  text=True, timeout=self.timeout)
        except subprocess.TimeoutExpired:
            return SatResult(UNKNOWN, note="timeout")
        except OSError as exc:
            return SatResult(UNKNOWN, note=f"solver failed: {exc}")
        out = proc.stdout.strip()
        first = out.split("\n", 1)[0].strip() if out else ""
        if first == "unsat":
            return SatResult(UNSAT)
        if first == "sat":
            return SatResult(SAT, parse_model(out))
        note = first or proc.stderr.strip()[:200] or f"exit status {proc.returncode}"
        return SatResult(UNKNOWN, note=note)


def find_external_solver() -> str | None:
    for cand in ("z3", "cvc5", "bitwuzla", "boolector"):
        p = shutil.which(cand)
        if p:
            return p
    return None


# -- facade ----------------------------------------------------------------

@dataclass
class SolverStats:
    queries: int = 0
    cache_hits: int = 0
    unknowns: int = 0
    budget_exceeded: int = 0
    time: float = 0.0


class Solver:
    """Query front end shared by the engine and the cache model.

    Adds independence slicing for incremental queries, a result cache, and
    statistics.  Thread-safe: the cache and counters are lock-protected and
    the backends hold no per-query state.
    """

    def __init__(self, backend=None, cache_size: int = 200_000):
        self.backend = backend or EnumerationBackend()
        self.stats = SolverStats()
        self._cache: dict = {}
        self._cache_size = cache_size
        self._lock = threading.Lock()

    @property
    def kind(self) -> str:
        return self.backend.name

    def check(self, pi: Constraint, extra: Sequence[Expr] = ()) -> SatResult:
        key = (frozenset(pi.terms) | frozenset(extra), tuple(sorted(pi.definitions, key=id)))
        with self._lock:
            hit = self._cache.get(key)
            if hit is not None:
                self.stats.cache_hits += 1
                return hit
        t0 = time.perf_counter()
        try:
            res = self.backend.check(pi, extra)
        except BudgetExceeded as exc:
            with self._lock:
                self.stats.budget_exceeded += 1
            res = SatResult(UNKNOWN, note=str(exc))
        dt = time.perf_counter() - t0
        with self._lock:
            self.stats.queries += 1
            self.stats.time += dt
            if res.status == UNKNOWN:
                self.stats.unknowns += 1
            if len(self._cache) >= self._cache_size:
                self._cache.clear()
            self._cache[key] = res
        return res

    def is_satisfiable(self, pi: Constraint) -> SatResult:
        return self.check(pi)

    def may_be_true(self, pi: Constraint, cond: Expr) -> bool:
        """Whether ``pi & cond`` may hold, assuming ``pi`` alone is satisfiable.

        Only the terms of ``pi`` connected to ``cond`` through shared symbols
        are sent to the backend.  ``unknown`` counts as possible.
        """
        if cond is E.TRUE:
            return True
        if cond is E.FALSE:
            return False
        relevant = slice_for(pi, cond)
        res = self.check(relevant, (cond,))
        return res.status != UNSAT

    def must_be_true(self, pi: Constraint, cond: Expr) -> bool:
        return not self.may_be_true(pi, E.lnot(cond))

    def model_for(self, pi: Constraint, extra: Sequence[Expr] = ()) -> dict[str, int] | None:
        res = self.check(pi, extra)
        return res.model if res.status == SAT else None


def slice_for(pi: Constraint, cond: Expr) -> Constraint:
    """Terms of ``pi`` transitively sharing symbols with ``cond``."""
    if not cond.syms or not pi.terms:
        return Constraint((), pi.definitions)
    want = set(cond.syms)
    pending = list(pi.terms)
    chosen: list[Expr] = []
    changed = True
    while changed:
        changed = False
        rest = []
        for t in pending:
            if t.syms & want:
                chosen.append(t)
                want |= t.syms
                changed = True
            else:
                rest.append(t)
        pending = rest
    return Constraint(chosen, pi.definitions)
