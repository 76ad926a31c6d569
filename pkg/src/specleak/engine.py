"""Symbolic execution of SpecIR: states, memory, instruction semantics, scheduling.

The engine knows about the speculative phase only as far as memory semantics
require (out-of-bound loads become secrets, speculative stores stay out of
the cache trace).  Forking speculative successors at branches is done by
:mod:`specleak.speculator`.
"""
from __future__ import annotations

import heapq
import itertools
import random
from collections import deque
from dataclasses import dataclass, field
from typing import Callable, Iterable, Sequence

from . import expr as E
from .expr import Expr
from .ir import GlobalObject, Imm, Instruction, Program, Reg
from .solver import Constraint, Solver

NORMAL, SPECULATIVE = "normal", "speculative"
LOAD, STORE = "load", "store"

# termination reasons
LIVE = "live"
RET = "ret"
FENCE = "fence"
EXCEPTION = "exception"
WINDOW = "window"
BUDGET = "budget"
INFEASIBLE = "infeasible"


@dataclass(frozen=True, eq=False)
class MemoryEvent:
    instr: int
    pi: Constraint
    sigma: Expr
    kind: str
    phase: str
    secret: bool
    obj: str
    index: int
    taint: frozenset = frozenset()

    @property
    def concrete(self) -> bool:
        return self.sigma.is_const

    def __repr__(self) -> str:
        return (f"<{self.phase[0].upper()} {self.kind} r{self.instr} {self.obj} "
                f"{E.to_text(self.sigma, 30)}{' secret' if self.secret else ''}>")


@dataclass
class Diagnostic:
    kind: str
    instr: int
    phase: str
    message: str


class EventLog:
    """Append-only event sequence shared between forked states until one of them appends."""

    __slots__ = ("_items", "_n")

    def __init__(self, items: list | None = None, n: int = 0):
        self._items = items if items is not None else []
        self._n = n

    def fork(self) -> "EventLog":
        return EventLog(self._items, self._n)

    def append(self, ev) -> None:
        if len(self._items) != self._n:
            self._items = self._items[: self._n]
        self._items.append(ev)
        self._n += 1

    def __len__(self) -> int:
        return self._n

    def __getitem__(self, i):
        if isinstance(i, slice):
            start, stop, step = i.indices(self._n)
            return self._items[start:stop:step]
        if i < 0:
            i += self._n
        if not 0 <= i < self._n:
            raise IndexError(i)
        return self._items[i]

    def __iter__(self):
        return iter(self._items[: self._n])


class Memory:
    """Per-global overlay over initial contents, copy-on-write between forks.

    Concrete-index writes live in a dict; writes through a symbolic index are
    kept as an ordered log.  Every write carries a sequence number so a read
    can tell which writes are newer than the value it found.
    """

    __slots__ = ("cells", "symw", "seq", "_owned")

    def __init__(self):
        self.cells: dict[str, dict[int, tuple[int, Expr]]] = {}
        self.symw: dict[str, tuple[tuple[int, Expr, Expr], ...]] = {}
        self.seq = 0
        self._owned: set[str] = set()

    def fork(self) -> "Memory":
        m = Memory.__new__(Memory)
        m.cells = dict(self.cells)
        m.symw = dict(self.symw)
        m.seq = self.seq
        m._owned = set()
        self._owned = set()
        return m

    def _own(self, g: str) -> dict:
        d = self.cells.get(g)
        if d is None:
            d = {}
            self.cells[g] = d
            self._owned.add(g)
        elif g not in self._owned:
            d = dict(d)
            self.cells[g] = d
            self._owned.add(g)
        return d

    def write(self, g: str, idx: int, v: Expr) -> None:
        self.seq += 1
        self._own(g)[idx] = (self.seq, v)

    def write_symbolic(self, g: str, idx: Expr, v: Expr) -> None:
        self.seq += 1
        self.symw[g] = self.symw.get(g, ()) + ((self.seq, idx, v),)

    def get(self, g: str, idx: int):
        d = self.cells.get(g)
        return None if d is None else d.get(idx)

    def sym_writes(self, g: str):
        return self.symw.get(g, ())

    def concrete_writes(self, g: str):
        d = self.cells.get(g)
        return () if d is None else d.items()


class ExecState:
    __slots__ = ("sid", "pc", "regs", "mem", "pi", "events", "sec", "spec", "steps",
                 "status", "history", "live_gammas", "sym_uses", "ctrl_taint",
                 "spec_events", "partner", "depth_key", "diag")

    def __init__(self):
        self.sid = 0
        self.pc: tuple[str, str, int] = ("", "", 0)
        self.regs: dict[str, Expr] = {}
        self.mem = Memory()
        self.pi = Constraint()
        self.events = EventLog()
        self.sec: frozenset = frozenset()
        self.spec = None                 # SpeculationFrame while speculative
        self.steps = 0
        self.status = LIVE
        self.history = None              # cons list of (instr id, taken, phase)
        self.live_gammas: tuple = ()
        self.sym_uses: dict[str, int] = {}
        self.ctrl_taint: frozenset = frozenset()
        self.spec_events: list = []
        self.partner = None
        self.depth_key = 0
        self.diag: list[Diagnostic] = []

    @property
    def speculative(self) -> bool:
        return self.spec is not None

    @property
    def phase(self) -> str:
        return SPECULATIVE if self.spec is not None else NORMAL

    def fork(self, sid: int) -> "ExecState":
        s = ExecState.__new__(ExecState)
        s.sid = sid
        s.pc = self.pc
        s.regs = dict(self.regs)
        s.mem = self.mem.fork()
        s.pi = self.pi
        s.events = self.events.fork()
        s.sec = self.sec
        s.spec = self.spec.copy() if self.spec is not None else None
        s.steps = self.steps
        s.status = LIVE
        s.history = self.history
        s.live_gammas = self.live_gammas
        s.sym_uses = dict(self.sym_uses)
        s.ctrl_taint = self.ctrl_taint
        s.spec_events = list(self.spec_events)
        s.partner = self.partner
        s.depth_key = self.depth_key
        s.diag = self.diag
        return s

    def decisions(self) -> list[tuple[int, bool, str]]:
        out = []
        h = self.history
        while h is not None:
            out.append(h[0])
            h = h[1]
        out.reverse()
        return out

    def __repr__(self) -> str:
        return f"<State #{self.sid} {self.phase} pc={self.pc} steps={self.steps} {self.status}>"


@dataclass
class EngineConfig:
    max_instructions: int = 100_000


class FindingSink:
    """Receives engine-level observations; the speculator provides a richer one."""

    def read_secret(self, state: ExecState, ins: Instruction, secret: Expr) -> None:
        pass

    def diagnostic(self, state: ExecState, diag: Diagnostic) -> None:
        pass

    def speculative_fault(self, state: ExecState) -> None:
        """A speculative sibling that ends at a faulting store."""


class Engine:
    """Instruction semantics over :class:`ExecState`."""

    def __init__(self, program: Program, solver: Solver | None = None,
                 config: EngineConfig | None = None, sink: FindingSink | None = None):
        self.program = program
        self.solver = solver or Solver()
        self.config = config or EngineConfig()
        self.sink = sink or FindingSink()
        self._sid = itertools.count(1)
        self._fresh = itertools.count(1)
        self._consts: dict[tuple[int, int], Expr] = {}
        self.instructions_executed = 0
        self.origins: dict[str, tuple[int, str]] = {}   # fresh symbol -> (instruction, phase)
        self._current = (-1, NORMAL)
        self.memory_events = 0
        self.symbolic_events = 0

    # -- helpers --------------------------------------------------------
    def new_sid(self) -> int:
        return next(self._sid)

    def fresh_name(self, stem: str) -> str:
        name = f"{stem}~{next(self._fresh)}"
        self.origins[name] = self._current
        return name

    def initial_state(self) -> ExecState:
        st = ExecState()
        st.sid = self.new_sid()
        fn = self.program.entry_function
        st.pc = (fn.name, fn.entry.label, 0)
        for name, w in fn.params:
            st.regs[name] = E.symbol(name, w, user=True)
            st.sym_uses[name] = 1
        return st

    def instruction_at(self, pc) -> Instruction:
        fn, label, idx = pc
        return self.program.block(fn, label).instrs[idx]

    def value(self, st: ExecState, op) -> Expr:
        if isinstance(op, Reg):
            try:
                return st.regs[op.name]
            except KeyError:
                # registers defined on another path only; treat as unconstrained input
                v = E.symbol(f"undef.{op.name}", op.width)
                st.regs[op.name] = v
                return v
        return E.const(op.width, op.value)

    def address(self, g: GlobalObject, idx: Expr) -> Expr:
        idx64 = E.zext(idx, 64)
        off = E.binop("mul", idx64, E.const(64, g.elem_bytes))
        return E.binop("add", E.const(64, g.base), off)

    def in_bounds(self, g: GlobalObject, idx: Expr) -> Expr:
        return E.cmp("ult", E.zext(idx, 64), E.const(64, g.length))

    def bounds(self, st: ExecState, g: GlobalObject, idx: Expr) -> tuple[bool, bool]:
        """(may be in bounds, may be out of bounds) under the state's path condition."""
        if idx.is_const:
            ok = idx.value < g.length
            return ok, not ok
        inb = self.in_bounds(g, idx)
        may_out = self.solver.may_be_true(st.pi, E.lnot(inb))
        if not may_out:
            return True, False
        may_in = self.solver.may_be_true(st.pi, inb)
        return may_in, True

    def initial_cell(self, g: GlobalObject, i: int) -> Expr:
        if g.init is not None:
            return E.const(g.width, g.init[i] if i < len(g.init) else 0)
        return E.symbol(f"{g.name}[{i}]", g.width, user=g.user)

    def advance(self, st: ExecState) -> None:
        fn, label, idx = st.pc
        st.pc = (fn, label, idx + 1)

    def goto(self, st: ExecState, label: str) -> None:
        st.pc = (st.pc[0], label, 0)

    # -- memory ---------------------------------------------------------
    def _record(self, st: ExecState, ins: Instruction, g: GlobalObject, sigma: Expr, kind: str) -> MemoryEvent:
        self.memory_events += 1
        if not sigma.is_const:
            self.symbolic_events += 1
        taint = sigma.taint
        if st.spec is not None:
            taint = taint | st.ctrl_taint
            index = len(st.events) + len(st.spec_events)
        else:
            index = len(st.events)
        secret = bool(taint & st.sec) if st.spec is not None else False
        ev = MemoryEvent(ins.id, st.pi, sigma, kind, st.phase, secret, g.name, index, taint)
        if st.spec is not None:
            st.spec_events.append(ev)
        else:
            st.events.append(ev)
        return ev

    def load(self, st: ExecState, ins: Instruction, g: GlobalObject, idx: Expr) -> Expr:
        sigma = self.address(g, idx)
        self._record(st, ins, g, sigma, LOAD)
        speculative = st.spec is not None
        may_in, may_out = self.bounds(st, g, idx)
        if speculative and (may_out or g.secret):
            name = self.fresh_name(f"sec.{g.name}")
            s = E.symbol(name, g.width, taint=idx.taint, secret=True)
            st.sec = st.sec | {name}
            self.sink.read_secret(st, ins, s)
            return s
        if may_out:
            d = Diagnostic("oob-load", ins.id, st.phase,
                           f"{ins.where}: {g.name}[{E.to_text(idx, 30)}] may be out of bounds")
            st.diag = st.diag + [d]
            self.sink.diagnostic(st, d)
            if not may_in:
                return E.symbol(self.fresh_name(f"oob.{g.name}"), g.width, taint=idx.taint)
            return E.symbol(self.fresh_name(f"rd.{g.name}"), g.width,
                            taint=idx.taint | self._object_taint(st, g), user=idx.user)
        if idx.is_const:
            return self._read_cell(st, g, idx.value)
        return self._read_symbolic(st, g, idx)

    def _object_taint(self, st: ExecState, g: GlobalObject) -> frozenset:
        t = frozenset()
        for _, v in st.mem.concrete_writes(g.name):
            t |= v[1].taint
        for _, _, v in st.mem.sym_writes(g.name):
            t |= v.taint
        return t

    def _read_cell(self, st: ExecState, g: GlobalObject, i: int) -> Expr:
        hit = st.mem.get(g.name, i)
        seq = hit[0] if hit else 0
        if hit is None:
            base = self.initial_cell(g, i)
            if not base.is_const:
                # pin the fresh cell symbol so later reads see the same value
                st.mem.write(g.name, i, base)
                seq = st.mem.seq
        else:
            base = hit[1]
        maybes = []
        idx_c = E.const(64, i)
        for wseq, widx, wv in st.mem.sym_writes(g.name):
            if wseq > seq and self.solver.may_be_true(st.pi, E.cmp("eq", E.zext(widx, 64), idx_c)):
                maybes.append(wv)
        if not maybes:
            return base
        taint = base.taint.union(*(v.taint for v in maybes))
        user = base.user or any(v.user for v in maybes)
        return E.symbol(self.fresh_name(f"rd.{g.name}"), g.width, taint=taint, user=user)

    def _read_symbolic(self, st: ExecState, g: GlobalObject, idx: Expr) -> Expr:
        taint = set(idx.taint)
        user = idx.user or g.user
        idx64 = E.zext(idx, 64)
        for i, (_, v) in st.mem.concrete_writes(g.name):
            if v.taint or v.user:
                if self.solver.may_be_true(st.pi, E.cmp("eq", idx64, E.const(64, i))):
                    taint |= v.taint
                    user = user or v.user
        for _, widx, v in st.mem.sym_writes(g.name):
            if v.taint or v.user:
                if self.solver.may_be_true(st.pi, E.cmp("eq", idx64, E.zext(widx, 64))):
                    taint |= v.taint
                    user = user or v.user
        return E.symbol(self.fresh_name(f"rd.{g.name}"), g.width, taint=taint, user=user)

    def store(self, st: ExecState, ins: Instruction, g: GlobalObject, idx: Expr, v: Expr) -> bool:
        """Returns False when the store raises (speculative, definitely out of bounds)."""
        sigma = self.address(g, idx)
        if st.spec is None:
            self._record(st, ins, g, sigma, STORE)
        may_in, may_out = self.bounds(st, g, idx)
        if may_out:
            d = Diagnostic("oob-store", ins.id, st.phase,
                           f"{ins.where}: store {g.name}[{E.to_text(idx, 30)}] may be out of bounds")
            st.diag = st.diag + [d]
            self.sink.diagnostic(st, d)
            if not may_in:
                return st.spec is None
            if st.spec is not None:
                # split: the faulting case ends here, the survivor is in bounds
                inb = self.in_bounds(g, idx)
                ex = st.fork(self.new_sid())
                ex.pi = st.pi.add(E.lnot(inb))
                ex.status = EXCEPTION
                self.sink.speculative_fault(ex)
                st.pi = st.pi.add(inb)
        if idx.is_const:
            st.mem.write(g.name, idx.value, v)
        else:
            st.mem.write_symbolic(g.name, idx, v)
        return True

    # -- stepping -------------------------------------------------------
    def execute(self, st: ExecState) -> Instruction | None:
        """Execute the instruction at ``st.pc`` in place unless it is a ``br``.

        Returns the ``br`` instruction (untouched) so the caller can fork, or
        None after executing anything else.  Sets ``st.status`` when the path
        ends.
        """
        ins = self.instruction_at(st.pc)
        if ins.op == "br":
            return ins
        self.instructions_executed += 1
        self._current = (ins.id, st.phase)
        st.steps += 1
        if st.spec is not None:
            st.spec.count += 1
        op = ins.op
        a = ins.args
        if op == "const":
            st.regs[ins.dest] = E.const(ins.width, a[0].value)
        elif op == "symbolic":
            n = st.sym_uses.get(ins.dest, 0)
            if st.spec is not None:
                name = self.fresh_name(ins.dest)
            else:
                name = ins.dest if n == 0 else f"{ins.dest}#{n}"
                st.sym_uses[ins.dest] = n + 1
            st.regs[ins.dest] = E.symbol(name, ins.width, user=ins.sub == "user")
        elif op == "binop":
            st.regs[ins.dest] = E.binop(ins.sub, self.value(st, a[0]), self.value(st, a[1]))
        elif op == "cmp":
            st.regs[ins.dest] = E.cmp(ins.sub, self.value(st, a[0]), self.value(st, a[1]))
        elif op == "cast":
            v = self.value(st, a[0])
            st.regs[ins.dest] = getattr(E, ins.sub)(v, ins.width)
        elif op == "select":
            st.regs[ins.dest] = E.select(self.value(st, a[0]), self.value(st, a[1]), self.value(st, a[2]))
        elif op == "load":
            g = self.program.glob(a[0])
            st.regs[ins.dest] = self.load(st, ins, g, self.value(st, a[1]))
        elif op == "store":
            g = self.program.glob(a[0])
            if not self.store(st, ins, g, self.value(st, a[1]), self.value(st, a[2])):
                st.status = EXCEPTION
                return None
        elif op == "jmp":
            self.goto(st, a[0])
            return self._check_budget(st)
        elif op == "fence":
            if st.spec is not None:
                st.status = FENCE
                return None
        elif op == "assume":
            c = self.value(st, a[0])
            if c is E.FALSE or not self.solver.may_be_true(st.pi, c):
                st.status = EXCEPTION if st.spec is not None else INFEASIBLE
                return None
            st.pi = st.pi.add(c)
        elif op == "ret":
            st.status = RET
            return None
        else:  # pragma: no cover
            raise AssertionError(f"bad opcode {op}")
        self.advance(st)
        return self._check_budget(st)

    def _check_budget(self, st: ExecState):
        if st.steps >= self.config.max_instructions and st.status == LIVE:
            st.status = BUDGET
        return None

    def branch_condition(self, st: ExecState, ins: Instruction) -> Expr:
        return self.value(st, ins.args[0])

    def feasible_legs(self, st: ExecState, cond: Expr) -> tuple[bool, bool]:
        if cond.is_const:
            return bool(cond.value), not cond.value
        t = self.solver.may_be_true(st.pi, cond)
        f = self.solver.may_be_true(st.pi, E.lnot(cond))
        return t, f

    def take_branch(self, st: ExecState, ins: Instruction, cond: Expr, taken: bool,
                    follow: bool | None = None) -> ExecState:
        """A successor whose π records ``cond == taken`` and which continues on ``follow``.

        ``follow`` defaults to ``taken``; the speculator passes the opposite
        leg to model a misprediction.
        """
        follow = taken if follow is None else follow
        s = st.fork(self.new_sid())
        s.pi = st.pi.add(cond if taken else E.lnot(cond))
        s.steps += 1
        s.depth_key += 1
        self.instructions_executed += 1
        s.history = ((ins.id, follow, s.phase if follow == taken else SPECULATIVE), st.history)
        self.goto(s, ins.args[1] if follow else ins.args[2])
        self._check_budget(s)
        return s

    def step(self, st: ExecState) -> list[ExecState]:
        """Classic one-instruction step: a ``br`` forks into feasible normal legs."""
        ins = self.execute(st)
        if ins is None:
            return [st] if st.status == LIVE else []
        cond = self.branch_condition(st, ins)
        t, f = self.feasible_legs(st, cond)
        out = []
        if t:
            out.append(self.take_branch(st, ins, cond, True))
        if f:
            out.append(self.take_branch(st, ins, cond, False))
        return [s for s in out if s.status == LIVE]


# -- scheduling -------------------------------------------------------------

class Worklist:
    """State selection: speculative states first, then DFS / BFS / seeded random."""

    def __init__(self, strategy: str = "dfs", seed: int = 0):
        if strategy not in ("dfs", "bfs", "random"):
            raise ValueError(f"unknown search strategy {strategy!r}")
        self.strategy = strategy
        self.rng = random.Random(seed)
        self._spec: list[ExecState] = []
        self._heap: list = []
        self._fifo: deque = deque()
        self._pool: list[ExecState] = []

    def __len__(self) -> int:
        return len(self._spec) + self.normal_count

    @property
    def normal_count(self) -> int:
        return len(self._heap) + len(self._fifo) + len(self._pool)

    def add(self, st: ExecState) -> None:
        if st.spec is not None:
            self._spec.append(st)
        elif self.strategy == "dfs":
            heapq.heappush(self._heap, (-st.depth_key, -st.sid, st))
        elif self.strategy == "bfs":
            self._fifo.append(st)
        else:
            self._pool.append(st)

    def extend(self, states: Iterable[ExecState]) -> None:
        for s in states:
            self.add(s)

    def pop(self) -> ExecState:
        if self._spec:
            return self._spec.pop()
        if self._heap:
            return heapq.heappop(self._heap)[2]
        if self._fifo:
            return self._fifo.popleft()
        if self._pool:
            i = self.rng.randrange(len(self._pool))
            self._pool[i], self._pool[-1] = self._pool[-1], self._pool[i]
            return self._pool.pop()
        raise IndexError("pop from empty worklist")

    def drain(self) -> list[ExecState]:
        out = list(self._spec) + [h[2] for h in self._heap] + list(self._fifo) + list(self._pool)
        self._spec.clear()
        self._heap.clear()
        self._fifo.clear()
        self._pool.clear()
        return out


def select_next(worklist: Worklist) -> ExecState:
    return worklist.pop()
