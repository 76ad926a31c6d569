"""Concrete reference interpreter for SpecIR with speculative windows.

This module shares nothing with the symbolic engine except the parsed
program.  Values are plain integers paired with a concrete taint set: a
result is tainted only if it can actually depend on a tainted operand
(``and`` with an untainted zero is clean, ``select`` only inherits from the
arm it picks).

``speculate`` enumerates, for one input, every misprediction schedule: each
branch on the committed path may be mispredicted, and inside a window every
nested branch may go either way, all within one shared instruction budget.
"""
from __future__ import annotations

from dataclasses import dataclass, field
from typing import Iterator, Mapping

from .ir import Imm, Instruction, Program, Reg

_EMPTY = frozenset()


def _m(w: int) -> int:
    return (1 << w) - 1


def _signed(w: int, v: int) -> int:
    return v - (1 << w) if v >> (w - 1) else v


@dataclass(frozen=True)
class Val:
    v: int
    w: int
    t: frozenset = _EMPTY


@dataclass(frozen=True)
class Access:
    instr: int
    kind: str
    addr: int
    secret: bool
    obj: str


@dataclass
class Window:
    """One speculative run: the mispredicted committed-path branch it started at,
    the nested decisions taken, and the accesses it performed."""
    root: int
    root_occurrence: int
    decisions: tuple[tuple[int, bool], ...]
    accesses: list[Access]
    executed: int
    reason: str
    values: dict = field(default_factory=dict)   # instr id -> value loaded


@dataclass
class ConcreteRun:
    accesses: list[Access]
    branches: list[tuple[int, bool]]           # committed (branch id, taken)
    branch_positions: list[int]                # index into accesses when each branch executed
    reason: str
    steps: int
    values: dict = field(default_factory=dict)


class _Exception(Exception):
    pass


class _Image:
    """Initial memory, computed per cell on first use: initializer, else input, else 0."""
    __slots__ = ("globals", "inputs")

    def __init__(self, program: Program, inputs: Mapping[str, int]):
        self.globals = {g.name: g for g in program.globals}
        self.inputs = inputs

    def cell(self, name: str, i: int) -> Val:
        g = self.globals[name]
        if g.init is not None:
            v = g.init[i] if i < len(g.init) else 0
        else:
            v = self.inputs.get(f"{name}[{i}]", 0)
        return Val(v & _m(g.width), g.width)


class _Memory:
    """Copy-on-write memory: the shared initial image plus this run's writes."""
    __slots__ = ("image", "writes")

    def __init__(self, image, writes):
        self.image = image
        self.writes = writes

    def read(self, name: str, i: int) -> Val:
        v = self.writes.get((name, i))
        return self.image.cell(name, i) if v is None else v

    def write(self, name: str, i: int, v: Val):
        self.writes[(name, i)] = v


class _Machine:
    def __init__(self, program: Program, inputs: Mapping[str, int]):
        self.p = program
        self.inputs = inputs

    def initial_memory(self) -> "_Memory":
        return _Memory(_Image(self.p, self.inputs), {})

    def operand(self, regs, op) -> Val:
        if isinstance(op, Reg):
            return regs.get(op.name, Val(0, op.width))
        return Val(op.value, op.width)

    @staticmethod
    def binop(op: str, a: Val, b: Val) -> Val:
        w = a.w
        m = _m(w)
        x, y = a.v, b.v
        if op == "add":
            r = (x + y) & m
        elif op == "sub":
            r = (x - y) & m
        elif op == "mul":
            r = (x * y) & m
        elif op == "and":
            r = x & y
        elif op == "or":
            r = x | y
        elif op == "xor":
            r = x ^ y
        elif op == "shl":
            r = (x << y) & m if y < w else 0
        else:
            r = x >> y if y < w else 0
        # clean absorbing operand hides the other one
        t = a.t | b.t
        if (not a.t and ((op in ("and", "mul") and x == 0) or (op == "or" and x == m)
                         or (op in ("shl", "lshr") and x == 0))):
            t = _EMPTY
        if (not b.t and ((op in ("and", "mul") and y == 0) or (op == "or" and y == m)
                         or (op in ("shl", "lshr") and y >= w))):
            t = _EMPTY
        return Val(r, w, t)

    @staticmethod
    def cmp(op: str, a: Val, b: Val) -> Val:
        w = a.w
        x, y = a.v, b.v
        if op == "eq":
            r = x == y
        elif op == "ne":
            r = x != y
        elif op == "ult":
            r = x < y
        elif op == "ule":
            r = x <= y
        elif op == "slt":
            r = _signed(w, x) < _signed(w, y)
        else:
            r = _signed(w, x) <= _signed(w, y)
        return Val(int(r), 1, a.t | b.t)

    def step(self, ins: Instruction, regs, mem, spec: bool, secret_value: int, counter: list,
             accesses: list[Access], ctrl: frozenset, values: dict | None = None):
        """Execute a non-branch instruction; returns the next label or None to fall through,
        ``"ret"`` to stop, raises _Exception on a speculative fault."""
        a = ins.args
        op = ins.op
        if op == "const":
            regs[ins.dest] = Val(a[0].value, ins.width)
        elif op == "symbolic":
            regs[ins.dest] = Val(self.inputs.get(ins.dest, 0) & _m(ins.width), ins.width)
        elif op == "binop":
            regs[ins.dest] = self.binop(ins.sub, self.operand(regs, a[0]), self.operand(regs, a[1]))
        elif op == "cmp":
            regs[ins.dest] = self.cmp(ins.sub, self.operand(regs, a[0]), self.operand(regs, a[1]))
        elif op == "cast":
            x = self.operand(regs, a[0])
            if ins.sub == "sext":
                v = _signed(x.w, x.v) & _m(ins.width)
            else:
                v = x.v & _m(ins.width)
            regs[ins.dest] = Val(v, ins.width, x.t)
        elif op == "select":
            c = self.operand(regs, a[0])
            pick = self.operand(regs, a[1] if c.v else a[2])
            regs[ins.dest] = Val(pick.v, pick.w, c.t | pick.t)
        elif op == "load":
            g = self.p.glob(a[0])
            ix = self.operand(regs, a[1])
            addr = (g.base + ix.v * g.elem_bytes) & _m(64)
            sec = bool(ix.t or ctrl) if spec else False
            accesses.append(Access(ins.id, "load", addr, sec, g.name))
            if ix.v < g.length and not (spec and g.secret):
                cell = mem.read(g.name, ix.v)
                regs[ins.dest] = Val(cell.v, g.width, cell.t | ix.t)
            elif spec:
                counter[0] += 1
                regs[ins.dest] = Val(secret_value & _m(g.width), g.width,
                                     ix.t | {f"secret{counter[0]}"})
            else:
                regs[ins.dest] = Val(0, g.width, ix.t)
            if values is not None:
                values[ins.id] = regs[ins.dest].v
        elif op == "store":
            g = self.p.glob(a[0])
            ix = self.operand(regs, a[1])
            v = self.operand(regs, a[2])
            addr = (g.base + ix.v * g.elem_bytes) & _m(64)
            if not spec:
                accesses.append(Access(ins.id, "store", addr, False, g.name))
            if ix.v < g.length:
                mem.write(g.name, ix.v, v)
            elif spec:
                raise _Exception()
        elif op == "jmp":
            return a[0]
        elif op == "fence":
            if spec:
                return "fence"
        elif op == "assume":
            c = self.operand(regs, a[0])
            if not c.v:
                if spec:
                    raise _Exception()
                return "assume"
        elif op == "ret":
            return "ret"
        return None


def run_concrete(program: Program, inputs: Mapping[str, int], max_steps: int = 100_000) -> ConcreteRun:
    """Architectural (non-speculative) execution."""
    mach = _Machine(program, inputs)
    fn = program.entry_function
    regs = {n: Val(inputs.get(n, 0) & _m(w), w) for n, w in fn.params}
    mem = mach.initial_memory()
    label, idx = fn.entry.label, 0
    accesses: list[Access] = []
    branches: list[tuple[int, bool]] = []
    positions: list[int] = []
    steps = 0
    counter = [0]
    values: dict = {}
    reason = "budget"
    while steps < max_steps:
        ins = program.block(fn.name, label).instrs[idx]
        steps += 1
        if ins.op == "br":
            c = mach.operand(regs, ins.args[0])
            branches.append((ins.id, bool(c.v)))
            positions.append(len(accesses))
            label, idx = (ins.args[1] if c.v else ins.args[2]), 0
            continue
        nxt = mach.step(ins, regs, mem, False, 0, counter, accesses, _EMPTY, values)
        if nxt in ("ret", "assume"):
            reason = nxt
            break
        if nxt is None or nxt == "fence":
            idx += 1
        else:
            label, idx = nxt, 0
    return ConcreteRun(accesses, branches, positions, reason, steps, values)


def speculate(program: Program, inputs: Mapping[str, int], sew: int, *, secret_value: int = 0,
              max_steps: int = 100_000, max_windows: int = 100_000) -> tuple[ConcreteRun, list[Window]]:
    """Committed run plus every speculative window reachable by mispredictions."""
    mach = _Machine(program, inputs)
    fn = program.entry_function
    regs = {n: Val(inputs.get(n, 0) & _m(w), w) for n, w in fn.params}
    mem = mach.initial_memory()
    label, idx = fn.entry.label, 0
    accesses: list[Access] = []
    branches: list[tuple[int, bool]] = []
    positions: list[int] = []
    windows: list[Window] = []
    counter = [0]
    values: dict = {}
    steps = 0
    reason = "budget"
    while steps < max_steps:
        ins = program.block(fn.name, label).instrs[idx]
        steps += 1
        if ins.op == "br":
            c = mach.operand(regs, ins.args[0])
            taken = bool(c.v)
            if sew > 0 and len(windows) < max_windows:
                wrong = ins.args[2] if taken else ins.args[1]
                occ = len(branches)
                for w in _windows(mach, fn.name, wrong, dict(regs), _copy_mem(mem), sew, secret_value):
                    w.root = ins.id
                    w.root_occurrence = occ
                    windows.append(w)
            branches.append((ins.id, taken))
            positions.append(len(accesses))
            label, idx = (ins.args[1] if taken else ins.args[2]), 0
            continue
        nxt = mach.step(ins, regs, mem, False, 0, counter, accesses, _EMPTY, values)
        if nxt in ("ret", "assume"):
            reason = nxt
            break
        if nxt is None or nxt == "fence":
            idx += 1
        else:
            label, idx = nxt, 0
    return ConcreteRun(accesses, branches, positions, reason, steps, values), windows


def _copy_mem(mem: "_Memory") -> "_Memory":
    return _Memory(mem.image, dict(mem.writes))


def _windows(mach: _Machine, fn: str, label: str, regs, mem, sew: int,
             secret_value: int) -> Iterator[Window]:
    # explicit stack of (label, idx, regs, mem, executed, decisions, accesses, ctrl, counter, values)
    stack = [(label, 0, regs, mem, 0, (), [], _EMPTY, [0], {})]
    p = mach.p
    while stack:
        label, idx, regs, mem, done, dec, acc, ctrl, counter, vals = stack.pop()
        reason = "window"
        while True:
            if done >= sew:
                reason = "window"
                break
            ins = p.block(fn, label).instrs[idx]
            done += 1
            if ins.op == "br":
                c = mach.operand(regs, ins.args[0])
                nctrl = ctrl | c.t
                for follow in (bool(c.v), not c.v):
                    tgt = ins.args[1] if follow else ins.args[2]
                    stack.append((tgt, 0, dict(regs), _copy_mem(mem), done,
                                  dec + ((ins.id, follow),), list(acc), nctrl, list(counter),
                                  dict(vals)))
                reason = None
                break
            try:
                nxt = mach.step(ins, regs, mem, True, secret_value, counter, acc, ctrl, vals)
            except _Exception:
                reason = "exception"
                break
            if nxt in ("ret", "fence"):
                reason = nxt
                break
            if nxt is None:
                idx += 1
            else:
                label, idx = nxt, 0
        if reason is not None:
            yield Window(0, 0, dec, acc, done, reason, vals)


def lru_resident(addresses, probe: int, *, sets: int, line: int, ways: int) -> bool:
    """Is the block of ``addresses[probe]`` still cached after the whole sequence?

    A deliberately plain LRU (one list per set, most recent first) kept apart
    from the cache package so it can serve as an independent reference.
    """
    state: dict[int, list[int]] = {}
    for a in addresses:
        b = a // line
        lst = state.setdefault(b % sets, [])
        if b in lst:
            lst.remove(b)
        lst.insert(0, b)
        del lst[ways:]
    b = addresses[probe] // line
    return b in state.get(b % sets, [])


def _window_traces(run: ConcreteRun, windows: list[Window]):
    """(window, secret accesses, committed accesses after its root) per leaking window."""
    for w in windows:
        sec = [a for a in w.accesses if a.secret]
        if sec:
            yield w, sec, run.accesses[run.branch_positions[w.root_occurrence]:]


def ground_truth(program: Program, inputs_list, sew: int, *, secret_values=range(256),
                 caches=()) -> dict:
    """Leak sites found by exhaustive concrete misprediction.

    For every input, every schedule and every value of the speculatively read
    secret, a secret-dependent access site is a leak candidate; for each cache
    geometry ``(sets, line, ways)`` it additionally leaks when its line is
    still resident after the committed accesses that follow the mispredicted
    branch.  Other speculative accesses are not replayed, matching the
    residency model's trace.
    """
    sites: set[int] = set()
    resident: dict = {c: set() for c in caches}
    for inputs in inputs_list:
        for sv in secret_values:
            run, wins = speculate(program, inputs, sew, secret_value=sv)
            for _w, sec, after in _window_traces(run, wins):
                for k, acc in enumerate(sec):
                    sites.add(acc.instr)
                    addrs = [acc.addr] + [a.addr for a in after]
                    for c in caches:
                        if acc.instr in resident[c]:
                            continue
                        sets, line, ways = c
                        if lru_resident(addrs, 0, sets=sets, line=line, ways=ways):
                            resident[c].add(acc.instr)
    return {"ls": sorted(sites), "resident": {c: sorted(v) for c, v in resident.items()}}
