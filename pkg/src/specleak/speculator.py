"""Speculative exploration on top of the engine and gadget classification.

Every conditional branch reached on a normal path yields up to four
successors: the two feasible legs, plus for each leg a speculative state that
keeps the leg's path condition but executes the *other* target.  Speculative
states run for at most ``sew`` instructions (counted from the root branch by
default), stop early on ``fence``, ``ret`` or an exception, and record the
secret-dependent memory events they perform.  A non-empty record is attached
to the normal state that shares its path condition (its partner), which then
appends every later normal-path memory event until it terminates.
"""
from __future__ import annotations

import logging
import threading
import time
from dataclasses import dataclass, field
from typing import Iterable

from . import expr as E
from .engine import (BUDGET, EXCEPTION, FENCE, INFEASIBLE, LIVE, NORMAL, RET, SPECULATIVE,
                     WINDOW, Diagnostic, Engine, EngineConfig, ExecState, FindingSink,
                     MemoryEvent, Worklist)
from .ir import Instruction, Program
from .solver import Constraint, Solver

log = logging.getLogger(__name__)

VB, UC_VB, RS, LS = "VB", "UC_VB", "RS", "LS"
KINDS = (VB, UC_VB, RS, LS)


@dataclass
class SpeculationFrame:
    root: int                 # instruction id of the mispredicted root branch
    root_state: int           # sid of the normal state the root was expanded from
    count: int = 0            # instructions executed inside the window
    nesting: int = 0
    mispredicted: tuple[int, bool] = (0, False)   # innermost mispredicted branch, user-controlled?
    partner: object = None

    def copy(self) -> "SpeculationFrame":
        return SpeculationFrame(self.root, self.root_state, self.count, self.nesting,
                                self.mispredicted, self.partner)


@dataclass(frozen=True, eq=False)
class Gamma:
    """One memory-access sequence rooted at a mispredicted branch.

    ``spec`` holds the secret-dependent speculative events, ``normal`` the
    partner path's later events; ``pi`` is the conjunction of both terminal
    path conditions.
    """
    root: int
    spec: tuple[MemoryEvent, ...]
    normal: tuple[MemoryEvent, ...]
    pi: Constraint
    spec_pi: Constraint
    spec_schedule: tuple = ()      # (branch id, followed, phase) up to the speculative end
    normal_schedule: tuple = ()    # same for the partner path

    @property
    def events(self) -> tuple[MemoryEvent, ...]:
        return self.spec + self.normal

    def __len__(self) -> int:
        return len(self.spec) + len(self.normal)


@dataclass
class LiveGamma:
    root: int
    spec: tuple[MemoryEvent, ...]
    spec_pi: Constraint
    start: int
    schedule: tuple = ()


@dataclass
class Finding:
    kind: str
    instr: int
    location: tuple[str, str, int]
    branch: int | None = None
    witness: dict | None = None
    schedule: list | None = None
    secrets: frozenset = frozenset()

    def key(self):
        return (self.kind, self.location)


@dataclass
class ExplorerConfig:
    sew: int = 50
    nested_window: str = "shared"       # shared | fresh
    search: str = "dfs"
    seed: int = 0
    max_paths: int = 100_000
    max_instructions: int = 100_000
    timeout: float | None = None
    gamma_cap: int = 4096

    def __post_init__(self):
        if self.sew < 0:
            raise ValueError("sew must be >= 0")
        if self.nested_window not in ("shared", "fresh"):
            raise ValueError("nested_window must be 'shared' or 'fresh'")


@dataclass
class ExplorationStats:
    normal_paths: int = 0
    speculative_paths: int = 0
    speculative_instructions: int = 0
    pruned_speculative: int = 0
    instructions: int = 0
    gammas: int = 0
    gamma_overflow: dict = field(default_factory=dict)
    budget_exhausted: str | None = None
    memory_events: int = 0
    symbolic_events: int = 0
    terminations: dict = field(default_factory=dict)
    wall_time: float = 0.0

    @property
    def avg_speculative_instructions(self) -> float:
        if not self.speculative_paths:
            return 0.0
        return self.speculative_instructions / self.speculative_paths


class _Sink(FindingSink):
    def __init__(self, explorer: "Explorer"):
        self.x = explorer

    def read_secret(self, state, ins, secret):
        self.x._on_rs(state, ins, secret)

    def diagnostic(self, state, diag):
        self.x.diagnostics.append(diag)

    def speculative_fault(self, state):
        self.x._finish_speculative(state)


class Omega:
    """Ω: branch id -> Γ sequences, append-only and lock-protected."""

    def __init__(self, cap: int = 4096):
        self.cap = cap
        self._by_root: dict[int, list[Gamma]] = {}
        self._keys: dict[int, set] = {}
        self.overflow: dict[int, int] = {}
        self._lock = threading.Lock()

    def add(self, g: Gamma) -> bool:
        key = (tuple((e.instr, e.sigma) for e in g.events), g.pi)
        with self._lock:
            keys = self._keys.setdefault(g.root, set())
            if key in keys:
                return False
            lst = self._by_root.setdefault(g.root, [])
            if len(lst) >= self.cap:
                self.overflow[g.root] = self.overflow.get(g.root, 0) + 1
                return False
            keys.add(key)
            lst.append(g)
            return True

    def __getitem__(self, root: int) -> list[Gamma]:
        return self._by_root.get(root, [])

    def roots(self) -> list[int]:
        return sorted(self._by_root)

    def all(self) -> list[Gamma]:
        return [g for r in self.roots() for g in self._by_root[r]]

    def __len__(self) -> int:
        return sum(len(v) for v in self._by_root.values())


class Explorer:
    """Speculative symbolic exploration of one program."""

    def __init__(self, program: Program, config: ExplorerConfig | None = None,
                 solver: Solver | None = None):
        self.program = program
        self.config = config or ExplorerConfig()
        self.solver = solver or Solver()
        self.engine = Engine(program, self.solver,
                             EngineConfig(max_instructions=self.config.max_instructions),
                             sink=_Sink(self))
        self.omega = Omega(self.config.gamma_cap)
        self.stats = ExplorationStats()
        self.diagnostics: list[Diagnostic] = []
        self.rs_sites: dict[int, dict] = {}       # instr -> info
        self.ls_sites: dict[int, dict] = {}
        self.branch_user: dict[int, bool] = {}
        self.vb_sites: dict[int, dict] = {}
        self.spec_locations: set[int] = set()
        self._deadline = None

    # -- findings bookkeeping -------------------------------------------
    def _on_rs(self, st: ExecState, ins: Instruction, secret) -> None:
        fr = st.spec
        br, user = fr.mispredicted
        info = self.rs_sites.setdefault(ins.id, {"branches": set(), "pi": st.pi,
                                                 "history": st.decisions(), "secrets": set()})
        info["branches"].add(br)
        info["secrets"].add(secret.name)
        vb = self.vb_sites.setdefault(br, {"user": False, "pi": st.pi, "history": st.decisions()})
        vb["user"] = vb["user"] or user

    def _on_ls(self, st: ExecState, ev: MemoryEvent) -> None:
        info = self.ls_sites.setdefault(ev.instr, {"branches": set(), "pi": ev.pi,
                                                   "history": st.decisions(), "secrets": set()})
        info["branches"].add(st.spec.mispredicted[0])
        info["secrets"] |= set(ev.taint & st.sec)

    # -- Alg. 1 ------------------------------------------------------------
    def expand_branch(self, st: ExecState, ins: Instruction):
        """Fork a normal state at ``ins``: (normal successors, speculative successors)."""
        eng = self.engine
        cond = eng.branch_condition(st, ins)
        t, f = eng.feasible_legs(st, cond)
        user = cond.user
        normal, spec = [], []
        for taken, ok in ((True, t), (False, f)):
            if not ok:
                continue
            n = eng.take_branch(st, ins, cond, taken)
            normal.append(n)
            if self.config.sew <= 0:
                continue
            s = st.fork(eng.new_sid())
            s.pi = n.pi
            s.history = ((ins.id, not taken, SPECULATIVE), st.history)
            s.steps = n.steps
            s.depth_key = n.depth_key
            s.live_gammas = ()
            s.spec_events = []
            s.ctrl_taint = frozenset()
            s.spec = SpeculationFrame(ins.id, st.sid, 0, 0, (ins.id, user), partner=n)
            eng.goto(s, ins.args[1] if not taken else ins.args[2])
            spec.append(s)
        return normal, spec

    def _expand_nested(self, st: ExecState, ins: Instruction) -> list[ExecState]:
        """Four-way expansion of a branch met inside a speculative window."""
        eng = self.engine
        cond = eng.branch_condition(st, ins)
        t, f = eng.feasible_legs(st, cond)
        st.spec.count += 1
        eng.instructions_executed += 1
        ctrl = cond.taint & st.sec
        out = []
        for taken, ok in ((True, t), (False, f)):
            if not ok:
                continue
            for follow in (taken, not taken):
                c = st.fork(eng.new_sid())
                c.pi = st.pi.add(cond if taken else E.lnot(cond))
                c.steps += 1
                c.depth_key += 1
                c.history = ((ins.id, follow, SPECULATIVE), st.history)
                c.spec.nesting += 1
                if ctrl:
                    c.ctrl_taint = c.ctrl_taint | ctrl
                if follow != taken:
                    c.spec.mispredicted = (ins.id, cond.user)
                    if self.config.nested_window == "fresh":
                        c.spec.count = 0
                eng.goto(c, ins.args[1] if follow else ins.args[2])
                out.append(c)
        return out

    # -- Alg. 2 ------------------------------------------------------------
    def run_speculative(self, state: ExecState) -> list[tuple[tuple[MemoryEvent, ...], Constraint]]:
        """Run a speculative state and every nested descendant to termination.

        Returns the non-empty secret-dependent event sequences (with their
        terminal path conditions); each one has also been attached to the
        partner normal state.
        """
        sew = self.config.sew
        eng = self.engine
        stack = [state]
        done = []
        while stack:
            st = stack.pop()
            while True:
                if self._out_of_time():
                    st.status = BUDGET
                    break
                if st.spec.count >= sew:
                    st.status = WINDOW
                    break
                ins = eng.execute(st)
                if ins is not None:
                    if st.steps >= self.config.max_instructions:
                        st.status = BUDGET
                        break
                    stack.extend(reversed(self._expand_nested(st, ins)))
                    st = None
                    break
                if st.status != LIVE:
                    if st.status == BUDGET and st.spec.count < sew:
                        pass
                    break
            if st is None:
                continue
            g = self._finish_speculative(st)
            if g is not None:
                done.append(g)
        return done

    def _finish_speculative(self, st: ExecState):
        fr = st.spec
        self.stats.speculative_paths += 1
        self.stats.speculative_instructions += fr.count
        self.stats.terminations[st.status] = self.stats.terminations.get(st.status, 0) + 1
        for ev in st.spec_events:
            self.spec_locations.add(ev.instr)
        gamma = tuple(ev for ev in st.spec_events if ev.secret)
        if not gamma:
            self.stats.pruned_speculative += 1
            return None
        for ev in gamma:
            self._on_ls(st, ev)
        partner = fr.partner
        live = LiveGamma(fr.root, gamma, st.pi, len(partner.events), tuple(st.decisions()))
        key = (tuple((e.instr, e.sigma) for e in gamma), st.pi)
        if all((tuple((e.instr, e.sigma) for e in lg.spec), lg.spec_pi) != key or lg.root != fr.root
               for lg in partner.live_gammas):
            partner.live_gammas = partner.live_gammas + (live,)
        return gamma, st.pi

    def append_normal_event(self, event: MemoryEvent, live_gammas: Iterable[LiveGamma]) -> None:
        """Normal events are appended lazily: every live Γ records where the
        partner's event log stood when it was attached, and takes the suffix
        when the path ends.  This method is the eager equivalent for callers
        that keep explicit sequences."""
        if event.phase != NORMAL:
            raise ValueError("only normal-phase events extend a live gamma")
        for lg in live_gammas:
            lst = getattr(lg, "extra", None)
            if lst is None:
                lg.extra = lst = []
            lst.append(event)

    def _finish_normal(self, st: ExecState) -> None:
        self.stats.normal_paths += 1
        self.stats.terminations[st.status] = self.stats.terminations.get(st.status, 0) + 1
        for lg in st.live_gammas:
            normal = tuple(st.events[lg.start:])
            g = Gamma(lg.root, lg.spec, normal, lg.spec_pi & st.pi, lg.spec_pi,
                      lg.schedule, tuple(st.decisions()))
            if self.omega.add(g):
                self.stats.gammas += 1

    def _out_of_time(self) -> bool:
        return self._deadline is not None and time.monotonic() > self._deadline

    def run(self) -> "ExplorationResult":
        t0 = time.perf_counter()
        if self.config.timeout:
            self._deadline = time.monotonic() + self.config.timeout
        wl = Worklist(self.config.search, self.config.seed)
        wl.add(self.engine.initial_state())
        eng = self.engine
        while len(wl):
            if self.stats.normal_paths >= self.config.max_paths:
                self.stats.budget_exhausted = "max-paths"
                break
            if self._out_of_time():
                self.stats.budget_exhausted = "timeout"
                break
            st = wl.pop()
            if st.spec is not None:
                self.run_speculative(st)
                continue
            while True:
                ins = eng.execute(st)
                if ins is not None:
                    normal, spec = self.expand_branch(st, ins)
                    for s in spec:
                        wl.add(s)
                    for n in normal:
                        if n.status == LIVE:
                            wl.add(n)
                        else:
                            self._finish_normal(n)
                    break
                if st.status != LIVE:
                    self._finish_normal(st)
                    break
        # flush whatever is left when a budget stopped the run
        for st in wl.drain():
            st.status = BUDGET
            if st.spec is not None:
                self._finish_speculative(st)
            else:
                self._finish_normal(st)
        self.stats.instructions = eng.instructions_executed
        self.stats.memory_events = eng.memory_events
        self.stats.symbolic_events = eng.symbolic_events
        self.stats.gamma_overflow = dict(self.omega.overflow)
        self.stats.wall_time = time.perf_counter() - t0
        return ExplorationResult(self.program, self.config, self.omega, self.stats,
                                 classify(self), list(self.diagnostics), dict(self.engine.origins),
                                 frozenset(self.spec_locations))


@dataclass
class ExplorationResult:
    program: Program
    config: ExplorerConfig
    omega: Omega
    stats: ExplorationStats
    findings: list[Finding]
    diagnostics: list[Diagnostic]
    origins: dict = field(default_factory=dict)
    spec_locations: frozenset = frozenset()     # instr ids of speculative memory events

    def count(self, kind: str) -> int:
        return sum(1 for f in self.findings if f.kind == kind)

    def of_kind(self, kind: str) -> list[Finding]:
        return [f for f in self.findings if f.kind == kind]


def _witness(solver: Solver, pi: Constraint):
    try:
        res = solver.check(pi)
    except Exception:  # pragma: no cover - witness is best effort
        return None
    return res.model if res.status == "sat" else None


def classify(explorer: Explorer, *, witnesses: bool = True) -> list[Finding]:
    """Deduplicated VB / UC_VB / RS / LS findings of a finished exploration."""
    prog = explorer.program
    solver = explorer.solver
    out: list[Finding] = []

    def loc(iid):
        return prog.instruction(iid).loc

    for br in sorted(explorer.vb_sites):
        info = explorer.vb_sites[br]
        w = _witness(solver, info["pi"]) if witnesses else None
        out.append(Finding(VB, br, loc(br), br, w, info["history"]))
        if info["user"]:
            out.append(Finding(UC_VB, br, loc(br), br, w, info["history"]))
    for iid in sorted(explorer.rs_sites):
        info = explorer.rs_sites[iid]
        out.append(Finding(RS, iid, loc(iid), min(info["branches"]),
                           _witness(solver, info["pi"]) if witnesses else None,
                           info["history"], frozenset(info["secrets"])))
    for iid in sorted(explorer.ls_sites):
        info = explorer.ls_sites[iid]
        out.append(Finding(LS, iid, loc(iid), min(info["branches"]),
                           _witness(solver, info["pi"]) if witnesses else None,
                           info["history"], frozenset(info["secrets"])))
    return out


def explore(program: Program, config: ExplorerConfig | None = None,
            solver: Solver | None = None) -> ExplorationResult:
    return Explorer(program, config, solver).run()
