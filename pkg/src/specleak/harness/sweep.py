"""Eviction sweep: how many post-gadget accesses it takes to flush the leaked line.

Template layout (documented because the crossover depends on it):

* ``array2`` holds 256 bytes pinned at address 0, so the leaked byte ``y``
  lands in one of the lines 0..3, i.e. cache sets 0..3.
* after the gadget a loop reads ``sweep[i * LINE]`` for ``i < N``; ``sweep``
  is pinned at 0x100000, a multiple of every cache size used here, so the
  loop touches one distinct line per iteration starting at set 0 and walking
  upward.
* every other global is packed from the default origin (set 0 and 1 for a
  32 KB cache) and only read before the bounds check.

With an LRU cache of ``sets`` sets and ``ways`` ways, the leaked line is
flushed once each of the sets 0..3 has seen ``ways`` newer lines, which
happens at ``N = (ways - 1) * sets + 4``.
"""
from __future__ import annotations

import csv
import io
import logging
import time
from dataclasses import dataclass, field

from ..cache import ACCESS, EVICTED, INFEASIBLE, TRACE, CacheConfig
from ..ir import Program, parse_program
from ..oracle import lru_resident, run_concrete
from ..speculator import Explorer
from .analyze import residency_by_site
from .config import AnalysisConfig

log = logging.getLogger(__name__)

ARRAY2_BASE = 0x0
SWEEP_BASE = 0x100000
SWEEP_BYTES = 65536

TEMPLATE = """\
# bounds-check gadget followed by an N-iteration eviction loop
global array1_size[1]:32 = [16]
global array1[16]:8 = [1, 2, 3, 4, 5, 6, 7, 8, 9, 10, 11, 12, 13, 14, 15, 16]
global array2[256]:8 @base {array2:#x}
global sweep[{sweep_bytes}]:8 @base {sweep:#x}
fn victim(idx:16) {{
entry:
  size = load array1_size[0]
  iw = zext 32 idx
  ok = ult iw size
  br ok, leak, flush
leak:
  y = load array1[idx]
  v = load array2[y]
  jmp flush
flush:
  i = const 32 0
  jmp head
head:
  more = ult i {n}
  br more, body, done
body:
  off = mul i {line}
  w = load sweep[off]
  i = add i 1
  jmp head
done:
  ret
}}
"""


def sweep_text(n: int, line: int = 64) -> str:
    if n < 0:
        raise ValueError("N must be >= 0")
    if n * line >= SWEEP_BYTES:
        raise ValueError(f"N={n} does not fit the sweep array")
    return TEMPLATE.format(n=n, line=line, array2=ARRAY2_BASE, sweep=SWEEP_BASE,
                           sweep_bytes=SWEEP_BYTES)


def sweep_program(n: int, line: int = 64) -> Program:
    return parse_program(sweep_text(n, line))


def expected_crossover(cache: CacheConfig, leaked_lines: int = 4) -> int:
    return (cache.ways - 1) * cache.sets + leaked_lines


@dataclass
class SweepRow:
    n: int
    ways: int
    verdict: str          # leak | leakage-free
    oracle: str | None    # same vocabulary, None when the oracle is off


@dataclass
class SweepResult:
    caches: dict[int, CacheConfig]
    rows: list[SweepRow] = field(default_factory=list)
    seconds: float = 0.0

    def crossover(self, ways: int, *, oracle: bool = False) -> int | None:
        """Smallest N from which every larger N in the sweep is leakage free."""
        rows = sorted((r for r in self.rows if r.ways == ways), key=lambda r: r.n)
        best = None
        for r in reversed(rows):
            v = r.oracle if oracle else r.verdict
            if v != "leakage-free":
                break
            best = r.n
        return best

    def disagreements(self) -> list[SweepRow]:
        return [r for r in self.rows if r.oracle is not None and r.oracle != r.verdict]

    def to_csv(self) -> str:
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(["n", "ways", "verdict", "oracle"])
        for r in self.rows:
            w.writerow([r.n, r.ways, r.verdict, r.oracle or ""])
        return buf.getvalue()

    def layout(self) -> str:
        lines = [f"array2 @ {ARRAY2_BASE:#x} (256 bytes), sweep @ {SWEEP_BASE:#x}, "
                 "one line per iteration"]
        for ways, c in sorted(self.caches.items()):
            lines.append(f"{c.describe()}: sets={c.sets} leaked lines in sets 0..3, "
                         f"formula (ways-1)*sets+4 = {expected_crossover(c)}")
        return "\n".join(lines)

    def summary(self) -> str:
        out = [self.layout(), "ways  crossover  oracle  formula"]
        for ways, c in sorted(self.caches.items()):
            out.append(f"{ways:>4}  {self.crossover(ways)!s:>9}  "
                       f"{self.crossover(ways, oracle=True)!s:>6}  {expected_crossover(c):>7}")
        return "\n".join(out)


def oracle_verdicts(program: Program, caches: dict[int, CacheConfig],
                    attacker: str = ACCESS) -> dict[int, str]:
    """Concrete check over all 256 values of the leaked byte, per associativity.

    The mispredicted run uses an out-of-bounds ``idx``; what the attacker
    sees is the leaked line followed by the committed accesses after the
    bounds check, probed at the end (access) or after every access (trace).
    """
    run = run_concrete(program, {"idx": 16})
    after = [a.addr for a in run.accesses[run.branch_positions[0]:]]
    out = {}
    for w, cache in caches.items():
        lb = cache.line_bytes
        blocks = sorted({(ARRAY2_BASE + y) // lb for y in range(256)})
        ends = range(1, len(after) + 2) if attacker == TRACE else [len(after) + 1]
        leak = any(lru_resident(([blk * lb] + after)[:k], 0, sets=cache.sets, line=lb,
                                ways=cache.ways)
                   for blk in blocks for k in ends)
        out[w] = "leak" if leak else "leakage-free"
    return out


def sweep_eviction(ways_list=(2, 4, 8), n_range=range(1, 513), *, size: int = 32768,
                   line: int = 64, sew: int = 50, attacker: str = ACCESS,
                   oracle: bool = True) -> SweepResult:
    """Per-N residency verdicts for each associativity; one exploration per N."""
    caches = {w: CacheConfig.from_size(size, line, w) for w in ways_list}
    result = SweepResult(caches)
    t0 = time.perf_counter()
    for n in n_range:
        program = sweep_program(n, line)
        base = AnalysisConfig(sew=sew, attacker=attacker)
        solver = base.make_solver()
        explored = Explorer(program, base.explorer_config(), solver).run()
        truth = oracle_verdicts(program, caches, attacker) if oracle else {}
        for w, cache in caches.items():
            cfg = AnalysisConfig(sew=sew, cache=cache, attacker=attacker)
            sites = residency_by_site(explored, cfg, solver)
            leak = any(s["status"] not in (EVICTED, INFEASIBLE) for s in sites.values())
            verdict = "leak" if leak else "leakage-free"
            result.rows.append(SweepRow(n, w, verdict, truth.get(w)))
        log.debug("sweep N=%d done", n)
    result.seconds = time.perf_counter() - t0
    return result
