"""Random cache traces for the residency properties."""
from __future__ import annotations

import random

from specleak import expr as E
from specleak.cache import NORM, SPEC, CacheConfig, CacheTrace, TraceEvent
from specleak.solver import Constraint

LINE = 64


def random_trace(rng: random.Random, *, pinned: bool = True, sets=(1, 2), ways=(1, 2, 4, 8)):
    """A Γ-shaped trace: a few normal accesses, 1-3 secret accesses, then a
    normal suffix of mostly distinct lines sized around the cache capacity.

    Symbolic addresses are either pinned to one line by the path condition
    (``pinned``) or range over two to four lines.  Returns (trace, config,
    per-event concrete address or None when unpinned).
    """
    cfg = CacheConfig(rng.choice(sets), LINE, rng.choice(ways))
    pool = cfg.sets * (cfg.ways + 1) + 1
    lines = [rng.randrange(pool) for _ in range(rng.randint(0, 2))]
    kinds = [NORM] * len(lines)
    n_spec = rng.randint(1, 3)
    lines += [rng.randrange(pool) for _ in range(n_spec)]
    kinds += [SPEC] * n_spec
    m = rng.randint(0, cfg.sets * (cfg.ways + 1) + 2)
    suffix = rng.sample(range(pool), min(m, pool))
    for _ in range(rng.randint(0, 3)):                 # a few reloads
        if suffix:
            suffix.insert(rng.randrange(len(suffix) + 1), rng.choice(suffix + lines))
    lines += suffix
    kinds += [NORM] * len(suffix)

    pi = Constraint()
    events, concrete = [], []
    for k, (kind, line) in enumerate(zip(kinds, lines)):
        secret = kind == SPEC
        if rng.random() < 0.4 and not secret:
            sigma = E.const(64, line * LINE)
            concrete.append(line * LINE)
        elif pinned:
            s = E.symbol(f"v{k}", 8, taint=[f"v{k}"] if secret else ())
            sigma = E.binop("mul", E.zext(s, 64), E.const(64, LINE))
            pi = pi.add(E.cmp("eq", s, E.const(8, line)))
            concrete.append(line * LINE)
        else:
            bits = rng.choice((1, 2))
            s = E.symbol(f"v{k}", bits, taint=[f"v{k}"] if secret else ())
            sigma = E.binop("add", E.const(64, line * LINE),
                            E.binop("mul", E.zext(s, 64), E.const(64, LINE)))
            concrete.append(None)
        events.append(TraceEvent(kind, "load", sigma, pi, k))
    # every event carries the final path condition
    events = [TraceEvent(e.kind, e.op, e.sigma, pi, e.instr) for e in events]
    return CacheTrace(events, pi), cfg, concrete


def filtered_addresses(trace: CacheTrace, addrs, i: int, line: int = LINE):
    """What the residency constraint sees for secret access ``i``: every normal
    access, access ``i`` itself and later reloads of its line."""
    out, probe = [], None
    for k, (ev, a) in enumerate(zip(trace.events, addrs)):
        if ev.kind == NORM or k == i or (k > i and a // line == addrs[i] // line):
            if k == i:
                probe = len(out)
            out.append(a)
    return out, probe
