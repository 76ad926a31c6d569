import itertools
import random
import shutil

import numpy as np
import pytest

from cachegen import LINE, filtered_addresses, random_trace
from specleak import expr as E
from specleak.cache import (ACCESS, EVICTED, MAY_REMAIN, NORM, SPEC, TRACE, CacheConfig,
                            CacheTrace, LRUCache, MayCache, NoSymbolicAccess, TraceEvent,
                            build_gamma_spectre, check_residency, concrete_lru_simulate,
                            format_trace, lru_batch, maycache_filter, parse_trace, set_index,
                            tag)
from specleak.cache.lru import _lru_batch_py
from specleak.cache.maycache import DEFINITELY_EVICTED, POSSIBLY_RESIDENT
from specleak.cache.trace import TraceFormatError
from specleak.oracle import lru_resident
from specleak.solver import Constraint, SmtBackend, Solver, enumerate_assignments, evaluate_vec

L1 = CacheConfig.from_size(32768, 64, 2)


# -- geometry ---------------------------------------------------------------

def test_geometry_from_size():
    assert (L1.sets, L1.B, L1.S) == (256, 6, 8)
    assert CacheConfig.from_size(32768, 64, 8).sets == 64
    assert CacheConfig.parse("128x64x4") == CacheConfig(128, 64, 4)


@pytest.mark.parametrize("bad", [dict(sets=3), dict(line_bytes=48), dict(ways=0), dict(policy="fifo")])
def test_geometry_rejects(bad):
    with pytest.raises(ValueError):
        CacheConfig(**bad)


def test_set_and_tag_of_constant():
    s = set_index(E.const(64, 0x1040), L1)
    t = tag(E.const(64, 0x1040), L1)
    assert s.is_const and s.value == 65
    assert t.is_const and t.value == 0
    assert set_index(E.const(64, 0), L1).value == 0 and tag(E.const(64, 0), L1).value == 0


def test_set_of_symbolic_address():
    y = E.symbol("y", 16, taint=["y"])
    s = set_index(E.zext(y, 64), L1)
    assert not s.is_const
    for v in (0, 63, 64, 0x3fc0, 0xffff):
        assert E.evaluate(s, {"y": v}) == (v >> 6) & 0xff


# -- concrete LRU -------------------------------------------------------------

def test_lru_evicts_least_recent():
    one = CacheConfig(1, 64, 2)
    a, b, c = 0, 64, 128
    assert concrete_lru_simulate([a, b, c], one).contents == {0: (2, 1)}
    res = concrete_lru_simulate([a, b, a, c], one)
    assert res.contents == {0: (2, 0)}
    assert res.resident == [True, False, True, True]


def test_lru_capacity():
    cache = LRUCache(L1)
    for k in range(512):
        hit, ev = cache.access(k * 64)
        assert not hit and ev is None
    assert all(len(s) == 2 for s in cache.sets)
    hit, ev = cache.access(512 * 64)      # set 0 again: its first line goes
    assert (hit, ev) == (False, 0)
    assert cache.access(64)[0]


def test_lru_batch_matches_pure_and_reference():
    rng = np.random.default_rng(3)
    for nsets, ways in [(1, 1), (2, 2), (4, 3), (8, 8)]:
        blocks = rng.integers(0, 4 * nsets * ways, size=(40, 30))
        active = rng.integers(0, 2, size=blocks.shape)
        probe = rng.integers(-1, 4 * nsets * ways, size=(40, 3))
        fast = lru_batch(blocks, active, nsets, ways, probe)
        pure = lru_batch(blocks, active, nsets, ways, probe, pure=True)
        assert np.array_equal(fast, pure)
        cfg = CacheConfig(nsets, 64, ways)
        for r in range(blocks.shape[0]):
            cache = LRUCache(cfg)
            for b, a in zip(blocks[r], active[r]):
                if a:
                    cache.access_block(int(b))
            want = [int(p >= 0 and cache.contains_block(int(p))) for p in probe[r]]
            assert list(pure[r]) == want


def test_lru_batch_validates():
    with pytest.raises(ValueError):
        lru_batch(np.zeros((2, 3)), np.zeros((2, 4)), 2, 2, np.zeros((2, 1)))
    with pytest.raises(ValueError):
        lru_batch(np.zeros((1, 1)), np.zeros((1, 1)), 3, 2, np.zeros((1, 1)))


def test_pure_fallback_selected_by_environment():
    import subprocess
    import sys
    out = subprocess.run([sys.executable, "-c", "from specleak.cache import KERNEL; print(KERNEL)"],
                         env={"SPECLEAK_PURE": "1", "PATH": ""}, capture_output=True, text=True)
    assert out.stdout.strip() == "python"
    assert _lru_batch_py is not None


# -- trace format ---------------------------------------------------------------

SEVEN_PHASES = """
sym y 1 secret
sym z 1 secret
expr s1 = (add 0x1000 (mul (zext 64 y) 64))
expr s2 = (add 0x2000 (mul (zext 64 z) 64))
pi t = 1:1
N load 0x0 @t      # c1 set 0
N load 0x80 @t     # c2 set 0
N load 0x40 @t     # c3 set 1
S load s1 @t
N load 0xc0 @t     # c4 set 1
S load s2 @t
N load 0x100 @t    # c5 set 0
N load 0x180 @t    # c6 set 0
N load 0x140 @t    # c7 set 1
"""


def test_trace_roundtrip():
    tr = parse_trace(SEVEN_PHASES)
    assert len(tr) == 9 and tr.n_s == [3, 5]
    again = parse_trace(format_trace(tr))
    assert [e.kind for e in again.events] == [e.kind for e in tr.events]
    assert [e.sigma for e in again.events] == [e.sigma for e in tr.events]
    assert again.pi == tr.pi


@pytest.mark.parametrize("text, line", [
    ("N load 0x0 @nope", 1),
    ("sym y 8\nS fetch y @true", 2),
    ("frob 1", 1),
    ("pi p = (add 1:8 2:8)", 1),
    ("expr e = (bogus 1 2)", 1),
])
def test_trace_parse_errors_carry_line(text, line):
    with pytest.raises(TraceFormatError) as exc:
        parse_trace(text)
    assert exc.value.line == line


def test_speculative_stores_are_dropped():
    x = E.const(64, 0)
    tr = CacheTrace([TraceEvent(SPEC, "store", x, Constraint()), TraceEvent(NORM, "load", x, Constraint())])
    assert len(tr) == 1 and tr.n_s == []


# -- may-cache ---------------------------------------------------------------------

def test_seven_phase_maycache_example():
    # Two sets, two ways.  Following the life-tag rules step by step, s1's
    # set-1 entry is aged by c4 and then c7, while s2's is only aged by c7,
    # so the surviving virtual entry is s2's.
    cfg = CacheConfig(2, 64, 2)
    mc = MayCache(parse_trace(SEVEN_PHASES), cfg)
    verdict = mc.run()
    assert mc.state.snapshot() == {0: ((6, 4), {}), 1: ((5, 3), {5: 1})}
    assert verdict == {3: DEFINITELY_EVICTED, 5: POSSIBLY_RESIDENT}
    # concrete contents are c6, c5 in set 0 and c7, c4 in set 1
    assert {b * 64 for b in (6, 4, 5, 3)} == {0x180, 0x100, 0x140, 0xc0}


def _one_symbolic(followers, ways=2, sets=2):
    text = ["sym y 1 secret", "expr s = (add 0x1000 (mul (zext 64 y) 64))", "pi t = 1:1",
            "S load s @t"] + [f"N load {a:#x} @t" for a in followers]
    return parse_trace("\n".join(text)), CacheConfig(sets, 64, ways)


def test_maycache_misses_remove_entry():
    # s may be in either set; two misses in each kill it
    tr, cfg = _one_symbolic([0x0, 0x80, 0x40, 0xc0])
    assert maycache_filter(tr, cfg) == {0: DEFINITELY_EVICTED}
    tr, cfg = _one_symbolic([0x0, 0x80, 0x40])
    assert maycache_filter(tr, cfg) == {0: POSSIBLY_RESIDENT}


def test_maycache_hits_do_not_age():
    tr, cfg = _one_symbolic([0x0, 0x40] + [0x0, 0x40] * 5)
    assert maycache_filter(tr, cfg) == {0: POSSIBLY_RESIDENT}


def test_maycache_reload_renews():
    # a later access that may touch s's block renews the entry
    tr, cfg = _one_symbolic([0x0, 0x80, 0x1000, 0x40, 0xc0])
    assert maycache_filter(tr, cfg) == {0: POSSIBLY_RESIDENT}


# -- residency constraint -----------------------------------------------------------

DM = CacheConfig(4, 64, 1)   # direct-mapped


def _trace(events, pi=Constraint()):
    return CacheTrace([TraceEvent(k, "load", s, pi, n) for n, (k, s) in enumerate(events)], pi)


def test_no_symbolic_access_is_an_error():
    tr = _trace([(NORM, E.const(64, 0))])
    with pytest.raises(NoSymbolicAccess):
        build_gamma_spectre(tr, DM)
    with pytest.raises(NoSymbolicAccess, match="no symbolic accesses"):
        check_residency(tr, DM)


def test_direct_mapped_disjoint_set_survives():
    y = E.symbol("y", 6, taint=["y"])
    s = E.zext(y, 64)                                   # line 0 only, set 0
    tr = _trace([(SPEC, s), (NORM, E.const(64, 0x40))])  # set 1
    assert Solver().check(build_gamma_spectre(tr, DM).constraint).status == "sat"
    assert check_residency(tr, DM, route="constraint").status == MAY_REMAIN


def test_direct_mapped_forced_conflict_evicts():
    y = E.symbol("y", 6, taint=["y"])
    s = E.zext(y, 64)                                    # set 0, tag 0
    tr = _trace([(SPEC, s), (NORM, E.const(64, 0x100))])  # set 0, tag 1
    assert Solver().check(build_gamma_spectre(tr, DM).constraint).status == "unsat"
    for route in ("constraint", "simulate", "auto"):
        assert check_residency(tr, DM, route=route, use_filter=False).status == EVICTED


def test_worked_example_formula():
    # secret-dependent &array2[v] against the normal &array3[8], guarded by x > SIZE
    x = E.symbol("x", 8, user=True)
    v = E.symbol("v", 8, taint=["v"])
    array2, array3, size = 0x0, 0x140, 16
    s = E.binop("add", E.const(64, array2), E.binop("mul", E.zext(v, 64), E.const(64, 4)))
    c = E.const(64, array3 + 8)
    guard = E.cmp("ult", E.const(8, size), x)
    pi = Constraint().add(guard)
    tr = _trace([(SPEC, s), (NORM, c)], pi)
    cons = build_gamma_spectre(tr, DM).constraint
    solver = Solver()
    for xv, vv in itertools.product((3, 16, 17, 200), range(256)):
        fix = [E.cmp("eq", x, E.const(8, xv)), E.cmp("eq", v, E.const(8, vv))]
        addr = array2 + 4 * vv
        formula = xv > size and (DM.set_of(addr) != DM.set_of(c.value)
                                 or DM.tag_of(addr) == DM.tag_of(c.value))
        assert (solver.check(cons, fix).status == "sat") == formula, (xv, vv)


def test_single_query_selects_event():
    y = E.symbol("y", 6, taint=["y"])
    tr = _trace([(SPEC, E.zext(y, 64)), (SPEC, E.const(64, 0x40)), (NORM, E.const(64, 0x100))])
    solver = Solver()
    assert solver.check(build_gamma_spectre(tr, DM, only=0).constraint).status == "unsat"
    assert solver.check(build_gamma_spectre(tr, DM, only=1).constraint).status == "sat"
    with pytest.raises(KeyError):
        build_gamma_spectre(tr, DM, only=2)


def test_reload_after_conflict_keeps_block():
    y = E.symbol("y", 6, taint=["y"])
    s = E.zext(y, 64)
    tr = _trace([(SPEC, s), (NORM, E.const(64, 0x100)), (NORM, E.const(64, 0x10))])
    assert check_residency(tr, DM, route="constraint").status == MAY_REMAIN


def test_sweep_boundary_two_way():
    # 259 and 260 distinct lines after a leak into array2 (set 0): four lines
    # may hold the secret, the sweep starts at set 0 and wraps once
    v = E.symbol("v", 8, taint=["v"])
    s = E.zext(v, 64)
    for n, want in ((259, MAY_REMAIN), (260, EVICTED)):
        evs = [(SPEC, s)] + [(NORM, E.const(64, 0x100000 + 64 * k)) for k in range(n)]
        assert check_residency(_trace(evs), L1).status == want, n


def test_no_normal_accesses_after_leak_may_remain():
    v = E.symbol("v", 8, taint=["v"])
    tr = _trace([(NORM, E.const(64, 0)), (SPEC, E.binop("mul", E.zext(v, 64), E.const(64, 512)))])
    for route in ("constraint", "simulate"):
        assert check_residency(tr, L1, route=route).status == MAY_REMAIN


def test_trace_attacker_sees_prefix():
    y = E.symbol("y", 6, taint=["y"])
    tr = _trace([(SPEC, E.zext(y, 64)), (NORM, E.const(64, 0x100))])
    assert check_residency(tr, DM, ACCESS).status == EVICTED
    v = check_residency(tr, DM, TRACE)
    assert v.status == MAY_REMAIN and v.observation == 1


def test_bad_attacker_and_route():
    tr = _trace([(SPEC, E.const(64, 0))])
    with pytest.raises(ValueError):
        check_residency(tr, DM, "oracle")
    with pytest.raises(ValueError):
        check_residency(tr, DM, route="magic")


def test_routes_agree_and_model_is_witness():
    rng = random.Random(11)
    for _ in range(60):
        tr, cfg, addrs = random_trace(rng)
        a = check_residency(tr, cfg, route="constraint", use_filter=False)
        b = check_residency(tr, cfg, route="simulate", use_filter=False)
        assert {k: e.status for k, e in a.events.items()} == {k: e.status for k, e in b.events.items()}
        for i, ev in a.events.items():
            if ev.status == MAY_REMAIN:
                f, p = filtered_addresses(tr, ev.addresses, i)
                assert lru_resident(f, p, sets=cfg.sets, line=LINE, ways=cfg.ways)


def _theta_ok(trace, cfg):
    """Under every input model, exactly one value of each cnf bit satisfies
    both of its defining implications, and that value is its definition."""
    gm = build_gamma_spectre(trace, cfg)
    syms = sorted(frozenset().union(*(e.sigma.syms for e in trace.events)), key=lambda s: s.name)
    env, n = enumerate_assignments(syms)
    for (i, j), d in gm.definition.items():
        c = gm.cnf[(i, j)]
        if c.is_const:
            continue
        up, down = E.implies(d, c), E.implies(E.lnot(d), E.lnot(c))
        want = evaluate_vec([d], env, n)[0]
        fits = []
        for cv in (0, 1):
            e = {**env, c: np.full(n, cv, dtype=np.uint64)}
            fits.append(evaluate_vec([E.land(up, down)], e, n)[0])
        if not (np.all(fits[0] != fits[1]) and np.all(fits[1] == want)):
            return False
    return True


def test_conflict_indicators_are_determined():
    rng = random.Random(5)
    for _ in range(40):
        tr, cfg, _ = random_trace(rng, pinned=False, ways=(1, 2))
        assert _theta_ok(tr, cfg)


@pytest.mark.skipif(shutil.which("z3") is None, reason="z3 not installed")
def test_conflict_indicators_are_determined_smt():
    rng = random.Random(8)
    smt = Solver(SmtBackend("z3"))
    for _ in range(15):
        tr, cfg, _ = random_trace(rng, pinned=False, ways=(1, 2))
        gm = build_gamma_spectre(tr, cfg)
        final = E.lor(*gm.spec.values())
        base = Constraint([t for t in gm.constraint.terms if t is not final])
        for (i, j), d in gm.definition.items():
            c = gm.cnf[(i, j)]
            if not c.is_const:
                assert smt.check(base, (E.cmp("ne", c, d),)).status == "unsat"
