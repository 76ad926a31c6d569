"""Randomized invariants.  The fixed-size runs demanded by the acceptance
criteria live in test_acceptance.py; these explore the same properties with
hypothesis-chosen seeds."""
import random

from hypothesis import given, settings, strategies as st

from cachegen import LINE, filtered_addresses, random_trace
from progen import generate
from realize import missed_accesses, order_violations
from specleak.cache import (ACCESS, EVICTED, MAY_REMAIN, TRACE, CacheConfig, check_residency,
                            maycache_filter)
from specleak.cache.maycache import DEFINITELY_EVICTED
from specleak.harness.analyze import analyze_text
from specleak.harness.config import AnalysisConfig
from specleak.oracle import lru_resident

seeds = st.integers(0, 100_000)


def _statuses(v):
    return {k: e.status for k, e in v.events.items()}


@settings(max_examples=25, deadline=None)
@given(seeds, st.sampled_from([3, 8, 20]))
def test_speculative_secret_accesses_are_covered(seed, sew):
    assert missed_accesses(seed, sew) == []


@settings(max_examples=25, deadline=None)
@given(seeds, st.sampled_from([3, 8, 20]))
def test_normal_suffix_follows_concrete_order(seed, sew):
    _, bad = order_violations(seed, sew)
    assert bad == []


@settings(max_examples=150, deadline=None)
@given(seeds)
def test_residency_matches_lru(seed):
    tr, cfg, addrs = random_trace(random.Random(seed))
    v = check_residency(tr, cfg, route="constraint", use_filter=False)
    for i in tr.n_s:
        f, p = filtered_addresses(tr, addrs, i)
        want = lru_resident(f, p, sets=cfg.sets, line=LINE, ways=cfg.ways)
        assert (v.events[i].status == MAY_REMAIN) == want


@settings(max_examples=150, deadline=None)
@given(seeds, st.booleans())
def test_filter_is_sound(seed, pinned):
    tr, cfg, _ = random_trace(random.Random(seed), pinned=pinned)
    flt = maycache_filter(tr, cfg)
    exact = check_residency(tr, cfg, route="constraint", use_filter=False)
    for i, verdict in flt.items():
        if verdict == DEFINITELY_EVICTED:
            assert exact.events[i].status == EVICTED


@settings(max_examples=100, deadline=None)
@given(seeds, st.booleans())
def test_more_ways_never_evicts_more(seed, pinned):
    tr, cfg, _ = random_trace(random.Random(seed), pinned=pinned)
    prev = None
    for ways in (1, 2, 4, 8):
        now = _statuses(check_residency(tr, CacheConfig(cfg.sets, LINE, ways), use_filter=False))
        if prev is not None:
            assert all(now[i] == MAY_REMAIN for i, s in prev.items() if s == MAY_REMAIN)
        prev = now


@settings(max_examples=100, deadline=None)
@given(seeds, st.booleans())
def test_trace_attacker_sees_at_least_access_attacker(seed, pinned):
    tr, cfg, _ = random_trace(random.Random(seed), pinned=pinned)
    if check_residency(tr, cfg, ACCESS).leaks:
        assert check_residency(tr, cfg, TRACE).leaks


@settings(max_examples=40, deadline=None)
@given(seeds, st.sampled_from([5, 20]))
def test_report_invariants(seed, sew):
    text = generate(seed)
    off = analyze_text(text, AnalysisConfig(sew=sew, cache_model=False))
    on = analyze_text(text, AnalysisConfig(sew=sew, cache_model=True))
    c = off.counts
    assert on.counts == c
    assert on.leakages <= off.leakages == c["LS"]
    assert c["UC_VB"] <= c["VB"]
    assert c["LS"] == 0 or c["RS"] > 0
    for r in (off, on):
        assert r.data["stats"]["avg_speculative_instructions"] <= sew
    again = analyze_text(text, AnalysisConfig(sew=sew, cache_model=True))
    assert again.digest() == on.digest()


@settings(max_examples=30, deadline=None)
@given(seeds)
def test_wider_window_reaches_at_least_as_many_locations(seed):
    text = generate(seed)
    locs = [analyze_text(text, AnalysisConfig(sew=s, cache_model=False))
            .data["stats"]["speculative_locations"] for s in (2, 6, 20)]
    assert locs == sorted(locs)
