import sys
from pathlib import Path

import pytest

sys.path.insert(0, str(Path(__file__).parent))

CRITERIA = {
    1: "litmus detection, 15/15 under 10 s",
    2: "2-way eviction crossover at 260, oracle-confirmed, under 5 min",
    3: "4-/8-way crossovers match the oracle and grow with associativity",
    4: "dead-code gadget found only speculatively",
    5: "loop-misprediction gadget sites",
    6: "property suites (coverage, order, cache oracle, filter, backends)",
    7: "metric invariants (avg #inst <= SEW, wider window reaches more)",
    8: "cache-model precision on the three-gadget benchmark",
}

_outcomes: dict[int, list[str]] = {}


@pytest.hookimpl(hookwrapper=True)
def pytest_runtest_makereport(item, call):
    rep = (yield).get_result()
    mark = item.get_closest_marker("criterion")
    if mark is None:
        return
    if rep.when == "call" or (rep.when == "setup" and not rep.passed):
        _outcomes.setdefault(mark.args[0], []).append(rep.outcome)


def pytest_terminal_summary(terminalreporter):
    if not _outcomes:
        return
    tr = terminalreporter
    tr.section("acceptance criteria")
    for n, text in CRITERIA.items():
        got = _outcomes.get(n)
        if not got:
            status = "NOT RUN"
        elif "failed" in got:
            status = "FAIL"
        elif all(o == "skipped" for o in got):
            status = "SKIP"
        else:
            status = "PASS"
        tr.write_line(f"criterion {n}: {status:<7} {text}")
