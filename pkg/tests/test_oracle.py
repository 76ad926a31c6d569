from pathlib import Path

import pytest

from specleak.ir import load_program, parse_program
from specleak.oracle import ground_truth, lru_resident, run_concrete, speculate

CORPUS = Path(__file__).parents[1] / "src" / "specleak" / "corpus"
V01 = load_program(CORPUS / "litmus" / "v01.specir")

TAINT = """
global A[4]:8 = [1, 2, 3, 4]
global P[65536]:8
fn f(x:8) {
entry:
  ok = ult x 4
  br ok, body, done
body:
  s = load A[x]
  z = and s 0
  m = and s 255
  c = ult x 255
  pick = select c x s
  a = load P[z]
  b = load P[m]
  d = load P[pick]
  jmp done
done:
  ret
}
"""


def test_committed_run_of_v01():
    run = run_concrete(V01, {"x": 3})
    assert run.reason == "ret"
    assert run.branches == [(V01.instruction(3).id, True)]
    objs = [a.obj for a in run.accesses]
    assert objs == ["array1_size", "array1", "array2", "temp", "temp"]
    assert run.accesses[2].addr == V01.glob("array2").base + 4 * 512
    assert not any(a.secret for a in run.accesses)


def test_out_of_bounds_window_leaks_secret_value():
    run, wins = speculate(V01, {"x": 100}, 50, secret_value=7)
    assert [b for _, b in run.branches] == [False]
    assert len(wins) == 1
    w = wins[0]
    leak = [a for a in w.accesses if a.secret]
    assert [a.obj for a in leak] == ["array2"]
    assert leak[0].addr == V01.glob("array2").base + 7 * 512


def test_in_bounds_window_is_not_secret():
    _, wins = speculate(V01, {"x": 2}, 50)
    assert [w.reason for w in wins] == ["ret"]     # mispredicted exit; nothing read
    assert not any(a.secret for w in wins for a in w.accesses)


def test_window_length_is_bounded():
    _, wins = speculate(V01, {"x": 100}, 3)
    assert wins[0].executed == 3 and wins[0].reason == "window"
    assert not any(a.secret for a in wins[0].accesses)


def test_taint_follows_values_not_syntax():
    p = parse_program(TAINT)
    _, wins = speculate(p, {"x": 9}, 50, secret_value=5)
    secret = {a.obj + str(a.addr - p.glob("P").base): a.secret
              for w in wins for a in w.accesses if a.obj == "P"}
    # and with a clean zero is clean; select only inherits from the arm it took
    assert secret == {"P0": False, "P5": True, "P9": False}


def test_lru_resident_reference():
    assert lru_resident([0, 64, 128], 0, sets=1, line=64, ways=2) is False
    assert lru_resident([0, 64, 0, 128], 0, sets=1, line=64, ways=2) is True
    assert lru_resident([0, 64, 128], 0, sets=2, line=64, ways=1) is False
    assert lru_resident([0, 64], 0, sets=2, line=64, ways=1) is True


@pytest.mark.parametrize("ways, resident", [(1, []), (8, ["P"])])
def test_ground_truth_residency(ways, resident):
    text = """
global A[4]:8 = [1, 2, 3, 4]
global P[256]:8 @base 0x0
global Q[8192]:8 @base 0x10000
fn f(x:8) {
entry:
  ok = ult x 4
  br ok, leak, done
leak:
  s = load A[x]
  v = load P[s]
  jmp done
done:
  q0 = load Q[0]
  q1 = load Q[64]
  q2 = load Q[128]
  q3 = load Q[192]
  ret
}
"""
    p = parse_program(text)
    truth = ground_truth(p, [{"x": v} for v in (1, 200)], 20, secret_values=range(0, 256, 64),
                         caches=[(4, 64, ways)])
    leaks = {p.instruction(i).args[0] for i in truth["ls"]}
    assert leaks == {"P"}
    got = [p.instruction(i).args[0] for i in truth["resident"][(4, 64, ways)]]
    assert got == resident
