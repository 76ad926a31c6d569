from pathlib import Path

import pytest
from hypothesis import given, settings, strategies as st

from specleak.ir import (LayoutError, SpecIRError, check_disjoint, format_program, layout_globals,
                         parse_program)

from progen import generate

LITMUS = Path(__file__).resolve().parents[1] / "src" / "specleak" / "corpus" / "litmus"


def test_minimal_program():
    p = parse_program("global a[16]:8\nfn main() {\n  ret\n}\n")
    assert len(p.globals) == 1 and len(p.functions) == 1


def test_listing_port_shape():
    p = parse_program((LITMUS / "v01.specir").read_text())
    ops = [i.op for i in p.instructions()]
    assert ops.count("br") == 1
    assert ops.count("store") == 1
    # bound load, array1 load, array2 load, temp load
    assert ops.count("load") == 4


def test_unresolved_label_reports_location():
    with pytest.raises(SpecIRError) as info:
        parse_program("fn f(x:8) {\nentry:\n  c = ult x 4\n  br c, yes, nowhere\nyes:\n  ret\n}\n")
    assert "nowhere" in str(info.value)
    assert "4:" in str(info.value)


@pytest.mark.parametrize("text, needle", [
    ("global a[0]:8\nfn f() {\n  ret\n}\n", "length"),
    ("fn f() {\n  v = load q[0]\n  ret\n}\n", "undeclared global"),
    ("global a[4]:7\nfn f() {\n  ret\n}\n", "width"),
    ("fn f() {\n  x = add y 1\n  ret\n}\n", "undefined register"),
])
def test_parse_errors(text, needle):
    with pytest.raises(SpecIRError) as info:
        parse_program(text)
    assert needle in str(info.value)


def test_sequential_packing_from_origin():
    p = parse_program("global a[64]:8\nglobal b[64]:8\nfn f() {\n  ret\n}\n", origin=0)
    assert [g.base for g in p.globals] == [0, 64]


def test_padding_to_line():
    p = parse_program("global a[3]:8\nglobal b[1]:32\nfn f() {\n  ret\n}\n")
    assert p.glob("a").base == 0x10000
    assert p.glob("b").base == 0x10040


def test_base_directive_pins_set_zero():
    p = parse_program("global array2[256]:8 @base 0x0\nfn f() {\n  ret\n}\n")
    assert (p.glob("array2").base >> 6) & 0xFF == 0


def test_overlapping_directives_rejected():
    with pytest.raises(LayoutError):
        parse_program("global a[128]:8 @base 0x0\nglobal b[64]:8 @base 0x40\nfn f() {\n  ret\n}\n")


def test_misaligned_directive_rejected():
    with pytest.raises(LayoutError):
        parse_program("global a[4]:32 @base 0x10002\nfn f() {\n  ret\n}\n")


def test_directives_argument_overrides_packing():
    p = parse_program("global a[16]:8\nfn f() {\n  ret\n}\n")
    q = layout_globals(p, {"a": 0x4000})
    assert q.glob("a").base == 0x4000


def test_corpus_round_trips():
    for path in sorted(LITMUS.glob("*.specir")):
        p = parse_program(path.read_text())
        again = parse_program(format_program(p, with_bases=True))
        assert format_program(again, with_bases=True) == format_program(p, with_bases=True)
        assert [i.op for i in again.instructions()] == [i.op for i in p.instructions()]


@settings(max_examples=60, deadline=None)
@given(st.integers(0, 10_000))
def test_generated_programs_round_trip_and_stay_disjoint(seed):
    p = parse_program(generate(seed))
    check_disjoint(p)
    text = format_program(p, with_bases=True)
    assert format_program(parse_program(text), with_bases=True) == text
    # layout is a function of the text alone
    assert [g.base for g in parse_program(generate(seed)).globals] == [g.base for g in p.globals]
