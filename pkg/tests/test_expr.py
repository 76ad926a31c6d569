import pytest
from hypothesis import given, settings, strategies as st

from specleak import expr as E

x8 = E.symbol("x", 8, user=True)
y8 = E.symbol("y", 8)
s8 = E.symbol("s", 8, taint=["s"])


def test_wrapping_add_folds():
    r = E.binop("add", E.const(8, 200), E.const(8, 100))
    assert r.is_const and r.value == 44


def test_absorbing_and_drops_taint():
    r = E.binop("and", s8, E.const(8, 0))
    assert r.is_const and r.value == 0
    assert r.taint == frozenset()


def test_identity_rules_return_operand():
    assert E.binop("add", x8, E.const(8, 0)) is x8
    assert E.binop("mul", x8, E.const(8, 1)) is x8


def test_comparison_is_one_bit_over_its_symbols():
    c = E.cmp("ult", x8, E.const(8, 16))
    assert c.width == 1
    assert c.free_symbols() == frozenset({x8})


def test_hash_consing_reuses_nodes():
    a = E.binop("xor", x8, y8)
    before = E.node_count()
    b = E.binop("xor", x8, y8)
    assert a is b
    assert E.node_count() == before


def test_width_mismatch_rejected():
    with pytest.raises(E.WidthError):
        E.binop("add", x8, E.const(16, 1))


def test_casts_fold():
    assert E.sext(E.const(8, 0x80), 16).value == 0xFF80
    assert E.zext(E.const(8, 0x80), 16).value == 0x80
    assert E.trunc(E.const(16, 0x1234), 8).value == 0x34
    assert E.cmp("slt", E.const(8, 255), E.const(8, 0)).value == 1


def test_evaluate_wraps():
    assert E.evaluate(E.binop("add", x8, E.const(8, 1)), {"x": 255}) == 0


def test_evaluate_select():
    a, b = E.symbol("a", 8), E.symbol("b", 8)
    e = E.select(E.cmp("eq", x8, E.const(8, 0)), a, b)
    assert E.evaluate(e, {"x": 0, "a": 7, "b": 9}) == 7
    assert E.evaluate(e, {"x": 1, "a": 7, "b": 9}) == 9


def test_evaluate_unbound_symbol():
    with pytest.raises(E.UnboundSymbol):
        E.evaluate(E.binop("add", x8, y8), {"x": 1})


def test_taint_propagates_through_operations():
    e = E.binop("add", x8, E.binop("mul", s8, E.const(8, 3)))
    assert e.taint == frozenset({"s"})
    assert e.user


def test_shift_out_of_range_is_zero():
    assert E.fold_binop("shl", 8, 1, 9) == 0
    assert E.fold_binop("lshr", 8, 128, 8) == 0


def test_substitute_replaces_symbols():
    e = E.binop("add", x8, y8)
    r = E.substitute(e, {y8: E.const(8, 3)})
    assert E.evaluate(r, {"x": 4}) == 7


OPS = E.BINOPS


def _py(op, w, a, b):
    m = (1 << w) - 1
    return {
        "add": (a + b) & m, "sub": (a - b) & m, "mul": (a * b) & m,
        "and": a & b, "or": a | b, "xor": a ^ b,
        "shl": (a << b) & m if b < w else 0, "lshr": a >> b if b < w else 0,
    }[op]


@settings(max_examples=300, deadline=None)
@given(st.sampled_from(OPS), st.sampled_from([8, 16, 32]), st.integers(0, 2**32 - 1),
       st.integers(0, 2**32 - 1))
def test_evaluate_is_homomorphic(op, w, a, b):
    m = (1 << w) - 1
    a, b = a & m, b & m
    xa, xb = E.symbol(f"ha{w}", w), E.symbol(f"hb{w}", w)
    sym = E.evaluate(E.binop(op, xa, xb), {f"ha{w}": a, f"hb{w}": b})
    folded = E.binop(op, E.const(w, a), E.const(w, b)).value
    assert sym == folded == _py(op, w, a, b)


@settings(max_examples=200, deadline=None)
@given(st.sampled_from(OPS), st.sampled_from(OPS), st.integers(0, 255), st.integers(0, 255),
       st.integers(0, 255), st.integers(0, 255))
def test_taint_soundness(op1, op2, k, xv, sv1, sv2):
    # changing only the secret changes the value => the secret is in the taint
    e = E.binop(op2, E.binop(op1, s8, E.const(8, k)), x8)
    v1 = E.evaluate(e, {"s": sv1, "x": xv})
    v2 = E.evaluate(e, {"s": sv2, "x": xv})
    if v1 != v2:
        assert "s" in e.taint
