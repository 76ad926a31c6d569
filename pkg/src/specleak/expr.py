"""Hash-consed fixed-width bitvector expressions with secret-taint tracking.

Every node is immutable and interned: building a node that is structurally
equal to a live one returns the existing object, so identity comparison is
structural comparison.  Taint (the set of secret identifiers a value depends
on) and the user-controlled flag are derived attributes computed once at
construction.
"""
from __future__ import annotations

import threading
import weakref
from typing import Iterable, Mapping

BINOPS = ("add", "sub", "mul", "and", "or", "xor", "shl", "lshr")
CMPOPS = ("eq", "ne", "ult", "ule", "slt", "sle")
UNOPS = ("not", "zext", "sext", "trunc")

_EMPTY: frozenset = frozenset()


class WidthError(ValueError):
    """Operand widths are not legal for the operator."""


class UnboundSymbol(KeyError):
    """A model does not assign a symbol that the expression depends on."""


def mask(width: int) -> int:
    return (1 << width) - 1


class Expr:
    __slots__ = ("op", "width", "args", "value", "name", "taint", "user", "syms", "__weakref__")

    # op: "const" | "sym" | unary op | binop | cmpop | "select"
    # value: constant value, or extension/truncation target for unary ops

    def __repr__(self) -> str:
        return f"<Expr {to_text(self)} :{self.width}>"

    def __str__(self) -> str:
        return to_text(self)

    @property
    def is_const(self) -> bool:
        return self.op == "const"

    @property
    def is_sym(self) -> bool:
        return self.op == "sym"

    def free_symbols(self) -> frozenset:
        return self.syms


_table: "weakref.WeakValueDictionary[tuple, Expr]" = weakref.WeakValueDictionary()
_lock = threading.Lock()
_created = 0


def node_count() -> int:
    """Number of nodes ever allocated by the intern table."""
    return _created


def live_nodes() -> int:
    return len(_table)


def _intern(key: tuple, op: str, width: int, args: tuple, value, name, taint, user, syms) -> Expr:
    global _created
    with _lock:
        node = _table.get(key)
        if node is not None:
            return node
        node = Expr.__new__(Expr)
        node.op = op
        node.width = width
        node.args = args
        node.value = value
        node.name = name
        node.taint = taint
        node.user = user
        node.syms = frozenset((node,)) if op == "sym" else syms
        _table[key] = node
        _created += 1
        return node


def _merge(args: tuple) -> tuple[frozenset, bool, frozenset]:
    if len(args) == 1:
        a = args[0]
        return a.taint, a.user, a.syms
    taint = _EMPTY.union(*(a.taint for a in args))
    syms = _EMPTY.union(*(a.syms for a in args))
    return taint, any(a.user for a in args), syms


# -- leaves -----------------------------------------------------------------

def const(width: int, value: int) -> Expr:
    if width < 1 or width > 64:
        raise WidthError(f"unsupported width {width}")
    value &= mask(width)
    return _intern(("const", width, value), "const", width, (), value, None, _EMPTY, False, _EMPTY)


TRUE = const(1, 1)
FALSE = const(1, 0)


def symbol(name: str, width: int, *, taint: Iterable[str] = (), user: bool = False,
           secret: bool = False) -> Expr:
    """A free input.  A secret symbol is tainted by its own name."""
    if width < 1 or width > 64:
        raise WidthError(f"unsupported width {width}")
    t = frozenset(taint)
    if secret:
        t = t | {name}
    return _intern(("sym", name, width, t, user), "sym", width, (), None, name, t, user, _EMPTY)


# -- operators --------------------------------------------------------------

def _sign(width: int, v: int) -> int:
    return v - (1 << width) if v >> (width - 1) else v


def fold_binop(op: str, width: int, a: int, b: int) -> int:
    m = mask(width)
    if op == "add":
        return (a + b) & m
    if op == "sub":
        return (a - b) & m
    if op == "mul":
        return (a * b) & m
    if op == "and":
        return a & b
    if op == "or":
        return a | b
    if op == "xor":
        return a ^ b
    if op == "shl":
        return (a << b) & m if b < width else 0
    if op == "lshr":
        return a >> b if b < width else 0
    raise ValueError(op)


def fold_cmp(op: str, width: int, a: int, b: int) -> int:
    if op == "eq":
        return int(a == b)
    if op == "ne":
        return int(a != b)
    if op == "ult":
        return int(a < b)
    if op == "ule":
        return int(a <= b)
    if op == "slt":
        return int(_sign(width, a) < _sign(width, b))
    if op == "sle":
        return int(_sign(width, a) <= _sign(width, b))
    raise ValueError(op)


def _node(op: str, width: int, args: tuple, value=None) -> Expr:
    taint, user, syms = _merge(args)
    return _intern((op, width, args, value), op, width, args, value, None, taint, user, syms)


def binop(op: str, a: Expr, b: Expr) -> Expr:
    if op not in BINOPS:
        raise ValueError(f"unknown binary operator {op!r}")
    if a.width != b.width:
        raise WidthError(f"{op}: width mismatch {a.width} vs {b.width}")
    w = a.width
    ca, cb = a.is_const, b.is_const
    if ca and cb:
        return const(w, fold_binop(op, w, a.value, b.value))
    full = mask(w)
    if cb:
        bv = b.value
        if bv == 0 and op in ("add", "sub", "or", "xor", "shl", "lshr"):
            return a
        if bv == 0 and op in ("and", "mul"):
            return const(w, 0)
        if bv == 1 and op == "mul":
            return a
        if bv == full and op == "and":
            return a
        if bv == full and op == "or":
            return const(w, full)
        if op in ("shl", "lshr") and bv >= w:
            return const(w, 0)
    if ca:
        av = a.value
        if av == 0 and op in ("add", "or", "xor"):
            return b
        if av == 0 and op in ("and", "mul", "shl", "lshr"):
            return const(w, 0)
        if av == 1 and op == "mul":
            return b
        if av == full and op == "and":
            return b
        if av == full and op == "or":
            return const(w, full)
    return _node(op, w, (a, b))


def cmp(op: str, a: Expr, b: Expr) -> Expr:
    if op not in CMPOPS:
        raise ValueError(f"unknown comparison {op!r}")
    if a.width != b.width:
        raise WidthError(f"{op}: width mismatch {a.width} vs {b.width}")
    if a.is_const and b.is_const:
        return const(1, fold_cmp(op, a.width, a.value, b.value))
    return _node(op, 1, (a, b))


def select(c: Expr, a: Expr, b: Expr) -> Expr:
    if c.width != 1:
        raise WidthError("select condition must be 1 bit")
    if a.width != b.width:
        raise WidthError(f"select: width mismatch {a.width} vs {b.width}")
    if c.is_const:
        return a if c.value else b
    if a is b:
        return a
    return _node("select", a.width, (c, a, b))


def not_(a: Expr) -> Expr:
    if a.is_const:
        return const(a.width, ~a.value)
    if a.op == "not":
        return a.args[0]
    return _node("not", a.width, (a,))


def zext(a: Expr, width: int) -> Expr:
    if width < a.width or width > 64:
        raise WidthError(f"zext from {a.width} to {width}")
    if width == a.width:
        return a
    if a.is_const:
        return const(width, a.value)
    return _node("zext", width, (a,), width)


def sext(a: Expr, width: int) -> Expr:
    if width < a.width or width > 64:
        raise WidthError(f"sext from {a.width} to {width}")
    if width == a.width:
        return a
    if a.is_const:
        return const(width, _sign(a.width, a.value))
    return _node("sext", width, (a,), width)


def trunc(a: Expr, width: int) -> Expr:
    if width > a.width or width < 1:
        raise WidthError(f"trunc from {a.width} to {width}")
    if width == a.width:
        return a
    if a.is_const:
        return const(width, a.value)
    return _node("trunc", width, (a,), width)


# -- boolean helpers over 1-bit terms ----------------------------------------

def land(*terms: Expr) -> Expr:
    out = TRUE
    for t in terms:
        out = binop("and", out, t)
    return out


def lor(*terms: Expr) -> Expr:
    out = FALSE
    for t in terms:
        out = binop("or", out, t)
    return out


def lnot(t: Expr) -> Expr:
    if t.width != 1:
        raise WidthError("lnot expects a 1-bit term")
    return not_(t)


def implies(a: Expr, b: Expr) -> Expr:
    return lor(lnot(a), b)


# -- evaluation -------------------------------------------------------------

def _postorder(roots: Iterable[Expr]) -> list[Expr]:
    seen: set[int] = set()
    order: list[Expr] = []
    stack = [(r, False) for r in roots]
    while stack:
        node, done = stack.pop()
        if done:
            order.append(node)
            continue
        if id(node) in seen:
            continue
        seen.add(id(node))
        stack.append((node, True))
        for ch in node.args:
            if id(ch) not in seen:
                stack.append((ch, False))
    return order


def evaluate(expr: Expr, model: Mapping[str, int], memo: dict | None = None) -> int:
    """Exact two's-complement value of ``expr`` under ``model`` (symbol name -> int)."""
    vals: dict[int, int] = {} if memo is None else memo
    for n in _postorder((expr,)):
        k = id(n)
        if k in vals:
            continue
        op = n.op
        if op == "const":
            v = n.value
        elif op == "sym":
            try:
                v = model[n.name] & mask(n.width)
            except KeyError:
                raise UnboundSymbol(n.name) from None
        elif op == "select":
            c, a, b = n.args
            v = vals[id(a)] if vals[id(c)] else vals[id(b)]
        elif op == "not":
            v = ~vals[id(n.args[0])] & mask(n.width)
        elif op in ("zext", "trunc"):
            v = vals[id(n.args[0])] & mask(n.width)
        elif op == "sext":
            a = n.args[0]
            v = _sign(a.width, vals[id(a)]) & mask(n.width)
        elif op in CMPOPS:
            a, b = n.args
            v = fold_cmp(op, a.width, vals[id(a)], vals[id(b)])
        else:
            a, b = n.args
            v = fold_binop(op, n.width, vals[id(a)], vals[id(b)])
        vals[k] = v
    return vals[id(expr)]


def substitute(expr: Expr, mapping: Mapping[Expr, Expr]) -> Expr:
    """Rebuild ``expr`` with nodes replaced per ``mapping`` (folding applies)."""
    out: dict[int, Expr] = {}
    for n in _postorder((expr,)):
        if n in mapping:
            out[id(n)] = mapping[n]
            continue
        if not n.args:
            out[id(n)] = n
            continue
        args = [out[id(a)] for a in n.args]
        op = n.op
        if op == "select":
            r = select(*args)
        elif op == "not":
            r = not_(args[0])
        elif op == "zext":
            r = zext(args[0], n.value)
        elif op == "sext":
            r = sext(args[0], n.value)
        elif op == "trunc":
            r = trunc(args[0], n.value)
        elif op in CMPOPS:
            r = cmp(op, *args)
        else:
            r = binop(op, *args)
        out[id(n)] = r
    return out[id(expr)]


def to_text(expr: Expr, limit: int = 400) -> str:
    parts: list[str] = []
    budget = [limit]

    def go(n: Expr) -> None:
        if budget[0] <= 0:
            parts.append("...")
            return
        budget[0] -= 1
        if n.op == "const":
            parts.append(f"{n.value:#x}" if n.value > 9 else str(n.value))
        elif n.op == "sym":
            parts.append(n.name)
        else:
            parts.append("(" + n.op)
            if n.op in ("zext", "sext", "trunc"):
                parts.append(f" {n.value}")
            for a in n.args:
                parts.append(" ")
                go(a)
            parts.append(")")

    go(expr)
    return "".join(parts)
