"""Cache traces: the Γ sequences handed to the cache model, and their text form.

Text format, one item per line, ``#`` comments::

    sym NAME WIDTH [secret] [user]
    expr ID = SEXPR
    pi ID = SEXPR [, SEXPR ...]        # conjunction; may reference other pi ids
    S|N load|store ADDR @PI            # ADDR is an expr id or a literal
    final @PI                          # terminal path condition (default: last event's)

SEXPR is a literal (``0x40``, ``12``, optionally ``:WIDTH``), a symbol, an
expr id, or ``(OP ARG ...)`` with OP one of add sub mul and or xor shl lshr,
eq ne ult ule slt sle, not, select, and ``(zext|sext|trunc WIDTH ARG)``.
Literals without a width take the width of a sibling operand; addresses
default to 64 bits.
"""
from __future__ import annotations

import re
from dataclasses import dataclass
from typing import Iterable, Sequence

from .. import expr as E
from ..expr import Expr
from ..solver import Constraint

SPEC, NORM = "S", "N"


@dataclass(frozen=True, eq=False)
class TraceEvent:
    kind: str          # S: secret-dependent speculative access, N: normal-path access
    op: str            # load | store
    sigma: Expr
    pi: Constraint
    instr: int | None = None

    @property
    def concrete(self) -> bool:
        return self.sigma.is_const


class CacheTrace:
    """An ordered event sequence plus its terminal path condition."""

    def __init__(self, events: Iterable[TraceEvent], pi: Constraint | None = None):
        evs = tuple(e for e in events if not (e.kind == SPEC and e.op == "store"))
        for e in evs:
            if e.kind not in (SPEC, NORM):
                raise ValueError(f"bad event kind {e.kind!r}")
            if e.sigma.width != 64:
                raise E.WidthError("addresses must be 64 bits wide")
        self.events: tuple[TraceEvent, ...] = evs
        if pi is None:
            pi = evs[-1].pi if evs else Constraint()
        self.pi = pi

    @property
    def n_s(self) -> list[int]:
        return [k for k, e in enumerate(self.events) if e.kind == SPEC]

    @property
    def n_t(self) -> list[int]:
        return [k for k, e in enumerate(self.events) if e.kind == NORM]

    def __len__(self) -> int:
        return len(self.events)

    def prefix(self, k: int) -> "CacheTrace":
        """First ``k`` events, with the terminal condition kept (it constrains the same inputs)."""
        return CacheTrace(self.events[:k], self.pi)

    @classmethod
    def from_gamma(cls, gamma) -> "CacheTrace":
        evs = [TraceEvent(SPEC, e.kind, e.sigma, e.pi, e.instr) for e in gamma.spec]
        evs += [TraceEvent(NORM, e.kind, e.sigma, e.pi, e.instr) for e in gamma.normal]
        return cls(evs, gamma.pi)

    def __repr__(self) -> str:
        return f"<CacheTrace N={len(self.events)} Ns={len(self.n_s)}>"


# -- text format ------------------------------------------------------------

class TraceFormatError(ValueError):
    def __init__(self, msg: str, line: int | None = None):
        super().__init__(f"line {line}: {msg}" if line else msg)
        self.line = line


_SX = re.compile(r"\s*(\(|\)|,|[^\s(),]+)")
_UNARY_W = ("zext", "sext", "trunc")


def _sx_tokens(text: str) -> list[str]:
    out, pos = [], 0
    text = text.strip()
    while pos < len(text):
        m = _SX.match(text, pos)
        if not m:
            raise TraceFormatError(f"cannot tokenize {text[pos:]!r}")
        out.append(m.group(1))
        pos = m.end()
    return out


def _sx_read(toks: list[str], i: int = 0):
    if i >= len(toks):
        raise TraceFormatError("unexpected end of expression")
    t = toks[i]
    if t == "(":
        items = []
        i += 1
        while i < len(toks) and toks[i] != ")":
            node, i = _sx_read(toks, i)
            items.append(node)
        if i >= len(toks):
            raise TraceFormatError("missing ')'")
        return items, i + 1
    if t in (")", ","):
        raise TraceFormatError(f"unexpected {t!r}")
    return t, i + 1


def _literal(tok: str):
    m = re.fullmatch(r"(-?(?:0[xX][0-9a-fA-F]+|\d+))(?::(\d+))?", tok)
    if not m:
        return None
    return int(m.group(1), 0), (int(m.group(2)) if m.group(2) else None)


class _Env:
    def __init__(self):
        self.names: dict[str, Expr] = {}
        self.pis: dict[str, Constraint] = {}

    def build(self, node, want: int | None = None) -> Expr:
        if isinstance(node, str):
            lit = _literal(node)
            if lit is not None:
                v, w = lit
                w = w or want
                if w is None:
                    raise TraceFormatError(f"cannot infer width of literal {node}")
                return E.const(w, v)
            if node in self.names:
                return self.names[node]
            raise TraceFormatError(f"unknown name {node!r}")
        if not node:
            raise TraceFormatError("empty expression")
        op = node[0]
        args = node[1:]
        if op in _UNARY_W:
            w = int(args[0], 0)
            return getattr(E, op)(self.build(args[1]), w)
        if op == "not":
            return E.not_(self.build(args[0], want))
        if op == "select":
            c = self.build(args[0], 1)
            a, b = self._pair(args[1], args[2], want)
            return E.select(c, a, b)
        if op in E.BINOPS:
            a, b = self._pair(args[0], args[1], want)
            return E.binop(op, a, b)
        if op in E.CMPOPS:
            a, b = self._pair(args[0], args[1], None)
            return E.cmp(op, a, b)
        raise TraceFormatError(f"unknown operator {op!r}")

    def _pair(self, x, y, want):
        def width_of(n):
            if isinstance(n, str):
                lit = _literal(n)
                if lit is not None:
                    return lit[1]
                if n in self.names:
                    return self.names[n].width
                return None
            try:
                return self.build(n, None).width
            except TraceFormatError:
                return None
        w = width_of(x) or width_of(y) or want
        return self.build(x, w), self.build(y, w)


def parse_trace(text: str) -> CacheTrace:
    env = _Env()
    env.pis["true"] = Constraint()
    events: list[TraceEvent] = []
    final = None
    for lineno, raw in enumerate(text.splitlines(), 1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        try:
            head, _, rest = line.partition(" ")
            if head == "sym":
                parts = rest.split()
                name, width = parts[0], int(parts[1], 0)
                flags = set(parts[2:])
                env.names[name] = E.symbol(name, width, secret="secret" in flags, user="user" in flags)
            elif head == "expr":
                ident, _, body = rest.partition("=")
                node, _ = _sx_read(_sx_tokens(body))
                env.names[ident.strip()] = env.build(node, 64)
            elif head == "pi":
                ident, _, body = rest.partition("=")
                pi = Constraint()
                for part in _split_top(body):
                    part = part.strip()
                    if part in env.pis:
                        pi = pi & env.pis[part]
                    else:
                        node, _ = _sx_read(_sx_tokens(part))
                        t = env.build(node, 1)
                        if t.width != 1:
                            raise TraceFormatError("path-condition terms must be 1 bit wide")
                        pi = pi.add(t)
                env.pis[ident.strip()] = pi
            elif head in (SPEC, NORM):
                parts = rest.split()
                if len(parts) != 3 or not parts[2].startswith("@") or parts[0] not in ("load", "store"):
                    raise TraceFormatError("event lines look like: S|N load|store ADDR @PI")
                sigma = env.build(parts[1], 64)
                if sigma.width != 64:
                    sigma = E.zext(sigma, 64)
                pid = parts[2][1:]
                if pid not in env.pis:
                    raise TraceFormatError(f"unknown path condition {pid!r}")
                events.append(TraceEvent(head, parts[0], sigma, env.pis[pid], len(events)))
            elif head == "final":
                pid = rest.strip().lstrip("@")
                if pid not in env.pis:
                    raise TraceFormatError(f"unknown path condition {pid!r}")
                final = env.pis[pid]
            else:
                raise TraceFormatError(f"unknown directive {head!r}")
        except TraceFormatError as exc:
            if exc.line is None:
                raise TraceFormatError(str(exc), lineno) from None
            raise
        except (ValueError, IndexError, E.WidthError) as exc:
            raise TraceFormatError(str(exc), lineno) from None
    return CacheTrace(events, final)


def _split_top(body: str) -> list[str]:
    out, depth, cur = [], 0, []
    for ch in body:
        if ch == "(":
            depth += 1
        elif ch == ")":
            depth -= 1
        if ch == "," and depth == 0:
            out.append("".join(cur))
            cur = []
        else:
            cur.append(ch)
    if "".join(cur).strip():
        out.append("".join(cur))
    return out


def _sx(e: Expr, names: dict) -> str:
    if e.op == "const":
        return f"{e.value:#x}:{e.width}"
    if e.op == "sym":
        return e.name
    if id(e) in names:
        return names[id(e)]
    if e.op in _UNARY_W:
        return f"({e.op} {e.width} {_sx(e.args[0], names)})"
    return "(" + " ".join([e.op] + [_sx(a, names) for a in e.args]) + ")"


def format_trace(trace: CacheTrace) -> str:
    """Inverse of :func:`parse_trace` (symbol names must be plain identifiers)."""
    lines = ["# cache trace"]
    syms = set()
    for ev in trace.events:
        syms |= ev.sigma.syms
        for t in ev.pi:
            syms |= t.syms
    for t in trace.pi:
        syms |= t.syms
    for s in sorted(syms, key=lambda s: s.name):
        flags = (" secret" if s.name in s.taint else "") + (" user" if s.user else "")
        lines.append(f"sym {s.name} {s.width}{flags}")
    pis: dict = {}

    def pid(pi: Constraint) -> str:
        if pi not in pis:
            pis[pi] = f"p{len(pis)}"
            body = ", ".join(_sx(t, {}) for t in pi.terms) or "1:1"
            lines.append(f"pi {pis[pi]} = {body}")
        return pis[pi]

    for k, ev in enumerate(trace.events):
        p = pid(ev.pi)
        if ev.sigma.is_const:
            addr = f"{ev.sigma.value:#x}"
        else:
            addr = f"e{k}"
            lines.append(f"expr {addr} = {_sx(ev.sigma, {})}")
        lines.append(f"{ev.kind} {ev.op} {addr} @{p}")
    lines.append(f"final @{pid(trace.pi)}")
    return "\n".join(lines) + "\n"
