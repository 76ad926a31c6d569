"""SpecIR: a small text IR with typed globals, basic blocks and (global, index) memory ops.

Grammar (whitespace, including newlines, is insignificant; ``#`` starts a comment)::

    global NAME[LEN]:WIDTH [user] [secret] [@base ADDR] [= [v, v, ...]]
    fn NAME(p:WIDTH, ...) { [LABEL:] INSTR* (LABEL: INSTR*)* }

    x = const W N            x = symbolic W [user]
    x = add|sub|mul|and|or|xor|shl|lshr a b
    x = eq|ne|ult|ule|slt|sle a b
    x = zext|sext|trunc W a  x = select c a b
    x = load G[i]            store G[i], v
    br c, Ltrue, Lfalse      jmp L
    fence                    assume c
    ret [v]

Operands are registers, parameters or integer literals.  A literal takes the
width of the other operand; a literal index is 64 bits wide.  Cells of a
global with an initializer list that the list does not reach are zero; a
global without an initializer starts unconstrained.
"""
from __future__ import annotations

import re
from dataclasses import dataclass, field, replace
from typing import Mapping

WIDTHS = (8, 16, 32, 64)
DEFAULT_ORIGIN = 0x10000
DEFAULT_LINE = 64

BINOPS = ("add", "sub", "mul", "and", "or", "xor", "shl", "lshr")
CMPOPS = ("eq", "ne", "ult", "ule", "slt", "sle")
CASTS = ("zext", "sext", "trunc")
TERMINATORS = ("br", "jmp", "ret")
OPCODES = ("const", "symbolic", "binop", "cmp", "cast", "select", "load", "store",
           "br", "jmp", "fence", "ret", "assume")
_KEYWORDS = {"store", "br", "jmp", "fence", "assume", "ret"}


class SpecIRError(Exception):
    """Malformed program.  ``line``/``col`` point at the offending token when known."""

    def __init__(self, message: str, line: int | None = None, col: int | None = None):
        self.message = message
        self.line = line
        self.col = col
        where = f"{line}:{col}: " if line is not None else ""
        super().__init__(where + message)


class LayoutError(SpecIRError):
    pass


# -- data model ---------------------------------------------------------------

@dataclass(frozen=True)
class Reg:
    name: str
    width: int

    def __str__(self) -> str:
        return self.name


@dataclass(frozen=True)
class Imm:
    value: int
    width: int

    def __str__(self) -> str:
        return str(self.value)


Operand = Reg | Imm


@dataclass(frozen=True)
class GlobalObject:
    name: str
    width: int
    length: int
    base: int | None = None
    user: bool = False
    secret: bool = False
    init: tuple[int, ...] | None = None
    pinned: bool = False

    @property
    def elem_bytes(self) -> int:
        return self.width // 8

    @property
    def size(self) -> int:
        return self.length * self.elem_bytes

    @property
    def end(self) -> int:
        assert self.base is not None
        return self.base + self.size


@dataclass(frozen=True)
class Instruction:
    id: int
    op: str
    dest: str | None
    args: tuple
    width: int | None
    loc: tuple[str, str, int]
    line: int = 0
    sub: str | None = None       # binop/cmp/cast operator; "user" for symbolic

    @property
    def is_terminator(self) -> bool:
        return self.op in TERMINATORS

    @property
    def is_memory(self) -> bool:
        return self.op in ("load", "store")

    @property
    def where(self) -> str:
        f, b, i = self.loc
        return f"{f}:{b}:{i}"

    def __eq__(self, other):
        # source lines are not part of the structure
        if not isinstance(other, Instruction):
            return NotImplemented
        return (self.id, self.op, self.dest, self.args, self.width, self.loc, self.sub) == \
               (other.id, other.op, other.dest, other.args, other.width, other.loc, other.sub)

    def __hash__(self):
        return hash((self.id, self.loc))


@dataclass(frozen=True)
class BasicBlock:
    label: str
    instrs: tuple[Instruction, ...]

    @property
    def terminator(self) -> Instruction:
        return self.instrs[-1]


@dataclass(frozen=True)
class Function:
    name: str
    params: tuple[tuple[str, int], ...]
    blocks: tuple[BasicBlock, ...]

    @property
    def entry(self) -> BasicBlock:
        return self.blocks[0]

    def block(self, label: str) -> BasicBlock:
        for b in self.blocks:
            if b.label == label:
                return b
        raise KeyError(label)


@dataclass(frozen=True)
class Program:
    globals: tuple[GlobalObject, ...]
    functions: Mapping[str, Function]
    entry: str
    _gindex: Mapping[str, GlobalObject] = field(default=None, compare=False, repr=False)
    _iindex: Mapping[int, Instruction] = field(default=None, compare=False, repr=False)
    _blocks: Mapping[tuple[str, str], BasicBlock] = field(default=None, compare=False, repr=False)

    def __post_init__(self):
        object.__setattr__(self, "_gindex", {g.name: g for g in self.globals})
        object.__setattr__(self, "_iindex", {i.id: i for f in self.functions.values()
                                             for b in f.blocks for i in b.instrs})
        object.__setattr__(self, "_blocks", {(f.name, b.label): b for f in self.functions.values()
                                             for b in f.blocks})

    def glob(self, name: str) -> GlobalObject:
        return self._gindex[name]

    def instruction(self, iid: int) -> Instruction:
        return self._iindex[iid]

    def block(self, fn: str, label: str) -> BasicBlock:
        return self._blocks[(fn, label)]

    def instructions(self):
        return self._iindex.values()

    @property
    def entry_function(self) -> Function:
        return self.functions[self.entry]

    def with_globals(self, globs) -> "Program":
        return Program(tuple(globs), self.functions, self.entry)


# -- tokenizer --------------------------------------------------------------

_TOKEN = re.compile(r"""
    (?P<ws>[ \t\r\f\v]+)
  | (?P<nl>\n)
  | (?P<comment>\#[^\n]*)
  | (?P<num>-?0[xX][0-9a-fA-F_]+|-?[0-9][0-9_]*)
  | (?P<ident>[A-Za-z_.$][A-Za-z0-9_.$]*)
  | (?P<punct>[\[\]():,{}=@])
""", re.VERBOSE)


@dataclass
class Tok:
    kind: str
    text: str
    line: int
    col: int


def tokenize(text: str) -> list[Tok]:
    out: list[Tok] = []
    pos = 0
    line, line_start = 1, 0
    while pos < len(text):
        m = _TOKEN.match(text, pos)
        if not m:
            raise SpecIRError(f"unexpected character {text[pos]!r}", line, pos - line_start + 1)
        kind = m.lastgroup
        if kind == "nl":
            line += 1
            line_start = m.end()
        elif kind not in ("ws", "comment"):
            out.append(Tok(kind, m.group(), line, m.start() - line_start + 1))
        pos = m.end()
    out.append(Tok("eof", "", line, pos - line_start + 1))
    return out


# -- parser -----------------------------------------------------------------

class _Parser:
    def __init__(self, text: str):
        self.toks = tokenize(text)
        self.i = 0
        self.next_id = 0

    # token helpers
    def peek(self, k: int = 0) -> Tok:
        return self.toks[min(self.i + k, len(self.toks) - 1)]

    def take(self) -> Tok:
        t = self.toks[self.i]
        self.i += 1
        return t

    def error(self, msg: str, tok: Tok | None = None) -> SpecIRError:
        tok = tok or self.peek()
        return SpecIRError(msg, tok.line, tok.col)

    def expect(self, text: str) -> Tok:
        t = self.peek()
        if t.text != text or t.kind not in ("punct", "ident"):
            raise self.error(f"expected {text!r}, found {t.text or 'end of input'!r}")
        return self.take()

    def ident(self, what: str = "identifier") -> Tok:
        t = self.peek()
        if t.kind != "ident":
            raise self.error(f"expected {what}, found {t.text or 'end of input'!r}")
        return self.take()

    def number(self) -> int:
        t = self.peek()
        if t.kind != "num":
            raise self.error(f"expected number, found {t.text or 'end of input'!r}")
        self.take()
        return int(t.text.replace("_", ""), 0)

    def width(self) -> int:
        t = self.peek()
        w = self.number()
        if w not in WIDTHS and not (1 <= w <= 64):
            raise self.error(f"unsupported width {w}", t)
        return w

    # top level
    def program(self, entry: str | None) -> Program:
        globs: list[GlobalObject] = []
        funcs: dict[str, Function] = {}
        seen: dict[str, Tok] = {}
        pending_fns = []
        while self.peek().kind != "eof":
            t = self.peek()
            if t.text == "global":
                g, tok = self.global_decl()
                if g.name in seen:
                    raise self.error(f"duplicate symbol {g.name!r}", tok)
                seen[g.name] = tok
                globs.append(g)
            elif t.text == "fn":
                start = self.i
                self.take()
                name_tok = self.ident("function name")
                if name_tok.text in seen:
                    raise self.error(f"duplicate symbol {name_tok.text!r}", name_tok)
                seen[name_tok.text] = name_tok
                self.i = start
                pending_fns.append(self.skip_function())
            else:
                raise self.error(f"expected 'global' or 'fn', found {t.text!r}")
        gmap = {g.name: g for g in globs}
        for start in pending_fns:
            self.i = start
            f = self.function(gmap)
            funcs[f.name] = f
        if not funcs:
            raise SpecIRError("program defines no function")
        if entry is None:
            entry = "main" if "main" in funcs else next(iter(funcs))
        if entry not in funcs:
            raise SpecIRError(f"entry function {entry!r} not defined")
        return Program(tuple(globs), funcs, entry)

    def skip_function(self) -> int:
        start = self.i
        while self.peek().text != "{":
            if self.peek().kind == "eof":
                raise self.error("unterminated function header")
            self.take()
        depth = 0
        while True:
            t = self.take()
            if t.kind == "eof":
                raise self.error("missing '}'", t)
            if t.text == "{":
                depth += 1
            elif t.text == "}":
                depth -= 1
                if depth == 0:
                    return start

    def global_decl(self) -> tuple[GlobalObject, Tok]:
        self.expect("global")
        name = self.ident("global name")
        self.expect("[")
        lt = self.peek()
        length = self.number()
        if length < 1:
            raise self.error("global length must be at least 1", lt)
        self.expect("]")
        self.expect(":")
        wt = self.peek()
        width = self.number()
        if width not in WIDTHS:
            raise self.error(f"element width must be one of {WIDTHS}", wt)
        user = secret = False
        base = None
        init = None
        while True:
            t = self.peek()
            if t.text == "user":
                self.take()
                user = True
            elif t.text == "secret":
                self.take()
                secret = True
            elif t.text == "@":
                self.take()
                kw = self.ident()
                if kw.text != "base":
                    raise self.error(f"unknown directive @{kw.text}", kw)
                base = self.number()
            elif t.text == "=":
                self.take()
                self.expect("[")
                vals = []
                while self.peek().text != "]":
                    vals.append(self.number() & ((1 << width) - 1))
                    if self.peek().text == ",":
                        self.take()
                self.expect("]")
                if len(vals) > length:
                    raise self.error(f"initializer of {name.text} has {len(vals)} values for {length} cells", t)
                init = tuple(vals)
            else:
                break
        return GlobalObject(name.text, width, length, base, user, secret, init,
                            pinned=base is not None), name

    def function(self, globs: Mapping[str, GlobalObject]) -> Function:
        self.expect("fn")
        name = self.take().text
        self.expect("(")
        params: list[tuple[str, int]] = []
        regs: dict[str, int] = {}
        while self.peek().text != ")":
            p = self.ident("parameter name")
            self.expect(":")
            w = self.width()
            if p.text in regs:
                raise self.error(f"duplicate parameter {p.text!r}", p)
            regs[p.text] = w
            params.append((p.text, w))
            if self.peek().text == ",":
                self.take()
        self.expect(")")
        self.expect("{")
        raw_blocks: list[tuple[str, Tok, list]] = []
        current: list | None = None
        while self.peek().text != "}":
            t = self.peek()
            if t.kind == "ident" and self.peek(1).text == ":" and t.text not in _KEYWORDS:
                self.take()
                self.take()
                current = []
                raw_blocks.append((t.text, t, current))
                continue
            if current is None:
                current = []
                raw_blocks.append(("entry", t, current))
            current.append(self.raw_instr())
        self.expect("}")
        if not raw_blocks:
            raise self.error(f"function {name} has no body")
        labels: dict[str, Tok] = {}
        for label, tok, _ in raw_blocks:
            if label in labels:
                raise self.error(f"duplicate label {label!r}", tok)
            labels[label] = tok
        blocks = []
        for label, tok, raw in raw_blocks:
            if not raw:
                raise self.error(f"block {label!r} is empty", tok)
            instrs = []
            for idx, (op, toks, first) in enumerate(raw):
                ins = self.resolve(name, label, idx, op, toks, first, regs, globs, labels)
                if ins.is_terminator and idx != len(raw) - 1:
                    raise self.error("terminator must end its block", first)
                instrs.append(ins)
            if not instrs[-1].is_terminator:
                raise self.error(f"block {label!r} does not end in br, jmp or ret", raw[-1][2])
            blocks.append(BasicBlock(label, tuple(instrs)))
        return Function(name, tuple(params), tuple(blocks))

    def raw_instr(self):
        """Collect the tokens of one instruction without interpreting operands."""
        first = self.peek()
        if first.kind != "ident":
            raise self.error(f"expected instruction, found {first.text!r}")
        if first.text in _KEYWORDS:
            op = self.take().text
            toks = []
            if op == "store":
                toks = self.collect(["ident", "[", "*", "]", ",", "*"])
            elif op == "br":
                toks = self.collect(["*", ",", "ident", ",", "ident"])
            elif op == "jmp":
                toks = self.collect(["ident"])
            elif op == "assume":
                toks = self.collect(["*"])
            elif op == "ret":
                nxt = self.peek()
                if nxt.kind == "num" or (nxt.kind == "ident" and nxt.text not in _KEYWORDS
                                         and self.peek(1).text not in ("=", ":")):
                    toks = [self.take()]
            return op, toks, first
        dest = self.take()
        self.expect("=")
        opt = self.ident("opcode")
        op = opt.text
        if op == "const":
            toks = self.collect(["num", "num"])
        elif op == "symbolic":
            toks = self.collect(["num"])
            if self.peek().text == "user":
                toks.append(self.take())
        elif op in BINOPS or op in CMPOPS:
            toks = self.collect(["*", "*"])
        elif op in CASTS:
            toks = self.collect(["num", "*"])
        elif op == "select":
            toks = self.collect(["*", "*", "*"])
        elif op == "load":
            toks = self.collect(["ident", "[", "*", "]"])
        else:
            raise self.error(f"unknown opcode {op!r}", opt)
        return op, [dest] + toks, first

    def collect(self, shape: list[str]) -> list[Tok]:
        out = []
        for s in shape:
            t = self.peek()
            if s == "*":
                if t.kind not in ("ident", "num"):
                    raise self.error(f"expected operand, found {t.text or 'end of input'!r}")
                out.append(self.take())
            elif s in ("ident", "num"):
                if t.kind != s:
                    raise self.error(f"expected {'name' if s == 'ident' else 'number'}, "
                                     f"found {t.text or 'end of input'!r}")
                out.append(self.take())
            else:
                self.expect(s)
        return out

    # semantic resolution
    def resolve(self, fn, label, idx, op, toks, first, regs, globs, labels) -> Instruction:
        loc = (fn, label, idx)
        iid = self.next_id
        self.next_id += 1

        def operand(t: Tok, width: int | None) -> Operand:
            if t.kind == "num":
                if width is None:
                    raise self.error("cannot infer width of literal operand", t)
                return Imm(int(t.text.replace("_", ""), 0) & ((1 << width) - 1), width)
            if t.text not in regs:
                if t.text in globs:
                    raise self.error(f"global {t.text!r} used as a value", t)
                raise self.error(f"undefined register {t.text!r}", t)
            w = regs[t.text]
            if width is not None and w != width:
                raise self.error(f"width mismatch: {t.text} is {w} bits, expected {width}", t)
            return Reg(t.text, w)

        def known_width(t: Tok) -> int | None:
            return None if t.kind == "num" else regs.get(t.text, 0) or None

        def define(t: Tok, w: int):
            prev = regs.get(t.text)
            if t.text in globs:
                raise self.error(f"register {t.text!r} shadows a global", t)
            if prev is not None and prev != w:
                raise self.error(f"width mismatch: {t.text} redefined as {w} bits (was {prev})", t)
            regs[t.text] = w

        def glob(t: Tok) -> GlobalObject:
            if t.text not in globs:
                raise self.error(f"undeclared global {t.text!r}", t)
            return globs[t.text]

        def target(t: Tok) -> str:
            if t.text not in labels:
                raise self.error(f"unresolved label {t.text!r}", t)
            return t.text

        def pair(a: Tok, b: Tok) -> tuple[Operand, Operand]:
            w = known_width(a) or known_width(b)
            if a.kind == "ident" and a.text not in regs:
                operand(a, None)
            return operand(a, w), operand(b, w)

        line = first.line
        if op == "store":
            g = glob(toks[0])
            ix = operand(toks[1], known_width(toks[1]) or 64)
            v = operand(toks[2], g.width)
            return Instruction(iid, "store", None, (g.name, ix, v), g.width, loc, line)
        if op == "br":
            c = operand(toks[0], 1)
            return Instruction(iid, "br", None, (c, target(toks[1]), target(toks[2])), None, loc, line)
        if op == "jmp":
            return Instruction(iid, "jmp", None, (target(toks[0]),), None, loc, line)
        if op == "assume":
            return Instruction(iid, "assume", None, (operand(toks[0], 1),), None, loc, line)
        if op == "fence":
            return Instruction(iid, "fence", None, (), None, loc, line)
        if op == "ret":
            if toks:
                v = operand(toks[0], known_width(toks[0]) or 64)
                return Instruction(iid, "ret", None, (v,), v.width, loc, line)
            return Instruction(iid, "ret", None, (), None, loc, line)
        dest, rest = toks[0], toks[1:]
        if op == "const":
            w = int(rest[0].text, 0)
            if not 1 <= w <= 64:
                raise self.error(f"unsupported width {w}", rest[0])
            val = int(rest[1].text.replace("_", ""), 0) & ((1 << w) - 1)
            define(dest, w)
            return Instruction(iid, "const", dest.text, (Imm(val, w),), w, loc, line)
        if op == "symbolic":
            w = int(rest[0].text, 0)
            if not 1 <= w <= 64:
                raise self.error(f"unsupported width {w}", rest[0])
            define(dest, w)
            user = len(rest) > 1
            return Instruction(iid, "symbolic", dest.text, (), w, loc, line, "user" if user else None)
        if op in BINOPS:
            a, b = pair(rest[0], rest[1])
            define(dest, a.width)
            return Instruction(iid, "binop", dest.text, (a, b), a.width, loc, line, op)
        if op in CMPOPS:
            a, b = pair(rest[0], rest[1])
            define(dest, 1)
            return Instruction(iid, "cmp", dest.text, (a, b), 1, loc, line, op)
        if op in CASTS:
            w = int(rest[0].text, 0)
            a = operand(rest[1], known_width(rest[1]) or w)
            ok = (a.width <= w) if op != "trunc" else (a.width >= w)
            if not ok or not 1 <= w <= 64:
                raise self.error(f"width mismatch: cannot {op} {a.width} bits to {w}", rest[0])
            define(dest, w)
            return Instruction(iid, "cast", dest.text, (a,), w, loc, line, op)
        if op == "select":
            c = operand(rest[0], 1)
            a, b = pair(rest[1], rest[2])
            define(dest, a.width)
            return Instruction(iid, "select", dest.text, (c, a, b), a.width, loc, line)
        if op == "load":
            g = glob(rest[0])
            ix = operand(rest[1], known_width(rest[1]) or 64)
            define(dest, g.width)
            return Instruction(iid, "load", dest.text, (g.name, ix), g.width, loc, line)
        raise self.error(f"unknown opcode {op!r}", first)  # pragma: no cover


def parse_program(text: str | bytes, *, entry: str | None = None,
                  directives: Mapping[str, int] | None = None,
                  origin: int = DEFAULT_ORIGIN, line_bytes: int = DEFAULT_LINE) -> Program:
    """Parse SpecIR text and assign global base addresses."""
    if isinstance(text, bytes):
        try:
            text = text.decode("utf-8")
        except UnicodeDecodeError as exc:
            raise SpecIRError(f"input is not UTF-8: {exc}") from None
    prog = _Parser(text).program(entry)
    return layout_globals(prog, directives or {}, origin=origin, line_bytes=line_bytes)


def load_program(path, **kw) -> Program:
    with open(path, "rb") as fh:
        return parse_program(fh.read(), **kw)


# -- layout -----------------------------------------------------------------

def _align_up(x: int, a: int) -> int:
    return -(-x // a) * a


def layout_globals(program: Program, directives: Mapping[str, int] | None = None, *,
                   origin: int = DEFAULT_ORIGIN, line_bytes: int = DEFAULT_LINE) -> Program:
    """Assign every global its final base address.

    Pinned globals (``@base`` in the text, or an entry of ``directives``) keep
    their address.  The rest are packed in declaration order from ``origin``,
    each starting on a ``line_bytes`` boundary and skipping pinned ranges.
    """
    directives = dict(directives or {})
    for name in directives:
        if name not in program._gindex:
            raise LayoutError(f"directive for undeclared global {name!r}")
    pinned: dict[str, int] = {}
    for g in program.globals:
        if g.name in directives:
            pinned[g.name] = directives[g.name]
        elif g.pinned and g.base is not None:
            pinned[g.name] = g.base
    by_name = {g.name: g for g in program.globals}
    ranges: list[tuple[int, int, str]] = []
    for name, base in pinned.items():
        g = by_name[name]
        if base < 0 or base + g.size > 1 << 64:
            raise LayoutError(f"address {base:#x} of {name} out of range")
        if base % g.elem_bytes:
            raise LayoutError(f"address {base:#x} of {name} is not aligned to {g.elem_bytes} bytes")
        for lo, hi, other in ranges:
            if base < hi and lo < base + g.size:
                raise LayoutError(f"{name} [{base:#x}, {base + g.size:#x}) overlaps {other} [{lo:#x}, {hi:#x})")
        ranges.append((base, base + g.size, name))
    cursor = _align_up(origin, line_bytes)
    out = []
    for g in program.globals:
        if g.name in pinned:
            out.append(replace(g, base=pinned[g.name], pinned=True))
            continue
        base = cursor
        moved = True
        while moved:
            moved = False
            for lo, hi, _ in ranges:
                if base < hi and lo < base + g.size:
                    base = _align_up(hi, line_bytes)
                    moved = True
        ranges.append((base, base + g.size, g.name))
        cursor = _align_up(base + g.size, line_bytes)
        out.append(replace(g, base=base, pinned=False))
    return program.with_globals(out)


def check_disjoint(program: Program) -> None:
    gs = sorted(program.globals, key=lambda g: g.base)
    for a, b in zip(gs, gs[1:]):
        if a.end > b.base:
            raise LayoutError(f"{a.name} and {b.name} overlap")


# -- printing ---------------------------------------------------------------

def _fmt_operand(o) -> str:
    return str(o)


def format_instruction(ins: Instruction) -> str:
    a = ins.args
    op = ins.op
    if op == "const":
        return f"{ins.dest} = const {ins.width} {a[0].value}"
    if op == "symbolic":
        return f"{ins.dest} = symbolic {ins.width}" + (" user" if ins.sub == "user" else "")
    if op in ("binop", "cmp"):
        return f"{ins.dest} = {ins.sub} {a[0]} {a[1]}"
    if op == "cast":
        return f"{ins.dest} = {ins.sub} {ins.width} {a[0]}"
    if op == "select":
        return f"{ins.dest} = select {a[0]} {a[1]} {a[2]}"
    if op == "load":
        return f"{ins.dest} = load {a[0]}[{a[1]}]"
    if op == "store":
        return f"store {a[0]}[{a[1]}], {a[2]}"
    if op == "br":
        return f"br {a[0]}, {a[1]}, {a[2]}"
    if op == "jmp":
        return f"jmp {a[0]}"
    if op == "fence":
        return "fence"
    if op == "assume":
        return f"assume {a[0]}"
    if op == "ret":
        return "ret" + (f" {a[0]}" if a else "")
    raise ValueError(op)  # pragma: no cover


def format_program(program: Program, *, with_bases: bool = False) -> str:
    lines = []
    for g in program.globals:
        s = f"global {g.name}[{g.length}]:{g.width}"
        if g.user:
            s += " user"
        if g.secret:
            s += " secret"
        if g.base is not None and (g.pinned or with_bases):
            s += f" @base {g.base:#x}"
        if g.init is not None:
            s += " = [" + ", ".join(str(v) for v in g.init) + "]"
        lines.append(s)
    for f in program.functions.values():
        lines.append("")
        params = ", ".join(f"{n}:{w}" for n, w in f.params)
        lines.append(f"fn {f.name}({params}) {{")
        for b in f.blocks:
            lines.append(f"{b.label}:")
            for ins in b.instrs:
                lines.append("  " + format_instruction(ins))
        lines.append("}")
    return "\n".join(lines) + "\n"
