"""Concrete grammar, parser, pretty-printer, and expansion.

Surface programs (as parsed) may contain process-definition calls,
bounded `rec` blocks, and symbolic indices. `expand_rec` inlines all of
those, leaving closed processes whose loci are literal ranges; the
interpreter and type checker only accept expanded programs.

Grammar (UTF-8, `//` line comments, `.disq` files):

    program     := (channeldecl | procdef | membrane)*
    channeldecl := "channel" IDENT "[" NAT "]" "between" IDENT "," IDENT ";"
    membrane    := "membrane" IDENT "{" (newarray | procdef | process)* "}"
    newarray    := "new" IDENT "[" NAT "]" ("=" ketliteral)? ";"
    procdef     := "def" IDENT "(" (IDENT ("," IDENT)*)? ")" "{" stmt* "}"
    process     := "process" "{" stmt* "}"
    stmt        := locus "*=" gate ";"
                 | IDENT "=" "measure" locus ";"
                 | IDENT "!" expr ";"
                 | IDENT "?" "(" IDENT ")" ";"
                 | "if" expr "{" stmt* "}" ("else" "{" stmt* "}")?
                 | "rec" IDENT "in" "[" cexpr "," cexpr ")" "{" stmt* "}"
                 | IDENT "(" (locus ("," locus)*)? ")" ";"
                 | "ps" "(" expr ")" ";"
                 | "skip" (";")?
    gate        := GATENAME ("(" cexpr ("," cexpr)* ")")?
    locus       := range ("++" range)*
    range       := IDENT | IDENT "[" cexpr "]" | IDENT "[" cexpr "," cexpr ")"
    ketliteral  := ketterm ("+" ketterm)*
    ketterm     := (amp)? "|" BITS ">"
    amp         := IDENT | NUMBER

Statements after an `if` belong to both branches (the classical
conditional guards a prefix of the remaining process). A bare IDENT in a
locus is a process-definition parameter and must be bound at expansion.
"""
from __future__ import annotations

import re
from dataclasses import dataclass, field
from typing import Iterable, Union

from .gates import GATE_NAMES
from .qstate import Range

KEYWORDS = {"membrane", "new", "channel", "between", "process", "def",
            "rec", "in", "if", "else", "measure", "skip", "ps"}


class ParseError(Exception):
    def __init__(self, msg: str, line: int, col: int, expected: tuple[str, ...] = ()):
        self.line, self.col, self.expected = line, col, expected
        want = f" (expected {', '.join(expected)})" if expected else ""
        super().__init__(f"{line}:{col}: {msg}{want}")


class ExpandError(Exception):
    pass


# ---------------------------------------------------------------------------
# expressions (classical, kind C)

@dataclass(frozen=True)
class Lit:
    value: int


@dataclass(frozen=True)
class Var:
    name: str


@dataclass(frozen=True)
class BitIdx:
    name: str
    index: "Expr"


@dataclass(frozen=True)
class Not:
    arg: "Expr"


@dataclass(frozen=True)
class Bin:
    op: str  # + - * ^ == <
    lhs: "Expr"
    rhs: "Expr"


@dataclass(frozen=True)
class Bits:
    """Runtime constant: a measured or received bitstring (big-endian)."""
    bits: str


Expr = Union[Lit, Var, BitIdx, Not, Bin, Bits]


def show_expr(e: Expr) -> str:
    if isinstance(e, Lit):
        return str(e.value)
    if isinstance(e, Var):
        return e.name
    if isinstance(e, Bits):
        return f"'{e.bits}'"
    if isinstance(e, BitIdx):
        base = e.name if isinstance(e.name, str) else show_expr(e.name)
        return f"{base}[{show_expr(e.index)}]"
    if isinstance(e, Not):
        return f"!{show_expr(e.arg)}"
    return f"({show_expr(e.lhs)} {e.op} {show_expr(e.rhs)})"


def const_eval(e: Expr, env: dict[str, int]) -> int:
    if isinstance(e, Lit):
        return e.value
    if isinstance(e, Var):
        if e.name not in env:
            raise ExpandError(f"index/parameter {e.name!r} is not a constant here")
        return env[e.name]
    if isinstance(e, Bin):
        a, b = const_eval(e.lhs, env), const_eval(e.rhs, env)
        if e.op == "+":
            return a + b
        if e.op == "-":
            return a - b
        if e.op == "*":
            return a * b
        if e.op == "^":
            return a ** b
        raise ExpandError(f"operator {e.op!r} not allowed in constant context")
    raise ExpandError(f"{show_expr(e)} is not a constant expression")


def subst_expr(e: Expr, env: dict[str, int], renames: dict[str, str]) -> Expr:
    if isinstance(e, Lit):
        return e
    if isinstance(e, Var):
        if e.name in env:
            return Lit(env[e.name])
        return Var(renames.get(e.name, e.name))
    if isinstance(e, BitIdx):
        return BitIdx(renames.get(e.name, e.name), subst_expr(e.index, env, renames))
    if isinstance(e, Not):
        return Not(subst_expr(e.arg, env, renames))
    return Bin(e.op, subst_expr(e.lhs, env, renames), subst_expr(e.rhs, env, renames))


# ---------------------------------------------------------------------------
# surface syntax

@dataclass(frozen=True)
class SynRange:
    """x[lo,hi) | x[idx] (hi None) | bare parameter x (lo and hi None)."""
    var: str
    lo: Expr | None = None
    hi: Expr | None = None

    def show(self) -> str:
        if self.lo is None:
            return self.var
        if self.hi is None:
            return f"{self.var}[{show_expr(self.lo)}]"
        return f"{self.var}[{show_expr(self.lo)},{show_expr(self.hi)})"


SynLocus = tuple[SynRange, ...]


def show_locus(locus: SynLocus) -> str:
    return " ++ ".join(r.show() for r in locus)


@dataclass(frozen=True)
class SUnitary:
    locus: SynLocus
    gate: str
    params: tuple[Expr, ...] = ()


@dataclass(frozen=True)
class SMeasure:
    var: str
    locus: SynLocus


@dataclass(frozen=True)
class SSend:
    chan: str
    value: Expr


@dataclass(frozen=True)
class SRecv:
    chan: str
    var: str


@dataclass(frozen=True)
class SIf:
    cond: Expr
    then: tuple["Stmt", ...]
    els: tuple["Stmt", ...] = ()


@dataclass(frozen=True)
class SRec:
    var: str
    lo: Expr
    hi: Expr
    body: tuple["Stmt", ...]


@dataclass(frozen=True)
class SCall:
    name: str
    args: tuple[SynLocus, ...]


@dataclass(frozen=True)
class SPS:
    value: Expr


@dataclass(frozen=True)
class SSkip:
    pass


Stmt = Union[SUnitary, SMeasure, SSend, SRecv, SIf, SRec, SCall, SPS, SSkip]


@dataclass(frozen=True)
class KetTerm:
    amp: Expr | None  # Var = symbolic amplitude; Lit = integer amplitude
    bits: str


@dataclass(frozen=True)
class NewDecl:
    var: str
    width: int
    init: tuple[KetTerm, ...] | None = None


@dataclass(frozen=True)
class ProcDef:
    name: str
    params: tuple[str, ...]
    body: tuple[Stmt, ...]


@dataclass(frozen=True)
class ChannelDecl:
    chan: str
    width: int
    loc_a: str
    loc_b: str


@dataclass(frozen=True)
class SurfaceMembrane:
    loc: str
    news: tuple[NewDecl, ...]
    defs: tuple[ProcDef, ...]
    processes: tuple[tuple[Stmt, ...], ...]


@dataclass(frozen=True)
class SurfaceProgram:
    channels: tuple[ChannelDecl, ...]
    defs: tuple[ProcDef, ...]
    membranes: tuple[SurfaceMembrane, ...]


# ---------------------------------------------------------------------------
# core (expanded) syntax — what the type checker and interpreter consume

@dataclass(frozen=True)
class ASend:
    chan: str
    value: Expr


@dataclass(frozen=True)
class ARecv:
    chan: str
    var: str


@dataclass(frozen=True)
class AUnitary:
    ranges: tuple[Range, ...]
    gate: str
    params: tuple[int, ...] = ()


@dataclass(frozen=True)
class AMeasure:
    var: str
    ranges: tuple[Range, ...]


@dataclass(frozen=True)
class APS:
    value: Expr


@dataclass(frozen=True)
class PNil:
    pass


@dataclass(frozen=True)
class PComm:
    action: ASend | ARecv
    cont: "Process"


@dataclass(frozen=True)
class PLocal:
    action: AUnitary | AMeasure | APS
    cont: "Process"


@dataclass(frozen=True)
class PIf:
    cond: Expr
    then: "Process"
    els: "Process"


Process = Union[PNil, PComm, PLocal, PIf]


@dataclass(frozen=True)
class MCell:
    loc: str
    processes: tuple[Process, ...]


@dataclass(frozen=True)
class MNewArray:
    var: str
    width: int
    cont: "Membrane"


@dataclass(frozen=True)
class MNewChannel:
    chan: str
    width: int
    cont: "Membrane"


@dataclass(frozen=True)
class MAirlocked:
    loc: str
    locked: Process
    rest: tuple[Process, ...]


Membrane = Union[MCell, MNewArray, MNewChannel, MAirlocked]


def membrane_loc(m: Membrane) -> str:
    while isinstance(m, (MNewArray, MNewChannel)):
        m = m.cont
    return m.loc


@dataclass(frozen=True)
class InitEntry:
    loc: str
    var: str
    width: int
    kets: tuple[KetTerm, ...]


@dataclass(frozen=True)
class Program:
    membranes: tuple[Membrane, ...]
    channels: tuple[ChannelDecl, ...]
    initial: tuple[InitEntry, ...]


def show_process(p: Process) -> str:
    if isinstance(p, PNil):
        return "0"
    if isinstance(p, PComm):
        a = p.action
        head = f"{a.chan}!{show_expr(a.value)}" if isinstance(a, ASend) \
            else f"{a.chan}?({a.var})"
        return f"{head}.{show_process(p.cont)}"
    if isinstance(p, PLocal):
        a = p.action
        if isinstance(a, AUnitary):
            ps = f"({','.join(map(str, a.params))})" if a.params else ""
            head = f"{' ++ '.join(map(str, a.ranges))} *= {a.gate}{ps}"
        elif isinstance(a, AMeasure):
            head = f"{a.var} = measure {' ++ '.join(map(str, a.ranges))}"
        else:
            head = f"ps({show_expr(a.value)})"
        return f"{head}.{show_process(p.cont)}"
    return (f"if {show_expr(p.cond)} then ({show_process(p.then)}) "
            f"else ({show_process(p.els)})")


# ---------------------------------------------------------------------------
# lexer

_TOKEN_RE = re.compile(r"""
    (?P<ws>\s+|//[^\n]*)
  | (?P<num>\d+\.\d+|\d+)
  | (?P<ident>[A-Za-z_][A-Za-z_0-9']*)
  | (?P<op>\+\+|\*=|==|[{}()\[\];,.!?|<>=+*^/-])
""", re.VERBOSE)


@dataclass(frozen=True)
class Token:
    kind: str  # num | ident | op | eof
    text: str
    line: int
    col: int


def tokenize(text: str) -> list[Token]:
    out, pos, line, bol = [], 0, 1, 0
    while pos < len(text):
        m = _TOKEN_RE.match(text, pos)
        if not m:
            raise ParseError(f"stray character {text[pos]!r}", line, pos - bol + 1)
        kind = m.lastgroup
        tok = m.group()
        if kind != "ws":
            out.append(Token(kind, tok, line, pos - bol + 1))
        nl = tok.count("\n")
        if nl:
            line += nl
            bol = pos + tok.rindex("\n") + 1
        pos = m.end()
    out.append(Token("eof", "", line, len(text) - bol + 1))
    return out


# ---------------------------------------------------------------------------
# parser

class _Parser:
    def __init__(self, text: str):
        self.toks = tokenize(text)
        self.i = 0

    def peek(self, ahead: int = 0) -> Token:
        return self.toks[min(self.i + ahead, len(self.toks) - 1)]

    def next(self) -> Token:
        t = self.toks[self.i]
        if t.kind != "eof":
            self.i += 1
        return t

    def fail(self, msg: str, *expected: str):
        t = self.peek()
        raise ParseError(f"{msg}, found {t.text!r}" if t.text else f"{msg} at end of input",
                         t.line, t.col, expected)

    def eat(self, text: str) -> Token:
        t = self.peek()
        if t.text != text:
            self.fail(f"expected {text!r}", text)
        return self.next()

    def eat_ident(self, what: str = "identifier") -> str:
        t = self.peek()
        if t.kind != "ident" or t.text in KEYWORDS:
            self.fail(f"expected {what}", what)
        return self.next().text

    def at(self, text: str) -> bool:
        return self.peek().text == text

    # --- program ---

    def program(self) -> SurfaceProgram:
        channels, defs, membranes = [], [], []
        while not self.at(""):
            if self.at("channel"):
                channels.append(self.channeldecl())
            elif self.at("def"):
                defs.append(self.procdef())
            elif self.at("membrane"):
                membranes.append(self.membrane())
            else:
                self.fail("expected declaration", "channel", "def", "membrane")
        prog = SurfaceProgram(tuple(channels), tuple(defs), tuple(membranes))
        _validate_surface(prog)
        return prog

    def channeldecl(self) -> ChannelDecl:
        self.eat("channel")
        chan = self.eat_ident("channel name")
        self.eat("[")
        width = self.nat()
        self.eat("]")
        self.eat("between")
        a = self.eat_ident("location")
        self.eat(",")
        b = self.eat_ident("location")
        self.eat(";")
        return ChannelDecl(chan, width, a, b)

    def procdef(self) -> ProcDef:
        self.eat("def")
        name = self.eat_ident("definition name")
        self.eat("(")
        params = []
        if not self.at(")"):
            params.append(self.eat_ident("parameter"))
            while self.at(","):
                self.next()
                params.append(self.eat_ident("parameter"))
        self.eat(")")
        body = self.block()
        return ProcDef(name, tuple(params), body)

    def membrane(self) -> SurfaceMembrane:
        self.eat("membrane")
        loc = self.eat_ident("location")
        self.eat("{")
        news, defs, procs = [], [], []
        while not self.at("}"):
            if self.at("new"):
                news.append(self.newarray())
            elif self.at("def"):
                defs.append(self.procdef())
            elif self.at("process"):
                self.next()
                procs.append(self.block())
            else:
                self.fail("expected membrane item", "new", "def", "process")
        self.eat("}")
        if not procs:
            self.fail("membrane needs at least one process")
        return SurfaceMembrane(loc, tuple(news), tuple(defs), tuple(procs))

    def newarray(self) -> NewDecl:
        self.eat("new")
        var = self.eat_ident("array name")
        self.eat("[")
        width = self.nat()
        self.eat("]")
        init = None
        if self.at("="):
            self.next()
            init = self.ketliteral(width)
        self.eat(";")
        return NewDecl(var, width, init)

    def nat(self) -> int:
        t = self.peek()
        if t.kind != "num" or "." in t.text:
            self.fail("expected a natural number", "number")
        self.next()
        return int(t.text)

    def ketliteral(self, width: int) -> tuple[KetTerm, ...]:
        terms = [self.ketterm(width)]
        while self.at("+"):
            self.next()
            terms.append(self.ketterm(width))
        return tuple(terms)

    def ketterm(self, width: int) -> KetTerm:
        amp: Expr | None = None
        t = self.peek()
        if t.kind == "ident":
            amp = Var(self.next().text)
        elif t.kind == "num":
            if "." in t.text:
                self.fail("ket amplitudes are symbols or integers")
            amp = Lit(int(self.next().text))
        self.eat("|")
        bits_tok = self.peek()
        if bits_tok.kind != "num" or not set(bits_tok.text) <= {"0", "1"}:
            self.fail("expected a bitstring", "bits")
        self.next()
        bits = bits_tok.text
        if len(bits) != width:
            raise ParseError(f"ket |{bits}> has {len(bits)} bits, array has {width}",
                             bits_tok.line, bits_tok.col)
        self.eat(">")
        return KetTerm(amp, bits)

    # --- statements ---

    def block(self) -> tuple[Stmt, ...]:
        self.eat("{")
        stmts = []
        while not self.at("}"):
            stmts.append(self.stmt())
        self.eat("}")
        return tuple(stmts)

    def stmt(self) -> Stmt:
        t = self.peek()
        if t.text == "skip":
            self.next()
            if self.at(";"):
                self.next()
            return SSkip()
        if t.text == "if":
            self.next()
            cond = self.expr()
            then = self.block()
            els: tuple[Stmt, ...] = ()
            if self.at("else"):
                self.next()
                els = self.block()
            return SIf(cond, then, els)
        if t.text == "rec":
            self.next()
            var = self.eat_ident("index variable")
            self.eat("in")
            self.eat("[")
            lo = self.expr()
            self.eat(",")
            hi = self.expr()
            self.eat(")")
            body = self.block()
            return SRec(var, lo, hi, body)
        if t.text == "ps":
            self.next()
            self.eat("(")
            value = self.expr()
            self.eat(")")
            self.eat(";")
            return SPS(value)
        if t.kind != "ident":
            self.fail("expected a statement", "statement")
        nxt = self.peek(1).text
        if nxt == "!":
            chan = self.eat_ident("channel")
            self.eat("!")
            value = self.expr()
            self.eat(";")
            return SSend(chan, value)
        if nxt == "?":
            chan = self.eat_ident("channel")
            self.eat("?")
            self.eat("(")
            var = self.eat_ident("variable")
            self.eat(")")
            self.eat(";")
            return SRecv(chan, var)
        if nxt == "=" and self.peek(2).text == "measure":
            var = self.eat_ident("variable")
            self.eat("=")
            self.eat("measure")
            locus = self.locus()
            self.eat(";")
            return SMeasure(var, locus)
        if nxt == "(" and t.text not in GATE_NAMES:
            name = self.eat_ident("definition name")
            self.eat("(")
            args = []
            if not self.at(")"):
                args.append(self.locus())
                while self.at(","):
                    self.next()
                    args.append(self.locus())
            self.eat(")")
            self.eat(";")
            return SCall(name, tuple(args))
        locus = self.locus()
        self.eat("*=")
        gate = self.peek()
        if gate.kind != "ident" or gate.text not in GATE_NAMES:
            self.fail("expected a gate name", *sorted(GATE_NAMES))
        self.next()
        params: list[Expr] = []
        if self.at("("):
            self.next()
            params.append(self.expr())
            while self.at(","):
                self.next()
                params.append(self.expr())
            self.eat(")")
        self.eat(";")
        return SUnitary(locus, gate.text, tuple(params))

    def locus(self) -> SynLocus:
        ranges = [self.range()]
        while self.at("++"):
            self.next()
            ranges.append(self.range())
        return tuple(ranges)

    def range(self) -> SynRange:
        var = self.eat_ident("array name")
        if not self.at("["):
            return SynRange(var)
        self.next()
        lo = self.expr()
        if self.at(","):
            self.next()
            hi = self.expr()
            self.eat(")")
            return SynRange(var, lo, hi)
        self.eat("]")
        return SynRange(var, lo)

    # --- expressions: cmp > add > mul > pow > unary ---

    def expr(self) -> Expr:
        e = self.add()
        if self.at("==") or self.at("<"):
            op = self.next().text
            return Bin("==" if op == "==" else "<", e, self.add())
        return e

    def add(self) -> Expr:
        e = self.mul()
        while self.at("+") or self.at("-"):
            op = self.next().text
            e = Bin(op, e, self.mul())
        return e

    def mul(self) -> Expr:
        e = self.pow()
        while self.at("*"):
            self.next()
            e = Bin("*", e, self.pow())
        return e

    def pow(self) -> Expr:
        e = self.unary()
        if self.at("^"):
            self.next()
            return Bin("^", e, self.pow())
        return e

    def unary(self) -> Expr:
        if self.at("!"):
            self.next()
            return Not(self.unary())
        t = self.peek()
        if t.text == "(":
            self.next()
            e = self.expr()
            self.eat(")")
            return e
        if t.kind == "num":
            if "." in t.text:
                self.fail("expected an integer")
            self.next()
            return Lit(int(t.text))
        if t.kind == "ident" and t.text not in KEYWORDS:
            name = self.next().text
            if self.at("["):
                self.next()
                idx = self.expr()
                self.eat("]")
                return BitIdx(name, idx)
            return Var(name)
        self.fail("expected an expression", "expression")


def _validate_surface(prog: SurfaceProgram):
    locs = [m.loc for m in prog.membranes]
    if len(set(locs)) != len(locs):
        raise ParseError("duplicate membrane location", 1, 1)
    seen_chan: set[str] = set()
    for ch in prog.channels:
        if ch.chan in seen_chan:
            raise ParseError(f"channel {ch.chan!r} declared twice", 1, 1)
        seen_chan.add(ch.chan)
        if ch.loc_a == ch.loc_b:
            raise ParseError(f"channel {ch.chan!r} must join two distinct membranes", 1, 1)
        for loc in (ch.loc_a, ch.loc_b):
            if loc not in locs:
                raise ParseError(f"channel {ch.chan!r} names unknown membrane {loc!r}", 1, 1)


def parse(text: str) -> SurfaceProgram:
    return _Parser(text).program()


# ---------------------------------------------------------------------------
# pretty-printer (surface)

def print_program(prog: SurfaceProgram) -> str:
    out: list[str] = []
    for ch in prog.channels:
        out.append(f"channel {ch.chan}[{ch.width}] between {ch.loc_a}, {ch.loc_b};")
    for d in prog.defs:
        out.append(_print_def(d, ""))
    for m in prog.membranes:
        out.append(f"membrane {m.loc} {{")
        for nd in m.news:
            init = ""
            if nd.init is not None:
                init = " = " + " + ".join(_print_ketterm(t) for t in nd.init)
            out.append(f"  new {nd.var}[{nd.width}]{init};")
        for d in m.defs:
            out.append(_print_def(d, "  "))
        for proc in m.processes:
            out.append("  process {")
            out.extend(_print_stmts(proc, "    "))
            out.append("  }")
        out.append("}")
    return "\n".join(out) + "\n"


def _print_ketterm(t: KetTerm) -> str:
    amp = "" if t.amp is None else (t.amp.name if isinstance(t.amp, Var) else str(t.amp.value))
    return f"{amp}|{t.bits}>"


def _print_def(d: ProcDef, indent: str) -> str:
    lines = [f"{indent}def {d.name}({', '.join(d.params)}) {{"]
    lines.extend(_print_stmts(d.body, indent + "  "))
    lines.append(f"{indent}}}")
    return "\n".join(lines)


def _print_stmts(stmts: Iterable[Stmt], indent: str) -> list[str]:
    out = []
    for s in stmts:
        if isinstance(s, SSkip):
            out.append(f"{indent}skip;")
        elif isinstance(s, SUnitary):
            ps = f"({', '.join(show_expr(p) for p in s.params)})" if s.params else ""
            out.append(f"{indent}{show_locus(s.locus)} *= {s.gate}{ps};")
        elif isinstance(s, SMeasure):
            out.append(f"{indent}{s.var} = measure {show_locus(s.locus)};")
        elif isinstance(s, SSend):
            out.append(f"{indent}{s.chan} ! {show_expr(s.value)};")
        elif isinstance(s, SRecv):
            out.append(f"{indent}{s.chan} ? ({s.var});")
        elif isinstance(s, SPS):
            out.append(f"{indent}ps({show_expr(s.value)});")
        elif isinstance(s, SCall):
            args = ", ".join(show_locus(a) for a in s.args)
            out.append(f"{indent}{s.name}({args});")
        elif isinstance(s, SRec):
            out.append(f"{indent}rec {s.var} in [{show_expr(s.lo)}, {show_expr(s.hi)}) {{")
            out.extend(_print_stmts(s.body, indent + "  "))
            out.append(f"{indent}}}")
        elif isinstance(s, SIf):
            out.append(f"{indent}if {show_expr(s.cond)} {{")
            out.extend(_print_stmts(s.then, indent + "  "))
            if s.els:
                out.append(f"{indent}}} else {{")
                out.extend(_print_stmts(s.els, indent + "  "))
            out.append(f"{indent}}}")
        else:
            raise AssertionError(s)
    return out


# ---------------------------------------------------------------------------
# expansion

class _Expander:
    def __init__(self, prog: SurfaceProgram):
        self.prog = prog
        self.fresh = 0
        self.global_defs = {d.name: d for d in prog.defs}

    def expand(self) -> Program:
        membranes = []
        initial = []
        for m in self.prog.membranes:
            defs = dict(self.global_defs)
            defs.update({d.name: d for d in m.defs})
            procs = []
            for stmts in m.processes:
                procs.append(self.stmts_to_process(stmts, PNil(), {}, {}, defs, ()))
            body: Membrane = MCell(m.loc, tuple(procs))
            for nd in reversed(m.news):
                if nd.init is None:
                    body = MNewArray(nd.var, nd.width, body)
                else:
                    initial.append(InitEntry(m.loc, nd.var, nd.width, nd.init))
            for ch in reversed(self.prog.channels):
                if m.loc in (ch.loc_a, ch.loc_b):
                    body = MNewChannel(ch.chan, ch.width, body)
            membranes.append(body)
        return Program(tuple(membranes), self.prog.channels, tuple(initial))

    def stmts_to_process(self, stmts: tuple[Stmt, ...], tail: Process,
                         env: dict[str, int], renames: dict[str, str],
                         defs: dict[str, ProcDef], stack: tuple[str, ...],
                         locus_params: dict[str, SynLocus] | None = None) -> Process:
        locus_params = locus_params or {}
        proc = tail
        for s in reversed(stmts):
            proc = self.stmt_to_process(s, proc, env, renames, defs, stack, locus_params)
        return proc

    def stmt_to_process(self, s: Stmt, cont: Process, env: dict[str, int],
                        renames: dict[str, str], defs: dict[str, ProcDef],
                        stack: tuple[str, ...],
                        locus_params: dict[str, SynLocus]) -> Process:
        if isinstance(s, SSkip):
            return cont
        if isinstance(s, SUnitary):
            ranges = self.resolve_locus(s.locus, env, locus_params)
            params = tuple(const_eval(subst_expr(p, env, renames), env) for p in s.params)
            return PLocal(AUnitary(ranges, s.gate, params), cont)
        if isinstance(s, SMeasure):
            ranges = self.resolve_locus(s.locus, env, locus_params)
            var = renames.get(s.var, s.var)
            return PLocal(AMeasure(var, ranges), cont)
        if isinstance(s, SSend):
            return PComm(ASend(s.chan, subst_expr(s.value, env, renames)), cont)
        if isinstance(s, SRecv):
            var = renames.get(s.var, s.var)
            return PComm(ARecv(s.chan, var), cont)
        if isinstance(s, SPS):
            return PLocal(APS(subst_expr(s.value, env, renames)), cont)
        if isinstance(s, SIf):
            cond = subst_expr(s.cond, env, renames)
            then = self.stmts_to_process(s.then, cont, env, renames, defs, stack, locus_params)
            els = self.stmts_to_process(s.els, cont, env, renames, defs, stack, locus_params)
            return PIf(cond, then, els)
        if isinstance(s, SRec):
            lo = const_eval(subst_expr(s.lo, env, renames), env)
            hi = const_eval(subst_expr(s.hi, env, renames), env)
            proc = cont
            for j in range(hi - 1, lo - 1, -1):
                env2 = dict(env)
                env2[s.var] = j
                proc = self.stmts_to_process(s.body, proc, env2, renames, defs, stack, locus_params)
            return proc
        if isinstance(s, SCall):
            if s.name in stack:
                raise ExpandError(f"recursive definition cycle through {s.name!r}")
            d = defs.get(s.name)
            if d is None:
                raise ExpandError(f"unknown process definition {s.name!r}")
            if len(s.args) != len(d.params):
                raise ExpandError(
                    f"{s.name} takes {len(d.params)} argument(s), got {len(s.args)}")
            args = tuple(self.resolve_locus_syn(a, env, locus_params) for a in s.args)
            sub_params = dict(zip(d.params, args))
            sub_renames = {}
            for v in _bound_vars(d.body):
                self.fresh += 1
                sub_renames[v] = f"{v}%{self.fresh}"
            return self.stmts_to_process(d.body, cont, {}, sub_renames, defs,
                                         stack + (s.name,), sub_params)
        raise AssertionError(s)

    def resolve_locus_syn(self, locus: SynLocus, env: dict[str, int],
                          locus_params: dict[str, SynLocus]) -> SynLocus:
        """Resolve indices to literals and splice parameters, staying surface."""
        out: list[SynRange] = []
        for r in locus:
            if r.lo is None:
                if r.var not in locus_params:
                    raise ExpandError(f"unbound locus parameter {r.var!r}")
                out.extend(locus_params[r.var])
                continue
            if r.var in locus_params:
                raise ExpandError(f"parameter {r.var!r} cannot be indexed")
            lo = const_eval(r.lo, env)
            hi = lo + 1 if r.hi is None else const_eval(r.hi, env)
            out.append(SynRange(r.var, Lit(lo), Lit(hi)))
        return tuple(out)

    def resolve_locus(self, locus: SynLocus, env: dict[str, int],
                      locus_params: dict[str, SynLocus]) -> tuple[Range, ...]:
        resolved = self.resolve_locus_syn(locus, env, locus_params)
        ranges = []
        for r in resolved:
            lo, hi = r.lo.value, r.hi.value
            if hi < lo:
                raise ExpandError(f"range {r.var}[{lo},{hi}) is reversed")
            if hi > lo:
                ranges.append(Range(r.var, lo, hi))
        if not ranges:
            raise ExpandError("empty locus")
        return tuple(ranges)


def _bound_vars(stmts: tuple[Stmt, ...]) -> list[str]:
    out = []
    for s in stmts:
        if isinstance(s, SMeasure):
            out.append(s.var)
        elif isinstance(s, SRecv):
            out.append(s.var)
        elif isinstance(s, SIf):
            out.extend(_bound_vars(s.then))
            out.extend(_bound_vars(s.els))
        elif isinstance(s, SRec):
            out.extend(_bound_vars(s.body))
    return sorted(set(out))


def expand_rec(prog: SurfaceProgram) -> Program:
    return _Expander(prog).expand()


def parse_program(text: str) -> Program:
    return expand_rec(parse(text))
