"""Kind checking, locus type environments, and membrane typing.

A program types against two environments: a kind environment mapping
variables to C (classical) or Q(n) (a quantum array or channel of width
n), and a locus environment mapping loci to Nor, Had, or EN. Typing
walks each process of each membrane against that membrane's local slice
of the locus environment; gate applications demand a rewrite bringing
the operand locus to the front of one entry, and measurements delete
the measured qubits from their entry.

Processes inside one membrane interleave, so sharing is policed by
footprints instead of sequencing: the qubit sets measured by different
processes must be pairwise disjoint, and a qubit measured by one
process may not appear in any measurement-free process of the same
membrane. Gate footprints may overlap (protocols routinely end with
one process measuring registers another process prepared).
"""
from __future__ import annotations

from dataclasses import dataclass, field
from typing import Iterable, Mapping, Union

from . import qstate as qs
from .gates import GateError, make_gate
from .qstate import CMP_TOL, Locus, Qubit, QuantumState, Range
from . import syntax as sx

Kind = Union[str, tuple[str, int]]  # "C" | ("Q", n)

NOR, HAD, EN = "Nor", "Had", "EN"


class TypingError(Exception):
    """Diagnostic with the violated rule and the membrane it came from."""

    def __init__(self, message: str, rule: str = "type", loc: str = ""):
        self.message, self.rule, self.loc = message, rule, loc
        where = f" (membrane {loc})" if loc else ""
        super().__init__(f"[{rule}] {message}{where}")

    def to_json(self) -> dict:
        return {"severity": "error", "rule": self.rule,
                "location": self.loc, "message": self.message}


class KindError(TypingError):
    def __init__(self, message: str, loc: str = ""):
        super().__init__(message, rule="kind", loc=loc)


class NoRewrite(TypingError):
    def __init__(self, message: str, loc: str = ""):
        super().__init__(message, rule="rewrite", loc=loc)


class WFError(TypingError):
    def __init__(self, message: str, clause: str):
        super().__init__(message, rule=f"wf-{clause}")


# ---------------------------------------------------------------------------
# kinds

def kind_check(omega: Mapping[str, Kind], e: sx.Expr) -> str:
    """C for well-kinded classical expressions; KindError otherwise."""
    if isinstance(e, (sx.Lit, sx.Bits)):
        return "C"
    if isinstance(e, sx.Var):
        kind = omega.get(e.name)
        if kind is None:
            raise KindError(f"unbound variable {e.name!r}")
        if kind != "C":
            raise KindError(f"quantum variable {e.name!r} used in a classical expression")
        return "C"
    if isinstance(e, sx.BitIdx):
        kind = omega.get(e.name)
        if kind is None:
            raise KindError(f"unbound variable {e.name!r}")
        if kind != "C":
            raise KindError(f"cannot bit-index quantum variable {e.name!r}")
        kind_check(omega, e.index)
        return "C"
    if isinstance(e, sx.Not):
        kind_check(omega, e.arg)
        return "C"
    if isinstance(e, sx.Bin):
        if e.op not in ("+", "-", "*", "==", "<"):
            raise KindError(f"operator {e.op!r} has no classical kind")
        kind_check(omega, e.lhs)
        kind_check(omega, e.rhs)
        return "C"
    raise KindError(f"unknown expression {e!r}")


# ---------------------------------------------------------------------------
# environment rewrites

@dataclass(frozen=True)
class RSubtype:
    locus: Locus
    src: str
    dst: str


@dataclass(frozen=True)
class RJoin:
    left: Locus
    right: Locus
    result: Locus
    qtype: str


@dataclass(frozen=True)
class RPermute:
    source: Locus
    perm: tuple[int, ...]
    result: Locus


RewriteStep = Union[RSubtype, RJoin, RPermute]
TypeEnv = dict[Locus, str]


def _join_type(a: str, b: str) -> str:
    return a if a == b else EN


def env_rewrite(sigma: Mapping[Locus, str], goal: Locus,
                loc: str = "") -> tuple[list[RewriteStep], TypeEnv]:
    """Steps bringing goal to the front of a single entry.

    Entries intersecting goal are joined in canonical order, then the
    joined entry is permuted goal-first. Mirrors qstate.rewrite_to_prefix
    exactly so traces replay on states.
    """
    want = goal.qubits()
    if len(set(want)) != len(want):
        raise NoRewrite(f"locus {goal} repeats a qubit", loc)
    want_set = set(want)
    entries = sorted(sigma.items(), key=lambda kv: kv[0])
    touched = [(k, t) for k, t in entries if want_set & set(k.qubits())]
    have = {q for k, _ in touched for q in k.qubits()}
    missing = want_set - have
    if missing:
        names = ", ".join(f"{v}[{i}]@{m}" for m, v, i in sorted(missing))
        raise NoRewrite(f"qubits {names} not available in any locus", loc)

    steps: list[RewriteStep] = []
    cur_locus, cur_type = touched[0]
    for k, t in touched[1:]:
        joined = _join_type(cur_type, t)
        if cur_type != joined:
            steps.append(RSubtype(cur_locus, cur_type, joined))
        if t != joined:
            steps.append(RSubtype(k, t, joined))
        result = qs.locus_of_qubits(cur_locus.qubits() + k.qubits())
        steps.append(RJoin(cur_locus, k, result, joined))
        cur_locus, cur_type = result, joined
    qubits = cur_locus.qubits()
    rest = [q for q in qubits if q not in want_set]
    new_order = want + rest
    if new_order != qubits:
        pos = {q: i for i, q in enumerate(qubits)}
        perm = tuple(pos[q] for q in new_order)
        result = qs.locus_of_qubits(new_order)
        steps.append(RPermute(cur_locus, perm, result))
        cur_locus = result
    sigma2 = {k: t for k, t in entries if k not in {k2 for k2, _ in touched}}
    sigma2[cur_locus] = cur_type
    return steps, sigma2


def replay_on_state(steps: Iterable[RewriteStep], phi: QuantumState) -> QuantumState:
    """Apply a rewrite trace to a state; subtype steps are identities."""
    for step in steps:
        if isinstance(step, RSubtype):
            continue
        if isinstance(step, RJoin):
            lv, rv = phi.get(step.left), phi.get(step.right)
            if lv is None or rv is None:
                raise qs.MalformedRewrite(f"trace join of absent locus at {step}")
            rest = phi.without({step.left, step.right})
            phi = qs.state_of(rest + [(step.result, qs.join(lv, rv))])
        else:
            v = phi.get(step.source)
            if v is None:
                raise qs.MalformedRewrite(f"trace permute of absent locus at {step}")
            rest = phi.without({step.source})
            phi = qs.state_of(rest + [(step.result, qs.reorder(v, list(step.perm)))])
    return phi


# ---------------------------------------------------------------------------
# program typing

@dataclass(frozen=True)
class MeasureSite:
    loc: str
    var: str
    ranges: tuple[Range, ...]


@dataclass
class TypedProgram:
    omega: dict[str, Kind]
    sigma: TypeEnv
    sites: tuple[MeasureSite, ...]


def _peel(m: sx.Membrane) -> tuple[list, sx.MCell | sx.MAirlocked]:
    binders = []
    while isinstance(m, (sx.MNewArray, sx.MNewChannel)):
        binders.append(m)
        m = m.cont
    return binders, m


def _processes(cell: sx.MCell | sx.MAirlocked) -> tuple[sx.Process, ...]:
    if isinstance(cell, sx.MAirlocked):
        return (cell.locked,) + cell.rest
    return cell.processes


def _footprint(p: sx.Process, loc: str) -> set[Qubit]:
    if isinstance(p, sx.PNil):
        return set()
    if isinstance(p, sx.PComm):
        return _footprint(p.cont, loc)
    if isinstance(p, sx.PIf):
        return _footprint(p.then, loc) | _footprint(p.els, loc)
    out = set()
    if isinstance(p.action, (sx.AUnitary, sx.AMeasure)):
        for r in p.action.ranges:
            out |= {(loc, r.var, i) for i in r.indices()}
    return out | _footprint(p.cont, loc)


def _measured(p: sx.Process, loc: str) -> set[Qubit]:
    if isinstance(p, sx.PNil):
        return set()
    if isinstance(p, sx.PComm):
        return _measured(p.cont, loc)
    if isinstance(p, sx.PIf):
        return _measured(p.then, loc) | _measured(p.els, loc)
    out = set()
    if isinstance(p.action, sx.AMeasure):
        out = {(loc, r.var, i) for r in p.action.ranges for i in r.indices()}
    return out | _measured(p.cont, loc)


def has_mea(p: sx.Process) -> bool:
    if isinstance(p, sx.PNil):
        return False
    if isinstance(p, sx.PComm):
        return has_mea(p.cont)
    if isinstance(p, sx.PIf):
        return has_mea(p.then) or has_mea(p.els)
    return isinstance(p.action, sx.AMeasure) or has_mea(p.cont)


def project(sigma: Mapping[Locus, str], loc: str) -> TypeEnv:
    """Per-location slice: keep each entry's fragments at loc, same type."""
    out: TypeEnv = {}
    for k, t in sigma.items():
        qubits = [q for q in k.qubits() if q[0] == loc]
        if qubits:
            out[qs.locus_of_qubits(qubits)] = t
    return out


class _Checker:
    def __init__(self, prog: sx.Program):
        self.prog = prog
        self.omega: dict[str, Kind] = {}
        self.sigma0: TypeEnv = {}
        self.arrays: dict[str, set[str]] = {}  # loc -> array names
        self.chan_ends: dict[str, tuple[str, str]] = {}
        self.sites: list[MeasureSite] = []
        self.measured_all: set[Qubit] = set()

    def bind_quantum(self, var: str, width: int, loc: str):
        kind = ("Q", width)
        old = self.omega.get(var)
        if old is not None and old != kind:
            raise TypingError(
                f"{var!r} bound as {old} and {kind}", rule="kind", loc=loc)
        self.omega[var] = kind

    def gather(self):
        for ch in self.prog.channels:
            self.bind_quantum(ch.chan, ch.width, ch.loc_a)
            self.chan_ends[ch.chan] = (ch.loc_a, ch.loc_b)
            for j in range(ch.width):
                locus = qs.locus_of_qubits(
                    [(ch.loc_a, ch.chan, j), (ch.loc_b, ch.chan, j)])
                self.sigma0[locus] = EN
        for e in self.prog.initial:
            self.bind_quantum(e.var, e.width, e.loc)
            self.arrays.setdefault(e.loc, set()).add(e.var)
            locus = qs.local_locus(e.loc, [Range(e.var, 0, e.width)])
            self.sigma0[locus] = NOR if len(e.kets) == 1 else EN
        for m in self.prog.membranes:
            binders, cell = _peel(m)
            loc = sx.membrane_loc(m)
            for b in binders:
                if isinstance(b, sx.MNewArray):
                    self.bind_quantum(b.var, b.width, loc)
                    self.arrays.setdefault(loc, set()).add(b.var)
                    locus = qs.local_locus(loc, [Range(b.var, 0, b.width)])
                    self.sigma0[locus] = NOR
                else:
                    if b.chan not in self.chan_ends:
                        raise TypingError(
                            f"channel {b.chan!r} has no declaration", loc=loc)
        # classical channel names: any send/recv channel not bound quantum
        for m in self.prog.membranes:
            loc = sx.membrane_loc(m)
            for p in _processes(_peel(m)[1]):
                for chan, is_send in _comm_channels(p):
                    kind = self.omega.get(chan)
                    if kind is not None and kind != "C":
                        rule = "T-Send" if is_send else "T-Rev"
                        raise TypingError(
                            f"channel {chan!r} is quantum; messages are classical",
                            rule=rule, loc=loc)
                    self.omega[chan] = "C"

    def check_locality(self, loc: str, ranges: tuple[Range, ...]):
        for r in ranges:
            kind = self.omega.get(r.var)
            if kind is None or kind == "C":
                raise TypingError(f"{r.var!r} is not a quantum array or channel",
                                  rule="T-OP", loc=loc)
            width = kind[1]
            if not (0 <= r.lo < r.hi <= width):
                raise TypingError(f"range {r} outside {r.var}[0,{width})",
                                  rule="T-OP", loc=loc)
            if r.var in self.arrays.get(loc, set()):
                continue
            ends = self.chan_ends.get(r.var)
            if ends is None or loc not in ends:
                raise TypingError(
                    f"locus {r} does not reside in membrane {loc}",
                    rule="T-Top", loc=loc)

    def walk(self, p: sx.Process, loc: str, omega: dict[str, Kind],
             sigma: TypeEnv) -> TypeEnv:
        while True:
            if isinstance(p, sx.PNil):
                return sigma
            if isinstance(p, sx.PIf):
                try:
                    kind_check(omega, p.cond)
                except KindError as err:
                    raise KindError(err.message, loc=loc) from None
                s_then = self.walk(p.then, loc, dict(omega), dict(sigma))
                s_else = self.walk(p.els, loc, dict(omega), dict(sigma))
                if s_then != s_else:
                    raise TypingError("conditional branches disagree on the "
                                      "locus environment", rule="T-If", loc=loc)
                return s_then
            if isinstance(p, sx.PComm):
                a = p.action
                if omega.get(a.chan) != "C":
                    rule = "T-Send" if isinstance(a, sx.ASend) else "T-Rev"
                    raise TypingError(f"channel {a.chan!r} is not classical",
                                      rule=rule, loc=loc)
                if isinstance(a, sx.ASend):
                    try:
                        kind_check(omega, a.value)
                    except KindError as err:
                        raise KindError(err.message, loc=loc) from None
                else:
                    if a.var in omega:
                        raise TypingError(f"re-binding {a.var!r}",
                                          rule="T-Rev", loc=loc)
                    omega[a.var] = "C"
                p = p.cont
                continue
            a = p.action
            if isinstance(a, sx.APS):
                try:
                    kind_check(omega, a.value)
                except KindError as err:
                    raise KindError(err.message, loc=loc) from None
            elif isinstance(a, sx.AUnitary):
                self.check_locality(loc, a.ranges)
                width = sum(r.width for r in a.ranges)
                try:
                    gate = make_gate(a.gate, list(a.params), width)
                except GateError as err:
                    raise TypingError(str(err), rule="T-OP", loc=loc) from None
                if gate.arity != width:
                    raise TypingError(
                        f"{a.gate} acts on {gate.arity} qubit(s); locus has {width}",
                        rule="T-OP", loc=loc)
                _, sigma = env_rewrite(sigma, qs.local_locus(loc, a.ranges), loc)
            else:
                self.check_locality(loc, a.ranges)
                if a.var in omega:
                    raise TypingError(f"re-binding {a.var!r}", rule="T-Mea", loc=loc)
                omega[a.var] = "C"
                goal = qs.local_locus(loc, a.ranges)
                _, sigma = env_rewrite(sigma, goal, loc)
                entries = sorted(sigma.items(), key=lambda kv: kv[0])
                holder = next(k for k, _ in entries
                              if set(goal.qubits()) <= set(k.qubits()))
                qtype = sigma.pop(holder)
                rest = [q for q in holder.qubits() if q not in set(goal.qubits())]
                if rest:
                    sigma[qs.locus_of_qubits(rest)] = qtype
                self.sites.append(MeasureSite(loc, a.var, a.ranges))
                self.measured_all |= set(goal.qubits())
            p = p.cont

    def check_membrane(self, m: sx.Membrane):
        loc = sx.membrane_loc(m)
        procs = _processes(_peel(m)[1])
        slices = project(self.sigma0, loc)
        measuring = [(p, _measured(p, loc)) for p in procs if has_mea(p)]
        others = [(p, _footprint(p, loc)) for p in procs if not has_mea(p)]
        for i, (_, mea_i) in enumerate(measuring):
            for _, mea_j in measuring[i + 1:]:
                if mea_i & mea_j:
                    q = sorted(mea_i & mea_j)[0]
                    raise TypingError(
                        f"{q[1]}[{q[2]}] is measured by two processes",
                        rule="T-Mem", loc=loc)
        for _, mea_i in measuring:
            for _, fp_j in others:
                if mea_i & fp_j:
                    q = sorted(mea_i & fp_j)[0]
                    raise TypingError(
                        f"{q[1]}[{q[2]}] is measured by one process and used "
                        f"by another", rule="T-Mem", loc=loc)
        for p in procs:
            self.walk(p, loc, dict(self.omega), dict(slices))

    def run(self) -> TypedProgram:
        self.gather()
        for m in self.prog.membranes:
            self.check_membrane(m)
        sigma_out: TypeEnv = {}
        for k, t in self.sigma0.items():
            left = [q for q in k.qubits() if q not in self.measured_all]
            if left:
                sigma_out[qs.locus_of_qubits(left)] = t
        omega_out = dict(self.omega)
        for site in self.sites:
            omega_out.setdefault(site.var, "C")
        return TypedProgram(omega_out, sigma_out, tuple(self.sites))


def _comm_channels(p: sx.Process):
    if isinstance(p, sx.PNil):
        return
    if isinstance(p, sx.PComm):
        yield p.action.chan, isinstance(p.action, sx.ASend)
        yield from _comm_channels(p.cont)
    elif isinstance(p, sx.PIf):
        yield from _comm_channels(p.then)
        yield from _comm_channels(p.els)
    else:
        yield from _comm_channels(p.cont)


def type_check(prog: sx.Program) -> TypedProgram:
    return _Checker(prog).run()


# ---------------------------------------------------------------------------
# well-formedness

def _is_product(v: qs.QuantumValue) -> bool:
    while v.width > 1:
        parts = qs.split(v, 1)
        if parts is qs.NOT_SEPARABLE:
            return False
        v = parts[1]
    return True


def sigma_of_state(phi: QuantumState) -> TypeEnv:
    """The least locus environment a runtime state inhabits.

    Single plain kets are Nor, everything else EN; Had is never inferred
    (it is a source-level refinement, and Had <= EN).
    """
    out: TypeEnv = {}
    for locus, val in phi.items():
        plain = len(val.kets) == 1 and not val.kets[0].frozen
        out[locus] = NOR if plain and abs(val.norm_sq() - 1.0) <= CMP_TOL else EN
    return out


def check_wellformed(omega: Mapping[str, Kind], sigma: Mapping[Locus, str],
                     phi: QuantumState, tol: float = CMP_TOL) -> None:
    dom_s = set(sigma.keys())
    dom_p = {k for k, _ in phi.items()}
    if dom_s != dom_p:
        extra = [str(k) for k in sorted(dom_s ^ dom_p)]
        raise WFError(f"dom(sigma) != dom(phi): {', '.join(extra)}", "domain")
    seen: set[Qubit] = set()
    for locus in sorted(dom_s):
        for q in locus.qubits():
            loc, var, idx = q
            kind = omega.get(var)
            if kind is None or kind == "C" or not idx < kind[1]:
                raise WFError(f"{var}[{idx}]@{loc} escapes its declaration",
                              "domain")
            if q in seen:
                raise WFError(f"{var}[{idx}]@{loc} appears in two loci", "domain")
            seen.add(q)
    for locus, val in phi.items():
        qtype = sigma[locus]
        frozen = any(k.frozen for k in val.kets)
        if qtype == NOR:
            if len(val.kets) != 1 or frozen:
                raise WFError(f"Nor entry {locus} is not a single ket", "Nor")
            if abs(val.norm_sq() - 1.0) > tol:
                raise WFError(f"Nor entry {locus} has norm {val.norm_sq():.6g}",
                              "Nor")
        elif qtype == HAD:
            if frozen or len(val.kets) != 2 ** val.width:
                raise WFError(f"Had entry {locus} is not in phase form", "Had")
            mag = 2 ** (-val.width / 2)
            if any(abs(abs(k.amp) - mag) > tol for k in val.kets):
                raise WFError(f"Had entry {locus} has uneven magnitudes", "Had")
            if not _is_product(val):
                raise WFError(f"Had entry {locus} is entangled", "Had")
        else:
            total = val.norm_sq()
            if total > 1.0 + tol:
                raise WFError(f"EN entry {locus} has norm {total:.6g} > 1", "EN")
            if not frozen and abs(total - 1.0) > tol:
                raise WFError(f"EN entry {locus} has norm {total:.6g} != 1", "EN")
