"""The two-level labeled transition system.

A configuration pairs a quantum state with a multiset of membranes. One
step has two layers of branching: a nondeterministic choice (which
membrane acts, or which membrane pair synchronizes) and, inside each
choice, a probability distribution over moves that always sums to 1.

Choice kinds, in canonical order:

  comm     two airlocked membranes exchange a classical value (prob 1)
  newchan  two membranes create the entangled pairs of a channel (prob 1)
  newvar   a membrane allocates a zeroed array (prob 1)
  end      a membrane whose processes are all 0 dissolves (prob 1)
  select   a membrane schedules one of its n processes, each with
           weight 1/n: a communication head airlocks, a local head takes
           its move (measurements fan out per outcome d with p_d/n),
           and a finished process moves to itself
  rev      an airlocked membrane releases the airlock (prob 1)

Local moves follow a localize/restore discipline: the operand locus is
rewritten to the front of one entry, every qubit of that entry held by
other locations is frozen away, the process rule runs on the local
view, and the frozen bits are restored in front afterwards.

Classical variables are resolved by substitution: measurement binds the
outcome bitstring, receive binds the evaluated message.
"""
from __future__ import annotations

import math
import random
from dataclasses import dataclass
from typing import Callable, Iterable, Union

import numpy as np

from . import qstate as qs
from . import syntax as sx
from .gates import apply_gate, make_gate
from .qstate import QuantumState


class SemanticsError(Exception):
    pass


class EvalError(SemanticsError):
    pass


class ScriptError(SemanticsError):
    pass


class StuckError(SemanticsError):
    pass


class DivergenceError(SemanticsError):
    pass


STOCHASTIC_TOL = 1e-12


# ---------------------------------------------------------------------------
# classical expressions: substitution and evaluation

def subst_expr(e: sx.Expr, var: str, value: sx.Expr) -> sx.Expr:
    if isinstance(e, (sx.Lit, sx.Bits)):
        return e
    if isinstance(e, sx.Var):
        return value if e.name == var else e
    if isinstance(e, sx.BitIdx):
        idx = subst_expr(e.index, var, value)
        if e.name == var:
            return sx.BitIdx(value, idx) if isinstance(value, sx.Bits) \
                else sx.BitIdx(e.name, idx)
        return sx.BitIdx(e.name, idx)
    if isinstance(e, sx.Not):
        return sx.Not(subst_expr(e.arg, var, value))
    return sx.Bin(e.op, subst_expr(e.lhs, var, value), subst_expr(e.rhs, var, value))


def subst_process(p: sx.Process, var: str, value: sx.Expr) -> sx.Process:
    if isinstance(p, sx.PNil):
        return p
    if isinstance(p, sx.PComm):
        a = p.action
        if isinstance(a, sx.ASend):
            a = sx.ASend(a.chan, subst_expr(a.value, var, value))
        return sx.PComm(a, subst_process(p.cont, var, value))
    if isinstance(p, sx.PIf):
        return sx.PIf(subst_expr(p.cond, var, value),
                      subst_process(p.then, var, value),
                      subst_process(p.els, var, value))
    a = p.action
    if isinstance(a, sx.APS):
        a = sx.APS(subst_expr(a.value, var, value))
    return sx.PLocal(a, subst_process(p.cont, var, value))


def eval_expr(e: sx.Expr) -> int:
    if isinstance(e, sx.Lit):
        return e.value
    if isinstance(e, sx.Bits):
        return int(e.bits, 2) if e.bits else 0
    if isinstance(e, sx.Var):
        raise EvalError(f"unbound classical variable {e.name!r}")
    if isinstance(e, sx.BitIdx):
        if not isinstance(e.name, sx.Bits):
            raise EvalError(f"unbound classical variable {e.name!r}")
        bits = e.name.bits
        i = eval_expr(e.index)
        if not 0 <= i < len(bits):
            raise EvalError(f"bit index {i} outside '{bits}'")
        return int(bits[i])
    if isinstance(e, sx.Not):
        return int(eval_expr(e.arg) == 0)
    a, b = eval_expr(e.lhs), eval_expr(e.rhs)
    if e.op == "+":
        return a + b
    if e.op == "-":
        return a - b
    if e.op == "*":
        return a * b
    if e.op == "^":
        return a ** b
    if e.op == "==":
        return int(a == b)
    if e.op == "<":
        return int(a < b)
    raise EvalError(f"unknown operator {e.op!r}")


# ---------------------------------------------------------------------------
# configurations

def _proc_key(p: sx.Process) -> str:
    return sx.show_process(p)


def _sorted_procs(procs: Iterable[sx.Process]) -> tuple[sx.Process, ...]:
    return tuple(sorted(procs, key=_proc_key))


def canonical_membrane(m: sx.Membrane) -> sx.Membrane:
    if isinstance(m, sx.MNewArray):
        return sx.MNewArray(m.var, m.width, canonical_membrane(m.cont))
    if isinstance(m, sx.MNewChannel):
        return sx.MNewChannel(m.chan, m.width, canonical_membrane(m.cont))
    if isinstance(m, sx.MAirlocked):
        return sx.MAirlocked(m.loc, m.locked, _sorted_procs(m.rest))
    return sx.MCell(m.loc, _sorted_procs(m.processes))


@dataclass(frozen=True)
class Configuration:
    state: QuantumState
    membranes: tuple[sx.Membrane, ...]
    channels: tuple[sx.ChannelDecl, ...] = ()

    @property
    def terminated(self) -> bool:
        return not self.membranes


def make_config(state: QuantumState, membranes: Iterable[sx.Membrane],
                channels: tuple[sx.ChannelDecl, ...] = ()) -> Configuration:
    ms = tuple(sorted((canonical_membrane(m) for m in membranes),
                      key=sx.membrane_loc))
    return Configuration(state, ms, channels)


def initial_configuration(prog: sx.Program,
                          amps: dict[str, complex] | None = None,
                          tol: float = 1e-6) -> Configuration:
    """Install declared initial values and wrap the membranes.

    Initialized arrays are part of the premise, not a step: their state
    exists from the start. Symbolic amplitudes resolve through amps.
    """
    amps = amps or {}
    phi = qs.EMPTY_STATE
    for e in prog.initial:
        kets = []
        for term in e.kets:
            if term.amp is None:
                amp = 1.0 + 0j
            elif isinstance(term.amp, sx.Lit):
                amp = complex(term.amp.value)
            else:
                if term.amp.name not in amps:
                    raise SemanticsError(
                        f"amplitude {term.amp.name!r} has no value; pass it "
                        f"via the amplitude map")
                amp = complex(amps[term.amp.name])
            kets.append((amp, term.bits))
        val = qs.value(kets, e.width)
        if abs(val.norm_sq() - 1.0) > tol:
            raise SemanticsError(
                f"initial value for {e.var}@{e.loc} has norm "
                f"{math.sqrt(val.norm_sq()):.6g}, expected 1")
        locus = qs.local_locus(e.loc, [qs.Range(e.var, 0, e.width)])
        phi = qs.store_entry(phi, locus, val)
    return make_config(phi, prog.membranes, prog.channels)


# ---------------------------------------------------------------------------
# labels, transitions, choices

@dataclass(frozen=True)
class Label:
    choice: str             # "l" or "l.r"
    obs: str | None         # measurement outcome d, if any
    prob: float
    var: str | None = None  # the variable a measurement bound
    site: str | None = None  # measured operand, "loc:ranges"

    def __str__(self):
        mid = f".{self.obs}" if self.obs is not None else ""
        return f"{self.choice}{mid}.{_show_prob(self.prob)}"


def show_ranges(ranges: Iterable[qs.Range]) -> str:
    return " ++ ".join(str(r) for r in ranges)


def measure_site(loc: str, ranges: Iterable[qs.Range]) -> str:
    return f"{loc}:{show_ranges(ranges)}"


def _show_prob(p: float) -> str:
    for den in (1, 2, 3, 4, 6, 8, 9, 16, 27, 32, 64):
        num = p * den
        if abs(num - round(num)) < 1e-9 and round(num) > 0:
            return f"{round(num)}/{den}" if den > 1 else "1"
    return f"{p:.6g}"


@dataclass(frozen=True)
class Transition:
    label: Label
    next: Configuration
    # what physically happened, for independent replay of the schedule:
    # ("gate", name, params, qubits) | ("measure", qubits, bits) |
    # ("alloc", qubits) | ("bell", pairs) | None
    act: tuple | None = None


@dataclass(frozen=True)
class Choice:
    kind: str               # comm | newchan | newvar | end | select | rev
    locs: tuple[str, ...]
    moves: tuple[Transition, ...]
    detail: str = ""        # channel name for comm/newchan

    @property
    def key(self) -> tuple:
        return (_RANK[self.kind], self.locs, self.detail)

    def total(self) -> float:
        return sum(t.label.prob for t in self.moves)


_RANK = {"comm": 0, "newchan": 1, "newvar": 2, "end": 3, "select": 4, "rev": 5}


# ---------------------------------------------------------------------------
# process rules

ProcResult = tuple[Union[str, None], Union[str, None], float, QuantumState, sx.Process]


def process_step(phi: QuantumState, loc: str, proc: sx.Process) -> tuple[ProcResult, ...]:
    """Local process rules: (obs, bound var, prob, state, continuation).

    A finished process moves to itself; a unitary applies after the
    operand locus is rewritten to the front of one entry; a conditional
    resolves its guard; a measurement fans out per observed prefix d
    with probability equal to the squared mass of that prefix.
    """
    if isinstance(proc, sx.PNil):
        return ((None, None, 1.0, phi, proc),)
    if isinstance(proc, sx.PIf):
        branch = proc.then if eval_expr(proc.cond) else proc.els
        return ((None, None, 1.0, phi, branch),)
    if isinstance(proc, sx.PComm):
        raise SemanticsError("communication prefix is not a local action")
    action = proc.action
    if isinstance(action, sx.APS):
        eval_expr(action.value)
        return ((None, None, 1.0, phi, proc.cont),)
    goal = qs.local_locus(loc, action.ranges)
    phi1, full = qs.rewrite_to_prefix(phi, goal)
    val = phi1.get(full)
    rest_entries = phi1.without({full})
    if isinstance(action, sx.AUnitary):
        gate = make_gate(action.gate, list(action.params), goal.width)
        if gate.arity != goal.width:
            raise SemanticsError(
                f"{gate} covers {gate.arity} qubits, operand {goal} has "
                f"{goal.width}")
        out = apply_gate(gate, val)
        phi2 = qs.state_of(rest_entries + [(full, out)])
        return ((None, None, 1.0, phi2, proc.cont),)
    # S-Mea
    w = goal.width
    groups: dict[str, list[qs.BasisKet]] = {}
    for k in val.kets:
        groups.setdefault(k.basis[:w], []).append(k)
    rest_qubits = full.qubits()[w:]
    rest_locus = qs.locus_of_qubits(rest_qubits)
    results = []
    for d in sorted(groups):
        kets = groups[d]
        p = sum(abs(k.amp) ** 2 for k in kets)
        scale = 1.0 / math.sqrt(p)
        survivors = tuple(qs.BasisKet(k.amp * scale, k.basis[w:], k.frozen)
                          for k in kets)
        out = qs.canonicalize(qs.QuantumValue(survivors, val.width - w))
        if out.width > 0 or any(k.frozen for k in out.kets):
            phi2 = qs.state_of(rest_entries + [(rest_locus, out)])
        elif rest_entries:
            # fully measured entry: the surviving scalar is a unit phase
            # carried by the rest of the state
            phi2 = _fold_scalar(rest_entries, out.kets[0].amp)
        else:
            # nowhere to fold yet; keep the empty-locus scalar for the caller
            phi2 = QuantumState(((rest_locus, out),))
        cont = subst_process(proc.cont, action.var, sx.Bits(d))
        results.append((d, action.var, p, phi2, cont))
    return tuple(results)


def _fold_scalar(entries: Iterable[tuple[qs.Locus, QuantumValue]],
                 s: complex) -> QuantumState:
    """Multiply a unit scalar into a factored state (empty product is 1)."""
    ordered = sorted(entries, key=lambda e: e[0])
    if not ordered:
        return qs.EMPTY_STATE
    l0, v0 = ordered[0]
    kets = tuple(qs.BasisKet(k.amp * s, k.basis, k.frozen) for k in v0.kets)
    return qs.state_of([(l0, qs.QuantumValue(kets, v0.width))] + ordered[1:])


# ---------------------------------------------------------------------------
# membrane rules

def _head_is_comm(p: sx.Process) -> bool:
    return isinstance(p, sx.PComm)


def _local_move(config: Configuration, loc: str, proc: sx.Process,
                weight: float, others: list[sx.Membrane],
                rest_procs: list[sx.Process]) -> list[Transition]:
    """S-Move: localize the operand entry, step, restore, store."""
    state = config.state
    needs_view = isinstance(proc, sx.PLocal) and \
        isinstance(proc.action, (sx.AUnitary, sx.AMeasure))
    if not needs_view:
        results = process_step(state, loc, proc)
        out = []
        for obs, var, p, phi2, cont in results:
            cell = sx.MCell(loc, _sorted_procs(rest_procs + [cont]))
            succ = make_config(phi2, others + [cell], config.channels)
            out.append(Transition(Label(loc, obs, p * weight, var), succ))
        return out
    site = measure_site(loc, proc.action.ranges) \
        if isinstance(proc.action, sx.AMeasure) else None
    goal = qs.local_locus(loc, proc.action.ranges)
    phi1, full = qs.rewrite_to_prefix(state, goal)
    qubits = full.qubits()
    goal_set = set(goal.qubits())
    foreign = [q for q in qubits if q[0] != loc]
    local_rest = [q for q in qubits if q[0] == loc and q not in goal_set]
    if foreign:
        want = qs.locus_of_qubits(foreign + goal.qubits() + local_rest)
        phi1, full = qs.rewrite_to_prefix(phi1, want)
    val = phi1.get(full)
    n_foreign = len(foreign)
    view_locus = qs.locus_of_qubits(full.qubits()[n_foreign:])
    view = QuantumState(((view_locus, qs.freeze(val, n_foreign)),))
    outside = phi1.without({full})
    out = []
    for obs, var, p, view2, cont in process_step(view, loc, proc):
        base = qs.state_of(outside)
        if view2.entries:
            vl, vv = view2.entries[0]
            restored = qs.unfreeze(vv, n_foreign)
            if restored.width > 0:
                final_locus = qs.locus_of_qubits(foreign + vl.qubits())
                base = qs.store_entry(base, final_locus, restored)
            else:
                # the whole entry was measured away; its unit phase lands
                # on whatever state remains
                base = _fold_scalar(outside, restored.kets[0].amp)
        elif foreign:
            raise SemanticsError("frozen qubits lost during a local move")
        cell = sx.MCell(loc, _sorted_procs(rest_procs + [cont]))
        succ = make_config(base, others + [cell], config.channels)
        if obs is None:
            act = ("gate", proc.action.gate, tuple(proc.action.params),
                   tuple(goal.qubits()))
        else:
            act = ("measure", tuple(goal.qubits()), obs)
        out.append(Transition(Label(loc, obs, p * weight, var,
                                    site if obs is not None else None),
                              succ, act))
    return out


def enabled_choices(config: Configuration) -> tuple[Choice, ...]:
    """All nondeterministic choices, canonically ordered and stochastic."""
    choices: list[Choice] = []
    membranes = config.membranes
    chan_decl = {ch.chan: ch for ch in config.channels}

    # channel creation: emitted once per matching pair, from the decl side
    pending: dict[str, list[int]] = {}
    for i, m in enumerate(membranes):
        if isinstance(m, sx.MNewChannel):
            pending.setdefault(m.chan, []).append(i)
    for chan, idxs in sorted(pending.items()):
        if len(idxs) != 2:
            continue
        i, j = idxs
        ma, mb = membranes[i], membranes[j]
        decl = chan_decl.get(chan)
        la, lb = sx.membrane_loc(ma), sx.membrane_loc(mb)
        if decl is not None and (la, lb) != (decl.loc_a, decl.loc_b):
            ma, mb = mb, ma
            la, lb = lb, la
        if ma.width != mb.width:
            raise SemanticsError(f"channel {chan!r} widths differ")
        r2 = 1.0 / math.sqrt(2.0)
        phi = config.state
        pairs = []
        for k in range(ma.width):
            locus = qs.locus_of_qubits([(la, chan, k), (lb, chan, k)])
            phi = qs.store_entry(phi, locus, qs.value([(r2, "00"), (r2, "11")]))
            pairs.append(((la, chan, k), (lb, chan, k)))
        rest = [m for t, m in enumerate(membranes) if t not in (i, j)]
        succ = make_config(phi, rest + [ma.cont, mb.cont], config.channels)
        choices.append(Choice("newchan", (la, lb),
                              (Transition(Label(f"{la}.{lb}", None, 1.0), succ,
                                          ("bell", tuple(pairs))),),
                              chan))

    senders: list[tuple[str, sx.MAirlocked]] = []
    receivers: list[tuple[str, sx.MAirlocked]] = []
    for i, m in enumerate(membranes):
        others = [x for t, x in enumerate(membranes) if t != i]
        if isinstance(m, sx.MNewArray):
            loc = sx.membrane_loc(m)
            locus = qs.local_locus(loc, [qs.Range(m.var, 0, m.width)])
            phi = qs.store_entry(config.state, locus, qs.basis_value("0" * m.width))
            succ = make_config(phi, others + [m.cont], config.channels)
            choices.append(Choice("newvar", (loc,),
                                  (Transition(Label(loc, None, 1.0), succ,
                                              ("alloc", tuple(locus.qubits()))),)))
        elif isinstance(m, sx.MAirlocked):
            loc = m.loc
            cell = sx.MCell(loc, _sorted_procs(m.rest + (m.locked,)))
            succ = make_config(config.state, others + [cell], config.channels)
            choices.append(Choice("rev", (loc,),
                                  (Transition(Label(loc, None, 1.0), succ),)))
            if isinstance(m.locked, sx.PComm):
                if isinstance(m.locked.action, sx.ASend):
                    senders.append((loc, m))
                else:
                    receivers.append((loc, m))
        elif isinstance(m, sx.MCell):
            loc = m.loc
            procs = list(m.processes)
            n = len(procs)
            moves: list[Transition] = []
            for k, p in enumerate(procs):
                rest_procs = procs[:k] + procs[k + 1:]
                if _head_is_comm(p):
                    locked = sx.MAirlocked(loc, p, _sorted_procs(rest_procs))
                    succ = make_config(config.state, others + [locked],
                                       config.channels)
                    moves.append(Transition(Label(loc, None, 1.0 / n), succ))
                else:
                    moves.extend(_local_move(config, loc, p, 1.0 / n,
                                             others, rest_procs))
            choices.append(Choice("select", (loc,), tuple(moves)))
            if all(isinstance(p, sx.PNil) for p in procs):
                succ = make_config(config.state, others, config.channels)
                choices.append(Choice("end", (loc,),
                                      (Transition(Label(loc, None, 1.0), succ),)))

    for ls, ms in senders:
        for lr, mr in receivers:
            if ls == lr or ms.locked.action.chan != mr.locked.action.chan:
                continue
            chan = ms.locked.action.chan
            value = eval_expr(ms.locked.action.value)
            s_cell = sx.MCell(ls, _sorted_procs(ms.rest + (ms.locked.cont,)))
            r_cont = subst_process(mr.locked.cont, mr.locked.action.var,
                                   sx.Lit(value))
            r_cell = sx.MCell(lr, _sorted_procs(mr.rest + (r_cont,)))
            rest = [m for m in config.membranes if m is not ms and m is not mr]
            succ = make_config(config.state, rest + [s_cell, r_cell],
                               config.channels)
            choices.append(Choice("comm", (ls, lr),
                                  (Transition(Label(f"{ls}.{lr}", None, 1.0),
                                              succ),), chan))

    return tuple(sorted(choices, key=lambda c: c.key))


def membrane_step(config: Configuration) -> tuple[Transition, ...]:
    """All enabled transitions, flattened over choices."""
    return tuple(t for ch in enabled_choices(config) for t in ch.moves)


def check_stochastic(config: Configuration, tol: float = STOCHASTIC_TOL) -> None:
    for ch in enabled_choices(config):
        total = ch.total()
        if abs(total - 1.0) > tol:
            raise SemanticsError(
                f"choice {ch.kind}@{'.'.join(ch.locs)} has mass {total!r}")


# ---------------------------------------------------------------------------
# schedulers and traces

@dataclass(frozen=True)
class Exhaustive:
    depth: int


@dataclass(frozen=True)
class Random:
    seed: int
    max_steps: int = 500


@dataclass(frozen=True)
class Script:
    tokens: tuple[str, ...]


@dataclass(frozen=True)
class Step:
    choice: tuple
    label: Label
    config: Configuration


@dataclass(frozen=True)
class Trace:
    steps: tuple[Step, ...]
    prob: float
    terminated: bool
    truncated: bool = False


def _pick_move(config: Configuration, choice: Choice, pick: str | None):
    if pick is None:
        for t in choice.moves:
            if t.next != config:
                return t
        return choice.moves[0]
    if set(pick) <= {"0", "1"}:
        for t in choice.moves:
            if t.label.obs == pick:
                return t
    if pick.isdigit() and int(pick) < len(choice.moves):
        return choice.moves[int(pick)]
    have = ", ".join(t.label.obs or "-" for t in choice.moves)
    raise ScriptError(f"no move {pick!r} in choice {choice.kind}; moves: {have}")


def _resolve_token(config: Configuration, choices: tuple[Choice, ...],
                   token: str) -> Transition:
    pick = None
    if ">" in token:
        token, pick = token.split(">", 1)
    locs = tuple(token.split("."))
    cands = [c for c in choices if c.locs == locs]
    if not cands and len(locs) == 2:
        cands = [c for c in choices if set(c.locs) == set(locs)]
    if not cands:
        have = ", ".join(".".join(c.locs) + f"({c.kind})" for c in choices)
        raise ScriptError(f"no choice matches {token!r}; available: {have}")
    return _pick_move(config, cands[0], pick)


def run_trace(config: Configuration, policy) -> Union[Trace, list[Trace]]:
    if isinstance(policy, Script):
        steps = []
        prob = 1.0
        for token in policy.tokens:
            if config.terminated:
                raise ScriptError(f"script continues past termination: {token!r}")
            choices = enabled_choices(config)
            if not choices:
                raise StuckError("no enabled choices")
            t = _resolve_token(config, choices, token)
            prob *= t.label.prob
            config = t.next
            steps.append(Step((), t.label, config))
        return Trace(tuple(steps), prob, config.terminated)
    if isinstance(policy, Random):
        rng = random.Random(policy.seed)
        steps = []
        prob = 1.0
        for _ in range(policy.max_steps):
            if config.terminated:
                return Trace(tuple(steps), prob, True)
            choices = enabled_choices(config)
            if not choices:
                raise StuckError("no enabled choices")
            ch = rng.choice(choices)
            x = rng.random() * ch.total()
            acc = 0.0
            move = ch.moves[-1]
            for t in ch.moves:
                acc += t.label.prob
                if x < acc:
                    move = t
                    break
            prob *= move.label.prob
            config = move.next
            steps.append(Step(ch.key, move.label, config))
        return Trace(tuple(steps), prob, config.terminated, truncated=True)
    if isinstance(policy, Exhaustive):
        done: list[Trace] = []
        frontier: list[tuple[Configuration, tuple[Step, ...], float]] = \
            [(config, (), 1.0)]
        for _ in range(policy.depth):
            nxt = []
            for c, steps, prob in frontier:
                if c.terminated:
                    done.append(Trace(steps, prob, True))
                    continue
                choices = enabled_choices(c)
                if not choices:
                    raise StuckError("no enabled choices")
                for ch in choices:
                    for t in ch.moves:
                        nxt.append((t.next, steps + (Step(ch.key, t.label, t.next),),
                                    prob * t.label.prob))
            frontier = nxt
            if not frontier:
                break
        for c, steps, prob in frontier:
            done.append(Trace(steps, prob, c.terminated, truncated=not c.terminated))
        return done
    raise SemanticsError(f"unknown policy {policy!r}")


def explore(config: Configuration, max_configs: int = 100000,
            on_visit: Callable[[Configuration], None] | None = None) -> set:
    """Reachable-set walk over every choice and move."""
    seen = {config}
    queue = [config]
    while queue:
        c = queue.pop()
        if on_visit is not None:
            on_visit(c)
        for ch in enabled_choices(c):
            for t in ch.moves:
                if t.next not in seen:
                    if len(seen) >= max_configs:
                        raise DivergenceError(
                            f"more than {max_configs} reachable configurations")
                    seen.add(t.next)
                    queue.append(t.next)
    return seen


# ---------------------------------------------------------------------------
# canonical keys (memoization / merge grids)

def value_key(val: qs.QuantumValue, phase: bool = True, digits: int = 9) -> tuple:
    kets = val.kets
    if phase and kets:
        ref = max(kets, key=lambda k: (abs(k.amp), k.basis, k.frozen))
        a = ref.amp
        scale = a.conjugate() / abs(a) if abs(a) > 0 else 1.0
    else:
        scale = 1.0
    out = []
    for k in kets:
        amp = k.amp * scale
        out.append((k.basis, k.frozen,
                    round(amp.real, digits) + 0.0, round(amp.imag, digits) + 0.0))
    return (val.width, tuple(out))


def _entry_key(locus: qs.Locus, v: qs.QuantumValue, phase: bool,
               digits: int) -> tuple:
    # entries reached along different routes may list the same qubits in
    # different orders; sort them (reordering the value to match)
    qubits = locus.qubits()
    in_order = sorted(qubits)
    if in_order != qubits:
        pos = {q: i for i, q in enumerate(qubits)}
        v = qs.reorder(v, [pos[q] for q in in_order])
        locus = qs.locus_of_qubits(in_order)
    return (str(locus), value_key(v, phase, digits))


def config_key(config: Configuration, phase: bool = True, digits: int = 9) -> tuple:
    """Hashable canonical form; per-entry global phase optionally erased."""
    state = tuple(sorted(_entry_key(locus, v, phase, digits)
                         for locus, v in config.state.items()))
    membranes = []
    for m in config.membranes:
        parts = []
        while isinstance(m, (sx.MNewArray, sx.MNewChannel)):
            tag = "var" if isinstance(m, sx.MNewArray) else "chan"
            name = m.var if isinstance(m, sx.MNewArray) else m.chan
            parts.append(f"new {tag} {name}[{m.width}]")
            m = m.cont
        if isinstance(m, sx.MAirlocked):
            parts.append("lock " + _proc_key(m.locked))
            parts.extend(_proc_key(p) for p in m.rest)
            membranes.append((m.loc, tuple(parts)))
        else:
            parts.extend(_proc_key(p) for p in m.processes)
            membranes.append((m.loc, tuple(parts)))
    return (state, tuple(membranes))


# ---------------------------------------------------------------------------
# measurement distributions

def canonical_choice(config: Configuration) -> tuple[Choice, list[Transition], float] | None:
    """First choice with usable (non-self-loop) mass, moves renormalized.

    Self moves contribute geometric mass: conditioning on eventual
    progress scales the surviving siblings by 1/(1 - p_loop).
    """
    for ch in enabled_choices(config):
        usable = [t for t in ch.moves if t.next != config]
        if not usable:
            continue
        kept = sum(t.label.prob for t in usable)
        return ch, usable, 1.0 / kept
    return None


Outcome = tuple[tuple[str, str], ...]  # sorted (var, bits) pairs


def outcome_distribution(config: Configuration,
                         max_depth: int = 20000,
                         on_visit: Callable[[Configuration], None] | None = None,
                         ) -> dict[Outcome, float]:
    """Joint distribution of every measurement under the canonical scheduler.

    The canonical subgraph can revisit configurations: an airlocked
    communication whose partner is not ready yet is released and may be
    locked again, a dance with geometric escape probability. Absorption
    is therefore computed exactly, by grouping configurations into
    strongly connected components and solving each component's small
    linear system; max_depth bounds the number of distinct
    configurations explored.

    Measurements cannot lie on a cycle (they consume qubits and shorten
    the process), so every cycle is probability-only.
    """
    # canonical subgraph, nodes merged by canonical key
    edges: dict[tuple, list[tuple[float, tuple[str, str] | None, tuple]]] = {}
    terminal: set[tuple] = set()
    root = config_key(config)
    seen = {root}
    stack = [(root, config)]
    while stack:
        key, c = stack.pop()
        if c.terminated:
            terminal.add(key)
            continue
        if len(edges) >= max_depth:
            raise DivergenceError(
                f"more than {max_depth} configurations under the canonical scheduler")
        if on_visit is not None:
            on_visit(c)
        picked = canonical_choice(c)
        if picked is None:
            if enabled_choices(c):
                raise DivergenceError("only self moves are enabled")
            raise StuckError(f"stuck configuration: {key[1]}")
        _, usable, scale = picked
        out = []
        for t in usable:
            k2 = config_key(t.next)
            tag = (t.label.var, t.label.obs) if t.label.var is not None else None
            out.append((t.label.prob * scale, tag, k2))
            if k2 not in seen:
                seen.add(k2)
                stack.append((k2, t.next))
        edges[key] = out
    return _absorb(root, edges, terminal)


def _tarjan(nodes: Iterable[tuple], edges: dict) -> list[list[tuple]]:
    """Strongly connected components, children before parents."""
    index: dict[tuple, int] = {}
    low: dict[tuple, int] = {}
    on_stk: set = set()
    stk: list[tuple] = []
    comps: list[list[tuple]] = []
    counter = 0
    for start in nodes:
        if start in index:
            continue
        index[start] = low[start] = counter
        counter += 1
        stk.append(start)
        on_stk.add(start)
        work = [(start, iter(edges.get(start, ())))]
        while work:
            v, it = work[-1]
            child = None
            for _, _, w in it:
                if w not in index:
                    child = w
                    break
                if w in on_stk:
                    low[v] = min(low[v], index[w])
            if child is not None:
                index[child] = low[child] = counter
                counter += 1
                stk.append(child)
                on_stk.add(child)
                work.append((child, iter(edges.get(child, ()))))
                continue
            work.pop()
            if work:
                low[work[-1][0]] = min(low[work[-1][0]], low[v])
            if low[v] == index[v]:
                comp = []
                while True:
                    w = stk.pop()
                    on_stk.discard(w)
                    comp.append(w)
                    if w == v:
                        break
                comps.append(comp)
    return comps


def _absorb(root: tuple, edges: dict, terminal: set) -> dict[Outcome, float]:
    """Exact absorption through the canonical subgraph."""
    f: dict[tuple, dict[Outcome, float]] = {}
    for comp in _tarjan(edges.keys() | terminal, edges):
        members = set(comp)
        # per node: mass leaving the component, tagged and folded forward
        ext: dict[tuple, dict[Outcome, float]] = {k: {} for k in comp}
        internal: list[tuple[tuple, tuple, float]] = []
        for k in comp:
            if k in terminal:
                ext[k][()] = 1.0
                continue
            for p, tag, k2 in edges[k]:
                if k2 in members:
                    if tag is not None:
                        raise DivergenceError("a measurement lies on a cycle")
                    internal.append((k, k2, p))
                    continue
                acc = ext[k]
                for key2, q in f[k2].items():
                    merged = tuple(sorted(key2 + (tag,))) if tag else key2
                    acc[merged] = acc.get(merged, 0.0) + p * q
        if not internal:
            for k in comp:
                f[k] = ext[k]
            continue
        pos = {k: i for i, k in enumerate(comp)}
        n = len(comp)
        lhs = np.eye(n)
        for k, k2, p in internal:
            lhs[pos[k], pos[k2]] -= p
        keys = sorted({o for d in ext.values() for o in d})
        rhs = np.zeros((n, len(keys)))
        for k in comp:
            for o, v in ext[k].items():
                rhs[pos[k], keys.index(o)] = v
        try:
            sol = np.linalg.solve(lhs, rhs)
        except np.linalg.LinAlgError:
            raise DivergenceError(
                "the canonical scheduler cannot escape a cycle") from None
        for k in comp:
            row = sol[pos[k]]
            f[k] = {o: float(row[i]) for i, o in enumerate(keys) if row[i] > 0.0}
    out = f[root]
    total = sum(out.values())
    if abs(total - 1.0) > 1e-9:
        raise DivergenceError(
            f"terminal mass {total:.6g}: the canonical scheduler is trapped "
            f"in a cycle with no way out")
    return out


def canonical_runs(config: Configuration, max_depth: int = 2000,
                   ) -> list[tuple[float, Outcome, Configuration]]:
    """Every branch of the canonical scheduler, kept separate.

    Unlike outcome_distribution this does not merge converging branches,
    so it returns each path's terminal configuration; use it only on
    small examples (branch count is the product of measurement fan-outs).
    """
    done: list[tuple[float, Outcome, Configuration]] = []
    frontier: list[tuple[float, Outcome, Configuration]] = [(1.0, (), config)]
    for _ in range(max_depth):
        if not frontier:
            return done
        nxt = []
        for prob, seen, c in frontier:
            if c.terminated:
                done.append((prob, seen, c))
                continue
            picked = canonical_choice(c)
            if picked is None:
                raise StuckError("only self moves are enabled")
            _, usable, scale = picked
            for t in usable:
                label = t.label
                seen2 = seen + ((label.var, label.obs),) if label.var else seen
                nxt.append((prob * label.prob * scale, seen2, t.next))
        frontier = nxt
    raise DivergenceError(f"no termination within {max_depth} steps")


def measurement_distribution(config: Configuration,
                             observed: list[str] | None = None,
                             max_depth: int = 20000) -> dict[str, float]:
    """Distribution over observed variables (concatenated in given order).

    With observed=None, outcomes are keyed "var=bits" comma-joined over
    every measurement on the path.
    """
    raw = outcome_distribution(config, max_depth)
    out: dict[str, float] = {}
    for key, p in raw.items():
        bound = dict(key)
        if observed is None:
            label = ",".join(f"{v}={b}" for v, b in key)
        else:
            missing = [v for v in observed if v not in bound]
            if missing:
                raise SemanticsError(
                    f"observed variable(s) never measured: {', '.join(missing)}")
            label = "".join(bound[v] for v in observed)
        out[label] = out.get(label, 0.0) + p
    return out
