"""Symbolic quantum state algebra.

States are finite maps from loci (ordered, location-tagged qubit ranges)
to values (sums of basis-kets). A basis-ket carries a complex amplitude,
a bitstring over the locus positions, and a stack of frozen bitstrings
holding position bases temporarily hidden from a local computation.

Conventions:
- position 0 of a locus is the leftmost bit of every ket's bitstring;
- integer readout of a bitstring is big-endian;
- a qubit identity is the triple (location, array name, index).

All types are immutable; operations are pure functions.
"""
from __future__ import annotations

from dataclasses import dataclass
from typing import Iterable, Iterator

import numpy as np

DROP_TOL = 1e-12
CMP_TOL = 1e-9

Qubit = tuple[str, str, int]  # (location, var, index)


class StateError(Exception):
    """Base for state-algebra failures."""


class MalformedRewrite(StateError):
    pass


class UnknownQubit(StateError):
    pass


class NotFlattenable(StateError):
    pass


class InvariantError(StateError):
    """An internal bookkeeping invariant broke; signals an interpreter bug."""


class NotSeparable:
    """Normal outcome of split(): no tensor factorization at the cut."""

    def __repr__(self):
        return "NotSeparable"


NOT_SEPARABLE = NotSeparable()


# ---------------------------------------------------------------------------
# loci

@dataclass(frozen=True, order=True)
class Range:
    var: str
    lo: int
    hi: int

    def __post_init__(self):
        if self.lo > self.hi or self.lo < 0:
            raise MalformedRewrite(f"bad range {self}")

    @property
    def width(self) -> int:
        return self.hi - self.lo

    def indices(self) -> range:
        return range(self.lo, self.hi)

    def __str__(self):
        if self.width == 1:
            return f"{self.var}[{self.lo}]"
        return f"{self.var}[{self.lo},{self.hi})"


@dataclass(frozen=True, order=True)
class Fragment:
    """A location-local run of ranges: <ranges>@loc."""
    loc: str
    ranges: tuple[Range, ...]

    @property
    def width(self) -> int:
        return sum(r.width for r in self.ranges)

    def qubits(self) -> list[Qubit]:
        return [(self.loc, r.var, i) for r in self.ranges for i in r.indices()]

    def __str__(self):
        body = " ++ ".join(str(r) for r in self.ranges)
        return f"<{body}>@{self.loc}"


@dataclass(frozen=True, order=True)
class Locus:
    fragments: tuple[Fragment, ...]

    @property
    def width(self) -> int:
        return sum(f.width for f in self.fragments)

    def qubits(self) -> list[Qubit]:
        return [q for f in self.fragments for q in f.qubits()]

    def __str__(self):
        return " ++ ".join(str(f) for f in self.fragments)


def locus_of_qubits(qubits: Iterable[Qubit]) -> Locus:
    """Rebuild the canonical locus for an ordered qubit sequence: merge
    consecutive same-location runs and consecutive indices of one array."""
    frags: list[tuple[str, list[Range]]] = []
    for loc, var, idx in qubits:
        if frags and frags[-1][0] == loc:
            ranges = frags[-1][1]
            last = ranges[-1] if ranges else None
            if last is not None and last.var == var and last.hi == idx:
                ranges[-1] = Range(var, last.lo, idx + 1)
            else:
                ranges.append(Range(var, idx, idx + 1))
        else:
            frags.append((loc, [Range(var, idx, idx + 1)]))
    return Locus(tuple(Fragment(loc, tuple(rs)) for loc, rs in frags))


def local_locus(loc: str, ranges: Iterable[Range]) -> Locus:
    """A locus whose fragments all live at one location."""
    return locus_of_qubits([(loc, r.var, i) for r in ranges for i in r.indices()])


# ---------------------------------------------------------------------------
# values

@dataclass(frozen=True)
class BasisKet:
    amp: complex
    basis: str
    frozen: tuple[str, ...] = ()  # index 0 = top of stack

    def __str__(self):
        stack = "".join(f" v|{b}>" for b in self.frozen)
        return f"{self.amp:.6g}|{self.basis}>{stack}"


@dataclass(frozen=True)
class QuantumValue:
    kets: tuple[BasisKet, ...]
    width: int

    def norm_sq(self) -> float:
        return sum(abs(k.amp) ** 2 for k in self.kets)

    def __str__(self):
        return " + ".join(str(k) for k in self.kets) if self.kets else "0"


UNIT_VALUE = QuantumValue((BasisKet(1.0 + 0j, ""),), 0)


def value(kets: Iterable[tuple[complex, str]], width: int | None = None) -> QuantumValue:
    """Build a canonical value from (amp, basis) pairs with empty stacks."""
    items = [BasisKet(complex(a), b) for a, b in kets]
    if width is None:
        if not items:
            raise MalformedRewrite("cannot infer width of empty value")
        width = len(items[0].basis)
    return canonicalize(QuantumValue(tuple(items), width))


def basis_value(bits: str, amp: complex = 1.0) -> QuantumValue:
    return QuantumValue((BasisKet(complex(amp), bits),), len(bits))


def canonicalize(v: QuantumValue) -> QuantumValue:
    """Merge duplicate (basis, frozen) kets, drop tiny amplitudes, sort."""
    acc: dict[tuple[str, tuple[str, ...]], complex] = {}
    for k in v.kets:
        if len(k.basis) != v.width:
            raise InvariantError(f"ket width {len(k.basis)} != {v.width}")
        key = (k.basis, k.frozen)
        acc[key] = acc.get(key, 0j) + k.amp
    kets = tuple(BasisKet(a, b, f) for (b, f), a in sorted(acc.items())
                 if abs(a) >= DROP_TOL)
    return QuantumValue(kets, v.width)


def approx_equal(v1: QuantumValue, v2: QuantumValue, tol: float = CMP_TOL) -> bool:
    """Ket-wise amplitude comparison within tol (canonical forms assumed)."""
    if v1.width != v2.width:
        return False
    d1 = {(k.basis, k.frozen): k.amp for k in v1.kets}
    d2 = {(k.basis, k.frozen): k.amp for k in v2.kets}
    for key in d1.keys() | d2.keys():
        if abs(d1.get(key, 0j) - d2.get(key, 0j)) > tol:
            return False
    return True


def permute(v: QuantumValue, prefix_width: int, w1: int, w2: int) -> QuantumValue:
    """Swap the w1-wide and w2-wide basis segments following the prefix."""
    if prefix_width + w1 + w2 > v.width:
        raise MalformedRewrite(
            f"permute({prefix_width},{w1},{w2}) overflows width {v.width}")
    p, q = prefix_width, prefix_width + w1
    r = q + w2
    kets = tuple(
        BasisKet(k.amp, k.basis[:p] + k.basis[q:r] + k.basis[p:q] + k.basis[r:],
                 k.frozen)
        for k in v.kets)
    return canonicalize(QuantumValue(kets, v.width))


def reorder(v: QuantumValue, perm: list[int]) -> QuantumValue:
    """General position reorder: output bit i = input bit perm[i].

    Equivalent to a composition of adjacent-segment permutations.
    """
    if sorted(perm) != list(range(v.width)):
        raise MalformedRewrite(f"bad permutation {perm} for width {v.width}")
    kets = tuple(
        BasisKet(k.amp, "".join(k.basis[j] for j in perm), k.frozen)
        for k in v.kets)
    return canonicalize(QuantumValue(kets, v.width))


def join(v1: QuantumValue, v2: QuantumValue) -> QuantumValue:
    """Cartesian product; v1's bits leftmost, stacks merged level-wise."""
    if v1.width == 0 and len(v1.kets) == 1 and not v1.kets[0].frozen:
        scale = v1.kets[0].amp
        return canonicalize(QuantumValue(
            tuple(BasisKet(scale * k.amp, k.basis, k.frozen) for k in v2.kets),
            v2.width))
    if v2.width == 0 and len(v2.kets) == 1 and not v2.kets[0].frozen:
        scale = v2.kets[0].amp
        return canonicalize(QuantumValue(
            tuple(BasisKet(scale * k.amp, k.basis, k.frozen) for k in v1.kets),
            v1.width))
    out = []
    for k1 in v1.kets:
        for k2 in v2.kets:
            if len(k1.frozen) != len(k2.frozen):
                raise InvariantError("join of values with unequal stack depths")
            stack = tuple(a + b for a, b in zip(k1.frozen, k2.frozen))
            out.append(BasisKet(k1.amp * k2.amp, k1.basis + k2.basis, stack))
    return canonicalize(QuantumValue(tuple(out), v1.width + v2.width))


def split(v: QuantumValue, w: int):
    """Tensor-factor v at cut w; NotSeparable when no factorization found.

    Handles basis states and rank-1 coefficient matrices only.
    """
    if not 0 <= w <= v.width:
        raise MalformedRewrite(f"split at {w} outside width {v.width}")
    if any(k.frozen for k in v.kets):
        return NOT_SEPARABLE
    if w == 0:
        return UNIT_VALUE, v
    if w == v.width:
        return v, UNIT_VALUE
    if len(v.kets) == 1:
        k = v.kets[0]
        return (QuantumValue((BasisKet(k.amp, k.basis[:w]),), w),
                QuantumValue((BasisKet(1.0 + 0j, k.basis[w:]),), v.width - w))
    lefts = sorted({k.basis[:w] for k in v.kets})
    rights = sorted({k.basis[w:] for k in v.kets})
    li = {b: i for i, b in enumerate(lefts)}
    ri = {b: i for i, b in enumerate(rights)}
    M = np.zeros((len(lefts), len(rights)), dtype=complex)
    for k in v.kets:
        M[li[k.basis[:w]], ri[k.basis[w:]]] = k.amp
    a0, b0 = np.unravel_index(int(np.argmax(np.abs(M))), M.shape)
    col = M[:, b0]
    row = M[a0, :] / M[a0, b0]
    if not np.allclose(np.outer(col, row), M, atol=CMP_TOL):
        return NOT_SEPARABLE
    rnorm = float(np.linalg.norm(row))
    phase = row[np.argmax(np.abs(row))]
    phase = phase / abs(phase)
    row = row / (rnorm * phase)
    col = col * (rnorm * phase)
    v1 = canonicalize(QuantumValue(
        tuple(BasisKet(col[i], b) for b, i in li.items()), w))
    v2 = canonicalize(QuantumValue(
        tuple(BasisKet(row[i], b) for b, i in ri.items()), v.width - w))
    return v1, v2


def freeze(v: QuantumValue, n: int) -> QuantumValue:
    """Push the first n basis bits of every ket onto its frozen stack."""
    if n > v.width:
        raise MalformedRewrite(f"freeze({n}) exceeds width {v.width}")
    if n == 0:
        return v
    kets = tuple(
        BasisKet(k.amp, k.basis[n:], (k.basis[:n],) + k.frozen)
        for k in v.kets)
    return QuantumValue(kets, v.width - n)


def unfreeze(v: QuantumValue, n: int) -> QuantumValue:
    """Pop the stack top (width n) back onto the front of every basis."""
    if n == 0:
        return v
    kets = []
    for k in v.kets:
        if not k.frozen:
            raise InvariantError("unfreeze on empty stack")
        top = k.frozen[0]
        if len(top) != n:
            raise InvariantError(f"unfreeze({n}) but stack top has {len(top)}")
        kets.append(BasisKet(k.amp, top + k.basis, k.frozen[1:]))
    return canonicalize(QuantumValue(tuple(kets), v.width + n))


# ---------------------------------------------------------------------------
# the state heap

@dataclass(frozen=True)
class QuantumState:
    entries: tuple[tuple[Locus, QuantumValue], ...]

    def __post_init__(self):
        seen: set[Qubit] = set()
        for locus, val in self.entries:
            if locus.width != val.width:
                raise InvariantError(
                    f"locus {locus} width {locus.width} != value width {val.width}")
            for q in locus.qubits():
                if q in seen:
                    raise InvariantError(f"qubit {q} in two entries")
                seen.add(q)

    def qubits(self) -> list[Qubit]:
        return [q for locus, _ in self.entries for q in locus.qubits()]

    def items(self) -> Iterator[tuple[Locus, QuantumValue]]:
        return iter(self.entries)

    def get(self, locus: Locus) -> QuantumValue | None:
        for k, v in self.entries:
            if k == locus:
                return v
        return None

    def without(self, loci: set[Locus]) -> list[tuple[Locus, QuantumValue]]:
        return [(k, v) for k, v in self.entries if k not in loci]


def state_of(entries: Iterable[tuple[Locus, QuantumValue]]) -> QuantumState:
    return QuantumState(tuple(sorted(entries, key=lambda e: e[0])))


EMPTY_STATE = QuantumState(())


def rewrite_to_prefix(phi: QuantumState, target: Locus) -> tuple[QuantumState, Locus]:
    """Join and permute entries so one entry's locus starts with target.

    Returns the rewritten state and that entry's full locus
    target ++ rest. The dense meaning of the state is unchanged.
    """
    want = target.qubits()
    want_set = set(want)
    if len(want_set) != len(want):
        raise MalformedRewrite(f"target {target} repeats a qubit")
    touched: list[tuple[Locus, QuantumValue]] = []
    for k, v in phi.entries:
        if want_set & set(k.qubits()):
            touched.append((k, v))
    have = {q for k, _ in touched for q in k.qubits()}
    missing = want_set - have
    if missing:
        raise UnknownQubit(f"qubits {sorted(missing)} not in state")
    joined_locus: list[Qubit] = []
    joined_val = UNIT_VALUE
    for k, v in touched:
        joined_locus.extend(k.qubits())
        joined_val = join(joined_val, v)
    rest = [q for q in joined_locus if q not in want_set]
    new_order = want + rest
    pos = {q: i for i, q in enumerate(joined_locus)}
    perm = [pos[q] for q in new_order]
    new_val = reorder(joined_val, perm)
    new_locus = locus_of_qubits(new_order)
    entries = phi.without({k for k, _ in touched}) + [(new_locus, new_val)]
    return state_of(entries), new_locus


def flatten(phi: QuantumState, qubit_order: list[Qubit]) -> np.ndarray:
    """Dense amplitude vector over the given qubit ordering."""
    qubits = phi.qubits()
    if sorted(qubits) != sorted(qubit_order):
        raise NotFlattenable("qubit_order does not enumerate the state's qubits")
    vec = np.array([1.0 + 0j])
    order: list[Qubit] = []
    for locus, val in phi.entries:
        if any(k.frozen for k in val.kets):
            raise NotFlattenable(f"entry {locus} has frozen stacks")
        sub = np.zeros(1 << val.width, dtype=complex)
        for k in val.kets:
            sub[int(k.basis, 2) if k.basis else 0] += k.amp
        vec = np.kron(vec, sub)
        order.extend(locus.qubits())
    n = len(order)
    if n == 0:
        return vec
    pos = {q: i for i, q in enumerate(order)}
    perm = [pos[q] for q in qubit_order]
    return vec.reshape([2] * n).transpose(perm).reshape(-1)


def split_constant_runs(locus: Locus, val: QuantumValue) -> list[tuple[Locus, QuantumValue]]:
    """Factor maximal basis-constant position runs into their own entries.

    Mirrors the paper-style display of states ({x[0]: ..., x[1,4): |000>})
    and keeps joined entries within per-machine entanglement bounds when a
    control region stays classical. Only applies to stack-free values.
    """
    if val.width == 0 or any(k.frozen for k in val.kets):
        return [(locus, val)]
    constant = []
    for i in range(val.width):
        bits = {k.basis[i] for k in val.kets}
        constant.append(len(bits) == 1)
    if not any(constant):
        return [(locus, val)]
    qubits = locus.qubits()
    runs: list[tuple[bool, list[int]]] = []
    for i, c in enumerate(constant):
        if runs and runs[-1][0] == c:
            runs[-1][1].append(i)
        else:
            runs.append((c, [i]))
    if len(runs) == 1 and runs[0][0]:
        # fully classical entry: keep as a single basis entry
        return [(locus, canonicalize(val))]
    out: list[tuple[Locus, QuantumValue]] = []
    rest_positions: list[int] = []
    base = val.kets[0]
    for c, posns in runs:
        if c:
            bits = "".join(base.basis[i] for i in posns)
            out.append((locus_of_qubits([qubits[i] for i in posns]),
                        basis_value(bits)))
        else:
            rest_positions.extend(posns)
    kets = tuple(BasisKet(k.amp, "".join(k.basis[i] for i in rest_positions))
                 for k in val.kets)
    out.append((locus_of_qubits([qubits[i] for i in rest_positions]),
                canonicalize(QuantumValue(kets, len(rest_positions)))))
    return out


def store_entry(phi: QuantumState, locus: Locus, val: QuantumValue) -> QuantumState:
    """Insert an entry in runtime-canonical form (constant runs factored)."""
    val = canonicalize(val)
    pieces = [(k, v) for k, v in split_constant_runs(locus, val) if k.width > 0]
    return state_of(phi.without(set()) + pieces)


def dump_json(phi: QuantumState) -> list[dict]:
    """Debug dump: entries as locus string + ket list."""
    out = []
    for locus, val in phi.entries:
        out.append({
            "locus": str(locus),
            "kets": [{"amp": [k.amp.real, k.amp.imag],
                      "basis": k.basis,
                      "frozen": list(k.frozen)} for k in val.kets],
        })
    return out
