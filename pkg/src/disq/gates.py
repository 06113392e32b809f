"""Unitary gate library.

A gate's action maps an arity-wide basis string to a superposition over
arity-wide basis strings. apply_gate lifts the action ket-wise onto the
first `arity` position bits of a wider value, leaving trailing bits and
frozen stacks untouched (that is how a controlled ladder like CSR(j) or
CU targets a prefix of a joined locus).

Controlled gates take the control(s) first. Bitstrings read big-endian.
"""
from __future__ import annotations

import cmath
import math
from dataclasses import dataclass, field
from math import gcd
from typing import Callable

import numpy as np

from .qstate import QuantumValue, BasisKet, canonicalize

Action = Callable[[str], list[tuple[complex, str]]]


class GateError(Exception):
    pass


class UnknownGate(GateError):
    pass


class MalformedApplication(GateError):
    pass


@dataclass(frozen=True)
class Gate:
    name: str
    arity: int
    params: tuple[int, ...]
    action: Action = field(compare=False)

    def __str__(self):
        if self.params:
            return f"{self.name}({','.join(map(str, self.params))})"
        return self.name


def apply_gate(g: Gate, v: QuantumValue) -> QuantumValue:
    """Apply g to the first g.arity bits of every ket."""
    if g.arity > v.width:
        raise MalformedApplication(
            f"{g} needs {g.arity} qubits, value has {v.width}")
    out = []
    for k in v.kets:
        head, tail = k.basis[:g.arity], k.basis[g.arity:]
        for amp, bits in g.action(head):
            out.append(BasisKet(k.amp * amp, bits + tail, k.frozen))
    return canonicalize(QuantumValue(tuple(out), v.width))


def matrix(g: Gate) -> np.ndarray:
    """Dense 2^arity matrix of the gate's action (columns = inputs)."""
    dim = 1 << g.arity
    M = np.zeros((dim, dim), dtype=complex)
    for y in range(dim):
        for amp, bits in g.action(format(y, f"0{g.arity}b")):
            M[int(bits, 2), y] += amp
    return M


def _compose(*steps: Callable[[str], list[tuple[complex, str]]]) -> Action:
    def act(bits: str) -> list[tuple[complex, str]]:
        frontier = [(1.0 + 0j, bits)]
        for step in steps:
            nxt = []
            for amp, b in frontier:
                for a2, b2 in step(b):
                    nxt.append((amp * a2, b2))
            frontier = nxt
        return frontier
    return act


def _permutation(f: Callable[[str], str]) -> Action:
    return lambda bits: [(1.0 + 0j, f(bits))]


def _flip(bits: str, i: int) -> str:
    return bits[:i] + ("1" if bits[i] == "0" else "0") + bits[i + 1:]


_INV_SQRT2 = 1 / math.sqrt(2)


def _h_action(bits: str) -> list[tuple[complex, str]]:
    sign = -1.0 if bits == "1" else 1.0
    return [(_INV_SQRT2, "0"), (sign * _INV_SQRT2, "1")]


def _cx(bits: str) -> str:
    return bits if bits[0] == "0" else bits[0] + ("1" if bits[1] == "0" else "0")


def _ccx(bits: str) -> str:
    return _flip(bits, 2) if bits[0] == "1" and bits[1] == "1" else bits


def _phase(theta: float) -> complex:
    return cmath.exp(1j * theta)


def _rz_action(m: int) -> Action:
    return lambda bits: [((_phase(2 * math.pi / (1 << m)) if bits == "1" else 1.0), bits)]


def _sr_action(m: int) -> Action:
    # position i of the m+1 targets carries RZ(m+1-i)
    def act(bits: str) -> list[tuple[complex, str]]:
        theta = sum(2 * math.pi / (1 << (m + 1 - i))
                    for i, b in enumerate(bits) if b == "1")
        return [(_phase(theta), bits)]
    return act


def _controlled(inner: Action) -> Action:
    def act(bits: str) -> list[tuple[complex, str]]:
        if bits[0] == "0":
            return [(1.0 + 0j, bits)]
        return [(a, bits[0] + rest) for a, rest in inner(bits[1:])]
    return act


def _qft_action(n: int) -> Action:
    dim = 1 << n
    omega = 2 * math.pi / dim

    def act(bits: str) -> list[tuple[complex, str]]:
        y = int(bits, 2)
        out = []
        for k in range(dim):
            kbits = format(k, f"0{n}b")
            lit_k = int(kbits[::-1], 2)
            out.append((_phase(omega * y * lit_k) / math.sqrt(dim), kbits))
        return out
    return act


def _qft_inv_action(n: int) -> Action:
    dim = 1 << n
    omega = 2 * math.pi / dim

    def act(bits: str) -> list[tuple[complex, str]]:
        lit_y = int(bits[::-1], 2)
        out = []
        for k in range(dim):
            out.append((_phase(-omega * k * lit_y) / math.sqrt(dim),
                        format(k, f"0{n}b")))
        return out
    return act


def _cu_action(a: int, N: int, n: int) -> Action:
    def act(bits: str) -> list[tuple[complex, str]]:
        if bits[0] == "0":
            return [(1.0 + 0j, bits)]
        y = int(bits[1:], 2)
        out = (a * y) % N if y < N else y
        return [(1.0 + 0j, bits[0] + format(out, f"0{n}b"))]
    return act


# MAJ/UMA as the three-gate Cuccaro blocks on operand order (x, y, t)
_MAJ_ACTION = _compose(
    _permutation(lambda b: b[0] + ("1" if b[1] != b[2] else "0") + b[2]),  # y ^= t
    _permutation(lambda b: ("1" if b[0] != b[2] else "0") + b[1:]),        # x ^= t
    _permutation(_ccx),                                                    # t ^= x&y
)

_UMA_ACTION = _compose(
    _permutation(_ccx),
    _permutation(lambda b: ("1" if b[0] != b[2] else "0") + b[1:]),
    _permutation(lambda b: b[0] + ("1" if b[1] != b[0] else "0") + b[2]),  # y ^= x
)


def make_gate(name: str, params: list[int], operand_width: int) -> Gate:
    """Instantiate a catalog gate for an operand of the given width.

    Fixed-arity gates ignore operand_width beyond the arity check done by
    apply_gate; QFT/QFTinv/CU size themselves to the operand.
    """
    p = tuple(params)

    def fixed(arity: int, action: Action, nparams: int = 0) -> Gate:
        if len(p) != nparams:
            raise UnknownGate(f"{name} takes {nparams} parameter(s), got {len(p)}")
        return Gate(name, arity, p, action)

    if name == "H":
        return fixed(1, _h_action)
    if name == "X":
        return fixed(1, _permutation(lambda b: "1" if b == "0" else "0"))
    if name == "Z":
        return fixed(1, lambda bits: [((-1.0 if bits == "1" else 1.0), bits)])
    if name == "CX":
        return fixed(2, _permutation(_cx))
    if name == "CZ":
        return fixed(2, lambda bits: [((-1.0 if bits == "11" else 1.0), bits)])
    if name == "RZ":
        if len(p) != 1:
            raise UnknownGate("RZ takes one parameter")
        return Gate(name, 1, p, _rz_action(p[0]))
    if name == "SR":
        if len(p) != 1:
            raise UnknownGate("SR takes one parameter")
        return Gate(name, p[0] + 1, p, _sr_action(p[0]))
    if name == "CSR":
        if len(p) != 1:
            raise UnknownGate("CSR takes one parameter")
        return Gate(name, p[0] + 2, p, _controlled(_sr_action(p[0])))
    if name == "QFT":
        if p:
            raise UnknownGate("QFT takes no parameters")
        if operand_width < 1:
            raise MalformedApplication("QFT needs a nonempty operand")
        return Gate(name, operand_width, (), _qft_action(operand_width))
    if name == "QFTinv":
        if p:
            raise UnknownGate("QFTinv takes no parameters")
        if operand_width < 1:
            raise MalformedApplication("QFTinv needs a nonempty operand")
        return Gate(name, operand_width, (), _qft_inv_action(operand_width))
    if name == "MAJ":
        return fixed(3, _MAJ_ACTION)
    if name == "UMA":
        return fixed(3, _UMA_ACTION)
    if name == "CU":
        if len(p) != 2:
            raise UnknownGate("CU takes parameters (a, N)")
        a, N = p
        if N < 2 or gcd(a, N) != 1:
            raise UnknownGate(f"CU({a},{N}): multiplier must be coprime to modulus")
        n = operand_width - 1
        if n < N.bit_length():
            raise MalformedApplication(
                f"CU({a},{N}) target needs {N.bit_length()} qubits, operand gives {n}")
        return Gate(name, operand_width, (a % N, N), _cu_action(a % N, N, n))
    raise UnknownGate(f"unknown gate {name!r}")


GATE_NAMES = {"H", "X", "Z", "CX", "CZ", "RZ", "SR", "CSR",
              "QFT", "QFTinv", "MAJ", "UMA", "CU"}


def builtin_catalog() -> dict[str, Callable[[list[int], int], Gate]]:
    return {name: (lambda params, width, _n=name: make_gate(_n, params, width))
            for name in GATE_NAMES}
