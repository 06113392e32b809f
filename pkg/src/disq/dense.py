"""Dense state-vector replay of scheduled runs.

The symbolic interpreter in `semantics` evolves a factored, locus-indexed
state by rewriting.  This module replays the same schedule on one flat
numpy amplitude vector, using only the gate matrices and textbook tensor
contraction, so the two routes share nothing but the transition metadata.
`oracle_compare` runs both in lockstep over every measurement branch of
the canonical schedule and reports the largest amplitude deviation seen.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import gates
from . import qstate as qs
from . import semantics as sm
from .qstate import Qubit


class DenseError(Exception):
    """A scheduled run cannot be replayed on a dense vector."""


@dataclass
class DenseState:
    """Flat amplitude vector over an explicit qubit ordering."""

    order: list[Qubit]
    vec: np.ndarray

    def copy(self) -> "DenseState":
        return DenseState(list(self.order), self.vec.copy())


def from_state(phi: qs.QuantumState) -> DenseState:
    """Seed a dense state from a symbolic one (the run's input)."""
    order = phi.qubits()
    return DenseState(list(order), qs.flatten(phi, list(order)))


def _apply(vec: np.ndarray, n: int, U: np.ndarray,
           targets: list[int]) -> np.ndarray:
    k = len(targets)
    arr = vec.reshape([2] * n)
    arr = np.moveaxis(arr, targets, range(k))
    out = U @ arr.reshape(1 << k, -1)
    arr = np.moveaxis(out.reshape([2] * n), range(k), targets)
    return np.ascontiguousarray(arr).reshape(-1)


def _project(vec: np.ndarray, n: int, targets: list[int],
             bits: str) -> tuple[float, np.ndarray]:
    arr = vec.reshape([2] * n)
    arr = np.moveaxis(arr, targets, range(len(targets)))
    sub = np.ascontiguousarray(arr[tuple(int(b) for b in bits)]).reshape(-1)
    p = float(np.vdot(sub, sub).real)
    return p, sub


def step(ds: DenseState, act: tuple | None) -> DenseState:
    """Replay one transition's physical effect; classical acts are no-ops."""
    if act is None:
        return ds
    kind = act[0]
    if kind == "alloc":
        qubits = list(act[1])
        zeros = np.zeros(1 << len(qubits), dtype=complex)
        zeros[0] = 1.0
        return DenseState(ds.order + qubits, np.kron(ds.vec, zeros))
    if kind == "bell":
        bell = np.array([1.0, 0.0, 0.0, 1.0], dtype=complex) / np.sqrt(2.0)
        order, vec = list(ds.order), ds.vec
        for qa, qb in act[1]:
            vec = np.kron(vec, bell)
            order += [qa, qb]
        return DenseState(order, vec)
    pos = {q: i for i, q in enumerate(ds.order)}
    n = len(ds.order)
    if kind == "gate":
        _, name, params, qubits = act
        if any(q not in pos for q in qubits):
            raise DenseError(f"gate {name} touches an unallocated qubit")
        U = gates.matrix(gates.make_gate(name, list(params), len(qubits)))
        return DenseState(list(ds.order),
                          _apply(ds.vec, n, U, [pos[q] for q in qubits]))
    if kind == "measure":
        _, qubits, bits = act
        if any(q not in pos for q in qubits):
            raise DenseError("measurement touches an unallocated qubit")
        p, sub = _project(ds.vec, n, [pos[q] for q in qubits], bits)
        if p <= 0.0:
            raise DenseError(f"outcome {bits} has zero dense probability")
        keep = [q for q in ds.order if q not in set(qubits)]
        if not keep:
            # measuring the last qubits leaves the empty product, which is 1
            return DenseState([], np.array([1.0 + 0j]))
        return DenseState(keep, sub / np.sqrt(p))
    raise DenseError(f"unknown act {kind!r}")


RESIDUAL_TOL = 1e-12  # same drop threshold as simcheck's epsilon closure


@dataclass
class OracleReport:
    """Outcome of a lockstep symbolic/dense comparison."""

    max_deviation: float
    branches: int
    steps: int
    residual: float = 0.0

    def ok(self, tol: float = 1e-9) -> bool:
        return self.max_deviation <= tol


def oracle_compare(config: sm.Configuration, max_depth: int = 4000,
                   max_branches: int = 256) -> OracleReport:
    """Follow the canonical schedule symbolically and densely in lockstep.

    Every measurement branch is replayed; after each transition the
    symbolic state is flattened over the dense qubit order and compared
    amplitude by amplitude.  Branches that converge to the same
    canonical configuration share one representative (their evolutions
    differ at most by global phase), which keeps scheduling cycles
    finite: a cycle's mass decays geometrically and is dropped below
    RESIDUAL_TOL.  Raises DenseError when the branch fan-out or depth
    budget is exhausted, StuckError when the schedule jams.

    branches counts the canonical paths that reached termination;
    residual is the total dropped probability mass.
    """
    # key -> [config, dense state, probability mass, path count]
    frontier: dict[tuple, list] = \
        {sm.config_key(config): [config, from_state(config.state), 1.0, 1]}
    dev = 0.0
    steps = 0
    branches = 0
    residual = 0.0
    while frontier:
        if len(frontier) > max_branches:
            raise DenseError("too many measurement branches to replay")
        nxt: dict[tuple, list] = {}
        for cfg, ds, prob, paths in frontier.values():
            if cfg.terminated:
                branches += paths
                continue
            picked = sm.canonical_choice(cfg)
            if picked is None:
                raise sm.StuckError("no usable canonical move")
            _, usable, scale = picked
            steps += 1
            if steps > max_depth:
                raise DenseError("depth budget exhausted")
            for t in usable:
                p2 = prob * t.label.prob * scale
                if p2 < RESIDUAL_TOL:
                    residual += p2
                    continue
                ds2 = step(ds, t.act)
                flat = qs.flatten(t.next.state, ds2.order)
                if flat.size:
                    dev = max(dev, float(np.max(np.abs(flat - ds2.vec))))
                key = sm.config_key(t.next)
                slot = nxt.get(key)
                if slot is None:
                    nxt[key] = [t.next, ds2, p2, paths]
                else:
                    slot[2] += p2
                    slot[3] += paths
        frontier = nxt
    return OracleReport(dev, branches, steps, residual)
