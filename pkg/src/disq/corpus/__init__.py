"""Bundled example programs and their reference data.

Each fixture is a `.disq` source file next to this module. Programs
whose initial kets are symbolic come with a default amplitude map and
with builders for the input families the test suite sweeps (classical
basis inputs and factored superpositions). `expected/` holds small JSON
records of reference runs: canonical-schedule scripts, terminal states,
and outcome distributions.

JSON cannot hold complex numbers, so amplitudes appear there as
[re, im] pairs; `load_expected` folds them back into complex.
"""
from __future__ import annotations

import json
from dataclasses import dataclass, field
from pathlib import Path

_DIR = Path(__file__).resolve().parent


@dataclass(frozen=True)
class SimPair:
    """A sequential program, its distributed rewrite, and the site map."""
    left: str
    right: str
    map_file: str


@dataclass(frozen=True)
class Fixture:
    name: str
    file: str
    amps: dict[str, complex] = field(default_factory=dict)
    expected: str | None = None
    pair: SimPair | None = None


def corpus_dir() -> Path:
    return _DIR


def fixture_path(name: str) -> Path:
    p = _DIR / f"{name}.disq"
    if not p.exists():
        raise FileNotFoundError(f"no bundled program named {name!r}")
    return p


def fixture_source(name: str) -> str:
    return fixture_path(name).read_text()


def map_path(name: str) -> Path:
    return _DIR / f"{name}.map.json"


def load_map(name: str) -> dict[str, str]:
    return json.loads(map_path(name).read_text())


def load_expected(name: str) -> dict:
    raw = json.loads((_DIR / "expected" / f"{name}.json").read_text())
    return _decode(raw)


def _decode(node):
    if isinstance(node, dict):
        return {k: _decode(v) for k, v in node.items()}
    if isinstance(node, list):
        if len(node) == 2 and all(isinstance(x, (int, float)) for x in node):
            return complex(node[0], node[1])
        return [_decode(v) for v in node]
    return node


# ---------------------------------------------------------------------------
# amplitude builders

def bits_of(value: int, width: int, lsb_first: bool) -> str:
    s = format(value, f"0{width}b")
    return s[::-1] if lsb_first else s


def ripple_amps(y: int, t: int) -> dict[str, complex]:
    """Basis input for both ripple-adder fixtures (position 0 = LSB).

    Covers the sequential names (ya/ta over y[0..2]) and the split ones
    (ya/ta over y[0..1] at l, yb/tb over y[2] at r); unused names are 0.
    """
    yb, tb = bits_of(y, 3, True), bits_of(t, 3, True)
    amps: dict[str, complex] = {}
    for b in range(8):
        s = bits_of(b, 3, True)
        amps[f"ya{s}"] = 1.0 if s == yb else 0.0
        amps[f"ta{s}"] = 1.0 if s == tb else 0.0
    for b in range(4):
        s = bits_of(b, 2, True)
        amps[f"ya{s}"] = 1.0 if s == yb[:2] else 0.0
        amps[f"ta{s}"] = 1.0 if s == tb[:2] else 0.0
    for b in range(2):
        amps[f"yb{b}"] = 1.0 if str(b) == yb[2] else 0.0
        amps[f"tb{b}"] = 1.0 if str(b) == tb[2] else 0.0
    return amps


def ripple_product_amps(ylow: list[complex], yhigh: list[complex],
                        tlow: list[complex], thigh: list[complex]) -> dict[str, complex]:
    """Factored superposition input: ylow is a 4-vector over (y[0], y[1])
    with y[0] the leftmost ket bit, yhigh a 2-vector over y[2]; same for t.
    The sequential names take the product amplitudes."""
    assert len(ylow) == len(tlow) == 4 and len(yhigh) == len(thigh) == 2
    amps: dict[str, complex] = {}
    for lo in range(4):
        s = format(lo, "02b")
        amps[f"ya{s}"] = ylow[lo]
        amps[f"ta{s}"] = tlow[lo]
        for hi in range(2):
            amps[f"ya{s}{hi}"] = ylow[lo] * yhigh[hi]
            amps[f"ta{s}{hi}"] = tlow[lo] * thigh[hi]
    for hi in range(2):
        amps[f"yb{hi}"] = yhigh[hi]
        amps[f"tb{hi}"] = thigh[hi]
    return amps


def phase_adder_amps(vec: list[complex]) -> dict[str, complex]:
    """Input for the phase-ladder adder fixtures: an 8-vector over x,
    big-endian (x[0] is the leftmost ket bit and the most significant)."""
    assert len(vec) == 8
    return {f"xa{format(i, '03b')}": vec[i] for i in range(8)}


def phase_adder_basis_amps(x: int) -> dict[str, complex]:
    vec = [0.0] * 8
    vec[x] = 1.0
    return phase_adder_amps(vec)


def teleport_amps(z0: complex, z1: complex) -> dict[str, complex]:
    return {"z0": z0, "z1": z1}


# ---------------------------------------------------------------------------
# generated sources

def ghz_source(n: int) -> str:
    """A GHZ cascade on n qubits split across n-1 racing processes.

    Only schedules that fire the copies in index order reach the GHZ
    state; the others leave shorter cascades. Exhaustive exploration
    must find the GHZ terminal among them.
    """
    assert n >= 2
    lines = [f"membrane g {{", f"  new x[{n}];", "  process {",
             "    x[0] *= H;", "    x[0,2) *= CX;", "  }"]
    for j in range(1, n - 1):
        lines += ["  process {", f"    x[{j},{j + 2}) *= CX;", "  }"]
    lines.append("}")
    return "\n".join(lines) + "\n"


# ---------------------------------------------------------------------------
# registry

PAIRS = {
    "adder": SimPair("adder_seq", "adder_dist", "adder"),
    "qft_adder": SimPair("qft_adder_seq", "qft_adder_dist", "qft_adder"),
    "shor": SimPair("shor_seq", "shor_dist", "shor"),
}

MUTANTS = tuple(f"adder_dist_mut{i}" for i in range(1, 6))

FIXTURES = {
    "sendrecv": Fixture("sendrecv", "sendrecv.disq", expected="sendrecv"),
    "ghz4": Fixture("ghz4", "ghz4.disq", expected="ghz4"),
    "teleport": Fixture("teleport", "teleport.disq",
                        amps=teleport_amps(0.6, 0.8j), expected="teleport"),
    "fig4_demo": Fixture("fig4_demo", "fig4_demo.disq", expected="fig4_demo"),
    "adder_seq": Fixture("adder_seq", "adder_seq.disq",
                         amps=ripple_amps(5, 3), expected="adder"),
    "adder_dist": Fixture("adder_dist", "adder_dist.disq",
                          amps=ripple_amps(5, 3), expected="adder"),
    "qft_adder_seq": Fixture("qft_adder_seq", "qft_adder_seq.disq",
                             amps=phase_adder_basis_amps(3), expected="qft_adder"),
    "qft_adder_dist": Fixture("qft_adder_dist", "qft_adder_dist.disq",
                              amps=phase_adder_basis_amps(3), expected="qft_adder"),
    "shor_seq": Fixture("shor_seq", "shor_seq.disq", expected="shor"),
    "shor_dist": Fixture("shor_dist", "shor_dist.disq", expected="shor"),
    "bad_cross_membrane": Fixture("bad_cross_membrane", "bad_cross_membrane.disq"),
}
for _m in MUTANTS:
    FIXTURES[_m] = Fixture(_m, f"{_m}.disq", amps=ripple_amps(5, 3))


def fixtures() -> tuple[Fixture, ...]:
    return tuple(FIXTURES[k] for k in sorted(FIXTURES))


def fixture(name: str) -> Fixture:
    if name not in FIXTURES:
        raise KeyError(f"no bundled program named {name!r}")
    return FIXTURES[name]
