"""Observable similarity of two programs.

A weighted configuration set tracks the probabilistic branches a program
can be in; labels seen through a mask are either a shared measurement
token carrying the outcome bits, or epsilon. One program simulates
another when, after closing both sets under masked-epsilon moves, every
observable step of the left set is matched by the right set with the
same probability, recursively.

Closure and per-element observation both follow the canonical scheduler
(semantics.canonical_choice), so the branching that remains is exactly
measurement fan-out. Elements are merged by canonical configuration
keys, which erase per-entry global phase: branches of a masked teleport
measurement converge after their corrections even though they differ by
a sign.
"""
from __future__ import annotations

from dataclasses import dataclass
from typing import Iterable, Union

from . import semantics as sm
from . import syntax as sx

CMP_TOL = 1e-9
RESIDUAL_TOL = 1e-12

EPSILON = ("eps",)


class SimcheckError(Exception):
    pass


class MaskError(SimcheckError):
    pass


class DivergedClosure(SimcheckError):
    def __init__(self, message: str, residual: float):
        super().__init__(message)
        self.residual = residual


class _Budget(Exception):
    pass


# ---------------------------------------------------------------------------
# weighted configuration sets

@dataclass(frozen=True)
class WeightedConfig:
    config: sm.Configuration
    weight: float

    def __post_init__(self):
        if not 0.0 < self.weight <= 1.0 + CMP_TOL:
            raise SimcheckError(f"weight {self.weight!r} outside (0, 1]")


@dataclass(frozen=True)
class ConfigSet:
    elements: tuple[WeightedConfig, ...]

    @property
    def total(self) -> float:
        return sum(e.weight for e in self.elements)


def config_set(items: Iterable[tuple[sm.Configuration, float]]) -> ConfigSet:
    """Merge by canonical configuration (global phase erased per entry)."""
    acc: dict[tuple, list] = {}
    for config, weight in items:
        key = sm.config_key(config)
        slot = acc.get(key)
        if slot is None:
            acc[key] = [config, weight]
        else:
            slot[1] += weight
    elements = tuple(WeightedConfig(c, w)
                     for _, (c, w) in sorted(acc.items(), key=lambda kv: kv[0]))
    total = sum(e.weight for e in elements)
    if total > 1.0 + CMP_TOL:
        raise SimcheckError(f"set mass {total!r} exceeds 1")
    return ConfigSet(elements)


def singleton(config: sm.Configuration) -> ConfigSet:
    return config_set([(config, 1.0)])


def normalize(g: ConfigSet) -> ConfigSet:
    """set(G, 1): rescale weights to total 1."""
    t = g.total
    if t <= 0.0:
        raise SimcheckError("cannot normalize an empty set")
    return ConfigSet(tuple(WeightedConfig(e.config, e.weight / t)
                           for e in g.elements))


def set_key(g: ConfigSet) -> tuple:
    return tuple((sm.config_key(e.config), round(e.weight, 9))
                 for e in g.elements)


# ---------------------------------------------------------------------------
# label masks

def parse_site(text: str) -> str:
    """User syntax "t[1]@l" or "y[2] ++ x[1]@r" -> internal "l:t[1]"."""
    ranges, sep, loc = text.rpartition("@")
    if not sep or not ranges or not loc:
        raise MaskError(f"site {text!r} is not of the form ranges@location")
    return f"{loc.strip()}:{ranges.strip()}"


def show_site(site: str) -> str:
    loc, _, ranges = site.partition(":")
    return f"{ranges}@{loc}"


@dataclass(frozen=True)
class LabelMask:
    """Measurement sites kept observable, everything else epsilon.

    left/right map internal site strings ("loc:ranges") of the two
    programs to shared tokens. None means the default mask: keep every
    measurement, with the location erased from the token (a sequential
    program has no counterpart for the distributed one's locations).
    """
    left: tuple[tuple[str, str], ...] | None
    right: tuple[tuple[str, str], ...] | None

    def mask(self, label: sm.Label, side: str) -> tuple:
        """Masked view of a label: EPSILON or ("obs", token, bits).

        The probability component is never part of the masked label; it
        is compared separately.
        """
        if label.site is None or label.obs is None:
            return EPSILON
        table = self.left if side == "left" else self.right
        if table is None:
            return ("obs", label.site.partition(":")[2], label.obs)
        for site, token in table:
            if site == label.site:
                return ("obs", token, label.obs)
        return EPSILON


def default_mask() -> LabelMask:
    return LabelMask(None, None)


def epsilon_mask() -> LabelMask:
    return LabelMask((), ())


def measurement_sites(prog: sx.Program) -> set[str]:
    """Internal site strings of every measurement in the program."""
    sites: set[str] = set()

    def walk(loc: str, p: sx.Process) -> None:
        if isinstance(p, sx.PNil):
            return
        if isinstance(p, sx.PIf):
            walk(loc, p.then)
            walk(loc, p.els)
            return
        if isinstance(p, sx.PLocal) and isinstance(p.action, sx.AMeasure):
            sites.add(sm.measure_site(loc, p.action.ranges))
        walk(loc, p.cont)

    for m in prog.membranes:
        while isinstance(m, (sx.MNewArray, sx.MNewChannel)):
            m = m.cont
        for p in m.processes:
            walk(m.loc, p)
    return sites


def equate_observables(pairs: dict[str, str],
                       left_sites: set[str] | None = None,
                       right_sites: set[str] | None = None) -> LabelMask:
    """Build the mask that identifies corresponding measurement sites.

    pairs maps left-program sites to right-program sites in user syntax
    ("t[1]@l" -> "c[1]@l"). Matched sites share a token; every other
    label becomes epsilon. An empty map observes nothing.
    """
    left: list[tuple[str, str]] = []
    right: list[tuple[str, str]] = []
    for i, (l, r) in enumerate(sorted(pairs.items())):
        sl, sr = parse_site(l), parse_site(r)
        if left_sites is not None and sl not in left_sites:
            raise MaskError(
                f"left program never measures {show_site(sl)}; sites: "
                f"{', '.join(sorted(show_site(s) for s in left_sites))}")
        if right_sites is not None and sr not in right_sites:
            raise MaskError(
                f"right program never measures {show_site(sr)}; sites: "
                f"{', '.join(sorted(show_site(s) for s in right_sites))}")
        token = f"k{i}"
        left.append((sl, token))
        right.append((sr, token))
    return LabelMask(tuple(left), tuple(right))


# ---------------------------------------------------------------------------
# masked steps of one element

def element_steps(config: sm.Configuration, mask: LabelMask, side: str):
    """(observables, epsilon moves) of the canonical choice, self-folded.

    observables: dict masked-label -> [(prob, successor), ...]
    epsilons: list of (prob, successor)
    A terminated configuration has neither.
    """
    if config.terminated:
        return {}, []
    picked = sm.canonical_choice(config)
    if picked is None:
        if sm.enabled_choices(config):
            raise DivergedClosure("an element has only self moves", 0.0)
        raise sm.StuckError("stuck configuration inside a set")
    _, usable, scale = picked
    observables: dict[tuple, list[tuple[float, sm.Configuration]]] = {}
    epsilons: list[tuple[float, sm.Configuration]] = []
    for t in usable:
        alpha = mask.mask(t.label, side)
        p = t.label.prob * scale
        if alpha == EPSILON:
            epsilons.append((p, t.next))
        else:
            observables.setdefault(alpha, []).append((p, t.next))
    return observables, epsilons


# ---------------------------------------------------------------------------
# epsilon closure

def epsilon_closure(g: ConfigSet, mask: LabelMask, side: str = "left",
                    max_rounds: int = 100000,
                    stats: dict | None = None) -> ConfigSet:
    """Advance masked-epsilon moves until every element can observe or
    has terminated.

    Elements advance in lockstep rounds under the canonical scheduler;
    merging by canonical key folds converging branches, and self-loop
    mass is folded geometrically inside each choice. Mass still
    unabsorbed after a round below RESIDUAL_TOL is dropped; hitting the
    round budget first reports divergence with the residual.
    """
    stable: dict[tuple, list] = {}
    work: dict[tuple, list] = {}
    for e in g.elements:
        work[sm.config_key(e.config)] = [e.config, e.weight]

    def absorb(key, config, weight):
        slot = stable.get(key)
        if slot is None:
            stable[key] = [config, weight]
        else:
            slot[1] += weight

    for _ in range(max_rounds):
        if not work:
            break
        nxt: dict[tuple, list] = {}
        for key, (config, weight) in work.items():
            if config.terminated:
                absorb(key, config, weight)
                continue
            observables, epsilons = element_steps(config, mask, side)
            if observables:
                absorb(key, config, weight)
                continue
            for p, succ in epsilons:
                k2 = sm.config_key(succ)
                slot = nxt.get(k2)
                if slot is None:
                    nxt[k2] = [succ, weight * p]
                else:
                    slot[1] += weight * p
        residual = sum(w for _, w in nxt.values())
        if residual < RESIDUAL_TOL:
            if stats is not None and residual > stats.get("residual", 0.0):
                stats["residual"] = residual
            work = {}
            break
        work = nxt
    else:
        raise DivergedClosure(
            f"epsilon closure did not settle within {max_rounds} rounds",
            sum(w for _, w in work.values()))
    return config_set([(c, w) for c, w in stable.values()])


# ---------------------------------------------------------------------------
# set transitions

@dataclass(frozen=True)
class NotUniform:
    alpha: tuple
    missing: int  # how many elements had no alpha-labeled step


def set_transition(g: ConfigSet, alpha: tuple, mask: LabelMask,
                   side: str = "left") -> Union[ConfigSet, NotUniform]:
    """One observable step of the whole set.

    Every element must take an alpha-labeled step; successors carry
    p_j * t_j and merge by canonical configuration. The resulting set's
    total is the probability of alpha from g.
    """
    if alpha == EPSILON:
        raise SimcheckError("set_transition needs an observable label")
    succs: list[tuple[sm.Configuration, float]] = []
    missing = 0
    for e in g.elements:
        observables, _ = element_steps(e.config, mask, side)
        moves = observables.get(alpha)
        if not moves:
            missing += 1
            continue
        for p, succ in moves:
            succs.append((succ, e.weight * p))
    if missing:
        return NotUniform(alpha, missing)
    return config_set(succs)


def _partial_transition(g: ConfigSet, alpha: tuple,
                        steps: list) -> tuple[ConfigSet | None, float]:
    """Zero-extended variant: elements without alpha contribute 0.

    steps[j] are the precomputed observables of element j. Used by the
    similarity recursion so a set whose branches disagree on an outcome
    is compared by probability mass instead of being skipped.
    """
    succs: list[tuple[sm.Configuration, float]] = []
    for e, observables in zip(g.elements, steps):
        for p, succ in observables.get(alpha, ()):
            succs.append((succ, e.weight * p))
    if not succs:
        return None, 0.0
    out = config_set(succs)
    return out, out.total


# ---------------------------------------------------------------------------
# verdicts

@dataclass(frozen=True)
class Similar:
    probed_pairs: int
    residual_mass: float = 0.0
    diagnostics: tuple[str, ...] = ()


@dataclass(frozen=True)
class CounterExample:
    path: tuple[str, ...]
    left_prob: float
    right_prob: float
    probed_pairs: int
    reason: str = "probability mismatch"


@dataclass(frozen=True)
class Inconclusive:
    probed_pairs: int
    frontier: int
    reason: str = "budget exceeded"


Verdict = Union[Similar, CounterExample, Inconclusive]


def show_alpha(alpha: tuple) -> str:
    return f"{alpha[1]}={alpha[2]}"


def _near_duplicates(g: ConfigSet) -> list[str]:
    """Flag distinct elements that coincide at coarse precision: likely
    branches that should merge but drifted past the canonical rounding."""
    coarse: dict[tuple, int] = {}
    notes = []
    for e in g.elements:
        k = sm.config_key(e.config, digits=5)
        coarse[k] = coarse.get(k, 0) + 1
    for k, n in coarse.items():
        if n > 1:
            notes.append(f"{n} elements within 1e-5 of each other")
    return notes


def check_simulation(g0: ConfigSet, h0: ConfigSet, mask: LabelMask,
                     tol: float = CMP_TOL, budget: int = 100000,
                     refuted_log: list | None = None) -> Verdict:
    """Decide whether h0 simulates g0 over masked observables.

    Depth-first over observable labels with memoization on canonical
    (G, H) pairs; a pair under evaluation counts as similar until some
    finite path refutes it. The counterexample carries the masked label
    path and the mismatched probabilities.
    """
    visited: set[tuple] = set()
    probed = 0
    diagnostics: list[str] = []
    stats: dict = {"residual": 0.0}

    def go(g: ConfigSet, h: ConfigSet, path: tuple[str, ...]):
        nonlocal probed
        g = epsilon_closure(g, mask, "left", stats=stats)
        h = epsilon_closure(h, mask, "right", stats=stats)
        key = (set_key(g), set_key(h))
        if key in visited:
            return None
        visited.add(key)
        probed += 1
        if probed > budget:
            raise _Budget
        diagnostics.extend(_near_duplicates(g))
        diagnostics.extend(_near_duplicates(h))
        g_steps = [element_steps(e.config, mask, "left")[0] for e in g.elements]
        h_steps = [element_steps(e.config, mask, "right")[0] for e in h.elements]
        alphas = sorted({a for obs in g_steps for a in obs})
        for alpha in alphas:
            g1, p = _partial_transition(g, alpha, g_steps)
            h1, t = _partial_transition(h, alpha, h_steps)
            if abs(p - t) > tol:
                if refuted_log is not None:
                    refuted_log.append(key)
                return CounterExample(path + (show_alpha(alpha),), p, t, probed)
            if g1 is None or h1 is None:
                continue  # at most tol of mass on either side
            bad = go(normalize(g1), normalize(h1), path + (show_alpha(alpha),))
            if bad is not None:
                if refuted_log is not None:
                    refuted_log.append(key)
                return bad
        return None

    try:
        bad = go(g0, h0, ())
    except _Budget:
        return Inconclusive(probed, frontier=len(visited))
    if bad is not None:
        return bad
    return Similar(probed, residual_mass=stats["residual"],
                   diagnostics=tuple(sorted(set(diagnostics))))


def check_programs(left: sx.Program, right: sx.Program, mask: LabelMask,
                   amps: dict[str, complex] | None = None,
                   tol: float = CMP_TOL, budget: int = 100000) -> Verdict:
    """check_simulation on the two programs' initial configurations."""
    g0 = singleton(sm.initial_configuration(left, amps))
    h0 = singleton(sm.initial_configuration(right, amps))
    return check_simulation(g0, h0, mask, tol=tol, budget=budget)
