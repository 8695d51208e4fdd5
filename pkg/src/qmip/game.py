"""The classical clause/variable consistency game and the quantum rounding.

Charlie receives a random clause and answers 3 bits; Diana receives a random
variable of that clause and answers 1 bit. They win when Charlie's triple
satisfies the clause and agrees with Diana at her variable. On a formula
whose best assignment still violates a gamma fraction of clauses, no strategy
wins with probability above 1 - gamma/3.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from fractions import Fraction

import numpy as np

from .sat import Assignment, Formula, FormulaError
from .quantum import MeasurementFamily
from .protocol import (
    Bits3,
    ProverStrategy,
    QueryTuple,
    family_tables,
    index_to_bits3,
    legal_tuples,
    ProtocolEngine,
)
from .diagnostics import constants_with

MAX_GAME_VARS = 20


class GameError(ValueError):
    pass


@dataclass(frozen=True)
class ClassicalStrategy:
    """charlie[c] = claimed 3 bits for clause c; diana[v] = claimed bit for v."""

    charlie: tuple[Bits3, ...]
    diana: tuple[int, ...]

    def to_json_dict(self) -> dict:
        return {"charlie": [list(t) for t in self.charlie], "diana": list(self.diana)}

    @staticmethod
    def from_assignment(f: Formula, t: Assignment) -> "ClassicalStrategy":
        return ClassicalStrategy(
            charlie=tuple(t.value_of_clause(f, c) for c in range(f.num_clauses)),
            diana=tuple(t.bits),
        )


@dataclass(frozen=True)
class GameValue:
    value: Fraction
    witness: ClassicalStrategy


def _wins(f: Formula, strat: ClassicalStrategy, c: int, v: int) -> bool:
    triple = strat.charlie[c]
    return f.clause_satisfied(c, triple) and triple[f.var_position(c, v)] == strat.diana[v]


def game_round(f: Formula, strat: ClassicalStrategy, rng: np.random.Generator) -> bool:
    """One sampled round: uniform clause, uniform variable inside it."""
    c = int(rng.integers(f.num_clauses))
    v = int(f.clause_vars(c)[rng.integers(3)])
    return _wins(f, strat, c, v)


def game_value_of(f: Formula, strat: ClassicalStrategy) -> Fraction:
    """Exact win probability of a fixed strategy: wins / 3M."""
    wins = sum(_wins(f, strat, c, v)
               for c in range(f.num_clauses) for v in f.clause_vars(c))
    return Fraction(wins, 3 * f.num_clauses)


def _best_response_table(f: Formula, c: int) -> np.ndarray:
    """best[dbits] = max matches a satisfying triple achieves against Diana's
    local bits (packed in clause order)."""
    best = np.zeros(8, dtype=np.int64)
    for dbits in range(8):
        dv = index_to_bits3(dbits)
        top = 0
        for t in range(8):
            triple = index_to_bits3(t)
            if not f.clause_satisfied(c, triple):
                continue
            top = max(top, sum(triple[i] == dv[i] for i in range(3)))
        best[dbits] = top
    return best


def _best_charlie_triple(f: Formula, c: int, dv: Bits3) -> Bits3:
    """Lexicographically smallest satisfying triple with maximal agreement."""
    best_t, best_cnt = None, -1
    for t in range(8):
        triple = index_to_bits3(t)
        if not f.clause_satisfied(c, triple):
            continue
        cnt = sum(triple[i] == dv[i] for i in range(3))
        if cnt > best_cnt:
            best_t, best_cnt = triple, cnt
    return best_t


def game_value_bruteforce(f: Formula) -> GameValue:
    """Exact optimum over all strategies.

    The win probability is linear in each player's mixed strategy, so some
    deterministic pair attains the optimum; Diana's 2^N assignments are
    enumerated with Charlie best-responding per clause.
    """
    n, m = f.num_vars, f.num_clauses
    if n > MAX_GAME_VARS:
        raise FormulaError(f"instance too large for brute force: N={n} > {MAX_GAME_VARS}")
    dianas = np.arange(1 << n, dtype=np.uint32)
    total = np.zeros(1 << n, dtype=np.int64)
    for c in range(m):
        v1, v2, v3 = f.clause_vars(c)
        local = ((((dianas >> v1) & 1) << 2)
                 | (((dianas >> v2) & 1) << 1)
                 | ((dianas >> v3) & 1)).astype(np.int64)
        total += _best_response_table(f, c)[local]
    best_idx = int(total.argmax())
    diana = tuple(int((best_idx >> v) & 1) for v in range(n))
    charlie = tuple(
        _best_charlie_triple(f, c, tuple(diana[v] for v in f.clause_vars(c)))
        for c in range(m)
    )
    witness = ClassicalStrategy(charlie=charlie, diana=diana)
    value = Fraction(int(total[best_idx]), 3 * m)
    assert value == game_value_of(f, witness)
    return GameValue(value=value, witness=witness)


# -- quantum -> classical rounding ---------------------------------------------------


def _argmax_claims(fid: np.ndarray) -> tuple[int, int]:
    """Index pair maximizing fid, ties broken lexicographically."""
    best = (-1.0, 0, 0)
    na, nb = fid.shape
    for a in range(na):
        for b in range(nb):
            if fid[a, b] > best[0] + 1e-15:
                best = (float(fid[a, b]), a, b)
    return best[1], best[2]


def round_quantum_to_classical(f: Formula, fam: MeasurementFamily, k: int,
                               rng: np.random.Generator) -> ClassicalStrategy:
    """Each player simulates their prover under outcome k and answers with the
    claim of maximal reference fidelity.

    Charlie draws a private shadow clause per input clause (Diana likewise a
    shadow variable), builds the post-measurement state for the pair, and
    picks the claimed bits maximizing the exact fidelity; ties go to the
    lexicographically smallest claim. Shadow draws are private and independent.
    """
    tables = family_tables(f, fam)
    if tables.prob_a[k].max() <= 1e-12 or tables.prob_b[k].max() <= 1e-12:
        raise GameError(f"outcome {k} has zero probability; rounding undefined")
    charlie = []
    for y in range(f.num_clauses):
        yt = int(rng.integers(f.num_clauses))
        if tables.prob_a[k, y, yt] <= 1e-12:
            charlie.append((0, 0, 0))  # unreachable branch: default claim
            continue
        if y == yt:
            diag = np.diag(tables.fid_a[k, y, y])
            a, _ = _argmax_claims(diag[:, None])
            charlie.append(index_to_bits3(a))
        else:
            a, _ = _argmax_claims(tables.fid_a[k, y, yt])
            charlie.append(index_to_bits3(a))
    diana = []
    for x in range(f.num_vars):
        xt = int(rng.integers(f.num_vars))
        if tables.prob_b[k, x, xt] <= 1e-12:
            diana.append(0)
            continue
        if x == xt:
            diag = np.diag(tables.fid_b[k, x, x])
            a, _ = _argmax_claims(diag[:, None])
            diana.append(a)
        else:
            a, _ = _argmax_claims(tables.fid_b[k, x, xt])
            diana.append(a)
    return ClassicalStrategy(charlie=tuple(charlie), diana=tuple(diana))


# -- per-tuple failure probabilities ---------------------------------------------------


@dataclass(frozen=True)
class FailRecord:
    fail_prob: float            # 1 - P(all four checks pass | r, k)
    clause_ok: bool
    consistency_ok: bool
    swap_a_pass: float
    swap_b_pass: float

    @property
    def alice_swap_fail(self) -> float:
        return 1.0 - self.swap_a_pass


def failprob_table(f: Formula, strategy: ProverStrategy, k: int) -> dict[QueryTuple, FailRecord]:
    """Exact failure probability of every query tuple under outcome k."""
    engine = ProtocolEngine(f, strategy)
    tuples, _, _, _, _ = engine.exact_tables()
    out = {}
    for r in tuples:
        bits = strategy.round2(r, k)
        c1, c2, pa, pb = engine._check_probs(r, k, tuple(int(b) for b in bits))
        out[r] = FailRecord(
            fail_prob=1.0 - (float(c1 and c2) * pa * pb),
            clause_ok=c1, consistency_ok=c2, swap_a_pass=pa, swap_b_pass=pb,
        )
    return out


@dataclass(frozen=True)
class FailureSets:
    """L(y, x) = shadow pairs with failure above threshold; fail-heavy clauses."""

    l_sets: dict[tuple[int, int], frozenset]
    fail_heavy: frozenset
    failprob_threshold: float
    count_threshold: float


def failure_sets(f: Formula, strategy: ProverStrategy, k: int, gamma: float,
                 clause_pool=None, constants: dict[str, float] | None = None) -> FailureSets:
    cfg = constants_with(constants)
    table = failprob_table(f, strategy, k)
    thresh = cfg["failprob_coeff"] * gamma
    count_thresh = cfg["fail_count_coeff"] * gamma * f.num_vars * f.num_clauses
    pool = range(f.num_clauses) if clause_pool is None else clause_pool
    l_sets = {}
    heavy = set()
    for y in pool:
        for x in f.clause_vars(y):
            bad = frozenset(
                (r.y_tilde, r.x_tilde)
                for r, rec in table.items()
                if r.y == y and r.x == x and rec.fail_prob > thresh
            )
            l_sets[(y, x)] = bad
            if len(bad) > count_thresh:
                heavy.add(y)
    return FailureSets(l_sets=l_sets, fail_heavy=frozenset(heavy),
                       failprob_threshold=thresh, count_threshold=count_thresh)


@dataclass(frozen=True)
class RoundingReport:
    """Composite rounding check: premises, floor, and the achieved value."""

    outcome: int
    eps1: float
    eps2: float
    eps3: float
    r_set: tuple[int, ...]
    premises_hold: bool
    premise_notes: tuple[str, ...]
    floor: float
    rounded_value: Fraction
    meets_floor: bool | None


def rounding_report(f: Formula, strategy: ProverStrategy, k: int,
                    eps1: float, eps2: float, eps3: float,
                    rng: np.random.Generator, gamma: float = 0.0,
                    constants: dict[str, float] | None = None) -> RoundingReport:
    """Check the rounding premises for outcome k and compare the rounded
    strategy's exact value against the composite floor. Reported, not asserted:
    at desk scale the premises rarely hold with the paper-scale epsilons.
    """
    cfg = constants_with(constants)
    notes = []
    if eps3 >= cfg["eps3_max"]:
        notes.append(f"eps3 = {eps3} not below {cfg['eps3_max']}")
    table = failprob_table(f, strategy, k)
    m, n = f.num_clauses, f.num_vars
    r_set = []
    for y in range(m):
        ok = all(
            sum(1 for r, rec in table.items()
                if r.y == y and r.x == x and rec.fail_prob > eps3) < eps2 * m * n
            for x in f.clause_vars(y)
        )
        if ok:
            r_set.append(y)
    if len(r_set) < (1 - eps1) * m:
        notes.append(f"|R| = {len(r_set)} below (1 - eps1) M = {(1 - eps1) * m}")
    premises = not notes
    floor = (1 - eps1) * (1 - eps2) * (1 - eps3) * (1 - 200 * eps3) ** 2
    rounded = round_quantum_to_classical(f, strategy.family, k, rng)
    value = game_value_of(f, rounded)
    return RoundingReport(
        outcome=k, eps1=eps1, eps2=eps2, eps3=eps3, r_set=tuple(r_set),
        premises_hold=premises, premise_notes=tuple(notes), floor=floor,
        rounded_value=value,
        meets_floor=(float(value) >= floor - 1e-9) if premises else None,
    )
