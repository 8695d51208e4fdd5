"""Gap-3SAT instances: parsing, validation, brute-force gaps, planted generation.

A formula is a list of clauses over variables 0..N-1, each clause a triple of
distinct signed variables. The clause-internal variable order is significant:
the 3-bit value a truth assignment gives a clause is read off in that order.
"""

from __future__ import annotations

import json
from dataclasses import dataclass
from fractions import Fraction

import numpy as np

MAX_GAP_VARS = 24

Literal = tuple[int, bool]  # (variable index, True for positive polarity)


class FormulaError(ValueError):
    """Raised on malformed formula input."""


@dataclass(frozen=True)
class Formula:
    """A 3-CNF formula with 0-based variable indexing."""

    num_vars: int
    clauses: tuple[tuple[Literal, Literal, Literal], ...]

    def __post_init__(self):
        if self.num_vars < 3:
            raise FormulaError(f"need at least 3 variables, got {self.num_vars}")
        if len(self.clauses) < 1:
            raise FormulaError("formula has no clauses")
        for i, clause in enumerate(self.clauses):
            if len(clause) != 3:
                raise FormulaError(f"clause {i} has {len(clause)} literals, want 3")
            vs = [v for v, _ in clause]
            if len(set(vs)) != 3:
                raise FormulaError(f"clause {i} repeats a variable: {vs}")
            for v in vs:
                if not 0 <= v < self.num_vars:
                    raise FormulaError(f"clause {i}: variable {v} out of range")

    @property
    def num_clauses(self) -> int:
        return len(self.clauses)

    def clause_vars(self, c: int) -> tuple[int, int, int]:
        """Variables of clause c, in clause-internal order."""
        return tuple(v for v, _ in self.clauses[c])

    def var_position(self, c: int, v: int) -> int:
        """Position (0..2) of variable v inside clause c."""
        return self.clause_vars(c).index(v)

    def occurrence_counts(self) -> list[int]:
        counts = [0] * self.num_vars
        for clause in self.clauses:
            for v, _ in clause:
                counts[v] += 1
        return counts

    def clause_satisfied(self, c: int, bits3: tuple[int, int, int]) -> bool:
        """Does assigning bits3 (clause order) to clause c's variables satisfy it?"""
        return any(bool(b) == pos for (_, pos), b in zip(self.clauses[c], bits3))


@dataclass(frozen=True)
class Assignment:
    """A truth assignment, bits[i] = value of variable i."""

    bits: tuple[int, ...]

    def __post_init__(self):
        if any(b not in (0, 1) for b in self.bits):
            raise FormulaError("assignment bits must be 0/1")

    def __len__(self) -> int:
        return len(self.bits)

    def value_of_clause(self, f: Formula, c: int) -> tuple[int, int, int]:
        """The 3 bits this assignment gives clause c, in clause order."""
        return tuple(self.bits[v] for v, _ in f.clauses[c])

    def satisfies_clause(self, f: Formula, c: int) -> bool:
        return f.clause_satisfied(c, self.value_of_clause(f, c))

    def violated_clauses(self, f: Formula) -> list[int]:
        return [c for c in range(f.num_clauses) if not self.satisfies_clause(f, c)]


@dataclass(frozen=True)
class ValidationReport:
    occurrence_counts: tuple[int, ...]
    regular: bool
    offending_vars: tuple[int, ...]


def _clause_from_dimacs(lits: list[int], num_vars: int, where: str):
    if len(lits) != 3:
        raise FormulaError(f"{where}: clause has {len(lits)} literals, want 3")
    clause = []
    for lit in lits:
        if lit == 0:
            raise FormulaError(f"{where}: zero literal inside clause")
        v = abs(lit) - 1
        if v >= num_vars:
            raise FormulaError(f"{where}: variable {abs(lit)} out of range")
        clause.append((v, lit > 0))
    if len({v for v, _ in clause}) != 3:
        raise FormulaError(f"{where}: repeated variable in clause")
    return tuple(clause)


def parse_dimacs(text: str) -> Formula:
    """Parse a DIMACS CNF string (3-literal clauses only)."""
    num_vars = None
    num_clauses = None
    clauses = []
    pending: list[int] = []
    for lineno, raw in enumerate(text.splitlines(), start=1):
        line = raw.strip()
        if not line or line.startswith("c") or line.startswith("%"):
            continue
        if line.startswith("p"):
            parts = line.split()
            if len(parts) != 4 or parts[1] != "cnf":
                raise FormulaError(f"line {lineno}: bad problem line {line!r}")
            num_vars, num_clauses = int(parts[2]), int(parts[3])
            continue
        if num_vars is None:
            raise FormulaError(f"line {lineno}: clause before problem line")
        for tok in line.split():
            try:
                lit = int(tok)
            except ValueError:
                raise FormulaError(f"line {lineno}: bad token {tok!r}") from None
            if lit == 0:
                clauses.append(_clause_from_dimacs(pending, num_vars, f"line {lineno}"))
                pending = []
            else:
                pending.append(lit)
    if pending:
        raise FormulaError("last clause not terminated with 0")
    if num_vars is None:
        raise FormulaError("missing problem line")
    if num_clauses is not None and num_clauses != len(clauses):
        raise FormulaError(f"header says {num_clauses} clauses, found {len(clauses)}")
    return Formula(num_vars=num_vars, clauses=tuple(clauses))


def parse_json(obj) -> Formula:
    """Parse the JSON form {"num_vars": N, "clauses": [[+-1-based ints x3], ...]}."""
    if isinstance(obj, str):
        obj = json.loads(obj)
    if isinstance(obj, list):
        # bare clause list: infer num_vars
        num_vars = max((abs(l) for cl in obj for l in cl), default=0)
        obj = {"num_vars": num_vars, "clauses": obj}
    if not isinstance(obj, dict) or "clauses" not in obj:
        raise FormulaError("expected {'num_vars': N, 'clauses': [...]}")
    num_vars = int(obj.get("num_vars", 0))
    clauses = tuple(
        _clause_from_dimacs(list(cl), num_vars, f"clause {i}")
        for i, cl in enumerate(obj["clauses"])
    )
    return Formula(num_vars=num_vars, clauses=clauses)


def parse_formula(text: str) -> Formula:
    """Parse a formula from DIMACS CNF or the JSON clause-list form."""
    stripped = text.lstrip()
    if stripped.startswith("{") or stripped.startswith("["):
        return parse_json(text)
    return parse_dimacs(text)


def to_dimacs(f: Formula) -> str:
    lines = [f"p cnf {f.num_vars} {f.num_clauses}"]
    for clause in f.clauses:
        lines.append(" ".join(str((v + 1) if pos else -(v + 1)) for v, pos in clause) + " 0")
    return "\n".join(lines) + "\n"


def to_json_dict(f: Formula) -> dict:
    return {
        "num_vars": f.num_vars,
        "clauses": [[(v + 1) if pos else -(v + 1) for v, pos in cl] for cl in f.clauses],
    }


def validate_regularity(f: Formula) -> ValidationReport:
    """Check the every-variable-occurs-exactly-5-times condition."""
    counts = f.occurrence_counts()
    offending = tuple(v for v, n in enumerate(counts) if n != 5)
    return ValidationReport(tuple(counts), regular=not offending, offending_vars=offending)


def _violation_counts(f: Formula):
    """Number of violated clauses for every assignment, as a 2^N vector."""
    n = f.num_vars
    total = np.zeros(1 << n, dtype=np.int32)
    assignments = np.arange(1 << n, dtype=np.uint32)
    for clause in f.clauses:
        sat = np.zeros(1 << n, dtype=bool)
        for v, pos in clause:
            bit = (assignments >> v) & 1
            sat |= bit.astype(bool) if pos else ~bit.astype(bool)
        total += (~sat).astype(np.int32)
    return total


def unsat_gap(f: Formula) -> Fraction:
    """Minimum fraction of violated clauses over all 2^N assignments (exact)."""
    if f.num_vars > MAX_GAP_VARS:
        raise FormulaError(f"instance too large for brute force: N={f.num_vars} > {MAX_GAP_VARS}")
    best = int(_violation_counts(f).min())
    return Fraction(best, f.num_clauses)


def best_assignment(f: Formula) -> Assignment:
    """An assignment attaining the minimum number of violated clauses."""
    if f.num_vars > MAX_GAP_VARS:
        raise FormulaError(f"instance too large for brute force: N={f.num_vars} > {MAX_GAP_VARS}")
    idx = int(_violation_counts(f).argmin())
    return Assignment(tuple((idx >> v) & 1 for v in range(f.num_vars)))


def generate_planted(seed: int, num_vars: int, num_clauses: int, regular: bool = False):
    """Random satisfiable instance plus a planted satisfying assignment.

    In regular mode every variable occurs exactly 5 times, which forces
    3*num_clauses == 5*num_vars.
    """
    rng = np.random.default_rng(seed)
    if regular and 3 * num_clauses != 5 * num_vars:
        raise FormulaError(
            f"regular mode needs 3M == 5N, got M={num_clauses}, N={num_vars}"
        )
    if num_vars < 3:
        raise FormulaError("need at least 3 variables")
    planted = Assignment(tuple(int(b) for b in rng.integers(0, 2, size=num_vars)))

    if regular:
        slots = np.repeat(np.arange(num_vars), 5)
        for _ in range(10_000):
            rng.shuffle(slots)
            groups = slots.reshape(num_clauses, 3)
            if all(len(set(g.tolist())) == 3 for g in groups):
                break
        else:
            raise FormulaError("could not build a regular occurrence pattern")
        var_triples = [tuple(int(v) for v in g) for g in groups]
    else:
        var_triples = [
            tuple(int(v) for v in rng.choice(num_vars, size=3, replace=False))
            for _ in range(num_clauses)
        ]

    clauses = []
    for triple in var_triples:
        pols = [bool(b) for b in rng.integers(0, 2, size=3)]
        if not any(pols[i] == bool(planted.bits[triple[i]]) for i in range(3)):
            flip = int(rng.integers(0, 3))
            pols[flip] = not pols[flip]
        clauses.append(tuple(zip(triple, pols)))
    return Formula(num_vars=num_vars, clauses=tuple(clauses)), planted


def all_patterns_formula(num_vars: int = 3) -> Formula:
    """The 8 sign patterns on the first 3 variables; unsat gap exactly 1/8."""
    clauses = []
    for mask in range(8):
        clauses.append(tuple((v, not bool((mask >> v) & 1)) for v in range(3)))
    return Formula(num_vars=num_vars, clauses=tuple(clauses))
