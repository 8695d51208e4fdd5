"""Prover strategies: honest, cheating baselines, and compiled LOCC scripts.

Every strategy compiles its round-1 behavior down to a joint separable
measurement family {(A_k, B_k)} and answers round 2 deterministically given
the query tuple and the outcome index (which encodes the classical transcript
the provers shared).
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, field

import numpy as np

from .quantum import MeasurementFamily, check_family_completeness
from .sat import Assignment, Formula, best_assignment
from .protocol import (
    Bits8,
    ProverStrategy,
    QueryTuple,
    ProtocolError,
    bits3_to_index,
)


class StrategyError(ValueError):
    """Invalid strategy construction."""


def _xor_write_block(num_answers: int, value: int) -> np.ndarray:
    """Permutation on the answer register XORing in `value`."""
    m = np.zeros((num_answers, num_answers))
    for a in range(num_answers):
        m[a ^ value, a] = 1.0
    return m


def _clause_projector_write(m: int, c: int, value: int, d: int) -> np.ndarray:
    """|c><c| on the index register, XOR `value` into the 8-dim answer register."""
    block = np.zeros((m, m))
    block[c, c] = 1.0
    op = np.kron(block, _xor_write_block(8, value))
    return np.kron(op, np.eye(d)) if d > 1 else op


def _var_projector_write(n: int, v: int, value: int, d: int) -> np.ndarray:
    block = np.zeros((n, n))
    block[v, v] = 1.0
    op = np.kron(block, _xor_write_block(2, value))
    return np.kron(op, np.eye(d)) if d > 1 else op


def satisfying_triple(f: Formula, c: int, fallback: Assignment) -> tuple[int, int, int]:
    """Fallback's bits for clause c, with the first literal flipped if unsatisfied."""
    triple = list(fallback.value_of_clause(f, c))
    if not f.clause_satisfied(c, tuple(triple)):
        triple[0] ^= 1
    return tuple(triple)


@dataclass(frozen=True)
class HonestStrategy(ProverStrategy):
    """Write the assignment's bits unitarily; answer round 2 truthfully."""

    formula: Formula
    assignment: Assignment
    private_dim: int = 2
    _family: MeasurementFamily = field(init=False, repr=False)

    def __post_init__(self):
        from .protocol import honest_prover_unitaries

        ua, ub = honest_prover_unitaries(self.formula, self.assignment, self.private_dim)
        object.__setattr__(
            self, "_family",
            MeasurementFamily(outcomes=((ua, ub),), private_dim=self.private_dim),
        )

    @property
    def family(self) -> MeasurementFamily:
        return self._family

    def round2(self, r: QueryTuple, k: int) -> Bits8:
        f, t = self.formula, self.assignment
        return (*t.value_of_clause(f, r.y), *t.value_of_clause(f, r.y_tilde),
                t.bits[r.x], t.bits[r.x_tilde])


@dataclass(frozen=True)
class MeasureResendStrategy(ProverStrategy):
    """Both provers measure their index registers, swap outcomes classically,
    write locally chosen satisfying bits, and resend.

    Outcome k encodes (clause c, variable v) as k = c * N + v. Round-2 answers
    are chosen to always pass the clause and consistency checks; the damage
    shows up in the SWAP tests, where each destroyed superposition caps the
    reference overlap at 1/2.
    """

    formula: Formula
    fallback: Assignment
    private_dim: int = 2
    _family: MeasurementFamily = field(init=False, repr=False)
    _triples: tuple = field(init=False, repr=False)

    def __post_init__(self):
        f, d = self.formula, self.private_dim
        m, n = f.num_clauses, f.num_vars
        triples = tuple(satisfying_triple(f, c, self.fallback) for c in range(m))
        object.__setattr__(self, "_triples", triples)
        outcomes = []
        for c in range(m):
            a_op = _clause_projector_write(m, c, bits3_to_index(triples[c]), d)
            for v in range(n):
                b_op = _var_projector_write(n, v, self._written_bit(v, c), d)
                outcomes.append((a_op, b_op))
        object.__setattr__(
            self, "_family",
            MeasurementFamily(outcomes=tuple(outcomes), private_dim=d),
        )

    def _written_bit(self, v: int, c: int) -> int:
        f = self.formula
        if v in f.clause_vars(c):
            return self._triples[c][f.var_position(c, v)]
        return self.fallback.bits[v]

    @property
    def family(self) -> MeasurementFamily:
        return self._family

    def round2(self, r: QueryTuple, k: int) -> Bits8:
        c, v = divmod(k, self.formula.num_vars)
        ty = self._triples[r.y]
        tyt = self._triples[r.y_tilde]
        tx = ty[self.formula.var_position(r.y, r.x)]
        txt = self._written_bit(r.x_tilde, c)
        return (*ty, *tyt, tx, txt)


@dataclass(frozen=True)
class SkewedStrategy(ProverStrategy):
    """Two-outcome family damping clause y2's block so A_0(y1)/A_0(y2) = p.

    Outcome 0 is the interesting branch; outcome 1 absorbs the leftover weight
    so the family is complete. Round 2 answers from the given assignment.
    """

    formula: Formula
    p: float
    y1: int
    y2: int
    assignment: Assignment
    private_dim: int = 2
    _family: MeasurementFamily = field(init=False, repr=False)

    def __post_init__(self):
        if self.p < 1:
            raise StrategyError(f"weight ratio must be >= 1, got {self.p}")
        f, d = self.formula, self.private_dim
        m, n = f.num_clauses, f.num_vars
        if not (0 <= self.y1 < m and 0 <= self.y2 < m) or self.y1 == self.y2:
            raise StrategyError(f"need two distinct clause indices, got {self.y1}, {self.y2}")
        damp = np.ones(m)
        damp[self.y2] = 1.0 / math.sqrt(self.p)
        a0 = np.kron(np.diag(damp), np.eye(8 * d))
        a1 = np.kron(np.diag(np.sqrt(1.0 - damp ** 2)), np.eye(8 * d))
        b = np.eye(2 * n * d)
        object.__setattr__(
            self, "_family",
            MeasurementFamily(outcomes=((a0, b), (a1, b)), private_dim=d),
        )

    @property
    def family(self) -> MeasurementFamily:
        return self._family

    def round2(self, r: QueryTuple, k: int) -> Bits8:
        f, t = self.formula, self.assignment
        return (*t.value_of_clause(f, r.y), *t.value_of_clause(f, r.y_tilde),
                t.bits[r.x], t.bits[r.x_tilde])


@dataclass(frozen=True)
class CustomStrategy(ProverStrategy):
    """Arbitrary measurement family with an assignment-based round-2 rule."""

    formula: Formula
    custom_family: MeasurementFamily
    assignment: Assignment

    @property
    def family(self) -> MeasurementFamily:
        return self.custom_family

    def round2(self, r: QueryTuple, k: int) -> Bits8:
        f, t = self.formula, self.assignment
        return (*t.value_of_clause(f, r.y), *t.value_of_clause(f, r.y_tilde),
                t.bits[r.x], t.bits[r.x_tilde])


# -- LOCC compilation ------------------------------------------------------------


@dataclass(frozen=True)
class LoccRound:
    """One round: the named party measures, conditioned on prior broadcasts.

    `operators` is either a list of operators (used for every transcript
    prefix) or a dict mapping transcript prefixes (tuples of outcome indices)
    to lists. A conditional final unitary is a 1-element operator list.
    """

    party: str  # "alice" | "bob"
    operators: list | dict

    def ops_for(self, prefix: tuple) -> list[np.ndarray]:
        if isinstance(self.operators, dict):
            if prefix not in self.operators:
                raise StrategyError(f"no operators for transcript prefix {prefix}")
            ops = self.operators[prefix]
        else:
            ops = self.operators
        return [np.asarray(op, dtype=complex) for op in ops]


@dataclass(frozen=True)
class LoccScript:
    rounds: tuple[LoccRound, ...]

    def __post_init__(self):
        for rnd in self.rounds:
            if rnd.party not in ("alice", "bob"):
                raise StrategyError(f"unknown party {rnd.party!r}")


def _check_round_complete(ops: list[np.ndarray], where: str):
    total = sum(op.conj().T @ op for op in ops)
    resid = np.abs(np.linalg.eigvalsh(total - np.eye(total.shape[0]))).max()
    if resid > 1e-9:
        raise StrategyError(f"{where}: round operators do not sum to identity (residual {resid})")


def compile_locc_to_separable(script: LoccScript, private_dim: int) -> MeasurementFamily:
    """One separable outcome per classical transcript (i_1, ..., i_t).

    A_k is the chronological product of Alice's conditional operators along
    the transcript (later operators multiply on the left); B_k likewise.
    """
    outcomes = []

    def walk(round_idx: int, prefix: tuple, a_acc, b_acc):
        if round_idx == len(script.rounds):
            outcomes.append((a_acc, b_acc))
            return
        rnd = script.rounds[round_idx]
        ops = rnd.ops_for(prefix)
        _check_round_complete(ops, f"round {round_idx} ({rnd.party}), prefix {prefix}")
        for i, op in enumerate(ops):
            if rnd.party == "alice":
                walk(round_idx + 1, prefix + (i,),
                     op if a_acc is None else op @ a_acc, b_acc)
            else:
                walk(round_idx + 1, prefix + (i,), a_acc,
                     op if b_acc is None else op @ b_acc)

    walk(0, (), None, None)
    if not outcomes:
        raise StrategyError("empty script")
    # infer operator sizes from whichever side acted; identity for an idle party
    da = next((a.shape[0] for a, _ in outcomes if a is not None), None)
    db = next((b.shape[0] for _, b in outcomes if b is not None), None)
    if da is None or db is None:
        raise StrategyError("script must determine both provers' spaces (use explicit identities)")
    filled = tuple(
        (np.eye(da) if a is None else a, np.eye(db) if b is None else b)
        for a, b in outcomes
    )
    fam = MeasurementFamily(outcomes=filled, private_dim=private_dim)
    resid = check_family_completeness(fam)
    if resid > 1e-9:
        raise StrategyError(f"compiled family incomplete: residual {resid}")
    return fam


@dataclass(frozen=True)
class LoccStrategy(ProverStrategy):
    """A compiled LOCC script with an assignment-based round-2 rule."""

    formula: Formula
    script: LoccScript
    assignment: Assignment
    private_dim: int = 2
    _family: MeasurementFamily = field(init=False, repr=False)

    def __post_init__(self):
        fam = compile_locc_to_separable(self.script, self.private_dim)
        object.__setattr__(self, "_family", fam)

    @property
    def family(self) -> MeasurementFamily:
        return self._family

    def round2(self, r: QueryTuple, k: int) -> Bits8:
        f, t = self.formula, self.assignment
        return (*t.value_of_clause(f, r.y), *t.value_of_clause(f, r.y_tilde),
                t.bits[r.x], t.bits[r.x_tilde])


# -- constructors / JSON specs -----------------------------------------------------


def strategy_honest(f: Formula, t: Assignment | None = None, private_dim: int = 2) -> HonestStrategy:
    if t is None:
        t = best_assignment(f)
    if t.violated_clauses(f):
        import warnings

        warnings.warn("honest strategy built from a non-satisfying assignment")
    return HonestStrategy(f, t, private_dim)


def strategy_measure_resend(f: Formula, fallback: Assignment | None = None,
                            private_dim: int = 2) -> MeasureResendStrategy:
    if fallback is None:
        fallback = best_assignment(f)
    return MeasureResendStrategy(f, fallback, private_dim)


def strategy_skewed(f: Formula, p: float, y1: int, y2: int,
                    t: Assignment | None = None, private_dim: int = 2) -> SkewedStrategy:
    if t is None:
        t = best_assignment(f)
    return SkewedStrategy(f, p, y1, y2, t, private_dim)


def strategy_from_spec(spec: dict | str, f: Formula, private_dim: int = 2) -> ProverStrategy:
    """Build a strategy from its JSON spec: {"kind": ..., params...}."""
    if isinstance(spec, str):
        spec = json.loads(spec)
    kind = spec.get("kind")
    assignment = None
    if spec.get("assignment") is not None:
        assignment = Assignment(tuple(int(b) for b in spec["assignment"]))
    if kind == "honest":
        return strategy_honest(f, assignment, private_dim)
    if kind == "measure_resend":
        return strategy_measure_resend(f, assignment, private_dim)
    if kind == "skewed":
        return strategy_skewed(f, float(spec["p"]), int(spec["y1"]), int(spec["y2"]),
                               assignment, private_dim)
    if kind == "custom":
        from .quantum import family_from_json

        fam = family_from_json(spec["family"])
        return CustomStrategy(f, fam, assignment if assignment is not None else best_assignment(f))
    raise StrategyError(f"unknown strategy kind {kind!r}")
