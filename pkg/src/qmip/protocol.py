"""Verifier state machine for the two-prover clause/variable protocol.

One run: sample a query tuple (y, yt, x, xt) with x in clause y; send each
prover half of a two-term superposition addressing its index register; the
provers apply one outcome of a joint separable measurement family; the
verifier reveals the tuple, collects 8 claimed assignment bits from Alice,
checks clause satisfaction and clause/variable consistency, and runs a SWAP
test per prover against the reference state built from the claimed bits.

Register layout (flat index conventions used throughout):
  Alice operator space  = clause index (M) x answer (8) x private (d)
  Bob operator space    = variable index (N) x answer (2) x private (d)
  full prover-side state = verifier copy of the index register x operator space
"""

from __future__ import annotations

import math
from abc import ABC, abstractmethod
from dataclasses import dataclass
from typing import Iterator, NamedTuple

import numpy as np

from .quantum import (
    ATOL,
    MeasurementFamily,
    StateVector,
    check_family_completeness,
)
from .sat import Assignment, Formula


class QueryTuple(NamedTuple):
    y: int
    y_tilde: int
    x: int
    x_tilde: int


class ProtocolError(ValueError):
    """Invalid protocol input (bad tuple, bad strategy output, ...)."""


class InconsistentClaimError(ProtocolError):
    """Degenerate query with contradictory claimed bits; the transcript auto-rejects."""


Bits3 = tuple[int, int, int]
Bits8 = tuple[int, int, int, int, int, int, int, int]


def bits3_to_index(bits: Bits3) -> int:
    return bits[0] * 4 + bits[1] * 2 + bits[2]


def index_to_bits3(a: int) -> Bits3:
    return ((a >> 2) & 1, (a >> 1) & 1, a & 1)


def split_bits8(bits: Bits8) -> tuple[Bits3, Bits3, int, int]:
    """(claimed T(y), claimed T(yt), claimed T(x), claimed T(xt))."""
    return tuple(bits[0:3]), tuple(bits[3:6]), bits[6], bits[7]


@dataclass(frozen=True)
class RegisterLayout:
    """Dimension bookkeeping for one formula at private dimension d."""

    num_clauses: int
    num_vars: int
    private_dim: int

    @property
    def alice_op_dims(self) -> tuple[int, int, int]:
        return (self.num_clauses, 8, self.private_dim)

    @property
    def bob_op_dims(self) -> tuple[int, int, int]:
        return (self.num_vars, 2, self.private_dim)

    @property
    def alice_state_dims(self) -> tuple[int, int, int, int]:
        return (self.num_clauses,) + self.alice_op_dims

    @property
    def bob_state_dims(self) -> tuple[int, int, int, int]:
        return (self.num_vars,) + self.bob_op_dims

    @property
    def alice_ref_dims(self) -> tuple[int, int, int]:
        return (self.num_clauses, self.num_clauses, 8)

    @property
    def bob_ref_dims(self) -> tuple[int, int, int]:
        return (self.num_vars, self.num_vars, 2)

    def alice_input_column(self, c: int) -> int:
        """Flat operator-space index of |c, 000, 0_d> — the populated input column."""
        return c * 8 * self.private_dim

    def bob_input_column(self, v: int) -> int:
        return v * 2 * self.private_dim


def layout_for(f: Formula, private_dim: int) -> RegisterLayout:
    return RegisterLayout(f.num_clauses, f.num_vars, private_dim)


def check_tuple(f: Formula, r: QueryTuple) -> None:
    m, n = f.num_clauses, f.num_vars
    if not (0 <= r.y < m and 0 <= r.y_tilde < m and 0 <= r.x < n and 0 <= r.x_tilde < n):
        raise ProtocolError(f"query tuple {r} out of range for M={m}, N={n}")
    if r.x not in f.clause_vars(r.y):
        raise ProtocolError(f"query variable {r.x} does not appear in clause {r.y}")


def legal_tuples(f: Formula) -> Iterator[QueryTuple]:
    """All 3*M^2*N query tuples, in a fixed enumeration order."""
    for y in range(f.num_clauses):
        xs = f.clause_vars(y)
        for yt in range(f.num_clauses):
            for x in xs:
                for xt in range(f.num_vars):
                    yield QueryTuple(y, yt, x, xt)


def tuple_multiplicity(r: QueryTuple) -> int:
    """Squared-amplitude boost of r in the purified query register (1, 2 or 4)."""
    return (2 if r.y == r.y_tilde else 1) * (2 if r.x == r.x_tilde else 1)


def sample_query(f: Formula, rng: np.random.Generator) -> QueryTuple:
    """y, yt uniform over clauses; x uniform over y's variables; xt uniform over variables."""
    y = int(rng.integers(f.num_clauses))
    yt = int(rng.integers(f.num_clauses))
    x = int(f.clause_vars(y)[rng.integers(3)])
    xt = int(rng.integers(f.num_vars))
    return QueryTuple(y, yt, x, xt)


def build_round1_states(f: Formula, r: QueryTuple, private_dim: int):
    """The two product states the verifier prepares for query tuple r.

    Alice: (|y>|y,000> + |yt>|yt,000>)/sqrt(2) (x) |0_d>, collapsing to the
    single normalized term when y == yt. Bob analogous on his variable pair.
    """
    check_tuple(f, r)
    lay = layout_for(f, private_dim)
    m, n, d = f.num_clauses, f.num_vars, private_dim

    def side(outer: int, inner: int, col_of, i1: int, i2: int, dims):
        amps = np.zeros(outer * inner, dtype=complex)
        amps[i1 * inner + col_of(i1)] = 1.0
        amps[i2 * inner + col_of(i2)] += 1.0
        amps /= np.linalg.norm(amps)
        return StateVector(amps, dims)

    alice = side(m, 8 * m * d, lay.alice_input_column, r.y, r.y_tilde, lay.alice_state_dims)
    bob = side(n, 2 * n * d, lay.bob_input_column, r.x, r.x_tilde, lay.bob_state_dims)
    return alice, bob


def honest_prover_unitaries(f: Formula, t: Assignment, private_dim: int = 1):
    """Permutation unitaries writing the true assignment into the answer registers.

    Alice's XORs the 3-bit answer with T(c) controlled on the clause index;
    Bob's XORs the answer bit with T(v). Identity on the private registers.
    """
    if len(t) != f.num_vars:
        raise ProtocolError("assignment length does not match formula")
    m, n, d = f.num_clauses, f.num_vars, private_dim
    ua = np.zeros((8 * m, 8 * m))
    for c in range(m):
        tc = bits3_to_index(t.value_of_clause(f, c))
        for a in range(8):
            ua[c * 8 + (a ^ tc), c * 8 + a] = 1.0
    ub = np.zeros((2 * n, 2 * n))
    for v in range(n):
        tv = t.bits[v]
        for a in range(2):
            ub[v * 2 + (a ^ tv), v * 2 + a] = 1.0
    if d > 1:
        ua = np.kron(ua, np.eye(d))
        ub = np.kron(ub, np.eye(d))
    return ua, ub


def reference_states(f: Formula, r: QueryTuple, bits8: Bits8):
    """SWAP-test reference states on (verifier copy x message) for claimed bits.

    Raises InconsistentClaimError when a degenerate pair carries contradictory
    claims (y == yt with different claimed triples, or x == xt likewise); the
    caller must auto-reject the transcript.
    """
    check_tuple(f, r)
    ty, tyt, tx, txt = split_bits8(bits8)
    m, n = f.num_clauses, f.num_vars

    if r.y == r.y_tilde and ty != tyt:
        raise InconsistentClaimError(f"y == yt but claimed triples differ: {ty} vs {tyt}")
    if r.x == r.x_tilde and tx != txt:
        raise InconsistentClaimError(f"x == xt but claimed bits differ: {tx} vs {txt}")

    amps_a = np.zeros(m * m * 8, dtype=complex)
    amps_a[(r.y * m + r.y) * 8 + bits3_to_index(ty)] = 1.0
    amps_a[(r.y_tilde * m + r.y_tilde) * 8 + bits3_to_index(tyt)] += 1.0
    amps_a /= np.linalg.norm(amps_a)

    amps_b = np.zeros(n * n * 2, dtype=complex)
    amps_b[(r.x * n + r.x) * 2 + tx] = 1.0
    amps_b[(r.x_tilde * n + r.x_tilde) * 2 + txt] += 1.0
    amps_b /= np.linalg.norm(amps_b)

    return StateVector(amps_a, (m, m, 8)), StateVector(amps_b, (n, n, 2))


class ProverStrategy(ABC):
    """Round-1 separable measurement family plus a deterministic round-2 answer rule.

    The outcome index passed to round2 identifies the joint measurement result,
    which encodes whatever classical information the provers exchanged.
    """

    @property
    @abstractmethod
    def family(self) -> MeasurementFamily: ...

    @abstractmethod
    def round2(self, r: QueryTuple, k: int) -> Bits8: ...


@dataclass(frozen=True)
class Checks:
    clause_satisfied: bool
    consistency: bool
    swap_a_pass: bool
    swap_b_pass: bool

    @property
    def all_pass(self) -> bool:
        return (self.clause_satisfied and self.consistency
                and self.swap_a_pass and self.swap_b_pass)


@dataclass(frozen=True)
class Transcript:
    query: QueryTuple
    outcome: int
    round2_bits: Bits8
    checks: Checks

    @property
    def accept(self) -> bool:
        return self.checks.all_pass

    def to_json_dict(self) -> dict:
        return {
            "query": {"y": self.query.y, "y_tilde": self.query.y_tilde,
                      "x": self.query.x, "x_tilde": self.query.x_tilde},
            "outcome": self.outcome,
            "round2_bits": list(self.round2_bits),
            "checks": {
                "clause_satisfied": self.checks.clause_satisfied,
                "consistency": self.checks.consistency,
                "swap_a_pass": self.checks.swap_a_pass,
                "swap_b_pass": self.checks.swap_b_pass,
            },
            "verdict": "accept" if self.accept else "reject",
        }


@dataclass(frozen=True)
class RunSummary:
    trials: int
    accepts: int
    check_failures: dict[str, int]

    @property
    def accept_rate(self) -> float:
        return self.accepts / self.trials


def _validate_bits8(bits) -> Bits8:
    bits = tuple(int(b) for b in bits)
    if len(bits) != 8 or any(b not in (0, 1) for b in bits):
        raise ProtocolError(f"round-2 answer must be 8 bits, got {bits!r}")
    return bits


@dataclass(frozen=True)
class FamilyTables:
    """Per-outcome branch weights, pair probabilities, and claim fidelities.

    prob_a[k, y, yt] is the squared norm of Alice's post-measurement branch for
    the clause pair; fid_a[k, y, yt, a, b] the exact reference overlap
    <ref(a,b)| sigma |ref(a,b)> for claimed answer indices (a, b), with the
    private register traced out. Degenerate pairs populate only the diagonal
    (equal claims); contradictory degenerate claims auto-reject upstream.
    """

    alice_weight: np.ndarray
    bob_weight: np.ndarray
    prob_a: np.ndarray
    prob_b: np.ndarray
    fid_a: np.ndarray
    fid_b: np.ndarray


def _claim_fidelities(slices, prob, na):
    kk, m = slices.shape[0], slices.shape[1]
    fid = np.zeros((kk, m, m, na, na))
    for k in range(kk):
        # rows[c] = the (answers x private) block of column c at index value c
        rows = np.array([slices[k, c, :, :, c] for c in range(m)])  # (m, na, d)
        norms = np.einsum("cai,cai->ca", rows, rows.conj()).real    # (m, na)
        for y in range(m):
            for yt in range(m):
                nrm = prob[k, y, yt]
                if nrm <= 1e-300:
                    continue
                if y == yt:
                    np.einsum("aa->a", fid[k, y, yt])[:] = norms[y] / nrm
                else:
                    cross = 2 * np.einsum("ai,bi->ab", rows[y], rows[yt].conj()).real
                    fid[k, y, yt] = (
                        norms[y][:, None] + norms[yt][None, :] + cross
                    ) / (4 * nrm)
    return np.clip(fid, 0.0, 1.0)


def family_tables(f: Formula, fam: MeasurementFamily) -> FamilyTables:
    """Precompute everything the round-1 states determine for each outcome."""
    lay = layout_for(f, fam.private_dim)
    m, n, d = f.num_clauses, f.num_vars, fam.private_dim
    kk = fam.num_outcomes
    acols = np.empty((kk, 8 * m * d, m), dtype=complex)
    bcols = np.empty((kk, 2 * n * d, n), dtype=complex)
    for k, (a, b) in enumerate(fam.outcomes):
        acols[k] = a[:, [lay.alice_input_column(c) for c in range(m)]]
        bcols[k] = b[:, [lay.bob_input_column(v) for v in range(n)]]
    alice_weight = np.einsum("kic,kic->kc", acols, acols.conj()).real
    bob_weight = np.einsum("kiv,kiv->kv", bcols, bcols.conj()).real

    prob_a = 0.5 * (alice_weight[:, :, None] + alice_weight[:, None, :])
    prob_a[:, range(m), range(m)] = alice_weight
    prob_b = 0.5 * (bob_weight[:, :, None] + bob_weight[:, None, :])
    prob_b[:, range(n), range(n)] = bob_weight

    fid_a = _claim_fidelities(acols.reshape(kk, m, 8, d, m), prob_a, 8)
    fid_b = _claim_fidelities(bcols.reshape(kk, n, 2, d, n), prob_b, 2)
    return FamilyTables(alice_weight=alice_weight, bob_weight=bob_weight,
                        prob_a=prob_a, prob_b=prob_b, fid_a=fid_a, fid_b=fid_b)


class ProtocolEngine:
    """Precomputed tables for one (formula, strategy) pair; immutable after init.

    Exact quantities and Monte Carlo trials share the same per-(tuple, outcome)
    tables: branch probabilities, deterministic check bits, and exact SWAP pass
    probabilities derived from the claim-indexed fidelity tables.
    """

    def __init__(self, f: Formula, strategy: ProverStrategy):
        self.formula = f
        self.strategy = strategy
        fam = strategy.family
        if fam.num_clauses != f.num_clauses or fam.num_vars != f.num_vars:
            raise ProtocolError(
                f"family is for M={fam.num_clauses}, N={fam.num_vars}; formula has "
                f"M={f.num_clauses}, N={f.num_vars}"
            )
        residual = check_family_completeness(fam)
        if residual > 1e-6:
            raise ProtocolError(f"measurement family incomplete: residual {residual}")
        self.layout = layout_for(f, fam.private_dim)
        self.tuples = list(legal_tuples(f))
        self.tuple_index = {r: i for i, r in enumerate(self.tuples)}

        tables = family_tables(f, fam)
        self.alice_weight = tables.alice_weight
        self.bob_weight = tables.bob_weight
        self.prob_a = tables.prob_a
        self.prob_b = tables.prob_b
        self.fid_a = tables.fid_a
        self.fid_b = tables.fid_b

        self._tables = None  # built lazily: needs strategy.round2 on every (r, k)

    # -- per-(tuple, outcome) tables ------------------------------------------

    def _build_tables(self):
        if self._tables is not None:
            return self._tables
        f = self.formula
        tt, kk = len(self.tuples), self.strategy.family.num_outcomes
        prob = np.empty((tt, kk))
        det = np.empty((tt, kk), dtype=bool)
        pass_a = np.empty((tt, kk))
        pass_b = np.empty((tt, kk))
        bits_tab = np.empty((tt, kk, 8), dtype=np.int8)
        for t, r in enumerate(self.tuples):
            for k in range(kk):
                bits = _validate_bits8(self.strategy.round2(r, k))
                bits_tab[t, k] = bits
                prob[t, k] = self.prob_a[k, r.y, r.y_tilde] * self.prob_b[k, r.x, r.x_tilde]
                c1, c2, pa, pb = self._check_probs(r, k, bits)
                det[t, k] = c1 and c2
                pass_a[t, k] = pa
                pass_b[t, k] = pb
        self._tables = (prob, det, pass_a, pass_b, bits_tab)
        return self._tables

    def _check_probs(self, r: QueryTuple, k: int, bits: Bits8):
        f = self.formula
        ty, tyt, tx, txt = split_bits8(bits)
        c1 = f.clause_satisfied(r.y, ty)
        c2 = tx == ty[f.var_position(r.y, r.x)]
        ia, ib = bits3_to_index(ty), bits3_to_index(tyt)
        if r.y == r.y_tilde and ty != tyt:
            pa = 0.0  # contradictory degenerate claim: auto-reject
        else:
            pa = 0.5 + 0.5 * self.fid_a[k, r.y, r.y_tilde, ia, ib]
        if r.x == r.x_tilde and tx != txt:
            pb = 0.0
        else:
            pb = 0.5 + 0.5 * self.fid_b[k, r.x, r.x_tilde, tx, txt]
        return c1, c2, pa, pb

    # -- exact mode ------------------------------------------------------------

    def acceptance_exact(self) -> float:
        """Average over tuples and outcomes of the exact pass probability."""
        prob, det, pass_a, pass_b, _ = self._build_tables()
        per_tuple = (prob * det * pass_a * pass_b).sum(axis=1)
        return float(per_tuple.mean())

    def exact_tables(self):
        """(tuples, prob[t,k], det[t,k], pass_a[t,k], pass_b[t,k]) for analysis."""
        prob, det, pass_a, pass_b, _ = self._build_tables()
        return self.tuples, prob, det, pass_a, pass_b

    def check_pass_rates_exact(self) -> dict[str, float]:
        tuples, prob, det, pass_a, pass_b = self.exact_tables()
        return {
            "swap_alice": float((prob * pass_a).sum(axis=1).mean()),
            "swap_bob": float((prob * pass_b).sum(axis=1).mean()),
            "deterministic": float((prob * det).sum(axis=1).mean()),
        }

    # -- sampled mode -----------------------------------------------------------

    def run_one(self, rng: np.random.Generator) -> Transcript:
        r = sample_query(self.formula, rng)
        k = self._sample_outcome(r, rng)
        bits = _validate_bits8(self.strategy.round2(r, k))
        c1, c2, pa, pb = self._check_probs(r, k, bits)
        checks = Checks(
            clause_satisfied=c1,
            consistency=c2,
            swap_a_pass=bool(rng.random() < pa),
            swap_b_pass=bool(rng.random() < pb),
        )
        return Transcript(query=r, outcome=k, round2_bits=bits, checks=checks)

    def _sample_outcome(self, r: QueryTuple, rng: np.random.Generator) -> int:
        p = self.prob_a[:, r.y, r.y_tilde] * self.prob_b[:, r.x, r.x_tilde]
        total = p.sum()
        if total < ATOL:
            raise ProtocolError(f"no outcome has positive probability on {r}")
        return int(rng.choice(p.size, p=p / total))

    def run_many(self, trials: int, seed: int, block_size: int = 65536,
                 collect_transcripts: bool = False):
        """Vectorized trials; per-block RNG streams keyed by (seed, block index)."""
        prob, det, pass_a, pass_b, bits_tab = self._build_tables()
        tt, kk = prob.shape
        joint = (prob / len(self.tuples)).reshape(-1)
        joint = joint / joint.sum()  # completeness holds to ~1e-12; renormalize
        accepts = 0
        fails = {"clause_satisfied": 0, "consistency": 0,
                 "swap_a_pass": 0, "swap_b_pass": 0}
        transcripts = [] if collect_transcripts else None
        done = 0
        block = 0
        det_flat = det.reshape(-1)
        pa_flat = pass_a.reshape(-1)
        pb_flat = pass_b.reshape(-1)
        while done < trials:
            nb = min(block_size, trials - done)
            rng = np.random.default_rng([seed, block])
            idx = rng.choice(joint.size, size=nb, p=joint)
            sa = rng.random(nb) < pa_flat[idx]
            sb = rng.random(nb) < pb_flat[idx]
            ok = det_flat[idx] & sa & sb
            accepts += int(ok.sum())
            t_idx, k_idx = np.divmod(idx, kk)
            for name, arr in self._split_det_failures(t_idx, k_idx):
                fails[name] += int(arr.sum())
            fails["swap_a_pass"] += int((~sa).sum())
            fails["swap_b_pass"] += int((~sb).sum())
            if collect_transcripts:
                for j in range(nb):
                    t, k = int(t_idx[j]), int(k_idx[j])
                    r = self.tuples[t]
                    bits = tuple(int(b) for b in bits_tab[t, k])
                    c1j, c2j, _, _ = self._check_probs(r, k, bits)
                    transcripts.append(Transcript(
                        query=r, outcome=k, round2_bits=bits,
                        checks=Checks(c1j, c2j, bool(sa[j]), bool(sb[j])),
                    ))
            done += nb
            block += 1
        summary = RunSummary(trials=trials, accepts=accepts, check_failures=fails)
        return (summary, transcripts) if collect_transcripts else summary

    def _split_det_failures(self, t_idx, k_idx):
        f = self.formula
        _, _, _, _, bits_tab = self._build_tables()
        c1 = np.empty(len(t_idx), dtype=bool)
        c2 = np.empty(len(t_idx), dtype=bool)
        for j, (t, k) in enumerate(zip(t_idx, k_idx)):
            r = self.tuples[t]
            ty = tuple(int(b) for b in bits_tab[t, k, 0:3])
            c1[j] = f.clause_satisfied(r.y, ty)
            c2[j] = int(bits_tab[t, k, 6]) == ty[f.var_position(r.y, r.x)]
        return [("clause_satisfied", ~c1), ("consistency", ~c2)]


def run_protocol(f: Formula, strategy: ProverStrategy, rng: np.random.Generator) -> Transcript:
    """One sampled protocol execution."""
    return ProtocolEngine(f, strategy).run_one(rng)


def run_protocol_exact(f: Formula, strategy: ProverStrategy) -> float:
    """Exact acceptance probability: the limit of sampled-run frequencies."""
    return ProtocolEngine(f, strategy).acceptance_exact()


@dataclass(frozen=True)
class FactoredPurifiedState:
    """The purified-query state, kept in factored per-tuple form.

    Entry for tuple r: (multiplicity, alice factor, bob factor), where the
    factors are the normalized round-1 states and the global amplitude of r is
    sqrt(multiplicity / total). Degenerate tuples carry multiplicity 2 or 4
    because the raw two-term superpositions collapse without renormalizing.
    The full vector on aux x alice x bob is never materialized.
    """

    formula: Formula
    private_dim: int
    entries: tuple[tuple[QueryTuple, int, StateVector, StateVector], ...]

    @property
    def total_multiplicity(self) -> int:
        return sum(mult for _, mult, _, _ in self.entries)

    def amplitude_squared(self, i: int) -> float:
        return self.entries[i][1] / self.total_multiplicity


def build_purified_state(f: Formula, private_dim: int) -> FactoredPurifiedState:
    entries = []
    for r in legal_tuples(f):
        alice, bob = build_round1_states(f, r, private_dim)
        entries.append((r, tuple_multiplicity(r), alice, bob))
    return FactoredPurifiedState(formula=f, private_dim=private_dim, entries=tuple(entries))
