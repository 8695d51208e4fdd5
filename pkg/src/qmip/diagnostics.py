"""Soundness diagnostics for a measurement family against a formula.

Everything here is computed per measurement outcome k from the per-clause /
per-variable operator weights: the exact conditional distribution over query
tuples, its closed-form lower bound, skew-damage fidelity bounds, dyadic
bucketizations, bad-set constructions with their per-tuple damage
inequalities, regime classification, and the near-orthogonal overlap bound.

Two weight notions coexist:

* branch weights — squared norm of the single operator column the round-1
  input state populates (index value, zero answer, zero private). These are
  the weights that drive actual outcome probabilities, so the posterior and
  every probability statement use them.
* block weights — total squared column norm of an index value's full
  answer x private block (the trace form). For operators whose columns are
  uniform within each block (unitaries, projector-writes, block dampings) the
  two are proportional and all ratios agree.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Iterable

import numpy as np

from .quantum import DensityOperator, MeasurementFamily, StateVector, swap_test_pass_prob, trace_out_last
from .sat import Formula
from .protocol import (
    QueryTuple,
    build_round1_states,
    check_tuple,
    index_to_bits3,
    layout_for,
    legal_tuples,
    tuple_multiplicity,
)


class DiagnosticsError(ValueError):
    pass


class UndefinedPosteriorError(DiagnosticsError):
    """The outcome has probability zero; conditioning on it is undefined."""


# -- named constants (paper-scale defaults, overridable per run) -------------------

DEFAULT_CONSTANTS: dict[str, float] = {
    "large_regime_factor": 100.0,      # large regime iff N*W_tilde >= factor * W_A * W_B
    "tail_mass_divisor": 100.0,        # both-tails threshold: W_tilde / divisor
    "heavy_pair_mass": 0.98,           # two adjacent buckets carrying this mass fraction
    "small_tail_weight_coeff": 1e-4,   # * gamma * W_A  (small-regime weight tail)
    "small_tail_count_coeff": 1e-4,    # * gamma * M    (small-regime count tail)
    "min_clause_weight_divisor": 5.0,  # surviving clauses have A(c) >= W_A / (5M)
    "min_var_weight_divisor": 5.0,     # surviving variables have B(v) >= W_B / (5N)
    "failprob_coeff": 1e-4,            # * gamma       (per-tuple failure threshold)
    "fail_count_coeff": 1e-3,          # * gamma * N*M (|L(y,x)| threshold)
    "eps3_max": 1.0 / 200.0,
}


def constants_with(overrides: dict[str, float] | None) -> dict[str, float]:
    out = dict(DEFAULT_CONSTANTS)
    if overrides:
        unknown = set(overrides) - set(DEFAULT_CONSTANTS)
        if unknown:
            raise DiagnosticsError(f"unknown constants: {sorted(unknown)}")
        out.update({k: float(v) for k, v in overrides.items()})
    return out


# -- operator weights ---------------------------------------------------------------


def clause_block_weight(a_op: np.ndarray, y: int, private_dim: int) -> float:
    """Squared magnitudes summed over clause y's full 8d-wide column block."""
    d = private_dim
    block = a_op[:, y * 8 * d:(y + 1) * 8 * d]
    return float(np.einsum("ij,ij->", block, block.conj()).real)


def var_block_weight(b_op: np.ndarray, x: int, private_dim: int) -> float:
    d = private_dim
    block = b_op[:, x * 2 * d:(x + 1) * 2 * d]
    return float(np.einsum("ij,ij->", block, block.conj()).real)


def _block_weight_trace_form(op: np.ndarray, idx: int, block: int) -> float:
    """tr((|idx><idx| (x) I) op^dag op): the same block weight via the Gram matrix."""
    gram = op.conj().T @ op
    return float(np.trace(gram[idx * block:(idx + 1) * block,
                               idx * block:(idx + 1) * block]).real)


def clause_branch_weight(a_op: np.ndarray, y: int, private_dim: int) -> float:
    """Squared norm of the one column the round-1 input populates for clause y."""
    col = a_op[:, y * 8 * private_dim]
    return float(np.vdot(col, col).real)


def var_branch_weight(b_op: np.ndarray, x: int, private_dim: int) -> float:
    col = b_op[:, x * 2 * private_dim]
    return float(np.vdot(col, col).real)


@dataclass(frozen=True)
class OutcomeWeights:
    """Per-outcome weight profile: per-clause and per-variable weights plus aggregates."""

    outcome: int
    a_of: np.ndarray  # per clause
    b_of: np.ndarray  # per variable
    clause_vars: tuple[tuple[int, int, int], ...]
    mode: str = "branch"  # "branch" | "block"
    w_a: float = field(init=False)
    w_b: float = field(init=False)
    w_tilde: float = field(init=False)
    u_of: np.ndarray = field(init=False)

    def __post_init__(self):
        a = np.asarray(self.a_of, dtype=float)
        b = np.asarray(self.b_of, dtype=float)
        if (a < -1e-12).any() or (b < -1e-12).any():
            raise DiagnosticsError("weights must be nonnegative")
        object.__setattr__(self, "a_of", np.maximum(a, 0.0))
        object.__setattr__(self, "b_of", np.maximum(b, 0.0))
        u = np.array([self.a_of[c] * sum(self.b_of[v] for v in vs)
                      for c, vs in enumerate(self.clause_vars)])
        object.__setattr__(self, "u_of", u)
        object.__setattr__(self, "w_a", float(self.a_of.sum()))
        object.__setattr__(self, "w_b", float(self.b_of.sum()))
        object.__setattr__(self, "w_tilde", float(u.sum()))

    @property
    def num_clauses(self) -> int:
        return len(self.a_of)

    @property
    def num_vars(self) -> int:
        return len(self.b_of)

    def u_mass(self, clauses: Iterable[int]) -> float:
        return float(sum(self.u_of[c] for c in clauses))

    def a_mass(self, clauses: Iterable[int]) -> float:
        return float(sum(self.a_of[c] for c in clauses))

    def b_mass(self, variables: Iterable[int]) -> float:
        return float(sum(self.b_of[v] for v in variables))

    def vmax(self, c: int) -> int:
        """Variable of clause c with maximal B weight (lowest index on ties)."""
        vs = self.clause_vars[c]
        return max(vs, key=lambda v: (self.b_of[v], -v))

    def vmin(self, c: int) -> int:
        vs = self.clause_vars[c]
        return min(vs, key=lambda v: (self.b_of[v], v))


def compute_outcome_weights(f: Formula, fam: MeasurementFamily, k: int,
                            mode: str = "branch") -> OutcomeWeights:
    """Weight profile of outcome k. Block mode cross-checks both closed forms."""
    if not 0 <= k < fam.num_outcomes:
        raise DiagnosticsError(f"outcome {k} out of range")
    a_op, b_op = fam.outcomes[k]
    d = fam.private_dim
    if mode == "branch":
        a = [clause_branch_weight(a_op, c, d) for c in range(f.num_clauses)]
        b = [var_branch_weight(b_op, v, d) for v in range(f.num_vars)]
    elif mode == "block":
        a = [clause_block_weight(a_op, c, d) for c in range(f.num_clauses)]
        b = [var_block_weight(b_op, v, d) for v in range(f.num_vars)]
        for c in range(f.num_clauses):
            other = _block_weight_trace_form(a_op, c, 8 * d)
            if abs(other - a[c]) > 1e-9 * max(1.0, abs(a[c])):
                raise DiagnosticsError(f"block/trace weight mismatch at clause {c}")
        for v in range(f.num_vars):
            other = _block_weight_trace_form(b_op, v, 2 * d)
            if abs(other - b[v]) > 1e-9 * max(1.0, abs(b[v])):
                raise DiagnosticsError(f"block/trace weight mismatch at variable {v}")
    else:
        raise DiagnosticsError(f"unknown weight mode {mode!r}")
    return OutcomeWeights(
        outcome=k, a_of=np.array(a), b_of=np.array(b),
        clause_vars=tuple(f.clause_vars(c) for c in range(f.num_clauses)),
        mode=mode,
    )


# -- exact conditional tuple distribution -------------------------------------------


def _tuple_numerator(w: OutcomeWeights, r: QueryTuple) -> float:
    """Unnormalized conditional weight of tuple r given the outcome.

    Two-term sums collapse with a factor 2 (so 4x / 16x overall) on degenerate
    tuples, mirroring the unnormalized purified query register.
    """
    ay, ayt = w.a_of[r.y], w.a_of[r.y_tilde]
    bx, bxt = w.b_of[r.x], w.b_of[r.x_tilde]
    a_part = 4 * ay if r.y == r.y_tilde else ay + ayt
    b_part = 4 * bx if r.x == r.x_tilde else bx + bxt
    return float(a_part * b_part)


def posterior_from_weights(f: Formula, w: OutcomeWeights, r: QueryTuple) -> float:
    check_tuple(f, r)
    denom = sum(_tuple_numerator(w, s) for s in legal_tuples(f))
    if denom <= 0:
        raise UndefinedPosteriorError("all tuple weights vanish for this outcome")
    return _tuple_numerator(w, r) / denom


def posterior_exact(f: Formula, fam: MeasurementFamily, k: int, r: QueryTuple) -> float:
    """Pr(r | outcome k) in the purified protocol, from branch weights."""
    return posterior_from_weights(f, compute_outcome_weights(f, fam, k), r)


def posterior_table(f: Formula, fam: MeasurementFamily, k: int) -> dict[QueryTuple, float]:
    w = compute_outcome_weights(f, fam, k)
    nums = {r: _tuple_numerator(w, r) for r in legal_tuples(f)}
    denom = sum(nums.values())
    if denom <= 0:
        raise UndefinedPosteriorError("all tuple weights vanish for this outcome")
    return {r: v / denom for r, v in nums.items()}


def posterior_lower_bound(f: Formula, w: OutcomeWeights, r: QueryTuple) -> float:
    """Closed-form floor: cross-weight sum over 2MN*W_tilde + 22M*W_A*W_B.

    The denominator simplification assumes large M >= N and regularity; at
    desk scale it can overshoot, so callers compare against the exact value
    and report violations instead of assuming them impossible.
    """
    check_tuple(f, r)
    m, n = f.num_clauses, f.num_vars
    num = (w.a_of[r.y] * w.b_of[r.x] + w.a_of[r.y] * w.b_of[r.x_tilde]
           + w.a_of[r.y_tilde] * w.b_of[r.x] + w.a_of[r.y_tilde] * w.b_of[r.x_tilde])
    denom = 2 * m * n * w.w_tilde + 22 * m * w.w_a * w.w_b
    if denom <= 0:
        raise DiagnosticsError("all-zero weights")
    return float(num / denom)


# -- skew damage --------------------------------------------------------------------


def damage_bound(p: float) -> tuple[float, float]:
    """(stated catch-probability floor, derived fidelity ceiling) for weight ratio p.

    The two quotes disagree by a factor 2: the derivation gives fidelity
    <= 1/2 + sqrt(p)/(1+p), hence SWAP failure >= (1/2 - sqrt(p)/(1+p))/2,
    while the statement claims the failure floor without the /2. Both are
    returned; assertions elsewhere use only the fidelity ceiling.
    """
    if p < 1:
        raise DiagnosticsError(f"weight ratio must be >= 1, got {p}")
    root = math.sqrt(p) / (1 + p)
    return 0.5 - root, 0.5 + root


def max_claim_fidelity(f: Formula, fam: MeasurementFamily, k: int, r: QueryTuple) -> float:
    """Exact max over all 64 claimed triple pairs of <ref|sigma|ref>.

    sigma is the post-measurement Alice state for tuple r under outcome k,
    private register traced out; computed via dense ops, independently of the
    engine's fidelity tables.
    """
    check_tuple(f, r)
    if r.y == r.y_tilde:
        raise DiagnosticsError("need a non-degenerate clause pair")
    d = fam.private_dim
    m = f.num_clauses
    alice, _ = build_round1_states(f, r, d)
    a_op = fam.outcomes[k][0]
    from .quantum import apply_on_subsystems

    branch = apply_on_subsystems(a_op, [1, 2, 3], alice)
    nrm = branch.squared_norm()
    if nrm < 1e-300:
        raise UndefinedPosteriorError("zero-probability branch")
    sigma = DensityOperator(trace_out_last(branch.amplitudes, m * m * 8, d) / nrm,
                            (m, m, 8), validate=False)
    best = 0.0
    for ia in range(8):
        for ib in range(8):
            amps = np.zeros(m * m * 8, dtype=complex)
            amps[(r.y * m + r.y) * 8 + ia] = 1 / math.sqrt(2)
            amps[(r.y_tilde * m + r.y_tilde) * 8 + ib] = 1 / math.sqrt(2)
            ref = StateVector(amps, (m, m, 8))
            best = max(best, float(np.vdot(ref.amplitudes,
                                           sigma.matrix @ ref.amplitudes).real))
    return min(1.0, best)


def verify_damage_numerically(f: Formula, fam: MeasurementFamily, k: int, r: QueryTuple):
    """(max fidelity over claims, weight ratio p, fidelity ceiling at p).

    p is the larger of the two branch-weight ratios for (y, yt); whenever the
    ratio premise holds the max fidelity must stay below the ceiling.
    """
    w = compute_outcome_weights(f, fam, k)
    ay, ayt = w.a_of[r.y], w.a_of[r.y_tilde]
    if min(ay, ayt) <= 0:
        p = math.inf
        ceiling = 0.5
    else:
        p = max(ay / ayt, ayt / ay)
        ceiling = damage_bound(p)[1]
    return max_claim_fidelity(f, fam, k, r), p, ceiling


# -- dyadic bucketizations -----------------------------------------------------------

OVERFLOW = None  # bucket key for zero-weight items


def _bucket_upper_open(total: float, w: float) -> int:
    """i with total/2^(i+1) < w <= total/2^i  (half-open on the left)."""
    i = 0
    while w <= total / 2 ** (i + 1):
        i += 1
    while w > total / 2 ** i:
        i -= 1
    return i


def _bucket_lower_closed(total: float, w: float) -> int:
    """i with total/2^(i+1) <= w < total/2^i (half-open on the right).

    An item equal to the full total lands in i = -1; the construction keeps
    the partition property instead of silently dropping it.
    """
    i = 0
    while w < total / 2 ** (i + 1):
        i += 1
    while w >= total / 2 ** i:
        i -= 1
    return i


def _bucketize(values: dict[int, float], total: float, lower_closed: bool) -> dict:
    buckets: dict = {}
    for item, w in values.items():
        if w <= 0 or total <= 0:
            buckets.setdefault(OVERFLOW, []).append(item)
            continue
        i = _bucket_lower_closed(total, w) if lower_closed else _bucket_upper_open(total, w)
        buckets.setdefault(i, []).append(item)
    return buckets


def bucketize_u(w: OutcomeWeights) -> dict:
    """u(c) buckets against W_tilde with (.,.] boundaries."""
    return _bucketize({c: w.u_of[c] for c in range(w.num_clauses)}, w.w_tilde,
                      lower_closed=False)


def bucketize_T(w: OutcomeWeights, clause_set: Iterable[int]) -> dict:
    """A(c) buckets of a clause subset against W_A with (.,.] boundaries."""
    return _bucketize({c: w.a_of[c] for c in clause_set}, w.w_a, lower_closed=False)


def bucketize_A(w: OutcomeWeights) -> dict:
    """A(c) buckets against W_A with [.,.) boundaries."""
    return _bucketize({c: w.a_of[c] for c in range(w.num_clauses)}, w.w_a,
                      lower_closed=True)


def bucketize_B(w: OutcomeWeights) -> dict:
    """B(v) buckets against W_B with [.,.) boundaries."""
    return _bucketize({v: w.b_of[v] for v in range(w.num_vars)}, w.w_b,
                      lower_closed=True)


def _tail_indices(buckets: dict, j: int):
    finite = [i for i in buckets if i is not OVERFLOW]
    up = [c for i in finite if i < j for c in buckets[i]]
    down = [c for i in finite if i > j for c in buckets[i]]
    down += buckets.get(OVERFLOW, [])  # zero weight sits below every bucket
    return up, down


# -- bad sets -------------------------------------------------------------------------


@dataclass(frozen=True)
class BadSet:
    """Query tuples that are all damaged by factor >= p, with their total
    conditional probability under the outcome's weight profile."""

    tuples: tuple[QueryTuple, ...]
    p: float
    probability: float
    construction: str

    def __len__(self) -> int:
        return len(self.tuples)


def _bad_set_probability(f: Formula, w: OutcomeWeights, tuples) -> float:
    denom = sum(_tuple_numerator(w, s) for s in legal_tuples(f))
    if denom <= 0:
        raise UndefinedPosteriorError("all tuple weights vanish for this outcome")
    return float(sum(_tuple_numerator(w, r) for r in tuples) / denom)


def build_bad_set_large(f: Formula, w: OutcomeWeights, j: int,
                        constants: dict[str, float] | None = None) -> BadSet:
    """u-bucket gap construction: heavy clauses query, light clauses shadow.

    Premise: the u-mass strictly above and strictly below bucket j both exceed
    W_tilde / tail_mass_divisor. Each heavy clause contributes one tuple per
    (left, right) pair from an arbitrary halving of the light side, taking the
    lighter-A member as yt and the other side's minimal variable as xt; every
    tuple then satisfies A(y)B(vmax(y)) > 2 A(yt) B(xt).
    """
    cfg = constants_with(constants)
    buckets = bucketize_u(w)
    up, down = _tail_indices(buckets, j)
    threshold = w.w_tilde / cfg["tail_mass_divisor"]
    if w.u_mass(up) <= threshold or w.u_mass(down) <= threshold:
        raise DiagnosticsError(
            f"bucket-gap premise fails at j={j}: "
            f"up mass {w.u_mass(up)}, down mass {w.u_mass(down)}, need > {threshold}"
        )
    down = sorted(down)
    left, right = down[0::2], down[1::2]
    tuples = []
    for c_up in sorted(up):
        x = w.vmax(c_up)
        for cl in left:
            for cr in right:
                lighter, other = (cl, cr) if w.a_of[cl] <= w.a_of[cr] else (cr, cl)
                tuples.append(QueryTuple(c_up, lighter, x, w.vmin(other)))
    for r in tuples:
        if not w.a_of[r.y] * w.b_of[r.x] > 2 * w.a_of[r.y_tilde] * w.b_of[r.x_tilde]:
            raise DiagnosticsError(f"construction inequality fails on {r}")
    return BadSet(tuples=tuple(tuples), p=math.sqrt(2),
                  probability=_bad_set_probability(f, w, tuples),
                  construction="large-regime")


def build_bad_set_Tsteps(f: Formula, w: OutcomeWeights, clause_set: Iterable[int],
                         j: int, constants: dict[str, float] | None = None) -> BadSet:
    """A-bucket gap inside a clause subset: up x down x {vmax(up)} x V, 2-damaged."""
    cfg = constants_with(constants)
    clause_set = sorted(set(clause_set))
    buckets = bucketize_T(w, clause_set)
    up, down = _tail_indices(buckets, j)
    threshold = len(clause_set) / cfg["tail_mass_divisor"]
    if len(up) <= threshold or len(down) <= threshold:
        raise DiagnosticsError(
            f"count premise fails at j={j}: |up|={len(up)}, |down|={len(down)}, "
            f"need > {threshold}"
        )
    tuples = [
        QueryTuple(c_up, c_down, w.vmax(c_up), xt)
        for c_up in sorted(up)
        for c_down in sorted(down)
        for xt in range(f.num_vars)
    ]
    for r in tuples:
        if not w.a_of[r.y] > 2 * w.a_of[r.y_tilde]:
            raise DiagnosticsError(f"2-damage fails on {r}")
    return BadSet(tuples=tuple(tuples), p=2.0,
                  probability=_bad_set_probability(f, w, tuples),
                  construction="T-steps")


@dataclass(frozen=True)
class SmallRegimeResult:
    """Outcome of the small-regime case split.

    Either a prover-side bad set fires, or the surviving heavy sets are
    returned: clauses F (uniformly A-heavy), variables G (uniformly B-heavy),
    and H, the F-clauses all of whose variables lie in G. `violations` lists
    certified properties that fail at this scale instead of silently passing.
    """

    alice_bad_set: BadSet | None
    f_set: tuple[int, ...] | None
    bob_bad_set: BadSet | None
    g_set: tuple[int, ...] | None
    h_set: tuple[int, ...] | None
    violations: tuple[str, ...]


def _small_side_split(weights: np.ndarray, total: float, gamma: float,
                      count: int, cfg: dict[str, float]):
    """Find a bucket index with heavy weight above and many items below, if any.

    The separating index may be an empty bucket between populated ones, so the
    scan covers the whole occupied index range.
    """
    buckets = _bucketize({i: weights[i] for i in range(len(weights))}, total,
                         lower_closed=True)
    w_thresh = cfg["small_tail_weight_coeff"] * gamma * total
    c_thresh = cfg["small_tail_count_coeff"] * gamma * count
    finite = sorted(i for i in buckets if i is not OVERFLOW)
    lo = finite[0] if finite else 0
    hi = finite[-1] if finite else -1
    for i in range(lo, hi + 1):
        up, down = _tail_indices(buckets, i)
        if sum(weights[j] for j in up) > w_thresh and len(down) > c_thresh:
            return i, up, down, buckets
    return None, None, None, buckets


def find_gap_index_u(w: OutcomeWeights, constants: dict[str, float] | None = None):
    """First bucket index splitting the u-mass per the both-tails premise, or None."""
    cfg = constants_with(constants)
    buckets = bucketize_u(w)
    threshold = w.w_tilde / cfg["tail_mass_divisor"]
    finite = sorted(i for i in buckets if i is not OVERFLOW)
    if not finite:
        return None
    for j in range(finite[0], finite[-1] + 1):
        up, down = _tail_indices(buckets, j)
        if w.u_mass(up) > threshold and w.u_mass(down) > threshold:
            return j
    return None


def find_gap_index_T(w: OutcomeWeights, clause_set: Iterable[int],
                     constants: dict[str, float] | None = None):
    """First bucket index splitting a clause subset per the both-tails count premise."""
    cfg = constants_with(constants)
    clause_set = sorted(set(clause_set))
    buckets = bucketize_T(w, clause_set)
    threshold = len(clause_set) / cfg["tail_mass_divisor"]
    finite = sorted(i for i in buckets if i is not OVERFLOW)
    if not finite:
        return None
    for j in range(finite[0], finite[-1] + 1):
        up, down = _tail_indices(buckets, j)
        if len(up) > threshold and len(down) > threshold:
            return j
    return None


def _surviving_pair(weights: np.ndarray, total: float, gamma: float,
                    cfg: dict[str, float], buckets: dict):
    """Smallest t whose strict-upper weight crosses the tail threshold; F = S_{t-1} u S_t."""
    w_thresh = cfg["small_tail_weight_coeff"] * gamma * total
    finite = sorted(i for i in buckets if i is not OVERFLOW)
    if not finite:
        return ()
    t = None
    lo = min(finite)
    hi = max(finite)
    for cand in range(lo, hi + 2):
        up, _ = _tail_indices(buckets, cand)
        if sum(weights[j] for j in up) > w_thresh:
            t = cand
            break
    if t is None:
        t = hi + 1
    members = tuple(sorted(buckets.get(t - 1, []) + buckets.get(t, [])))
    return members


def build_bad_set_small(f: Formula, w: OutcomeWeights, gamma: float,
                        constants: dict[str, float] | None = None) -> SmallRegimeResult:
    """Small-regime case split for both provers, with certified survivors.

    gamma is the formula's unsatisfiability gap, entering only through the
    tail thresholds (coefficients configurable; paper defaults keep them tiny).
    """
    cfg = constants_with(constants)
    violations: list[str] = []
    m, n = f.num_clauses, f.num_vars

    i, up, down, buckets_a = _small_side_split(w.a_of, w.w_a, gamma, m, cfg)
    alice_bad = None
    f_set = None
    if i is not None:
        tuples = [
            QueryTuple(c, c_down, v, xt)
            for c in sorted(up)
            for v in f.clause_vars(c)
            for c_down in sorted(down)
            for xt in range(n)
        ]
        for r in tuples:
            if not w.a_of[r.y] > 2 * w.a_of[r.y_tilde]:
                raise DiagnosticsError(f"2-damage fails on {r}")
        alice_bad = BadSet(tuples=tuple(tuples), p=2.0,
                           probability=_bad_set_probability(f, w, tuples),
                           construction="small-clause")
    else:
        f_set = _surviving_pair(w.a_of, w.w_a, gamma, cfg, buckets_a)
        if len(f_set) < (1 - 2 * cfg["small_tail_count_coeff"] * gamma) * m:
            violations.append(f"|F|={len(f_set)} below the certified fraction of M={m}")
        if w.a_mass(f_set) < (1 - 2 * cfg["small_tail_weight_coeff"] * gamma) * w.w_a:
            violations.append("W(F) below the certified fraction of W_A")
        floor = w.w_a / (cfg["min_clause_weight_divisor"] * m)
        for c in f_set:
            if w.a_of[c] < floor:
                violations.append(f"A({c}) below W_A/(5M)")

    j, upv, downv, buckets_b = _small_side_split(w.b_of, w.w_b, gamma, n, cfg)
    bob_bad = None
    g_set = None
    if j is not None:
        tuples = [
            QueryTuple(c, ct, v, xt)
            for v in sorted(upv)
            for c in range(m) if v in f.clause_vars(c)
            for ct in range(m)
            for xt in sorted(downv)
        ]
        for r in tuples:
            if not w.b_of[r.x] > 2 * w.b_of[r.x_tilde]:
                raise DiagnosticsError(f"Bob 2-damage fails on {r}")
        bob_bad = BadSet(tuples=tuple(tuples), p=2.0,
                         probability=_bad_set_probability(f, w, tuples),
                         construction="bob")
    else:
        g_set = _surviving_pair(w.b_of, w.w_b, gamma, cfg, buckets_b)
        if len(g_set) < (1 - 2 * cfg["small_tail_count_coeff"] * gamma) * n:
            violations.append(f"|G|={len(g_set)} below the certified fraction of N={n}")
        floor = w.w_b / (cfg["min_var_weight_divisor"] * n)
        for v in g_set:
            if w.b_of[v] < floor:
                violations.append(f"B({v}) below W_B/(5N)")

    h_set = None
    if f_set is not None and g_set is not None:
        gv = set(g_set)
        h_set = tuple(c for c in f_set if all(v in gv for v in f.clause_vars(c)))

    return SmallRegimeResult(
        alice_bad_set=alice_bad, f_set=f_set, bob_bad_set=bob_bad,
        g_set=g_set, h_set=h_set, violations=tuple(violations),
    )


def regime_classify(f: Formula, w: OutcomeWeights,
                    constants: dict[str, float] | None = None) -> str:
    """'large' iff N * W_tilde >= factor * W_A * W_B (ties large), else 'small'."""
    cfg = constants_with(constants)
    if f.num_vars * w.w_tilde >= cfg["large_regime_factor"] * w.w_a * w.w_b:
        return "large"
    return "small"


# -- near-orthogonal overlap bound ----------------------------------------------------


def taylor_overlap_bound(eps: float) -> float:
    """The quoted bound 1/2 + sqrt(3 eps)/2 - eps/2 on |<v|w>|.

    Setting: unit u, v, w with |<u|v>| <= 1/2 and |<u|w>| > 1 - eps. The
    quoted first-order form drops a factor inside the square root; the tight
    constant is exact_overlap_bound below, which sampling confirms while
    exceeding this one near the extremal configurations.
    """
    if not 0 < eps < 1:
        raise DiagnosticsError(f"eps must be in (0, 1), got {eps}")
    return 0.5 + math.sqrt(3 * eps) / 2 - eps / 2


def exact_overlap_bound(eps: float) -> float:
    """Tight version: max of q/2 + (sqrt(3)/2) sqrt(1-q^2) over q in (1-eps, 1]."""
    if not 0 < eps < 1:
        raise DiagnosticsError(f"eps must be in (0, 1), got {eps}")
    return 0.5 + math.sqrt(3 * eps * (2 - eps)) / 2 - eps / 2


@dataclass(frozen=True)
class OverlapCheck:
    eps: float
    samples: int
    quoted_bound: float
    exact_bound: float
    worst_margin_quoted: float
    worst_margin_exact: float
    violations_quoted: int


def _haar_vector(n: int, rng: np.random.Generator) -> np.ndarray:
    v = rng.standard_normal(n) + 1j * rng.standard_normal(n)
    return v / np.linalg.norm(v)


def verify_overlap_lemma(eps: float, samples: int, rng: np.random.Generator,
                         dims: Iterable[int] = range(2, 9)) -> OverlapCheck:
    """Sample constrained unit triples and report margins against both bounds.

    u and v are Haar vectors with |<u|v>| <= 1/2 by rejection; w is drawn in
    the |<u|w>| > 1 - eps cap directly (plain rejection is astronomically slow
    there for small eps in higher dimensions).
    """
    quoted = taylor_overlap_bound(eps)
    exact = exact_overlap_bound(eps)
    dims = list(dims)
    worst_q = math.inf
    worst_e = math.inf
    nviol = 0
    for _ in range(samples):
        n = dims[int(rng.integers(len(dims)))]
        u = _haar_vector(n, rng)
        while True:
            v = _haar_vector(n, rng)
            if abs(np.vdot(u, v)) <= 0.5:
                break
        q = 1 - eps * rng.random()
        perp = _haar_vector(n, rng)
        perp -= np.vdot(u, perp) * u
        nrm = np.linalg.norm(perp)
        if nrm < 1e-12:
            w_vec = u
        else:
            phase = np.exp(2j * np.pi * rng.random())
            w_vec = q * phase * u + math.sqrt(1 - q * q) * (perp / nrm)
        ov = abs(np.vdot(v, w_vec))
        worst_q = min(worst_q, quoted - ov)
        worst_e = min(worst_e, exact - ov)
        if quoted - ov < -1e-9:
            nviol += 1
    return OverlapCheck(eps=eps, samples=samples, quoted_bound=quoted,
                        exact_bound=exact, worst_margin_quoted=worst_q,
                        worst_margin_exact=worst_e, violations_quoted=nviol)


# -- full per-family report ------------------------------------------------------------


@dataclass(frozen=True)
class Finding:
    kind: str
    detail: str


@dataclass(frozen=True)
class OutcomeDiagnostics:
    outcome: int
    probability: float
    weights: OutcomeWeights
    regime: str
    u_buckets: dict
    a_buckets: dict
    b_buckets: dict
    posterior_total: float
    lower_bound_violations: int
    worst_lower_bound_excess: float
    small_regime: SmallRegimeResult | None
    large_regime_bad_set: BadSet | None = None


@dataclass(frozen=True)
class DiagnosticsReport:
    outcomes: tuple[OutcomeDiagnostics, ...]
    findings: tuple[Finding, ...]
    constants: dict[str, float]
    skipped_outcomes: tuple[int, ...]


def outcome_probability(f: Formula, fam: MeasurementFamily, k: int) -> float:
    """Pr(k) under the purified query state (uniform over tuples with
    degenerate multiplicities)."""
    w = compute_outcome_weights(f, fam, k)
    num = sum(_tuple_numerator(w, r) for r in legal_tuples(f))
    z = sum(tuple_multiplicity(r) for r in legal_tuples(f))
    return float(num / (4 * z))


def diagnose_family(f: Formula, fam: MeasurementFamily, gamma: float = 0.0,
                    constants: dict[str, float] | None = None,
                    min_outcome_probability: float = 1e-12) -> DiagnosticsReport:
    """Per-outcome weight profiles, regimes, buckets, posterior checks, findings."""
    cfg = constants_with(constants)
    outs = []
    findings: list[Finding] = []
    skipped = []
    for k in range(fam.num_outcomes):
        pk = outcome_probability(f, fam, k)
        if pk <= min_outcome_probability:
            skipped.append(k)
            continue
        w = compute_outcome_weights(f, fam, k)
        table = posterior_table(f, fam, k)
        total = sum(table.values())
        nviol = 0
        worst = 0.0
        for r, exact in table.items():
            lo = posterior_lower_bound(f, w, r)
            if lo > exact + 1e-9:
                nviol += 1
                worst = max(worst, lo - exact)
        if nviol:
            findings.append(Finding(
                kind="lower-bound-exceeds-exact",
                detail=(f"outcome {k}: closed-form floor exceeds the exact value on "
                        f"{nviol} tuples (worst excess {worst:.3e}); the floor's "
                        f"denominator simplification assumes large M >= N"),
            ))
        regime = regime_classify(f, w, cfg)
        small = None
        large_bad = None
        if regime == "small":
            small = build_bad_set_small(f, w, gamma, cfg)
            for v in small.violations:
                findings.append(Finding(
                    kind="survivor-certificate-violation",
                    detail=f"outcome {k}: {v}",
                ))
        else:
            j = find_gap_index_u(w, cfg)
            if j is not None:
                large_bad = build_bad_set_large(f, w, j, cfg)
        outs.append(OutcomeDiagnostics(
            outcome=k, probability=pk, weights=w, regime=regime,
            u_buckets=bucketize_u(w), a_buckets=bucketize_A(w),
            b_buckets=bucketize_B(w), posterior_total=total,
            lower_bound_violations=nviol, worst_lower_bound_excess=worst,
            small_regime=small, large_regime_bad_set=large_bad,
        ))
    return DiagnosticsReport(outcomes=tuple(outs), findings=tuple(findings),
                             constants=cfg, skipped_outcomes=tuple(skipped))
