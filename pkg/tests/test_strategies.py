import math

import numpy as np
import pytest

from qmip import quantum as q
from qmip import sat
from qmip import protocol as proto
from qmip import strategies as strat


@pytest.fixture(scope="module")
def planted():
    return sat.generate_planted(1, 3, 5, regular=True)


def test_honest_family_completeness_and_single_outcome(planted):
    f, t = planted
    s = strat.strategy_honest(f, t)
    assert s.family.num_outcomes == 1
    assert q.check_family_completeness(s.family) < 1e-9
    r = proto.QueryTuple(0, 1, f.clause_vars(0)[0], 2)
    assert s.round2(r, 0) == s.round2(r, 0)


def test_honest_acceptance_one(planted):
    f, t = planted
    assert proto.run_protocol_exact(f, strat.strategy_honest(f, t)) == pytest.approx(1.0, abs=1e-9)


def test_honest_on_unsat_accepts_below_one():
    f = sat.all_patterns_formula()
    t = sat.best_assignment(f)
    with pytest.warns(UserWarning, match="non-satisfying"):
        s = strat.strategy_honest(f, t)
    acc = proto.run_protocol_exact(f, s)
    # rejected at least whenever the sampled y is the violated clause
    assert acc <= 1 - 1 / f.num_clauses + 1e-9
    assert acc < 1


def test_measure_resend_alice_swap_three_quarters(planted):
    f, t = planted
    s = strat.strategy_measure_resend(f, t)
    engine = proto.ProtocolEngine(f, s)
    tuples, prob, det, pass_a, pass_b = engine.exact_tables()
    neq = [i for i, r in enumerate(tuples) if r.y != r.y_tilde]
    eq = [i for i, r in enumerate(tuples) if r.y == r.y_tilde]
    # conditional expectation of the exact Alice-SWAP pass probability
    cond = (prob[neq] * pass_a[neq]).sum() / prob[neq].sum()
    assert cond == pytest.approx(0.75, abs=1e-9)
    cond_eq = (prob[eq] * pass_a[eq]).sum() / prob[eq].sum()
    assert cond_eq == pytest.approx(1.0, abs=1e-9)


def test_measure_resend_acceptance_bound(planted):
    f, t = planted
    s = strat.strategy_measure_resend(f, t)
    acc = proto.run_protocol_exact(f, s)
    m = f.num_clauses
    assert acc <= 1 - (1 - 1 / m) / 4 + 1e-9


def test_measure_resend_passes_deterministic_checks(planted):
    f, t = planted
    engine = proto.ProtocolEngine(f, strat.strategy_measure_resend(f, t))
    _, prob, det, _, _ = engine.exact_tables()
    # deterministic checks pass on every reachable branch
    assert np.all(det[prob > 1e-12])


def test_skewed_weight_ratio(planted):
    f, t = planted
    for p in (1.0, 2.0, 7.5):
        s = strat.strategy_skewed(f, p, 0, 1, t)
        engine = proto.ProtocolEngine(f, s)
        w = engine.alice_weight[0]
        assert w[0] / w[1] == pytest.approx(p, abs=1e-9)
        assert q.check_family_completeness(s.family) < 1e-9


def test_skewed_p1_no_damage(planted):
    f, t = planted
    s = strat.strategy_skewed(f, 1.0, 0, 1, t)
    engine = proto.ProtocolEngine(f, s)
    w = engine.alice_weight[0]
    assert w[0] == pytest.approx(w[1])
    # outcome 0 keeps the superposition intact: the all-zero claim (the bits
    # actually left in the answer register) still has fidelity 1
    assert engine.fid_a[0, 0, 1, 0, 0] == pytest.approx(1.0, abs=1e-12)


def test_skewed_p_below_one_rejected(planted):
    f, t = planted
    with pytest.raises(strat.StrategyError):
        strat.strategy_skewed(f, 0.5, 0, 1, t)


@pytest.mark.parametrize("p", [1.5, 2.0, 4.0, 16.0])
def test_skewed_fidelity_bounded_for_every_claim(planted, p):
    f, t = planted
    s = strat.strategy_skewed(f, p, 0, 1, t)
    engine = proto.ProtocolEngine(f, s)
    bound = 0.5 + math.sqrt(p) / (1 + p)
    fid = engine.fid_a[0, 0, 1]  # outcome 0, tuple (y1, y2, ..)
    assert fid.max() <= bound + 1e-9
    if p == 2.0:
        assert bound == pytest.approx(0.5 + math.sqrt(2) / 3)
        # the damping construction is tight at the claimed bits
        assert fid.max() == pytest.approx(bound, abs=1e-9)


@pytest.mark.parametrize("p", [1.5, 2.0, 4.0, 16.0])
def test_skewed_swap_failure_rate(planted, p):
    """Empirical SWAP failure on (y1, y2, ., .) under outcome 0 meets the bound."""
    f, t = planted
    s = strat.strategy_skewed(f, p, 0, 1, t)
    engine = proto.ProtocolEngine(f, s)
    tuples, prob, det, pass_a, _ = engine.exact_tables()
    idx = [i for i, r in enumerate(tuples) if (r.y, r.y_tilde) == (0, 1)]
    fail_floor = (0.5 - math.sqrt(p) / (1 + p)) / 2
    for i in idx:
        assert 1 - pass_a[i, 0] >= fail_floor - 1e-6


def test_locc_honest_script_reproduces_honest(planted):
    f, t = planted
    d = 2
    ua, ub = proto.honest_prover_unitaries(f, t, d)
    script = strat.LoccScript(rounds=(
        strat.LoccRound("alice", [ua]),
        strat.LoccRound("bob", [ub]),
    ))
    fam = strat.compile_locc_to_separable(script, d)
    assert fam.num_outcomes == 1
    np.testing.assert_allclose(fam.outcomes[0][0], ua)
    np.testing.assert_allclose(fam.outcomes[0][1], ub)


def test_locc_projective_alice_idle_bob(planted):
    f, _ = planted
    m, d = f.num_clauses, 1
    projs = []
    for c in range(m):
        blk = np.zeros((m, m))
        blk[c, c] = 1.0
        projs.append(np.kron(blk, np.eye(8 * d)))
    script = strat.LoccScript(rounds=(
        strat.LoccRound("alice", projs),
        strat.LoccRound("bob", [np.eye(2 * f.num_vars * d)]),
    ))
    fam = strat.compile_locc_to_separable(script, d)
    assert fam.num_outcomes == m
    assert q.check_family_completeness(fam) < 1e-12


def test_locc_two_round_conditional(planted):
    """Alice 2 outcomes, Bob applies an outcome-conditioned unitary."""
    f, _ = planted
    rng = np.random.default_rng(5)
    d = 1
    da, db = 8 * f.num_clauses * d, 2 * f.num_vars * d
    a_ops = q.random_kraus_set(da, 2, rng)
    u0, u1 = q.random_unitary(db, rng), q.random_unitary(db, rng)
    script = strat.LoccScript(rounds=(
        strat.LoccRound("alice", a_ops),
        strat.LoccRound("bob", {(0,): [u0], (1,): [u1]}),
    ))
    fam = strat.compile_locc_to_separable(script, d)
    assert fam.num_outcomes == 2
    assert q.check_family_completeness(fam) < 1e-9
    np.testing.assert_allclose(fam.outcomes[0][1], u0)
    np.testing.assert_allclose(fam.outcomes[1][1], u1)


def test_locc_incomplete_round_rejected(planted):
    f, _ = planted
    bad = [0.5 * np.eye(8 * f.num_clauses)]
    script = strat.LoccScript(rounds=(strat.LoccRound("alice", bad),))
    with pytest.raises(strat.StrategyError, match="identity"):
        strat.compile_locc_to_separable(script, 1)


def test_every_builtin_family_complete(planted):
    f, t = planted
    for s in (strat.strategy_honest(f, t),
              strat.strategy_measure_resend(f, t),
              strat.strategy_skewed(f, 2.0, 0, 1, t)):
        assert q.check_family_completeness(s.family) <= 1e-9


def test_strategy_from_spec_round_trip(planted):
    f, t = planted
    s = strat.strategy_from_spec({"kind": "honest", "assignment": list(t.bits)}, f)
    assert isinstance(s, strat.HonestStrategy)
    s = strat.strategy_from_spec({"kind": "measure_resend"}, f)
    assert isinstance(s, strat.MeasureResendStrategy)
    s = strat.strategy_from_spec({"kind": "skewed", "p": 2, "y1": 0, "y2": 1}, f)
    assert isinstance(s, strat.SkewedStrategy)
    fam_json = q.family_to_json_dict(strat.strategy_honest(f, t, private_dim=1).family)
    s = strat.strategy_from_spec({"kind": "custom", "family": fam_json,
                                  "assignment": list(t.bits)}, f, private_dim=1)
    assert isinstance(s, strat.CustomStrategy)
    assert proto.run_protocol_exact(f, s) == pytest.approx(1.0, abs=1e-9)


def test_strategy_from_spec_unknown_kind(planted):
    f, _ = planted
    with pytest.raises(strat.StrategyError, match="unknown"):
        strat.strategy_from_spec({"kind": "nope"}, f)
