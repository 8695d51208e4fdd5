import math

import numpy as np
import pytest

from qmip import quantum as q


def ket(*bits):
    return q.basis_state((2,) * len(bits), bits)


def test_tensor_basis_states():
    s = q.tensor(ket(0), ket(1))
    assert s.dims == (2, 2)
    np.testing.assert_allclose(s.amplitudes, [0, 1, 0, 0])


def test_tensor_identity_operators():
    op = q.tensor(q.Operator(np.eye(2), (2,)), q.Operator(np.eye(3), (3,)))
    np.testing.assert_allclose(op.matrix, np.eye(6))
    assert op.dims == (2, 3)


def test_tensor_superposition():
    plus = q.StateVector(np.array([1, 1]) / math.sqrt(2), (2,))
    s = q.tensor(plus, ket(0))
    np.testing.assert_allclose(s.amplitudes, [1 / math.sqrt(2), 0, 1 / math.sqrt(2), 0])


def test_apply_identity_keeps_state():
    s = q.StateVector(np.array([1, 1j, 0, 0]) / math.sqrt(2), (2, 2))
    out = q.apply_on_subsystems(np.eye(2), [0], s)
    np.testing.assert_allclose(out.amplitudes, s.amplitudes)


def test_apply_projector_branch_norm():
    plus = q.StateVector(np.array([1, 1]) / math.sqrt(2), (2,))
    p0 = np.array([[1, 0], [0, 0]])
    out = q.apply_on_subsystems(p0, [0], plus)
    np.testing.assert_allclose(out.amplitudes, [1 / math.sqrt(2), 0])
    assert out.squared_norm() == pytest.approx(0.5)


def test_apply_x_on_second_qubit():
    x = np.array([[0, 1], [1, 0]])
    out = q.apply_on_subsystems(x, [1], ket(0, 0))
    np.testing.assert_allclose(out.amplitudes, ket(0, 1).amplitudes)


def test_apply_noncontiguous_targets_rejected():
    s = q.basis_state((2, 2, 2), 0)
    with pytest.raises(q.DimensionError, match="contiguous"):
        q.apply_on_subsystems(np.eye(4), [0, 2], s)


def test_apply_dimension_mismatch():
    with pytest.raises(q.DimensionError):
        q.apply_on_subsystems(np.eye(3), [0], ket(0))


def test_apply_on_density_operator():
    rho = ket(0).to_density()
    x = np.array([[0, 1], [1, 0]])
    out = q.apply_on_subsystems(x, [0], rho)
    np.testing.assert_allclose(out.matrix, ket(1).to_density().matrix)


def test_partial_trace_product_state():
    rho = ket(0, 1).to_density()
    red = q.partial_trace(rho, keep=[0])
    np.testing.assert_allclose(red.matrix, [[1, 0], [0, 0]])


def test_partial_trace_bell_state():
    bell = q.StateVector(np.array([1, 0, 0, 1]) / math.sqrt(2), (2, 2))
    for keep in ([0], [1]):
        red = q.partial_trace(bell.to_density(), keep=keep)
        np.testing.assert_allclose(red.matrix, np.eye(2) / 2, atol=1e-12)


def test_partial_trace_keep_everything():
    rho = ket(1, 0).to_density()
    red = q.partial_trace(rho, keep=[0, 1])
    np.testing.assert_allclose(red.matrix, rho.matrix)


def test_partial_trace_preserves_trace_and_psd():
    rng = np.random.default_rng(5)
    for _ in range(10):
        v = rng.standard_normal(12) + 1j * rng.standard_normal(12)
        s = q.StateVector(v / np.linalg.norm(v), (3, 2, 2))
        red = q.partial_trace(s.to_density(), keep=[0, 1])
        assert np.trace(red.matrix).real == pytest.approx(1.0, abs=1e-9)
        assert np.linalg.eigvalsh(red.matrix).min() >= -q.PSD_TOL


def test_fidelity_pure_pure():
    psi = ket(0)
    assert q.fidelity_pure_mixed(psi, psi.to_density()) == pytest.approx(1.0)


def test_fidelity_maximally_mixed():
    sigma = q.DensityOperator(np.eye(2) / 2, (2,))
    rng = np.random.default_rng(0)
    v = rng.standard_normal(2) + 1j * rng.standard_normal(2)
    psi = q.StateVector(v / np.linalg.norm(v), (2,))
    assert q.fidelity_pure_mixed(psi, sigma) == pytest.approx(0.5)


def test_fidelity_weighted_mixture():
    sigma = q.DensityOperator(np.diag([0.75, 0.25]), (2,))
    assert q.fidelity_pure_mixed(ket(0), sigma) == pytest.approx(0.75)


def test_swap_test_identical():
    psi = ket(1)
    assert q.swap_test_pass_prob(psi, psi.to_density()) == pytest.approx(1.0)


def test_swap_test_orthogonal():
    assert q.swap_test_pass_prob(ket(0), ket(1).to_density()) == pytest.approx(0.5)


def test_swap_test_zero_vs_plus():
    plus = q.StateVector(np.array([1, 1]) / math.sqrt(2), (2,))
    assert q.swap_test_pass_prob(ket(0), plus.to_density()) == pytest.approx(0.75)


def test_swap_test_range_random():
    rng = np.random.default_rng(9)
    for _ in range(20):
        v = rng.standard_normal(4) + 1j * rng.standard_normal(4)
        w = rng.standard_normal(4) + 1j * rng.standard_normal(4)
        psi = q.StateVector(v / np.linalg.norm(v), (4,))
        sigma = q.StateVector(w / np.linalg.norm(w), (4,)).to_density()
        p = q.swap_test_pass_prob(psi, sigma)
        assert 0.5 - 1e-12 <= p <= 1.0 + 1e-12


def test_unitary_preserves_norm():
    rng = np.random.default_rng(3)
    u = q.random_unitary(6, rng)
    v = rng.standard_normal(12) + 1j * rng.standard_normal(12)
    s = q.StateVector(v / np.linalg.norm(v), (2, 6))
    out = q.apply_on_subsystems(u, [1], s)
    assert out.squared_norm() == pytest.approx(1.0, abs=1e-12)


def test_completeness_unitary_pair():
    rng = np.random.default_rng(1)
    fam = q.MeasurementFamily(
        outcomes=((q.random_unitary(8, rng), q.random_unitary(2, rng)),),
        private_dim=1,
    )
    assert q.check_family_completeness(fam) < 1e-12


def test_completeness_projective_pair():
    p0 = np.diag([1.0] * 8 + [0.0] * 8)
    p1 = np.diag([0.0] * 8 + [1.0] * 8)
    fam = q.MeasurementFamily(
        outcomes=((p0, np.eye(2)), (p1, np.eye(2))),
        private_dim=1,
    )
    assert q.check_family_completeness(fam) < 1e-12


def test_completeness_scaled_family_residual():
    rng = np.random.default_rng(2)
    fam = q.MeasurementFamily(
        outcomes=((0.9 * q.random_unitary(8, rng), q.random_unitary(2, rng)),),
        private_dim=1,
    )
    assert q.check_family_completeness(fam) == pytest.approx(1 - 0.81, abs=1e-9)


def test_random_separable_family_complete_and_resolves_norms():
    rng = np.random.default_rng(4)
    fam = q.random_separable_family(2, 3, 2, rng, 2, 2)
    assert fam.num_outcomes == 4
    assert q.check_family_completeness(fam) < 1e-9
    # sum of branch norms over outcomes is 1 for a random joint state
    da = 8 * 2 * 2
    db = 2 * 3 * 2
    v = rng.standard_normal(da * db) + 1j * rng.standard_normal(da * db)
    v /= np.linalg.norm(v)
    total = 0.0
    for a, b in fam.outcomes:
        m = np.kron(a, b)
        total += float(np.vdot(m @ v, m @ v).real)
    assert total == pytest.approx(1.0, abs=1e-9)


def test_family_json_round_trip():
    rng = np.random.default_rng(6)
    fam = q.random_separable_family(2, 3, 2, rng, 2, 1)
    back = q.family_from_json(q.family_to_json_dict(fam))
    assert back.private_dim == fam.private_dim
    assert back.num_outcomes == fam.num_outcomes
    for (a1, b1), (a2, b2) in zip(fam.outcomes, back.outcomes):
        np.testing.assert_allclose(a1, a2)
        np.testing.assert_allclose(b1, b2)


def test_density_operator_validation():
    with pytest.raises(ValueError, match="Hermitian"):
        q.DensityOperator(np.array([[0.5, 1.0], [0.0, 0.5]]), (2,))
    with pytest.raises(ValueError, match="trace"):
        q.DensityOperator(np.eye(2), (2,))
    with pytest.raises(ValueError, match="semidefinite"):
        q.DensityOperator(np.diag([1.5, -0.5]), (2,))


def test_state_vector_norm_validation():
    with pytest.raises(ValueError, match="not normalized"):
        q.StateVector(np.array([1.0, 1.0]), (2,))
    s = q.StateVector(np.array([1.0, 1.0]), (2,), normalized=False)
    assert s.squared_norm() == pytest.approx(2.0)


def test_trace_out_last_matches_partial_trace():
    rng = np.random.default_rng(11)
    v = rng.standard_normal(24) + 1j * rng.standard_normal(24)
    v /= np.linalg.norm(v)
    s = q.StateVector(v, (2, 4, 3))
    via_full = q.partial_trace(s.to_density(), keep=[0, 1]).matrix
    via_fast = q.trace_out_last(v, 8, 3)
    np.testing.assert_allclose(via_fast, via_full, atol=1e-12)
