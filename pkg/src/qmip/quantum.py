"""Exact finite-dimensional quantum mechanics on dense numpy arrays.

State vectors and density operators carry an ordered tuple of subsystem
dimensions; operators act on contiguous subsystem ranges. Everything is
desk scale (total dimension up to a few thousand), so no sparsity.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, field

import numpy as np

ATOL = 1e-9          # equality / normalization tolerance
PSD_TOL = 1e-7       # eigenvalue slack for positive semidefiniteness


class DimensionError(ValueError):
    """Subsystem dimensions do not match the requested operation."""


def _as_dims(dims, total: int) -> tuple[int, ...]:
    dims = tuple(int(d) for d in dims)
    if math.prod(dims) != total:
        raise DimensionError(f"dims {dims} do not multiply to {total}")
    return dims


@dataclass(frozen=True)
class StateVector:
    """A pure state. `normalized=False` marks an intermediate (e.g. a measurement branch)."""

    amplitudes: np.ndarray
    dims: tuple[int, ...]
    normalized: bool = True

    def __post_init__(self):
        amps = np.asarray(self.amplitudes, dtype=complex).reshape(-1)
        object.__setattr__(self, "amplitudes", amps)
        object.__setattr__(self, "dims", _as_dims(self.dims, amps.size))
        if self.normalized and abs(self.squared_norm() - 1.0) > ATOL:
            raise ValueError(f"state not normalized: |psi|^2 = {self.squared_norm()}")

    @property
    def dim(self) -> int:
        return self.amplitudes.size

    def squared_norm(self) -> float:
        return float(np.vdot(self.amplitudes, self.amplitudes).real)

    def normalize(self) -> "StateVector":
        n = math.sqrt(self.squared_norm())
        if n < ATOL:
            raise ValueError("cannot normalize a (near-)zero vector")
        return StateVector(self.amplitudes / n, self.dims)

    def to_density(self) -> "DensityOperator":
        amps = self.amplitudes
        if not self.normalized:
            amps = amps / math.sqrt(self.squared_norm())
        return DensityOperator(np.outer(amps, amps.conj()), self.dims)


def basis_state(dims, index) -> StateVector:
    """Computational basis state; index is either flat or one int per subsystem."""
    dims = tuple(int(d) for d in dims)
    if isinstance(index, (tuple, list)):
        flat = 0
        for d, i in zip(dims, index):
            if not 0 <= i < d:
                raise DimensionError(f"basis index {i} out of range for dim {d}")
            flat = flat * d + i
    else:
        flat = int(index)
    amps = np.zeros(math.prod(dims), dtype=complex)
    amps[flat] = 1.0
    return StateVector(amps, dims)


@dataclass(frozen=True)
class DensityOperator:
    """A mixed state: Hermitian, unit trace, positive semidefinite (within tolerance)."""

    matrix: np.ndarray
    dims: tuple[int, ...]
    validate: bool = True

    def __post_init__(self):
        m = np.asarray(self.matrix, dtype=complex)
        object.__setattr__(self, "matrix", m)
        if m.ndim != 2 or m.shape[0] != m.shape[1]:
            raise DimensionError(f"density matrix must be square, got {m.shape}")
        object.__setattr__(self, "dims", _as_dims(self.dims, m.shape[0]))
        if self.validate:
            if np.abs(m - m.conj().T).max() > ATOL:
                raise ValueError("density matrix not Hermitian")
            if abs(np.trace(m).real - 1.0) > ATOL or abs(np.trace(m).imag) > ATOL:
                raise ValueError(f"density matrix trace {np.trace(m)} != 1")
            if np.linalg.eigvalsh(m).min() < -PSD_TOL:
                raise ValueError("density matrix not positive semidefinite")

    @property
    def dim(self) -> int:
        return self.matrix.shape[0]


@dataclass(frozen=True)
class Operator:
    """A matrix acting on a tensor product of subsystems."""

    matrix: np.ndarray
    dims: tuple[int, ...]

    def __post_init__(self):
        m = np.asarray(self.matrix, dtype=complex)
        object.__setattr__(self, "matrix", m)
        if not np.all(np.isfinite(m)):
            raise ValueError("operator has non-finite entries")
        if m.ndim != 2 or m.shape[0] != m.shape[1]:
            raise DimensionError(f"only square operators are supported, got {m.shape}")
        object.__setattr__(self, "dims", _as_dims(self.dims, m.shape[0]))


def tensor(a, b):
    """Kronecker product of two StateVectors or two Operators, dims concatenated."""
    if isinstance(a, StateVector) and isinstance(b, StateVector):
        return StateVector(
            np.kron(a.amplitudes, b.amplitudes),
            a.dims + b.dims,
            normalized=a.normalized and b.normalized,
        )
    if isinstance(a, Operator) and isinstance(b, Operator):
        return Operator(np.kron(a.matrix, b.matrix), a.dims + b.dims)
    if isinstance(a, DensityOperator) and isinstance(b, DensityOperator):
        return DensityOperator(np.kron(a.matrix, b.matrix), a.dims + b.dims)
    raise TypeError(f"cannot tensor {type(a).__name__} with {type(b).__name__}")


def _split_dims(dims, targets):
    targets = tuple(targets)
    if targets != tuple(range(targets[0], targets[0] + len(targets))):
        raise DimensionError(f"target subsystems must be contiguous, got {targets}")
    lo, hi = targets[0], targets[-1] + 1
    if lo < 0 or hi > len(dims):
        raise DimensionError(f"targets {targets} out of range for dims {dims}")
    pre = math.prod(dims[:lo]) if lo else 1
    mid = math.prod(dims[lo:hi])
    post = math.prod(dims[hi:]) if hi < len(dims) else 1
    return pre, mid, post


def apply_on_subsystems(op: np.ndarray | Operator, targets, state):
    """Apply op on the given contiguous subsystems, identity elsewhere.

    Works on StateVector (result may be unnormalized, e.g. a measurement
    branch) and on DensityOperator (conjugation, trace may drop).
    """
    mat = op.matrix if isinstance(op, Operator) else np.asarray(op, dtype=complex)
    if isinstance(state, StateVector):
        pre, mid, post = _split_dims(state.dims, targets)
        if mat.shape != (mid, mid):
            raise DimensionError(f"operator is {mat.shape}, targets span dim {mid}")
        psi = state.amplitudes.reshape(pre, mid, post)
        out = np.einsum("ab,pbq->paq", mat, psi).reshape(-1)
        return StateVector(out, state.dims, normalized=False)
    if isinstance(state, DensityOperator):
        pre, mid, post = _split_dims(state.dims, targets)
        if mat.shape != (mid, mid):
            raise DimensionError(f"operator is {mat.shape}, targets span dim {mid}")
        rho = state.matrix.reshape(pre, mid, post, pre, mid, post)
        out = np.einsum("ab,pbqrcs,dc->paqrds", mat, rho, mat.conj())
        d = state.matrix.shape[0]
        return DensityOperator(out.reshape(d, d), state.dims, validate=False)
    raise TypeError(f"cannot apply operator to {type(state).__name__}")


def partial_trace(rho: DensityOperator, keep) -> DensityOperator:
    """Trace out all subsystems not in `keep` (indices into rho.dims)."""
    keep = sorted(set(keep))
    if any(k < 0 or k >= len(rho.dims) for k in keep):
        raise DimensionError(f"keep indices {keep} out of range for dims {rho.dims}")
    n = len(rho.dims)
    m = rho.matrix.reshape(rho.dims + rho.dims)
    # contract traced-out row/column index pairs
    letters = "abcdefghijklmnopqrstuvwxyz"
    if 2 * n > len(letters):
        raise DimensionError("too many subsystems")
    row = list(letters[:n])
    col = [letters[n + i] if i in keep else letters[i] for i in range(n)]
    out_idx = "".join(row[i] for i in keep) + "".join(col[i] for i in keep)
    reduced = np.einsum("".join(row) + "".join(col) + "->" + out_idx, m)
    kept_dims = tuple(rho.dims[i] for i in keep)
    d = math.prod(kept_dims)
    return DensityOperator(reduced.reshape(d, d), kept_dims, validate=False)


def trace_out_last(psi: np.ndarray, keep_dim: int, traced_dim: int) -> np.ndarray:
    """tr over the trailing subsystem of |psi><psi|, as a keep_dim x keep_dim matrix.

    Accepts an unnormalized branch vector; the result is unnormalized too.
    """
    v = np.asarray(psi, dtype=complex).reshape(keep_dim, traced_dim)
    return v @ v.conj().T


def fidelity_pure_mixed(psi: StateVector, sigma: DensityOperator) -> float:
    """<psi|sigma|psi>, the squared overlap of a pure state with a mixed one."""
    if psi.dim != sigma.dim:
        raise DimensionError(f"state dim {psi.dim} != density dim {sigma.dim}")
    val = complex(np.vdot(psi.amplitudes, sigma.matrix @ psi.amplitudes))
    if abs(val.imag) > 1e-7:
        raise ValueError(f"fidelity has imaginary residual {val.imag}")
    return float(min(1.0, max(0.0, val.real)))


def swap_test_pass_prob(psi: StateVector, sigma: DensityOperator) -> float:
    """Probability the SWAP test accepts: 1/2 + <psi|sigma|psi>/2."""
    return 0.5 + 0.5 * fidelity_pure_mixed(psi, sigma)


@dataclass(frozen=True)
class MeasurementFamily:
    """A joint separable measurement {(A_k, B_k)} for the two provers.

    A_k acts on Alice's message (clause index x 3 answer bits) tensored with
    her private space; B_k on Bob's (variable index x answer bit) with his.
    Completeness: sum_k (A_k (x) B_k)^dag (A_k (x) B_k) = I.
    """

    outcomes: tuple[tuple[np.ndarray, np.ndarray], ...]
    private_dim: int
    num_clauses: int = field(init=False)
    num_vars: int = field(init=False)

    def __post_init__(self):
        if not self.outcomes:
            raise ValueError("family needs at least one outcome")
        outs = tuple(
            (np.asarray(a, dtype=complex), np.asarray(b, dtype=complex))
            for a, b in self.outcomes
        )
        object.__setattr__(self, "outcomes", outs)
        d = self.private_dim
        a0, b0 = outs[0]
        if a0.shape[0] % (8 * d) or b0.shape[0] % (2 * d):
            raise DimensionError(
                f"operator dims {a0.shape[0]}x{b0.shape[0]} not divisible by 8d, 2d (d={d})"
            )
        object.__setattr__(self, "num_clauses", a0.shape[0] // (8 * d))
        object.__setattr__(self, "num_vars", b0.shape[0] // (2 * d))
        for a, b in outs:
            if a.shape != a0.shape or b.shape != b0.shape:
                raise DimensionError("all outcomes must share operator shapes")

    @property
    def num_outcomes(self) -> int:
        return len(self.outcomes)

    @property
    def alice_dims(self) -> tuple[int, int, int]:
        return (self.num_clauses, 8, self.private_dim)

    @property
    def bob_dims(self) -> tuple[int, int, int]:
        return (self.num_vars, 2, self.private_dim)


def check_family_completeness(fam: MeasurementFamily) -> float:
    """Operator-norm distance of sum_k (A_k (x) B_k)^dag (A_k (x) B_k) from identity."""
    da = fam.outcomes[0][0].shape[0]
    db = fam.outcomes[0][1].shape[0]
    total = np.zeros((da * db, da * db), dtype=complex)
    for a, b in fam.outcomes:
        total += np.kron(a.conj().T @ a, b.conj().T @ b)
    diff = total - np.eye(da * db)
    return float(np.abs(np.linalg.eigvalsh(diff)).max())


def family_to_json_dict(fam: MeasurementFamily) -> dict:
    def mat(m):
        return [[[float(z.real), float(z.imag)] for z in row] for row in m]

    return {
        "d": fam.private_dim,
        "outcomes": [{"A": mat(a), "B": mat(b)} for a, b in fam.outcomes],
    }


def family_from_json(obj) -> MeasurementFamily:
    if isinstance(obj, str):
        obj = json.loads(obj)

    def mat(rows):
        return np.array([[complex(re, im) for re, im in row] for row in rows])

    return MeasurementFamily(
        outcomes=tuple((mat(o["A"]), mat(o["B"])) for o in obj["outcomes"]),
        private_dim=int(obj["d"]),
    )


def random_unitary(n: int, rng: np.random.Generator) -> np.ndarray:
    g = rng.standard_normal((n, n)) + 1j * rng.standard_normal((n, n))
    q, r = np.linalg.qr(g)
    return q * (np.diag(r) / np.abs(np.diag(r)))


def random_kraus_set(n: int, count: int, rng: np.random.Generator) -> list[np.ndarray]:
    """`count` operators K_i on C^n with sum K_i^dag K_i = I (Haar-ish isometry split)."""
    g = rng.standard_normal((count * n, n)) + 1j * rng.standard_normal((count * n, n))
    q, _ = np.linalg.qr(g)  # isometry: q^dag q = I_n
    return [q[i * n:(i + 1) * n] for i in range(count)]


def random_separable_family(
    num_clauses: int,
    num_vars: int,
    private_dim: int,
    rng: np.random.Generator,
    alice_outcomes: int = 2,
    bob_outcomes: int = 2,
) -> MeasurementFamily:
    """Random complete separable family with alice_outcomes*bob_outcomes outcomes."""
    da = 8 * num_clauses * private_dim
    db = 2 * num_vars * private_dim
    alices = random_kraus_set(da, alice_outcomes, rng)
    bobs = random_kraus_set(db, bob_outcomes, rng)
    return MeasurementFamily(
        outcomes=tuple((a, b) for a in alices for b in bobs),
        private_dim=private_dim,
    )
