"""
Exact state-vector and measurement engine.

Covers single qubits and small joint registers (probe qubits entangled with
signal qubits, at most four qubits in total). Every measurement comes in two
flavours: a single-state function returning a Python int, and a ``*_batch``
function operating on stacked amplitude arrays so Monte Carlo loops stay in
numpy.

Conventions
-----------
* A basis is a 2x2 array whose *rows* are the orthonormal basis vectors;
  outcome ``b`` corresponds to row ``b``.
* Joint registers are ordered big-endian: factor 0 is the most significant
  qubit of the amplitude index.
* Unambiguous-discrimination outcomes are ``0``/``1`` when identified and
  ``INCONCLUSIVE`` (``None``; ``-1`` in batch arrays) otherwise.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from functools import cached_property
from typing import Sequence

import numpy as np

from .errors import ParameterError

TOL = 1e-12
PSD_TOL = 1e-10
MAX_JOINT_DIM = 16

INCONCLUSIVE = None
INCONCLUSIVE_CODE = -1

_SQRT_HALF = math.sqrt(0.5)


def _snap_probability(p):
    """Clamp probabilities to [0, 1], snapping values within TOL of the ends."""
    p = np.asarray(p, dtype=float)
    p = np.where(np.abs(p) < TOL, 0.0, p)
    p = np.where(np.abs(p - 1.0) < TOL, 1.0, p)
    return np.clip(p, 0.0, 1.0)


@dataclass(frozen=True, eq=False)
class PureState:
    """Normalized single-qubit state vector."""

    amplitudes: np.ndarray

    def __post_init__(self):
        amps = np.array(self.amplitudes, dtype=np.complex128).reshape(-1)
        if amps.shape != (2,):
            raise ParameterError(f"a qubit needs 2 amplitudes, got {amps.shape[0]}")
        norm2 = float(np.vdot(amps, amps).real)
        if abs(norm2 - 1.0) > TOL:
            raise ParameterError(f"state not normalized: |psi|^2 = {norm2!r}")
        amps.flags.writeable = False
        object.__setattr__(self, "amplitudes", amps)

    def inner(self, other: "PureState") -> complex:
        """<self|other>."""
        return complex(np.vdot(self.amplitudes, other.amplitudes))

    def orthogonal(self) -> "PureState":
        a, b = self.amplitudes
        return PureState([-np.conj(b), np.conj(a)])

    def projector(self) -> np.ndarray:
        return np.outer(self.amplitudes, self.amplitudes.conj())

    def density(self) -> "DensityOp":
        return DensityOp(self.projector())

    def basis(self) -> np.ndarray:
        """The orthonormal basis {|self>, |self^perp>} (outcome 0 = self)."""
        return np.stack([self.amplitudes, self.orthogonal().amplitudes])

    def __repr__(self):
        a, b = self.amplitudes
        return f"PureState({a:.6g}|0> + {b:.6g}|1>)"


ZERO = PureState([1.0, 0.0])
ONE = PureState([0.0, 1.0])
PLUS = PureState([_SQRT_HALF, _SQRT_HALF])
MINUS = PureState([_SQRT_HALF, -_SQRT_HALF])

# BB84_STATES[basis, bit]: basis 0 -> {|0>,|1>}, basis 1 -> {|+>,|->}
BB84_STATES = np.array(
    [[ZERO.amplitudes, ONE.amplitudes], [PLUS.amplitudes, MINUS.amplitudes]]
)

COMPUTATIONAL_BASIS = np.eye(2, dtype=np.complex128)
HADAMARD_BASIS = BB84_STATES[1].copy()
BB84_BASES = BB84_STATES.copy()  # BB84_BASES[basis] is the 2x2 basis matrix

_C8, _S8 = math.cos(math.pi / 8), math.sin(math.pi / 8)
BREIDBART_BASIS = np.array([[_C8, _S8], [-_S8, _C8]], dtype=np.complex128)
BREIDBART_SUCCESS = _C8**2


def check_basis(basis) -> np.ndarray:
    """Return ``basis`` as a complex array after checking orthonormality.

    Accepts a single 2x2 basis or a stack of shape ``(..., 2, 2)``.
    """
    b = np.asarray(basis, dtype=np.complex128)
    if b.shape[-2:] != (2, 2):
        raise ParameterError(f"basis must have shape (..., 2, 2), got {b.shape}")
    gram = b @ np.conj(np.swapaxes(b, -1, -2))
    if np.max(np.abs(gram - np.eye(2)), initial=0.0) > TOL:
        raise ParameterError("basis vectors are not orthonormal within 1e-12")
    return b


# --------------------------------------------------------------------------
# state pairs
# --------------------------------------------------------------------------


def pair_constraint_violation(cosA: float, delta: float) -> str | None:
    """Name the first violated overlap inequality, or None if the pair is admissible."""
    if not 0.0 < cosA < 1.0:
        return f"0 < cos A < 1 (got cos A = {cosA!r})"
    if not 0.0 < delta <= 0.25:
        return f"0 < delta <= 1/4 (got delta = {delta!r})"
    c2 = cosA * cosA
    if c2 < 0.5 + delta - TOL:
        return f"1/2 + delta <= cos^2 A (got cos^2 A = {c2!r}, delta = {delta!r})"
    if c2 > 1.0 - delta + TOL:
        return f"cos^2 A <= 1 - delta (got cos^2 A = {c2!r}, delta = {delta!r})"
    return None


def max_delta(cosA: float) -> float:
    """Largest delta for which ``cosA`` satisfies the overlap window (may be <= 0)."""
    c2 = cosA * cosA
    return min(0.25, c2 - 0.5, 1.0 - c2)


@dataclass(frozen=True, eq=False)
class StatePair:
    """Two nonorthogonal signal states with real overlap ``cosA``."""

    psi0: PureState
    psi1: PureState
    cosA: float
    delta: float

    def __post_init__(self):
        overlap = abs(self.psi0.inner(self.psi1))
        if abs(overlap - self.cosA) > TOL:
            raise ParameterError(f"|<psi0|psi1>| = {overlap!r} != cosA = {self.cosA!r}")
        why = pair_constraint_violation(self.cosA, self.delta)
        if why:
            raise ParameterError(f"state pair violates {why}")

    @property
    def sinA(self) -> float:
        return math.sqrt(1.0 - self.cosA**2)

    @property
    def angle(self) -> float:
        return math.acos(self.cosA)

    @cached_property
    def amplitudes(self) -> np.ndarray:
        """Row b holds the amplitudes of |Psi_b> (read-only)."""
        out = np.stack([self.psi0.amplitudes, self.psi1.amplitudes])
        out.flags.writeable = False
        return out

    def state(self, bit: int) -> PureState:
        return self.psi1 if bit else self.psi0

    def verification_bases(self) -> np.ndarray:
        """``out[x]`` is the basis {|Psi_x>, |Psi_x^perp>}."""
        return self._verification_bases.copy()

    @cached_property
    def _verification_bases(self) -> np.ndarray:
        return np.stack([self.psi0.basis(), self.psi1.basis()])

    def usd_povm(self) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
        """(E0, E1, E_inconclusive) of the optimal equal-prior unambiguous measurement."""
        scale = 1.0 / (1.0 + self.cosA)
        e0 = scale * self.psi1.orthogonal().projector()
        e1 = scale * self.psi0.orthogonal().projector()
        return e0, e1, np.eye(2) - e0 - e1


def make_state_pair(cosA: float, delta: float | None = None) -> StatePair:
    """Canonical pair |Psi_b> = cos(A/2)|0> +/- sin(A/2)|1> with <Psi_0|Psi_1> = cosA.

    When ``delta`` is omitted the largest admissible value is used.
    """
    cosA = float(cosA)
    if delta is None:
        if not 0.0 < cosA < 1.0:
            raise ParameterError(f"state pair violates 0 < cos A < 1 (got cos A = {cosA!r})")
        delta = max_delta(cosA)
        if delta <= 0.0:
            raise ParameterError(
                f"state pair violates 1/2 + delta <= cos^2 A <= 1 - delta for every "
                f"delta > 0 (got cos^2 A = {cosA * cosA!r})"
            )
    why = pair_constraint_violation(cosA, float(delta))
    if why:
        raise ParameterError(f"state pair violates {why}")
    half = math.acos(cosA) / 2.0
    c, s = math.cos(half), math.sin(half)
    return StatePair(PureState([c, s]), PureState([c, -s]), cosA, float(delta))


# --------------------------------------------------------------------------
# projective measurement
# --------------------------------------------------------------------------


def born_probability_zero(amps, bases) -> np.ndarray:
    """Probability of outcome 0 for each state in ``amps`` (shape (..., 2))."""
    amps = np.asarray(amps, dtype=np.complex128)
    bases = np.asarray(bases, dtype=np.complex128)
    c0 = np.sum(np.conj(bases[..., 0, :]) * amps, axis=-1)
    return _snap_probability(np.abs(c0) ** 2)


def measure_batch(amps, bases, rng: np.random.Generator) -> np.ndarray:
    """Measure every state in ``amps`` in the matching (broadcast) basis.

    Returns an int8 array of outcomes with the batch shape of ``amps``.
    """
    p0 = born_probability_zero(amps, bases)
    return (rng.random(p0.shape) >= p0).astype(np.int8)


def projective_measure(state: PureState, basis, rng: np.random.Generator):
    """Measure ``state`` in ``basis``; return ``(outcome, collapsed_state)``.

    Slots that belong to a joint register are measured with
    :func:`measure_factor` instead.
    """
    b = check_basis(basis)
    outcome = int(measure_batch(state.amplitudes, b, rng))
    return outcome, PureState(b[outcome])


def usd_probabilities(amps, pair: StatePair) -> tuple[np.ndarray, np.ndarray]:
    """Identification probabilities (p0, p1) for each state in ``amps``."""
    amps = np.asarray(amps, dtype=np.complex128)
    scale = 1.0 / (1.0 + pair.cosA)
    perp1 = pair.psi1.orthogonal().amplitudes
    perp0 = pair.psi0.orthogonal().amplitudes
    p0 = scale * np.abs(amps @ np.conj(perp1)) ** 2
    p1 = scale * np.abs(amps @ np.conj(perp0)) ** 2
    return _snap_probability(p0), _snap_probability(p1)


def usd_measure_batch(amps, pair: StatePair, rng: np.random.Generator) -> np.ndarray:
    """Unambiguous discrimination of each state; -1 marks an inconclusive result."""
    p0, p1 = usd_probabilities(amps, pair)
    u = rng.random(p0.shape)
    out = np.full(p0.shape, INCONCLUSIVE_CODE, dtype=np.int8)
    out[u < p0] = 0
    out[(u >= p0) & (u < p0 + p1)] = 1
    return out


def usd_measure(state: PureState, pair: StatePair, rng: np.random.Generator) -> int | None:
    """Identify ``state`` as |Psi_0> or |Psi_1> without error, or return INCONCLUSIVE.

    Succeeds with probability ``1 - pair.cosA`` on either signal state.
    """
    code = int(usd_measure_batch(state.amplitudes, pair, rng))
    return INCONCLUSIVE if code == INCONCLUSIVE_CODE else code


def breidbart_measure_batch(amps, rng: np.random.Generator) -> np.ndarray:
    return measure_batch(amps, BREIDBART_BASIS, rng)


def breidbart_measure(state: PureState, rng: np.random.Generator) -> int:
    """Measure in the basis halfway between the computational and Hadamard bases."""
    return int(breidbart_measure_batch(state.amplitudes, rng))


# --------------------------------------------------------------------------
# density operators
# --------------------------------------------------------------------------


@dataclass(frozen=True, eq=False)
class DensityOp:
    matrix: np.ndarray

    def __post_init__(self):
        mat = np.array(self.matrix, dtype=np.complex128)
        dim = mat.shape[0]
        if mat.shape != (dim, dim) or dim < 2 or dim > MAX_JOINT_DIM or dim & (dim - 1):
            raise ParameterError(f"density operator must be square with power-of-two dim, got {mat.shape}")
        if np.max(np.abs(mat - mat.conj().T)) > TOL:
            raise ParameterError("density operator is not Hermitian")
        tr = np.trace(mat).real
        if abs(tr - 1.0) > TOL:
            raise ParameterError(f"density operator trace {tr!r} != 1")
        if np.min(np.linalg.eigvalsh(mat)) < -PSD_TOL:
            raise ParameterError("density operator has a negative eigenvalue")
        mat.flags.writeable = False
        object.__setattr__(self, "matrix", mat)

    @property
    def dim(self) -> int:
        return self.matrix.shape[0]

    @classmethod
    def mixture(cls, weights: Sequence[float], ops: Sequence["DensityOp | np.ndarray"]) -> "DensityOp":
        total = sum(w * (o.matrix if isinstance(o, DensityOp) else np.asarray(o)) for w, o in zip(weights, ops))
        return cls(total)

    def allclose(self, other: "DensityOp", atol: float = TOL) -> bool:
        return self.dim == other.dim and bool(np.max(np.abs(self.matrix - other.matrix)) <= atol)


def trace_distance(rho: DensityOp, sigma: DensityOp) -> float:
    """(1/2) tr|rho - sigma| from the eigenvalues of the Hermitian difference."""
    if rho.dim != sigma.dim:
        raise ParameterError(f"dimension mismatch: {rho.dim} vs {sigma.dim}")
    eig = np.linalg.eigvalsh(rho.matrix - sigma.matrix)
    return 0.5 * float(np.sum(np.abs(eig)))


def is_povm(elements: Sequence[np.ndarray], atol: float = PSD_TOL) -> bool:
    """Elements positive semidefinite and summing to the identity."""
    dim = np.asarray(elements[0]).shape[0]
    for e in elements:
        e = np.asarray(e)
        if np.max(np.abs(e - e.conj().T)) > atol or np.min(np.linalg.eigvalsh(e)) < -atol:
            return False
    return bool(np.max(np.abs(sum(np.asarray(e) for e in elements) - np.eye(dim))) <= atol)


# --------------------------------------------------------------------------
# joint registers
# --------------------------------------------------------------------------


@dataclass(frozen=True, eq=False)
class JointState:
    """Pure state of a few qubits, each factor labelled (e.g. "probe", "signal")."""

    amplitudes: np.ndarray
    labels: tuple[str, ...]

    def __post_init__(self):
        amps = np.array(self.amplitudes, dtype=np.complex128).reshape(-1)
        labels = tuple(self.labels)
        if amps.size != 2 ** len(labels) or amps.size > MAX_JOINT_DIM or len(labels) < 1:
            raise ParameterError(
                f"{amps.size} amplitudes do not match {len(labels)} qubit labels (dim <= {MAX_JOINT_DIM})"
            )
        if len(set(labels)) != len(labels):
            raise ParameterError(f"duplicate factor labels {labels}")
        norm2 = float(np.vdot(amps, amps).real)
        if abs(norm2 - 1.0) > TOL:
            raise ParameterError(f"joint state not normalized: {norm2!r}")
        amps.flags.writeable = False
        object.__setattr__(self, "amplitudes", amps)
        object.__setattr__(self, "labels", labels)

    @property
    def dim(self) -> int:
        return self.amplitudes.size

    @property
    def n_qubits(self) -> int:
        return len(self.labels)

    def factor_index(self, factor: int | str) -> int:
        if isinstance(factor, str):
            if factor not in self.labels:
                raise ParameterError(f"unknown factor {factor!r}; have {self.labels}")
            return self.labels.index(factor)
        if not 0 <= factor < self.n_qubits:
            raise ParameterError(f"factor index {factor} out of range for {self.n_qubits} qubits")
        return int(factor)

    def density(self) -> DensityOp:
        return DensityOp(np.outer(self.amplitudes, self.amplitudes.conj()))


def product_state(states: Sequence[PureState], labels: Sequence[str]) -> JointState:
    amps = np.array([1.0 + 0j])
    for s in states:
        amps = np.kron(amps, s.amplitudes)
    return JointState(amps, tuple(labels))


def entangle_with_probe(
    state0: PureState,
    state1: PureState,
    probe0: PureState = ZERO,
    probe1: PureState = ONE,
) -> JointState:
    """Normalized |p0>|state0> + |p1>|state1> with factors ("probe", "signal")."""
    vec = np.kron(probe0.amplitudes, state0.amplitudes) + np.kron(probe1.amplitudes, state1.amplitudes)
    norm2 = 2.0 + 2.0 * (probe0.inner(probe1) * state0.inner(state1)).real
    return JointState(vec / math.sqrt(norm2), ("probe", "signal"))


def probe_entangle(pair: StatePair) -> JointState:
    """Entangle an orthogonal probe pair with the two signal states of ``pair``.

    Measuring the probe in the computational basis leaves the signal in
    |Psi_0> or |Psi_1> with probability 1/2 each.
    """
    return entangle_with_probe(pair.psi0, pair.psi1)


def _split_factor(amps: np.ndarray, n_qubits: int, factor: int) -> np.ndarray:
    """(N, 2**k) -> (N, 2, 2**(k-1)) with ``factor`` as the middle axis."""
    n = amps.shape[0]
    if factor == 0:
        return amps.reshape(n, 2, -1)
    t = amps.reshape((n,) + (2,) * n_qubits)
    t = np.moveaxis(t, 1 + factor, 1)
    return t.reshape(n, 2, -1)


def _merge_factor(t: np.ndarray, n_qubits: int, factor: int) -> np.ndarray:
    n = t.shape[0]
    if factor == 0:
        return t.reshape(n, -1)
    t = t.reshape((n,) + (2,) * n_qubits)
    t = np.moveaxis(t, 1, 1 + factor)
    return t.reshape(n, -1)


def measure_factor_batch(amps, n_qubits: int, factor: int, bases, rng: np.random.Generator):
    """Measure one qubit of each joint state in a stack.

    Parameters
    ----------
    amps : array, shape (N, 2**n_qubits)
    factor : index of the measured qubit
    bases : (2, 2) or (N, 2, 2)

    Returns
    -------
    outcomes : int8 array (N,)
    post : collapsed, renormalized amplitudes (N, 2**n_qubits)
    """
    amps = np.asarray(amps, dtype=np.complex128)
    bases = np.broadcast_to(np.asarray(bases, dtype=np.complex128), (amps.shape[0], 2, 2))
    t = _split_factor(amps, n_qubits, factor)
    # coeff[:, b, rest] = sum_s conj(bases[:, b, s]) t[:, s, rest]
    coeff = np.einsum("nbs,nsr->nbr", np.conj(bases), t)
    p0 = _snap_probability(np.sum(np.abs(coeff[:, 0, :]) ** 2, axis=1))
    outcomes = (rng.random(p0.shape) >= p0).astype(np.int8)
    idx = np.arange(amps.shape[0])
    kept = coeff[idx, outcomes, :]
    norms = np.sqrt(np.sum(np.abs(kept) ** 2, axis=1))
    kept = kept / norms[:, None]
    post = bases[idx, outcomes, :][:, :, None] * kept[:, None, :]
    return outcomes, _merge_factor(post, n_qubits, factor)


def measure_factor(joint: JointState, factor: int | str, basis, rng: np.random.Generator):
    """Projectively measure one factor of ``joint``; return ``(outcome, collapsed JointState)``."""
    f = joint.factor_index(factor)
    b = check_basis(basis)
    out, post = measure_factor_batch(joint.amplitudes[None, :], joint.n_qubits, f, b, rng)
    return int(out[0]), JointState(post[0], joint.labels)


def reduced_density_matrix(amps: np.ndarray, n_qubits: int, keep: int) -> np.ndarray:
    """Reduced 2x2 density matrix of factor ``keep`` for a stack (N, 2**k) of pure states."""
    t = _split_factor(np.atleast_2d(amps), n_qubits, keep)
    return np.einsum("nsr,ntr->nst", t, np.conj(t))


def partial_trace(state: JointState | DensityOp, keep: int | str) -> DensityOp:
    """Reduced density operator of the single factor ``keep``.

    A :class:`DensityOp` argument is treated as a register of
    log2(dim) qubits addressed by integer index.
    """
    if isinstance(state, JointState):
        k = state.factor_index(keep)
        return DensityOp(reduced_density_matrix(state.amplitudes[None, :], state.n_qubits, k)[0])
    if isinstance(state, DensityOp):
        nq = state.dim.bit_length() - 1
        if isinstance(keep, str) or not 0 <= keep < nq:
            raise ParameterError(f"factor {keep!r} invalid for a {nq}-qubit density operator")
        t = state.matrix.reshape((2,) * (2 * nq))
        t = np.moveaxis(t, (keep, nq + keep), (0, nq))
        t = t.reshape(2, 2 ** (nq - 1), 2, 2 ** (nq - 1))
        return DensityOp(np.einsum("arbr->ab", t))
    raise ParameterError(f"cannot take a partial trace of {type(state).__name__}")


def outcome_averaged_reduced(joint: JointState, measured: int | str, basis, keep: int | str) -> DensityOp:
    """Reduced state of ``keep`` after measuring ``measured``, averaged over outcomes.

    Exact (no sampling). Equals ``partial_trace(joint, keep)`` whenever the
    two factors differ, which is the no-signaling property.
    """
    m = joint.factor_index(measured)
    k = joint.factor_index(keep)
    b = check_basis(basis)
    t = _split_factor(joint.amplitudes[None, :], joint.n_qubits, m)
    coeff = np.einsum("bs,nsr->nbr", np.conj(b), t)[0]
    total = np.zeros((2, 2), dtype=np.complex128)
    for outcome in (0, 1):
        post = (b[outcome][:, None] * coeff[outcome][None, :])[None, :, :]
        amps = _merge_factor(post, joint.n_qubits, m)
        # unnormalized branch: its reduced state already carries weight p_outcome
        total += reduced_density_matrix(amps, joint.n_qubits, k)[0]
    return DensityOp(total)
