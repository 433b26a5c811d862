"""
Quantum encryption functions: classical bits plus random keys -> blobs of qubits.

A :class:`Blob` is an ``m x n`` grid of qubit slots. Honest encoders fill it
with independent pure states; attack code may instead link some slots to
rows of a :class:`RegisterBank`, a stack of two-qubit (probe, signal)
registers whose probe halves stay with the committer.
"""

from __future__ import annotations

import hashlib
from dataclasses import dataclass, field

import numpy as np

from . import qcore
from .boolfn import BoolFn, sample_preimages
from .errors import ParameterError
from .qcore import BB84_STATES, DensityOp, StatePair

PROBE, SIGNAL = 0, 1


class RegisterBank:
    """Mutable stack of (probe, signal) two-qubit registers shared by both parties.

    The committer measures factor ``PROBE``; the receiver only ever touches
    factor ``SIGNAL`` through the :class:`Blob` that links to it.
    """

    labels = ("probe", "signal")

    def __init__(self, amplitudes):
        amps = np.array(amplitudes, dtype=np.complex128).reshape(-1, 4)
        norms = np.sum(np.abs(amps) ** 2, axis=1)
        if np.max(np.abs(norms - 1.0), initial=0.0) > qcore.TOL:
            raise ParameterError("register rows must be normalized")
        self.amplitudes = amps

    @classmethod
    def from_states(cls, joints) -> "RegisterBank":
        return cls(np.stack([j.amplitudes for j in joints]))

    def __len__(self):
        return self.amplitudes.shape[0]

    def joint(self, row: int) -> qcore.JointState:
        return qcore.JointState(self.amplitudes[row], self.labels)

    def measure(self, rows, factor: int, bases, rng: np.random.Generator) -> np.ndarray:
        """Measure ``factor`` of the given rows, collapsing them in place."""
        rows = np.asarray(rows, dtype=np.int64)
        out, post = qcore.measure_factor_batch(self.amplitudes[rows], 2, factor, bases, rng)
        self.amplitudes[rows] = post
        return out

    def reduced(self, row: int, keep: int) -> DensityOp:
        return DensityOp(qcore.reduced_density_matrix(self.amplitudes[row], 2, keep)[0])


@dataclass
class Blob:
    """An ``m x n`` commitment payload.

    ``states[i, j]`` holds the amplitudes of pure slot ``(i, j)``. When
    ``link[i, j] >= 0`` the slot is instead the signal half of register row
    ``link[i, j]`` in ``registers``.
    """

    states: np.ndarray
    encoder: str
    registers: RegisterBank | None = None
    link: np.ndarray | None = None
    consumed: bool = field(default=False, compare=False)

    def __post_init__(self):
        self.states = np.asarray(self.states, dtype=np.complex128)
        if self.states.ndim != 3 or self.states.shape[2] != 2:
            raise ParameterError(f"blob states must have shape (m, n, 2), got {self.states.shape}")
        if self.link is None:
            self.link = np.full(self.states.shape[:2], -1, dtype=np.int64)

    @property
    def m(self) -> int:
        return self.states.shape[0]

    @property
    def n(self) -> int:
        return self.states.shape[1]

    @property
    def size(self) -> int:
        return self.m * self.n

    def meta(self) -> dict:
        """Receiver-visible description; never includes keys or amplitudes."""
        return {"encoder": self.encoder, "m": self.m, "n": self.n}

    def _take(self):
        if self.consumed:
            raise ParameterError("blob already measured; qubits cannot be read twice")
        self.consumed = True

    def measure(self, bases, rng: np.random.Generator) -> np.ndarray:
        """Projectively measure every slot; ``bases`` broadcasts to (m, n, 2, 2)."""
        self._take()
        bases = np.broadcast_to(np.asarray(bases, dtype=np.complex128), (self.m, self.n, 2, 2))
        out = np.empty((self.m, self.n), dtype=np.int8)
        pure = self.link < 0
        out[pure] = qcore.measure_batch(self.states[pure], bases[pure], rng)
        if not pure.all():
            out[~pure] = self.registers.measure(self.link[~pure], SIGNAL, bases[~pure], rng)
        return out

    def measure_usd(self, pair: StatePair, rng: np.random.Generator) -> np.ndarray:
        """Unambiguous discrimination of every slot; -1 marks inconclusive."""
        if np.any(self.link >= 0):
            raise ParameterError("unambiguous discrimination is only defined on pure slots")
        self._take()
        return qcore.usd_measure_batch(self.states, pair, rng)

    def slot_density(self, i: int, j: int) -> DensityOp:
        """Reduced state the receiver holds in slot (i, j)."""
        row = self.link[i, j]
        if row >= 0:
            return self.registers.reduced(row, SIGNAL)
        return qcore.PureState(self.states[i, j]).density()

    def amplitudes_payload(self) -> list:
        """Debug-only amplitude dump ([re, im] pairs); pure slots only."""
        if np.any(self.link >= 0):
            raise ParameterError("entangled slots have no standalone amplitudes")
        return np.stack([self.states.real, self.states.imag], axis=-1).tolist()

    @classmethod
    def from_amplitudes_payload(cls, payload, encoder: str) -> "Blob":
        arr = np.asarray(payload, dtype=float)
        return cls(arr[..., 0] + 1j * arr[..., 1], encoder)


@dataclass(frozen=True)
class CommitKey:
    """Committer's secret: the data strings a^(i) and, for four-state blobs, the bases."""

    a_strings: np.ndarray
    basis_strings: np.ndarray | None = None

    def to_payload(self) -> dict:
        out = {"a": np.asarray(self.a_strings).astype(int).tolist()}
        if self.basis_strings is not None:
            out["bases"] = np.asarray(self.basis_strings).astype(int).tolist()
        return out

    def digest(self) -> str:
        h = hashlib.sha256(np.asarray(self.a_strings, dtype=np.uint8).tobytes())
        if self.basis_strings is not None:
            h.update(np.asarray(self.basis_strings, dtype=np.uint8).tobytes())
        return h.hexdigest()[:16]


def _bits(x, name: str) -> np.ndarray:
    arr = np.asarray(x)
    if arr.size and (not np.issubdtype(arr.dtype, np.integer) and arr.dtype != bool):
        raise ParameterError(f"{name} must contain integers 0/1")
    arr = arr.astype(np.int64)
    if np.any((arr != 0) & (arr != 1)):
        raise ParameterError(f"{name} must contain only 0/1")
    return arr.astype(np.uint8)


def two_state_slots(bits, pair: StatePair) -> np.ndarray:
    """Amplitudes of |Psi_bit> for every entry of ``bits``."""
    return pair.amplitudes[_bits(bits, "bits")]


def four_state_slots(bits, bases) -> np.ndarray:
    """Amplitudes of |Psi^(basis)_bit> from the {|0>,|1>,|+>,|->} alphabet."""
    return BB84_STATES[_bits(bases, "bases"), _bits(bits, "bits")]


def encode_simple(a, pair: StatePair) -> Blob:
    """One-way map a -> |Psi_a1>, ..., |Psi_ak> (a 1 x k blob)."""
    a = _bits(a, "a").reshape(1, -1)
    return Blob(two_state_slots(a, pair), "simple")


def encode_basis_committed(a, n: int, rng: np.random.Generator | None = None, payloads=None):
    """Block i encodes a random n-bit payload in the basis chosen by bit a_i.

    Returns ``(blob, payloads)``; ``payloads`` (k x n) is what the committer
    reveals at opening, alongside ``a``.
    """
    a = _bits(a, "a").reshape(-1)
    if payloads is None:
        payloads = rng.integers(0, 2, size=(a.size, n), dtype=np.uint8)
    payloads = _bits(payloads, "payloads")
    if payloads.shape != (a.size, n):
        raise ParameterError(f"payloads must have shape {(a.size, n)}")
    bases = np.broadcast_to(a[:, None], payloads.shape)
    return Blob(four_state_slots(payloads, bases), "basis-committed"), payloads


def encode_keyed(a, n: int, rng: np.random.Generator | None = None, keys=None):
    """Data bit a_i repeated n times under random bases: slot (i, j) = |Psi^(key_ij)_(a_i)>.

    Returns ``(blob, keys)``.
    """
    a = _bits(a, "a").reshape(-1)
    if keys is None:
        keys = rng.integers(0, 2, size=(a.size, n), dtype=np.uint8)
    keys = _bits(keys, "keys")
    if keys.shape != (a.size, n):
        raise ParameterError(f"keys must have shape {(a.size, n)}")
    data = np.broadcast_to(a[:, None], keys.shape)
    return Blob(four_state_slots(data, keys), "keyed"), keys


def _check_key(key: CommitKey, F: BoolFn, b: int, m: int) -> None:
    a = key.a_strings
    if a.shape != (m, F.n):
        raise ParameterError(f"key strings must have shape {(m, F.n)}, got {a.shape}")
    if np.any(F.evaluate(a) != b):
        raise ParameterError(f"every key string must satisfy F(a) = {b}")


def blob2_encode(b: int, F: BoolFn, m: int, pair: StatePair, rng=None, key: CommitKey | None = None):
    """Two-state blob: m strings a^(i) drawn from F^-1(b), slot (i, j) = |Psi_{a_j^(i)}>."""
    if m < 1:
        raise ParameterError(f"need m >= 1 strings, got {m}")
    if key is None:
        key = CommitKey(sample_preimages(F, b, m, rng))
    else:
        key = CommitKey(_bits(key.a_strings, "a"))
        _check_key(key, F, b, m)
    return Blob(two_state_slots(key.a_strings, pair), "blob2"), key


def blob4_encode(b: int, F: BoolFn, m: int, rng=None, key: CommitKey | None = None):
    """Four-state blob: a^(i) from F^-1(b), independent uniform bases, slot (i, j) = |Psi^(base)_bit>."""
    if m < 1:
        raise ParameterError(f"need m >= 1 strings, got {m}")
    if key is None:
        a = sample_preimages(F, b, m, rng)
        key = CommitKey(a, rng.integers(0, 2, size=a.shape, dtype=np.uint8))
    else:
        if key.basis_strings is None:
            raise ParameterError("four-state key needs basis strings")
        key = CommitKey(_bits(key.a_strings, "a"), _bits(key.basis_strings, "bases"))
        _check_key(key, F, b, m)
        if key.basis_strings.shape != key.a_strings.shape:
            raise ParameterError("basis strings must match the data strings' shape")
    return Blob(four_state_slots(key.a_strings, key.basis_strings), "blob4"), key


def encode_from_key(encoder: str, key: CommitKey, pair: StatePair | None = None) -> Blob:
    """Rebuild a blob from its key alone (slot states depend only on key bits)."""
    if encoder in ("blob2", "simple", "ot"):
        return Blob(two_state_slots(key.a_strings, pair), encoder)
    if encoder == "blob4":
        return Blob(four_state_slots(key.a_strings, key.basis_strings), encoder)
    raise ParameterError(f"cannot rebuild encoder {encoder!r} from a key")


def strong_concat(bits, mode: str, F: BoolFn, m: int, rng, pair: StatePair | None = None):
    """Concatenate independent per-bit blobs; returns a list of (Blob, CommitKey)."""
    out = []
    for b in _bits(bits, "bits").reshape(-1):
        if mode == "two-state":
            if pair is None:
                raise ParameterError("two-state mode needs a state pair")
            out.append(blob2_encode(int(b), F, m, pair, rng))
        elif mode == "four-state":
            out.append(blob4_encode(int(b), F, m, rng))
        else:
            raise ParameterError(f"unknown mode {mode!r}")
    return out


# --------------------------------------------------------------------------
# honest verification with the true key
# --------------------------------------------------------------------------


def verify_two_state(blob: Blob, a, pair: StatePair, rng) -> np.ndarray:
    """Measure slot (i, j) in {|Psi_a>, |Psi_a^perp>}; True where the slot passed."""
    a = _bits(a, "a").reshape(blob.m, blob.n)
    return blob.measure(pair.verification_bases()[a], rng) == 0


def verify_four_state(blob: Blob, bits, bases, rng) -> np.ndarray:
    """Measure slot (i, j) in basis ``bases[i, j]``; True where the outcome equals ``bits[i, j]``."""
    bits = _bits(bits, "bits").reshape(blob.m, blob.n)
    bases = _bits(bases, "bases").reshape(blob.m, blob.n)
    return blob.measure(qcore.BB84_BASES[bases], rng) == bits


def verify_simple(blob: Blob, a, pair: StatePair, rng) -> bool:
    return bool(verify_two_state(blob, a, pair, rng).all())


def verify_basis_committed(blob: Blob, a, payloads, rng) -> np.ndarray:
    """Per-slot pass flags for opening a basis-committed blob as ``a`` with ``payloads``."""
    a = _bits(a, "a").reshape(-1)
    payloads = _bits(payloads, "payloads").reshape(blob.m, blob.n)
    return verify_four_state(blob, payloads, np.broadcast_to(a[:, None], payloads.shape), rng)


def verify_keyed(blob: Blob, a, keys, rng) -> np.ndarray:
    a = _bits(a, "a").reshape(-1)
    keys = _bits(keys, "keys").reshape(blob.m, blob.n)
    return verify_four_state(blob, np.broadcast_to(a[:, None], keys.shape), keys, rng)
