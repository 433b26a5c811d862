"""
Correlation-immune Boolean functions.

A :class:`BoolFn` is stored as a truth table indexed by the input vector
``a = (a_1, ..., a_n)`` read as a big-endian integer, i.e. ``a_1`` is the
most significant bit of the index. Hex import/export writes the table in
index order as one big-endian binary number: parity on three variables is
``"69"``.
"""

from __future__ import annotations

import itertools
import math
from functools import cached_property

import numpy as np

from .errors import DomainError, ParameterError

MAX_ARITY = 20
SEARCH_MAX_ARITY = 4


def popcount(x) -> np.ndarray:
    """Vectorized population count for non-negative integers below 2**32."""
    x = np.asarray(x, dtype=np.uint32)
    x = x - ((x >> 1) & 0x55555555)
    x = (x & 0x33333333) + ((x >> 2) & 0x33333333)
    x = (x + (x >> 4)) & 0x0F0F0F0F
    return ((x * 0x01010101) & 0xFFFFFFFF) >> 24


def bits_to_index(bits) -> np.ndarray:
    """Convert bit vectors (..., n), first bit most significant, to integer indices."""
    bits = np.asarray(bits, dtype=np.int64)
    n = bits.shape[-1]
    weights = 1 << np.arange(n - 1, -1, -1, dtype=np.int64)
    return bits @ weights


def index_to_bits(index, n: int) -> np.ndarray:
    index = np.asarray(index, dtype=np.int64)
    shifts = np.arange(n - 1, -1, -1, dtype=np.int64)
    return ((index[..., None] >> shifts) & 1).astype(np.uint8)


def mask_from_positions(positions, n: int) -> int:
    """Index-space mask for the 0-based variable positions (variable 0 is the MSB)."""
    return sum(1 << (n - 1 - p) for p in positions)


def fwht(signs: np.ndarray) -> np.ndarray:
    """Fast Walsh-Hadamard transform along the last axis (length a power of two)."""
    w = np.array(signs, dtype=np.int64)
    size = w.shape[-1]
    h = 1
    while h < size:
        w = w.reshape(w.shape[:-1] + (size // (2 * h), 2, h))
        a = w[..., 0, :].copy()
        b = w[..., 1, :]
        w[..., 0, :] = a + b
        w[..., 1, :] = a - b
        w = w.reshape(w.shape[:-3] + (size,))
        h *= 2
    return w


class BoolFn:
    """Boolean function on ``n`` variables given by its truth table."""

    def __init__(self, n: int, table):
        if not 2 <= n <= MAX_ARITY:
            raise ParameterError(f"arity must be in [2, {MAX_ARITY}], got {n}")
        tab = np.asarray(table, dtype=np.uint8).reshape(-1)
        if tab.size != 1 << n:
            raise ParameterError(f"truth table needs {1 << n} entries, got {tab.size}")
        if np.any(tab > 1):
            raise ParameterError("truth table entries must be 0 or 1")
        tab = tab.copy()
        tab.flags.writeable = False
        self.n = n
        self.table = tab

    @classmethod
    def from_callable(cls, n: int, func) -> "BoolFn":
        return cls(n, [func(bits) & 1 for bits in itertools.product((0, 1), repeat=n)])

    @classmethod
    def linear(cls, n: int, positions, constant: int = 0) -> "BoolFn":
        """Affine function ``constant XOR sum of a_p`` over 0-based ``positions``."""
        mask = mask_from_positions(positions, n)
        idx = np.arange(1 << n)
        return cls(n, (popcount(idx & mask) & 1) ^ (constant & 1))

    @classmethod
    def parity(cls, n: int, constant: int = 0) -> "BoolFn":
        return cls.linear(n, range(n), constant)

    @classmethod
    def constant(cls, n: int, value: int) -> "BoolFn":
        return cls(n, np.full(1 << n, value & 1))

    @classmethod
    def from_hex(cls, hexstr: str, n: int | None = None) -> "BoolFn":
        s = hexstr.strip().lower()
        if s.startswith("0x"):
            s = s[2:]
        if not s or any(c not in "0123456789abcdef" for c in s):
            raise ParameterError(f"not a hex truth table: {hexstr!r}")
        if n is None:
            bits = 4 * len(s)
            n = bits.bit_length() - 1
            if 1 << n != bits:
                raise ParameterError(f"{len(s)} hex digits is not a 2^n-bit table; pass n explicitly")
        size = 1 << n
        value = int(s, 16)
        if value >> size:
            raise ParameterError(f"hex value has more than {size} bits")
        table = [(value >> (size - 1 - i)) & 1 for i in range(size)]
        return cls(n, table)

    def to_hex(self) -> str:
        value = 0
        for bit in self.table:
            value = (value << 1) | int(bit)
        digits = max(1, math.ceil((1 << self.n) / 4))
        return f"{value:0{digits}x}"

    def __call__(self, a) -> int:
        return int(self.table[int(bits_to_index(a))])

    def evaluate(self, bits) -> np.ndarray:
        """Evaluate on a stack of bit vectors with shape (..., n)."""
        return self.table[bits_to_index(bits)]

    def __eq__(self, other):
        return isinstance(other, BoolFn) and self.n == other.n and np.array_equal(self.table, other.table)

    def __hash__(self):
        return hash((self.n, self.table.tobytes()))

    def __repr__(self):
        if self.n <= 6:
            return f"BoolFn(n={self.n}, hex={self.to_hex()})"
        return f"BoolFn(n={self.n}, weight={self.weight})"

    def __xor__(self, other) -> "BoolFn":
        if isinstance(other, int):
            return BoolFn(self.n, self.table ^ (other & 1))
        if isinstance(other, BoolFn) and other.n == self.n:
            return BoolFn(self.n, self.table ^ other.table)
        return NotImplemented

    def permute(self, perm) -> "BoolFn":
        """Return G with G(a) = F(b) where b[perm[i]] = a[i]."""
        bits = index_to_bits(np.arange(1 << self.n), self.n)
        moved = np.empty_like(bits)
        moved[:, list(perm)] = bits
        return BoolFn(self.n, self.table[bits_to_index(moved)])

    @property
    def weight(self) -> int:
        return int(self.table.sum())

    @cached_property
    def spectrum(self) -> np.ndarray:
        return walsh_transform(self)

    def preimage(self, b: int) -> np.ndarray:
        """Sorted indices of all inputs mapped to ``b`` (cached)."""
        cache = self.__dict__.setdefault("_preimages", {})
        if b not in cache:
            idx = np.flatnonzero(self.table == (b & 1))
            idx.flags.writeable = False
            cache[b] = idx
        return cache[b]


def walsh_transform(F: BoolFn) -> np.ndarray:
    """W(u) = sum_a (-1)^(F(a) XOR <u,a>), indexed like the truth table."""
    return fwht(1 - 2 * F.table.astype(np.int64))


def mask_weights(n: int) -> np.ndarray:
    return popcount(np.arange(1 << n)).astype(np.int64)


def ci_order(F: BoolFn) -> int:
    """Correlation-immunity order via the Walsh characterization.

    Largest n0 such that W(u) = 0 for every mask u with 1 <= wt(u) <= n0.
    Constant functions get order n.
    """
    w = F.spectrum
    weights = mask_weights(F.n)
    nonzero = weights[(w != 0) & (weights > 0)]
    if nonzero.size == 0:
        return F.n
    return int(nonzero.min()) - 1


def is_balanced(F: BoolFn) -> bool:
    return 2 * F.weight == 1 << F.n


def is_affine(F: BoolFn) -> bool:
    return int(np.count_nonzero(F.spectrum)) == 1


def sample_preimages(F: BoolFn, b: int, size: int, rng: np.random.Generator) -> np.ndarray:
    """``size`` independent uniform draws from F^-1(b), as bit vectors (size, n)."""
    pre = F.preimage(b)
    if pre.size == 0:
        raise DomainError(f"F never takes the value {b}")
    return index_to_bits(pre[rng.integers(0, pre.size, size=size)], F.n)


def sample_preimage(F: BoolFn, b: int, rng: np.random.Generator) -> np.ndarray:
    """One uniform draw from F^-1(b)."""
    return sample_preimages(F, b, 1, rng)[0]


def make_ci_function(n: int, n0: int, kind: str = "linear-mask") -> BoolFn:
    """Build a function with certified correlation-immunity order.

    ``linear-mask``
        ``a_1 XOR ... XOR a_{n0+1}``; order exactly ``n0``.
    ``recursive``
        Direct sum of a quadratic part ``a_1 a_2 XOR a_3 a_4 XOR ...`` and a
        linear tail of ``n0 + 1`` (or ``n0 + 2``) variables. Balanced and
        nonlinear with order >= ``n0``. Balanced nonlinear functions of order
        ``n - 2`` do not exist, so this needs ``n0 <= n - 3``.
    """
    if not 0 <= n0 <= n - 1:
        raise ParameterError(f"need 0 <= n0 <= n - 1, got n={n}, n0={n0}")
    if kind == "linear-mask":
        F = BoolFn.linear(n, range(n0 + 1))
    elif kind == "recursive":
        if n0 > n - 3:
            raise ParameterError(
                f"no balanced nonlinear function with n={n} has CI order {n0} (need n0 <= n - 3)"
            )
        tail = n0 + 1
        if (n - tail) % 2:
            tail += 1
        quad = n - tail

        def f(bits):
            v = 0
            for i in range(0, quad, 2):
                v ^= bits[i] & bits[i + 1]
            for i in range(quad, n):
                v ^= bits[i]
            return v

        F = BoolFn.from_callable(n, f)
    else:
        raise ParameterError(f"unknown construction kind {kind!r}")
    order = ci_order(F)
    if order < n0 or (kind == "linear-mask" and order != n0):
        raise AssertionError(f"construction produced CI order {order}, wanted {n0}")
    return F


def all_tables(n: int) -> np.ndarray:
    """Every truth table on ``n`` variables, shape (2**(2**n), 2**n)."""
    size = 1 << n
    codes = np.arange(1 << size, dtype=np.int64)
    return ((codes[:, None] >> np.arange(size - 1, -1, -1)) & 1).astype(np.uint8)


def search_ci(n: int, n0: int, balanced: bool) -> list[BoolFn]:
    """Exhaustive list of functions on n <= 4 variables with CI order >= n0."""
    if not 2 <= n <= SEARCH_MAX_ARITY:
        raise ParameterError(f"exhaustive search supports 2 <= n <= {SEARCH_MAX_ARITY}, got {n}")
    tables = all_tables(n)
    spectra = fwht(1 - 2 * tables.astype(np.int64))
    weights = mask_weights(n)
    low = (weights >= 1) & (weights <= n0)
    ok = ~np.any(spectra[:, low] != 0, axis=1)
    bal = tables.sum(axis=1) * 2 == 1 << n
    ok &= bal if balanced else ~bal
    return [BoolFn(n, t) for t in tables[ok]]
