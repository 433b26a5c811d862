"""
Closed-form security quantities used as oracles for the Monte Carlo runs.

Binomial quantities are evaluated in log space so that n up to 10^4 is safe.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .errors import DomainError, ParameterError
from .qcore import StatePair, DensityOp, trace_distance

IDENTITY_CHECK_MAX_M = 1024


def _check_prob(name: str, p: float, open_low=True, open_high=True):
    lo_ok = p > 0 if open_low else p >= 0
    hi_ok = p < 1 if open_high else p <= 1
    if not (lo_ok and hi_ok):
        raise ParameterError(f"{name} out of range: {p!r}")


def clamp01(x: float) -> float:
    return min(1.0, max(0.0, x))


# --------------------------------------------------------------------------
# discrimination and binding
# --------------------------------------------------------------------------


def p_usd(cosA: float) -> float:
    """Optimal unambiguous identification probability 1 - cos A."""
    _check_prob("cosA", cosA)
    return 1.0 - cosA


def p_usd_bounds(delta: float) -> tuple[float, float]:
    """Range of 1 - cos A allowed by the overlap window for a given delta."""
    if not 0 < delta <= 0.25:
        raise ParameterError(f"delta must lie in (0, 1/4], got {delta!r}")
    return 1.0 - math.sqrt(1.0 - delta), 1.0 - math.sqrt(0.5 + delta)


@dataclass(frozen=True)
class BindingM:
    """Minimum string count m for a binding confidence 1 - e^-alpha.

    ``sin2`` takes the per-string escape probability to be sin^2 A;
    ``cos2`` uses the Born-rule value cos^2 A for one lying qubit under
    projective checking. The two disagree and both are reported.
    """

    sin2: int
    cos2: int


def _min_m(escape: float, alpha: float) -> int:
    """Smallest m >= 1 with escape**m < e**-alpha."""
    if not 0 < escape < 1:
        raise ParameterError(f"escape probability must be in (0, 1), got {escape!r}")
    log_e = math.log(escape)
    m = max(1, int(math.floor(alpha / -log_e)) + 1)
    while m > 1 and (m - 1) * log_e < -alpha:
        m -= 1
    while m * log_e >= -alpha:
        m += 1
    return m


def binding_min_m(alpha: float, cosA: float) -> BindingM:
    if alpha <= 0:
        raise ParameterError(f"alpha must be positive, got {alpha!r}")
    _check_prob("cosA", cosA)
    return BindingM(_min_m(1.0 - cosA**2, alpha), _min_m(cosA**2, alpha))


def binding_detection(m: int, cosA: float) -> tuple[float, float]:
    """Detection probability of a one-lie-per-string opening: (1 - sin^2m A, 1 - cos^2m A)."""
    s2 = 1.0 - cosA**2
    return 1.0 - s2**m, 1.0 - (cosA**2) ** m


def probe_failure_binomial_sum(m: int, cosA: float) -> float:
    """sum_k C(m,k) 2^-m [1 - (cos^2 A)^(m-k)]: failure of the probe-steering committer."""
    c2 = cosA * cosA
    return sum(math.comb(m, k) * 0.5**m * (1.0 - c2 ** (m - k)) for k in range(m + 1))


def eq12_failure(m: int, cosA: float) -> float:
    """Closed form 1 - ((1 + cos^2 A)/2)^m, checked against the binomial sum."""
    if m < 1:
        raise ParameterError(f"m must be >= 1, got {m}")
    closed = 1.0 - ((1.0 + cosA * cosA) / 2.0) ** m
    if m <= IDENTITY_CHECK_MAX_M:
        lhs = probe_failure_binomial_sum(m, cosA)
        if abs(lhs - closed) > 1e-12:
            raise AssertionError(f"binomial sum {lhs!r} != closed form {closed!r} at m={m}")
    return closed


# --------------------------------------------------------------------------
# concealing
# --------------------------------------------------------------------------


def _log_binom_pmf(n: int, k: np.ndarray, p: float) -> np.ndarray:
    k = np.asarray(k, dtype=float)
    return (
        math.lgamma(n + 1)
        - np.vectorize(math.lgamma)(k + 1)
        - np.vectorize(math.lgamma)(n - k + 1)
        + k * math.log(p)
        + (n - k) * math.log1p(-p)
    )


def _logsumexp(x: np.ndarray) -> float:
    if x.size == 0:
        return -math.inf
    mx = float(np.max(x))
    return mx + math.log(float(np.sum(np.exp(x - mx))))


def _check_concealing(n: int, n0: int, pA: float):
    if not 0 <= n0 < n:
        raise ParameterError(f"need 0 <= n0 < n, got n={n}, n0={n0}")
    _check_prob("pA", pA)


def concealing_tail(n: int, n0: int, pA: float) -> float:
    """P[Binomial(n, pA) > n0]: probability one string leaks more than n0 components."""
    _check_concealing(n, n0, pA)
    return math.exp(_logsumexp(_log_binom_pmf(n, np.arange(n0 + 1, n + 1), pA)))


def concealing_exact(n: int, n0: int, pA: float) -> float:
    """P[Binomial(n, pA) <= n0]: a string keeps at least n - n0 components hidden."""
    _check_concealing(n, n0, pA)
    lower = math.exp(_logsumexp(_log_binom_pmf(n, np.arange(0, n0 + 1), pA)))
    if lower > 0.5:
        return clamp01(1.0 - concealing_tail(n, n0, pA))
    return clamp01(lower)


@dataclass(frozen=True)
class ConcealingParams:
    n: int
    n0: int
    pA: float
    lam: float
    lam1: float
    lam2: float


def dml_params(n: int, n0: int, pA: float) -> ConcealingParams:
    _check_concealing(n, n0, pA)
    lam = n0 / (n * pA)
    lam1 = math.sqrt(pA / (1.0 - pA))
    return ConcealingParams(n, n0, pA, lam, lam1, (lam - 1.0) * lam1)


def concealing_dml(n: int, n0: int, pA: float) -> float:
    """Normal (De Moivre-Laplace) approximation (1/2)[erf(l1 sqrt(n/2)) + erf(l2 sqrt(n/2))]."""
    p = dml_params(n, n0, pA)
    r = math.sqrt(n / 2.0)
    return clamp01(0.5 * (math.erf(p.lam1 * r) + math.erf(p.lam2 * r)))


@dataclass(frozen=True)
class AsymptoticReadings:
    """The large-argument erf expansion under two readings.

    ``as_printed`` is the bare two-term sum; ``complement`` is one minus it,
    which is what the expansion erf(x) ~ 1 - e^-x^2/(x sqrt(pi)) produces.
    """

    as_printed: float
    complement: float

    def closer_to(self, exact: float) -> str:
        return "complement" if abs(self.complement - exact) <= abs(self.as_printed - exact) else "as_printed"


def concealing_asymptotic(n: int, n0: int, pA: float) -> AsymptoticReadings:
    p = dml_params(n, n0, pA)
    if p.lam2 <= 0:
        raise DomainError(f"asymptotic form needs lambda2 > 0 (n0 > n pA), got {p.lam2!r}")
    term = (
        math.exp(-0.5 * p.lam1**2 * n) / p.lam1 + math.exp(-0.5 * p.lam2**2 * n) / p.lam2
    ) / math.sqrt(2 * math.pi * n)
    return AsymptoticReadings(term, 1.0 - term)


def bob_cheat_prob(n: int, n0: int, pA: float, m: int) -> float:
    """1 - (P[Bin(n, pA) <= n0])^m: some string leaks more than n0 components."""
    if m < 1:
        raise ParameterError(f"m must be >= 1, got {m}")
    tail = concealing_tail(n, n0, pA)
    if tail >= 1.0:
        return 1.0
    return clamp01(-math.expm1(m * math.log1p(-tail)))


def _tail_top(n: int, gap: int, pA: float) -> float:
    # P[X >= n - gap + 1]: only `gap` terms
    k = np.arange(max(0, n - gap + 1), n + 1)
    return math.exp(_logsumexp(_log_binom_pmf(n, k, pA)))


def concealing_threshold_met(n: int, beta: float, m: int, pA: float, gap: int) -> bool:
    """p_A^(n0) > (1 - e^-beta)^(1/m) with n0 = n - gap."""
    tail = _tail_top(n, gap, pA)
    if tail >= 1.0:
        return False
    return m * math.log1p(-tail) > math.log1p(-math.exp(-beta))


def min_n_for_beta(beta: float, m: int, pA: float, gap: int, n_max: int = 200_000) -> int:
    """Smallest n (with n0 = n - gap) whose concealing failure is below e^-beta."""
    if beta <= 0 or m < 1 or gap < 1:
        raise ParameterError(f"need beta > 0, m >= 1, gap >= 1 (got {beta}, {m}, {gap})")
    _check_prob("pA", pA)
    for n in range(gap, n_max + 1):
        if concealing_threshold_met(n, beta, m, pA, gap):
            return n
    raise DomainError(f"threshold unattainable for n <= {n_max} at pA={pA}, gap={gap}")


# --------------------------------------------------------------------------
# exact attack predictions
# --------------------------------------------------------------------------


def binomial_majority(n: int, q: float) -> float:
    """P[Bin(n, q) > n/2] + (1/2) P[Bin(n, q) = n/2] (ties broken by a fair coin)."""
    total = 0.0
    for k in range(n + 1):
        pk = math.comb(n, k) * q**k * (1.0 - q) ** (n - k)
        if 2 * k > n:
            total += pk
        elif 2 * k == n:
            total += 0.5 * pk
    return total


def usd_guess_linear(weight: int, pA: float, m: int) -> float:
    """Bayes-optimal guess success against a two-state blob keyed by a parity of ``weight`` variables.

    Bob learns b only if some string has every masked position identified.
    """
    return 1.0 - 0.5 * (1.0 - pA**weight) ** m


def usd_guess_bound(n: int, n0: int, pA: float, m: int) -> float:
    """Upper bound 1/2 + P_A/2 on any guess when F has CI order n0."""
    return 0.5 + 0.5 * bob_cheat_prob(n, n0, pA, m)


def component_guess_linear(weight: int, q: float, m: int) -> float:
    """Guess success when each component is read correctly with prob ``q`` and F is a parity."""
    per_string = 0.5 * (1.0 + (2.0 * q - 1.0) ** weight)
    return binomial_majority(m, per_string)


# --------------------------------------------------------------------------
# trace distance of neighbouring blobs
# --------------------------------------------------------------------------


@dataclass(frozen=True)
class TraceDistanceResult:
    analytic: float
    numeric: float


def _averaged_state(pair: StatePair, a: np.ndarray) -> DensityOp:
    ones = int(a.sum())
    total = a.size
    p0, p1 = pair.psi0.projector(), pair.psi1.projector()
    return DensityOp(((total - ones) * p0 + ones * p1) / total)


def blob_trace_distance(pair: StatePair, a, a_prime) -> TraceDistanceResult:
    """Distance between per-qubit-averaged blob states whose keys differ in one position per string.

    ``analytic`` is sin(A) |sum of flip directions| / (m n), which is
    sin(A)/n when every flip goes the same way; ``numeric`` diagonalizes the
    averaged operators directly.
    """
    a = np.asarray(a, dtype=np.int64)
    a_prime = np.asarray(a_prime, dtype=np.int64)
    if a.ndim != 2 or a.shape != a_prime.shape:
        raise ParameterError("keys must be equal-shape (m, n) bit arrays")
    diff = a ^ a_prime
    if np.any(diff.sum(axis=1) != 1):
        raise ParameterError("each string must differ in exactly one position")
    m, n = a.shape
    direction = int(np.sum(a_prime[diff == 1] - a[diff == 1]))
    analytic = pair.sinA * abs(direction) / (m * n)
    numeric = trace_distance(_averaged_state(pair, a), _averaged_state(pair, a_prime))
    return TraceDistanceResult(analytic, numeric)


def one_flip_pattern(m: int, n: int, rng: np.random.Generator | None = None):
    """(a, a') with a = 0 and a' flipping one position per string to 1."""
    a = np.zeros((m, n), dtype=np.int64)
    a_prime = a.copy()
    cols = rng.integers(0, n, size=m) if rng is not None else np.zeros(m, dtype=np.int64)
    a_prime[np.arange(m), cols] = 1
    return a, a_prime


def trace_distance_closed_form(cosA: float, n: int) -> float:
    """sin(A)/n."""
    return math.sqrt(1.0 - cosA * cosA) / n


def trace_distance_bloch(cosA: float, n: int) -> float:
    """Bloch-vector route: |(0,0,1) - (sin 2A, 0, cos 2A)| / (2n)."""
    A = math.acos(cosA)
    v = np.array([0.0, 0.0, 1.0]) - np.array([math.sin(2 * A), 0.0, math.cos(2 * A)])
    return float(np.linalg.norm(v)) / (2 * n)
