"""
Attack strategies against the commitment schemes.

Each attack has a single-shot form operating on real blobs and sessions, and
a per-trial form ``trial_*(rng, **params) -> (successes, units)`` that the
Monte Carlo runner repeats with counter-derived seeds. ``STRATEGIES`` maps a
strategy id to its trial function and analytic prediction.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from fractions import Fraction
from functools import lru_cache

import numpy as np

from . import analysis, encode, qcore
from .boolfn import BoolFn, bits_to_index, index_to_bits, is_affine, make_ci_function, popcount
from .encode import PROBE, SIGNAL, Blob, RegisterBank
from .errors import ParameterError
from .montecarlo import TrialStats, run_trials
from .protocol import SessionConfig, b92_verify, bb84_verify, run_session, coin_flip
from .qcore import BREIDBART_SUCCESS, StatePair

MAX_POSTERIOR_ARITY = 16


@dataclass
class AttackReport:
    strategy: str
    params: dict
    trials: int
    successes: int
    predicted: float
    z_score: float
    breakdown: dict = field(default_factory=dict)

    @property
    def rate(self) -> float:
        return self.successes / self.trials

    @classmethod
    def from_stats(cls, strategy: str, params: dict, stats: TrialStats, **breakdown) -> "AttackReport":
        return cls(strategy, dict(params), stats.trials, stats.successes, stats.predicted, stats.z_score, breakdown)

    def csv_row(self) -> list:
        return [self.strategy, format_params(self.params), self.trials, self.successes,
                f"{self.predicted:.12g}", f"{self.z_score:.6f}"]


CSV_HEADER = ["strategy", "params", "trials", "successes", "predicted", "z"]


def format_params(params: dict) -> str:
    return ";".join(f"{k}={params[k]}" for k in sorted(params))


# --------------------------------------------------------------------------
# shared helpers
# --------------------------------------------------------------------------


@lru_cache(maxsize=128)
def _ci_function(n: int, n0: int, kind: str) -> BoolFn:
    return make_ci_function(n, n0, kind)


@lru_cache(maxsize=64)
def _pair(cosA: float) -> StatePair:
    return qcore.make_state_pair(cosA)


@lru_cache(maxsize=128)
def steering_candidates(F: BoolFn) -> tuple[int, np.ndarray]:
    """First influential position j and all base inputs x (x_j = 0) with F(x) != F(x ^ e_j).

    A committer who entangles slot j with a probe can steer F through that
    one qubit.
    """
    idx = np.arange(1 << F.n)
    for j in range(F.n):
        bit = 1 << (F.n - 1 - j)
        base = idx[(idx & bit) == 0]
        cand = base[F.table[base] != F.table[base | bit]]
        if cand.size:
            cand.flags.writeable = False
            return j, cand
    raise ParameterError("F is constant; no position steers it")


def _require_posterior_arity(F: BoolFn):
    if F.n > MAX_POSTERIOR_ARITY:
        raise ParameterError(f"posterior enumeration needs n <= {MAX_POSTERIOR_ARITY}, got {F.n}")


def consistent_counts(F: BoolFn, known, values) -> tuple[np.ndarray, np.ndarray]:
    """Per string, how many inputs in F^-1(0) and F^-1(1) agree with the known components.

    ``known`` is a boolean (m, n) mask, ``values`` the observed bits there.
    """
    known = np.atleast_2d(np.asarray(known, dtype=np.int64))
    values = np.atleast_2d(np.asarray(values, dtype=np.int64)) * known
    kmask = bits_to_index(known)
    vidx = bits_to_index(values)
    idx = np.arange(1 << F.n)
    match = (idx[None, :] & kmask[:, None]) == vidx[:, None]
    n1 = (match & F.table.astype(bool)[None, :]).sum(axis=1)
    return match.sum(axis=1) - n1, n1


def string_posterior(F: BoolFn, known, values) -> Fraction:
    """Exact Pr[F(a) = 1 | observed components] for one string, b uniform a priori."""
    n0_, n1_ = consistent_counts(F, known, values)
    l1 = Fraction(int(n1_[0]), F.weight)
    l0 = Fraction(int(n0_[0]), (1 << F.n) - F.weight)
    return l1 / (l0 + l1)


def _combined_ratio(F: BoolFn, n0_: np.ndarray, n1_: np.ndarray) -> Fraction | float:
    """Exact likelihood ratio Pr[obs | b=1] / Pr[obs | b=0] over all strings (inf if certain)."""
    w1 = F.weight
    w0 = (1 << F.n) - w1
    if np.any(n0_ == 0):
        return math.inf
    if np.any(n1_ == 0):
        return Fraction(0)
    r = Fraction(1)
    for c0, c1 in zip(n0_.tolist(), n1_.tolist()):
        r *= Fraction(c1 * w0, c0 * w1)
    return r


def _decide(ratio, rng) -> int:
    if ratio == 1:
        return int(rng.integers(0, 2))
    return 1 if ratio > 1 else 0


# --------------------------------------------------------------------------
# receiver attacks on concealment
# --------------------------------------------------------------------------


def bob_usd_guess(blob: Blob, F: BoolFn, pair: StatePair, rng) -> tuple[int, dict]:
    """Bayes-optimal guess of b from unambiguous identification of every slot.

    Returns the guess and a dict with per-string known counts and the exact
    posterior Pr[b = 1 | observations].
    """
    _require_posterior_arity(F)
    seen = blob.measure_usd(pair, rng)
    known = seen >= 0
    n0_, n1_ = consistent_counts(F, known, np.where(known, seen, 0))
    ratio = _combined_ratio(F, n0_, n1_)
    posterior = Fraction(1) if ratio == math.inf else ratio / (1 + ratio)
    info = {"known": known.sum(axis=1).tolist(), "posterior": posterior, "observed": seen}
    return _decide(ratio, rng), info


def read_components(blob: Blob, method: str, rng) -> np.ndarray:
    """Bob's best unkeyed reading of a four-state blob."""
    if method == "breidbart":
        return blob.measure(qcore.BREIDBART_BASIS, rng)
    if method == "random-basis":
        guesses = rng.integers(0, 2, size=(blob.m, blob.n))
        return blob.measure(qcore.BB84_BASES[guesses], rng)
    raise ParameterError(f"unknown reading method {method!r}")


COMPONENT_ACCURACY = {"breidbart": BREIDBART_SUCCESS, "random-basis": 0.75}


def bob_component_guess(blob: Blob, F: BoolFn, rng, method: str = "breidbart") -> tuple[int, np.ndarray]:
    """Guess b from a four-state blob read component by component.

    Each read bit is correct independently with probability q (cos^2(pi/8)
    for the Breidbart basis, 3/4 for random bases); the guess maximizes the
    resulting likelihood over F's preimages.
    """
    _require_posterior_arity(F)
    reads = read_components(blob, method, rng)
    q = COMPONENT_ACCURACY[method]
    rho = (1.0 - q) / q
    idx = np.arange(1 << F.n)
    dist = popcount(idx[None, :] ^ bits_to_index(reads)[:, None]).astype(float)
    weights = rho**dist
    ones = F.table.astype(bool)
    l1 = weights[:, ones].sum(axis=1) / ones.sum()
    l0 = weights[:, ~ones].sum(axis=1) / (~ones).sum()
    llr = float(np.sum(np.log(l1) - np.log(l0)))
    ratio = 1 if abs(llr) < 1e-12 else (2 if llr > 0 else 0)
    return _decide(ratio, rng), reads


def bob_breidbart_guess(blob: Blob, F: BoolFn, rng) -> tuple[int, np.ndarray]:
    return bob_component_guess(blob, F, rng, "breidbart")


def breidbart_majority(blob: Blob, rng) -> np.ndarray:
    """Recover each row's repeated data bit by Breidbart reads and a majority vote."""
    reads = blob.measure(qcore.BREIDBART_BASIS, rng).astype(int)
    ones = reads.sum(axis=1)
    guess = (2 * ones > blob.n).astype(np.uint8)
    ties = 2 * ones == blob.n
    if ties.any():
        guess[ties] = rng.integers(0, 2, size=int(ties.sum()))
    return guess


# --------------------------------------------------------------------------
# committer attacks on binding
# --------------------------------------------------------------------------


def probe_register_b92(pair: StatePair) -> qcore.JointState:
    return qcore.probe_entangle(pair)


@lru_cache(maxsize=64)
def _b92_register_row(cosA: float) -> np.ndarray:
    return probe_register_b92(_pair(cosA)).amplitudes


@lru_cache(maxsize=2)
def _bb84_register_row(basis: int) -> np.ndarray:
    return probe_register_bb84(basis).amplitudes


def probe_register_bb84(basis: int) -> qcore.JointState:
    return qcore.entangle_with_probe(
        qcore.PureState(qcore.BB84_STATES[basis, 0]), qcore.PureState(qcore.BB84_STATES[basis, 1])
    )


def epr_register() -> qcore.JointState:
    return qcore.entangle_with_probe(qcore.ZERO, qcore.ONE)


@lru_cache(maxsize=1)
def _epr_row() -> np.ndarray:
    return epr_register().amplitudes


def _steered_strings(F: BoolFn, m: int, rng):
    j, cand = steering_candidates(F)
    base = index_to_bits(cand[rng.integers(0, cand.size, size=m)], F.n)
    return j, base


def _probe_collapse(registers: RegisterBank, m: int, rng) -> np.ndarray:
    return registers.measure(np.arange(m), PROBE, qcore.COMPUTATIONAL_BASIS, rng)


def b92_probe_session(cfg: SessionConfig, target: int, rng):
    """One run of the probe-steering committer against the two-state scheme.

    Alice entangles one steering qubit per string with a probe, measures the
    probes at opening to learn each string's F value, and for every string
    whose value is wrong unveils a key that lies in exactly that position.
    Returns Bob's verdict and, for diagnostics, the blob.
    """
    F, pair, m, n = cfg.F, cfg.pair, cfg.m, cfg.n
    j, base = _steered_strings(F, m, rng)
    states = encode.two_state_slots(base, pair)
    registers = RegisterBank(np.tile(_b92_register_row(pair.cosA), (m, 1)))
    link = np.full((m, n), -1, dtype=np.int64)
    link[:, j] = np.arange(m)
    blob = Blob(states, "blob2", registers, link)
    # commit phase ends; Bob holds the blob.  Opening:
    collapsed = _probe_collapse(registers, m, rng)
    actual = base.copy()
    actual[:, j] = collapsed
    claimed = actual.copy()
    wrong = F.evaluate(actual) != target
    claimed[wrong, j] ^= 1
    payload = {"b": int(target), "a": claimed.astype(int).tolist()}
    return b92_verify(blob, payload, cfg, rng), blob


def bb84_false_basis_session(cfg: SessionConfig, target: int, strategy: str, rng):
    """One run of a committer trying to open a four-state blob as ``target``.

    ``uniform-false``: commit honestly to ``1 - target`` and unveil every basis
    flipped. ``probe-collapse-assisted``: steer one qubit per string through a
    probe and flip the unveiled basis only for strings that came out wrong.
    """
    F, m, n = cfg.F, cfg.m, cfg.n
    if strategy == "uniform-false":
        blob, key = encode.blob4_encode(1 - target, F, m, rng)
        bases = key.basis_strings ^ 1
    elif strategy == "probe-collapse-assisted":
        j, base = _steered_strings(F, m, rng)
        bases = rng.integers(0, 2, size=(m, n)).astype(np.uint8)
        states = encode.four_state_slots(base, bases)
        rows = np.stack([_bb84_register_row(int(bb)) for bb in bases[:, j]])
        registers = RegisterBank(rows)
        link = np.full((m, n), -1, dtype=np.int64)
        link[:, j] = np.arange(m)
        blob = Blob(states, "blob4", registers, link)
        collapsed = _probe_collapse(registers, m, rng)
        actual = base.copy()
        actual[:, j] = collapsed
        bases = bases.copy()
        bases[F.evaluate(actual) != target, j] ^= 1
    else:
        raise ParameterError(f"unknown strategy {strategy!r}")
    payload = {"b": int(target), "bases": bases.astype(int).tolist()}
    return bb84_verify(blob, payload, cfg, rng), blob


def epr_blob(k: int, n: int) -> Blob:
    """A k x n basis-committed blob whose every slot is half of a maximally entangled pair."""
    registers = RegisterBank(np.tile(_epr_row(), (k * n, 1)))
    return Blob(np.zeros((k, n, 2)), "basis-committed", registers, np.arange(k * n).reshape(k, n))


def epr_open(blob: Blob, open_as, rng) -> tuple[np.ndarray, np.ndarray]:
    """Measure Alice's halves in the basis of the desired bits; returns (a, payloads)."""
    a = np.asarray(open_as, dtype=np.uint8).reshape(-1)
    rows = blob.link.reshape(-1)
    bases = qcore.BB84_BASES[np.repeat(a, blob.n)]
    payloads = blob.registers.measure(rows, PROBE, bases, rng).reshape(blob.m, blob.n)
    return a, payloads


# --------------------------------------------------------------------------
# per-trial functions
# --------------------------------------------------------------------------


def trial_usd_rate(rng, cosA: float, slots: int = 1):
    """Identified outcomes on random signal states."""
    pair = _pair(cosA)
    bits = rng.integers(0, 2, size=slots)
    out = qcore.usd_measure_batch(pair.amplitudes[bits], pair, rng)
    return int(np.count_nonzero(out >= 0)), slots


def trial_usd_error(rng, cosA: float, slots: int = 1):
    """Misidentifications (identified value differs from the sent bit); always 0."""
    pair = _pair(cosA)
    bits = rng.integers(0, 2, size=slots)
    out = qcore.usd_measure_batch(pair.amplitudes[bits], pair, rng)
    return int(np.count_nonzero((out >= 0) & (out != bits))), slots


def trial_component_read(rng, method: str, slots: int = 1):
    """Correct single-component reads of random four-state slots."""
    bits = rng.integers(0, 2, size=(1, slots))
    bases = rng.integers(0, 2, size=(1, slots))
    blob = Blob(encode.four_state_slots(bits, bases), "blob4")
    return int(np.count_nonzero(read_components(blob, method, rng) == bits)), slots


def trial_concealing_count(rng, n: int, n0: int, cosA: float):
    """A string keeps at least n - n0 components hidden from unambiguous discrimination."""
    pair = _pair(cosA)
    bits = rng.integers(0, 2, size=n)
    known = int(np.count_nonzero(qcore.usd_measure_batch(pair.amplitudes[bits], pair, rng) >= 0))
    return int(known <= n0), 1


def trial_bob_usd_guess(rng, n: int, n0: int, m: int, cosA: float, kind: str = "linear-mask"):
    F = _ci_function(n, n0, kind)
    pair = _pair(cosA)
    b = int(rng.integers(0, 2))
    blob, _ = encode.blob2_encode(b, F, m, pair, rng)
    guess, _ = bob_usd_guess(blob, F, pair, rng)
    return int(guess == b), 1


def trial_bob_component_guess(rng, n: int, n0: int, m: int, method: str = "breidbart",
                              kind: str = "linear-mask"):
    F = _ci_function(n, n0, kind)
    b = int(rng.integers(0, 2))
    blob, _ = encode.blob4_encode(b, F, m, rng)
    guess, _ = bob_component_guess(blob, F, rng, method)
    return int(guess == b), 1


def _session_cfg(scheme: str, n: int, m: int, cosA: float | None = 0.8, n0: int | None = None,
                 kind: str = "linear-mask") -> SessionConfig:
    return _cached_cfg(scheme, n, m, cosA, n0, kind)


@lru_cache(maxsize=64)
def _cached_cfg(scheme, n, m, cosA, n0, kind):
    F = None if n0 is None else _ci_function(n, n0, kind)
    return SessionConfig(scheme, n=n, m=m, cosA=cosA, F=F)


def trial_b92_probe(rng, n: int, m: int, cosA: float, target: int = 1, per_string: bool = False):
    verdict, _ = b92_probe_session(_session_cfg("b92bc", n, m, cosA), target, rng)
    if per_string:
        return int(sum(verdict.string_checks)), m
    return int(verdict.accepted and verdict.bit == target), 1


def trial_bb84_false_basis(rng, n: int, m: int, strategy: str, target: int = 1, per_string: bool = False):
    verdict, _ = bb84_false_basis_session(_session_cfg("bb84bc", n, m, None), target, strategy, rng)
    if per_string:
        return int(sum(verdict.string_checks)), m
    return int(verdict.accepted and verdict.bit == target), 1


def trial_epr_open(rng, k: int, n: int, open_as: int):
    blob = epr_blob(k, n)
    a, payloads = epr_open(blob, [open_as] * k, rng)
    return int(encode.verify_basis_committed(blob, a, payloads, rng).all()), 1


def trial_honest_reopen(rng, k: int, n: int):
    """Honest basis-committed blob opened as the complementary value with guessed payloads."""
    a = rng.integers(0, 2, size=k).astype(np.uint8)
    blob, _ = encode.encode_basis_committed(a, n, rng)
    guessed = rng.integers(0, 2, size=(k, n))
    return int(encode.verify_basis_committed(blob, a ^ 1, guessed, rng).all()), 1


def trial_keyed_breidbart(rng, n: int, k: int = 1):
    a = rng.integers(0, 2, size=k).astype(np.uint8)
    blob, _ = encode.encode_keyed(a, n, rng)
    return int(np.count_nonzero(breidbart_majority(blob, rng) == a)), k


def trial_honest_session(rng, scheme: str, n: int, m: int, cosA: float | None = 0.8):
    cfg = _session_cfg(scheme, n, m, cosA if scheme != "bb84bc" else None)
    b = int(rng.integers(0, 2))
    tr = run_session(cfg, b, seed=int(rng.integers(0, 2**63)))
    return int(tr.verdict.accepted and tr.verdict.bit == b), 1


def trial_ot_all_known(rng, n: int, cosA: float):
    pair = _pair(cosA)
    bits = rng.integers(0, 2, size=n)
    out = qcore.usd_measure_batch(pair.amplitudes[bits], pair, rng)
    return int(np.all(out >= 0)), 1


def trial_coin_flip(rng, scheme: str, n: int, m: int, cosA: float | None = 0.8):
    cfg = _session_cfg(scheme, n, m, cosA if scheme != "bb84bc" else None)
    bit, _ = coin_flip(cfg, seed=int(rng.integers(0, 2**63)))
    return int(bit == 1), 1


# --------------------------------------------------------------------------
# predictions
# --------------------------------------------------------------------------


def _f_fraction(F: BoolFn, b: int) -> float:
    w = F.weight / (1 << F.n)
    return w if b else 1.0 - w


def _predict_bob_usd(n, n0, m, cosA, kind="linear-mask"):
    F = _ci_function(n, n0, kind)
    if is_affine(F):
        return analysis.usd_guess_linear(n0 + 1, 1.0 - cosA, m)
    return analysis.usd_guess_bound(n, n0, 1.0 - cosA, m)


def _predict_bob_component(n, n0, m, method="breidbart", kind="linear-mask"):
    F = _ci_function(n, n0, kind)
    if not is_affine(F):
        raise ParameterError("exact component-guess prediction needs an affine F")
    return analysis.component_guess_linear(n0 + 1, COMPONENT_ACCURACY[method], m)


def _predict_b92_probe(n, m, cosA, target=1, per_string=False):
    per = (1.0 + cosA * cosA) / 2.0
    return per if per_string else per**m


def _predict_bb84(n, m, strategy, target=1, per_string=False):
    if strategy == "uniform-false":
        per = _f_fraction(_session_cfg("bb84bc", n, m, None).F, target)
    else:
        per = 0.75
    return per if per_string else per**m


STRATEGIES = {
    "usd-rate": (trial_usd_rate, lambda cosA, slots=1: 1.0 - cosA),
    "usd-error": (trial_usd_error, lambda cosA, slots=1: 0.0),
    "component-read": (trial_component_read, lambda method, slots=1: COMPONENT_ACCURACY[method]),
    "concealing-count": (trial_concealing_count,
                         lambda n, n0, cosA: analysis.concealing_exact(n, n0, 1.0 - cosA)),
    "bob-usd-guess": (trial_bob_usd_guess, _predict_bob_usd),
    "bob-component-guess": (trial_bob_component_guess, _predict_bob_component),
    "b92-probe": (trial_b92_probe, _predict_b92_probe),
    "bb84-false-basis": (trial_bb84_false_basis, _predict_bb84),
    "epr-open": (trial_epr_open, lambda k, n, open_as: 1.0),
    "honest-reopen": (trial_honest_reopen, lambda k, n: 0.5 ** (k * n)),
    "keyed-breidbart": (trial_keyed_breidbart,
                        lambda n, k=1: analysis.binomial_majority(n, BREIDBART_SUCCESS)),
    "honest-session": (trial_honest_session, lambda scheme, n, m, cosA=0.8: 1.0),
    "ot-all-known": (trial_ot_all_known, lambda n, cosA: (1.0 - cosA) ** n),
    "coin-flip": (trial_coin_flip, lambda scheme, n, m, cosA=0.8: 0.5),
}


def predict(strategy: str, **params) -> float:
    return STRATEGIES[strategy][1](**params)


def run_attack(strategy_id: str, trials: int, seed: int = 0, **params) -> AttackReport:
    """Run ``trials`` seeded trials sequentially and compare with the prediction."""
    if strategy_id not in STRATEGIES:
        raise ParameterError(f"unknown strategy {strategy_id!r}")
    fn, pred = STRATEGIES[strategy_id]
    succ, units = run_trials(fn, params, seed, 0, trials)
    stats = TrialStats.from_counts(succ, units, pred(**params))
    return AttackReport.from_stats(strategy_id, params, stats)


# session-level wrappers -----------------------------------------------------


def alice_probe_attack_b92(cfg: SessionConfig, target: int, trials: int, seed: int = 0) -> AttackReport:
    report = run_attack("b92-probe", trials, seed, n=cfg.n, m=cfg.m, cosA=cfg.cosA, target=target)
    report.breakdown["failure_rate"] = 1.0 - report.rate
    report.breakdown["predicted_failure"] = analysis.eq12_failure(cfg.m, cfg.cosA)
    return report


def alice_false_basis_attack_bb84(cfg: SessionConfig, target: int, strategy: str, trials: int,
                                  seed: int = 0, per_string: bool = False) -> AttackReport:
    return run_attack("bb84-false-basis", trials, seed, n=cfg.n, m=cfg.m, strategy=strategy,
                      target=target, per_string=per_string)


def alice_epr_attack_eq2(k: int, n: int, trials: int, seed: int = 0) -> AttackReport:
    """Open the same kind of entangled blob as 0 in half the trials and as 1 in the other half."""
    half = trials // 2
    r0 = run_attack("epr-open", half, seed, k=k, n=n, open_as=0)
    r1 = run_attack("epr-open", trials - half, seed + 1, k=k, n=n, open_as=1)
    stats = TrialStats.from_counts(r0.successes + r1.successes, r0.trials + r1.trials, 1.0)
    return AttackReport.from_stats("epr-open", {"k": k, "n": n}, stats,
                                   pass_rate_open0=r0.rate, pass_rate_open1=r1.rate)


def breidbart_recover_keyed(n: int, trials: int, seed: int = 0) -> AttackReport:
    return run_attack("keyed-breidbart", trials, seed, n=n)
