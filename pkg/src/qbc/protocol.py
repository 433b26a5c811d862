"""
Commit/open state machines and transcripts.

Three bit-commitment schemes are supported:

``b92bc``
    two-state blob; Bob stores the qubits and, at opening, checks each slot
    against the unveiled strings.
``bb84bc``
    four-state blob; opening unveils the bases and Bob reads the strings.
``otbc``
    the blob is sent through the two-state oblivious-transfer channel, so Bob
    measures immediately and keeps only classical receipts.

Every session owns two independent random streams, one per party, spawned
from ``SessionConfig.seed``. Messages carry the session id and a phase tag;
anything out of order raises :class:`~qbc.errors.ProtocolError`.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from functools import lru_cache

import numpy as np

from . import encode
from .boolfn import BoolFn, ci_order, make_ci_function
from .encode import Blob, CommitKey
from .errors import ConfigError, ParameterError, ProtocolError
from .qcore import BB84_BASES, StatePair, make_state_pair

SCHEMES = ("b92bc", "bb84bc", "otbc")
VERIFY_STRATEGIES = ("projective", "usd")
DEFAULT_GAP = 2


@lru_cache(maxsize=64)
def _cached_pair(cosA: float, delta: float | None) -> StatePair:
    return make_state_pair(cosA, delta)


@lru_cache(maxsize=64)
def _cached_linear(n: int, n0: int) -> BoolFn:
    return make_ci_function(n, n0, "linear-mask")


@dataclass
class SessionConfig:
    """Parameters both parties agree on before a session.

    ``F`` defaults to a parity over the first ``n - 1`` variables, giving the
    default gap ``n - n0 = 2``. ``n0`` must equal the certified CI order of
    ``F`` and stay below ``n - 1``.
    """

    scheme: str
    n: int = 6
    m: int = 5
    n0: int | None = None
    cosA: float | None = 0.8
    delta: float | None = None
    F: BoolFn | None = None
    seed: int = 0
    verify_strategy: str = "projective"

    def __post_init__(self):
        self.scheme = self.scheme.lower()
        if self.scheme not in SCHEMES:
            raise ConfigError(f"unknown scheme {self.scheme!r}; choose from {SCHEMES}")
        if self.m < 1:
            raise ConfigError(f"need m >= 1 strings, got {self.m}")
        if self.verify_strategy not in VERIFY_STRATEGIES:
            raise ConfigError(f"unknown verification strategy {self.verify_strategy!r}")
        if self.F is None:
            if self.n < 2:
                raise ConfigError(f"need n >= 2, got {self.n}")
            target = self.n0 if self.n0 is not None else max(0, self.n - DEFAULT_GAP)
            if not 0 <= target <= self.n - 1:
                raise ConfigError(f"n0={target} out of range for n={self.n}")
            self.F = _cached_linear(self.n, target)
        elif self.F.n != self.n:
            raise ConfigError(f"F has arity {self.F.n} but n = {self.n}")
        order = ci_order(self.F)
        if self.n0 is None:
            self.n0 = order
        elif self.n0 != order:
            raise ConfigError(f"n0={self.n0} but F has certified CI order {order}")
        if self.n0 >= self.n - 1:
            raise ConfigError(
                f"n0={self.n0} >= n-1={self.n - 1}: full-parity functions are excluded (weight attack)"
            )
        if self.F.weight in (0, 1 << self.n):
            raise ConfigError("F is constant; it cannot encode both bit values")
        if self.scheme in ("b92bc", "otbc"):
            if self.cosA is None:
                raise ConfigError(f"scheme {self.scheme} needs cosA")
            try:
                self.pair = _cached_pair(float(self.cosA), self.delta)
            except ParameterError as exc:
                raise ConfigError(str(exc)) from exc
            self.delta = self.pair.delta
        else:
            self.pair = None

    def fingerprint(self) -> dict:
        """Parameters both endpoints must agree on (checked in the hello frame)."""
        return {
            "scheme": self.scheme,
            "n": self.n,
            "m": self.m,
            "n0": self.n0,
            "cosA": None if self.pair is None else self.cosA,
            "F": self.F.to_hex(),
            "verify": self.verify_strategy,
        }


def session_rngs(seed: int) -> tuple[np.random.Generator, np.random.Generator]:
    """Independent (committer, receiver) generators for one session."""
    alice, bob = np.random.SeedSequence(seed).spawn(2)
    return np.random.default_rng(alice), np.random.default_rng(bob)


# --------------------------------------------------------------------------
# messages, verdicts, transcripts
# --------------------------------------------------------------------------


@dataclass
class Message:
    session: str
    phase: str
    kind: str
    payload: dict = field(default_factory=dict)

    def to_dict(self) -> dict:
        return {"session": self.session, "phase": self.phase, "kind": self.kind, "payload": self.payload}

    @classmethod
    def from_dict(cls, d: dict) -> "Message":
        try:
            return cls(str(d["session"]), str(d["phase"]), str(d["kind"]), dict(d.get("payload") or {}))
        except (KeyError, TypeError, ValueError) as exc:
            raise ProtocolError(f"malformed message: {exc}") from exc


@dataclass
class Verdict:
    accepted: bool
    bit: int | None = None
    reason: str = ""
    string_checks: list[bool] = field(default_factory=list)
    aborted: bool = False

    def __str__(self):
        if self.accepted:
            return f"Accept({self.bit})"
        return f"{'Abort' if self.aborted else 'Reject'}({self.reason})"

    def to_payload(self) -> dict:
        return {
            "verdict": "accept" if self.accepted else ("abort" if self.aborted else "reject"),
            "bit": self.bit,
            "reason": self.reason,
            "checks": [bool(c) for c in self.string_checks],
        }

    @classmethod
    def from_payload(cls, p: dict) -> "Verdict":
        return cls(p["verdict"] == "accept", p.get("bit"), p.get("reason", ""), list(p.get("checks", [])),
                   p["verdict"] == "abort")

    @classmethod
    def reject(cls, reason: str, checks=()) -> "Verdict":
        return cls(False, None, reason, [bool(c) for c in checks])


@dataclass
class Transcript:
    """Ordered classical messages of one session plus the final verdict.

    ``to_json`` is canonical: top-level keys in the order session, scheme,
    messages, verdict, result; each message as session, phase, kind,
    payload; payload keys sorted.
    """

    session: str
    scheme: str
    messages: list[Message] = field(default_factory=list)
    verdict: Verdict | None = None
    result: int | None = None

    def record(self, msg: Message) -> Message:
        self.messages.append(msg)
        return msg

    def to_dict(self) -> dict:
        return {
            "session": self.session,
            "scheme": self.scheme,
            "messages": [
                {"session": m.session, "phase": m.phase, "kind": m.kind,
                 "payload": json.loads(json.dumps(m.payload, sort_keys=True))}
                for m in self.messages
            ],
            "verdict": None if self.verdict is None else str(self.verdict),
            "result": self.result,
        }

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), sort_keys=False, separators=(",", ":"))


class MalformedOpen(ValueError):
    pass


def _bit_matrix(payload: dict, key: str, shape: tuple[int, int]) -> np.ndarray:
    if key not in payload:
        raise MalformedOpen(f"missing field {key!r}")
    try:
        arr = np.asarray(payload[key])
    except (TypeError, ValueError) as exc:
        raise MalformedOpen(f"field {key!r} is not an array") from exc
    if arr.shape != shape:
        raise MalformedOpen(f"field {key!r} has shape {arr.shape}, expected {shape}")
    if arr.size and not np.issubdtype(arr.dtype, np.integer):
        raise MalformedOpen(f"field {key!r} must hold integers")
    if np.any((arr != 0) & (arr != 1)):
        raise MalformedOpen(f"field {key!r} must hold bits")
    return arr.astype(np.uint8)


def _claimed_bit(payload: dict, required: bool) -> int | None:
    b = payload.get("b")
    if b is None:
        if required:
            raise MalformedOpen("missing field 'b'")
        return None
    if b not in (0, 1) or isinstance(b, bool):
        raise MalformedOpen(f"claimed bit {b!r} is not 0 or 1")
    return int(b)


# --------------------------------------------------------------------------
# committer state and the functional API
# --------------------------------------------------------------------------


@dataclass
class AliceState:
    scheme: str
    b: int
    key: CommitKey


def b92_commit(b: int, cfg: SessionConfig, rng) -> tuple[AliceState, Blob]:
    blob, key = encode.blob2_encode(b, cfg.F, cfg.m, cfg.pair, rng)
    return AliceState("b92bc", b, key), blob


def b92_open(alice: AliceState) -> dict:
    return {"b": alice.b, "a": alice.key.to_payload()["a"]}


def b92_verify(blob: Blob, payload: dict, cfg: SessionConfig, rng) -> Verdict:
    """Check every slot against the unveiled strings, then the F values.

    ``projective`` measures slot (i, j) in {|Psi_a>, |Psi_a^perp>}; ``usd``
    rejects only when an unambiguous identification contradicts the claim.
    """
    try:
        b = _claimed_bit(payload, required=True)
        a = _bit_matrix(payload, "a", (blob.m, blob.n))
    except MalformedOpen as exc:
        return Verdict.reject(f"malformed open: {exc}")
    if cfg.verify_strategy == "usd":
        seen = blob.measure_usd(cfg.pair, rng)
        slot_ok = (seen < 0) | (seen == a)
    else:
        slot_ok = encode.verify_two_state(blob, a, cfg.pair, rng)
    f_ok = cfg.F.evaluate(a) == b
    checks = slot_ok.all(axis=1) & f_ok
    if not slot_ok.all():
        i = int(np.flatnonzero(~slot_ok.all(axis=1))[0])
        return Verdict.reject(f"string {i} failed state verification", checks)
    if not f_ok.all():
        return Verdict.reject(f"F(a) != {b} for string {int(np.flatnonzero(~f_ok)[0])}", checks)
    return Verdict(True, b, "", list(checks))


def bb84_commit(b: int, cfg: SessionConfig, rng) -> tuple[AliceState, Blob]:
    blob, key = encode.blob4_encode(b, cfg.F, cfg.m, rng)
    return AliceState("bb84bc", b, key), blob


def bb84_open(alice: AliceState) -> dict:
    return {"b": alice.b, "bases": alice.key.to_payload()["bases"]}


def bb84_verify(blob: Blob, payload: dict, cfg: SessionConfig, rng) -> Verdict:
    """Measure each slot in its unveiled basis and require all F(a^(i)) to agree.

    A claimed bit ``b`` in the payload is optional; without it Bob accepts the
    common value.
    """
    try:
        claimed = _claimed_bit(payload, required=False)
        bases = _bit_matrix(payload, "bases", (blob.m, blob.n))
    except MalformedOpen as exc:
        return Verdict.reject(f"malformed open: {exc}")
    a = blob.measure(BB84_BASES[bases], rng)
    values = cfg.F.evaluate(a)
    target = int(values[0]) if claimed is None else claimed
    checks = values == target
    if not checks.all():
        return Verdict.reject(f"F values disagree with {target}", checks)
    return Verdict(True, target, "", list(checks))


@dataclass
class OtReceipt:
    """Receiver's classical record: ``values[j]`` is the bit, or -1 if unknown."""

    values: np.ndarray

    @property
    def known(self) -> np.ndarray:
        return self.values >= 0

    def __len__(self):
        return self.values.shape[-1]


def ot_send(a, pair: StatePair) -> Blob:
    return encode.encode_simple(a, pair)


def ot_receive(blob: Blob, pair: StatePair, rng) -> OtReceipt:
    """Unambiguously discriminate each qubit; the known positions are never wrong."""
    return OtReceipt(blob.measure_usd(pair, rng).reshape(-1))


def otbc_commit(b: int, cfg: SessionConfig, rng) -> tuple[AliceState, Blob]:
    blob, key = encode.blob2_encode(b, cfg.F, cfg.m, cfg.pair, rng)
    blob.encoder = "ot"
    return AliceState("otbc", b, key), blob


def otbc_receive(blob: Blob, cfg: SessionConfig, rng) -> np.ndarray:
    """m oblivious transfers at once; returns receipts (m, n) with -1 for unknown."""
    return blob.measure_usd(cfg.pair, rng)


def otbc_open(alice: AliceState) -> dict:
    return b92_open(alice)


def otbc_verify(receipts: np.ndarray, payload: dict, cfg: SessionConfig) -> Verdict:
    try:
        b = _claimed_bit(payload, required=True)
        a = _bit_matrix(payload, "a", receipts.shape)
    except MalformedOpen as exc:
        return Verdict.reject(f"malformed open: {exc}")
    subset_ok = (receipts < 0) | (receipts == a)
    f_ok = cfg.F.evaluate(a) == b
    checks = subset_ok.all(axis=1) & f_ok
    if not subset_ok.all():
        i, j = (int(x) for x in np.argwhere(~subset_ok)[0])
        return Verdict.reject(f"receipt mismatch at string {i}, position {j}", checks)
    if not f_ok.all():
        return Verdict.reject(f"F(a) != {b} for string {int(np.flatnonzero(~f_ok)[0])}", checks)
    return Verdict(True, b, "", list(checks))


_COMMIT = {"b92bc": b92_commit, "bb84bc": bb84_commit, "otbc": otbc_commit}
_OPEN = {"b92bc": b92_open, "bb84bc": bb84_open, "otbc": otbc_open}


# --------------------------------------------------------------------------
# session state machines
# --------------------------------------------------------------------------


class Committer:
    """Alice's side of one session."""

    def __init__(self, cfg: SessionConfig, rng, session: str = "s0"):
        self.cfg = cfg
        self.rng = rng
        self.session = session
        self.phase = "idle"
        self.state: AliceState | None = None
        self.announced: int | None = None

    def commit(self, b: int) -> tuple[Message, Blob]:
        if self.phase != "idle":
            raise ProtocolError(f"commit in phase {self.phase}")
        if b not in (0, 1):
            raise ParameterError(f"committed value must be a bit, got {b!r}")
        self.state, blob = _COMMIT[self.cfg.scheme](b, self.cfg, self.rng)
        self.phase = "committed"
        return Message(self.session, "commit", "blob", blob.meta()), blob

    def on_announce(self, msg: Message) -> None:
        _expect(msg, self.session, "announce")
        if self.phase != "committed":
            raise ProtocolError(f"announce in phase {self.phase}")
        self.announced = msg.payload.get("r_B")
        self.phase = "acknowledged"

    def open(self) -> Message:
        if self.phase not in ("committed", "acknowledged"):
            raise ProtocolError(f"open in phase {self.phase}")
        self.phase = "opened"
        return Message(self.session, "open", "key", _OPEN[self.cfg.scheme](self.state))

    def on_verdict(self, msg: Message) -> Verdict:
        _expect(msg, self.session, "verdict")
        if self.phase not in ("opened", "committed", "acknowledged"):
            raise ProtocolError(f"verdict in phase {self.phase}")
        self.phase = "done"
        return Verdict.from_payload(msg.payload)


class Receiver:
    """Bob's side of one session. With ``coin=True`` he answers the commit with r_B."""

    def __init__(self, cfg: SessionConfig, rng, session: str = "s0", coin: bool = False):
        self.cfg = cfg
        self.rng = rng
        self.session = session
        self.coin = coin
        self.phase = "idle"
        self.blob: Blob | None = None
        self.receipts: np.ndarray | None = None
        self.r_B: int | None = None
        self.verdict: Verdict | None = None

    def on_commit(self, msg: Message, blob: Blob) -> Message:
        _expect(msg, self.session, "commit")
        if self.phase != "idle":
            raise ProtocolError(f"commit in phase {self.phase}")
        if (blob.m, blob.n) != (self.cfg.m, self.cfg.n):
            raise ProtocolError(f"blob is {blob.m}x{blob.n}, expected {self.cfg.m}x{self.cfg.n}")
        if self.cfg.scheme == "otbc":
            # no quantum storage: measure now, keep classical receipts only
            self.receipts = otbc_receive(blob, self.cfg, self.rng)
        else:
            self.blob = blob
        self.phase = "committed"
        if self.coin:
            self.r_B = int(self.rng.integers(0, 2))
            return Message(self.session, "announce", "coin", {"r_B": self.r_B})
        return Message(self.session, "announce", "ack", {})

    def on_open(self, msg: Message) -> Message:
        _expect(msg, self.session, "open")
        if self.phase != "committed":
            raise ProtocolError(f"open in phase {self.phase}")
        scheme = self.cfg.scheme
        if scheme == "b92bc":
            v = b92_verify(self.blob, msg.payload, self.cfg, self.rng)
        elif scheme == "bb84bc":
            v = bb84_verify(self.blob, msg.payload, self.cfg, self.rng)
        else:
            v = otbc_verify(self.receipts, msg.payload, self.cfg)
        self.verdict = v
        self.phase = "done"
        return Message(self.session, "verdict", "verdict", v.to_payload())

    def abort(self, reason: str) -> Message:
        self.verdict = Verdict(False, None, reason, [], aborted=True)
        self.phase = "done"
        return Message(self.session, "verdict", "abort", self.verdict.to_payload())


def _expect(msg: Message, session: str, phase: str) -> None:
    if msg.session != session:
        raise ProtocolError(f"message for session {msg.session!r} delivered to {session!r}")
    if msg.phase != phase:
        raise ProtocolError(f"expected a {phase!r} message, got {msg.phase!r}")


def run_session(cfg: SessionConfig, b: int, session: str = "s0", seed: int | None = None) -> Transcript:
    """Honest in-process commit and open."""
    rng_a, rng_b = session_rngs(cfg.seed if seed is None else seed)
    alice, bob = Committer(cfg, rng_a, session), Receiver(cfg, rng_b, session)
    tr = Transcript(session, cfg.scheme)
    msg, blob = alice.commit(b)
    tr.record(msg)
    tr.record(bob.on_commit(msg, blob))
    opened = tr.record(alice.open())
    reply = tr.record(bob.on_open(opened))
    tr.verdict = alice.on_verdict(reply)
    return tr


def coin_flip(cfg: SessionConfig, session: str = "s0", seed: int | None = None, alice_opens: bool = True):
    """Alice commits r_A, Bob announces r_B, Alice opens; result r_A XOR r_B.

    Returns ``(bit or None, transcript)``; the bit is None when the session aborts.
    """
    rng_a, rng_b = session_rngs(cfg.seed if seed is None else seed)
    alice, bob = Committer(cfg, rng_a, session), Receiver(cfg, rng_b, session, coin=True)
    tr = Transcript(session, cfg.scheme)
    r_A = int(rng_a.integers(0, 2))
    msg, blob = alice.commit(r_A)
    tr.record(msg)
    announce = tr.record(bob.on_commit(msg, blob))
    alice.on_announce(announce)
    if not alice_opens:
        tr.verdict = alice.on_verdict(tr.record(bob.abort("committer did not open")))
        return None, tr
    reply = tr.record(bob.on_open(tr.record(alice.open())))
    tr.verdict = alice.on_verdict(reply)
    if not tr.verdict.accepted:
        tr.verdict = Verdict(False, None, tr.verdict.reason, tr.verdict.string_checks, aborted=True)
        return None, tr
    tr.result = tr.verdict.bit ^ bob.r_B
    return tr.result, tr
