"""
Two-process transport for commitment sessions.

Frames are a 4-byte big-endian length followed by a UTF-8 JSON object with
the fields ``session``, ``phase``, ``kind`` and ``payload``.

The quantum channel is simulated inside the receiver's process. In normal
mode the committer sends a ``quantum/prepare`` frame describing which
preparation to run (encoder name plus the classical preparation record);
the receiver-side kernel builds the qubits and hands only the opaque
:class:`~qbc.encode.Blob` to the receiver state machine, which never sees
the preparation record. This is a fidelity boundary, not a security one: a
hostile receiver process could read the record. ``debug=True`` ships slot
amplitudes instead, which is only meaningful for inspecting a session.

Session flow on one connection::

    A -> B  hello/config     {fingerprint, seed, coin}
    B -> A  hello/ready
    A -> B  quantum/prepare  (kernel only)
    A -> B  commit/blob      meta
    B -> A  announce/ack | announce/coin
    A -> B  open/key
    B -> A  verdict/verdict | verdict/abort

Only the commit, announce, open and verdict messages enter the transcript,
so a socket run produces the same transcript as :func:`qbc.protocol.run_session`.
"""

from __future__ import annotations

import json
import logging
import socket
import socketserver
import struct
import threading

import numpy as np

from .. import encode
from ..encode import CommitKey
from ..errors import FrameError, ProtocolError
from ..protocol import Committer, Message, Receiver, SessionConfig, Transcript, Verdict, session_rngs

log = logging.getLogger("qbc.transport")

HEADER = struct.Struct(">I")
MAX_FRAME = 16 * 1024 * 1024


# --------------------------------------------------------------------------
# framing
# --------------------------------------------------------------------------


def encode_frame(obj: dict) -> bytes:
    body = json.dumps(obj, separators=(",", ":")).encode("utf-8")
    if len(body) > MAX_FRAME:
        raise FrameError(f"frame of {len(body)} bytes exceeds {MAX_FRAME}")
    return HEADER.pack(len(body)) + body


def _read_exact(stream, count: int) -> bytes:
    chunks, got = [], 0
    while got < count:
        chunk = stream.read(count - got)
        if not chunk:
            break
        chunks.append(chunk)
        got += len(chunk)
    return b"".join(chunks)


def read_frame(stream) -> dict | None:
    """Read one frame from a binary file-like object; None on clean EOF."""
    head = _read_exact(stream, HEADER.size)
    if not head:
        return None
    if len(head) < HEADER.size:
        raise FrameError(f"truncated header ({len(head)} of {HEADER.size} bytes)")
    (length,) = HEADER.unpack(head)
    if length > MAX_FRAME:
        raise FrameError(f"declared length {length} exceeds {MAX_FRAME}")
    body = _read_exact(stream, length)
    if len(body) < length:
        raise FrameError(f"truncated body ({len(body)} of {length} bytes)")
    try:
        obj = json.loads(body.decode("utf-8"))
    except (UnicodeDecodeError, json.JSONDecodeError) as exc:
        raise FrameError(f"frame body is not UTF-8 JSON: {exc}") from exc
    if not isinstance(obj, dict) or not {"session", "phase", "kind", "payload"} <= obj.keys():
        raise FrameError("frame must be an object with session, phase, kind and payload")
    return obj


def write_frame(stream, obj: dict) -> None:
    stream.write(encode_frame(obj))
    stream.flush()


def _send(stream, msg: Message) -> None:
    write_frame(stream, msg.to_dict())


def _recv(stream) -> Message:
    obj = read_frame(stream)
    if obj is None:
        raise FrameError("connection closed mid-session")
    return Message.from_dict(obj)


# --------------------------------------------------------------------------
# receiver side
# --------------------------------------------------------------------------


class QuantumKernel:
    """Receiver-side simulator: turns preparation frames into blobs."""

    def __init__(self, cfg: SessionConfig):
        self.cfg = cfg

    def prepare(self, msg: Message) -> encode.Blob:
        p = msg.payload
        encoder = p.get("encoder")
        if msg.kind == "amplitudes":
            return encode.Blob.from_amplitudes_payload(p["amplitudes"], encoder)
        if msg.kind != "prepare":
            raise ProtocolError(f"unknown quantum frame kind {msg.kind!r}")
        rec = p["key"]
        bases = rec.get("bases")
        key = CommitKey(np.asarray(rec["a"], dtype=np.uint8),
                        None if bases is None else np.asarray(bases, dtype=np.uint8))
        return encode.encode_from_key(encoder, key, self.cfg.pair)


def serve_session(cfg: SessionConfig, rfile, wfile, on_verdict=None) -> Verdict | None:
    """Run Bob's side of one session over a stream pair; returns his verdict.

    ``on_verdict`` is called before the verdict frame goes out, so a caller
    that records verdicts has done so by the time the committer sees one.
    """
    def finish(msg: Message) -> Verdict:
        if on_verdict is not None:
            on_verdict(bob.verdict)
        _send(wfile, msg)
        return bob.verdict

    hello = _recv(rfile)
    session = hello.session
    if hello.phase != "hello":
        raise ProtocolError(f"expected hello, got {hello.phase!r}")
    theirs = hello.payload.get("fingerprint")
    if theirs != cfg.fingerprint():
        _send(wfile, Message(session, "hello", "abort", {"reason": "parameter mismatch"}))
        raise ProtocolError(f"session {session}: parameter mismatch {theirs} != {cfg.fingerprint()}")
    _, rng_b = session_rngs(int(hello.payload["seed"]))
    bob = Receiver(cfg, rng_b, session, coin=bool(hello.payload.get("coin", False)))
    _send(wfile, Message(session, "hello", "ready", {}))
    kernel = QuantumKernel(cfg)
    try:
        q = _recv(rfile)
        if q.session != session or q.phase != "quantum":
            raise ProtocolError(f"expected quantum frame for {session!r}, got {q.phase!r}")
        blob = kernel.prepare(q)
        reply = bob.on_commit(_recv(rfile), blob)
        if reply.phase == "verdict":
            return finish(reply)
        _send(wfile, reply)
        msg = _recv(rfile)
        if msg.phase == "verdict" and msg.kind == "abort":
            bob.abort(msg.payload.get("reason", "committer withdrew"))
            if on_verdict is not None:
                on_verdict(bob.verdict)
            return bob.verdict
        return finish(bob.on_open(msg))
    except (ProtocolError, KeyError, TypeError, ValueError) as exc:
        reason = f"protocol violation: {exc}"
        log.warning("session %s aborted: %s", session, reason)
        return finish(bob.abort(reason))


class _Handler(socketserver.StreamRequestHandler):
    disable_nagle_algorithm = True

    def handle(self):
        try:
            serve_session(self.server.cfg, self.rfile, self.wfile, self.server.record)
        except FrameError as exc:
            log.warning("connection from %s aborted: %s", self.client_address, exc)
        except (ProtocolError, OSError, KeyError, TypeError, ValueError) as exc:
            log.warning("connection from %s closed: %s", self.client_address, exc)


class BobServer(socketserver.ThreadingTCPServer):
    """One session per connection; connections are served concurrently."""

    daemon_threads = True
    allow_reuse_address = True

    def __init__(self, cfg: SessionConfig, addr=("127.0.0.1", 0)):
        super().__init__(addr, _Handler)
        self.cfg = cfg
        self.verdicts: list[Verdict] = []
        self._lock = threading.Lock()

    def record(self, verdict: Verdict) -> None:
        with self._lock:
            self.verdicts.append(verdict)

    @property
    def address(self) -> tuple[str, int]:
        return self.server_address[:2]


class Loopback:
    """Context manager running a :class:`BobServer` on a background thread."""

    def __init__(self, cfg: SessionConfig):
        self.server = BobServer(cfg)
        self.thread = threading.Thread(target=self.server.serve_forever, daemon=True)

    def __enter__(self) -> BobServer:
        self.thread.start()
        return self.server

    def __exit__(self, *exc):
        self.server.shutdown()
        self.server.server_close()
        self.thread.join()


# --------------------------------------------------------------------------
# committer side
# --------------------------------------------------------------------------


def _quantum_frame(alice: Committer, blob: encode.Blob, debug: bool) -> Message:
    if debug:
        return Message(alice.session, "quantum", "amplitudes",
                       {"encoder": blob.encoder, "amplitudes": blob.amplitudes_payload()})
    return Message(alice.session, "quantum", "prepare",
                   {"encoder": blob.encoder, "key": alice.state.key.to_payload()})


def _open_stream(addr: tuple[str, int], timeout: float):
    sock = socket.create_connection(addr, timeout=timeout)
    sock.setsockopt(socket.IPPROTO_TCP, socket.TCP_NODELAY, 1)
    return sock, sock.makefile("rb"), sock.makefile("wb")


def remote_session(addr: tuple[str, int], cfg: SessionConfig, b: int, session: str = "s0",
                   seed: int | None = None, debug: bool = False, coin: bool = False,
                   timeout: float = 30.0) -> Transcript:
    """Alice's side of a session against a :class:`BobServer` at ``addr``.

    With ``coin=True`` Alice commits a random r_A, Bob answers with r_B and
    the transcript's ``result`` is r_A XOR r_B; ``b`` is ignored.
    """
    seed = cfg.seed if seed is None else seed
    rng_a, _ = session_rngs(seed)
    alice = Committer(cfg, rng_a, session)
    tr = Transcript(session, cfg.scheme)
    sock, rfile, wfile = _open_stream(addr, timeout)
    try:
        _send(wfile, Message(session, "hello", "config",
                             {"fingerprint": cfg.fingerprint(), "seed": int(seed), "coin": coin}))
        ready = _recv(rfile)
        if ready.kind != "ready":
            raise ProtocolError(f"receiver refused session: {ready.payload.get('reason', ready.kind)}")
        if coin:
            b = int(rng_a.integers(0, 2))
        msg, blob = alice.commit(b)
        _send(wfile, _quantum_frame(alice, blob, debug))
        _send(wfile, tr.record(msg))
        reply = tr.record(_recv(rfile))
        if reply.phase == "verdict":
            tr.verdict = alice.on_verdict(reply)
            return tr
        alice.on_announce(reply)
        _send(wfile, tr.record(alice.open()))
        tr.verdict = alice.on_verdict(tr.record(_recv(rfile)))
        if coin:
            if tr.verdict.accepted:
                tr.result = tr.verdict.bit ^ int(reply.payload["r_B"])
            else:
                tr.verdict = Verdict(False, None, tr.verdict.reason, tr.verdict.string_checks, aborted=True)
        return tr
    finally:
        for f in (rfile, wfile):
            try:
                f.close()
            except OSError:
                pass
        sock.close()


def parse_addr(text: str) -> tuple[str, int]:
    host, _, port = text.rpartition(":")
    if not host or not port.isdigit():
        raise ValueError(f"address must be host:port, got {text!r}")
    return host, int(port)
