import json
import math

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st
from scipy import stats

from qbc import protocol
from qbc.boolfn import BoolFn, make_ci_function
from qbc.errors import ConfigError, ProtocolError
from qbc.protocol import Committer, Message, Receiver, SessionConfig, Verdict, run_session, session_rngs

SCHEMES = ["b92bc", "bb84bc", "otbc"]


def cfg_for(scheme, **kw):
    if scheme == "bb84bc":
        kw.setdefault("cosA", None)
    return SessionConfig(scheme, **kw)


class TestConfig:
    def test_defaults(self):
        cfg = SessionConfig("b92bc")
        assert (cfg.n, cfg.m, cfg.n0) == (6, 5, 4)
        assert cfg.pair.cosA == 0.8

    def test_n0_must_match_certified_order(self):
        with pytest.raises(ConfigError):
            SessionConfig("b92bc", F=make_ci_function(6, 2), n0=3)

    def test_full_parity_excluded(self):
        with pytest.raises(ConfigError):
            SessionConfig("b92bc", F=BoolFn.parity(6))

    def test_constant_excluded(self):
        with pytest.raises(ConfigError):
            SessionConfig("bb84bc", F=BoolFn.constant(6, 1), cosA=None)

    def test_arity_mismatch(self):
        with pytest.raises(ConfigError):
            SessionConfig("b92bc", n=5, F=make_ci_function(6, 2))

    @pytest.mark.parametrize("kw", [{"scheme": "xyz"}, {"scheme": "b92bc", "m": 0},
                                    {"scheme": "b92bc", "cosA": 0.6}, {"scheme": "otbc", "cosA": None},
                                    {"scheme": "b92bc", "verify_strategy": "peek"}])
    def test_invalid(self, kw):
        with pytest.raises(ConfigError):
            SessionConfig(**kw)

    def test_fingerprint_is_json(self):
        fp = SessionConfig("b92bc").fingerprint()
        assert json.loads(json.dumps(fp)) == fp


class TestHonest:
    @pytest.mark.parametrize("scheme", SCHEMES)
    @pytest.mark.parametrize("b", [0, 1])
    def test_accepts_committed_bit(self, scheme, b):
        for seed in range(30):
            tr = run_session(cfg_for(scheme), b, seed=seed)
            assert tr.verdict.accepted and tr.verdict.bit == b
            assert str(tr.verdict) == f"Accept({b})"

    @pytest.mark.parametrize("scheme", SCHEMES)
    def test_transcript_deterministic(self, scheme):
        a = run_session(cfg_for(scheme), 1, seed=99).to_json()
        assert a == run_session(cfg_for(scheme), 1, seed=99).to_json()
        assert a != run_session(cfg_for(scheme), 1, seed=100).to_json()

    def test_transcript_shape(self):
        tr = run_session(SessionConfig("b92bc"), 0, session="abc", seed=1)
        d = json.loads(tr.to_json())
        assert [(m["phase"], m["kind"]) for m in d["messages"]] == [
            ("commit", "blob"), ("announce", "ack"), ("open", "key"), ("verdict", "verdict")]
        assert all(m["session"] == "abc" for m in d["messages"])
        assert d["verdict"] == "Accept(0)"

    def test_usd_verification(self):
        cfg = SessionConfig("b92bc", verify_strategy="usd")
        assert all(run_session(cfg, 1, seed=s).verdict.accepted for s in range(20))

    def test_recursive_function(self):
        cfg = SessionConfig("bb84bc", n=8, F=make_ci_function(8, 3, "recursive"), cosA=None)
        assert run_session(cfg, 1, seed=3).verdict.bit == 1

    def test_session_rngs_independent(self):
        a, b = session_rngs(5)
        assert a.integers(0, 2**63) != b.integers(0, 2**63)


class TestCheating:
    def test_b92_lie_detected_often(self):
        cfg = SessionConfig("b92bc", m=8)
        rejected = 0
        for seed in range(200):
            rng_a, rng_b = session_rngs(seed)
            alice, blob = protocol.b92_commit(0, cfg, rng_a)
            a = np.array(protocol.b92_open(alice)["a"])
            a[:, 0] ^= 1  # parity mask covers position 0, so F flips
            v = protocol.b92_verify(blob, {"b": 1, "a": a.tolist()}, cfg, rng_b)
            rejected += not v.accepted
        # every string lies once; pass probability 0.64^8 ~ 0.028
        assert rejected >= 180

    def test_f_mismatch_rejected(self):
        cfg = SessionConfig("b92bc")
        rng_a, rng_b = session_rngs(0)
        alice, blob = protocol.b92_commit(0, cfg, rng_a)
        v = protocol.b92_verify(blob, {"b": 1, "a": protocol.b92_open(alice)["a"]}, cfg, rng_b)
        assert not v.accepted and "F(a)" in v.reason

    @pytest.mark.parametrize("payload", [{}, {"b": 1}, {"b": 2, "a": []}, {"b": 1, "a": [[0, 1]]},
                                         {"b": 1, "a": [[0.5] * 6] * 5}, {"b": 1, "a": [[3] * 6] * 5},
                                         {"b": True, "a": [[0] * 6] * 5}])
    def test_malformed_open_rejected(self, payload):
        cfg = SessionConfig("b92bc")
        rng_a, rng_b = session_rngs(0)
        _, blob = protocol.b92_commit(1, cfg, rng_a)
        v = protocol.b92_verify(blob, payload, cfg, rng_b)
        assert not v.accepted and v.reason.startswith("malformed open")

    def test_bb84_disagreeing_values_rejected(self):
        cfg = SessionConfig("bb84bc", cosA=None)
        rng_a, rng_b = session_rngs(0)
        alice, blob = protocol.bb84_commit(1, cfg, rng_a)
        assert protocol.bb84_verify(blob, protocol.bb84_open(alice), cfg, rng_b).accepted
        _, blob = protocol.bb84_commit(1, cfg, session_rngs(1)[0])
        v = protocol.bb84_verify(blob, {"b": 0, "bases": alice.key.basis_strings.tolist()}, cfg, rng_b)
        assert not v.accepted

    def test_bb84_bit_optional(self):
        cfg = SessionConfig("bb84bc", cosA=None)
        rng_a, rng_b = session_rngs(4)
        alice, blob = protocol.bb84_commit(0, cfg, rng_a)
        v = protocol.bb84_verify(blob, {"bases": alice.key.basis_strings.tolist()}, cfg, rng_b)
        assert v.accepted and v.bit == 0

    def test_otbc_names_offending_slot(self):
        cfg = SessionConfig("otbc")
        receipts = np.full((cfg.m, cfg.n), -1)
        receipts[2, 3] = 1
        a = np.zeros((cfg.m, cfg.n), dtype=int)
        a[:, 5] = 1  # F = a1^..^a5 with n=6 -> a6 is free; F(a) = 0
        v = protocol.otbc_verify(receipts, {"b": 0, "a": a.tolist()}, cfg)
        assert not v.accepted and v.reason == "receipt mismatch at string 2, position 3"


class TestOt:
    def test_receipts_never_wrong(self, rng):
        pair = SessionConfig("otbc").pair
        a = rng.integers(0, 2, 20_000)
        rec = protocol.ot_receive(protocol.ot_send(a, pair), pair, rng)
        assert np.all(rec.values[rec.known] == a[rec.known])
        assert len(rec) == a.size
        assert abs(rec.known.mean() - 0.2) < 4 * math.sqrt(0.16 / a.size)


class TestStateMachine:
    def test_phase_order_enforced(self, rng):
        cfg = SessionConfig("b92bc")
        alice = Committer(cfg, rng)
        with pytest.raises(ProtocolError):
            alice.open()
        msg, blob = alice.commit(1)
        with pytest.raises(ProtocolError):
            alice.commit(1)
        bob = Receiver(cfg, rng)
        with pytest.raises(ProtocolError):
            bob.on_open(Message("s0", "open", "key", {}))
        with pytest.raises(ProtocolError):
            bob.on_commit(Message("other", "commit", "blob", {}), blob)
        bob.on_commit(msg, blob)
        with pytest.raises(ProtocolError):
            bob.on_commit(msg, blob)

    def test_blob_shape_checked(self, rng):
        cfg = SessionConfig("b92bc")
        other = SessionConfig("b92bc", m=3)
        msg, blob = Committer(other, rng).commit(0)
        with pytest.raises(ProtocolError):
            Receiver(cfg, rng).on_commit(msg, blob)

    def test_message_round_trip(self):
        m = Message("s", "open", "key", {"b": 1})
        assert Message.from_dict(m.to_dict()) == m
        with pytest.raises(ProtocolError):
            Message.from_dict({"phase": "x"})

    def test_verdict_payload_round_trip(self):
        for v in (Verdict(True, 1, "", [True]), Verdict.reject("bad", [False]),
                  Verdict(False, None, "gone", [], aborted=True)):
            assert Verdict.from_payload(v.to_payload()) == v
        assert str(Verdict(False, None, "gone", aborted=True)) == "Abort(gone)"


class TestCoinFlip:
    @pytest.mark.parametrize("scheme", SCHEMES)
    def test_fair(self, scheme):
        cfg = cfg_for(scheme)
        results = [protocol.coin_flip(cfg, seed=s)[0] for s in range(2000)]
        ones = sum(results)
        assert stats.binomtest(ones, 2000, 0.5).pvalue > 1e-4

    def test_withheld_open_aborts(self):
        bit, tr = protocol.coin_flip(SessionConfig("b92bc"), seed=1, alice_opens=False)
        assert bit is None and tr.verdict.aborted

    @given(st.integers(0, 2**32))
    def test_result_is_xor(self, seed):
        bit, tr = protocol.coin_flip(SessionConfig("bb84bc", cosA=None), seed=seed)
        r_B = tr.messages[1].payload["r_B"]
        assert bit == tr.verdict.bit ^ r_B
