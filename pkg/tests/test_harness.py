import io
import json
import os
import socket
import struct
import subprocess
import sys
import threading
from pathlib import Path

import numpy as np
import pytest

from qbc.errors import ConfigError, FrameError
from qbc.harness import CSV_COLUMNS, ExperimentConfig, run_experiment, sweep
from qbc.harness import experiments, transport
from qbc.harness.cli import main
from qbc.montecarlo import TrialStats, trial_rng, z_score
from qbc.protocol import SessionConfig, coin_flip, run_session

GOLDEN = Path(__file__).parent / "golden"


def run_cli(*args, env=None):
    full_env = {**os.environ, **(env or {})}
    full_env.pop("QBC_SEED", None) if env is None or "QBC_SEED" not in env else None
    return subprocess.run([sys.executable, "-m", "qbc", *args], capture_output=True, text=True, env=full_env,
                          timeout=120)


class TestSeeding:
    def test_trial_rng_depends_on_seed_and_index(self):
        a = trial_rng(7, 3).integers(0, 2**63)
        assert a == trial_rng(7, 3).integers(0, 2**63)
        assert a != trial_rng(7, 4).integers(0, 2**63)
        assert a != trial_rng(8, 3).integers(0, 2**63)

    def test_stats(self):
        s = TrialStats.from_counts(30, 100, 0.25)
        assert s.stderr == pytest.approx((0.3 * 0.7 / 100) ** 0.5)
        assert s.z_score == pytest.approx(0.05 / (0.25 * 0.75 / 100) ** 0.5)
        assert s.within_band()
        assert not TrialStats.from_counts(90, 100, 0.25).within_band()

    def test_degenerate_prediction(self):
        assert z_score(1.0, 1.0, 10) == 0.0
        assert z_score(0.9, 1.0, 10) == float("-inf")


class TestFraming:
    def test_bit_exact_frame(self):
        msg = {"session": "s", "phase": "p", "kind": "k", "payload": {}}
        frame = transport.encode_frame(msg)
        body = b'{"session":"s","phase":"p","kind":"k","payload":{}}'
        assert frame == struct.pack(">I", len(body)) + body
        assert transport.read_frame(io.BytesIO(frame)) == msg

    def test_clean_eof(self):
        assert transport.read_frame(io.BytesIO(b"")) is None

    @pytest.mark.parametrize("data", [b"\x00\x00", b"\x00\x00\x00\x10{}", b"\x00\x00\x00\x02{x",
                                      b"\x00\x00\x00\x02[]", struct.pack(">I", 2**31)])
    def test_bad_frames(self, data):
        with pytest.raises(FrameError):
            transport.read_frame(io.BytesIO(data))

    def test_parse_addr(self):
        assert transport.parse_addr("localhost:80") == ("localhost", 80)
        with pytest.raises(ValueError):
            transport.parse_addr("nope")


CFG = SessionConfig("b92bc")


class TestSocketSessions:
    @pytest.mark.parametrize("scheme", ["b92bc", "bb84bc", "otbc"])
    def test_transcript_matches_in_process(self, scheme):
        cfg = SessionConfig(scheme, cosA=None if scheme == "bb84bc" else 0.8)
        with transport.Loopback(cfg) as srv:
            for seed in range(5):
                remote = transport.remote_session(srv.address, cfg, seed % 2, f"s{seed}", seed)
                local = run_session(cfg, seed % 2, f"s{seed}", seed)
                assert remote.to_json() == local.to_json()
                assert remote.verdict.accepted

    def test_coin_matches_in_process(self):
        with transport.Loopback(CFG) as srv:
            tr = transport.remote_session(srv.address, CFG, 0, seed=17, coin=True)
        bit, local = coin_flip(CFG, seed=17)
        assert tr.result == bit and tr.to_json() == local.to_json()

    def test_debug_mode(self):
        with transport.Loopback(CFG) as srv:
            tr = transport.remote_session(srv.address, CFG, 1, seed=3, debug=True)
        assert tr.verdict.accepted and tr.verdict.bit == 1

    def test_concurrent_sessions(self):
        results = {}
        with transport.Loopback(CFG) as srv:
            def worker(k):
                results[k] = transport.remote_session(srv.address, CFG, k % 2, f"c{k}", 100 + k)
            threads = [threading.Thread(target=worker, args=(k,)) for k in range(8)]
            for t in threads:
                t.start()
            for t in threads:
                t.join()
            assert len(srv.verdicts) == 8
        for k, tr in results.items():
            assert tr.verdict.bit == k % 2
            assert {m.session for m in tr.messages} == {f"c{k}"}
            assert tr.to_json() == run_session(CFG, k % 2, f"c{k}", 100 + k).to_json()

    def test_parameter_mismatch_refused(self):
        with transport.Loopback(CFG) as srv:
            with pytest.raises(Exception, match="refused"):
                transport.remote_session(srv.address, SessionConfig("b92bc", m=3), 1)

    def _raw(self, srv):
        sock = socket.create_connection(srv.address, timeout=5)
        return sock, sock.makefile("rb"), sock.makefile("wb")

    def _hello(self, wfile, rfile):
        transport.write_frame(wfile, {"session": "x", "phase": "hello", "kind": "config",
                                      "payload": {"fingerprint": CFG.fingerprint(), "seed": 1}})
        assert transport.read_frame(rfile)["kind"] == "ready"

    def test_phase_violation_gets_abort(self):
        with transport.Loopback(CFG) as srv:
            sock, rfile, wfile = self._raw(srv)
            self._hello(wfile, rfile)
            transport.write_frame(wfile, {"session": "x", "phase": "open", "kind": "key", "payload": {}})
            reply = transport.read_frame(rfile)
            assert reply["phase"] == "verdict" and reply["kind"] == "abort"
            assert "protocol violation" in reply["payload"]["reason"]
            assert transport.read_frame(rfile) is None
            sock.close()

    def test_truncated_frame_closes_connection(self):
        with transport.Loopback(CFG) as srv:
            sock, rfile, wfile = self._raw(srv)
            self._hello(wfile, rfile)
            wfile.write(struct.pack(">I", 100) + b'{"session"')
            wfile.flush()
            sock.shutdown(socket.SHUT_WR)
            assert transport.read_frame(rfile) is None
            sock.close()
            assert srv.verdicts == []

    def test_client_sees_truncated_reply(self):
        srv = socket.socket()
        srv.bind(("127.0.0.1", 0))
        srv.listen(1)

        def bad_server():
            conn, _ = srv.accept()
            f = conn.makefile("rb")
            transport.read_frame(f)
            conn.sendall(struct.pack(">I", 50) + b'{"sess')
            conn.close()

        t = threading.Thread(target=bad_server)
        t.start()
        with pytest.raises(FrameError):
            transport.remote_session(srv.getsockname(), CFG, 1)
        t.join()
        srv.close()


HONEST = dict(scheme="b92bc", n=6, m=3)


class TestExperiments:
    def test_config_validation(self):
        with pytest.raises(ConfigError):
            ExperimentConfig("nope")
        with pytest.raises(ConfigError):
            ExperimentConfig("usd-rate", {"cosA": 0.8}, trials=0)
        with pytest.raises(ConfigError):
            ExperimentConfig("usd-rate", {"bogus": 1})
        with pytest.raises(ConfigError):
            ExperimentConfig("usd-rate", {"cosA": 0.8}, transport="socket")
        with pytest.raises(ConfigError):
            ExperimentConfig("usd-rate", {"cosA": 0.8}, fmt="xml")

    def test_same_config_byte_identical(self, tmp_path):
        for name in ("a.csv", "b.csv"):
            run_experiment(ExperimentConfig("b92-probe", dict(n=6, m=3, cosA=0.8), 300, 9, str(tmp_path / name)))
        assert (tmp_path / "a.csv").read_bytes() == (tmp_path / "b.csv").read_bytes()
        summary = json.loads((tmp_path / "a.json").read_text())
        assert summary["master_seed"] == 9 and "duration" in summary

    def test_worker_count_does_not_matter(self, tmp_path):
        rows = []
        for w in (1, 8):
            r = run_experiment(ExperimentConfig("usd-rate", {"cosA": 0.8}, 2000, 5, workers=w))
            rows.append(r.row())
        assert rows[0] == rows[1]

    def test_chunks_cover_range(self):
        for trials in (1, 7, 100, 1001):
            for w in (1, 3, 8):
                chunks = experiments._chunks(trials, w)
                assert chunks[0][0] == 0 and chunks[-1][1] == trials
                assert all(a[1] == b[0] for a, b in zip(chunks, chunks[1:]))

    def test_socket_and_in_process_identical(self, tmp_path):
        paths = []
        for t in ("in-process", "socket"):
            p = tmp_path / f"{t}.csv"
            run_experiment(ExperimentConfig("honest-session", HONEST, 60, 3, str(p), transport=t))
            paths.append(p)
        assert paths[0].read_bytes() == paths[1].read_bytes()

    def test_golden_sweep(self, tmp_path):
        out = tmp_path / "sweep.csv"
        base = ExperimentConfig("usd-rate", {"cosA": 0.75, "slots": 4}, 500, 42, str(out))
        sweep(base, {"cosA": [0.75, 0.8, 0.9]})
        assert out.read_text() == (GOLDEN / "usd_rate_sweep.csv").read_text()

    def test_schema_file_matches_columns(self):
        schema = json.loads((Path(experiments.__file__).parent / "csv_schema.json").read_text())
        assert tuple(c["name"] for c in schema["columns"]) == CSV_COLUMNS

    def test_sweep_two_axes(self):
        results = sweep(ExperimentConfig("component-read", {"method": "breidbart", "slots": 1}, 50),
                        {"method": ["breidbart", "random-basis"], "slots": [1, 2]})
        assert len(results) == 4
        with pytest.raises(ConfigError):
            sweep(ExperimentConfig("usd-rate", {"cosA": 0.8}, 5), {})

    def test_usd_rate_band(self):
        r = run_experiment(ExperimentConfig("usd-rate", {"cosA": 0.8}, 20_000, 1))
        assert r.stats.within_band()


class TestCli:
    def test_formulas_probe_failure(self, capsys):
        assert main(["formulas", "eq12", "--m", "8", "--cos2A", "0.75"]) == 0
        assert capsys.readouterr().out.strip() == "0.656391084194"

    def test_ci_order_parity(self, capsys):
        assert main(["ci", "order", "--hex", "6996"]) == 0
        assert capsys.readouterr().out.strip() == "3"

    def test_ci_search_and_make(self, capsys):
        main(["ci", "search", "--n", "3", "--n0", "2"])
        assert capsys.readouterr().out.split() == ["69", "96"]
        main(["ci", "make", "--n", "4", "--n0", "1"])
        assert capsys.readouterr().out.strip() == "0ff0"
        main(["ci", "spectrum", "--hex", "6"])
        assert capsys.readouterr().out.split() == ["0", "0", "0", "4"]

    def test_run_protocol(self, capsys):
        rc = main(["run-protocol", "--scheme", "b92bc", "--n", "6", "--m", "5", "--cosA", "0.8", "--b", "1"])
        out = capsys.readouterr().out
        assert rc == 0 and out.strip().splitlines()[-1] == "Accept(1)"

    def test_attack_json(self, capsys):
        main(["attack", "usd-rate", "-p", "cosA=0.8", "--trials", "300", "--format", "json"])
        d = json.loads(capsys.readouterr().out)
        assert d["trials"] == 300 and d["experiment"] == "usd-rate"

    def test_global_flags_before_subcommand(self, capsys):
        main(["--seed", "4", "--trials", "200", "attack", "usd-rate", "-p", "cosA=0.8"])
        row = capsys.readouterr().out.splitlines()[1].split(",")
        assert row[2] == "200" and row[-1] == "4"

    def test_seed_env_override(self, capsys, monkeypatch):
        monkeypatch.setenv("QBC_SEED", "77")
        main(["attack", "usd-rate", "-p", "cosA=0.8", "--trials", "10", "--seed", "1"])
        assert capsys.readouterr().out.splitlines()[1].endswith(",77")

    def test_formulas_tables(self, capsys):
        main(["formulas", "concealing", "--n", "400", "--n0", "120", "--pA", "0.2"])
        lines = capsys.readouterr().out.splitlines()
        assert lines[0].startswith("n,n0,exact,dml") and lines[1].endswith("complement")
        main(["formulas", "binding-m", "--alpha", "5", "--cosA", "0.8"])
        assert "m_cos2_exponent" in capsys.readouterr().out

    def test_usage_error_exit_1(self):
        p = run_cli("frobnicate")
        assert p.returncode == 1 and "usage" in p.stderr
        assert run_cli("attack", "usd-rate", "--bogus-flag").returncode == 1

    def test_invalid_config_exit_1(self):
        p = run_cli("attack", "usd-rate", "-p", "cosA=0.6", "--trials", "5")
        assert p.returncode == 1 and "qbc:" in p.stderr

    def test_io_error_exit_2(self, tmp_path):
        p = run_cli("attack", "usd-rate", "-p", "cosA=0.8", "--trials", "5", "--out",
                    str(tmp_path / "missing" / "x.csv"))
        assert p.returncode == 2 and "I/O error" in p.stderr

    def test_serve_and_connect(self):
        server = subprocess.Popen([sys.executable, "-m", "qbc", "serve", "--port", "0", "--max-sessions", "1"],
                                  stdout=subprocess.PIPE, text=True)
        try:
            addr = server.stdout.readline().split()[-1]
            p = run_cli("connect", "--addr", addr, "--b", "0", "--seed", "8")
            assert p.returncode == 0 and p.stdout.strip().splitlines()[-1] == "Accept(0)"
            local = run_session(SessionConfig("b92bc", seed=8), 0)
            assert json.loads(p.stdout[: p.stdout.rindex("}") + 1]) == local.to_dict()
            assert server.wait(timeout=30) == 0
        finally:
            server.kill()

    def test_connect_to_truncating_server_fails(self):
        srv = socket.socket()
        srv.bind(("127.0.0.1", 0))
        srv.listen(1)

        def bad_server():
            conn, _ = srv.accept()
            conn.recv(65536)
            conn.sendall(b"\x00\x00\x01\x00{")
            conn.close()

        t = threading.Thread(target=bad_server)
        t.start()
        host, port = srv.getsockname()
        p = run_cli("connect", "--addr", f"{host}:{port}")
        t.join()
        srv.close()
        assert p.returncode != 0 and "truncated" in p.stderr
