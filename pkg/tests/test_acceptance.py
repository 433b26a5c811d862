"""Acceptance criteria, one test per criterion.

Monte Carlo rows use 10^5 trials and a +-4 standard-error band around the
analytic prediction. Each test records a short detail string; the terminal
summary prints one PASS/FAIL line per criterion (see conftest.py).
"""

import itertools
import math
from fractions import Fraction

import numpy as np
import pytest

from qbc import adversary, analysis, boolfn, encode, qcore
from qbc.boolfn import BoolFn, make_ci_function
from qbc.harness import ExperimentConfig, run_experiment
from qbc.montecarlo import BAND_SIGMAS
from qbc.protocol import SessionConfig, ot_receive, ot_send, run_session
from qbc.qcore import BREIDBART_SUCCESS, make_state_pair

from oracles import ci_order_independence

TRIALS = 100_000
SEED = 2024


def attack(strategy_id, trials=TRIALS, seed=SEED, **params):
    return adversary.run_attack(strategy_id, trials, seed, **params)


def assert_band(report, record, label):
    record("detail", f"{label} {report.rate:.5f} vs {report.predicted:.5f}, z={report.z_score:+.2f}")
    assert abs(report.z_score) <= BAND_SIGMAS, f"{label}: z={report.z_score}"


@pytest.mark.criterion(1, "USD success 1 - cosA, zero misidentifications")
def test_usd_rate_and_zero_error(record_property):
    assert_band(attack("usd-rate", cosA=0.8), record_property, "p_usd")
    err = attack("usd-error", cosA=0.8, slots=10)
    record_property("detail", f"{err.trials} measurements, {err.successes} errors")
    assert err.trials == 10**6 and err.successes == 0


@pytest.mark.criterion(2, "four-state component recovery: random basis 0.75, Breidbart cos^2(pi/8)")
def test_component_recovery(record_property):
    rnd = attack("component-read", method="random-basis")
    assert rnd.predicted == 0.75
    assert_band(rnd, record_property, "random")
    bb = attack("component-read", method="breidbart")
    assert bb.predicted == pytest.approx(math.cos(math.pi / 8) ** 2, abs=1e-15)
    assert round(BREIDBART_SUCCESS, 4) == 0.8536
    assert_band(bb, record_property, "breidbart")


@pytest.mark.criterion(3, "probe attack on the two-state scheme fails at 1 - 0.875^8")
def test_probe_attack_failure(record_property):
    cfg = SessionConfig("b92bc", n=6, m=8, cosA=math.sqrt(0.75))
    report = adversary.alice_probe_attack_b92(cfg, target=1, trials=TRIALS, seed=SEED)
    failure = 1.0 - report.rate
    expected = 1.0 - 0.875**8
    assert report.breakdown["predicted_failure"] == pytest.approx(expected, abs=1e-15)
    se = math.sqrt(expected * (1 - expected) / report.trials)
    record_property("detail", f"failure {failure:.5f} vs {expected:.5f}, z={(failure - expected) / se:+.2f}")
    assert abs(failure - expected) <= BAND_SIGMAS * se
    worst = max(abs(analysis.probe_failure_binomial_sum(m, c) - (1 - ((1 + c * c) / 2) ** m))
                for m in range(1, 65) for c in (math.sqrt(0.55), math.sqrt(0.75), math.sqrt(0.95), 0.8))
    record_property("detail", f"identity max gap {worst:.1e} for m<=64")
    assert worst <= 1e-12


@pytest.mark.criterion(4, "four-state binding: uniform false basis (1/2)^m, probe-assisted 0.75 per string")
def test_bb84_binding(record_property):
    for m in (4, 8):
        r = attack("bb84-false-basis", n=6, m=m, strategy="uniform-false")
        assert r.predicted == 0.5**m
        assert_band(r, record_property, f"m={m}")
    probe = attack("bb84-false-basis", n=6, m=1, strategy="probe-collapse-assisted", per_string=True)
    assert probe.predicted == 0.75
    assert_band(probe, record_property, "probe per string")


@pytest.mark.criterion(5, "concealing: exact tail vs simulation, DML within 0.01 at n=400, dual readings")
def test_concealing(record_property):
    exact = analysis.concealing_exact(40, 30, 0.2)
    r = attack("concealing-count", n=40, n0=30, cosA=0.8)
    assert r.predicted == pytest.approx(exact, abs=1e-15)
    assert_band(r, record_property, "n0=30")
    # the n0=30 tail is within 1e-10 of one, so also test a point where the band has width
    assert_band(attack("concealing-count", n=40, n0=8, cosA=0.8), record_property, "n0=8")
    def gap(n0):
        return abs(analysis.concealing_dml(400, n0, 0.2) - analysis.concealing_exact(400, n0, 0.2))

    assert gap(120) <= 0.01
    # the tail region; within about one sigma of the mean (n0 <= 88) the
    # uncorrected normal approximation is off by up to 0.03 and is only reported
    worst = max(gap(n0) for n0 in range(90, 400))
    record_property("detail", f"dml gap {gap(120):.1e} at n0=120, {worst:.4f} over n0>=90")
    assert worst <= 0.01
    lines = [f"near-mean dml gap n0=80: {gap(80):.4f}", "n0 exact as_printed complement closer"]
    for n0 in (90, 100, 120):
        ex = analysis.concealing_exact(400, n0, 0.2)
        rd = analysis.concealing_asymptotic(400, n0, 0.2)
        lines.append(f"{n0} {ex:.6g} {rd.as_printed:.6g} {rd.complement:.6g} {rd.closer_to(ex)}")
    print("\n".join(lines))
    assert len(lines) == 5


@pytest.mark.criterion(6, "blob trace distance sinA/n, log-log slope -1")
def test_trace_distance(record_property):
    rng = np.random.default_rng(SEED)
    worst = 0.0
    for cosA in (0.72, 0.8, 0.9):
        pair = make_state_pair(cosA)
        for n in (1, 2, 5, 10, 37, 100):
            a, a2 = analysis.one_flip_pattern(4, n, rng)
            res = analysis.blob_trace_distance(pair, a, a2)
            for value in (res.analytic, res.numeric, analysis.trace_distance_bloch(cosA, n)):
                worst = max(worst, abs(value - pair.sinA / n))
    assert worst <= 1e-12
    pair = make_state_pair(0.8)
    ns = np.unique(np.round(np.logspace(1, 4, 25)).astype(int))
    d = [analysis.blob_trace_distance(pair, *analysis.one_flip_pattern(3, int(n))).numeric for n in ns]
    slope = np.polyfit(np.log(ns), np.log(d), 1)[0]
    record_property("detail", f"max gap {worst:.1e}, slope {slope:.6f}")
    assert abs(slope + 1) <= 0.01


@pytest.mark.criterion(7, "ci_order equals the independence oracle on all 2<=n<=4 functions; n=3 search")
def test_ci_toolkit(record_property):
    total = 0
    for n in range(2, 5):
        tables = boolfn.all_tables(n)
        expected = ci_order_independence(tables, n)
        got = np.array([boolfn.ci_order(BoolFn(n, t)) for t in tables])
        assert np.array_equal(got, expected), f"n={n}"
        total += len(tables)
    found = sorted(F.to_hex() for F in boolfn.search_ci(3, 2, True))
    record_property("detail", f"{total} functions checked, n=3 search {found}")
    assert total == 16 + 256 + 65536
    assert found == ["69", "96"]


@pytest.mark.criterion(8, "completeness: honest sessions accept, OT receipts never wrong")
def test_completeness(record_property):
    for scheme in ("b92bc", "bb84bc", "otbc"):
        r = attack("honest-session", trials=10_000, scheme=scheme, n=6, m=5)
        record_property("detail", f"{scheme} {r.successes}/{r.trials}")
        assert r.successes == r.trials == 10_000
    rng = np.random.default_rng(SEED)
    pair = make_state_pair(0.8)
    wrong = known = 0
    for _ in range(10_000):
        a = rng.integers(0, 2, size=16).astype(np.uint8)
        receipt = ot_receive(ot_send(a, pair), pair, rng)
        values = np.asarray(receipt.values)
        mask = values >= 0
        known += int(mask.sum())
        wrong += int(np.count_nonzero(values[mask] != a[mask]))
    record_property("detail", f"OT {known} known bits, {wrong} wrong")
    assert known > 0 and wrong == 0


def _bases():
    grid = np.linspace(0.0, math.pi, 7)
    phases = np.linspace(0.0, 2 * math.pi, 5, endpoint=False)
    for theta, phi in itertools.product(grid, phases):
        yield qcore.PureState([math.cos(theta), np.exp(1j * phi) * math.sin(theta)]).basis()
    yield qcore.BREIDBART_BASIS


def _unitaries():
    for a, b, c in itertools.product(np.linspace(0, 2 * math.pi, 4), repeat=3):
        yield np.array([[np.exp(1j * a) * math.cos(b), np.exp(1j * c) * math.sin(b)],
                        [-np.exp(-1j * c) * math.sin(b), np.exp(-1j * a) * math.cos(b)]])


@pytest.mark.criterion(9, "no-signaling: Bob's reduced state unchanged by any probe action")
def test_no_signaling(record_property):
    registers = {f"b92 cos2A={c2}": adversary.probe_register_b92(make_state_pair(math.sqrt(c2)))
                 for c2 in (0.55, 0.64, 0.75, 0.9)}
    registers.update({f"bb84 basis={b}": adversary.probe_register_bb84(b) for b in (0, 1)})
    registers["epr"] = adversary.epr_register()
    worst, checks = 0.0, 0
    for joint in registers.values():
        before = qcore.partial_trace(joint, "signal").matrix
        for basis in _bases():
            after = qcore.outcome_averaged_reduced(joint, "probe", basis, "signal").matrix
            worst = max(worst, float(np.abs(after - before).max()))
            checks += 1
        for U in _unitaries():
            rotated = qcore.JointState(np.kron(U, np.eye(2)) @ joint.amplitudes, joint.labels)
            after = qcore.partial_trace(rotated, "signal").matrix
            worst = max(worst, float(np.abs(after - before).max()))
            checks += 1
    record_property("detail", f"{checks} probe actions, max deviation {worst:.1e}")
    assert worst <= 1e-12


@pytest.mark.criterion(10, "posterior exactly 1/2 with at most n0 known components, linear masks n<=12")
def test_posterior_half(record_property):
    rng = np.random.default_rng(SEED)
    cases = 0
    for n in range(2, 13):
        for n0 in range(n):
            F = make_ci_function(n, n0)
            for k in range(n0 + 1):
                for _ in range(3):
                    pos = rng.permutation(n)[:k]
                    known = np.zeros((1, n), dtype=int)
                    values = np.zeros((1, n), dtype=int)
                    known[0, pos] = 1
                    values[0, pos] = rng.integers(0, 2, size=k)
                    post = adversary.string_posterior(F, known, values)
                    assert isinstance(post, Fraction) and post == Fraction(1, 2), (n, n0, pos)
                    cases += 1
    record_property("detail", f"{cases} observations on n<=12")


@pytest.mark.criterion(11, "entangled opening passes both ways; honest re-opening never seen")
def test_entangled_opening(record_property):
    for open_as in (0, 1):
        r = attack("epr-open", k=4, n=5, open_as=open_as)
        record_property("detail", f"open as {open_as}: {r.successes}/{r.trials}")
        assert r.successes == r.trials == TRIALS
    honest = attack("honest-reopen", k=4, n=5)
    record_property("detail", f"honest re-open {honest.successes}/{honest.trials} at kn=20")
    assert honest.successes == 0


@pytest.mark.criterion(12, "byte-identical CSV across worker count and transport")
def test_reproducibility(tmp_path, record_property):
    def csv_bytes(name, **kw):
        path = tmp_path / f"{name}.csv"
        run_experiment(ExperimentConfig(out=str(path), master_seed=SEED, **kw))
        return path.read_bytes()

    base = dict(experiment="usd-rate", params={"cosA": 0.8, "slots": 2}, trials=TRIALS)
    one, eight = csv_bytes("w1", workers=1, **base), csv_bytes("w8", workers=8, **base)
    assert one == eight
    sess = dict(experiment="honest-session", params={"scheme": "b92bc", "n": 6, "m": 5}, trials=2000)
    local, sock = csv_bytes("local", **sess), csv_bytes("socket", transport="socket", **sess)
    assert local == sock
    record_property("detail", "workers 1 vs 8 identical, in-process vs socket identical")
