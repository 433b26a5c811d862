"""
Seeded, parallel, reproducible Monte Carlo experiments.

Trial ``i`` always uses :func:`qbc.montecarlo.trial_rng` (master seed, i),
so the aggregate counts depend only on the experiment, its parameters and
the master seed. Workers receive contiguous index ranges and their
(successes, units) pairs are summed, which is order independent.

CSV rows have the columns in :data:`CSV_COLUMNS` (documented in
``csv_schema.json`` next to this module). Wall-clock time goes only into
the JSON summary so the CSV is byte-identical across runs.
"""

from __future__ import annotations

import csv
import inspect
import io
import itertools
import json
import time
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field
from pathlib import Path

from .. import adversary
from ..errors import ConfigError
from ..montecarlo import BAND_SIGMAS, TrialStats, run_trials
from ..protocol import SessionConfig
from . import transport

CSV_COLUMNS = ("experiment", "params", "trials", "successes", "mean", "stderr", "predicted", "z", "seed")
TRANSPORTS = ("in-process", "socket")
SOCKET_EXPERIMENTS = ("honest-session", "coin-flip")


def trial_remote_session(rng, addr, scheme: str, n: int, m: int, cosA: float | None = 0.8):
    """Socket twin of :func:`qbc.adversary.trial_honest_session`."""
    cfg = SessionConfig(scheme, n=n, m=m, cosA=cosA if scheme != "bb84bc" else None)
    b = int(rng.integers(0, 2))
    tr = transport.remote_session(tuple(addr), cfg, b, seed=int(rng.integers(0, 2**63)))
    return int(tr.verdict.accepted and tr.verdict.bit == b), 1


def trial_remote_coin(rng, addr, scheme: str, n: int, m: int, cosA: float | None = 0.8):
    cfg = SessionConfig(scheme, n=n, m=m, cosA=cosA if scheme != "bb84bc" else None)
    tr = transport.remote_session(tuple(addr), cfg, 0, seed=int(rng.integers(0, 2**63)), coin=True)
    return int(tr.result == 1), 1


_REMOTE = {"honest-session": trial_remote_session, "coin-flip": trial_remote_coin}


@dataclass
class ExperimentConfig:
    experiment: str
    params: dict = field(default_factory=dict)
    trials: int = 100_000
    master_seed: int = 0
    out: str | None = None
    fmt: str = "csv"
    transport: str = "in-process"
    addr: tuple[str, int] | None = None
    workers: int = 1
    sigmas: float = BAND_SIGMAS

    def __post_init__(self):
        if self.experiment not in adversary.STRATEGIES:
            raise ConfigError(f"unknown experiment {self.experiment!r}; choose from {sorted(adversary.STRATEGIES)}")
        if self.trials < 1:
            raise ConfigError(f"trials must be >= 1, got {self.trials}")
        if self.workers < 1:
            raise ConfigError(f"workers must be >= 1, got {self.workers}")
        if self.fmt not in ("csv", "json"):
            raise ConfigError(f"format must be csv or json, got {self.fmt!r}")
        if self.transport not in TRANSPORTS:
            raise ConfigError(f"transport must be one of {TRANSPORTS}, got {self.transport!r}")
        if self.transport == "socket" and self.experiment not in SOCKET_EXPERIMENTS:
            raise ConfigError(f"socket transport supports only {SOCKET_EXPERIMENTS}")
        fn, _ = adversary.STRATEGIES[self.experiment]
        try:
            inspect.signature(fn).bind(None, **self.params)
        except TypeError as exc:
            raise ConfigError(f"bad parameters for {self.experiment}: {exc}") from exc

    def trial_fn(self):
        if self.transport == "socket":
            return _REMOTE[self.experiment]
        return adversary.STRATEGIES[self.experiment][0]

    def trial_params(self) -> dict:
        if self.transport == "socket":
            return {"addr": self.addr, **self.params}
        return dict(self.params)


@dataclass
class ExperimentResult:
    config: ExperimentConfig
    stats: TrialStats

    def row(self) -> dict:
        s = self.stats
        return {
            "experiment": self.config.experiment,
            "params": adversary.format_params(self.config.params),
            "trials": s.trials,
            "successes": s.successes,
            "mean": f"{s.mean:.10f}",
            "stderr": f"{s.stderr:.10f}",
            "predicted": "" if s.predicted is None else f"{s.predicted:.10f}",
            "z": "" if s.z_score is None else f"{s.z_score:.6f}",
            "seed": self.config.master_seed,
        }

    def summary(self) -> dict:
        c = self.config
        return {
            "experiment": c.experiment,
            "params": c.params,
            "master_seed": c.master_seed,
            "transport": c.transport,
            "workers": c.workers,
            "within_band": self.stats.within_band(c.sigmas),
            "sigmas": c.sigmas,
            **self.stats.as_dict(),
        }


def _chunks(trials: int, workers: int) -> list[tuple[int, int]]:
    n_chunks = workers * 4 if workers > 1 else 1
    size = -(-trials // n_chunks)
    return [(a, min(a + size, trials)) for a in range(0, trials, size)]


def _run_chunk(args):
    fn, params, seed, start, stop = args
    return run_trials(fn, params, seed, start, stop)


def count_successes(cfg: ExperimentConfig) -> tuple[int, int]:
    """Summed (successes, units) over all trials, split across ``cfg.workers`` processes."""
    fn, params = cfg.trial_fn(), cfg.trial_params()
    jobs = [(fn, params, cfg.master_seed, a, b) for a, b in _chunks(cfg.trials, cfg.workers)]
    if cfg.workers == 1:
        parts = [_run_chunk(j) for j in jobs]
    else:
        with ProcessPoolExecutor(max_workers=cfg.workers) as pool:
            parts = list(pool.map(_run_chunk, jobs))
    return sum(p[0] for p in parts), sum(p[1] for p in parts)


def _execute(cfg: ExperimentConfig) -> ExperimentResult:
    t0 = time.perf_counter()
    if cfg.transport == "socket" and cfg.addr is None:
        scheme = cfg.params.get("scheme", "b92bc")
        server_cfg = SessionConfig(scheme, n=cfg.params["n"], m=cfg.params["m"],
                                   cosA=cfg.params.get("cosA", 0.8) if scheme != "bb84bc" else None)
        with transport.Loopback(server_cfg) as srv:
            cfg.addr = srv.address
            try:
                succ, units = count_successes(cfg)
            finally:
                cfg.addr = None
    else:
        succ, units = count_successes(cfg)
    predicted = adversary.predict(cfg.experiment, **cfg.params)
    stats = TrialStats.from_counts(succ, units, predicted, time.perf_counter() - t0)
    return ExperimentResult(cfg, stats)


def rows_to_csv(rows: list[dict]) -> str:
    buf = io.StringIO()
    w = csv.DictWriter(buf, fieldnames=CSV_COLUMNS, lineterminator="\n")
    w.writeheader()
    w.writerows(rows)
    return buf.getvalue()


def write_outputs(out: str | Path, rows: list[dict], summary) -> tuple[Path, Path]:
    """Write ``out`` (CSV) and ``out`` with a .json suffix (summary)."""
    csv_path = Path(out)
    json_path = csv_path.with_suffix(".json")
    csv_path.write_text(rows_to_csv(rows), encoding="utf-8")
    json_path.write_text(json.dumps(summary, indent=2, default=str) + "\n", encoding="utf-8")
    return csv_path, json_path


def run_experiment(cfg: ExperimentConfig) -> ExperimentResult:
    """Run, then write CSV and JSON artifacts if ``cfg.out`` is set."""
    result = _execute(cfg)
    if cfg.out:
        write_outputs(cfg.out, [result.row()], result.summary())
    return result


def sweep(base: ExperimentConfig, grid: dict[str, list]) -> list[ExperimentResult]:
    """One experiment per point of the Cartesian product of ``grid`` (one or two axes)."""
    if not 1 <= len(grid) <= 2:
        raise ConfigError("a sweep takes one or two grid parameters")
    names = list(grid)
    results = []
    for values in itertools.product(*(grid[k] for k in names)):
        params = {**base.params, **dict(zip(names, values))}
        cfg = ExperimentConfig(base.experiment, params, base.trials, base.master_seed, None, base.fmt,
                               base.transport, base.addr, base.workers, base.sigmas)
        results.append(_execute(cfg))
    if base.out:
        write_outputs(base.out, [r.row() for r in results], [r.summary() for r in results])
    return results
