"""
Counter-based seeding and trial aggregation.

Trial ``i`` of an experiment with master seed ``s`` always draws from
``numpy.random.SeedSequence(entropy=s, spawn_key=(i,))``: the SeedSequence
hash mixes the pair (s, i) into the PCG64 state. Results therefore depend
only on (config, master seed), never on how trials are split across workers.
"""

from __future__ import annotations

import math
from dataclasses import asdict, dataclass
from typing import Callable

import numpy as np

BAND_SIGMAS = 4.0

TrialFn = Callable[..., tuple[int, int]]


def trial_rng(master_seed: int, index: int) -> np.random.Generator:
    ss = np.random.SeedSequence(entropy=int(master_seed) & (2**64 - 1), spawn_key=(int(index),))
    return np.random.Generator(np.random.PCG64(ss))


def run_trials(fn: TrialFn, params: dict, master_seed: int, start: int, stop: int) -> tuple[int, int]:
    """Run trials ``start <= i < stop``; return summed (successes, units)."""
    succ = units = 0
    for i in range(start, stop):
        s, u = fn(trial_rng(master_seed, i), **params)
        succ += int(s)
        units += int(u)
    return succ, units


def binomial_se(p: float, trials: int) -> float:
    return math.sqrt(max(p * (1.0 - p), 0.0) / trials) if trials else math.nan


def z_score(mean: float, predicted: float, trials: int) -> float:
    """(mean - predicted) / sqrt(predicted (1 - predicted) / trials)."""
    se = binomial_se(predicted, trials)
    if se == 0.0:
        return 0.0 if mean == predicted else math.copysign(math.inf, mean - predicted)
    return (mean - predicted) / se


@dataclass
class TrialStats:
    trials: int
    successes: int
    mean: float
    stderr: float
    predicted: float | None
    z_score: float | None
    duration: float = 0.0

    @classmethod
    def from_counts(cls, successes: int, trials: int, predicted: float | None = None, duration: float = 0.0):
        mean = successes / trials if trials else math.nan
        z = None if predicted is None else z_score(mean, predicted, trials)
        return cls(trials, successes, mean, binomial_se(mean, trials), predicted, z, duration)

    def within_band(self, sigmas: float = BAND_SIGMAS) -> bool:
        """|mean - predicted| within ``sigmas`` standard errors of the prediction."""
        return self.z_score is not None and abs(self.z_score) <= sigmas

    def as_dict(self) -> dict:
        return asdict(self)
