"""Parameter sweeps over independent runs.

Replicate r of every grid point draws arrivals from stream (seed, r), so grid
points are compared on common random numbers and a result never depends on
which worker ran it or in what order.
"""

from __future__ import annotations

from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass
from typing import Sequence

import numpy as np

from .matching import simulate
from .model import Scenario

SWEEP_PARAMS = ("beta", "m", "horizon", "seed")


@dataclass(frozen=True)
class SweepRow:
    value: float
    avg_reward: float
    avg_holding_cost: float
    avg_profit: float
    mean_abs_Q: float
    violations: int
    replicates: int


def _one(args) -> tuple[float, float, float, float, int]:
    s, stream = args
    r = simulate(s, stream=stream)
    return r.avg_reward, r.avg_holding_cost, r.mean_abs_Q, r.Qhat0[-1], r.total_violations


def sweep(
    s: Scenario,
    param: str,
    values: Sequence[float],
    replicates: int = 1,
    workers: int = 1,
) -> list[SweepRow]:
    if param not in SWEEP_PARAMS:
        raise ValueError(f"cannot sweep {param!r}; choose from {', '.join(SWEEP_PARAMS)}")
    vals = sorted(float(v) for v in values)
    if param == "beta" and any(v <= 0 for v in vals):
        raise ValueError("betas must be positive")
    cast = int if param in ("m", "horizon", "seed") else float
    jobs = [(s.with_(**{param: cast(v)}), r) for v in vals for r in range(replicates)]
    if workers > 1:
        with ProcessPoolExecutor(max_workers=workers) as pool:
            out = list(pool.map(_one, jobs))
    else:
        out = [_one(j) for j in jobs]
    rows = []
    for i, v in enumerate(vals):
        chunk = np.array([o[:3] for o in out[i * replicates : (i + 1) * replicates]])
        viol = sum(o[4] for o in out[i * replicates : (i + 1) * replicates])
        rew, hold, q = chunk.mean(axis=0)
        rows.append(SweepRow(v, float(rew), float(hold), float(rew - hold), float(q), int(viol), replicates))
    return rows


def beta_sweep(s: Scenario, betas: Sequence[float], replicates: int = 1, workers: int = 1) -> list[SweepRow]:
    return sweep(s, "beta", betas, replicates, workers)


def sweep_rows(rows: list[SweepRow], param: str = "beta") -> tuple[list[str], list[list]]:
    header = [param, "avg_reward", "avg_holding_cost", "avg_profit", "mean_abs_Q", "violations", "replicates"]
    body = [
        [r.value, r.avg_reward, r.avg_holding_cost, r.avg_profit, r.mean_abs_Q, r.violations, r.replicates]
        for r in rows
    ]
    return header, body
