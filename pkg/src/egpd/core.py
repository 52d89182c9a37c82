"""EGPD control for general networks with constrained (>= 0) and free (any sign) queues.

Each slot the controller picks the control k maximising
``[grad H(X) - beta * gamma * Q] . bbar(k)``, then queues move by the
realised increment (constrained ones truncated at zero) and X is updated as a
geometric running average of the nominal increments.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Optional

import numpy as np

from .model import NetworkModel, UtilitySpec

# scores within this fraction of their magnitude count as ties
REL_TIE_TOL = 1e-12


class ControlError(ValueError):
    pass


@dataclass(frozen=True, eq=False)
class NetState:
    q: np.ndarray
    x: np.ndarray
    t: int = 0


@dataclass(frozen=True, eq=False)
class Decision:
    control: int
    score_vector: np.ndarray
    ties: tuple[int, ...]


def argmax_with_ties(scores: np.ndarray, scale: float) -> tuple[int, tuple[int, ...]]:
    """Lowest-index maximiser; scores within ``REL_TIE_TOL * scale`` of the max tie."""
    best = scores.max()
    tol = REL_TIE_TOL * max(1.0, scale)
    ties = np.flatnonzero(scores >= best - tol)
    return int(ties[0]), tuple(int(k) for k in ties)


def _weights(state: NetState, utility: UtilitySpec, beta: float, gamma: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    g = utility.gradient(state.x)
    bad = np.flatnonzero(~np.isfinite(g))
    if bad.size:
        raise ControlError(f"utility gradient is not finite at coordinate {int(bad[0])}")
    pen = beta * gamma * state.q
    return g - pen, np.abs(g) + np.abs(pen)


def select_control(
    state: NetState,
    net: NetworkModel,
    utility: UtilitySpec,
    beta: float,
    gamma: Optional[np.ndarray] = None,
    bbar: Optional[np.ndarray] = None,
) -> Decision:
    gamma = np.ones(net.n_nodes) if gamma is None else np.asarray(gamma, float)
    bbar = net.mean_increments if bbar is None else bbar
    weights, mags = _weights(state, utility, beta, gamma)
    scores = bbar @ weights
    scale = float((np.abs(bbar) @ mags).max())
    k, ties = argmax_with_ties(scores, scale)
    return Decision(k, scores, ties)


def step(
    state: NetState,
    net: NetworkModel,
    decision: Decision,
    rng: Optional[np.random.Generator] = None,
    beta: float = 0.01,
    arrivals: Optional[np.ndarray] = None,
) -> NetState:
    """Advance one slot under ``decision``. ``arrivals`` overrides sampling
    (used to drive two engines with one random stream)."""
    ctrl = net.controls[decision.control]
    lam = ctrl.arrivals.sample(rng, 1)[0] if arrivals is None else np.asarray(arrivals, float)
    mu = ctrl.mu
    nc = net.n_constrained
    q = state.q - mu
    q[:nc] = np.maximum(q[:nc], 0.0)
    q = q + lam
    x = (1.0 - beta) * state.x + beta * (lam - mu)
    return NetState(q, x, state.t + 1)


@dataclass
class RunResult:
    trace: list[NetState]
    counts: np.ndarray  # activations per control
    controls: np.ndarray  # chosen control per slot
    score_max: np.ndarray  # max score per slot
    stride: int = 1

    @property
    def final(self) -> NetState:
        return self.trace[-1]


def run(
    net: NetworkModel,
    utility: UtilitySpec,
    beta: float,
    gamma=None,
    horizon: int = 1000,
    seed: int = 0,
    x0=None,
    q0=None,
    stride: int = 1,
    rng: Optional[np.random.Generator] = None,
) -> RunResult:
    """Run EGPD for ``horizon`` slots; the trace keeps every ``stride``-th state
    plus the final one."""
    N = net.n_nodes
    gamma = np.ones(N) if gamma is None else np.asarray(gamma, float)
    x = np.zeros(N) if x0 is None else np.asarray(x0, float).copy()
    q = np.zeros(N) if q0 is None else np.asarray(q0, float).copy()
    if np.any(q[: net.n_constrained] < 0):
        raise ControlError("initial constrained queues must be nonnegative")
    rng = np.random.default_rng(seed) if rng is None else rng
    bbar = net.mean_increments
    K = bbar.shape[0]
    state = NetState(q, x, 0)
    trace = [state]
    counts = np.zeros(K, dtype=np.int64)
    chosen = np.empty(horizon, dtype=np.int64)
    smax = np.empty(horizon)
    # all controls usually share one arrival law; sample per slot from the chosen one
    shared = all(c.arrivals is net.controls[0].arrivals for c in net.controls)
    pre = net.controls[0].arrivals.sample(rng, horizon) if shared and horizon else None
    for t in range(horizon):
        d = select_control(state, net, utility, beta, gamma, bbar)
        lam = pre[t] if pre is not None else None
        state = step(state, net, d, rng, beta, arrivals=lam)
        if np.any(state.q[: net.n_constrained] < 0):
            raise AssertionError("constrained queue went negative")
        counts[d.control] += 1
        chosen[t] = d.control
        smax[t] = d.score_vector[d.control]
        if (t + 1) % stride == 0 or t + 1 == horizon:
            trace.append(state)
    return RunResult(trace, counts, chosen, smax, stride)


def trace_rows(result: RunResult, n_nodes: int) -> tuple[list[str], list[list]]:
    """CSV header and rows: t, control, q_1..q_N, x_1..x_N, score_max."""
    header = ["t", "control"] + [f"q_{n + 1}" for n in range(n_nodes)] + [f"x_{n + 1}" for n in range(n_nodes)] + ["score_max"]
    rows = []
    for st in result.trace[1:]:
        i = st.t - 1
        rows.append([st.t, int(result.controls[i]), *st.q.tolist(), *st.x.tolist(), float(result.score_max[i])])
    return header, rows
