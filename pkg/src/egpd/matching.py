"""Virtual/physical matching control.

The virtual system lets queues go negative (a shortage) and activates
matchings with the greedy primal-dual rule; each nonempty virtual activation
becomes an incomplete matching that waits in a FIFO until the physical items
it needs are present.
"""

from __future__ import annotations

from collections import deque
from dataclasses import dataclass, field
from typing import Optional

import numpy as np

from . import core
from .core import NetState, argmax_with_ties
from .model import Control, NetworkModel, Scenario, UtilitySpec
from .rng import make_rng


class MatchingError(ValueError):
    pass


@dataclass(frozen=True, eq=False)
class VirtualState:
    Q: np.ndarray  # item queues, any sign
    X: np.ndarray  # running reward averages per matching
    t: int = 0

    @classmethod
    def zero(cls, s: Scenario) -> "VirtualState":
        return cls(np.zeros(s.n_items), np.zeros(s.n_matchings), 0)


@dataclass(frozen=True, eq=False)
class PhysicalState:
    Qhat: np.ndarray
    pending: tuple[int, ...] = ()

    @property
    def Qhat0(self) -> int:
        return len(self.pending)

    @classmethod
    def zero(cls, s: Scenario) -> "PhysicalState":
        return cls(np.zeros(s.n_items), ())


@dataclass
class SchemeMetrics:
    virtual_counts: np.ndarray
    completed_counts: np.ndarray
    reward: float = 0.0  # from completed matchings
    virtual_reward: float = 0.0
    holding_cost: float = 0.0

    @classmethod
    def zero(cls, s: Scenario) -> "SchemeMetrics":
        J = s.n_matchings
        return cls(np.zeros(J, dtype=np.int64), np.zeros(J, dtype=np.int64))

    @property
    def profit(self) -> float:
        return self.reward - self.holding_cost

    def __add__(self, other: "SchemeMetrics") -> "SchemeMetrics":
        return SchemeMetrics(
            self.virtual_counts + other.virtual_counts,
            self.completed_counts + other.completed_counts,
            self.reward + other.reward,
            self.virtual_reward + other.virtual_reward,
            self.holding_cost + other.holding_cost,
        )


# --------------------------------------------------------------------------
# single-step operations


def matching_scores(v: VirtualState, s: Scenario) -> tuple[np.ndarray, float]:
    """Score of every matching and the magnitude used for tie detection."""
    g = s.utility.gradient(v.X)
    bad = np.flatnonzero(~np.isfinite(g))
    if bad.size:
        raise MatchingError(f"utility gradient is not finite at matching {int(bad[0])}")
    gw = g * s.rewards
    pen = s.beta * s.gamma_vec * v.Q
    mu = s.mu
    scores = gw + mu @ pen
    scale = float((np.abs(gw) + np.abs(mu) @ np.abs(pen)).max())
    return scores, scale


def select_matching(v: VirtualState, s: Scenario) -> int:
    """argmax_j  dG/dX_j * w_j + beta * sum_i gamma_i Q_i mu_i(j), lowest index on ties."""
    scores, scale = matching_scores(v, s)
    return argmax_with_ties(scores, scale)[0]


def virtual_step(v: VirtualState, j: int, lam, s: Scenario) -> VirtualState:
    Q = v.Q + np.asarray(lam, float) - s.mu[j]
    if s.beta >= 2 and s.utility.is_linear:
        # |1 - beta| > 1 makes X diverge; a linear rule never reads it (nan, as in simulate)
        return VirtualState(Q, np.full_like(v.X, np.nan), v.t)
    X = (1.0 - s.beta) * v.X
    X[j] += s.beta * s.rewards[j]
    return VirtualState(Q, X, v.t)


def _completable(Qhat: np.ndarray, mu_j: np.ndarray) -> bool:
    # coordinates with mu <= 0 never block completion
    return bool(np.all((mu_j <= 0) | (Qhat >= mu_j)))


def complete_one(p: PhysicalState, s: Scenario, policy: Optional[str] = None) -> tuple[PhysicalState, Optional[int]]:
    """Complete at most one pending matching.

    ``fcfs``: the first completable entry in FIFO order. ``cost-priority``: the
    completable entry with the largest holding-cost content c . mu(j), earliest
    first among equals.
    """
    policy = policy or s.completion_policy
    mu = s.mu
    best_pos = None
    best_val = -np.inf
    for pos, j in enumerate(p.pending):
        if not _completable(p.Qhat, mu[j]):
            continue
        if policy == "fcfs":
            best_pos = pos
            break
        val = float(s.costs @ mu[j])
        if val > best_val:
            best_pos, best_val = pos, val
    if best_pos is None:
        return p, None
    j = p.pending[best_pos]
    pending = p.pending[:best_pos] + p.pending[best_pos + 1 :]
    return PhysicalState(p.Qhat - mu[j], pending), j


def scheme_step(
    v: VirtualState,
    p: PhysicalState,
    s: Scenario,
    rng: Optional[np.random.Generator] = None,
    arrivals=None,
    exhaustive: bool = True,
) -> tuple[VirtualState, PhysicalState, SchemeMetrics]:
    """One slot: m rounds of (virtual activation, completion), then one batch
    of arrivals added to both systems. Each round completes at most one pending
    matching; ``exhaustive=True`` keeps completing until nothing is completable."""
    lam = s.arrivals.sample(rng, 1)[0] if arrivals is None else np.asarray(arrivals, float)
    delta = SchemeMetrics.zero(s)
    w = s.rewards
    zero = np.zeros(s.n_items)
    for _ in range(s.m):
        j = select_matching(v, s)
        v = virtual_step(v, j, zero, s)
        delta.virtual_counts[j] += 1
        delta.virtual_reward += w[j]
        if j != 0:
            p = PhysicalState(p.Qhat, p.pending + (j,))
        while True:
            p, done = complete_one(p, s)
            if done is None:
                break
            delta.completed_counts[done] += 1
            delta.reward += w[done]
            if not exhaustive:
                break
    v = VirtualState(v.Q + lam, v.X, v.t + 1)
    p = PhysicalState(p.Qhat + lam, p.pending)
    delta.holding_cost = float(s.costs @ p.Qhat)
    return v, p, delta


def queue_relation_violations(v: VirtualState, p: PhysicalState, s: Scenario, tol: float = 1e-9) -> list[str]:
    """Check the virtual/physical queue relations; returns violated relations."""
    Q = v.Q
    neg = np.maximum(-Q, 0.0).sum()
    pos = np.maximum(Q, 0.0).sum()
    out = []
    if p.Qhat0 > neg + tol:
        out.append("pending count exceeds total shortage")
    if p.Qhat.sum() > pos + s.mu_star * neg + tol:
        out.append("physical total exceeds surplus + mu* x shortage")
    pend = np.zeros(s.n_items)
    for j in p.pending:
        pend += s.mu[j]
    if np.abs(p.Qhat - Q - pend).max(initial=0.0) > tol:
        out.append("conservation Qhat - Q = sum of pending mu broken")
    if np.any(p.Qhat < -tol):
        out.append("physical queue negative")
    return out


# --------------------------------------------------------------------------
# fast simulation


@dataclass
class SimulationResult:
    scenario: Scenario
    horizon: int
    virtual_counts: np.ndarray  # (T+1, J) cumulative
    completed_counts: np.ndarray  # (T+1, J) cumulative
    reward: np.ndarray  # (T+1,) cumulative completed reward
    virtual_reward: np.ndarray  # (T+1,)
    holding_cost: np.ndarray  # (T+1,) cumulative
    Q: np.ndarray  # (T+1, I) at slot boundaries
    Qhat: np.ndarray  # (T+1, I)
    Qhat0: np.ndarray  # (T+1,)
    sum_X: np.ndarray  # (T+1,) sum_j X_j, reward per decision round; nan when beta >= 2
    final_virtual: VirtualState
    final_physical: PhysicalState
    violations: dict[str, int] = field(default_factory=dict)
    checks: int = 0

    def completed_rates(self, start: int = 0, end: Optional[int] = None) -> np.ndarray:
        end = self.horizon if end is None else end
        return (self.completed_counts[end] - self.completed_counts[start]) / (end - start)

    def virtual_rates(self, start: int = 0, end: Optional[int] = None) -> np.ndarray:
        end = self.horizon if end is None else end
        return (self.virtual_counts[end] - self.virtual_counts[start]) / (end - start)

    @property
    def avg_reward(self) -> float:
        return float(self.reward[-1] / self.horizon)

    @property
    def avg_holding_cost(self) -> float:
        return float(self.holding_cost[-1] / self.horizon)

    @property
    def avg_profit(self) -> float:
        return self.avg_reward - self.avg_holding_cost

    @property
    def mean_abs_Q(self) -> float:
        return float(np.abs(self.Q[1:]).sum(axis=1).mean())

    @property
    def total_violations(self) -> int:
        return int(sum(self.violations.values()))

    def metrics_rows(self, stride: int = 1) -> tuple[list[str], list[list]]:
        s = self.scenario
        lab = s.matching_labels()
        header = (
            ["t"]
            + [f"virtual_rate_{x}" for x in lab]
            + [f"completed_rate_{x}" for x in lab]
            + ["avg_reward", "internal_avg_reward", "avg_holding_cost", "avg_profit"]
            + [f"Q_{x}" for x in s.item_labels]
            + [f"Qhat_{x}" for x in s.item_labels]
            + ["Qhat0"]
        )
        rows = []
        for t in range(stride, self.horizon + 1, stride):
            r = self.reward[t] / t
            h = self.holding_cost[t] / t
            rows.append(
                [t]
                + (self.virtual_counts[t] / t).tolist()
                + (self.completed_counts[t] / t).tolist()
                + [r, s.m * float(self.sum_X[t]), h, r - h]
                + self.Q[t].tolist()
                + self.Qhat[t].tolist()
                + [int(self.Qhat0[t])]
            )
        return header, rows


def sample_arrivals(s: Scenario, rng: np.random.Generator, horizon: int) -> np.ndarray:
    """(horizon, I) arrivals honouring scheduled rate changes; one draw call per segment."""
    bounds = [0] + [min(slot, horizon) for slot, _ in s.rate_changes] + [horizon]
    models = [s.arrivals] + [m for _, m in s.rate_changes]
    parts = []
    for (a, b), model in zip(zip(bounds[:-1], bounds[1:]), models):
        if b > a:
            parts.append(model.sample(rng, b - a))
    return np.vstack(parts) if parts else np.zeros((0, s.n_items))


class _Pending:
    """Incomplete-matching FIFO stored as one deque of sequence numbers per type.

    The first completable entry in global FIFO order is the smallest head
    sequence number among completable types, so a scan costs O(J) instead of
    O(queue length).
    """

    def __init__(self, J: int):
        self.queues = [deque() for _ in range(J)]
        self.seq = 0

    def push(self, j: int) -> None:
        self.queues[j].append(self.seq)
        self.seq += 1

    def counts(self) -> np.ndarray:
        return np.array([len(q) for q in self.queues])

    def ordered(self) -> tuple[int, ...]:
        items = [(n, j) for j, q in enumerate(self.queues) for n in q]
        return tuple(j for _, j in sorted(items))


def simulate(
    s: Scenario,
    seed: Optional[int] = None,
    horizon: Optional[int] = None,
    stream: int = 0,
    arrivals: Optional[np.ndarray] = None,
    check_invariants: bool = True,
    exhaustive: bool = True,
) -> SimulationResult:
    """Run the virtual/physical scheme for ``horizon`` slots.

    Same semantics as repeated ``scheme_step`` calls (tested), but the pending
    FIFO is indexed by matching type and vectors are plain lists.
    """
    T = s.horizon if horizon is None else horizon
    seed = s.seed if seed is None else seed
    if arrivals is None:
        arrivals = sample_arrivals(s, make_rng(seed, stream), T)
    I, J, m = s.n_items, s.n_matchings, s.m
    mu = s.mu
    w = s.rewards.tolist()
    beta = s.beta
    gamma = s.gamma_vec.tolist()
    costs = s.costs.tolist()
    sparse = [[(i, float(mu[j, i])) for i in range(I) if mu[j, i] != 0] for j in range(J)]
    blocking = [[(i, float(mu[j, i])) for i in range(I) if mu[j, i] > 0] for j in range(J)]
    cost_content = [float(s.costs @ mu[j]) for j in range(J)]
    fcfs = s.completion_policy == "fcfs"
    linear = s.utility.is_linear
    # |1 - beta| >= 1 makes X diverge; linear rules never read X, so stop tracking it
    track_x = beta < 2.0
    if not (linear or track_x):
        raise MatchingError("running average X diverges for beta >= 2; a nonlinear utility needs beta < 2")
    gw_const = (s.utility.gradient(np.zeros(J)) * s.rewards).tolist() if linear else None
    mu_star = s.mu_star

    Q = [0.0] * I
    Qhat = [0.0] * I
    X = np.zeros(J)
    pending = _Pending(J)
    vcnt = [0] * J
    ccnt = [0] * J
    cum_r = cum_vr = cum_h = 0.0

    out_v = np.zeros((T + 1, J), dtype=np.int64)
    out_c = np.zeros((T + 1, J), dtype=np.int64)
    out_r = np.zeros(T + 1)
    out_vr = np.zeros(T + 1)
    out_h = np.zeros(T + 1)
    out_Q = np.zeros((T + 1, I))
    out_Qh = np.zeros((T + 1, I))
    out_Q0 = np.zeros(T + 1, dtype=np.int64)
    out_X = np.zeros(T + 1)
    viol = {"pending_bound": 0, "physical_bound": 0, "conservation": 0, "dominance": 0, "nonnegative": 0}
    checks = 0

    def check(after_arrivals: bool) -> None:
        nonlocal checks
        checks += 1
        pend = [0.0] * I
        n_pending = 0
        for j in range(1, J):
            n = len(pending.queues[j])
            if n:
                n_pending += n
                for i, a in sparse[j]:
                    pend[i] += n * a
        neg = pos = tot = 0.0
        for i in range(I):
            q, qh = Q[i], Qhat[i]
            if abs(qh - q - pend[i]) > 1e-9:
                viol["conservation"] += 1
            if q > qh + 1e-9:
                viol["dominance"] += 1
            if qh < -1e-9:
                viol["nonnegative"] += 1
            if q < 0:
                neg -= q
            else:
                pos += q
            tot += qh
        if not after_arrivals:
            if n_pending > neg + 1e-9:
                viol["pending_bound"] += 1
            if tot > pos + mu_star * neg + 1e-9:
                viol["physical_bound"] += 1

    for t in range(T):
        for _ in range(m):
            if linear:
                gw = gw_const
            else:
                g = s.utility.gradient(X)
                if not np.all(np.isfinite(g)):
                    raise MatchingError("utility gradient is not finite")
                gw = (g * s.rewards).tolist()
            pen = [beta * gamma[i] * Q[i] for i in range(I)]
            scores = []
            scale = 0.0
            for j in range(J):
                sc = gw[j]
                mag = abs(sc)
                for i, a in sparse[j]:
                    sc += a * pen[i]
                    mag += abs(a * pen[i])
                scores.append(sc)
                if mag > scale:
                    scale = mag
            best = max(scores)
            tol = core.REL_TIE_TOL * max(1.0, scale)
            j = next(k for k in range(J) if scores[k] >= best - tol)
            for i, a in sparse[j]:
                Q[i] -= a
            if track_x:
                X *= 1.0 - beta
                X[j] += beta * w[j]
            vcnt[j] += 1
            cum_vr += w[j]
            if j != 0:
                pending.push(j)
            # one completion per round unless exhaustive
            while True:
                pick = -1
                pick_key = None
                for k in range(1, J):
                    qk = pending.queues[k]
                    if not qk:
                        continue
                    if any(Qhat[i] < a for i, a in blocking[k]):
                        continue
                    key = (qk[0],) if fcfs else (-cost_content[k], qk[0])
                    if pick_key is None or key < pick_key:
                        pick, pick_key = k, key
                if pick < 0:
                    break
                pending.queues[pick].popleft()
                for i, a in sparse[pick]:
                    Qhat[i] -= a
                ccnt[pick] += 1
                cum_r += w[pick]
                if not exhaustive:
                    break
            if check_invariants:
                check(after_arrivals=False)
        lam = arrivals[t]
        for i in range(I):
            Q[i] += lam[i]
            Qhat[i] += lam[i]
        cum_h += sum(costs[i] * Qhat[i] for i in range(I))
        if check_invariants:
            check(after_arrivals=True)
        k = t + 1
        out_v[k] = vcnt
        out_c[k] = ccnt
        out_r[k] = cum_r
        out_vr[k] = cum_vr
        out_h[k] = cum_h
        out_Q[k] = Q
        out_Qh[k] = Qhat
        out_Q0[k] = sum(len(q) for q in pending.queues)
        out_X[k] = X.sum() if track_x else np.nan

    return SimulationResult(
        scenario=s,
        horizon=T,
        virtual_counts=out_v,
        completed_counts=out_c,
        reward=out_r,
        virtual_reward=out_vr,
        holding_cost=out_h,
        Q=out_Q,
        Qhat=out_Qh,
        Qhat0=out_Q0,
        sum_X=out_X,
        final_virtual=VirtualState(np.array(Q), X.copy(), T),
        final_physical=PhysicalState(np.array(Qhat), pending.ordered()),
        violations=viol,
        checks=checks,
    )


# --------------------------------------------------------------------------
# mapping into the general network model


@dataclass(frozen=True, eq=False)
class MappedNetwork:
    """Matchings become controls; one constrained utility node per matching
    (never receives input) followed by one free node per item type. Time is
    counted in decision rounds, so item arrivals per round have mean alpha/m."""

    net: NetworkModel
    utility: UtilitySpec
    gamma: np.ndarray
    c: float
    m: int
    n_matchings: int
    n_items: int

    def embed(self, v: VirtualState, item_x=None) -> NetState:
        J = self.n_matchings
        x_items = np.zeros(self.n_items) if item_x is None else np.asarray(item_x, float)
        x = np.concatenate([v.X - self.c, x_items])
        q = np.concatenate([np.zeros(J), v.Q])
        return NetState(q, x, v.t)

    def project(self, state: NetState) -> tuple[np.ndarray, np.ndarray]:
        """(X of the matching algorithm, item queues)."""
        J = self.n_matchings
        return state.x[:J] + self.c, state.q[J:]

    def per_slot_reward(self, v) -> float:
        """Reward per slot of a drift vector v (m rounds per slot)."""
        return self.m * float(self.utility.value(v))


def map_to_network(s: Scenario, c: Optional[float] = None) -> MappedNetwork:
    w = s.rewards
    c = float(w.max() + 1.0) if c is None else float(c)
    if not c > w.max():
        raise MatchingError(f"c must exceed every reward (c={c}, max w={w.max()})")
    J, I = s.n_matchings, s.n_items
    arrivals = s.arrivals.per_round(s.m).padded(J)
    mu = s.mu
    controls = []
    for j in range(J):
        util = np.full(J, c)
        util[j] = c - w[j]
        controls.append(Control(np.concatenate([util, mu[j]]), arrivals, s.matchings[j].label))
    net = NetworkModel(J, I, tuple(controls))
    G = s.utility
    if G.kind == "linear-sum":
        H = UtilitySpec.weighted(np.concatenate([np.ones(J), np.zeros(I)]), constant=J * c)
    elif G.kind == "weighted-linear":
        a = np.asarray(G.coefficients, float)
        H = UtilitySpec.weighted(np.concatenate([a, np.zeros(I)]), constant=c * a.sum())
    else:
        H = UtilitySpec.concave(
            lambda v: G.value(v[:J] + c),
            lambda v: np.concatenate([G.gradient(v[:J] + c), np.zeros(I)]),
        )
    gamma = np.concatenate([np.ones(J), s.gamma_vec])
    return MappedNetwork(net, H, gamma, c, s.m, J, I)


@dataclass
class LockstepResult:
    alg1: np.ndarray
    alg2: np.ndarray
    max_constrained_queue: float

    @property
    def identical(self) -> bool:
        return bool(np.array_equal(self.alg1, self.alg2))

    @property
    def first_mismatch(self) -> Optional[int]:
        diff = np.flatnonzero(self.alg1 != self.alg2)
        return int(diff[0]) if diff.size else None


def lockstep(s: Scenario, c: Optional[float] = None, slots: int = 1000, seed: int = 0) -> LockstepResult:
    """Run the matching rule and EGPD on the mapped network on one arrival
    stream (the slot's batch lands after the last of the m rounds) and record
    both decision sequences."""
    mapped = map_to_network(s, c)
    arr = sample_arrivals(s, make_rng(seed), slots)
    v = VirtualState.zero(s)
    st = mapped.embed(v)
    J = s.n_matchings
    zero_net = np.zeros(mapped.net.n_nodes)
    zero_items = np.zeros(s.n_items)
    a1, a2 = [], []
    qmax = 0.0
    bbar = mapped.net.mean_increments
    for t in range(slots):
        for r in range(s.m):
            last = r == s.m - 1
            j = select_matching(v, s)
            d = core.select_control(st, mapped.net, mapped.utility, s.beta, mapped.gamma, bbar)
            a1.append(j)
            a2.append(d.control)
            lam_items = arr[t] if last else zero_items
            v = virtual_step(v, j, lam_items, s)
            lam_net = zero_net.copy()
            lam_net[J:] = lam_items
            st = core.step(st, mapped.net, d, beta=s.beta, arrivals=lam_net)
            qmax = max(qmax, float(st.q[:J].max()))
    return LockstepResult(np.array(a1), np.array(a2), qmax)
