"""Domain types for matching scenarios and general constrained/free networks,
plus structural checkers (drift-sign feasibility, NCond, subspace reduction)."""

from __future__ import annotations

import itertools
from dataclasses import dataclass, field, replace
from typing import Callable, Optional, Sequence

import numpy as np

from .oracle.simplex import InfeasibleLP, solve_lp

COMPLETION_POLICIES = ("fcfs", "cost-priority")
MAX_FREE_NODES_EXHAUSTIVE = 20


class ModelError(ValueError):
    pass


# --------------------------------------------------------------------------
# arrivals


@dataclass(frozen=True, eq=False)
class ArrivalModel:
    """Per-slot arrival law.

    ``independent-poisson``: coordinate i is Poisson(rates[i]), independent.
    ``batch-table``: one row of ``batches`` is drawn with probability ``probs``.
    An optional ``transform`` matrix maps a sampled vector ``lam`` to
    ``lam @ transform`` (used for re-coordinatised networks).
    """

    kind: str
    rates: Optional[np.ndarray] = None
    batches: Optional[np.ndarray] = None
    probs: Optional[np.ndarray] = None
    transform: Optional[np.ndarray] = None

    @classmethod
    def poisson(cls, rates) -> "ArrivalModel":
        return cls("independent-poisson", rates=np.asarray(rates, dtype=float))

    @classmethod
    def batch_table(cls, batches, probs) -> "ArrivalModel":
        return cls(
            "batch-table",
            batches=np.atleast_2d(np.asarray(batches, dtype=float)),
            probs=np.asarray(probs, dtype=float),
        )

    @classmethod
    def deterministic(cls, vector) -> "ArrivalModel":
        return cls.batch_table([vector], [1.0])

    @property
    def base_dim(self) -> int:
        return self.rates.size if self.kind == "independent-poisson" else self.batches.shape[1]

    @property
    def dim(self) -> int:
        return self.base_dim if self.transform is None else self.transform.shape[1]

    def _apply(self, lam: np.ndarray) -> np.ndarray:
        return lam if self.transform is None else lam @ self.transform

    @property
    def mean(self) -> np.ndarray:
        if self.kind == "independent-poisson":
            base = self.rates
        else:
            base = self.probs @ self.batches
        return self._apply(base)

    @property
    def bound(self) -> float:
        """Sup-norm bound on a sample (inf for Poisson)."""
        if self.kind == "independent-poisson":
            return 0.0 if not np.any(self.rates > 0) else np.inf
        return float(np.abs(self._apply(self.batches)).max(initial=0.0))

    def variability_directions(self) -> np.ndarray:
        """Rows spanning the support of ``lam - E lam``."""
        if self.kind == "independent-poisson":
            base = np.diag((self.rates > 0).astype(float))
        else:
            base = (self.batches - self.probs @ self.batches)[self.probs > 0]
        return self._apply(base)

    def sample(self, rng: np.random.Generator, size: int) -> np.ndarray:
        """``size`` i.i.d. draws as a (size, dim) array."""
        if self.kind == "independent-poisson":
            lam = rng.poisson(self.rates, size=(size, self.rates.size)).astype(float)
        else:
            idx = rng.choice(len(self.probs), size=size, p=self.probs)
            lam = self.batches[idx]
        return self._apply(lam)

    def per_round(self, m: int) -> "ArrivalModel":
        """i.i.d. per-decision-round law with mean ``mean / m``."""
        if m == 1:
            return self
        if self.kind == "independent-poisson":
            return replace(self, rates=self.rates / m)
        batches = np.vstack([np.zeros(self.base_dim), self.batches])
        probs = np.concatenate([[1.0 - 1.0 / m], self.probs / m])
        return replace(self, batches=batches, probs=probs)

    def padded(self, n_before: int) -> "ArrivalModel":
        """Same law embedded after ``n_before`` always-zero coordinates."""
        if self.transform is not None:
            raise ModelError("cannot pad a transformed arrival model")
        if self.kind == "independent-poisson":
            return replace(self, rates=np.concatenate([np.zeros(n_before), self.rates]))
        pad = np.zeros((self.batches.shape[0], n_before))
        return replace(self, batches=np.hstack([pad, self.batches]))

    def transformed(self, matrix: np.ndarray) -> "ArrivalModel":
        t = matrix if self.transform is None else self.transform @ matrix
        return replace(self, transform=np.asarray(t, dtype=float))

    def diagnostics(self, expect_positive: bool = True) -> list[str]:
        out = []
        if self.kind == "independent-poisson":
            if self.rates is None or not np.all(np.isfinite(self.rates)):
                out.append("arrival rates must be finite")
            elif np.any(self.rates < 0):
                out.append("arrival rates must be nonnegative")
        elif self.kind == "batch-table":
            if self.probs is None or self.batches is None or len(self.probs) != len(self.batches):
                out.append("batch-table needs one probability per batch")
                return out
            if np.any(self.probs < 0):
                out.append("batch probabilities must be nonnegative")
            if abs(self.probs.sum() - 1.0) > 1e-12:
                out.append("probabilities must sum to 1")
            if np.any(self.batches < 0) or not np.all(np.isfinite(self.batches)):
                out.append("batch vectors must be finite and nonnegative")
        else:
            out.append(f"unknown arrival kind {self.kind!r}")
            return out
        if expect_positive and not out and np.any(self.mean <= 0):
            out.append("every item type needs a positive mean arrival rate")
        return out


# --------------------------------------------------------------------------
# utilities


@dataclass(frozen=True, eq=False)
class UtilitySpec:
    """Concave utility over a vector argument.

    kinds: ``linear-sum`` (sum of coordinates), ``weighted-linear``
    (``coefficients . x + constant``), ``concave`` (user callables).
    """

    kind: str = "linear-sum"
    coefficients: Optional[np.ndarray] = None
    constant: float = 0.0
    value_fn: Optional[Callable[[np.ndarray], float]] = None
    grad_fn: Optional[Callable[[np.ndarray], np.ndarray]] = None

    @classmethod
    def weighted(cls, coefficients, constant: float = 0.0) -> "UtilitySpec":
        return cls("weighted-linear", coefficients=np.asarray(coefficients, dtype=float), constant=constant)

    @classmethod
    def concave(cls, value_fn, grad_fn) -> "UtilitySpec":
        return cls("concave", value_fn=value_fn, grad_fn=grad_fn)

    @property
    def is_linear(self) -> bool:
        return self.kind in ("linear-sum", "weighted-linear")

    def value(self, x) -> float:
        x = np.asarray(x, dtype=float)
        if self.kind == "linear-sum":
            return float(x.sum()) + self.constant
        if self.kind == "weighted-linear":
            return float(self.coefficients @ x) + self.constant
        return float(self.value_fn(x))

    def gradient(self, x) -> np.ndarray:
        x = np.asarray(x, dtype=float)
        if self.kind == "linear-sum":
            return np.ones_like(x)
        if self.kind == "weighted-linear":
            return self.coefficients.copy()
        return np.asarray(self.grad_fn(x), dtype=float)


def check_gradient(
    utility: UtilitySpec,
    low: np.ndarray,
    high: np.ndarray,
    rng: np.random.Generator,
    n_points: int = 10,
    rel_tol: float = 1e-4,
) -> list[str]:
    """Central finite-difference check of a callable utility's gradient at
    random points of the box [low, high]."""
    if utility.is_linear:
        return []
    out = []
    low, high = np.asarray(low, float), np.asarray(high, float)
    for _ in range(n_points):
        x = low + (high - low) * rng.random(low.size)
        g = utility.gradient(x)
        if not np.all(np.isfinite(g)):
            out.append("utility gradient not finite on the reward hull")
            break
        fd = np.empty_like(x)
        for i in range(x.size):
            h = 1e-6 * max(1.0, abs(x[i]))
            e = np.zeros_like(x)
            e[i] = h
            fd[i] = (utility.value(x + e) - utility.value(x - e)) / (2 * h)
        scale = max(1.0, float(np.abs(g).max()))
        if np.abs(fd - g).max() > rel_tol * scale:
            out.append("utility gradient disagrees with finite differences")
            break
    return out


# --------------------------------------------------------------------------
# matching scenario


@dataclass(frozen=True, eq=False)
class MatchingSpec:
    id: int
    mu: np.ndarray
    reward: float
    label: str = ""


@dataclass(frozen=True, eq=False)
class Scenario:
    item_labels: tuple[str, ...]
    matchings: tuple[MatchingSpec, ...]
    arrivals: ArrivalModel
    m: int = 1
    beta: float = 0.01
    gamma: Optional[np.ndarray] = None
    utility: UtilitySpec = field(default_factory=UtilitySpec)
    holding_costs: Optional[np.ndarray] = None
    completion_policy: str = "fcfs"
    horizon: int = 1000
    seed: int = 0
    rate_changes: tuple[tuple[int, ArrivalModel], ...] = ()
    name: str = "scenario"

    @property
    def n_items(self) -> int:
        return len(self.item_labels)

    @property
    def n_matchings(self) -> int:
        return len(self.matchings)

    @property
    def mu(self) -> np.ndarray:
        """(J, I) requirement matrix."""
        return np.array([mt.mu for mt in self.matchings], dtype=float).reshape(self.n_matchings, self.n_items)

    @property
    def rewards(self) -> np.ndarray:
        return np.array([mt.reward for mt in self.matchings], dtype=float)

    @property
    def gamma_vec(self) -> np.ndarray:
        return np.ones(self.n_items) if self.gamma is None else np.asarray(self.gamma, float)

    @property
    def costs(self) -> np.ndarray:
        return np.zeros(self.n_items) if self.holding_costs is None else np.asarray(self.holding_costs, float)

    @property
    def mu_star(self) -> float:
        return float(self.mu.sum(axis=1).max())

    def matching_labels(self) -> list[str]:
        return [mt.label or f"m{mt.id}" for mt in self.matchings]

    def with_(self, **changes) -> "Scenario":
        return replace(self, **changes)


def validate_scenario(s: Scenario) -> list[str]:
    """Return one diagnostic string per violated invariant (empty when valid)."""
    diags: list[str] = []
    if not s.beta > 0:
        diags.append("beta must be positive")
    if not (isinstance(s.m, (int, np.integer)) and s.m >= 1):
        diags.append("m must be a positive integer")
    if not (isinstance(s.horizon, (int, np.integer)) and s.horizon >= 1):
        diags.append("horizon must be at least 1")
    if np.any(s.gamma_vec <= 0) or s.gamma_vec.size != s.n_items:
        diags.append("gamma must be one positive weight per item type")
    if s.costs.size != s.n_items or np.any(s.costs < 0):
        diags.append("holding_costs must be one nonnegative value per item type")
    if s.completion_policy not in COMPLETION_POLICIES:
        diags.append(f"completion_policy must be one of {COMPLETION_POLICIES}")
    if not s.matchings:
        diags.append("at least the empty matching is required")
    else:
        ids = [mt.id for mt in s.matchings]
        if ids != list(range(len(ids))):
            diags.append("matching ids must be 0..J-1 without repeats")
        for mt in s.matchings:
            if np.asarray(mt.mu).size != s.n_items or not np.all(np.isfinite(mt.mu)):
                diags.append(f"matching {mt.id}: mu must be finite, one entry per item type")
            if not np.isfinite(mt.reward):
                diags.append(f"matching {mt.id}: reward must be finite")
        m0 = s.matchings[0]
        if np.any(np.asarray(m0.mu) != 0) or m0.reward != 0:
            diags.append("matching 0 must be the empty matching (zero mu, zero reward)")
    for d in s.arrivals.diagnostics():
        diags.append(d)
    if not diags and s.arrivals.dim != s.n_items:
        diags.append("arrival dimension must equal the number of item types")
    last = -1
    for slot, model in s.rate_changes:
        if not 0 <= slot <= max(s.horizon, 0) or slot < last:
            diags.append("rate change slots must be sorted and within the horizon")
        last = slot
        diags.extend(f"rate change at {slot}: {d}" for d in model.diagnostics())
    if s.utility.kind not in ("linear-sum", "weighted-linear", "concave"):
        diags.append(f"unknown utility kind {s.utility.kind!r}")
    elif s.utility.kind == "weighted-linear" and np.asarray(s.utility.coefficients).size != s.n_matchings:
        diags.append("weighted-linear utility needs one coefficient per matching")
    elif s.utility.kind == "concave" and not diags:
        w = s.rewards
        lo = np.full(w.size, min(0.0, w.min()))
        hi = np.full(w.size, max(0.0, w.max()))
        diags.extend(check_gradient(s.utility, lo, hi, np.random.default_rng(s.seed)))
    return diags


# --------------------------------------------------------------------------
# general network


@dataclass(frozen=True, eq=False)
class Control:
    mu: np.ndarray  # deterministic removal
    arrivals: ArrivalModel  # random arrival vector, i.i.d. per slot
    label: str = ""


@dataclass(frozen=True, eq=False)
class NetworkModel:
    """Nodes ``0..n_constrained-1`` are constrained (kept >= 0), the rest free."""

    n_constrained: int
    n_free: int
    controls: tuple[Control, ...]

    @property
    def n_nodes(self) -> int:
        return self.n_constrained + self.n_free

    @property
    def n_controls(self) -> int:
        return len(self.controls)

    @property
    def constrained(self) -> np.ndarray:
        mask = np.zeros(self.n_nodes, dtype=bool)
        mask[: self.n_constrained] = True
        return mask

    @property
    def mean_increments(self) -> np.ndarray:
        """(K, N) matrix of nominal drifts E[lambda(k)] - mu(k)."""
        return np.array([c.arrivals.mean - c.mu for c in self.controls], dtype=float)

    @property
    def removal(self) -> np.ndarray:
        return np.array([c.mu for c in self.controls], dtype=float)

    @property
    def bound(self) -> float:
        return max(c.arrivals.bound for c in self.controls)

    def diagnostics(self) -> list[str]:
        out = []
        if self.n_constrained < 0 or self.n_free < 0 or self.n_nodes == 0:
            out.append("network needs at least one node")
        if not self.controls:
            out.append("network needs at least one control")
        for k, c in enumerate(self.controls):
            if np.asarray(c.mu).size != self.n_nodes or c.arrivals.dim != self.n_nodes:
                out.append(f"control {k}: vectors must have one entry per node")
        if not out and not np.all(np.isfinite(self.mean_increments)):
            out.append("mean increments must be finite")
        return out


# --------------------------------------------------------------------------
# structural checks


@dataclass(frozen=True)
class DriftConditionReport:
    holds: bool
    margin: float
    witnesses: dict  # frozenset of free-node indices -> mixture phi
    deltas: dict  # frozenset -> optimal delta


def _max_sign_margin(bbar: np.ndarray, positive: np.ndarray) -> tuple[float, np.ndarray]:
    """max delta s.t. sign-prescribed drifts clear delta, phi in the simplex.

    ``positive[n]`` True asks drift_n >= delta, False asks drift_n <= -delta.
    Variables: phi (K), delta+ , delta-.
    """
    K, N = bbar.shape
    sgn = np.where(positive, -1.0, 1.0)
    A_ub = np.hstack([sgn[:, None] * bbar.T, np.ones((N, 1)), -np.ones((N, 1))])
    b_ub = np.zeros(N)
    A_eq = np.concatenate([np.ones(K), [0.0, 0.0]])[None, :]
    # cap delta so the LP stays bounded even with no rows at all
    cap = np.concatenate([np.zeros(K), [1.0, 0.0]])[None, :]
    A_ub = np.vstack([A_ub, cap])
    b_ub = np.append(b_ub, 1e6)
    c = np.concatenate([np.zeros(K), [1.0, -1.0]])
    res = solve_lp(c, A_eq=A_eq, b_eq=[1.0], A_ub=A_ub, b_ub=b_ub)
    return res.value, res.x[:K]


def check_drift_condition(net: NetworkModel, epsilon: float = 1e-9) -> DriftConditionReport:
    """For every subset S of free nodes find the largest delta such that some
    mixture of controls drives free nodes in S up by >= delta and all other
    nodes down by >= delta. Holds when the smallest such delta >= epsilon."""
    if net.n_free > MAX_FREE_NODES_EXHAUSTIVE:
        raise ModelError(
            f"exhaustive check infeasible: {net.n_free} free nodes "
            f"(limit {MAX_FREE_NODES_EXHAUSTIVE})"
        )
    bbar = net.mean_increments
    free = list(range(net.n_constrained, net.n_nodes))
    witnesses, deltas = {}, {}
    margin = np.inf
    for r in range(len(free) + 1):
        for subset in itertools.combinations(free, r):
            positive = np.zeros(net.n_nodes, dtype=bool)
            positive[list(subset)] = True
            delta, phi = _max_sign_margin(bbar, positive)
            key = frozenset(subset)
            witnesses[key] = phi
            deltas[key] = delta
            margin = min(margin, delta)
    return DriftConditionReport(bool(margin >= epsilon), float(margin), witnesses, deltas)


@dataclass(frozen=True)
class SubspaceReduction:
    basis: np.ndarray  # (n_free, r) orthonormal columns, free coordinates only
    reduced: NetworkModel

    @property
    def dim(self) -> int:
        return self.basis.shape[1]


def _gram_schmidt(vectors: np.ndarray, tol: float) -> np.ndarray:
    basis: list[np.ndarray] = []
    for v in vectors:
        w = np.array(v, dtype=float)
        for _ in range(2):  # re-orthogonalise once for stability
            for b in basis:
                w -= (b @ w) * b
        nrm = np.linalg.norm(w)
        if nrm > tol * max(1.0, np.linalg.norm(v)):
            basis.append(w / nrm)
    return np.array(basis).T if basis else np.zeros((vectors.shape[1], 0))


def reduce_drift_subspace(net: NetworkModel, tol: float = 1e-9) -> SubspaceReduction:
    """Re-express the free coordinates in an orthonormal basis of the linear span
    reachable by queue increments (mean drifts plus arrival variability).
    Constrained coordinates pass through unchanged."""
    if not tol > 0:
        raise ModelError("rank tolerance must be positive")
    nc, nf = net.n_constrained, net.n_free
    free = slice(nc, nc + nf)
    bbar = net.mean_increments[:, free]
    spans = [bbar]
    for c in net.controls:
        d = c.arrivals.variability_directions()
        if d.size:
            spans.append(d[:, free])
    basis = _gram_schmidt(np.vstack(spans), tol)
    if basis.shape[1] == nf:
        return SubspaceReduction(np.eye(nf), net)
    r = basis.shape[1]
    P = np.zeros((nc + nf, nc + r))
    P[:nc, :nc] = np.eye(nc)
    P[nc:, nc:] = basis
    controls = tuple(
        Control(mu=c.mu @ P, arrivals=c.arrivals.transformed(P), label=c.label) for c in net.controls
    )
    return SubspaceReduction(basis, NetworkModel(nc, r, controls))


@dataclass(frozen=True)
class NCondReport:
    stabilizable: bool
    violating_subset: Optional[frozenset]


def check_ncond(
    top_rates: Sequence[float],
    bottom_rates: Sequence[float],
    edges: Sequence[tuple[int, int]],
) -> NCondReport:
    """Bipartite stabilizability: alpha_T < alpha_B(T) for every strict nonempty
    subset T of top items, plus equal top and bottom totals (on imbalance the
    whole top set is returned as the violating subset). ``edges`` are
    (top index, bottom index) pairs."""
    top = np.asarray(top_rates, dtype=float)
    bottom = np.asarray(bottom_rates, dtype=float)
    nt, nb = top.size, bottom.size
    # connectivity via union-find over top 0..nt-1 and bottom nt..nt+nb-1
    parent = list(range(nt + nb))

    def find(a: int) -> int:
        while parent[a] != a:
            parent[a] = parent[parent[a]]
            a = parent[a]
        return a

    neigh = [set() for _ in range(nt)]
    for t, b in edges:
        neigh[t].add(b)
        parent[find(t)] = find(nt + b)
    if len({find(a) for a in range(nt + nb)}) != 1:
        raise ModelError("NCond requires connected matching graph")
    for r in range(1, nt):
        for T in itertools.combinations(range(nt), r):
            B = set().union(*(neigh[t] for t in T))
            if not top[list(T)].sum() < bottom[sorted(B)].sum():
                return NCondReport(False, frozenset(T))
    # unequal totals can never be cleared; the subset test presumes balance
    if abs(top.sum() - bottom.sum()) > 1e-12 * max(1.0, top.sum()):
        return NCondReport(False, frozenset(range(nt)))
    return NCondReport(True, None)
