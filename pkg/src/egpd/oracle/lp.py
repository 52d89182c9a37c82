"""Rate-region oracle: optimal drifts, dual prices and distances.

Everything here is computed from the mean increments alone, never from a
simulation, so it serves as ground truth for the stochastic engines.
"""

from __future__ import annotations

import warnings
from dataclasses import dataclass
from typing import TYPE_CHECKING, Optional

import numpy as np

from .fw import away_step_fw, bisection_step, quadratic_step
from .simplex import InfeasibleLP, solve_lp

if TYPE_CHECKING:  # model imports the simplex, so only type names come from it here
    from ..model import NetworkModel, Scenario, UtilitySpec

TIE_TOL = 1e-12


class OracleError(ValueError):
    pass


@dataclass(frozen=True, eq=False)
class RateRegion:
    vertices: np.ndarray  # (K, N) mean increments
    n_constrained: int = 0

    @classmethod
    def of(cls, net: NetworkModel) -> "RateRegion":
        return cls(net.mean_increments, net.n_constrained)

    @property
    def dim(self) -> int:
        return self.vertices.shape[1]

    def support(self, direction) -> float:
        return float((self.vertices @ np.asarray(direction, float)).max())


@dataclass(frozen=True, eq=False)
class RateRegionSolution:
    phi: np.ndarray
    v_star: np.ndarray
    value: float
    q_star: np.ndarray
    n_constrained: int
    converged: bool = True
    gap: float = 0.0

    @property
    def complementary_slackness(self) -> float:
        return float(self.q_star @ self.v_star)

    def feasibility_residual(self) -> float:
        nc = self.n_constrained
        return float(max(np.abs(self.v_star[nc:]).max(initial=0.0), self.v_star[:nc].max(initial=0.0)))


def support_argmax(region: RateRegion, direction) -> list[int]:
    """All vertex indices maximising direction . b(k), absolute tie tolerance 1e-12."""
    scores = region.vertices @ np.asarray(direction, dtype=float)
    return [int(k) for k in np.flatnonzero(scores >= scores.max() - TIE_TOL)]


def _feasible_lp(net: NetworkModel, weights: np.ndarray, extra_ub=None):
    """max weights . phi over phi in the simplex with free drifts = 0 and
    constrained drifts <= 0 (plus optional extra <= rows)."""
    B = net.mean_increments  # (K, N)
    nc = net.n_constrained
    K = B.shape[0]
    A_eq = np.vstack([B[:, nc:].T, np.ones((1, K))])
    b_eq = np.concatenate([np.zeros(net.n_free), [1.0]])
    A_ub = B[:, :nc].T
    b_ub = np.zeros(nc)
    if extra_ub is not None:
        A_ub = np.vstack([A_ub, extra_ub[0]])
        b_ub = np.concatenate([b_ub, extra_ub[1]])
    return solve_lp(weights, A_eq=A_eq, b_eq=b_eq, A_ub=A_ub if A_ub.size else None, b_ub=b_ub if b_ub.size else None)


def solve_linear(net: NetworkModel, utility: UtilitySpec) -> RateRegionSolution:
    """Maximise a linear utility over the feasible part of the rate region.

    Duals q* are read off the optimal simplex basis: free-node prices have any
    sign, constrained-node prices are >= 0.
    """
    if not utility.is_linear:
        raise OracleError("solve_linear needs a linear utility")
    B = net.mean_increments
    g = utility.gradient(np.zeros(net.n_nodes))
    try:
        res = _feasible_lp(net, B @ g)
    except InfeasibleLP as exc:
        raise OracleError(
            "no mixture of controls keeps free drifts at zero and constrained drifts "
            "nonpositive (feasibility assumption violated)"
        ) from exc
    nc = net.n_constrained
    q = np.concatenate([res.y_ub[:nc], res.y_eq[: net.n_free]])
    v = res.x @ B
    return RateRegionSolution(res.x, v, utility.value(v), q, nc)


def _atom(res_x: np.ndarray, B: np.ndarray):
    key = np.round(res_x, 12).tobytes()
    return key, res_x @ B, res_x


def solve_concave(
    net: NetworkModel,
    utility: UtilitySpec,
    tol: float = 1e-10,
    max_iters: int = 5000,
    start_weights: Optional[np.ndarray] = None,
) -> RateRegionSolution:
    """Frank-Wolfe (with away steps) on the feasible polytope; linear
    subproblems go through the simplex. Returns the best iterate and a
    ``converged`` flag; warns when ``max_iters`` is hit."""
    B = net.mean_increments
    K = B.shape[0]
    w0 = np.zeros(K) if start_weights is None else np.asarray(start_weights, float)
    try:
        start = _atom(_feasible_lp(net, w0).x, B)
    except InfeasibleLP as exc:
        raise OracleError("feasibility assumption violated") from exc

    def neg_grad(p):
        return -utility.gradient(p)

    def lmo(g):
        return _atom(_feasible_lp(net, -(B @ g)).x, B)

    fw = away_step_fw(neg_grad, lmo, start, bisection_step(neg_grad), tol, max_iters)
    if not fw.converged:
        warnings.warn(f"Frank-Wolfe stopped after {max_iters} iterations (gap {fw.gap:.2e})")
    from ..model import UtilitySpec

    lin = UtilitySpec.weighted(utility.gradient(fw.point))
    duals = solve_linear(net, lin).q_star
    return RateRegionSolution(
        fw.mixture, fw.point, utility.value(fw.point), duals, net.n_constrained, fw.converged, fw.gap
    )


def _distance_stop(x: np.ndarray, tol: float, scale: float):
    """With f = |p - x|^2 / 2 the gap bounds f(p) - f*, so the distance error
    is at most gap / |p - x|. Gaps below the rounding floor of the gap
    computation itself (about eps * scale^2) also stop."""
    floor = 64 * np.finfo(float).eps * scale * scale

    def stop(gap: float, p: np.ndarray) -> bool:
        d = float(np.linalg.norm(p - x))
        return gap <= floor or (d > 0 and gap / d <= tol)

    return stop


def distance_to_polytope(x, region: RateRegion, tol: float = 1e-9, max_iter: int = 100_000) -> float:
    """Euclidean distance from x to conv(vertices), accurate to ``tol``."""
    x = np.asarray(x, dtype=float)
    V = region.vertices
    k0 = int(np.argmin(np.linalg.norm(V - x, axis=1)))
    eye = np.eye(V.shape[0])

    def lmo(g):
        k = int(np.argmin(V @ g))
        return k.to_bytes(4, "little"), V[k], eye[k]

    fw = away_step_fw(
        lambda p: p - x,
        lmo,
        (k0.to_bytes(4, "little"), V[k0], eye[k0]),
        quadratic_step(x),
        0.5 * tol * tol,
        max_iter,
        stop=_distance_stop(x, tol, max(float(np.abs(x).max()), float(np.abs(V).max()), 1.0)),
        target=x,
    )
    return float(np.linalg.norm(fw.point - x))


def optimal_face_distance(
    x,
    net: NetworkModel,
    utility: UtilitySpec,
    solution: RateRegionSolution,
    tol: float = 1e-6,
    max_iter: int = 2000,
    slack: float = 1e-9,
) -> float:
    """Distance from x to V*, the face of feasible drifts attaining the optimal
    value of a linear utility. Frank-Wolfe whose oracle is an LP over that face."""
    x = np.asarray(x, dtype=float)
    B = net.mean_increments
    c = B @ utility.gradient(np.zeros(net.n_nodes))
    target = float(c @ solution.phi)
    face_row = (-c[None, :], np.array([slack * max(1.0, abs(target)) - target]))

    def lmo(g):
        return _atom(_feasible_lp(net, -(B @ g), face_row).x, B)

    start = _atom(solution.phi, B)
    fw = away_step_fw(
        lambda p: p - x,
        lmo,
        start,
        quadratic_step(x),
        0.5 * tol * tol,
        max_iter,
        _distance_stop(x, tol, max(float(np.abs(x).max()), float(np.abs(B).max()), 1.0)),
        target=x,
    )
    return float(np.linalg.norm(fw.point - x))


# --------------------------------------------------------------------------
# matching-rate LP in per-slot units


@dataclass(frozen=True, eq=False)
class MatchingLPSolution:
    rates: np.ndarray  # per-slot activation rates, index 0 = empty matching
    value: float  # optimal reward per slot
    item_prices: np.ndarray  # dual of the item-balance rows
    budget_price: float  # dual of sum_j x_j <= m

    def nonempty_rates(self) -> np.ndarray:
        return self.rates[1:]


def solve_matching_lp(s: Scenario, arrival_rates=None) -> MatchingLPSolution:
    """max sum_j a_j w_j x_j  s.t.  sum_j x_j mu(j) = alpha,  sum_j x_j <= m,  x >= 0.

    The empty matching is the budget slack. Linear utilities only.
    """
    if not s.utility.is_linear:
        raise OracleError("matching LP needs a linear utility")
    alpha = s.arrivals.mean if arrival_rates is None else np.asarray(arrival_rates, float)
    J = s.n_matchings
    coef = np.ones(J) if s.utility.kind == "linear-sum" else np.asarray(s.utility.coefficients, float)
    cols = np.arange(1, J)
    mu = s.mu[cols]
    try:
        res = solve_lp(
            coef[cols] * s.rewards[cols],
            A_eq=mu.T,
            b_eq=alpha,
            A_ub=np.ones((1, cols.size)),
            b_ub=[float(s.m)],
        )
    except InfeasibleLP as exc:
        raise OracleError("arrival rates cannot be cleared by the matchings within m per slot") from exc
    rates = np.concatenate([[s.m - res.x.sum()], res.x])
    rates[0] = max(rates[0], 0.0)
    return MatchingLPSolution(rates, res.value, res.y_eq, float(res.y_ub[0]))
