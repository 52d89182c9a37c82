"""Fluid-limit integration of EGPD trajectories and Lyapunov diagnostics.

The fluid system is  x' = v - x,  q'_n = v_n  (held at zero from below on
constrained nodes),  with v a vertex of the rate region maximising
(grad H(x) - q) . v.  Forward Euler with a fixed step.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Optional, Sequence

import numpy as np

from . import core
from .matching import MappedNetwork, VirtualState, map_to_network
from .model import NetworkModel, Scenario, UtilitySpec
from .oracle import RateRegion, RateRegionSolution, distance_to_polytope, optimal_face_distance, solve_concave, solve_linear
from .rng import make_rng


class FluidError(RuntimeError):
    def __init__(self, message: str, last_state: "FluidState"):
        super().__init__(message)
        self.last_state = last_state


@dataclass(frozen=True, eq=False)
class FluidState:
    x: np.ndarray
    q: np.ndarray
    t: float
    v: np.ndarray
    vertex: int


@dataclass(frozen=True)
class LyapunovReport:
    F: float
    Fstar: float
    B1: float
    B2: float
    B3: float
    rho: float


@dataclass
class Trajectory:
    """Every Euler step is recorded; rho_V only every ``rho_every`` steps (nan elsewhere)."""

    region: RateRegion
    h: float
    t: np.ndarray
    x: np.ndarray
    q: np.ndarray
    v: np.ndarray
    vertex: np.ndarray
    F: np.ndarray
    Fstar: np.ndarray
    B: np.ndarray  # (S, 3)
    rho_V: np.ndarray
    q_star: Optional[np.ndarray] = None
    v_star: Optional[np.ndarray] = None

    def __len__(self) -> int:
        return self.t.size

    def state(self, i: int) -> FluidState:
        return FluidState(self.x[i], self.q[i], float(self.t[i]), self.v[i], int(self.vertex[i]))

    def report(self, i: int) -> LyapunovReport:
        return LyapunovReport(self.F[i], self.Fstar[i], *self.B[i], self.rho_V[i])

    @property
    def rho_index(self) -> np.ndarray:
        return np.flatnonzero(~np.isnan(self.rho_V))

    def contraction_constant(self) -> float:
        """Smallest C with rho(t) <= rho(0) e^{-t} + C h at every recorded rho."""
        idx = self.rho_index
        excess = self.rho_V[idx] - self.rho_V[0] * np.exp(-self.t[idx])
        return float(max(excess.max(initial=0.0), 0.0) / self.h)

    def entry_time(self, tol: float = 1e-6) -> Optional[float]:
        """First recorded time with rho(x, V) <= tol (Euler steps never leave V after)."""
        idx = self.rho_index
        inside = idx[self.rho_V[idx] <= tol]
        return float(self.t[inside[0]]) if inside.size else None

    def fstar_min_increment(self, after: float = 0.0) -> float:
        """Smallest per-step change of F* over steps starting at t >= after."""
        k = np.searchsorted(self.t, after)
        d = np.diff(self.Fstar[k:])
        return float(d.min()) if d.size else 0.0

    def value_gap_residual(self, optimal_value: float, utility: UtilitySpec, start: float = 0.0) -> float:
        """min over t of  dF/dt - (H(v*) - H(x(t)))  with dF/dt from central differences."""
        dF = (self.F[2:] - self.F[:-2]) / (2 * self.h)
        H = np.array([utility.value(x) for x in self.x[1:-1]])
        res = dF - (optimal_value - H)
        k = max(int(np.searchsorted(self.t[1:-1], start)), 0)
        return float(res[k:].min()) if res[k:].size else 0.0

    def rows(self, stride: int = 1, rho_Vstar: Optional[np.ndarray] = None) -> tuple[list[str], list[list]]:
        N = self.x.shape[1]
        header = (
            ["t"] + [f"x_{n + 1}" for n in range(N)] + [f"q_{n + 1}" for n in range(N)]
            + ["control_vertex", "F", "Fstar", "rho_V", "rho_Vstar"]
        )
        rows = []
        for i in range(0, len(self), stride):
            rv = float(rho_Vstar[i]) if rho_Vstar is not None else float("nan")
            rows.append(
                [float(self.t[i]), *self.x[i].tolist(), *self.q[i].tolist(), int(self.vertex[i]),
                 float(self.F[i]), float(self.Fstar[i]), float(self.rho_V[i]), rv]
            )
        return header, rows


def integrate(
    region: RateRegion,
    utility: UtilitySpec,
    x0,
    q0,
    t_end: float,
    h: float = 1e-3,
    mode: str = "lowest",
    solution: Optional[RateRegionSolution] = None,
    rho_every: int = 100,
) -> Trajectory:
    """Forward Euler on the fluid system.

    ``mode="lowest"`` uses the lowest-index maximising vertex; ``"averaged"``
    the mean of all tied vertices. With ``solution`` the F* function and the
    three terms of its derivative bound are recorded as well.
    """
    if h <= 0:
        raise ValueError("step h must be positive")
    if mode not in ("lowest", "averaged"):
        raise ValueError(f"unknown mode {mode!r}")
    Vt = region.vertices
    nc = region.n_constrained
    x = np.asarray(x0, float).copy()
    q = np.asarray(q0, float).copy()
    if np.any(q[:nc] < 0):
        raise ValueError("initial constrained q must be nonnegative")
    steps = int(round(t_end / h))
    S = steps + 1
    N = x.size
    out_x = np.zeros((S, N))
    out_q = np.zeros((S, N))
    out_v = np.zeros((S, N))
    out_k = np.zeros(S, dtype=np.int64)
    out_F = np.zeros(S)
    out_Fs = np.full(S, np.nan)
    out_B = np.full((S, 3), np.nan)
    out_rho = np.full(S, np.nan)
    qs = vs = None
    if solution is not None:
        qs, vs = solution.q_star, solution.v_star

    last = FluidState(x.copy(), q.copy(), 0.0, np.zeros(N), -1)
    for i in range(S):
        t = i * h
        g = utility.gradient(x)
        Hx = utility.value(x)
        if not (np.all(np.isfinite(g)) and np.isfinite(Hx)):
            raise FluidError(f"x left the utility domain at t={t:.6g}", last)
        scores = Vt @ (g - q)
        best = scores.max()
        ties = np.flatnonzero(scores >= best - core.REL_TIE_TOL * max(1.0, np.abs(scores).max()))
        k = int(ties[0])
        v = Vt[k] if mode == "lowest" else Vt[ties].mean(axis=0)
        out_x[i], out_q[i], out_v[i], out_k[i] = x, q, v, k
        out_F[i] = Hx - 0.5 * float(q @ q)
        if qs is not None:
            out_Fs[i] = Hx - float(qs @ x) - 0.5 * float((q - qs) @ (q - qs))
            out_B[i] = (
                float((g - qs) @ (vs - x)),
                float(-(q - qs) @ vs),
                float((g - q) @ (v - vs)),
            )
        if i % rho_every == 0 or i == S - 1:
            out_rho[i] = distance_to_polytope(x, region)
        last = FluidState(x.copy(), q.copy(), t, v, k)
        if i == S - 1:
            break
        x = x + h * (v - x)
        q = q + h * v
        q[:nc] = np.maximum(q[:nc], 0.0)
    return Trajectory(
        region, h, np.arange(S) * h, out_x, out_q, out_v, out_k, out_F, out_Fs, out_B, out_rho, qs, vs
    )


@dataclass
class ConvergenceReport:
    times: np.ndarray
    rho_Vstar: np.ndarray  # on the rho_V recording grid
    dual_gap: float  # price_gap at the terminal q
    dual_feasibility: float  # most negative constrained q (0 if feasible)
    comp_slackness: float  # q(T) . v*
    sup_q: float
    sup_q_first_half: float
    sup_q_last_half: float
    q_at_half: float
    tol: float

    @property
    def terminal_rho(self) -> float:
        return float(self.rho_Vstar[-1])

    @property
    def q_growth(self) -> float:
        """How far ||q|| rises over the last half above its value at mid-horizon."""
        return self.sup_q_last_half - self.q_at_half

    @property
    def converged(self) -> bool:
        return self.terminal_rho < self.tol and np.isfinite(self.sup_q)


def price_gap(region: RateRegion, utility: UtilitySpec, v_star: np.ndarray, q: np.ndarray) -> float:
    """max_k (grad H(v*) - q) . (b(k) - v*): zero iff v* maximises H(v) - q.v over V.

    Together with q . v* = 0 and q >= 0 on constrained nodes this certifies q
    as an optimal dual price (by concavity the first-order condition suffices).
    """
    d = utility.gradient(v_star) - q
    return float((region.vertices @ d).max() - d @ v_star)


def check_convergence(
    traj: Trajectory,
    net: NetworkModel,
    utility: UtilitySpec,
    solution: RateRegionSolution,
    tol: float = 0.05,
) -> ConvergenceReport:
    """Distance to the optimal set over time plus residuals of the terminal q
    as a candidate optimal price."""
    idx = traj.rho_index
    if utility.is_linear:
        rv = np.array([optimal_face_distance(traj.x[i], net, utility, solution) for i in idx])
    else:
        rv = np.linalg.norm(traj.x[idx] - solution.v_star, axis=1)
    qT = traj.q[-1]
    nc = traj.region.n_constrained
    gap = price_gap(traj.region, utility, solution.v_star, qT)
    qn = np.linalg.norm(traj.q, axis=1)
    half = len(traj) // 2
    return ConvergenceReport(
        times=traj.t[idx],
        rho_Vstar=rv,
        dual_gap=float(gap),
        dual_feasibility=float(min(qT[:nc].min(initial=0.0), 0.0)),
        comp_slackness=float(qT @ solution.v_star),
        sup_q=float(qn.max()),
        sup_q_first_half=float(qn[:half].max()),
        sup_q_last_half=float(qn[half:].max()),
        q_at_half=float(qn[half]),
        tol=tol,
    )


# --------------------------------------------------------------------------
# matching scenarios


@dataclass(frozen=True, eq=False)
class MatchingFluid:
    """Fluid problem of a matching scenario on its mapped network (time in
    units of beta x decision rounds; multiply values by m for per-slot units)."""

    mapped: MappedNetwork
    region: RateRegion
    solution: RateRegionSolution

    @property
    def per_slot_value(self) -> float:
        return self.mapped.m * self.solution.value

    def zero_state(self) -> tuple[np.ndarray, np.ndarray]:
        """Embedding of the all-zero matching state (outside V)."""
        st = self.mapped.embed(VirtualState(np.zeros(self.mapped.n_items), np.zeros(self.mapped.n_matchings)))
        return st.x, st.q


def matching_fluid(s: Scenario, c: Optional[float] = None) -> MatchingFluid:
    mapped = map_to_network(s, c)
    region = RateRegion.of(mapped.net)
    if mapped.utility.is_linear:
        sol = solve_linear(mapped.net, mapped.utility)
    else:
        sol = solve_concave(mapped.net, mapped.utility)
    return MatchingFluid(mapped, region, sol)


@dataclass
class ScalingRow:
    beta: float
    mean_deviation: float
    sup_deviation: float
    runs: int


def scaled_paths(
    mf: MatchingFluid, beta: float, t_end: float, seed: int, gamma: Optional[np.ndarray] = None
) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    """Run EGPD on the mapped network for t_end/beta rounds and return
    (times, x^beta, q^beta) with x^beta(t) = X(t/beta), q^beta(t) = beta gamma Q(t/beta)."""
    mapped = mf.mapped
    gamma = mapped.gamma if gamma is None else gamma
    x0, q0 = mf.zero_state()
    rounds = int(round(t_end / beta))
    res = core.run(mapped.net, mapped.utility, beta, gamma, rounds, x0=x0, q0=q0, rng=make_rng(seed))
    xs = np.array([st.x for st in res.trace])
    qs = np.array([beta * gamma * st.q for st in res.trace])
    return np.arange(rounds + 1) * beta, xs, qs


def compare_scaled_simulation(
    s: Scenario,
    betas: Sequence[float] = (0.1, 0.03, 0.01),
    t_end: float = 10.0,
    seeds: Sequence[int] = (0, 1, 2, 3, 4),
    h: float = 1e-3,
    c: Optional[float] = None,
    fluid: Optional[Trajectory] = None,
) -> list[ScalingRow]:
    """Deviation of rescaled stochastic paths from the fluid path started at
    the same (embedded zero) state. Mean deviation averages the Euclidean
    distance in (x, q) over the round grid and over seeds."""
    if s.gamma is not None and not np.allclose(s.gamma_vec, 1.0):
        raise ValueError("scaled comparison assumes unit gamma (the fluid q is beta*Q)")
    mf = matching_fluid(s, c)
    if fluid is None:
        x0, q0 = mf.zero_state()
        fluid = integrate(mf.region, mf.mapped.utility, x0, q0, t_end, h, rho_every=10**9)
    rows = []
    for beta in betas:
        ratio = beta / h
        if abs(ratio - round(ratio)) > 1e-9:
            raise ValueError(f"fluid step {h} must divide beta {beta}")
        means, sups = [], []
        for seed in seeds:
            t, xs, qs = scaled_paths(mf, beta, t_end, seed)
            fi = np.minimum(np.round(t / h).astype(int), len(fluid) - 1)
            dev = np.sqrt(((xs - fluid.x[fi]) ** 2).sum(axis=1) + ((qs - fluid.q[fi]) ** 2).sum(axis=1))
            means.append(dev.mean())
            sups.append(dev.max())
        rows.append(ScalingRow(beta, float(np.mean(means)), float(np.max(sups)), len(seeds)))
    return rows
