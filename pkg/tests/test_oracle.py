import itertools

import numpy as np
import pytest
from scipy.optimize import linprog

from conftest import net_from_drifts
from egpd.matching import map_to_network
from egpd.model import UtilitySpec
from egpd.oracle import (
    OracleError,
    RateRegion,
    distance_to_polytope,
    optimal_face_distance,
    solve_concave,
    solve_linear,
    solve_matching_lp,
    support_argmax,
)


def test_exp_a_matching_lp_exact(exp_a):
    sol = solve_matching_lp(exp_a)
    assert sol.value == pytest.approx(10.8, abs=1e-9)
    assert np.allclose(sol.nonempty_rates(), [0, 0, 1.7, 0.5, 1.2, 0, 0.3], atol=1e-9)
    assert sol.rates.sum() == pytest.approx(exp_a.m)
    # dual value equals primal value
    assert sol.item_prices @ exp_a.arrivals.mean + exp_a.m * sol.budget_price == pytest.approx(10.8, abs=1e-9)


def test_matching_lp_infeasible_when_rates_too_high(exp_a):
    with pytest.raises(OracleError):
        solve_matching_lp(exp_a.with_(m=1))


def _vertex_enumeration_value(s):
    """max reward over all basic solutions of {x >= 0, mu^T x = alpha, 1.x + slack = m}."""
    J = s.n_matchings
    A = np.zeros((s.n_items + 1, J))
    A[: s.n_items, 1:] = s.mu[1:].T
    A[-1, :] = 1.0  # column 0 (empty matching) is the budget slack
    b = np.concatenate([s.arrivals.mean, [s.m]])
    best = -np.inf
    r = np.linalg.matrix_rank(A)
    for cols in itertools.combinations(range(J), r):
        sub = A[:, cols]
        if np.linalg.matrix_rank(sub) < r:
            continue
        x, *_ = np.linalg.lstsq(sub, b, rcond=None)
        if np.abs(sub @ x - b).max() > 1e-9 or x.min() < -1e-12:
            continue
        best = max(best, float(s.rewards[list(cols)] @ x))
    return best


def test_bipartite_lp_matches_vertex_enumeration(bipartite):
    assert solve_matching_lp(bipartite).value == pytest.approx(_vertex_enumeration_value(bipartite), abs=1e-9)


def test_exp_a_vertex_enumeration(exp_a):
    assert _vertex_enumeration_value(exp_a) == pytest.approx(10.8, abs=1e-9)


@pytest.fixture(scope="module")
def mapped(exp_a):
    mp = map_to_network(exp_a)
    return mp, solve_linear(mp.net, mp.utility)


def test_mapped_network_solution_agrees_with_matching_lp(exp_a, mapped):
    mp, sol = mapped
    assert exp_a.m * sol.value == pytest.approx(10.8, abs=1e-9)
    # per-round rates phi times m are the per-slot matching rates
    assert np.allclose(exp_a.m * sol.phi, solve_matching_lp(exp_a).rates, atol=1e-9)
    assert sol.feasibility_residual() <= 1e-9
    assert abs(sol.complementary_slackness) <= 1e-9
    assert np.all(sol.q_star[: mp.net.n_constrained] >= -1e-12)
    assert sol.phi.sum() == pytest.approx(1.0) and sol.phi.min() >= -1e-12


def test_saddle_bound_on_random_points(mapped):
    mp, sol = mapped
    B = mp.net.mean_increments
    rng = np.random.default_rng(3)
    H = mp.utility.value
    for _ in range(100):
        phi = rng.dirichlet(np.ones(B.shape[0]) * rng.uniform(0.1, 2))
        v = phi @ B
        assert H(v) - sol.q_star @ v <= H(sol.v_star) + 1e-9


def test_support_argmax_at_optimum_is_active_set(mapped):
    mp, sol = mapped
    region = RateRegion.of(mp.net)
    d = mp.utility.gradient(sol.v_star) - sol.q_star
    top = set(support_argmax(region, d))
    active = set(np.flatnonzero(sol.phi > 1e-12).tolist())
    assert active <= top
    # every maximiser is an optimal control: zero reduced cost
    assert np.allclose(region.vertices[sorted(top)] @ d, d @ sol.v_star, atol=1e-9)


def test_support_argmax_examples():
    region = RateRegion(np.array([[1.0, 0.0], [0.0, 2.0], [0.5, 0.5]]))
    assert support_argmax(region, [0, 0]) == [0, 1, 2]
    assert support_argmax(region, [0, 1]) == [1]
    assert region.support([1, 0]) == 1.0


def test_single_control_network():
    net = net_from_drifts([[-0.5, 0.0]], 1)
    sol = solve_linear(net, UtilitySpec.weighted([2.0, 1.0]))
    assert np.allclose(sol.phi, [1.0])
    assert sol.value == pytest.approx(-1.0)


def test_infeasible_network_reported():
    net = net_from_drifts([[1.0, 0.0], [0.5, 1.0]], 1)
    with pytest.raises(OracleError, match="feasibility"):
        solve_linear(net, UtilitySpec())


def test_concave_with_linear_utility_matches_simplex(mapped):
    mp, sol = mapped
    c = solve_concave(mp.net, mp.utility)
    assert c.value == pytest.approx(sol.value, abs=1e-9)


def _quadratic(center):
    center = np.asarray(center, float)
    return UtilitySpec.concave(lambda v: -float(((v - center) ** 2).sum()), lambda v: -2 * (v - center))


def test_concave_interior_optimum():
    net = net_from_drifts([[-1.0, 1.0], [-1.0, -1.0], [1.0, 0.0]], 1)
    sol = solve_concave(net, _quadratic([-0.5, 0.0]))
    assert sol.value == pytest.approx(0.0, abs=1e-9)
    assert np.allclose(sol.v_star, [-0.5, 0.0], atol=1e-6)


def test_strictly_concave_unique_from_random_starts(exp_a):
    mp = map_to_network(exp_a)
    K = mp.net.n_controls
    rng = np.random.default_rng(0)
    center = rng.normal(size=mp.net.n_nodes)
    u = _quadratic(center)
    sols = [solve_concave(mp.net, u, start_weights=rng.normal(size=K)) for _ in range(5)]
    for s in sols[1:]:
        assert np.allclose(s.v_star, sols[0].v_star, atol=1e-6)
        assert s.value == pytest.approx(sols[0].value, abs=1e-9)


def test_distance_examples():
    region = RateRegion(np.array([[-1.0], [1.0]]))
    assert distance_to_polytope([3.0], region) == pytest.approx(2.0, abs=1e-9)
    sq = RateRegion(np.array([[0.0, 0.0], [1.0, 0.0], [0.0, 1.0], [1.0, 1.0]]))
    assert distance_to_polytope([1.0, 1.0], sq) <= 1e-9
    assert distance_to_polytope([0.5, 0.0], sq) <= 1e-9
    assert distance_to_polytope([2.0, 2.0], sq) == pytest.approx(np.sqrt(2), abs=1e-9)


def _in_hull(x, V):
    K = V.shape[0]
    A_eq = np.vstack([V.T, np.ones(K)])
    res = linprog(np.zeros(K), A_eq=A_eq, b_eq=np.append(x, 1.0), bounds=(0, None), method="highs")
    return res.status == 0


def test_distance_zero_iff_in_hull():
    rng = np.random.default_rng(1)
    V = rng.normal(size=(7, 3))
    region = RateRegion(V)
    for _ in range(40):
        x = rng.normal(size=3) * 1.2
        d = distance_to_polytope(x, region)
        assert (d <= 1e-7) == _in_hull(x, V)


def test_optimal_face_distance(mapped):
    mp, sol = mapped
    assert optimal_face_distance(sol.v_star, mp.net, mp.utility, sol) <= 1e-9
    far = sol.v_star + 1.0
    assert optimal_face_distance(far, mp.net, mp.utility, sol) >= distance_to_polytope(far, RateRegion.of(mp.net)) - 1e-9
