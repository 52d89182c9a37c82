import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from egpd.matching import (
    MatchingError,
    PhysicalState,
    SchemeMetrics,
    VirtualState,
    complete_one,
    lockstep,
    map_to_network,
    queue_relation_violations,
    sample_arrivals,
    scheme_step,
    select_matching,
    simulate,
    virtual_step,
)
from egpd.model import ArrivalModel, MatchingSpec, Scenario, UtilitySpec
from egpd.rng import make_rng


def small(mus, rewards, rates, m=1, beta=0.1, costs=None, policy="fcfs", horizon=200, seed=0):
    I = len(rates)
    ms = [MatchingSpec(0, np.zeros(I), 0.0, "<>")]
    ms += [MatchingSpec(j + 1, np.asarray(mu, float), float(w), f"m{j + 1}") for j, (mu, w) in enumerate(zip(mus, rewards))]
    return Scenario(
        item_labels=tuple(str(i + 1) for i in range(I)),
        matchings=tuple(ms),
        arrivals=ArrivalModel.poisson(rates),
        m=m,
        beta=beta,
        holding_costs=None if costs is None else np.asarray(costs, float),
        completion_policy=policy,
        horizon=horizon,
        seed=seed,
    )


def test_select_at_zero_queues(exp_a):
    assert select_matching(VirtualState.zero(exp_a), exp_a) == 7


def test_item3_shortage_avoids_item3_matchings(exp_a):
    K = 1000.0  # beta * K = 10 > 7
    v = VirtualState(np.array([0, 0, -K, 0.0]), np.zeros(8))
    j = select_matching(v, exp_a)
    assert exp_a.mu[j, 2] == 0
    assert exp_a.matching_labels()[j] == "<1,2>"


def test_all_zero_rewards_pick_empty(exp_a):
    zero = exp_a.with_(matchings=tuple(MatchingSpec(m.id, m.mu, 0.0, m.label) for m in exp_a.matchings))
    assert select_matching(VirtualState.zero(zero), zero) == 0


@settings(max_examples=100, deadline=None)
@given(st.lists(st.floats(-50, 50), min_size=4, max_size=4), st.floats(0.01, 100))
def test_scale_invariance(q, scale):
    from egpd.presets import assembly_scenario

    s = assembly_scenario(beta=0.05)
    v = VirtualState(np.array(q), np.zeros(8))
    scaled = s.with_(
        matchings=tuple(MatchingSpec(m.id, m.mu, m.reward * scale, m.label) for m in s.matchings),
        beta=s.beta * scale,
    )
    assert select_matching(v, s) == select_matching(v, scaled)


def test_virtual_step_examples():
    s = small([[1, 1]], [3.0], [0.5, 0.5], beta=0.25)
    v = VirtualState(np.array([1.0, -1.0]), np.array([0.0, 2.0]))
    same = virtual_step(v, 0, [0, 0], s)
    assert np.allclose(same.Q, v.Q) and np.allclose(same.X, 0.75 * v.X)
    nxt = virtual_step(v, 1, [0, 0], s)
    assert np.allclose(nxt.Q, [0, -2])
    one = virtual_step(VirtualState.zero(s), 1, [0, 0], s.with_(beta=1.0))
    assert one.X[1] == 3.0


def test_complete_one_examples():
    s = small([[1, 1]], [1.0], [0.5, 0.5], horizon=1)
    p, done = complete_one(PhysicalState(np.array([1.0, 0.0]), (1,)), s)
    assert done is None and p.pending == (1,)
    p, done = complete_one(PhysicalState(np.array([1.0, 1.0]), (1,)), s)
    assert done == 1 and np.allclose(p.Qhat, 0) and p.pending == ()
    s3 = small([[1, 1, 0], [0, 0, 1]], [1.0, 1.0], [0.5, 0.5, 0.5])
    p, done = complete_one(PhysicalState(np.array([0.0, 0.0, 5.0]), (1, 2)), s3)
    assert done == 2 and p.pending == (1,) and p.Qhat[2] == 4.0


def test_negative_mu_never_blocks():
    s = small([[1, -1]], [1.0], [0.5, 0.5])
    p, done = complete_one(PhysicalState(np.array([1.0, 0.0]), (1,)), s)
    assert done == 1 and np.allclose(p.Qhat, [0.0, 1.0])


def test_cost_priority():
    s = small([[1, 0], [0, 1]], [1.0, 1.0], [0.5, 0.5], costs=[0.1, 0.5], policy="cost-priority")
    p, done = complete_one(PhysicalState(np.array([1.0, 1.0]), (1, 2)), s)
    assert done == 2
    p, done = complete_one(PhysicalState(np.array([1.0, 1.0]), (1, 2)), s, policy="fcfs")
    assert done == 1


def test_first_slot_from_zero(exp_a):
    v, p, d = scheme_step(VirtualState.zero(exp_a), PhysicalState.zero(exp_a), exp_a, arrivals=[1, 2, 0, 1])
    assert d.completed_counts.sum() == 0
    assert p.Qhat0 == d.virtual_counts[1:].sum()
    assert np.allclose(p.Qhat, [1, 2, 0, 1])
    assert queue_relation_violations(v, p, exp_a) == []


@pytest.mark.parametrize("exhaustive", [True, False])
def test_scheme_step_matches_simulate(exp_a, exhaustive):
    s = exp_a.with_(beta=0.3, horizon=300, holding_costs=np.array([0.1, 0.2, 0.3, 0.4]))
    arr = sample_arrivals(s, make_rng(4), s.horizon)
    r = simulate(s, arrivals=arr, exhaustive=exhaustive)
    v, p = VirtualState.zero(s), PhysicalState.zero(s)
    tot = SchemeMetrics.zero(s)
    for t in range(s.horizon):
        v, p, d = scheme_step(v, p, s, arrivals=arr[t], exhaustive=exhaustive)
        tot = tot + d
    assert np.array_equal(tot.virtual_counts, r.virtual_counts[-1])
    assert np.array_equal(tot.completed_counts, r.completed_counts[-1])
    assert tot.reward == pytest.approx(r.reward[-1])
    assert tot.holding_cost == pytest.approx(r.holding_cost[-1])
    assert np.allclose(v.Q, r.final_virtual.Q) and np.allclose(p.Qhat, r.final_physical.Qhat)
    assert p.pending == r.final_physical.pending
    assert np.allclose(v.X, r.final_virtual.X)


@st.composite
def scenarios(draw):
    I = draw(st.integers(2, 4))
    J = draw(st.integers(1, 5))
    mus = [draw(st.lists(st.integers(0, 2), min_size=I, max_size=I)) for _ in range(J)]
    rewards = draw(st.lists(st.integers(-2, 8), min_size=J, max_size=J))
    rates = draw(st.lists(st.floats(0.1, 2.0), min_size=I, max_size=I))
    m = draw(st.integers(1, 4))
    beta = draw(st.sampled_from([0.01, 0.1, 1.0, 5.0]))
    policy = draw(st.sampled_from(["fcfs", "cost-priority"]))
    costs = draw(st.lists(st.floats(0, 1), min_size=I, max_size=I))
    return small(mus, rewards, rates, m, beta, costs, policy, horizon=300, seed=draw(st.integers(0, 1000)))


@settings(max_examples=60, deadline=None)
@given(scenarios())
def test_queue_relations_hold(s):
    r = simulate(s)
    assert r.total_violations == 0, r.violations
    assert r.checks > 0
    # count identity at the end
    pend = np.bincount(r.final_physical.pending, minlength=s.n_matchings)
    # the empty matching is never queued or completed
    assert np.array_equal(r.virtual_counts[-1, 1:] - r.completed_counts[-1, 1:], pend[1:])
    assert np.all(r.completed_counts <= r.virtual_counts)
    assert np.all(r.Qhat >= 0)
    assert np.all(r.Q <= r.Qhat + 1e-9)


@settings(max_examples=40, deadline=None)
@given(scenarios())
def test_bounds_once_nothing_is_completable(s):
    # right after arrivals a pending matching may be completable (arrivals can
    # cancel a shortage before the next scan); once the scan has run, the
    # pending and physical totals are bounded by the virtual shortage
    v, p = VirtualState.zero(s), PhysicalState.zero(s)
    rng = make_rng(s.seed)
    for _ in range(150):
        v, p, _ = scheme_step(v, p, s, rng)
        q = p
        while True:
            q, done = complete_one(q, s)
            if done is None:
                break
        # completion moves Qhat and the pending list together, so v.Q still pairs with q
        assert queue_relation_violations(v, q, s) == []
        neg = np.maximum(-v.Q, 0).sum()
        pos = np.maximum(v.Q, 0).sum()
        assert q.Qhat0 <= neg + 1e-9
        assert q.Qhat.sum() <= pos + s.mu_star * neg + 1e-9


def test_single_completion_can_break_relations(exp_a):
    # one completion per round lets the pending list outgrow the shortage
    s = exp_a.with_(beta=1.0, horizon=3000)
    assert simulate(s).total_violations == 0
    assert simulate(s, exhaustive=False).total_violations > 0


def test_running_average_bounds(exp_a):
    s = exp_a.with_(beta=0.3, horizon=500)
    v, p = VirtualState.zero(s), PhysicalState.zero(s)
    rng = make_rng(0)
    w = s.rewards
    for _ in range(200):
        v, p, _ = scheme_step(v, p, s, rng)
        assert np.all(v.X >= min(0, w.min()) - 1e-12) and np.all(v.X <= max(0, w.max()) + 1e-12)


def test_fifo_within_type():
    s = small([[1, 1]], [1.0], [0.3, 0.9], m=2, beta=0.5, horizon=1)
    v, p = VirtualState.zero(s), PhysicalState.zero(s)
    rng = make_rng(9)
    order = []
    for _ in range(400):
        before = p.pending
        v, p, d = scheme_step(v, p, s, rng)
        assert len(p.pending) <= len(before) + s.m
    # only one nonempty type: completions always take from the head
    p = PhysicalState(np.array([1.0, 1.0]), (1, 1, 1))
    p2, done = complete_one(p, s)
    assert done == 1 and p2.pending == (1, 1)


def test_virtual_and_physical_rates_agree(exp_a):
    r = simulate(exp_a.with_(beta=0.1, horizon=5000))
    gap = np.abs(r.virtual_rates()[1:] - r.completed_rates()[1:]).max()
    assert gap <= r.final_physical.Qhat0 / 5000 + 1e-12


def test_rate_change_at_zero_equals_new_rates(exp_a):
    new = ArrivalModel.poisson([1.8, 0.8, 1.4, 1.0])
    a = simulate(exp_a.with_(rate_changes=((0, new),), horizon=500))
    b = simulate(exp_a.with_(arrivals=new, horizon=500))
    assert np.array_equal(a.virtual_counts, b.virtual_counts) and np.array_equal(a.Qhat, b.Qhat)


def test_rate_change_to_same_rates_is_identical(exp_a):
    s = exp_a.with_(horizon=500)
    a = simulate(s.with_(rate_changes=((200, s.arrivals),)))
    b = simulate(s)
    assert a.metrics_rows(10) == b.metrics_rows(10)


def test_determinism_and_seed_sensitivity(exp_a):
    s = exp_a.with_(horizon=400)
    assert simulate(s).metrics_rows(1) == simulate(s).metrics_rows(1)
    assert simulate(s, seed=2).metrics_rows(1) != simulate(s).metrics_rows(1)


def test_metrics_header(exp_a):
    header, rows = simulate(exp_a.with_(horizon=50)).metrics_rows(10)
    assert header[0] == "t" and header[-1] == "Qhat0"
    assert header[1] == "virtual_rate_<>" and "completed_rate_<2,3,4>" in header
    assert ["avg_reward", "internal_avg_reward", "avg_holding_cost", "avg_profit"] == header[17:21]
    assert [r[0] for r in rows] == [10, 20, 30, 40, 50]


def test_holding_cost_after_arrivals():
    s = small([[1, 1]], [1.0], [1.0, 1.0], costs=[1.0, 2.0], horizon=1)
    v, p, d = scheme_step(VirtualState.zero(s), PhysicalState.zero(s), s, arrivals=[3, 1])
    assert d.holding_cost == 5.0


def test_internal_average_large_beta_rejected_for_concave(exp_a):
    u = UtilitySpec.concave(lambda x: float(np.log(x + 10).sum()), lambda x: 1 / (x + 10))
    with pytest.raises(MatchingError):
        simulate(exp_a.with_(utility=u, beta=3.0, horizon=10))


def test_map_to_network_c8(exp_a):
    mp = map_to_network(exp_a, c=8.0)
    mu = mp.net.controls[7].mu[:8]
    assert mu[7] == 1.0 and np.all(np.delete(mu, 7) == 8.0)
    assert np.allclose(mp.net.controls[7].mu[8:], exp_a.mu[7])
    assert np.allclose(mp.net.controls[0].arrivals.mean[8:], exp_a.arrivals.mean / exp_a.m)
    with pytest.raises(MatchingError):
        map_to_network(exp_a, c=7.0)


@pytest.mark.parametrize("c", [8.0, 20.0])
def test_lockstep_equivalence(exp_a, c):
    r = lockstep(exp_a, c, slots=300, seed=3)
    assert r.identical, r.first_mismatch
    assert r.max_constrained_queue == 0.0


def test_lockstep_bipartite(bipartite):
    r = lockstep(bipartite.with_(beta=0.5), slots=300, seed=1)
    assert r.identical and r.max_constrained_queue == 0.0
