import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from conftest import net_from_drifts
from egpd.matching import map_to_network
from egpd.model import (
    ArrivalModel,
    Control,
    MatchingSpec,
    ModelError,
    NetworkModel,
    Scenario,
    UtilitySpec,
    check_drift_condition,
    check_ncond,
    reduce_drift_subspace,
    validate_scenario,
)
from egpd.presets import all_presets, bipartite_ncond_inputs


def test_presets_validate():
    for p in all_presets():
        assert validate_scenario(p.scenario) == []


def test_exp_a_scenario(exp_a):
    assert validate_scenario(exp_a) == []
    assert np.allclose(exp_a.rewards, [0, -1, -1, 1, 2, 5, 4, 7])
    assert exp_a.mu_star == 3


def test_beta_zero_diagnostic(exp_a):
    assert "beta must be positive" in validate_scenario(exp_a.with_(beta=0.0))


def test_bad_batch_probabilities(exp_a):
    a = ArrivalModel.batch_table([[1, 0, 0, 0], [0, 1, 1, 1]], [0.5, 0.4])
    assert "probabilities must sum to 1" in validate_scenario(exp_a.with_(arrivals=a))


def test_other_diagnostics(exp_a):
    assert "m must be a positive integer" in validate_scenario(exp_a.with_(m=0))
    assert "horizon must be at least 1" in validate_scenario(exp_a.with_(horizon=0))
    bad = exp_a.with_(matchings=(MatchingSpec(0, np.ones(4), 0.0),) + exp_a.matchings[1:])
    assert any("empty matching" in d for d in validate_scenario(bad))
    assert any("gamma" in d for d in validate_scenario(exp_a.with_(gamma=np.array([1, 1, 0, 1.0]))))


def test_concave_utility_gradient_is_checked(exp_a):
    good = UtilitySpec.concave(lambda x: -0.5 * float(x @ x), lambda x: -x)
    bad = UtilitySpec.concave(lambda x: -0.5 * float(x @ x), lambda x: x)
    assert validate_scenario(exp_a.with_(utility=good)) == []
    assert "utility gradient disagrees with finite differences" in validate_scenario(exp_a.with_(utility=bad))


@settings(max_examples=50, deadline=None)
@given(st.lists(st.lists(st.integers(0, 5), min_size=3, max_size=3), min_size=1, max_size=5), st.data())
def test_batch_mean_matches_weighted_sum(batches, data):
    w = np.array(data.draw(st.lists(st.floats(0.01, 1.0), min_size=len(batches), max_size=len(batches))))
    p = w / w.sum()
    a = ArrivalModel.batch_table(batches, p)
    assert np.allclose(a.mean, p @ np.array(batches, float), atol=1e-12)


def test_sampling_means():
    rng = np.random.default_rng(0)
    a = ArrivalModel.batch_table([[1, 0], [0, 2]], [0.25, 0.75])
    assert np.allclose(a.sample(rng, 200_000).mean(axis=0), a.mean, atol=0.01)
    p = ArrivalModel.poisson([0.5, 2.0])
    assert np.allclose(p.sample(rng, 200_000).mean(axis=0), [0.5, 2.0], atol=0.02)
    assert np.allclose(p.per_round(4).mean, [0.125, 0.5])
    assert np.allclose(a.per_round(3).mean, a.mean / 3)


def test_drift_condition_exp_a(exp_a):
    rep = check_drift_condition(map_to_network(exp_a).net)
    assert rep.holds and rep.margin > 0
    assert len(rep.witnesses) == 2**4


def test_drift_condition_only_empty_control():
    net = NetworkModel(0, 1, (Control(np.zeros(1), ArrivalModel.poisson([0.5])),))
    assert not check_drift_condition(net).holds


def test_drift_condition_monotone_in_epsilon(exp_a):
    net = map_to_network(exp_a).net
    m = check_drift_condition(net).margin
    assert check_drift_condition(net, m * 0.5).holds
    assert not check_drift_condition(net, m * 2).holds


def test_drift_condition_refuses_large_networks():
    net = net_from_drifts(np.eye(21), 0)
    with pytest.raises(ModelError, match="exhaustive check infeasible"):
        check_drift_condition(net)


def test_bipartite_raw_fails_reduced_holds(bipartite):
    net = map_to_network(bipartite).net
    assert not check_drift_condition(net).holds
    red = reduce_drift_subspace(net)
    assert red.dim == 7
    assert check_drift_condition(red.reduced).holds
    # the removed direction is the top-minus-bottom identity
    ident = np.array([1, 1, 1, 1, -1, -1, -1, -1.0]) / np.sqrt(8)
    assert np.abs(red.basis.T @ ident).max() < 1e-9
    assert np.allclose(red.basis.T @ red.basis, np.eye(7), atol=1e-12)


def test_reduction_full_rank_is_identity(exp_a):
    net = map_to_network(exp_a).net
    red = reduce_drift_subspace(net)
    assert red.reduced is net
    assert np.allclose(red.basis, np.eye(net.n_free))


def test_reduction_pair_arrivals_single_coordinate():
    # items 1 and 2 arrive together and leave together
    pair = ArrivalModel.batch_table([[0, 0], [1, 1]], [0.5, 0.5])
    net = NetworkModel(0, 2, (Control(np.zeros(2), pair), Control(np.ones(2), pair)))
    red = reduce_drift_subspace(net)
    assert red.dim == 1
    assert np.allclose(np.abs(red.basis[:, 0]), [1 / np.sqrt(2)] * 2)


def test_reduction_idempotent(bipartite):
    red = reduce_drift_subspace(map_to_network(bipartite).net)
    assert reduce_drift_subspace(red.reduced).dim == red.dim


def test_reduction_rejects_bad_tol(exp_a):
    with pytest.raises(ModelError):
        reduce_drift_subspace(map_to_network(exp_a).net, tol=0.0)


def test_ncond_bipartite():
    assert check_ncond(*bipartite_ncond_inputs()).stabilizable


def test_ncond_perturbed():
    top, bottom, edges = bipartite_ncond_inputs()
    bottom = bottom.copy()
    bottom[2] = 0.05  # item 3'
    rep = check_ncond(top, bottom, edges)
    assert not rep.stabilizable
    T = rep.violating_subset
    B = {b for t, b in edges if t in T}
    assert top[list(T)].sum() >= bottom[sorted(B)].sum()


def test_ncond_two_items_unbalanced():
    assert not check_ncond([0.3], [0.5], [(0, 0)]).stabilizable
    assert check_ncond([0.5], [0.5], [(0, 0)]).stabilizable  # no strict subsets


def test_ncond_disconnected():
    with pytest.raises(ModelError, match="connected"):
        check_ncond([0.5, 0.5], [0.5, 0.5], [(0, 0), (1, 1)])


def test_ncond_relabeling_invariant():
    top, bottom, edges = bipartite_ncond_inputs()
    perm = [2, 0, 3, 1]
    inv = np.argsort(perm)
    moved = [(int(inv[t]), b) for t, b in edges]
    assert check_ncond(top[perm], bottom, moved).stabilizable == check_ncond(top, bottom, edges).stabilizable
    # swapping the sides of a symmetric system gives the same verdict
    for a in ([0.5, 0.5], [0.6, 0.4], [0.4, 0.6]):
        e = [(0, 0), (0, 1), (1, 1)]
        swapped = [(b, t) for t, b in e]
        assert check_ncond(a, a[::-1], e).stabilizable == check_ncond(a[::-1], a, swapped).stabilizable
