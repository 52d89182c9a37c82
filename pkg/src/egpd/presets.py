"""The reference experiments: three on the four-item assembly system and one
bipartite pair-arrival system with holding costs."""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .model import ArrivalModel, MatchingSpec, Scenario, UtilitySpec, validate_scenario

EXP_A_ALPHA = (1.2, 1.5, 2.0, 0.8)
EXP_C_ALPHA = (1.8, 0.8, 1.4, 1.0)
# completed-matching rates per slot reported for the EGPD run (nonempty matchings)
EXP_A_EGPD_RATES = (0.0, 0.0, 1.69345, 0.4829, 1.1924, 0.0, 0.31075)
EXP_A_LP_RATES = (0.0, 0.0, 1.7, 0.5, 1.2, 0.0, 0.3)
EXP_A_LP_VALUE = 10.8

BIPARTITE_ITEMS = ("1", "2", "3", "4", "1'", "2'", "3'", "4'")
BIPARTITE_ARRIVAL_PAIRS = (
    ("1", "1'", 0.166),
    ("1", "2'", 0.083),
    ("2", "1'", 0.087),
    ("2", "2'", 0.083),
    ("3", "4'", 0.2324),
    ("4", "3'", 0.2656),
    ("4", "4'", 0.083),
)
BIPARTITE_MATCHINGS = (
    ("1", "3'", 5.0),
    ("1", "4'", 50.0),
    ("2", "3'", 5.0),
    ("2", "4'", 50.0),
    ("3", "1'", 5.0),
    ("3", "2'", 50.0),
    ("3", "3'", 5.0),
    ("4", "1'", 50.0),
    ("4", "2'", 5.0),
)
BIPARTITE_COSTS = (0.1, 0.2, 0.3, 0.4, 0.4, 0.3, 0.2, 0.1)
BIPARTITE_BETAS = (0.03, 0.1, 0.3, 1.0, 3.0, 10.0, 30.0, 100.0)
EXP_B_BETAS = (0.01, 0.1, 1.0, 10.0, 100.0)


@dataclass(frozen=True, eq=False)
class Reference:
    name: str
    value: object
    source: str  # "published" or "derived"


@dataclass(frozen=True, eq=False)
class ExperimentPreset:
    name: str
    scenario: Scenario
    betas: tuple[float, ...] = ()
    references: tuple[Reference, ...] = field(default_factory=tuple)

    def reference(self, name: str):
        for r in self.references:
            if r.name == name:
                return r.value
        raise KeyError(name)


def _label(items) -> str:
    return "<" + ",".join(items) + ">" if items else "<>"


def assembly_scenario(alpha=EXP_A_ALPHA, m: int = 4, beta: float = 0.01, horizon: int = 30000, seed: int = 1) -> Scenario:
    """Four item types; matchings <>,<1>,<2>,<3>,<4>,<1,2>,<2,3>,<2,3,4>."""
    sets = [(), (1,), (2,), (3,), (4,), (1, 2), (2, 3), (2, 3, 4)]
    rewards = [0, -1, -1, 1, 2, 5, 4, 7]
    matchings = []
    for j, (items, w) in enumerate(zip(sets, rewards)):
        mu = np.zeros(4)
        mu[[i - 1 for i in items]] = 1.0
        matchings.append(MatchingSpec(j, mu, float(w), _label([str(i) for i in items])))
    return Scenario(
        item_labels=("1", "2", "3", "4"),
        matchings=tuple(matchings),
        arrivals=ArrivalModel.poisson(alpha),
        m=m,
        beta=beta,
        utility=UtilitySpec(),
        horizon=horizon,
        seed=seed,
        name="assembly",
    )


def bipartite_arrivals(pairs=BIPARTITE_ARRIVAL_PAIRS) -> ArrivalModel:
    idx = {lab: i for i, lab in enumerate(BIPARTITE_ITEMS)}
    batches, probs = [], []
    for a, b, p in pairs:
        v = np.zeros(len(BIPARTITE_ITEMS))
        v[idx[a]] += 1
        v[idx[b]] += 1
        batches.append(v)
        probs.append(p)
    return ArrivalModel.batch_table(batches, probs)


def bipartite_scenario(beta: float = 0.01, horizon: int = 50_000, seed: int = 1, policy: str = "fcfs") -> Scenario:
    idx = {lab: i for i, lab in enumerate(BIPARTITE_ITEMS)}
    matchings = [MatchingSpec(0, np.zeros(8), 0.0, "<>")]
    for j, (a, b, w) in enumerate(BIPARTITE_MATCHINGS, start=1):
        mu = np.zeros(8)
        mu[idx[a]] = mu[idx[b]] = 1.0
        matchings.append(MatchingSpec(j, mu, w, _label([a, b])))
    return Scenario(
        item_labels=BIPARTITE_ITEMS,
        matchings=tuple(matchings),
        arrivals=bipartite_arrivals(),
        m=2,
        beta=beta,
        holding_costs=np.array(BIPARTITE_COSTS),
        completion_policy=policy,
        horizon=horizon,
        seed=seed,
        name="bipartite",
    )


def bipartite_ncond_inputs(alpha=None):
    """(top rates, bottom rates, edges) for the bipartite system; edges index
    top items 0..3 and bottom items 0..3."""
    a = bipartite_arrivals().mean if alpha is None else np.asarray(alpha, float)
    edges = []
    for t, b, _ in BIPARTITE_MATCHINGS:
        edges.append((BIPARTITE_ITEMS.index(t), BIPARTITE_ITEMS.index(b) - 4))
    return a[:4], a[4:], edges


def get_preset(name: str) -> ExperimentPreset:
    if name == "expA":
        s = assembly_scenario()
        refs = (
            Reference("lp_value", EXP_A_LP_VALUE, "published"),
            Reference("lp_rates", EXP_A_LP_RATES, "derived"),
            Reference("egpd_rates", EXP_A_EGPD_RATES, "published"),
        )
        return ExperimentPreset(name, s.with_(name=name), (), refs)
    if name == "expB_beta_sweep":
        s = assembly_scenario(horizon=30000)
        refs = (Reference("lp_value", EXP_A_LP_VALUE, "published"),)
        return ExperimentPreset(name, s.with_(name=name), EXP_B_BETAS, refs)
    if name == "expC_rate_change":
        s = assembly_scenario(beta=0.1, horizon=10000).with_(
            rate_changes=((2000, ArrivalModel.poisson(EXP_C_ALPHA)),), name=name
        )
        return ExperimentPreset(name, s, (), ())
    if name == "bipartite_profit":
        s = bipartite_scenario().with_(name=name)
        return ExperimentPreset(name, s, BIPARTITE_BETAS, ())
    raise KeyError(f"unknown preset {name!r}; choose from {', '.join(PRESET_NAMES)}")


PRESET_NAMES = ("expA", "expB_beta_sweep", "expC_rate_change", "bipartite_profit")


def all_presets() -> list[ExperimentPreset]:
    out = [get_preset(n) for n in PRESET_NAMES]
    for p in out:
        diags = validate_scenario(p.scenario)
        if diags:
            raise ValueError(f"preset {p.name} invalid: {diags}")
    return out
