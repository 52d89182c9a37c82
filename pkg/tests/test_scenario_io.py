import numpy as np
import pytest

from egpd.presets import BIPARTITE_ITEMS, PRESET_NAMES, get_preset
from egpd.report import scenario_digest
from egpd.scenario_io import ScenarioFileError, load_scenario, parse_scenario, scenario_to_yaml

GOOD = """\
name: tiny
items: ["a", "b"]
matchings:
  - {label: "<>", mu: [0, 0], reward: 0}
  - {label: "<a,b>", mu: {a: 1, b: 1}, reward: 3}
arrivals: {kind: independent-poisson, rates: [0.4, 0.4]}
m: 2
beta: 0.05
holding_costs: [0.1, 0.2]
horizon: 100
seed: 7
"""


def test_parse_good():
    sf = parse_scenario(GOOD)
    s = sf.scenario
    assert s.name == "tiny" and s.m == 2 and s.seed == 7
    assert np.allclose(s.mu[1], [1, 1])
    assert np.allclose(s.costs, [0.1, 0.2])
    assert sf.bipartite_top is None


@pytest.mark.parametrize("name", PRESET_NAMES)
def test_round_trip(name):
    s = get_preset(name).scenario
    top = BIPARTITE_ITEMS[:4] if name == "bipartite_profit" else None
    sf = parse_scenario(scenario_to_yaml(s, top))
    assert scenario_digest(sf.scenario) == scenario_digest(s)
    assert sf.bipartite_top == top


def _err(text):
    with pytest.raises(ScenarioFileError) as e:
        parse_scenario(text)
    return str(e.value)


def test_unknown_key_line():
    assert _err(GOOD + "colour: red\n").startswith("line 12:")


def test_bad_value_line():
    msg = _err(GOOD.replace("m: 2", "m: two"))
    assert msg.startswith("line 7:") and "integer" in msg


def test_wrong_length():
    assert "expected 2" in _err(GOOD.replace("rates: [0.4, 0.4]", "rates: [0.4]"))


def test_missing_key():
    assert "missing required key 'arrivals'" in _err(GOOD.replace("arrivals:", "# arrivals:"))


def test_unknown_item_in_mapping():
    assert "unknown item 'c'" in _err(GOOD.replace("{a: 1, b: 1}", "{a: 1, c: 1}"))


def test_invariant_violations_reported():
    assert "beta must be positive" in _err(GOOD.replace("beta: 0.05", "beta: 0"))


def test_invalid_yaml():
    assert _err("items: [a\n").startswith("line")


def test_empty():
    assert "empty" in _err("")


def test_batch_table_and_changes():
    text = GOOD.replace(
        "arrivals: {kind: independent-poisson, rates: [0.4, 0.4]}",
        "arrivals: {kind: batch-table, batches: [{batch: [1, 1], prob: 0.4}, {batch: [0, 0], prob: 0.6}]}\n"
        "rate_changes:\n  - {slot: 50, arrivals: {kind: deterministic, vector: [1, 1]}}",
    )
    s = parse_scenario(text).scenario
    assert np.allclose(s.arrivals.mean, [0.4, 0.4])
    assert s.rate_changes[0][0] == 50


def test_bipartite_top_unknown():
    assert "unknown items" in _err(GOOD + "bipartite_top: [z]\n")


def test_missing_file(tmp_path):
    with pytest.raises(FileNotFoundError):
        load_scenario(tmp_path / "nope.yaml")


def test_load_uses_stem(tmp_path):
    p = tmp_path / "mine.yaml"
    p.write_text(GOOD.replace("name: tiny\n", ""))
    assert load_scenario(p).scenario.name == "mine"
