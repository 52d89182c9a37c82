"""Scenario files (YAML).

    name: assembly
    items: ["1", "2", "3", "4"]
    matchings:                      # index 0 must be the empty matching
      - {label: "<>", mu: [0, 0, 0, 0], reward: 0}
      - {label: "<1,2>", mu: {"1": 1, "2": 1}, reward: 5}
    arrivals: {kind: independent-poisson, rates: [1.2, 1.5, 2.0, 0.8]}
    # or: {kind: batch-table, batches: [{batch: [1, 0, 1, 0], prob: 0.5}, ...]}
    # or: {kind: deterministic, vector: [...]}
    m: 4
    beta: 0.01
    gamma: [1, 1, 1, 1]             # optional
    utility: linear-sum             # or {kind: weighted-linear, coefficients: [...], constant: 0}
    holding_costs: [0, 0, 0, 0]     # optional
    completion_policy: fcfs         # or cost-priority
    horizon: 30000
    seed: 1
    rate_changes:                   # optional
      - {slot: 2000, arrivals: {kind: independent-poisson, rates: [...]}}
    bipartite_top: ["1", "2"]       # optional, enables the NCond check

Errors raise ``ScenarioFileError`` naming the line of the offending node.
"""

from __future__ import annotations

from dataclasses import dataclass
from pathlib import Path
from typing import Optional

import numpy as np
import yaml

from .model import ArrivalModel, MatchingSpec, Scenario, UtilitySpec, validate_scenario

KNOWN_KEYS = {
    "name", "items", "matchings", "arrivals", "m", "beta", "gamma", "utility", "holding_costs",
    "completion_policy", "horizon", "seed", "rate_changes", "bipartite_top",
}
REQUIRED_KEYS = ("items", "matchings", "arrivals")


class ScenarioFileError(ValueError):
    pass


@dataclass(frozen=True, eq=False)
class ScenarioFile:
    scenario: Scenario
    bipartite_top: Optional[tuple[str, ...]] = None
    path: Optional[str] = None


def _err(node, msg: str) -> ScenarioFileError:
    line = node.start_mark.line + 1 if node is not None else "?"
    return ScenarioFileError(f"line {line}: {msg}")


def _scalar(node, kind=float, what="value"):
    if not isinstance(node, yaml.ScalarNode):
        raise _err(node, f"{what} must be a scalar")
    value = yaml.safe_load(node.value) if node.tag != "tag:yaml.org,2002:str" else node.value
    try:
        if kind is int:
            if isinstance(value, bool) or not float(value).is_integer():
                raise ValueError
            return int(value)
        if kind is float:
            if isinstance(value, bool):
                raise ValueError
            return float(value)
        return str(value)
    except (TypeError, ValueError):
        raise _err(node, f"{what} must be {'an integer' if kind is int else 'a number'}, got {node.value!r}")


def _seq(node, what: str) -> list:
    if not isinstance(node, yaml.SequenceNode):
        raise _err(node, f"{what} must be a list")
    return node.value


def _map(node, what: str) -> dict:
    if not isinstance(node, yaml.MappingNode):
        raise _err(node, f"{what} must be a mapping")
    out = {}
    for k, v in node.value:
        out[_scalar(k, str, "key")] = (k, v)
    return out


def _vector(node, what: str, n: Optional[int] = None, labels: Optional[list[str]] = None) -> np.ndarray:
    if isinstance(node, yaml.MappingNode) and labels is not None:
        vec = np.zeros(len(labels))
        for key, (knode, vnode) in _map(node, what).items():
            if key not in labels:
                raise _err(knode, f"{what}: unknown item {key!r}")
            vec[labels.index(key)] = _scalar(vnode, float, what)
        return vec
    vals = np.array([_scalar(x, float, what) for x in _seq(node, what)])
    if n is not None and vals.size != n:
        raise _err(node, f"{what} has {vals.size} entries, expected {n}")
    return vals


def _arrivals(node, labels: list[str]) -> ArrivalModel:
    d = _map(node, "arrivals")
    if "kind" not in d:
        raise _err(node, "arrivals needs a 'kind'")
    kind = _scalar(d["kind"][1], str, "kind")
    n = len(labels)
    if kind == "independent-poisson":
        if "rates" not in d:
            raise _err(node, "independent-poisson arrivals need 'rates'")
        return ArrivalModel.poisson(_vector(d["rates"][1], "rates", n, labels))
    if kind == "deterministic":
        if "vector" not in d:
            raise _err(node, "deterministic arrivals need 'vector'")
        return ArrivalModel.deterministic(_vector(d["vector"][1], "vector", n, labels))
    if kind == "batch-table":
        if "batches" not in d:
            raise _err(node, "batch-table arrivals need 'batches'")
        batches, probs = [], []
        for b in _seq(d["batches"][1], "batches"):
            bd = _map(b, "batch entry")
            if "batch" not in bd or "prob" not in bd:
                raise _err(b, "batch entry needs 'batch' and 'prob'")
            batches.append(_vector(bd["batch"][1], "batch", n, labels))
            probs.append(_scalar(bd["prob"][1], float, "prob"))
        return ArrivalModel.batch_table(batches, probs)
    raise _err(d["kind"][1], f"unknown arrival kind {kind!r}")


def _utility(node) -> UtilitySpec:
    if isinstance(node, yaml.ScalarNode):
        name = _scalar(node, str, "utility")
        if name == "linear-sum":
            return UtilitySpec()
        raise _err(node, f"unknown utility {name!r} (scenario files support linear-sum and weighted-linear)")
    d = _map(node, "utility")
    kind = _scalar(d["kind"][1], str, "kind") if "kind" in d else None
    if kind == "linear-sum":
        return UtilitySpec()
    if kind == "weighted-linear":
        if "coefficients" not in d:
            raise _err(node, "weighted-linear utility needs 'coefficients'")
        const = _scalar(d["constant"][1], float, "constant") if "constant" in d else 0.0
        return UtilitySpec.weighted(_vector(d["coefficients"][1], "coefficients"), const)
    raise _err(node, f"unknown utility kind {kind!r} (concave utilities are available from Python only)")


def parse_scenario(text: str, path: Optional[str] = None) -> ScenarioFile:
    try:
        root = yaml.compose(text)
    except yaml.YAMLError as exc:
        mark = getattr(exc, "problem_mark", None)
        where = f"line {mark.line + 1}: " if mark is not None else ""
        raise ScenarioFileError(f"{where}invalid YAML ({getattr(exc, 'problem', exc)})") from exc
    if root is None:
        raise ScenarioFileError("line 1: empty scenario file")
    top = _map(root, "scenario")
    for key, (knode, _) in top.items():
        if key not in KNOWN_KEYS:
            raise _err(knode, f"unknown key {key!r}")
    for key in REQUIRED_KEYS:
        if key not in top:
            raise _err(root, f"missing required key {key!r}")
    labels = [_scalar(x, str, "item label") for x in _seq(top["items"][1], "items")]
    if len(set(labels)) != len(labels):
        raise _err(top["items"][1], "item labels must be unique")
    matchings = []
    for j, mnode in enumerate(_seq(top["matchings"][1], "matchings")):
        md = _map(mnode, "matching")
        if "mu" not in md or "reward" not in md:
            raise _err(mnode, "matching needs 'mu' and 'reward'")
        mu = _vector(md["mu"][1], "mu", len(labels), labels)
        reward = _scalar(md["reward"][1], float, "reward")
        label = _scalar(md["label"][1], str, "label") if "label" in md else ""
        matchings.append(MatchingSpec(j, mu, reward, label))

    def opt(key, kind, default):
        return _scalar(top[key][1], kind, key) if key in top else default

    kwargs = dict(
        item_labels=tuple(labels),
        matchings=tuple(matchings),
        arrivals=_arrivals(top["arrivals"][1], labels),
        m=opt("m", int, 1),
        beta=opt("beta", float, 0.01),
        horizon=opt("horizon", int, 1000),
        seed=opt("seed", int, 0),
        completion_policy=opt("completion_policy", str, "fcfs"),
        name=opt("name", str, Path(path).stem if path else "scenario"),
    )
    if "gamma" in top:
        kwargs["gamma"] = _vector(top["gamma"][1], "gamma", len(labels), labels)
    if "holding_costs" in top:
        kwargs["holding_costs"] = _vector(top["holding_costs"][1], "holding_costs", len(labels), labels)
    if "utility" in top:
        kwargs["utility"] = _utility(top["utility"][1])
    if "rate_changes" in top:
        changes = []
        for cnode in _seq(top["rate_changes"][1], "rate_changes"):
            cd = _map(cnode, "rate change")
            if "slot" not in cd or "arrivals" not in cd:
                raise _err(cnode, "rate change needs 'slot' and 'arrivals'")
            changes.append((_scalar(cd["slot"][1], int, "slot"), _arrivals(cd["arrivals"][1], labels)))
        kwargs["rate_changes"] = tuple(changes)
    s = Scenario(**kwargs)
    diags = validate_scenario(s)
    if diags:
        raise _err(root, "; ".join(diags))
    top_items = None
    if "bipartite_top" in top:
        tnode = top["bipartite_top"][1]
        top_items = tuple(_scalar(x, str, "item label") for x in _seq(tnode, "bipartite_top"))
        unknown = [t for t in top_items if t not in labels]
        if unknown:
            raise _err(tnode, f"bipartite_top: unknown items {unknown}")
    return ScenarioFile(s, top_items, path)


def load_scenario(path) -> ScenarioFile:
    p = Path(path)
    if not p.is_file():
        raise FileNotFoundError(f"scenario file not found: {p}")
    return parse_scenario(p.read_text(), str(p))


def _arrivals_doc(a: ArrivalModel) -> dict:
    if a.transform is not None:
        raise ValueError("transformed arrival models cannot be written to a scenario file")
    if a.kind == "independent-poisson":
        return {"kind": a.kind, "rates": [float(v) for v in a.rates]}
    return {
        "kind": "batch-table",
        "batches": [{"batch": [float(v) for v in b], "prob": float(p)} for b, p in zip(a.batches, a.probs)],
    }


def scenario_to_yaml(s: Scenario, bipartite_top=None) -> str:
    doc = {
        "name": s.name,
        "items": list(s.item_labels),
        "matchings": [
            {"label": mt.label, "mu": [float(v) for v in mt.mu], "reward": float(mt.reward)} for mt in s.matchings
        ],
        "arrivals": _arrivals_doc(s.arrivals),
        "m": int(s.m),
        "beta": float(s.beta),
        "gamma": [float(v) for v in s.gamma_vec],
        "holding_costs": [float(v) for v in s.costs],
        "completion_policy": s.completion_policy,
        "horizon": int(s.horizon),
        "seed": int(s.seed),
    }
    if s.utility.kind == "weighted-linear":
        doc["utility"] = {
            "kind": "weighted-linear",
            "coefficients": [float(v) for v in s.utility.coefficients],
            "constant": float(s.utility.constant),
        }
    elif s.utility.kind == "linear-sum":
        doc["utility"] = "linear-sum"
    else:
        raise ValueError("concave utilities cannot be written to a scenario file")
    if s.rate_changes:
        doc["rate_changes"] = [{"slot": int(t), "arrivals": _arrivals_doc(a)} for t, a in s.rate_changes]
    if bipartite_top:
        doc["bipartite_top"] = list(bipartite_top)
    return yaml.safe_dump(doc, sort_keys=False, default_flow_style=None)
