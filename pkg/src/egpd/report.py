"""Run reports and CSV output with a schema self-check."""

from __future__ import annotations

import csv
import hashlib
import os
from dataclasses import dataclass, field
from pathlib import Path
from typing import Optional

import yaml

from .model import Scenario

OUTPUT_DIR_ENV = "EGPD_OUTPUT_DIR"
DEFAULT_OUTPUT_DIR = "egpd_out"


class SchemaError(ValueError):
    pass


def output_dir(override: Optional[str] = None) -> Path:
    d = Path(override or os.environ.get(OUTPUT_DIR_ENV) or DEFAULT_OUTPUT_DIR)
    d.mkdir(parents=True, exist_ok=True)
    return d


def scenario_digest(s: Scenario) -> str:
    """sha256 over the scenario's defining numbers (not its name)."""
    h = hashlib.sha256()
    parts = [
        repr(tuple(s.item_labels)),
        s.mu.tobytes(),
        s.rewards.tobytes(),
        s.arrivals.mean.tobytes(),
        repr((s.arrivals.kind, s.m, s.beta, s.completion_policy, s.horizon, s.seed, s.utility.kind)),
        s.gamma_vec.tobytes(),
        s.costs.tobytes(),
    ]
    if s.arrivals.batches is not None:
        parts += [s.arrivals.batches.tobytes(), s.arrivals.probs.tobytes()]
    for slot, a in s.rate_changes:
        parts += [repr(slot), a.mean.tobytes()]
    for p in parts:
        h.update(p if isinstance(p, bytes) else p.encode())
    return h.hexdigest()[:16]


def _fmt(v) -> str:
    if isinstance(v, float):
        return repr(v)
    return str(v)


def check_rows(header: list[str], rows: list[list]) -> None:
    """Column count per row and a strictly increasing first column (``t`` or
    the swept parameter)."""
    if not header:
        raise SchemaError("empty header")
    prev = None
    for i, r in enumerate(rows):
        if len(r) != len(header):
            raise SchemaError(f"row {i} has {len(r)} columns, header has {len(header)}")
        if prev is not None and not r[0] > prev:
            raise SchemaError(f"column {header[0]} not increasing at row {i}")
        prev = r[0]


def write_csv(path, header: list[str], rows: list[list]) -> Path:
    check_rows(header, rows)
    path = Path(path)
    with path.open("w", newline="") as f:
        w = csv.writer(f, lineterminator="\n")
        w.writerow(header)
        for r in rows:
            w.writerow([_fmt(v) for v in r])
    # read back: the file must parse to the same shape
    with path.open(newline="") as f:
        back = list(csv.reader(f))
    if len(back) != len(rows) + 1 or any(len(r) != len(header) for r in back):
        raise SchemaError(f"{path}: read-back shape mismatch")
    return path


@dataclass
class Check:
    name: str
    passed: bool
    detail: str = ""


@dataclass
class RunReport:
    name: str
    digest: str
    seed: int
    wall_time: float
    values: dict = field(default_factory=dict)
    checks: list[Check] = field(default_factory=list)

    @property
    def passed(self) -> bool:
        return all(c.passed for c in self.checks)

    def check(self, name: str, passed: bool, detail: str = "") -> Check:
        c = Check(name, bool(passed), detail)
        self.checks.append(c)
        return c

    def as_dict(self, include_time: bool = True) -> dict:
        d = {"name": self.name, "scenario_digest": self.digest, "seed": self.seed}
        if include_time:
            d["wall_time_s"] = round(self.wall_time, 3)
        d["values"] = _plain(self.values)
        d["checks"] = [{"name": c.name, "passed": c.passed, "detail": c.detail} for c in self.checks]
        if self.checks:
            d["all_passed"] = self.passed
        return d

    def to_text(self, include_time: bool = True) -> str:
        return yaml.safe_dump(self.as_dict(include_time), sort_keys=False, default_flow_style=None)

    def write(self, path) -> Path:
        path = Path(path)
        path.write_text(self.to_text())
        return path


def _plain(v):
    """numpy scalars/arrays to plain Python for YAML."""
    if hasattr(v, "tolist"):
        return _plain(v.tolist())
    if isinstance(v, dict):
        return {str(k): _plain(x) for k, x in v.items()}
    if isinstance(v, (list, tuple)):
        return [_plain(x) for x in v]
    if isinstance(v, float):
        return float(v)
    return v
