import numpy as np
import pytest

from egpd.model import ArrivalModel, Control, NetworkModel
from egpd.presets import get_preset


def net_from_drifts(B, n_constrained):
    """Network with deterministic controls whose mean increments are the rows of B."""
    B = np.asarray(B, float)
    ctrls = tuple(
        Control(mu=np.maximum(-b, 0.0), arrivals=ArrivalModel.deterministic(np.maximum(b, 0.0))) for b in B
    )
    return NetworkModel(n_constrained, B.shape[1] - n_constrained, ctrls)


@pytest.fixture(scope="session")
def exp_a():
    return get_preset("expA").scenario


@pytest.fixture(scope="session")
def bipartite():
    return get_preset("bipartite_profit").scenario


_ACCEPTANCE_LINES: list[str] = []


@pytest.fixture
def verdict():
    """Record and print one pass/fail line for an acceptance criterion."""

    def _say(n: int, ok: bool, detail: str) -> bool:
        line = f"{'PASS' if ok else 'FAIL'} criterion {n}: {detail}"
        print(line)
        _ACCEPTANCE_LINES.append(line)
        return ok

    return _say


def pytest_terminal_summary(terminalreporter):
    if _ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in sorted(_ACCEPTANCE_LINES, key=lambda s: int(s.split()[2].rstrip(":"))):
            terminalreporter.write_line(line)
