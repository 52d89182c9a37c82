"""Extended greedy primal-dual control for dynamic matching and general queueing networks."""

from .core import ControlError, Decision, NetState, RunResult, run, select_control, step
from .matching import (
    MappedNetwork,
    MatchingError,
    PhysicalState,
    SchemeMetrics,
    SimulationResult,
    VirtualState,
    complete_one,
    lockstep,
    map_to_network,
    scheme_step,
    select_matching,
    simulate,
    virtual_step,
)
from .model import (
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
from .rng import make_rng

__version__ = "0.1.0"
