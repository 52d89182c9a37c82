from .lp import (
    MatchingLPSolution,
    OracleError,
    RateRegion,
    RateRegionSolution,
    distance_to_polytope,
    optimal_face_distance,
    solve_concave,
    solve_linear,
    solve_matching_lp,
    support_argmax,
)
from .simplex import InfeasibleLP, LPError, LPResult, UnboundedLP, solve_lp

__all__ = [
    "InfeasibleLP",
    "LPError",
    "LPResult",
    "MatchingLPSolution",
    "OracleError",
    "RateRegion",
    "RateRegionSolution",
    "UnboundedLP",
    "distance_to_polytope",
    "optimal_face_distance",
    "solve_concave",
    "solve_linear",
    "solve_lp",
    "solve_matching_lp",
    "support_argmax",
]
