"""Every complex solution of the lossless, zero-injection power flow equations.

The monodromy solver fills the nontrivial solution set from one constructed
seed. A total-degree homotopy serves as an independent check on small
networks.
"""

from monoflow.baseline import ComparisonReport, TotalDegreeRun, compare_with_monodromy, solve_total_degree
from monoflow.monodromy import (
    MonodromyOptions,
    MonodromyResult,
    SolutionRegistry,
    UnsupportedTopologyError,
    run_monodromy,
    seed,
)
from monoflow.network import (
    PowerFlowSystem,
    PowerNetwork,
    Solution,
    build_system,
    complete_graph,
    count_trivial_solutions,
    cycle_graph,
    enumerate_trivial_solutions,
    load_network,
    parse_network,
    path_graph,
    random_susceptances,
    star_graph,
)
from monoflow.numsys import evaluate, jacobian, newton_correct
from monoflow.symmetry import SymmetryGroup, canonicalize, symmetry_group
from monoflow.tracker import TrackOptions, TrackResult, track, track_many

__version__ = "0.1.0"

__all__ = [
    "ComparisonReport",
    "MonodromyOptions",
    "MonodromyResult",
    "PowerFlowSystem",
    "PowerNetwork",
    "Solution",
    "SolutionRegistry",
    "SymmetryGroup",
    "TotalDegreeRun",
    "TrackOptions",
    "TrackResult",
    "UnsupportedTopologyError",
    "build_system",
    "canonicalize",
    "compare_with_monodromy",
    "complete_graph",
    "count_trivial_solutions",
    "cycle_graph",
    "enumerate_trivial_solutions",
    "evaluate",
    "jacobian",
    "load_network",
    "newton_correct",
    "parse_network",
    "path_graph",
    "random_susceptances",
    "run_monodromy",
    "seed",
    "solve_total_degree",
    "star_graph",
    "symmetry_group",
    "track",
    "track_many",
]
