"""Distributed function computation over multi-class open queueing networks."""
from .analysis import (
    bisection_allocation_cost,
    classification_split_cost,
    flow_L_bounds,
    little_L_bounds,
    load_threshold,
    load_threshold_coupled,
    stability_check,
)
from .desim import SimConfig, SimStats, compare_to_analytic, empirical_little_check, run_simulation
from .errors import (
    CompflowError,
    ConvergenceError,
    InfeasibleError,
    InstabilityError,
    ScenarioError,
    SingularSystemError,
)
from .flownet import (
    FlowSolution,
    NetworkSpec,
    RoutingPolicy,
    lambda_bounds,
    solve_traffic,
    stationary_distribution,
    validate_routing,
)
from .graph import (
    CharacteristicGraph,
    FunctionSpec,
    Pmf,
    build_characteristic_graph,
    entropic_surjectivity,
    function_surjectivity,
    graph_entropy,
    maximal_independent_sets,
    slepian_wolf_member,
    source_entropy,
)
from .optimizer import (
    Objective,
    SolverOptions,
    compare_separate_vs_mixed,
    comms_cost,
    convex_special_case,
    min_cost,
    sweep,
)
from .queueing import Complexity, DelayMode, NodeClassParams, comm_delay, comp_delay, complexity, node_cost
from .scenario import Scenario, load_preset, load_scenario

__version__ = "0.1.0"
