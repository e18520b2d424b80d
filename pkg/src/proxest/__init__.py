"""Communication-lean distributed ADMM with estimated proximal operators."""

from .envelope import (
    GradientBall,
    QueryRecord,
    cocoercive_ball,
    exact_set_contains,
    make_query_record,
    quadratic_upper_bound,
    query_record_from_response,
    slack_set_contains,
    upper_bound_gap,
)
from .exchange import (
    ExchangeScenario,
    SumToTarget,
    build_agent_cost,
    build_agent_costs,
    build_coupling,
    exchange_admm_step,
    generate_scenario,
)
from .functions import (
    AffineSetIndicator,
    BallIndicator,
    BoxIndicator,
    ProximableFunction,
    Quadratic,
    SeparablePiecewiseLinear,
    TiltedShifted,
    prox_piecewise_linear_1d,
)
from .gradset import (
    AgentMemory,
    CommunicationRequired,
    GradientEstimate,
    InconsistentSetError,
    estimate_gradient,
    project_onto_intersection,
    select_anchor,
)
from .harness import (
    ConfigError,
    ExperimentConfig,
    RunMetrics,
    compare_modes,
    compute_oracle,
    load_config,
    load_metrics,
    parse_config,
    run_experiment,
)
from .splitting import (
    RelaxationSchedule,
    SplittingState,
    Transport,
    admm_step_exact,
    communication_test,
    dr_step,
    dr_step_inexact,
    reduced_communication_step,
)

__version__ = "0.1.0"
