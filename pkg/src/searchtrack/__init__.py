"""Multi-agent probabilistic search and track.

A simulation engine and library in which each mobile agent runs a sequential
Monte Carlo multi-Bernoulli filter over an unknown, time-varying number of
targets, and a joint planner assigns every agent a mode (search or track) and
a mobility action that trades off area coverage against tracking uncertainty.
"""

from .control import (
    BACKEND_EXHAUSTIVE,
    BACKEND_GA,
    BACKEND_GREEDY,
    MODE_SEARCH,
    MODE_TRACK,
    InfeasibleSeparationError,
    ModeAssignment,
    PlanConfig,
    PlanResult,
    evaluate_assignment,
    pims,
    plan,
    plan_ga,
    predicted_target_estimates,
    search_cost,
    search_value_at,
    select_modes,
    tracking_cost,
    tracking_score,
)
from .filters import (
    BernoulliComponent,
    BirthModel,
    CardinalityStats,
    cardinality,
    clutter_intensity,
    extract_states,
    predict,
    prune,
    systematic_resample,
    update,
)
from .geometry import Rect, wrap_angle
from .metrics import OspaParams, coverage, first_detection_time, ospa
from .models import (
    H,
    CoincidentPositionsError,
    ControlParams,
    Measurement,
    MotionParams,
    SensingParams,
    SingularCovarianceError,
    admissible_controls,
    cv_matrices,
    detection_prob,
    detection_prob_at,
    likelihood,
    measure,
    measurement_sigmas,
    noise_free_measurement,
    predicted_measurement,
    target_step,
    transition_density,
)
from .rng import substream
from .scenario_io import (
    ScenarioParseError,
    apply_overrides,
    emit_episode,
    emit_logs,
    emit_monte_carlo,
    load_scenario,
    parse_scenario,
    scenario_text,
)
from .sim import (
    EpisodeLog,
    FilterParams,
    McAggregate,
    MetricParams,
    Scenario,
    ScenarioError,
    StepRecord,
    TargetScript,
    TrialSummary,
    generate_measurements,
    ground_truth,
    run_episode,
    run_monte_carlo,
    summarize_episode,
    with_agent_count,
)

__version__ = "0.1.0"
