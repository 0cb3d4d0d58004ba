"""Fractional joint transmission for two energy-harvesting base stations.

Per-frame closed-form sum-rate maximization, exact average-reward DP over a
discretized battery/channel MDP, LSPE(beta) approximate DP with policy
exploration, and baseline policies plus an experiment harness.
"""

from .adp import (
    FEATURE_DIM,
    FEATURE_NAMES,
    DivergenceError,
    LspeAccumulators,
    approximate_policy_iteration,
    evaluate_policy_lspe,
    features,
    improve_policy_approx,
    lspe_accumulate,
    lspe_step,
)
from .baselines import conventional_zfjt, fixed_bs_policy, greedy_policy
from .channel import (
    ChannelGrid,
    ChannelMatrix,
    ChannelModelParams,
    build_channel_grid,
    load_grid,
    pathloss_db,
    sample_channel,
    save_grid,
)
from .dp import (
    ConvergenceError,
    EnergyCausalityError,
    MCStats,
    Policy,
    RelativeUtility,
    StateGrid,
    SystemState,
    battery_update,
    build_stage_tables,
    evaluate_policy_mc,
    make_state_grid,
    policy_iteration_exact,
    relative_value_iteration,
)
from .harness import (
    ConfigError,
    ExperimentConfig,
    MetricsRecord,
    parse_config,
    rate_cdf,
    run_experiment,
    write_csv,
)
from .perframe import (
    DegenerateChannelError,
    FeasibilityBounds,
    PerFrameInput,
    PerFrameSolution,
    bisect_alpha,
    feasibility_bounds,
    per_frame_greedy,
    per_stage_utility,
    power_allocation_equality,
    select_user,
    stationary_ptilde,
    subframe_objective,
    zfjt_power_allocation,
)
from .precoding import (
    SingularChannelError,
    gram_eigenvalues,
    row_powers,
    zf_rate,
    zf_weights,
)

__version__ = "0.1.0"
