"""Distributed sparse channel estimation on massive MIMO-OFDM antenna grids."""

__version__ = "0.1.0"

from .channels import (
    AntennaGrid,
    ArrayClass,
    ArrayKind,
    ChannelRealization,
    classify_array,
    generate_channels,
    lower_bound_D,
    neighbors,
    recommended_D,
)
from .data_aided import (
    ReliabilityContext,
    ReliableSet,
    carrier_reliability,
    distortion_covariance,
    run_data_aided,
    select_and_agree,
)
from .errors import ConfigurationError, IllConditionedSupportError, InvalidContextError
from .ofdm import (
    OfdmConfig,
    OfdmFrame,
    SensingMatrix,
    build_sensing_matrix,
    equalize_and_slice,
    freq_response,
    make_rng,
    modulate_frame,
    place_pilots,
    synthesize_received,
)
from .posterior import (
    ErrorCovariance,
    MarginalSet,
    compute_marginals,
    enumerate_marginal_supports,
    error_covariance,
)
from .qam import QamAlphabet, build_qam_alphabet
from .sharing import (
    BeliefKind,
    BeliefState,
    GridEstimate,
    GridSolverConfig,
    assign_scores,
    average_marginals_round,
    average_scores_round,
    run_integer_based,
    run_marginal_based,
    scores_to_beliefs,
)
from .solver import (
    BernoulliPrior,
    SparseEstimate,
    ammse_combine,
    blue_estimate,
    greedy_search,
    init_params,
    support_metric,
)
from .experiments import (
    ExperimentSpec,
    ResultRow,
    compute_metrics,
    emit_results,
    experiment_presets,
    oracle_ls_estimate,
    run_experiment,
    somp_baseline,
)
