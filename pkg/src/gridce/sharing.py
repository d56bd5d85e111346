"""Distributed belief sharing across the antenna grid.

Each antenna first estimates its channel on its own, then exchanges per-tap
beliefs with its 4-neighbors over ``depth`` bulk-synchronous rounds.  Two
belief currencies are supported: real-valued activity marginals, and
integer scores that rank the detected taps by amplitude (cheaper to
communicate, no marginal lattice needed).  After sharing, the averaged
beliefs become Bernoulli priors for a final estimation pass.

Rounds are double-buffered: round t+1 is computed entirely from round-t
values, so results do not depend on antenna evaluation order and after D
rounds an antenna's state depends only on antennas within Manhattan
distance D.
"""

import csv
import enum
from dataclasses import dataclass, field

import numpy as np

from .channels import AntennaGrid
from .errors import ConfigurationError, IllConditionedSupportError
from .posterior import compute_marginals, error_covariance
from .solver import (
    NOISE_VAR_SCALE,
    PRIOR_EPS,
    BernoulliPrior,
    SparseEstimate,
    dml_support_size,
    greedy_search,
)

DEFAULT_LAMBDA_SMALL = 1e-3


class BeliefKind(enum.Enum):
    MARGINAL = "marginal"
    SCORE = "score"


@dataclass
class BeliefState:
    """Grid-wide belief buffers: values and detected masks are (M, G, L).

    ``detected`` marks each antenna's originally detected taps and stays
    fixed across rounds; an antenna only tracks values for taps somebody in
    its neighborhood detected (its gate).  Taps outside the gate read
    ``lambda_small`` for marginals and zero for scores, and contribute
    nothing to neighbors' averages.
    """

    kind: BeliefKind
    values: np.ndarray
    detected: np.ndarray
    round: int = 0

    def gate(self) -> np.ndarray:
        """Taps each antenna tracks: union of detections over its N+."""
        return _stencil_any(self.detected)


@dataclass
class GridSolverConfig:
    """Knobs shared by the grid estimation algorithms.

    ``lambda_init`` is the uniform tap-activity probability every antenna
    starts from; keeping it grid-wide makes the search depth t_max
    identical at every antenna.  ``noise_var`` of None estimates the noise
    level per antenna from its own observations.
    """

    lambda_init: float
    t_max: int | None = None
    noise_var: float | None = None
    lambda_small: float = DEFAULT_LAMBDA_SMALL
    compute_covariance: bool = True
    trace_path: str | None = None

    def resolve_t_max(self, channel_len: int, n_obs: int) -> int:
        t = self.t_max or dml_support_size(channel_len, self.lambda_init)
        return max(1, min(t, n_obs))


@dataclass
class GridEstimate:
    """Final per-antenna estimates plus everything downstream passes need."""

    taps: np.ndarray                       # (M, G, L) combined estimates
    estimates: list                        # [row][col] -> SparseEstimate | None
    covariances: list | None               # [row][col] -> ErrorCovariance | None
    priors: np.ndarray                     # (M, G, L) priors used in the final pass
    noise_vars: np.ndarray                 # (M, G)
    failed: np.ndarray                     # (M, G) bool
    diagnostics: dict = field(default_factory=dict)


# ---------------------------------------------------------------------------
# neighborhood stencils (self + in-grid 4-neighbors)

def _stencil_sum(x: np.ndarray) -> np.ndarray:
    s = x.astype(float).copy()
    s[1:] += x[:-1]
    s[:-1] += x[1:]
    s[:, 1:] += x[:, :-1]
    s[:, :-1] += x[:, 1:]
    return s


def _stencil_any(mask: np.ndarray) -> np.ndarray:
    out = mask.copy()
    out[1:] |= mask[:-1]
    out[:-1] |= mask[1:]
    out[:, 1:] |= mask[:, :-1]
    out[:, :-1] |= mask[:, 1:]
    return out


def _member_counts(rows: int, cols: int) -> np.ndarray:
    """|N+| per antenna: 5 interior, 4 edge, 3 corner (3 and 2 on a line)."""
    ones = np.ones((rows, cols))
    return _stencil_sum(ones)


# ---------------------------------------------------------------------------
# belief currencies

def assign_scores(estimate: SparseEstimate) -> np.ndarray:
    """Integer scores over all L taps: T_max for the largest detected
    amplitude down to 1 for the smallest, zero off the detected set.
    Equal amplitudes rank the lower tap index higher."""
    length = estimate.channel_len
    scores = np.zeros(length)
    taps = estimate.detected_taps
    amplitudes = np.abs(estimate.h_ammse[taps])
    order = np.lexsort((taps, -amplitudes))
    t = taps.shape[0]
    scores[taps[order]] = np.arange(t, 0, -1)
    return scores


def average_marginals_round(
    grid: AntennaGrid, state: BeliefState, lambda_small: float
) -> BeliefState:
    """One simultaneous neighborhood-averaging round for marginal beliefs.

    Members contribute their current value only for taps inside their own
    gate (a member that never saw a tap adds 0, not lambda_small); taps
    nobody in the neighborhood detected read lambda_small.
    """
    gate = state.gate()
    contrib = np.where(gate, state.values, 0.0)
    total = _stencil_sum(contrib)
    counts = _member_counts(grid.rows, grid.cols)[:, :, None]
    values = np.where(gate, total / counts, lambda_small)
    return BeliefState(
        kind=BeliefKind.MARGINAL, values=values, detected=state.detected,
        round=state.round + 1,
    )


def average_scores_round(
    grid: AntennaGrid, state: BeliefState, final: bool = False
) -> BeliefState:
    """One simultaneous score-averaging round; the average is rounded up to
    keep scores integer except on the final round, where the raw average is
    kept (no further sharing follows, so nothing forces integrality)."""
    gate = state.gate()
    contrib = np.where(gate, state.values, 0.0)
    total = _stencil_sum(contrib)
    counts = _member_counts(grid.rows, grid.cols)[:, :, None]
    avg = total / counts
    if not final:
        avg = np.ceil(avg)
    values = np.where(gate, avg, 0.0)
    return BeliefState(
        kind=BeliefKind.SCORE, values=values, detected=state.detected,
        round=state.round + 1,
    )


def scores_to_beliefs(
    scores: np.ndarray, t_max: int, lambda_small: float = DEFAULT_LAMBDA_SMALL
) -> np.ndarray:
    """b = score / T_max, clamped into [lambda_small, 1 - eps] so it can act
    as a Bernoulli prior."""
    return np.clip(np.asarray(scores, dtype=float) / t_max, lambda_small, 1 - PRIOR_EPS)


# ---------------------------------------------------------------------------
# grid algorithms

def _estimate_noise(y: np.ndarray, configured: float | None) -> float:
    if configured is not None:
        return configured
    est = NOISE_VAR_SCALE * float(np.var(y))
    return est if est > 0 else PRIOR_EPS


def _trace_rounds(path, states):
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["round", "antenna_row", "antenna_col", "tap", "value"])
        for state in states:
            rows, cols, _ = state.values.shape
            for r in range(rows):
                for c in range(cols):
                    for tap in np.flatnonzero(state.detected[r, c]):
                        writer.writerow(
                            [state.round, r, c, int(tap),
                             repr(float(state.values[r, c, tap]))]
                        )


def _final_pass(grid, observations, sensing_rows, priors, noise_vars, t_max,
                with_covariance):
    rows, cols = grid.rows, grid.cols
    length = sensing_rows.shape[1]
    taps = np.zeros((rows, cols, length), dtype=complex)
    estimates = [[None] * cols for _ in range(rows)]
    covariances = [[None] * cols for _ in range(rows)] if with_covariance else None
    failed = np.zeros((rows, cols), dtype=bool)
    for r, c in grid.antennas():
        try:
            est = greedy_search(
                sensing_rows,
                observations[r, c],
                BernoulliPrior(priors[r, c]),
                noise_vars[r, c],
                t_max,
            )
        except IllConditionedSupportError:
            failed[r, c] = True
            continue
        estimates[r][c] = est
        taps[r, c] = est.h_ammse
        if with_covariance:
            covariances[r][c] = error_covariance(est)
    return taps, estimates, covariances, failed


def run_marginal_based(
    grid: AntennaGrid,
    observations: np.ndarray,
    sensing_rows: np.ndarray,
    config: GridSolverConfig,
    depth: int,
) -> GridEstimate:
    """Marginal-based grid estimation.

    Every antenna runs the solver with the uniform prior and computes its
    per-tap marginals; the grid then averages marginals over neighborhoods
    for ``depth`` rounds, and each antenna re-estimates with the averaged
    marginals as its Bernoulli prior.
    """
    if depth < 0:
        raise ConfigurationError("depth must be nonnegative")
    rows, cols = grid.rows, grid.cols
    sensing_rows = np.asarray(sensing_rows)
    n_obs, length = sensing_rows.shape
    t_max = config.resolve_t_max(length, n_obs)
    prior0 = BernoulliPrior.uniform(length, config.lambda_init)

    values = np.zeros((rows, cols, length))
    detected = np.zeros((rows, cols, length), dtype=bool)
    noise_vars = np.zeros((rows, cols))
    first_failed = np.zeros((rows, cols), dtype=bool)
    for r, c in grid.antennas():
        y = observations[r, c]
        noise_vars[r, c] = _estimate_noise(y, config.noise_var)
        try:
            est = greedy_search(sensing_rows, y, prior0, noise_vars[r, c], t_max)
            ms = compute_marginals(est, sensing_rows, y, prior0)
        except IllConditionedSupportError:
            first_failed[r, c] = True
            continue
        values[r, c] = ms.marginal_vector(length)
        detected[r, c, ms.detected_taps] = True

    state = BeliefState(BeliefKind.MARGINAL, values, detected)
    trace = [state] if config.trace_path else None
    for _ in range(depth):
        state = average_marginals_round(grid, state, config.lambda_small)
        if trace is not None:
            trace.append(state)
    if trace is not None:
        _trace_rounds(config.trace_path, trace)

    if depth == 0:
        held = np.where(state.detected, state.values, config.lambda_small)
    else:
        held = state.values  # rounds already floor off-gate taps at lambda_small
    priors = np.clip(held, config.lambda_small, 1 - PRIOR_EPS)
    taps, estimates, covariances, failed = _final_pass(
        grid, observations, sensing_rows, priors, noise_vars, t_max,
        config.compute_covariance,
    )
    return GridEstimate(
        taps=taps,
        estimates=estimates,
        covariances=covariances,
        priors=priors,
        noise_vars=noise_vars,
        failed=failed | first_failed,
        diagnostics={"depth": depth, "t_max": t_max, "kind": "marginal"},
    )


def run_integer_based(
    grid: AntennaGrid,
    observations: np.ndarray,
    sensing_rows: np.ndarray,
    config: GridSolverConfig,
    depth: int,
) -> GridEstimate:
    """Integer-based grid estimation.

    Like the marginal variant but antennas exchange integer tap scores
    (no marginal lattice is computed), the last averaging round keeps the
    raw average, and scores are rescaled into beliefs before the final
    estimation pass.
    """
    if depth < 0:
        raise ConfigurationError("depth must be nonnegative")
    rows, cols = grid.rows, grid.cols
    sensing_rows = np.asarray(sensing_rows)
    n_obs, length = sensing_rows.shape
    t_max = config.resolve_t_max(length, n_obs)
    prior0 = BernoulliPrior.uniform(length, config.lambda_init)

    values = np.zeros((rows, cols, length))
    detected = np.zeros((rows, cols, length), dtype=bool)
    noise_vars = np.zeros((rows, cols))
    first_failed = np.zeros((rows, cols), dtype=bool)
    for r, c in grid.antennas():
        y = observations[r, c]
        noise_vars[r, c] = _estimate_noise(y, config.noise_var)
        try:
            est = greedy_search(sensing_rows, y, prior0, noise_vars[r, c], t_max)
        except IllConditionedSupportError:
            first_failed[r, c] = True
            continue
        values[r, c] = assign_scores(est)
        detected[r, c, est.detected_taps] = True

    state = BeliefState(BeliefKind.SCORE, values, detected)
    trace = [state] if config.trace_path else None
    for i in range(depth):
        state = average_scores_round(grid, state, final=(i == depth - 1))
        if trace is not None:
            trace.append(state)
    if trace is not None:
        _trace_rounds(config.trace_path, trace)

    # off-gate scores are zero and clamp to lambda_small
    priors = scores_to_beliefs(state.values, t_max, config.lambda_small)
    taps, estimates, covariances, failed = _final_pass(
        grid, observations, sensing_rows, priors, noise_vars, t_max,
        config.compute_covariance,
    )
    return GridEstimate(
        taps=taps,
        estimates=estimates,
        covariances=covariances,
        priors=priors,
        noise_vars=noise_vars,
        failed=failed | first_failed,
        diagnostics={"depth": depth, "t_max": t_max, "kind": "score"},
    )
