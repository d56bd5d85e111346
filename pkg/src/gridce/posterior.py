"""Error covariance and per-tap marginal posteriors for a greedy estimate.

The greedy chain only exposes the nested supports {a1}, {a1,a2}, ...; the
belief that an individual detected tap is active needs posteriors over the
full lattice of 2^T - 1 nonempty subsets of the detected taps.  Subsets
that are chain prefixes reuse the values already computed during the
search; the remaining subsets are solved fresh (batched per subset size).
Posteriors are normalized over the lattice only -- supports involving
undetected taps carry negligible mass and are excluded by construction.
"""

from dataclasses import dataclass
from functools import lru_cache
from itertools import combinations

import numpy as np

from .errors import ConfigurationError
from .solver import (
    BernoulliPrior,
    SparseEstimate,
    _normalize_log_posteriors,
    _prior_terms,
    support_metric,
)

#: lattice enumeration guard: 2^T - 1 subsets
MAX_LATTICE_TAPS = 20


@dataclass(frozen=True)
class ErrorCovariance:
    """R = sigma_w^2 * sum_S p(S|y) (A_S^H A_S)^-1, embedded at support indices."""

    matrix: np.ndarray

    @property
    def mmse_trace(self) -> float:
        return float(np.trace(self.matrix).real)


@dataclass(frozen=True)
class MarginalSet:
    """Per-tap activity beliefs for the detected taps of one antenna."""

    detected_taps: np.ndarray          # tap indices, selection order
    marginals: np.ndarray              # aligned with detected_taps, in [0, 1]
    lattice_subsets: list              # tap-index arrays, size then lex order
    lattice_posteriors: np.ndarray     # normalized over the lattice

    def marginal_vector(self, channel_len: int) -> np.ndarray:
        """Length-L vector: marginal at detected taps, zero elsewhere."""
        out = np.zeros(channel_len)
        out[self.detected_taps] = self.marginals
        return out


def error_covariance(
    estimate: SparseEstimate,
    sensing_rows: np.ndarray | None = None,
    noise_var: float | None = None,
) -> ErrorCovariance:
    """Posterior-weighted BLUE error covariance over the dominant supports.

    The per-support Gram inverses were already factored during the greedy
    search and are reused; ``sensing_rows`` is only needed when an estimate
    lacks them.
    """
    noise_var = estimate.noise_var if noise_var is None else noise_var
    length = estimate.channel_len
    matrix = np.zeros((length, length), dtype=complex)
    for weight, support, ginv in zip(
        estimate.posteriors, estimate.supports, estimate.gram_inverses
    ):
        if ginv is None:
            a_s = np.asarray(sensing_rows)[:, support]
            ginv = np.linalg.inv(a_s.conj().T @ a_s)
        matrix[np.ix_(support, support)] += weight * ginv
    return ErrorCovariance(matrix=noise_var * matrix)


@lru_cache(maxsize=32)
def _position_combos(n_detected: int):
    """Per subset size s: array of all position combinations, lex order.
    Row 0 of each block is (0, .., s-1), i.e. the greedy chain prefix."""
    return [
        np.array(list(combinations(range(n_detected), s)))
        for s in range(1, n_detected + 1)
    ]


def enumerate_marginal_supports(detected_taps: np.ndarray) -> list:
    """All 2^T - 1 nonempty subsets of the detected taps, ordered by size
    then lexicographically in detection order."""
    detected_taps = np.asarray(detected_taps)
    t = detected_taps.shape[0]
    if t > MAX_LATTICE_TAPS:
        raise ConfigurationError(
            f"lattice of {t} taps exceeds the enumeration guard ({MAX_LATTICE_TAPS})"
        )
    return [detected_taps[combo] for block in _position_combos(t) for combo in block]


def marginals_from_lattice(
    subsets_positions: list, posteriors: np.ndarray, n_detected: int
) -> np.ndarray:
    """Sum lattice posteriors over the subsets containing each detected tap."""
    marginals = np.zeros(n_detected)
    for combo, weight in zip(subsets_positions, posteriors):
        marginals[list(combo)] += weight
    return marginals


def compute_marginals(
    estimate: SparseEstimate,
    sensing_rows: np.ndarray,
    y: np.ndarray,
    prior: BernoulliPrior,
    noise_var: float | None = None,
    reuse: bool = True,
) -> MarginalSet:
    """Lattice posteriors over the detected taps and the per-tap marginals.

    With ``reuse`` (default) chain-prefix subsets take their scores straight
    from the greedy stage; set it to False to re-evaluate every subset from
    scratch (slow; used to validate the reuse path).
    """
    noise_var = estimate.noise_var if noise_var is None else noise_var
    detected = estimate.detected_taps
    t = detected.shape[0]
    if t > MAX_LATTICE_TAPS:
        raise ConfigurationError(
            f"lattice of {t} taps exceeds the enumeration guard ({MAX_LATTICE_TAPS})"
        )
    a = np.ascontiguousarray(sensing_rows, dtype=complex)
    y = np.ascontiguousarray(y, dtype=complex)

    blocks = _position_combos(t)
    if not reuse:
        nus = [
            support_metric(detected[combo], y, a, prior, noise_var)
            for block in blocks
            for combo in block
        ]
        nus = np.asarray(nus)
    else:
        nus = _lattice_nus(estimate, a, y, prior, noise_var, detected, blocks)

    posteriors, _ = _normalize_log_posteriors(nus)
    positions = [combo for block in blocks for combo in block]
    marginals = marginals_from_lattice(positions, posteriors, t)
    return MarginalSet(
        detected_taps=detected,
        marginals=marginals,
        lattice_subsets=[detected[c] for c in positions],
        lattice_posteriors=posteriors,
    )


def _lattice_nus(estimate, a, y, prior, noise_var, detected, blocks):
    base, gain = _prior_terms(prior)
    a_t = a[:, detected]
    gram = a_t.conj().T @ a_t
    corr = a_t.conj().T @ y
    y2 = float(np.vdot(y, y).real)
    gains = gain[detected]

    nus = []
    for s, block in enumerate(blocks, start=1):
        block_nus = np.empty(block.shape[0])
        # chain prefix (row 0: positions 0..s-1) reuses the greedy-stage value
        block_nus[0] = estimate.nus[s - 1]
        if block.shape[0] > 1:
            rest = block[1:]
            sub_gram = gram[rest[:, :, None], rest[:, None, :]]
            sub_corr = corr[rest]
            try:
                coef = np.linalg.solve(sub_gram, sub_corr[..., None])[..., 0]
            except np.linalg.LinAlgError:
                coef = np.stack(
                    [
                        np.linalg.lstsq(g, c, rcond=None)[0]
                        for g, c in zip(sub_gram, sub_corr)
                    ]
                )
            fit = np.einsum("ns,ns->n", sub_corr.conj(), coef).real
            res2 = np.maximum(y2 - fit, 0.0)
            block_nus[1:] = (
                -res2 / (2.0 * noise_var) + base + gains[rest].sum(axis=1)
            )
        nus.append(block_nus)
    return np.concatenate(nus)


def exhaustive_marginals(
    sensing_rows: np.ndarray,
    y: np.ndarray,
    prior: BernoulliPrior,
    noise_var: float,
    max_size: int,
) -> np.ndarray:
    """Debug oracle: marginals over *all* supports of size 1..max_size.

    Enumerates the full index set (not just detected taps); only feasible
    for L <= 12.  Returns the length-L marginal vector.
    """
    from .solver import exhaustive_estimate

    supports, posteriors, _, _ = exhaustive_estimate(
        sensing_rows, y, prior, noise_var, max_size
    )
    length = np.asarray(sensing_rows).shape[1]
    marginals = np.zeros(length)
    for s, weight in zip(supports, posteriors):
        marginals[s] += weight
    return marginals
