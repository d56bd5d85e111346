"""Greedy Bayesian matching-pursuit estimation of sparse vectors.

Estimates a length-L sparse vector h from K < L noisy linear observations
y = A h + w.  The prior on tap activity is independent non-identical
Bernoulli with probabilities ``lambdas``; nothing is assumed about the
distribution of the active tap values.  Support quality is scored by the
log posterior

    nu(S) = -||P_S_perp y||^2 / (2 sigma_w^2)
            + sum_{i in S} ln(lambda_i) + sum_{j not in S} ln(1 - lambda_j)

with P_S_perp = I - A_S (A_S^H A_S)^-1 A_S^H.  (The Gaussian likelihood's
normalization constant is support-independent and cancels once posteriors
are normalized, so it is omitted.)  Conditional means are replaced by the
best linear unbiased estimate (A_S^H A_S)^-1 A_S^H y, and the final
estimate is the posterior-weighted average of the zero-padded means over
the nested dominant-support chain.

The greedy chain is grown with an order-recursive QR factorization: each
stage scores all single-index extensions of the previous support in
O(K*L) by updating the orthogonalized column residuals, never re-solving
from scratch.
"""

from dataclasses import dataclass, field

import numpy as np

from .errors import ConfigurationError, IllConditionedSupportError

#: prior probabilities are clamped to [PRIOR_EPS, 1 - PRIOR_EPS]
PRIOR_EPS = 1e-6

#: candidates whose orthogonalized column shrinks below this fraction of the
#: original norm are skipped (Gram condition number beyond ~1e12)
COLLINEARITY_TOL = 1e-6

#: de Moivre-Laplace percentile constant for sizing the support search
DML_Z = 2.0

#: default scale on var(y) for the initial noise-variance estimate
NOISE_VAR_SCALE = 0.1


@dataclass(frozen=True)
class BernoulliPrior:
    """Per-tap activity probabilities, clamped away from {0, 1}."""

    lambdas: np.ndarray

    def __post_init__(self):
        lam = np.clip(np.asarray(self.lambdas, dtype=float), PRIOR_EPS, 1 - PRIOR_EPS)
        object.__setattr__(self, "lambdas", lam)

    @classmethod
    def uniform(cls, length: int, value: float) -> "BernoulliPrior":
        return cls(np.full(length, value))

    def __len__(self):
        return self.lambdas.shape[0]


@dataclass
class SparseEstimate:
    """Output of the greedy search over one observation vector.

    ``supports`` is the nested chain (selection order preserved inside each
    array); ``posteriors`` are normalized over the chain; ``cond_means``
    align with ``supports``.  ``gram_inverses`` holds (A_S^H A_S)^-1 per
    support, reused later for the error covariance.
    """

    supports: list
    posteriors: np.ndarray
    cond_means: list
    residuals: np.ndarray
    nus: np.ndarray
    gram_inverses: list
    channel_len: int
    noise_var: float
    t_max: int
    h_ammse: np.ndarray | None = None
    diagnostics: dict = field(default_factory=dict)

    @property
    def detected_taps(self) -> np.ndarray:
        """Detected tap locations: the largest support, in selection order."""
        return self.supports[-1]


@dataclass(frozen=True)
class InitParams:
    prior: BernoulliPrior
    noise_var: float
    t_max: int
    t_max_capped: bool = False


def dml_support_size(length: int, lam: float, z: float = DML_Z) -> int:
    """Support-search depth slightly above the expected active count:
    ceil(L*lam + z*sqrt(L*lam*(1-lam))), capped at L."""
    expected = length * lam
    slack = z * np.sqrt(length * lam * (1.0 - lam))
    return min(length, int(np.ceil(expected + slack)))


def init_params(sensing_rows: np.ndarray, y: np.ndarray,
                noise_scale: float = NOISE_VAR_SCALE, z: float = DML_Z) -> InitParams:
    """Data-driven initialization of (prior, noise variance, search depth).

    The uniform activity probability counts columns whose correlation with
    y reaches half the peak correlation; the noise variance starts as a
    scaled version of var(y).  Both only seed the search; the solver is
    robust to their exact values.
    """
    a = np.asarray(sensing_rows)
    y = np.asarray(y)
    k, length = a.shape
    if k < 1:
        raise ConfigurationError("need at least one observation row")

    corr = np.abs(a.conj().T @ y)
    peak = corr.max() if corr.size else 0.0
    if peak == 0.0:
        return InitParams(
            prior=BernoulliPrior.uniform(length, PRIOR_EPS),
            noise_var=float(noise_scale * np.var(y)) or PRIOR_EPS,
            t_max=1,
        )
    lam = np.count_nonzero(corr >= 0.5 * peak) / length
    lam = float(np.clip(lam, PRIOR_EPS, 1 - PRIOR_EPS))
    noise_var = float(noise_scale * np.var(y))
    t_max = dml_support_size(length, lam, z)
    capped = t_max > k
    return InitParams(
        prior=BernoulliPrior.uniform(length, lam),
        noise_var=noise_var,
        t_max=min(t_max, k),
        t_max_capped=capped,
    )


def _check_conditioning(a_s: np.ndarray):
    if a_s.shape[1] > a_s.shape[0]:
        raise IllConditionedSupportError(
            f"support size {a_s.shape[1]} exceeds observation count {a_s.shape[0]}"
        )
    sv = np.linalg.svd(a_s, compute_uv=False)
    if sv[-1] == 0.0 or (sv[0] / sv[-1]) ** 2 > 1.0 / COLLINEARITY_TOL**2:
        raise IllConditionedSupportError("sensing columns numerically rank deficient")


def blue_estimate(a_s: np.ndarray, y: np.ndarray) -> np.ndarray:
    """Least squares on a fixed support: (A_S^H A_S)^-1 A_S^H y."""
    a_s = np.atleast_2d(np.asarray(a_s))
    _check_conditioning(a_s)
    coef, *_ = np.linalg.lstsq(a_s, np.asarray(y), rcond=None)
    return coef


def _prior_terms(prior: BernoulliPrior):
    lam = prior.lambdas
    log_off = np.log1p(-lam)
    return log_off.sum(), np.log(lam) - log_off  # base, per-index gain


def support_metric(support, y, sensing_rows, prior: BernoulliPrior,
                   noise_var: float) -> float:
    """nu(S) for one explicit support set (empty set allowed)."""
    if noise_var <= 0:
        raise ConfigurationError("noise_var must be positive")
    y = np.asarray(y)
    support = np.asarray(support, dtype=int)
    base, gain = _prior_terms(prior)
    if support.size == 0:
        residual2 = float(np.vdot(y, y).real)
    else:
        a_s = np.asarray(sensing_rows)[:, support]
        _check_conditioning(a_s)
        q, _ = np.linalg.qr(a_s)
        proj = q @ (q.conj().T @ y)
        residual2 = float(np.vdot(y - proj, y - proj).real)
    return -residual2 / (2.0 * noise_var) + base + float(gain[support].sum())


def greedy_search(sensing_rows: np.ndarray, y: np.ndarray, prior: BernoulliPrior,
                  noise_var: float, t_max: int) -> SparseEstimate:
    """Grow the nested dominant-support chain of sizes 1..t_max.

    At each stage every single-index extension of the current support is
    scored; the best extension (ties to the smallest tap index) is kept.
    Candidates that would make the support Gram matrix numerically
    singular are skipped for that stage.
    """
    # contiguous copies pin the BLAS kernels: results are then bit-identical
    # for equal values regardless of the caller's array layout
    a = np.ascontiguousarray(sensing_rows, dtype=complex)
    y = np.ascontiguousarray(y, dtype=complex)
    k, length = a.shape
    if noise_var <= 0:
        raise ConfigurationError("noise_var must be positive")
    if t_max < 1 or t_max > min(k, length):
        raise ConfigurationError(f"t_max={t_max} must lie in [1, min(K, L)]")

    base, gain = _prior_terms(prior)
    col_norm2 = np.einsum("ij,ij->j", a.conj(), a).real

    b = a.copy()                      # columns orthogonalized against the chain
    r = y.copy()                      # current residual P_S_perp y
    res2 = float(np.vdot(y, y).real)
    prior_term = base
    q_basis = np.zeros((k, t_max), dtype=complex)     # orthonormal basis of A_S
    qty = np.zeros(t_max, dtype=complex)              # Q^H y
    r_fact = np.zeros((t_max, t_max), dtype=complex)  # A_S = Q R
    available = np.ones(length, dtype=bool)

    chosen: list[int] = []
    supports, nus, residuals, means, gram_invs = [], [], [], [], []
    skipped_any = False

    for stage in range(t_max):
        b2 = np.einsum("ij,ij->j", b.conj(), b).real
        valid = available & (b2 > COLLINEARITY_TOL**2 * col_norm2)
        if not valid.any():
            break
        if (available & ~valid).any():
            skipped_any = True

        bhr = b.conj().T @ r
        drop = np.zeros(length)
        drop[valid] = np.abs(bhr[valid]) ** 2 / b2[valid]
        nu_cand = np.where(
            valid, -(res2 - drop) / (2.0 * noise_var) + prior_term + gain, -np.inf
        )
        j = int(np.argmax(nu_cand))  # first max = smallest tap index on ties

        q = b[:, j] / np.sqrt(b2[j])
        r_fact[:stage, stage] = q_basis[:, :stage].conj().T @ a[:, j]
        r_fact[stage, stage] = np.sqrt(b2[j])
        q_basis[:, stage] = q
        qty[stage] = np.vdot(q, r)

        r = r - q * qty[stage]
        res2 = max(res2 - drop[j], 0.0)
        prior_term += gain[j]
        b = b - np.outer(q, q.conj() @ b)
        available[j] = False
        chosen.append(j)

        supports.append(np.array(chosen))
        nus.append(-res2 / (2.0 * noise_var) + prior_term)
        residuals.append(res2)

        rr = r_fact[: stage + 1, : stage + 1]
        coef = np.linalg.solve(rr, qty[: stage + 1])
        means.append(coef)
        rinv = np.linalg.inv(rr)
        gram_invs.append(rinv @ rinv.conj().T)

    if not supports:
        raise IllConditionedSupportError("no usable sensing column found")

    nus = np.asarray(nus)
    posteriors, underflow = _normalize_log_posteriors(nus)
    estimate = SparseEstimate(
        supports=supports,
        posteriors=posteriors,
        cond_means=means,
        residuals=np.asarray(residuals),
        nus=nus,
        gram_inverses=gram_invs,
        channel_len=length,
        noise_var=noise_var,
        t_max=len(supports),
        diagnostics={
            "skipped_candidates": skipped_any,
            "posterior_underflow": underflow,
            "t_max_requested": t_max,
        },
    )
    ammse_combine(estimate)
    return estimate


def _normalize_log_posteriors(nus: np.ndarray):
    shifted = nus - nus.max()
    weights = np.exp(shifted)
    total = weights.sum()
    if not np.isfinite(total) or total <= 0.0:
        return np.full(nus.shape, 1.0 / nus.size), True
    return weights / total, False


def ammse_combine(estimate: SparseEstimate) -> np.ndarray:
    """Posterior-weighted average of the zero-padded conditional means."""
    h = np.zeros(estimate.channel_len, dtype=complex)
    for weight, support, mean in zip(
        estimate.posteriors, estimate.supports, estimate.cond_means
    ):
        h[support] += weight * mean
    estimate.h_ammse = h
    return h


def exhaustive_estimate(sensing_rows: np.ndarray, y: np.ndarray,
                        prior: BernoulliPrior, noise_var: float,
                        max_size: int):
    """Debug oracle: score every support of size 1..max_size.

    Only feasible for small L; guarded at L <= 12.  Returns
    (supports, posteriors, means, h_ammse) with posteriors normalized over
    the full enumeration.
    """
    from itertools import combinations

    a = np.asarray(sensing_rows)
    length = a.shape[1]
    if length > 12:
        raise ConfigurationError("exhaustive enumeration is limited to L <= 12")
    supports, nus, means = [], [], []
    for size in range(1, max_size + 1):
        for combo in combinations(range(length), size):
            s = np.array(combo)
            try:
                nu = support_metric(s, y, a, prior, noise_var)
                mean = blue_estimate(a[:, s], y)
            except IllConditionedSupportError:
                continue
            supports.append(s)
            nus.append(nu)
            means.append(mean)
    nus = np.asarray(nus)
    posteriors, _ = _normalize_log_posteriors(nus)
    h = np.zeros(length, dtype=complex)
    for weight, s, mean in zip(posteriors, supports, means):
        h[s] += weight * mean
    return supports, posteriors, means, h
