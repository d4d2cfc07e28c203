"""Part (i): user-identity beliefs and channel-belief moment matching.

Each active branch k carries a distribution over which spreading column it
transmits on. Per (n, k), the forward channel message is scored under two
hypotheses: subcarrier vacant for that candidate column (channel exactly 0)
or occupied (channel drawn from the unit gain prior). Identity beliefs are
the per-column products of those scores; channel beliefs moment-match the
resulting occupied/vacant mixture. The message sent back to the detector
stage is the moment-matched occupancy mixture on the prior side: zero mean
with the occupied mass as its variance. Dividing the forward message out of
the projected belief instead can manufacture large opposite-phase means
(the projection breaks the product structure the quotient assumes), which
the detector stage would treat as strong evidence.

Scalar operations mirror the vectorized `part1_update` used inside the
receiver loops; tests pin them against each other.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .codebook import LdsCodebook
from .gaussians import (
    VARIANCE_CAP,
    VARIANCE_FLOOR,
    DiscreteDist,
    GaussianMsg,
    cgauss_pdf,
    expit,
    gaussian_product,
    log_cgauss_pdf,
    log_sum_exp,
    normalize_log,
    project_mixture,
)

GAIN_PRIOR = GaussianMsg(0.0 + 0.0j, 1.0)


def identity_likelihood(
    n: int,
    k: int,
    forward: GaussianMsg,
    gain_msg: GaussianMsg,
    codebook: LdsCodebook,
) -> np.ndarray:
    """Length-U log-likelihood of the forward message under each candidate column.

    Vacant (s[n,u]=0): density of the forward message at 0. Occupied: density
    of the forward mean under the gain prior with variances added.
    """
    del k  # scoring depends on the branch only through its forward message
    s_row = codebook.entries[n, :].astype(bool)
    lv = np.log(cgauss_pdf(0.0 + 0.0j, forward.mean, forward.variance))
    lo = np.log(
        cgauss_pdf(forward.mean, gain_msg.mean, forward.variance + gain_msg.variance)
    )
    return np.where(s_row, lo, lv)


def update_identity_beliefs(logliks: np.ndarray, log_prior: np.ndarray | None = None) -> list[DiscreteDist]:
    """Combine per-subcarrier log-likelihoods into identity beliefs.

    logliks has shape (K, N, U); the uniform prior cancels under
    normalization, so log_prior is only needed for non-uniform priors
    (shape (U,) or (K, U)).
    """
    logliks = np.asarray(logliks, dtype=float)
    k, _, u = logliks.shape
    total = logliks.sum(axis=1)
    if log_prior is not None:
        total = total + np.asarray(log_prior, dtype=float)
    support = np.arange(u)
    return [normalize_log(DiscreteDist(support, total[i])) for i in range(k)]


def identity_backward_approx(beliefs: list[DiscreteDist]) -> list[DiscreteDist]:
    """The backward identity message reuses the belief verbatim (the
    leave-one-out correction is dropped by design)."""
    return beliefs


def channel_belief_moment_match(
    n: int,
    k: int,
    forward: GaussianMsg,
    gain_msg: GaussianMsg,
    beta: DiscreteDist,
    codebook: LdsCodebook,
) -> GaussianMsg:
    """Moment-match the per-(n,k) channel posterior mixture.

    Candidate columns with s[n,u]=0 contribute a point mass at 0 weighted by
    the forward density at 0; occupied columns contribute the forward/prior
    product Gaussian weighted by the occupied evidence. A numerically zero
    total weight falls back to the forward message.
    """
    del k
    s_row = codebook.entries[n, :].astype(bool)
    w_vac = cgauss_pdf(0.0 + 0.0j, forward.mean, forward.variance)
    w_occ = cgauss_pdf(forward.mean, gain_msg.mean, forward.variance + gain_msg.variance)
    prod = gaussian_product(forward, gain_msg)
    beta_w = beta.weights()
    components = []
    for u in range(codebook.n_users):
        if s_row[u]:
            components.append((beta_w[u] * w_occ, prod))
        else:
            components.append((beta_w[u] * w_vac, 0.0 + 0.0j))
    try:
        return project_mixture(components)
    except ValueError:
        return GaussianMsg(forward.mean, forward.variance)


def activity_backward_message(occupied_mass: float, variance_floor: float = VARIANCE_FLOOR) -> GaussianMsg:
    """Message from the activity stage back into the detector stage at one
    (n, k): the occupancy mixture of the gain prior, moment-matched.

    The vacant component is a point mass at 0 and the occupied component is
    the zero-mean unit-variance gain prior, so the projection has zero mean
    and the occupied mass as its variance."""
    occ = min(max(float(occupied_mass), variance_floor), 1.0)
    return GaussianMsg(0.0 + 0.0j, occ)


DUPLICATE_IDENTITY_PENALTY = 1e6  # nats; effectively removes a claimed column


def claim_distinct_identities(
    total: np.ndarray, penalty: float = DUPLICATE_IDENTITY_PENALTY
) -> np.ndarray:
    """Penalize duplicate column claims across branches, most confident first.

    The active set is drawn without replacement, so the joint identity prior
    puts zero mass on two branches carrying the same column. The factorized
    per-branch update ignores that, and its fixed point is frequently the
    degenerate one where every branch locks onto the single strongest user
    and the rest of the frame is lost. Branches claim their best column in
    decreasing confidence order; each claim subtracts `penalty` nats from
    that column for the branches scored after it. Returns a penalized copy
    of the (K, U) log-score array.
    """
    total = np.array(total, dtype=float)
    conf = total.max(axis=1) - log_sum_exp(total, axis=1)
    taken = np.zeros(total.shape[1])
    for k in np.argsort(-conf):
        total[k] += taken
        taken[int(np.argmax(total[k]))] -= penalty
    return total


@dataclass
class Part1Result:
    beta: np.ndarray  # (K, U) identity beliefs
    belief_mean: np.ndarray  # (N, K)
    belief_var: np.ndarray  # (N, K)
    ep_mean: np.ndarray  # (N, K) backward message into the detector stage
    ep_var: np.ndarray  # (N, K)
    clamp_count: int


def part1_update(
    fwd_mean: np.ndarray,
    fwd_var: np.ndarray,
    s_float: np.ndarray,
    log_prior: np.ndarray | None = None,
    variance_floor: float = VARIANCE_FLOOR,
    variance_cap: float = VARIANCE_CAP,
    distinct_identities: bool = True,
    score_temper: float = 1.0,
) -> Part1Result:
    """Vectorized Part (i) pass over all (n, k).

    The U-component posterior mixture collapses exactly to an occupied/vacant
    pair because occupied moments are identical across candidate columns; the
    occupied mass is B[n,k] = sum_u beta[k,u] s[n,u]. With
    `distinct_identities=False` the branches are scored independently, which
    is the per-branch posterior the oracle tests enumerate.

    `score_temper` scales the forward variances for the whole update.
    Forward messages fused across slots under an independence assumption are
    overconfident, because per-slot estimation errors share the same
    interference residual; the temper restores an effective
    independent-observation count. It softens the channel beliefs along with
    the identity scores on purpose: returning full-confidence beliefs built
    on the overconfident variances starves the noise-precision estimate and
    freezes the detector stage at its initial errors.
    """
    fm = np.asarray(fwd_mean)
    fv = np.asarray(fwd_var, dtype=float) * score_temper
    n, k = fm.shape
    am2 = fm.real**2 + fm.imag**2
    log_vac = -np.log(np.pi * fv) - am2 / fv  # forward density at 0
    log_occ = -np.log(np.pi * (fv + 1.0)) - am2 / (fv + 1.0)  # evidence under gain prior
    d = log_occ - log_vac

    total = d.T @ s_float  # (K, U); the common vacant terms cancel in the softmax
    if log_prior is not None:
        total = total + log_prior
    if distinct_identities:
        total = claim_distinct_identities(total)
    mx = total.max(axis=1, keepdims=True)
    with np.errstate(over="ignore"):
        w = np.exp(total - mx)
    beta = w / w.sum(axis=1, keepdims=True)

    occ_mass = s_float @ beta.T  # (N, K)
    occ_mass = np.clip(occ_mass, 0.0, 1.0)
    with np.errstate(divide="ignore"):
        logit = np.log(occ_mass) - np.log1p(-occ_mass) + d
    w_occ = expit(logit)

    prod_mean = fm / (1.0 + fv)
    prod_var = fv / (1.0 + fv)
    bel_mean = w_occ * prod_mean
    pm2 = prod_mean.real**2 + prod_mean.imag**2
    bel_var = w_occ * (pm2 + prod_var) - (w_occ * w_occ) * pm2
    bel_var = np.maximum(bel_var, variance_floor)

    ep_mean = np.zeros_like(bel_mean)
    ep_var = np.clip(occ_mass, variance_floor, None)
    return Part1Result(beta, bel_mean, bel_var, ep_mean, ep_var, 0)


def exact_identity_leave_one_out(
    fwd_mean: np.ndarray, fwd_var: np.ndarray, s_float: np.ndarray
) -> np.ndarray:
    """Exact per-subcarrier leave-one-out identity distributions (N, K, U).

    Reference implementation used only to quantify the belief-substitution
    shortcut; receivers never call it.
    """
    fm = np.asarray(fwd_mean)
    fv = np.asarray(fwd_var, dtype=float)
    lv = log_cgauss_pdf(0.0 + 0.0j, fm, fv)
    lo = log_cgauss_pdf(fm, 0.0 + 0.0j, fv + 1.0)
    d = lo - lv
    per_n = d[:, :, None] * s_float[:, None, :] + lv[:, :, None]  # (N, K, U)
    total = per_n.sum(axis=0)  # (K, U)
    loo = total[None, :, :] - per_n
    loo = loo - log_sum_exp(loo, axis=2)[:, :, None]
    return np.exp(loo)
