"""Mean-field multiuser detector (joint with activity detection and channel
estimation).

One outer iteration runs the Part (i) identity/channel pass, then an inner
loop that alternates symbol posteriors, noise-precision re-estimation, and
channel forward messages, all under mean-field rules: each observation factor
is linearized around the current beliefs of everything else.

Scalar operations are the reference semantics; `run_algorithm1` is the
vectorized production path and must agree with them (pinned by tests).
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .activity import part1_update
from .codebook import LdsCodebook
from .common import ReceiverError, ReceiverOutput, TraceEntry, check_finite
from .gaussians import (
    LAMBDA_CAP,
    LAMBDA_FLOOR,
    VARIANCE_CAP,
    VARIANCE_FLOOR,
    DiscreteDist,
    GaussianMsg,
    normalize_log,
)
from .linksim import QPSK_POINTS, REF_INDEX, REF_POINT

_SQRT2 = np.sqrt(2.0)


@dataclass
class MfState:
    sym_mean: np.ndarray  # (K, L) posterior symbol means
    sym_var: np.ndarray  # (K, L)
    chan_mean: np.ndarray  # (N, K) channel belief means
    chan_var: np.ndarray  # (N, K)
    fwd_mean: np.ndarray  # (N, K) channel messages handed to Part (i)
    fwd_var: np.ndarray  # (N, K)
    lam: float
    clamp_count: int = 0
    ep_mean: np.ndarray | None = None
    ep_var: np.ndarray | None = None


def mf_obs_to_symbol(n: int, k: int, l: int, state: MfState, observations: np.ndarray) -> GaussianMsg:
    """Observation-to-symbol message at one (n, k, l)."""
    hb = state.chan_mean[n]
    hv = state.chan_var[n, k]
    denom = abs(hb[k]) ** 2 + hv
    if denom < VARIANCE_FLOOR:
        return GaussianMsg(0.0 + 0.0j, VARIANCE_CAP)
    interf = hb @ state.sym_mean[:, l] - hb[k] * state.sym_mean[k, l]
    mean = np.conj(hb[k]) * (observations[n, l] - interf) / denom
    var = 1.0 / (state.lam * denom)
    return GaussianMsg(complex(mean), min(max(var, VARIANCE_FLOOR), VARIANCE_CAP))


def symbol_posterior(k: int, l: int, messages, constellation: np.ndarray = QPSK_POINTS):
    """Combine per-subcarrier symbol messages and score the constellation.

    Returns the discrete posterior and its Gaussian moment-match.
    """
    del k, l
    prec = 0.0
    num = 0.0 + 0.0j
    for msg in messages:
        prec += 1.0 / msg.variance
        num += msg.mean / msg.variance
    if prec <= 0:
        raise ValueError("no finite-variance incoming message")
    v = 1.0 / prec
    m = num * v
    pts = np.asarray(constellation)
    logw = -(np.abs(pts - m) ** 2) / v
    dist = normalize_log(DiscreteDist(pts, logw))
    w = dist.weights()
    mean = w @ pts
    var = float(w @ (np.abs(pts) ** 2) - abs(mean) ** 2)
    return dist, GaussianMsg(complex(mean), max(var, VARIANCE_FLOOR))


def estimate_noise_precision_mf(state: MfState, observations: np.ndarray) -> float:
    """Reciprocal of the average posterior residual power per observation."""
    hb, hv = state.chan_mean, state.chan_var
    xb, xv = state.sym_mean, state.sym_var
    habs2 = hb.real**2 + hb.imag**2
    xabs2 = xb.real**2 + xb.imag**2
    resid = observations - hb @ xb
    a_total = float(
        (habs2 @ xv).sum() + (hv @ (xabs2 + xv)).sum() + (resid.real**2 + resid.imag**2).sum()
    )
    nl = observations.size
    return float(np.clip(nl / a_total, LAMBDA_FLOOR, LAMBDA_CAP))


def mf_obs_to_channel(n: int, k: int, l: int, state: MfState, observations: np.ndarray) -> GaussianMsg:
    """Observation-to-channel message at one (n, k, l)."""
    xb_l = state.sym_mean[:, l]
    denom = abs(xb_l[k]) ** 2 + state.sym_var[k, l]
    if denom < VARIANCE_FLOOR:
        return GaussianMsg(0.0 + 0.0j, VARIANCE_CAP)
    hb = state.chan_mean[n]
    interf = hb @ xb_l - hb[k] * xb_l[k]
    mean = np.conj(xb_l[k]) * (observations[n, l] - interf) / denom
    var = 1.0 / (state.lam * denom)
    return GaussianMsg(complex(mean), min(max(var, VARIANCE_FLOOR), VARIANCE_CAP))


def fuse_channel_forward(messages) -> GaussianMsg:
    """Precision-weighted combination of the per-symbol channel messages."""
    prec = 0.0
    num = 0.0 + 0.0j
    for msg in messages:
        prec += 1.0 / msg.variance
        num += msg.mean / msg.variance
    v = 1.0 / prec
    return GaussianMsg(num * v, max(v, VARIANCE_FLOOR))


def qpsk_soft_symbol(mean: np.ndarray, var: np.ndarray) -> np.ndarray:
    """Posterior mean over Gray QPSK given a Gaussian observation of the symbol.

    Closed form of the constellation-weighted average: independent tanh on
    each rectangular component.
    """
    return (
        np.tanh(_SQRT2 * mean.real / var) + 1j * np.tanh(_SQRT2 * mean.imag / var)
    ) / _SQRT2


def qpsk_hard_indices(mean: np.ndarray) -> np.ndarray:
    """Nearest Gray QPSK point from component signs."""
    re_neg = mean.real < 0
    im_neg = mean.imag < 0
    # points: 0:(+,+) 1:(-,+) 2:(-,-) 3:(+,-)
    idx = np.where(im_neg, np.where(re_neg, 2, 3), np.where(re_neg, 1, 0))
    return idx.astype(np.int64)


def qpsk_beta_from_gaussian(mean: np.ndarray, var: np.ndarray) -> np.ndarray:
    """Constellation posteriors (..., 4) from a Gaussian symbol observation."""
    pts = QPSK_POINTS.reshape((1,) * mean.ndim + (4,))
    d2 = np.abs(mean[..., None] - pts) ** 2
    logw = -d2 / var[..., None]
    logw -= logw.max(axis=-1, keepdims=True)
    w = np.exp(logw)
    return w / w.sum(axis=-1, keepdims=True)


def derotate_by_reference(sym_beliefs: np.ndarray, sym_idx: np.ndarray):
    """Fold each branch's decoded reference-column rotation out of its
    symbol decisions.

    Jointly rotating one branch's channel and symbols by a multiple of 90
    degrees leaves every product term unchanged, so the loop can converge
    onto a rotated constellation; only the known reference symbol exposes
    the offset. Inputs must be the unclamped decisions (reference column
    decoded, not pinned). The constellation is indexed counterclockwise, so
    a rotation shifts indices cyclically: subtracting the decoded reference
    index restores the transmitted labels.
    """
    ref = sym_idx[:, :1]
    idx = (sym_idx - ref) % 4
    k, l, q = sym_beliefs.shape
    cols = np.broadcast_to((np.arange(q)[None, None, :] + ref[:, :, None]) % 4, (k, l, q))
    shifted = np.take_along_axis(sym_beliefs, cols, axis=2)
    return shifted, idx


def _genie_log_prior(identities: np.ndarray, n_users: int) -> np.ndarray:
    lp = np.full((identities.shape[0], n_users), -np.inf)
    lp[np.arange(identities.shape[0]), identities] = 0.0
    return lp


def matched_filter_forward(observations: np.ndarray, sym_mean: np.ndarray, sym_var: np.ndarray, lam: float):
    """Initial channel forward messages: correlate the block against the
    initial symbol estimates (the channel-update equations run once with a
    zero channel estimate)."""
    xabs2 = sym_mean.real**2 + sym_mean.imag**2
    denom = (xabs2 + sym_var).sum(axis=1)  # (K,)
    n = observations.shape[0]
    fm = (observations @ np.conj(sym_mean).T) / denom[None, :]
    fv = np.broadcast_to(1.0 / (lam * denom)[None, :], (n, denom.shape[0])).copy()
    return fm, np.maximum(fv, VARIANCE_FLOOR)


def draw_initial_symbols(config, init_symbols: np.ndarray | None) -> np.ndarray:
    k, l = config.n_active, config.block_len
    if init_symbols is None:
        rng = np.random.Generator(np.random.PCG64(np.random.SeedSequence((config.seed, 5, 0))))
        x0 = QPSK_POINTS[rng.integers(0, 4, size=(k, l))]
    else:
        x0 = np.array(init_symbols, dtype=complex)
        if x0.shape != (k, l):
            raise ValueError(f"init_symbols shape {x0.shape} != {(k, l)}")
    x0[:, 0] = REF_POINT
    return x0


def run_algorithm1(
    config,
    observations: np.ndarray,
    codebook: LdsCodebook,
    genie: tuple | None = None,
    init_symbols: np.ndarray | None = None,
) -> ReceiverOutput:
    """Full mean-field receiver run.

    genie: None, ("id", truth) or ("csi_id", truth) with truth a GroundTruth.
    """
    y = np.asarray(observations, dtype=complex)
    n, l = y.shape
    k = config.n_active
    n_outer, n_inner = config.outer_iters, config.inner_iters
    if n_outer < 1 or n_inner < 1:
        raise ValueError("outer_iters and inner_iters must be >= 1")
    vfloor, vcap = config.variance_floor, config.variance_cap
    lfloor, lcap = config.lambda_floor, config.lambda_cap
    s_float = codebook.entries.astype(float)

    log_prior = None
    h_true = None
    if genie is not None:
        mode, truth = genie
        log_prior = _genie_log_prior(np.asarray(truth.identities), codebook.n_users)
        if mode == "csi_id":
            h_true = np.asarray(truth.equiv_channel, dtype=complex)
        elif mode != "id":
            raise ValueError(f"unknown genie mode {mode!r}")

    xb = draw_initial_symbols(config, init_symbols)
    xv = np.maximum(1.0 - (xb.real**2 + xb.imag**2), vfloor)
    xv[:, 0] = vfloor
    lam = float(np.clip(y.size / (y.real**2 + y.imag**2).sum(), lfloor, lcap))
    fm, fv = matched_filter_forward(y, xb, xv, lam)

    clamps = 0
    trace: list[TraceEntry] = []
    iters_run = 0
    beta_id = None
    m_comb = xb.copy()
    v_comb = np.ones((k, l))
    for outer in range(1, n_outer + 1):
        p1 = part1_update(fm, fv, s_float, log_prior, vfloor, vcap)
        clamps += p1.clamp_count
        beta_id = p1.beta
        hb, hv = p1.belief_mean, p1.belief_var
        em, ev = p1.ep_mean, p1.ep_var
        if h_true is not None:
            hb, hv = h_true, np.full((n, k), vfloor)
        xb_prev = xb.copy()

        for _ in range(n_inner):
            habs2 = hb.real**2 + hb.imag**2
            denom_h = habs2 + hv
            e_all = denom_h.sum(axis=0)  # (K,)
            e_h2 = habs2.sum(axis=0)
            r1 = y - hb @ xb
            num = np.conj(hb).T @ r1 + e_h2[:, None] * xb
            m_comb = num / e_all[:, None]
            v_comb = np.broadcast_to(1.0 / (lam * e_all)[:, None], (k, l)).copy()
            xb = qpsk_soft_symbol(m_comb, v_comb)
            xb[:, 0] = REF_POINT
            xabs2 = xb.real**2 + xb.imag**2
            xv = np.maximum(1.0 - xabs2, vfloor)
            xv[:, 0] = vfloor

            r2 = y - hb @ xb
            a_total = (
                (habs2 @ xv).sum() + (hv @ (xabs2 + xv)).sum() + (r2.real**2 + r2.imag**2).sum()
            )
            lam = float(np.clip(y.size / a_total, lfloor, lcap))

            denom_x = (xabs2 + xv).sum(axis=1)  # (K,)
            x2sum = xabs2.sum(axis=1)
            num_h = r2 @ np.conj(xb).T + hb * x2sum[None, :]
            fm = num_h / denom_x[None, :]
            fv = np.broadcast_to(1.0 / (lam * denom_x)[None, :], (n, k)).copy()
            fv = np.maximum(fv, vfloor)

            prec = 1.0 / fv + 1.0 / ev
            hv = 1.0 / prec
            hb = (fm / fv + em / ev) * hv
            hv = np.maximum(hv, vfloor)
            if h_true is not None:
                hb, hv = h_true, np.full((n, k), vfloor)

        iters_run = outer
        check_finite({"lam": lam, "channel": hb, "symbols": xb, "forward": fm}, outer)
        ids = beta_id.argmax(axis=1)
        sym_idx = qpsk_hard_indices(m_comb)
        sym_idx[:, 0] = REF_INDEX
        resid = y - hb @ xb
        trace.append(
            TraceEntry(outer, ids, sym_idx, lam, float(np.linalg.norm(resid)))
        )
        if config.early_stop and np.abs(xb - xb_prev).max() < 1e-6:
            break

    sym_beliefs, sym_idx = derotate_by_reference(
        qpsk_beta_from_gaussian(m_comb, v_comb), qpsk_hard_indices(m_comb)
    )
    sym_beliefs[:, 0, :] = 0.0
    sym_beliefs[:, 0, REF_INDEX] = 1.0
    sym_idx[:, 0] = REF_INDEX
    return ReceiverOutput(
        identity_beliefs=beta_id,
        identities=beta_id.argmax(axis=1),
        channel_mean=hb,
        channel_var=hv,
        symbol_beliefs=sym_beliefs,
        symbol_indices=sym_idx,
        lam=lam,
        iters_run=iters_run,
        clamp_count=clamps,
        trace=trace,
    )
