"""Hybrid BP-MF multiuser detector with a mean-field warm-up stage.

Each observation factor is split through auxiliary variables: per-user
products psi = h*x handled with discrete symbol mixtures on the BP side, and
their noisy sum phi = sum_k psi estimated on the MF side together with the
noise precision. The activity stage runs once per outer iteration, exactly as
in the mean-field receiver.

The channel variable exchanges messages with one product factor per symbol
slot, so the h-side messages are kept per (subcarrier, branch, slot); the
message toward a slot's factor is the belief divided by that slot's own
incoming message, which keeps the other slots' evidence in play.

The warm-up stage (`preprocess`) runs the mean-field update equations on the
unsplit model instead. Running the split factor graph from a cold start is
unstable: all branches see the same interference residual, absorb it
coherently into their per-slot channel messages, and the overconfident slot
fusion locks every branch onto the dominant user within a few passes. The
mean-field recursion keeps each branch anchored to its own running symbol
estimate and its noise precision counts the full posterior uncertainty, so
beliefs stay soft until the residual genuinely shrinks and the branches
separate. Its final beliefs are then broadcast into per-slot messages (slot
variance scaled by the slot count, so fusing them reproduces the fused
forward exactly) to seed the main loop.

Scalar operations define the reference semantics; the vectorized runners must
agree with them (pinned by tests), including the closed-form QPSK paths.
"""

from __future__ import annotations

from dataclasses import dataclass, field, replace

import numpy as np

from .activity import part1_update
from .codebook import LdsCodebook
from .common import ReceiverOutput, TraceEntry, check_finite
from .gaussians import (
    VARIANCE_FLOOR,
    DiscreteDist,
    GaussianMsg,
    gaussian_quotient,
    log_cgauss_pdf,
    normalize_log,
)
from .linksim import QPSK_POINTS, REF_INDEX, REF_POINT
from .mf_detector import (
    _genie_log_prior,
    derotate_by_reference,
    draw_initial_symbols,
    matched_filter_forward,
    qpsk_hard_indices,
    qpsk_soft_symbol,
)

_SQRT2 = np.sqrt(2.0)

# New-value weight for the per-slot channel message updates. All branches
# absorb the shared interference residual coherently under the parallel
# schedule, and the summed re-emission can exceed the original error, so the
# raw updates oscillate and diverge; damping bounds that loop gain.
CHANNEL_MSG_DAMPING = 0.5

# Variance temper for the fused forward messages entering the activity
# stage. Per-slot channel estimates share one interference residual, so
# fusing them as independent is overconfident; scoring and belief updates at
# face value lock the frame into whatever the first outer pass guessed. The
# required correction shrinks as the per-user evidence grows with the column
# weight; 1/sqrt(d_c) holds empirically across the supported weights.
FUSION_TEMPER_SCALE = 20.0


def fusion_temper(codebook: LdsCodebook) -> float:
    return FUSION_TEMPER_SCALE / np.sqrt(codebook.col_weight)


def _damp(new, old, rho):
    return rho * new + (1.0 - rho) * old


@dataclass
class BpmfState:
    sym_mean: np.ndarray  # (K, L)
    sym_var: np.ndarray
    chan_mean: np.ndarray  # (N, K)
    chan_var: np.ndarray
    fwd_mean: np.ndarray  # (N, K) slot-fused channel messages, fed to the activity stage
    fwd_var: np.ndarray
    lam: float
    psi_fwd_mean: np.ndarray  # (N, K, L)
    psi_fwd_var: np.ndarray
    psi_bwd_mean: np.ndarray  # (N, K, L)
    psi_bwd_var: np.ndarray
    phi_fwd_mean: np.ndarray  # (N, L)
    phi_fwd_var: np.ndarray
    phi_belief_mean: np.ndarray  # (N, L)
    phi_belief_var: np.ndarray
    h_to_fpsi_mean: np.ndarray  # (N, K, L) channel extrinsic toward each slot's factor
    h_to_fpsi_var: np.ndarray
    fpsi_to_h_mean: np.ndarray  # (N, K, L) per-slot factor-to-channel messages
    fpsi_to_h_var: np.ndarray
    fpsi_to_x_mean: np.ndarray  # (N, K, L), filled in at the warm-up handoff
    fpsi_to_x_var: np.ndarray
    soft_symbol: np.ndarray  # (N, K, L) mixture mean each subcarrier uses for psi
    ep_mean: np.ndarray | None = None
    ep_var: np.ndarray | None = None
    identity_beliefs: np.ndarray | None = None
    clamp_count: int = 0
    iters_run: int = 0
    trace: list = field(default_factory=list)


def channel_to_fpsi(n: int, k: int, belief: GaussianMsg, fpsi_to_h: GaussianMsg) -> GaussianMsg:
    """Channel extrinsic toward one slot's product factor: belief over that
    slot's own incoming message."""
    del n, k
    return gaussian_quotient(belief, fpsi_to_h)


def bpmf_symbol_update(k, l, psi_backward_msgs, h_msgs, constellation=QPSK_POINTS):
    """Full-product symbol posterior and the per-subcarrier leave-one-out
    mixtures.

    Returns (beta, [gamma per incoming subcarrier]); gamma excludes exactly
    its own subcarrier's density term.
    """
    del k, l
    pts = np.asarray(constellation)
    rows = []
    for pb, hm in zip(psi_backward_msgs, h_msgs):
        var = pb.variance + (np.abs(pts) ** 2) * hm.variance
        rows.append(log_cgauss_pdf(pb.mean, pts * hm.mean, var))
    rows = np.array(rows)
    total = rows.sum(axis=0)
    beta = normalize_log(DiscreteDist(pts, total))
    gammas = [normalize_log(DiscreteDist(pts, total - row)) for row in rows]
    return beta, gammas


def fpsi_to_psi_project(n, k, l, gamma: DiscreteDist, h_msg: GaussianMsg) -> GaussianMsg:
    """Moment-match the product-factor forward mixture onto psi."""
    del n, k, l
    pts = np.asarray(gamma.support)
    w = gamma.weights() * (np.abs(pts) ** 2)
    total = w.sum()
    mean = (w @ pts) * h_msg.mean / total
    second = (w @ (np.abs(pts) ** 2)) * (abs(h_msg.mean) ** 2 + h_msg.variance) / total
    var = second - abs(mean) ** 2
    return GaussianMsg(complex(mean), max(float(var), VARIANCE_FLOOR))


def phi_forward_and_belief(n, l, psi_forwards, lam: float, y_nl: complex):
    """Sum the per-user psi forwards, then blend with the observation."""
    del n, l
    fwd_m = sum(msg.mean for msg in psi_forwards)
    fwd_v = sum(msg.variance for msg in psi_forwards)
    gain = fwd_v * lam
    bel_m = (fwd_m + gain * y_nl) / (1.0 + gain)
    bel_v = fwd_v / (1.0 + gain)
    return GaussianMsg(fwd_m, fwd_v), GaussianMsg(bel_m, max(bel_v, VARIANCE_FLOOR))


def estimate_noise_precision_bpmf(
    phi_belief_means: np.ndarray,
    observations: np.ndarray,
    phi_belief_vars: np.ndarray | None = None,
) -> float:
    """Reciprocal of the expected mean squared residual against the phi
    beliefs. With no variances (or clamped beliefs) this is the plain inverse
    mean squared residual."""
    from .gaussians import LAMBDA_CAP, LAMBDA_FLOOR

    resid = np.asarray(observations) - np.asarray(phi_belief_means)
    total = float((resid.real**2 + resid.imag**2).sum())
    if phi_belief_vars is not None:
        total += float(np.asarray(phi_belief_vars).sum())
    return float(np.clip(observations.size / total, LAMBDA_FLOOR, LAMBDA_CAP))


def psi_backward(n, k, l, other_forwards, lam: float, y_nl: complex) -> GaussianMsg:
    """Observation minus the other users' forward estimates."""
    del n, k, l
    mean = y_nl - sum(msg.mean for msg in other_forwards)
    var = 1.0 / lam + sum(msg.variance for msg in other_forwards)
    return GaussianMsg(mean, var)


def fpsi_to_channel_project(n, k, l, gamma: DiscreteDist, psi_bwd: GaussianMsg) -> GaussianMsg:
    """Moment-match the product-factor backward mixture onto the channel."""
    del n, k, l
    pts = np.asarray(gamma.support)
    mod2 = np.abs(pts) ** 2
    if np.any(mod2 == 0):
        raise ValueError("constellation contains a zero-modulus point")
    g = gamma.weights()
    w = g / mod2
    total = w.sum()
    mean = (w @ (1.0 / pts)) * psi_bwd.mean / total
    second = ((g / mod2**2).sum()) * (abs(psi_bwd.mean) ** 2 + psi_bwd.variance) / total
    var = second - abs(mean) ** 2
    return GaussianMsg(complex(mean), max(float(var), VARIANCE_FLOOR))


def _quotient_arrays(num_m, num_v, den_m, den_v, cap):
    """Vectorized gaussian_quotient with the same clamp rule and a count."""
    prec = 1.0 / num_v - 1.0 / den_v
    bad = prec < 1.0 / cap
    v = 1.0 / np.maximum(prec, 1.0 / cap)
    m = np.where(bad, np.broadcast_to(num_m, v.shape), (num_m / num_v - den_m / den_v) * v)
    return m, np.broadcast_to(v, m.shape).copy(), int(bad.sum())


def _phi_block(y, psi_fm, psi_fv, lam, lfloor, lcap, vfloor):
    """Steps shared by both loops: phi forward, phi belief, noise precision,
    and the psi backward messages (which use the refreshed precision).

    The precision denominator is the expected squared residual under the phi
    belief, squared mean residual plus belief variance. Dropping the variance
    term lets a wrong but self-consistent fit drive the mean residual to zero
    and the precision to its cap, freezing the loop there."""
    phi_m = psi_fm.sum(axis=1)
    phi_v = psi_fv.sum(axis=1)
    gain = phi_v * lam
    phi_hat = (phi_m + gain * y) / (1.0 + gain)
    phi_hat_v = phi_v / (1.0 + gain)
    resid = y - phi_hat
    expected_sq = (resid.real**2 + resid.imag**2).sum() + phi_hat_v.sum()
    lam_new = float(np.clip(y.size / expected_sq, lfloor, lcap))
    psi_bm = (y - phi_m)[:, None, :] + psi_fm
    psi_bv = (1.0 / lam_new + phi_v)[:, None, :] - psi_fv
    np.maximum(psi_bv, vfloor, out=psi_bv)
    return phi_m, phi_v, phi_hat, lam_new, psi_bm, psi_bv


def _beta_from_scores(a_tot: np.ndarray, b_tot: np.ndarray) -> np.ndarray:
    """QPSK posteriors (K, L, 4) from the two accumulated score components."""
    logw = np.stack([a_tot - b_tot, -a_tot - b_tot, -a_tot + b_tot, a_tot + b_tot], axis=-1)
    logw -= logw.max(axis=-1, keepdims=True)
    w = np.exp(logw)
    w /= w.sum(axis=-1, keepdims=True)
    return w


def _fuse_slots(msg_mean, msg_var, vfloor):
    """Precision-combine per-slot channel messages over the slot axis."""
    prec = (1.0 / msg_var).sum(axis=2)
    mean = (msg_mean / msg_var).sum(axis=2) / prec
    return mean, np.maximum(1.0 / prec, vfloor)


def preprocess(
    config,
    observations: np.ndarray,
    codebook: LdsCodebook,
    genie: tuple | None = None,
    init_symbols: np.ndarray | None = None,
    temper: float | None = None,
) -> BpmfState:
    """Warm-up loop: mean-field updates, then a per-slot message handoff.

    Runs preprocessor_iters outer rounds (activity stage included) of the
    mean-field recursion, then builds the per-slot channel messages, psi/phi
    aggregates, and soft symbols the main loop starts from. `temper`
    overrides the default fusion temper (restart attempts step it down).
    """
    y = np.asarray(observations, dtype=complex)
    n, l = y.shape
    k = config.n_active
    n_outer, n_inner = config.preprocessor_iters, config.inner_iters
    if n_outer < 1 or n_inner < 1:
        raise ValueError("preprocessor_iters and inner_iters must be >= 1")
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
    beta_id = None
    m_comb = xb.copy()
    if temper is None:
        temper = fusion_temper(codebook)
    for outer in range(1, n_outer + 1):
        p1 = part1_update(fm, fv, s_float, log_prior, vfloor, vcap, score_temper=temper)
        clamps += p1.clamp_count
        beta_id = p1.beta
        hb, hv = p1.belief_mean, p1.belief_var
        em, ev = p1.ep_mean, p1.ep_var
        if h_true is not None:
            hb, hv = h_true, np.full((n, k), vfloor)

        for _ in range(n_inner):
            habs2 = hb.real**2 + hb.imag**2
            e_all = (habs2 + hv).sum(axis=0)  # (K,)
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

            prec_h = 1.0 / fv + 1.0 / ev
            hv = 1.0 / prec_h
            hb = (fm / fv + em / ev) * hv
            hv = np.maximum(hv, vfloor)
            if h_true is not None:
                hb, hv = h_true, np.full((n, k), vfloor)

        check_finite({"lam": lam, "channel": hb, "symbols": xb, "forward": fm}, outer)
        sym_idx = qpsk_hard_indices(m_comb)
        sym_idx[:, 0] = REF_INDEX
        resid = y - hb @ xb
        trace.append(
            TraceEntry(outer, beta_id.argmax(axis=1), sym_idx, lam, float(np.linalg.norm(resid)))
        )

    # Handoff: spread the fused channel forward across the slots (variance
    # scaled by the slot count so re-fusing reproduces it), broadcast the
    # soft symbols, and evaluate the split-graph aggregates once.
    hfm = np.repeat(fm[:, :, None], l, axis=2)
    hfv = np.repeat(fv[:, :, None] * l, l, axis=2)
    fm, fv = _fuse_slots(hfm, hfv, vfloor)
    soft = np.broadcast_to(xb[None, :, :], (n, k, l)).copy()
    soft[:, :, 0] = REF_POINT

    qm, qv, c2 = _quotient_arrays(hb[:, :, None], hv[:, :, None], hfm, hfv, vcap)
    clamps += c2
    qabs2 = qm.real**2 + qm.imag**2
    psi_fm = qm * soft
    psi_fv = np.clip(qv + qabs2 * (1.0 - (soft.real**2 + soft.imag**2)), vfloor, vcap)
    phi_m = psi_fm.sum(axis=1)
    phi_v = psi_fv.sum(axis=1)
    gain = phi_v * lam
    phi_hat = (phi_m + gain * y) / (1.0 + gain)
    psi_bm = (y - phi_m)[:, None, :] + psi_fm
    psi_bv = np.maximum((1.0 / lam + phi_v)[:, None, :] - psi_fv, vfloor)
    hdenom = (hb.real**2 + hb.imag**2 + hv)[:, :, None]
    xbm = np.conj(hb)[:, :, None] * psi_bm / hdenom
    xbv = np.clip(psi_bv / hdenom, vfloor, vcap)

    return BpmfState(
        sym_mean=xb,
        sym_var=xv,
        chan_mean=hb,
        chan_var=hv,
        fwd_mean=fm,
        fwd_var=fv,
        lam=lam,
        psi_fwd_mean=psi_fm,
        psi_fwd_var=psi_fv,
        psi_bwd_mean=psi_bm,
        psi_bwd_var=psi_bv,
        phi_fwd_mean=phi_m,
        phi_fwd_var=phi_v,
        phi_belief_mean=phi_hat,
        phi_belief_var=phi_v / (1.0 + gain),
        h_to_fpsi_mean=qm,
        h_to_fpsi_var=qv,
        fpsi_to_h_mean=hfm,
        fpsi_to_h_var=hfv,
        fpsi_to_x_mean=xbm,
        fpsi_to_x_var=xbv,
        soft_symbol=soft,
        ep_mean=em,
        ep_var=ev,
        identity_beliefs=beta_id,
        clamp_count=clamps,
        iters_run=n_outer,
        trace=trace,
    )


def missing_user_scores(
    observations: np.ndarray,
    phi_mean: np.ndarray,
    lam: float,
    s_float: np.ndarray,
) -> np.ndarray:
    """Residual log-evidence that an unmodeled user occupies each column.

    The residual on a subcarrier carrying a missed user holds that user's
    full received energy, so per slot it is CN(0, 1/lam + 1) against
    CN(0, 1/lam) where the fit is complete; summing the log-ratio over each
    column's subcarriers scores every candidate. Healthy frames score all
    unclaimed columns well below zero.
    """
    r = observations - phi_mean
    p = (r.real**2 + r.imag**2).sum(axis=1)
    n_slots = observations.shape[1]
    lr = -n_slots * np.log1p(lam) + p * (lam * lam / (1.0 + lam))
    return s_float.T @ lr


RESCUE_PIN_STRENGTH = 1e4  # nats added to the rescued branch's pinned column
RESCUE_PIN_OUTERS = 2  # activity passes the pin persists for


def _run_attempt(
    config,
    observations: np.ndarray,
    codebook: LdsCodebook,
    genie: tuple | None = None,
    init_symbols: np.ndarray | None = None,
    temper: float | None = None,
) -> ReceiverOutput:
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

    if temper is None:
        temper = fusion_temper(codebook)
    state = preprocess(config, y, codebook, genie=genie, init_symbols=init_symbols, temper=temper)
    lam = state.lam
    fm, fv = state.fwd_mean, state.fwd_var
    hfm, hfv = state.fpsi_to_h_mean, state.fpsi_to_h_var
    soft = state.soft_symbol
    clamps = state.clamp_count
    trace = list(state.trace)
    pre_iters = state.iters_run

    beta_id = state.identity_beliefs
    hb, hv = state.chan_mean, state.chan_var
    a_tot = np.zeros((k, l))
    b_tot = np.zeros((k, l))
    phi_hat = state.phi_belief_mean
    xb_prev = state.sym_mean.copy()
    pins: dict[int, list] = {}  # branch -> [column, remaining activity passes]
    rescues = 0
    iters_done = 0
    for outer in range(1, n_outer + 1):
        lp = log_prior
        if pins:
            pin_prior = np.zeros((k, codebook.n_users))
            for v, (u_pin, _) in pins.items():
                pin_prior[v, u_pin] += RESCUE_PIN_STRENGTH
            lp = pin_prior if lp is None else lp + pin_prior
        p1 = part1_update(fm, fv, s_float, lp, vfloor, vcap, score_temper=temper)
        for v in list(pins):
            pins[v][1] -= 1
            if pins[v][1] <= 0:
                del pins[v]
        clamps += p1.clamp_count
        beta_id = p1.beta
        hb, hv = p1.belief_mean, p1.belief_var
        em, ev = p1.ep_mean, p1.ep_var
        if h_true is not None:
            hb, hv = h_true, np.full((n, k), vfloor)

        for _ in range(n_inner):
            qm, qv, c = _quotient_arrays(hb[:, :, None], hv[:, :, None], hfm, hfv, vcap)
            clamps += c

            qabs2 = qm.real**2 + qm.imag**2
            psi_fm = qm * soft
            psi_fv = qv + qabs2 * (1.0 - (soft.real**2 + soft.imag**2))
            np.clip(psi_fv, vfloor, vcap, out=psi_fv)

            phi_m, phi_v, phi_hat, lam, psi_bm, psi_bv = _phi_block(
                y, psi_fm, psi_fv, lam, lfloor, lcap, vfloor
            )

            v_all = psi_bv + qv
            cross = qm * np.conj(psi_bm)
            a = _SQRT2 * cross.real / v_all
            b = _SQRT2 * cross.imag / v_all
            a_tot = a.sum(axis=0)
            b_tot = b.sum(axis=0)
            soft = (np.tanh(a_tot[None, :, :] - a) - 1j * np.tanh(b_tot[None, :, :] - b)) / _SQRT2
            soft[:, :, 0] = REF_POINT

            pb_pow = psi_bm.real**2 + psi_bm.imag**2
            hfv_new = psi_bv + pb_pow * (1.0 - (soft.real**2 + soft.imag**2))
            hfv = _damp(np.clip(hfv_new, vfloor, vcap), hfv, CHANNEL_MSG_DAMPING)
            hfm = _damp(psi_bm * np.conj(soft), hfm, CHANNEL_MSG_DAMPING)
            fm, fv = _fuse_slots(hfm, hfv, vfloor)

            prec_h = 1.0 / fv + 1.0 / ev
            hb = (fm / fv + em / ev) / prec_h
            hv = np.maximum(1.0 / prec_h, vfloor)
            if h_true is not None:
                hb, hv = h_true, np.full((n, k), vfloor)

        iters_done = outer
        check_finite({"lam": lam, "channel": hb, "scores": a_tot, "forward": fm}, pre_iters + outer)
        sym_idx = qpsk_hard_indices(a_tot - 1j * b_tot)
        sym_idx[:, 0] = REF_INDEX
        trace.append(
            TraceEntry(
                pre_iters + outer,
                beta_id.argmax(axis=1),
                sym_idx,
                lam,
                float(np.linalg.norm(y - phi_hat)),
            )
        )
        rescued = False
        if log_prior is None and h_true is None and outer < n_outer and rescues < k:
            scores = missing_user_scores(y, phi_hat, lam, s_float)
            scores[beta_id.argmax(axis=1)] = -np.inf
            u_star = int(np.argmax(scores))
            if scores[u_star] > 0.0:
                conf = beta_id.max(axis=1).copy()
                conf[list(pins)] = np.inf  # a freshly pinned branch is off limits
                victim = int(np.argmin(conf))
                hfm[:, victim, :] = 0.0
                hfv[:, victim, :] = vcap
                soft[:, victim, :] = 0.0
                soft[:, victim, 0] = REF_POINT
                fm[:, victim] = 0.0
                fv[:, victim] = vcap
                pins[victim] = [u_star, RESCUE_PIN_OUTERS]
                rescues += 1
                rescued = True

        xb_now = (np.tanh(a_tot) - 1j * np.tanh(b_tot)) / _SQRT2
        xb_now[:, 0] = REF_POINT
        if config.early_stop and not rescued and np.abs(xb_now - xb_prev).max() < 1e-6:
            break
        xb_prev = xb_now

    sym_beliefs, sym_idx = derotate_by_reference(
        _beta_from_scores(a_tot, b_tot), qpsk_hard_indices(a_tot - 1j * b_tot)
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
        iters_run=pre_iters + iters_done,
        clamp_count=clamps,
        trace=trace,
    )


MAX_RESTART_ATTEMPTS = 2  # extra runs granted when a fit ends pathological


def _restart_symbol_init(init_symbols: np.ndarray, attempt: int) -> np.ndarray:
    rolled = np.roll(init_symbols, attempt, axis=0)
    phases = 1j ** ((np.arange(rolled.shape[0]) + attempt) % 4)
    out = rolled * phases[:, None]
    out[:, 0] = REF_POINT
    return out


def _identities_settled(out: ReceiverOutput) -> bool:
    if len(out.trace) < 2:
        return True
    last, prev = out.trace[-1], out.trace[-2]
    return bool(np.array_equal(np.sort(last.identities), np.sort(prev.identities)))


def run_algorithm2(
    config,
    observations: np.ndarray,
    codebook: LdsCodebook,
    genie: tuple | None = None,
    init_symbols: np.ndarray | None = None,
) -> ReceiverOutput:
    """Full hybrid receiver run: warm-up stage, then the main BP-MF loop.

    Reported iterations include the warm-up rounds. A run is accepted when
    its final noise precision reaches at least the empty-model precision
    N*L/||Y||^2 (explaining less of the observation than predicting zero
    means the fit never took) and its identity claims have stopped moving.
    Failed runs are retried with a decorrelated symbol init and a smaller
    fusion temper (bounded attempts, best precision kept as the fallback).
    """
    y = np.asarray(observations, dtype=complex)
    xb0 = draw_initial_symbols(config, init_symbols)
    power = float((y.real**2 + y.imag**2).sum())
    lam_empty = y.size / power if power > 0.0 else 0.0
    t_full = fusion_temper(codebook)
    tempers = [t_full, float(np.sqrt(t_full)), 1.0]
    best = None
    total_iters = 0
    for attempt in range(1 + MAX_RESTART_ATTEMPTS):
        xb_a = xb0 if attempt == 0 else _restart_symbol_init(xb0, attempt)
        out = _run_attempt(
            config, y, codebook, genie=genie, init_symbols=xb_a,
            temper=tempers[min(attempt, len(tempers) - 1)],
        )
        total_iters += out.iters_run
        if best is None or out.lam > best.lam:
            best = out
        if out.lam >= lam_empty and _identities_settled(out):
            best = out
            break
    if total_iters != best.iters_run:
        best = replace(best, iters_run=total_iters)
    return best
