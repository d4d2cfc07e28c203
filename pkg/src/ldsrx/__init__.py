"""Bayesian message-passing receivers for grant-free sparse-spread OFDM uplinks.

Joint user-activity detection, channel estimation, and multiuser data
detection without pilots, plus a Monte-Carlo harness and CLI around them.
"""

from .activity import Part1Result, part1_update
from .bpmf_detector import preprocess, run_algorithm2
from .codebook import (
    GroundTruth,
    LdsCodebook,
    equivalent_channel,
    generate_regular_lds,
    load_codebook,
    sample_active_set,
    save_codebook,
)
from .common import ReceiverError, ReceiverOutput, TraceEntry
from .gaussians import (
    DiscreteDist,
    GaussianMsg,
    gaussian_product,
    gaussian_quotient,
    project_mixture,
)
from .harness import (
    SimConfig,
    TrialResult,
    compute_aer,
    compute_ber,
    make_rng,
    match_identities,
    run_monte_carlo,
    run_trial,
)
from .linksim import (
    GRAY_BITS,
    QPSK_POINTS,
    awgn_transmit,
    bits_to_indices,
    indices_to_bits,
    load_frame_dump,
    modulate_frame,
    snr_to_noise_var,
)
from .mf_detector import run_algorithm1

__version__ = "0.1.0"

__all__ = [
    "DiscreteDist",
    "GaussianMsg",
    "GroundTruth",
    "GRAY_BITS",
    "LdsCodebook",
    "Part1Result",
    "QPSK_POINTS",
    "ReceiverError",
    "ReceiverOutput",
    "SimConfig",
    "TraceEntry",
    "TrialResult",
    "awgn_transmit",
    "bits_to_indices",
    "compute_aer",
    "compute_ber",
    "equivalent_channel",
    "gaussian_product",
    "gaussian_quotient",
    "generate_regular_lds",
    "indices_to_bits",
    "load_codebook",
    "load_frame_dump",
    "make_rng",
    "match_identities",
    "modulate_frame",
    "part1_update",
    "preprocess",
    "project_mixture",
    "run_algorithm1",
    "run_algorithm2",
    "run_monte_carlo",
    "run_trial",
    "sample_active_set",
    "save_codebook",
    "snr_to_noise_var",
]
