"""Shared receiver output containers and diagnostics."""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np


class ReceiverError(RuntimeError):
    """Raised when a receiver run hits a non-finite value; names the spot."""


@dataclass
class TraceEntry:
    iteration: int  # 1-based, counts every outer iteration incl. pre-processing
    identities: np.ndarray  # (K,) hard identity decisions
    symbol_indices: np.ndarray  # (K, L) hard constellation indices
    lam: float
    residual: float  # Frobenius norm of Y - Hhat Xhat


@dataclass
class ReceiverOutput:
    identity_beliefs: np.ndarray  # (K, U) probabilities
    identities: np.ndarray  # (K,) argmax decisions, lowest index on ties
    channel_mean: np.ndarray  # (N, K)
    channel_var: np.ndarray  # (N, K)
    symbol_beliefs: np.ndarray  # (K, L, Q) probabilities
    symbol_indices: np.ndarray  # (K, L) hard decisions
    lam: float
    iters_run: int
    clamp_count: int
    trace: list = field(default_factory=list)


def check_finite(arrays: dict, iteration: int) -> None:
    """Raise ReceiverError naming the first offending array entry."""
    for name, arr in arrays.items():
        a = np.asarray(arr)
        finite = np.isfinite(a) if not np.iscomplexobj(a) else np.isfinite(a.real) & np.isfinite(a.imag)
        if not finite.all():
            idx = tuple(int(i) for i in np.argwhere(~finite)[0])
            raise ReceiverError(
                f"non-finite value in message array '{name}' at outer iteration "
                f"{iteration}, index {idx}"
            )
