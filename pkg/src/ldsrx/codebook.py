"""Regular low-density spreading codebooks and per-trial ground truth.

The spreading matrix S is N x U binary with every column of weight d_c and
every row of weight d_r = U*d_c/N. Active users' columns, masked onto their
complex gains, form the equivalent channel H.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

_MAX_ATTEMPTS = 200


@dataclass
class LdsCodebook:
    entries: np.ndarray  # (N, U) uint8
    n_subcarriers: int
    n_users: int
    col_weight: int
    row_weight: int

    def validate(self) -> None:
        s = self.entries
        if s.shape != (self.n_subcarriers, self.n_users):
            raise ValueError(f"entries shape {s.shape} does not match metadata")
        if not np.all((s == 0) | (s == 1)):
            raise ValueError("entries must be binary")
        cols = s.sum(axis=0)
        rows = s.sum(axis=1)
        if not np.all(cols == self.col_weight):
            raise ValueError(f"column weights {np.unique(cols)} != {self.col_weight}")
        if not np.all(rows == self.row_weight):
            raise ValueError(f"row weights {np.unique(rows)} != {self.row_weight}")


@dataclass
class GroundTruth:
    identities: np.ndarray  # (K,) int64, distinct user indices
    gains: np.ndarray  # (N, K) complex
    equiv_channel: np.ndarray  # (N, K) complex, gains masked by active columns
    symbols: np.ndarray  # (K, L) complex


def _as_rng(seed) -> np.random.Generator:
    if isinstance(seed, np.random.Generator):
        return seed
    return np.random.Generator(np.random.PCG64(np.random.SeedSequence(seed)))


def generate_regular_lds(n_subcarriers: int, n_users: int, col_weight: int, seed) -> LdsCodebook:
    """Draw a random regular spreading matrix.

    Row indices are stacked as d_r independent permutations of range(N) and
    consumed d_c at a time per column. A column whose slots straddle two
    permutations can collide (duplicate row); the whole draw is then retried.
    """
    n, u, dc = n_subcarriers, n_users, col_weight
    if dc <= 0 or dc > n:
        raise ValueError(f"col_weight {dc} must be in 1..{n}")
    if (u * dc) % n != 0:
        raise ValueError(f"n_users*col_weight = {u * dc} not divisible by n_subcarriers {n}")
    dr = (u * dc) // n
    rng = _as_rng(seed)
    cols = np.repeat(np.arange(u), dc)
    for _ in range(_MAX_ATTEMPTS):
        rows = np.concatenate([rng.permutation(n) for _ in range(dr)])
        entries = np.zeros((n, u), dtype=np.uint8)
        np.add.at(entries, (rows, cols), 1)
        if np.all(entries <= 1):
            cb = LdsCodebook(entries, n, u, dc, dr)
            cb.validate()
            return cb
    raise RuntimeError(
        f"codebook generation failed after {_MAX_ATTEMPTS} attempts "
        f"(N={n}, U={u}, d_c={dc}, seed={seed!r})"
    )


def sample_active_set(codebook: LdsCodebook, n_active: int, seed) -> np.ndarray:
    """Draw n_active distinct user indices uniformly without replacement."""
    u = codebook.n_users
    if not 1 <= n_active <= u:
        raise ValueError(f"n_active {n_active} out of range 1..{u}")
    rng = _as_rng(seed)
    return rng.choice(u, size=n_active, replace=False)


def equivalent_channel(codebook: LdsCodebook, identities, gains: np.ndarray) -> np.ndarray:
    """H[n,k] = gains[n,k] where user z_k occupies subcarrier n, else 0."""
    identities = np.asarray(identities)
    gains = np.asarray(gains)
    if gains.shape != (codebook.n_subcarriers, identities.shape[0]):
        raise ValueError(f"gains shape {gains.shape} does not match (N, K)")
    mask = codebook.entries[:, identities].astype(gains.dtype)
    return gains * mask


def save_codebook(codebook: LdsCodebook, path) -> None:
    """Write the matrix as rows of space-separated 0/1."""
    with open(path, "w", encoding="ascii") as fh:
        for row in codebook.entries:
            fh.write(" ".join("1" if x else "0" for x in row) + "\n")


def load_codebook(path) -> LdsCodebook:
    """Read a 0/1 matrix file and validate regularity."""
    rows = []
    with open(path, "r", encoding="ascii") as fh:
        for line in fh:
            line = line.strip()
            if not line:
                continue
            rows.append([int(tok) for tok in line.split()])
    entries = np.asarray(rows, dtype=np.uint8)
    if entries.ndim != 2:
        raise ValueError("codebook file is not a matrix")
    n, u = entries.shape
    col_w = entries.sum(axis=0)
    row_w = entries.sum(axis=1)
    if not (np.all(col_w == col_w[0]) and np.all(row_w == row_w[0])):
        raise ValueError("codebook file is not regular")
    cb = LdsCodebook(entries, n, u, int(col_w[0]), int(row_w[0]))
    cb.validate()
    return cb
