"""QPSK block modulation, AWGN channel, and frame I/O.

Column 1 of every symbol block is a known reference point shared by all
users; it pins the phase that the blind receiver cannot otherwise resolve,
and carries no payload bits.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

# Gray-labeled QPSK: bit pairs 00, 01, 11, 10 in constellation order.
QPSK_POINTS = np.array([1 + 1j, -1 + 1j, -1 - 1j, 1 - 1j], dtype=complex) / np.sqrt(2.0)
GRAY_BITS = np.array([[0, 0], [0, 1], [1, 1], [1, 0]], dtype=np.uint8)
REF_POINT = QPSK_POINTS[0]
REF_INDEX = 0

_PAIR_TO_INDEX = np.zeros((2, 2), dtype=np.int64)
for _i, (_b0, _b1) in enumerate(GRAY_BITS):
    _PAIR_TO_INDEX[_b0, _b1] = _i

FRAME_DUMP_VERSION = 1


@dataclass
class Frame:
    tx_bits: np.ndarray  # (K, 2*(L-1)) uint8
    symbols: np.ndarray  # (K, L) complex, column 0 is the reference point
    received: np.ndarray  # (N, L) complex
    noise_var: float


def bits_to_indices(bits: np.ndarray) -> np.ndarray:
    """Map a (K, 2*M) bit matrix to (K, M) constellation indices."""
    bits = np.asarray(bits, dtype=np.int64)
    if bits.ndim != 2 or bits.shape[1] % 2 != 0:
        raise ValueError(f"bit matrix shape {bits.shape} is not (K, 2*M)")
    return _PAIR_TO_INDEX[bits[:, 0::2], bits[:, 1::2]]


def indices_to_bits(indices: np.ndarray) -> np.ndarray:
    """Inverse of bits_to_indices: (K, M) indices -> (K, 2*M) bits."""
    indices = np.asarray(indices, dtype=np.int64)
    k, m = indices.shape
    return GRAY_BITS[indices].reshape(k, 2 * m)


def modulate_frame(bits: np.ndarray) -> np.ndarray:
    """Gray-map payload bits to columns 2..L; column 1 is the reference point."""
    bits = np.asarray(bits, dtype=np.uint8)
    k = bits.shape[0]
    l_total = bits.shape[1] // 2 + 1
    if bits.shape[1] != 2 * (l_total - 1):
        raise ValueError(f"bit matrix shape {bits.shape} is not (K, 2*(L-1))")
    symbols = np.empty((k, l_total), dtype=complex)
    symbols[:, 0] = REF_POINT
    if l_total > 1:
        symbols[:, 1:] = QPSK_POINTS[bits_to_indices(bits)]
    return symbols


def awgn_transmit(equiv_channel: np.ndarray, symbols: np.ndarray, noise_var: float, seed) -> np.ndarray:
    """Y = H X + W with W i.i.d. CN(0, noise_var)."""
    h = np.asarray(equiv_channel)
    x = np.asarray(symbols)
    if noise_var < 0:
        raise ValueError("noise_var must be nonnegative")
    if h.shape[1] != x.shape[0]:
        raise ValueError(f"shape mismatch: H {h.shape}, X {x.shape}")
    y = h @ x
    if noise_var > 0:
        rng = seed if isinstance(seed, np.random.Generator) else np.random.Generator(
            np.random.PCG64(np.random.SeedSequence(seed))
        )
        scale = np.sqrt(noise_var / 2.0)
        y = y + scale * (rng.standard_normal(y.shape) + 1j * rng.standard_normal(y.shape))
    return y


def snr_to_noise_var(snr_db: float) -> float:
    """SNR convention: unit symbol energy, noise_var = 10^(-snr_db/10)."""
    return float(10.0 ** (-float(snr_db) / 10.0))


def random_payload_bits(rng: np.random.Generator, n_active: int, block_len: int) -> np.ndarray:
    return rng.integers(0, 2, size=(n_active, 2 * (block_len - 1)), dtype=np.uint8).astype(np.uint8)


def dump_frame(
    path,
    received: np.ndarray,
    n_active: int,
    n_users: int,
    col_weight: int,
    noise_var: float,
    seed: int,
) -> None:
    """Binary frame dump: ASCII header "N,K,U,L,dc,noise_var,seed,version"
    then Y as little-endian float64 (re, im) pairs, row-major."""
    y = np.asarray(received, dtype=complex)
    n, l = y.shape
    header = f"{n},{n_active},{n_users},{l},{col_weight},{noise_var!r},{seed},{FRAME_DUMP_VERSION}\n"
    flat = np.empty((n, l, 2), dtype="<f8")
    flat[:, :, 0] = y.real
    flat[:, :, 1] = y.imag
    with open(path, "wb") as fh:
        fh.write(header.encode("ascii"))
        fh.write(flat.tobytes())


def load_frame_dump(path):
    """Read a dump written by dump_frame; returns (Y, meta dict)."""
    with open(path, "rb") as fh:
        header = fh.readline().decode("ascii").strip()
        body = fh.read()
    fields = header.split(",")
    if len(fields) != 8:
        raise ValueError(f"frame dump header has {len(fields)} fields, expected 8")
    n, k, u, l, dc = (int(x) for x in fields[:5])
    noise_var = float(fields[5])
    seed = int(fields[6])
    version = int(fields[7])
    if version != FRAME_DUMP_VERSION:
        raise ValueError(f"unsupported frame dump version {version}")
    flat = np.frombuffer(body, dtype="<f8")
    if flat.size != n * l * 2:
        raise ValueError("frame dump payload size does not match header")
    flat = flat.reshape(n, l, 2)
    y = flat[:, :, 0] + 1j * flat[:, :, 1]
    meta = {"N": n, "K": k, "U": u, "L": l, "dc": dc, "noise_var": noise_var, "seed": seed, "version": version}
    return y, meta
