"""Monte-Carlo orchestration: config, seeding, trials, metrics, CSV rows.

Seeding contract: every random draw comes from a stream keyed by
(master seed, stream id, trial index), so any trial can be reproduced in
isolation and aggregates do not depend on worker count or execution order.
"""

from __future__ import annotations

import functools
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field, replace

import numpy as np

from .bpmf_detector import run_algorithm2
from .codebook import (
    GroundTruth,
    LdsCodebook,
    equivalent_channel,
    generate_regular_lds,
    sample_active_set,
)
from .linksim import (
    QPSK_POINTS,
    awgn_transmit,
    dump_frame,
    indices_to_bits,
    modulate_frame,
    random_payload_bits,
    snr_to_noise_var,
)
from .mf_detector import run_algorithm1

ALGORITHMS = ("mf", "bpmf", "id_aided", "csi_id_aided")

STREAMS = {
    "codebook": 0,
    "activity": 1,
    "gains": 2,
    "bits": 3,
    "noise": 4,
    "xinit": 5,
}

CSV_HEADER = [
    "algo",
    "N",
    "U",
    "K",
    "L",
    "dc",
    "snr_db",
    "trials",
    "ber",
    "aer",
    "mean_outer_iters",
    "lambda_bias",
    "seed",
]
TRACE_COLUMNS = ["iter", "ber_iter", "aer_iter"]


@dataclass
class SimConfig:
    n_subcarriers: int = 128
    n_users: int = 256
    n_active: int = 25
    block_len: int = 40
    col_weight: int = 16
    snr_grid_db: list = field(default_factory=list)
    trials: int = 1000
    outer_iters: int | None = None  # None -> per-algorithm default
    inner_iters: int = 2
    preprocessor_iters: int = 5
    algorithm: str = "bpmf"
    genie_base: str = "bpmf"
    seed: int = 0
    rng_algorithm: str = "pcg64"
    variance_floor: float = 1e-12
    variance_cap: float = 1e8
    lambda_floor: float = 1e-8
    lambda_cap: float = 1e8
    early_stop: bool = False
    trace: bool = False
    workers: int = 1
    dump_frames: str | None = None

    def base_algorithm(self) -> str:
        if self.algorithm in ("mf", "bpmf"):
            return self.algorithm
        return self.genie_base

    def resolved_outer_iters(self) -> int:
        if self.outer_iters is not None:
            return self.outer_iters
        return 30 if self.base_algorithm() == "mf" else 15

    def validate(self) -> None:
        if self.algorithm not in ALGORITHMS:
            raise ValueError(f"algorithm {self.algorithm!r} not one of {ALGORITHMS}")
        if self.genie_base not in ("mf", "bpmf"):
            raise ValueError(f"genie_base {self.genie_base!r} not one of ('mf', 'bpmf')")
        if self.rng_algorithm != "pcg64":
            raise ValueError(f"unsupported rng_algorithm {self.rng_algorithm!r}")
        if min(self.n_subcarriers, self.n_users, self.n_active, self.block_len, self.col_weight) < 1:
            raise ValueError("dimensions must be positive")
        if self.col_weight > self.n_subcarriers:
            raise ValueError("col_weight cannot exceed n_subcarriers")
        if self.n_active > self.n_users:
            raise ValueError("n_active cannot exceed n_users")
        if (self.n_users * self.col_weight) % self.n_subcarriers != 0:
            raise ValueError("n_users * col_weight must be divisible by n_subcarriers")
        if self.trials < 0:
            raise ValueError("trials must be nonnegative")
        if self.inner_iters < 1 or self.preprocessor_iters < 1:
            raise ValueError("iteration counts must be >= 1")
        if self.outer_iters is not None and self.outer_iters < 1:
            raise ValueError("outer_iters must be >= 1")
        if self.workers < 1:
            raise ValueError("workers must be >= 1")
        for snr in self.snr_grid_db:
            float(snr)


@dataclass
class TrialResult:
    bit_errors: int
    bits_total: int
    ids_correct: int
    iters_run: int
    lam_final: float
    clamp_count: int = 0
    iter_bit_errors: tuple | None = None
    iter_ids_correct: tuple | None = None


def make_rng(seed: int, stream: str, trial_index: int | None = None) -> np.random.Generator:
    if trial_index is None:
        entropy = (seed, STREAMS[stream])
    else:
        entropy = (seed, STREAMS[stream], trial_index)
    return np.random.Generator(np.random.PCG64(np.random.SeedSequence(entropy)))


@functools.lru_cache(maxsize=8)
def _cached_codebook(n: int, u: int, dc: int, seed: int) -> LdsCodebook:
    return generate_regular_lds(n, u, dc, make_rng(seed, "codebook"))


def codebook_for(config: SimConfig) -> LdsCodebook:
    return _cached_codebook(config.n_subcarriers, config.n_users, config.col_weight, config.seed)


def match_identities(estimated: np.ndarray, true_identities: np.ndarray) -> dict:
    """One-to-one matching by identity equality, branches taken in order.

    Returns {branch index: true position}; each true position is consumed at
    most once, so duplicate estimates match only once.
    """
    remaining = {int(ident): pos for pos, ident in enumerate(true_identities)}
    matching = {}
    for branch, ident in enumerate(np.asarray(estimated).tolist()):
        pos = remaining.pop(int(ident), None)
        if pos is not None:
            matching[branch] = pos
    return matching


def compute_aer(estimated: np.ndarray, true_identities: np.ndarray) -> float:
    k = len(true_identities)
    return (k - len(match_identities(estimated, true_identities))) / k


def _bit_error_count(decoded_bits: np.ndarray, true_bits: np.ndarray, matching: dict) -> int:
    k, bits_per_user = true_bits.shape
    errors = 0
    for branch, pos in matching.items():
        errors += int(np.count_nonzero(decoded_bits[branch] != true_bits[pos]))
    unmatched = k - len(matching)
    return errors + unmatched * bits_per_user


def compute_ber(decoded_bits: np.ndarray, true_bits: np.ndarray, matching: dict) -> float:
    """Pessimistic payload BER: every bit of an unmatched true user counts."""
    true_bits = np.asarray(true_bits)
    return _bit_error_count(np.asarray(decoded_bits), true_bits, matching) / true_bits.size


def _frame_error_counts(est_ids, sym_indices, true_ids, true_bits):
    matching = match_identities(est_ids, true_ids)
    decoded = indices_to_bits(np.asarray(sym_indices)[:, 1:])
    return _bit_error_count(decoded, true_bits, matching), len(matching)


def run_trial(config: SimConfig, snr_db: float, trial_index: int) -> TrialResult:
    codebook = codebook_for(config)
    k, l = config.n_active, config.block_len
    n = config.n_subcarriers

    identities = sample_active_set(codebook, k, make_rng(config.seed, "activity", trial_index))
    grng = make_rng(config.seed, "gains", trial_index)
    gains = (grng.standard_normal((n, k)) + 1j * grng.standard_normal((n, k))) / np.sqrt(2.0)
    channel = equivalent_channel(codebook, identities, gains)
    bits = random_payload_bits(make_rng(config.seed, "bits", trial_index), k, l)
    symbols = modulate_frame(bits)
    noise_var = snr_to_noise_var(snr_db)
    received = awgn_transmit(channel, symbols, noise_var, make_rng(config.seed, "noise", trial_index))
    init_symbols = QPSK_POINTS[make_rng(config.seed, "xinit", trial_index).integers(0, 4, size=(k, l))]

    if config.dump_frames is not None:
        import pathlib

        out_dir = pathlib.Path(config.dump_frames)
        out_dir.mkdir(parents=True, exist_ok=True)
        dump_frame(
            out_dir / f"frame_snr{snr_db:g}_t{trial_index}.bin",
            received,
            k,
            config.n_users,
            config.col_weight,
            noise_var,
            config.seed,
        )

    genie = None
    if config.algorithm == "id_aided":
        genie = ("id", GroundTruth(identities, gains, channel, symbols))
    elif config.algorithm == "csi_id_aided":
        genie = ("csi_id", GroundTruth(identities, gains, channel, symbols))

    runner = run_algorithm1 if config.base_algorithm() == "mf" else run_algorithm2
    run_config = replace(config, outer_iters=config.resolved_outer_iters())
    try:
        output = runner(run_config, received, codebook, genie=genie, init_symbols=init_symbols)
    except Exception as exc:
        raise RuntimeError(f"trial {trial_index} at {snr_db} dB failed: {exc}") from exc

    bit_errors, ids_correct = _frame_error_counts(output.identities, output.symbol_indices, identities, bits)
    iter_bits = iter_ids = None
    if config.trace:
        per_bits, per_ids = [], []
        for entry in output.trace:
            be, ic = _frame_error_counts(entry.identities, entry.symbol_indices, identities, bits)
            per_bits.append(be)
            per_ids.append(ic)
        expected = run_config.outer_iters
        if config.base_algorithm() == "bpmf":
            expected += config.preprocessor_iters
        while per_bits and len(per_bits) < expected:  # early-stopped: hold the final value
            per_bits.append(per_bits[-1])
            per_ids.append(per_ids[-1])
        iter_bits, iter_ids = tuple(per_bits), tuple(per_ids)

    return TrialResult(
        bit_errors=bit_errors,
        bits_total=bits.size,
        ids_correct=ids_correct,
        iters_run=output.iters_run,
        lam_final=output.lam,
        clamp_count=output.clamp_count,
        iter_bit_errors=iter_bits,
        iter_ids_correct=iter_ids,
    )


def _trial_task(args):
    config, snr_db, trial_index = args
    return trial_index, run_trial(config, snr_db, trial_index)


def _run_snr_point(config: SimConfig, snr_db: float) -> list:
    if config.trials == 0:
        return []
    if config.workers > 1:
        tasks = [(config, snr_db, t) for t in range(config.trials)]
        with ProcessPoolExecutor(max_workers=config.workers) as pool:
            results = dict(pool.map(_trial_task, tasks, chunksize=8))
        return [results[t] for t in range(config.trials)]
    return [run_trial(config, snr_db, t) for t in range(config.trials)]


@dataclass
class MonteCarloResult:
    rows: list
    trials: dict | None = None


def _aggregate_rows(config: SimConfig, snr_db: float, results: list) -> list:
    bits_total = sum(r.bits_total for r in results)
    bit_errors = sum(r.bit_errors for r in results)
    k = config.n_active
    ids_total = k * len(results)
    ids_correct = sum(r.ids_correct for r in results)
    noise_var = snr_to_noise_var(snr_db)
    base = {
        "algo": config.algorithm,
        "N": config.n_subcarriers,
        "U": config.n_users,
        "K": k,
        "L": config.block_len,
        "dc": config.col_weight,
        "snr_db": snr_db,
        "trials": len(results),
        "ber": bit_errors / bits_total,
        "aer": (ids_total - ids_correct) / ids_total,
        "mean_outer_iters": sum(r.iters_run for r in results) / len(results),
        "lambda_bias": sum(r.lam_final for r in results) / len(results) * noise_var,
        "seed": config.seed,
    }
    rows = [base]
    if config.trace:
        n_iters = max(len(r.iter_bit_errors) for r in results)
        for i in range(n_iters):
            have = [r for r in results if len(r.iter_bit_errors) > i]
            bits_i = sum(r.bits_total for r in have)
            ids_i = k * len(have)
            rows.append(
                dict(
                    base,
                    iter=i + 1,
                    ber_iter=sum(r.iter_bit_errors[i] for r in have) / bits_i,
                    aer_iter=(ids_i - sum(r.iter_ids_correct[i] for r in have)) / ids_i,
                )
            )
    return rows


def run_monte_carlo(config: SimConfig, keep_trials: bool = False) -> MonteCarloResult:
    config.validate()
    if not config.snr_grid_db:
        raise ValueError("snr grid is empty; pass --snr-db")
    rows = []
    kept = {} if keep_trials else None
    for snr_db in config.snr_grid_db:
        results = _run_snr_point(config, float(snr_db))
        if keep_trials:
            kept[float(snr_db)] = results
        if results:
            rows.extend(_aggregate_rows(config, float(snr_db), results))
    return MonteCarloResult(rows=rows, trials=kept)


def _format_cell(value) -> str:
    if isinstance(value, float):
        return f"{value:.10g}"
    return str(value)


def write_csv_rows(rows: list, stream, trace: bool) -> None:
    header = CSV_HEADER + TRACE_COLUMNS if trace else CSV_HEADER
    stream.write(",".join(header) + "\n")
    for row in rows:
        stream.write(",".join(_format_cell(row.get(col, "")) for col in header) + "\n")
