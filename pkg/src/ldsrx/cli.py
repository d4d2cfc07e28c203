"""Command-line front end for the Monte-Carlo harness."""

from __future__ import annotations

import argparse
import sys

from .harness import SimConfig, run_monte_carlo, write_csv_rows

_FLAG_TO_FIELD = {
    "algo": "algorithm",
    "N": "n_subcarriers",
    "U": "n_users",
    "K": "n_active",
    "L": "block_len",
    "dc": "col_weight",
    "snr_db": "snr_grid_db",
    "trials": "trials",
    "outer_iters": "outer_iters",
    "inner_iters": "inner_iters",
    "preprocessor_iters": "preprocessor_iters",
    "seed": "seed",
    "trace": "trace",
    "dump_frames": "dump_frames",
    "workers": "workers",
    "genie_base": "genie_base",
}

_INT_FIELDS = {
    "n_subcarriers",
    "n_users",
    "n_active",
    "block_len",
    "col_weight",
    "trials",
    "outer_iters",
    "inner_iters",
    "preprocessor_iters",
    "seed",
    "workers",
}
_BOOL_FIELDS = {"trace", "early_stop"}


def _parse_snr_list(text: str) -> list:
    values = []
    for part in text.split(","):
        part = part.strip()
        if part:
            values.append(float(part))
    return values


def parse_config_file(path: str) -> dict:
    """Read `key = value` lines; `#` starts a comment, blank lines ignored."""
    updates = {}
    with open(path, "r", encoding="utf-8") as fh:
        for lineno, raw in enumerate(fh, start=1):
            line = raw.split("#", 1)[0].strip()
            if not line:
                continue
            if "=" not in line:
                raise ValueError(f"{path}:{lineno}: expected 'key = value', got {raw.strip()!r}")
            key, value = (s.strip() for s in line.split("=", 1))
            key = key.replace("-", "_")
            field = _FLAG_TO_FIELD.get(key, key)
            if field not in SimConfig.__dataclass_fields__:
                raise ValueError(f"{path}:{lineno}: unknown option {key!r}")
            if field == "snr_grid_db":
                updates[field] = _parse_snr_list(value)
            elif field in _INT_FIELDS:
                updates[field] = int(value)
            elif field in _BOOL_FIELDS:
                lowered = value.lower()
                if lowered not in ("true", "false", "0", "1"):
                    raise ValueError(f"{path}:{lineno}: boolean option {key!r} got {value!r}")
                updates[field] = lowered in ("true", "1")
            elif field in ("algorithm", "genie_base", "rng_algorithm", "dump_frames"):
                updates[field] = value.replace("-", "_") if field != "dump_frames" else value
            else:
                updates[field] = float(value)
    return updates


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="ldsrx",
        description="Monte-Carlo simulation of grant-free multiuser receivers",
    )
    parser.add_argument("--algo", choices=["mf", "bpmf", "id-aided", "csi-id-aided"])
    parser.add_argument("--N", type=int, dest="N")
    parser.add_argument("--U", type=int, dest="U")
    parser.add_argument("--K", type=int, dest="K")
    parser.add_argument("--L", type=int, dest="L")
    parser.add_argument("--dc", type=int)
    parser.add_argument("--snr-db", type=str, help="comma-separated SNR grid in dB")
    parser.add_argument("--trials", type=int)
    parser.add_argument("--outer-iters", type=int)
    parser.add_argument("--inner-iters", type=int)
    parser.add_argument("--preprocessor-iters", type=int)
    parser.add_argument("--seed", type=int)
    parser.add_argument("--workers", type=int)
    parser.add_argument("--genie-base", choices=["mf", "bpmf"])
    parser.add_argument("--config", type=str, help="config file with key = value lines")
    parser.add_argument("--out", type=str, help="CSV output path (default: stdout)")
    parser.add_argument("--trace", action="store_true", default=None)
    parser.add_argument("--dump-frames", type=str, help="directory for received-frame dumps")
    return parser


def config_from_args(args: argparse.Namespace) -> SimConfig:
    updates = {}
    if args.config is not None:
        updates.update(parse_config_file(args.config))

    if args.algo is not None:
        updates["algorithm"] = args.algo.replace("-", "_")
    for flag, fld in (("N", "n_subcarriers"), ("U", "n_users"), ("K", "n_active"), ("L", "block_len"), ("dc", "col_weight")):
        value = getattr(args, flag)
        if value is not None:
            updates[fld] = value
    if args.snr_db is not None:
        updates["snr_grid_db"] = _parse_snr_list(args.snr_db)
    for flag in ("trials", "outer_iters", "inner_iters", "preprocessor_iters", "seed", "workers", "genie_base", "dump_frames"):
        value = getattr(args, flag)
        if value is not None:
            updates[flag if flag != "genie_base" else "genie_base"] = value
    if args.trace:
        updates["trace"] = True

    config = SimConfig(**updates)
    config.validate()
    return config


def cli_main(argv: list | None = None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return int(exc.code or 0)

    try:
        config = config_from_args(args)
    except (ValueError, OSError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2

    if not config.snr_grid_db:
        print("error: no SNR points given; pass --snr-db or set snr_db in --config", file=sys.stderr)
        return 2

    try:
        result = run_monte_carlo(config)
    except Exception as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1

    if args.out is not None:
        with open(args.out, "w", encoding="utf-8") as fh:
            write_csv_rows(result.rows, fh, trace=config.trace)
        summary_stream = sys.stdout
    else:
        write_csv_rows(result.rows, sys.stdout, trace=config.trace)
        summary_stream = sys.stderr

    for row in result.rows:
        if "iter" in row:
            continue
        print(
            f"[ldsrx] algo={row['algo']} snr={row['snr_db']:g} dB "
            f"trials={row['trials']} ber={row['ber']:.4e} aer={row['aer']:.4e}",
            file=summary_stream,
        )
    return 0


def main() -> None:
    sys.exit(cli_main(sys.argv[1:]))


if __name__ == "__main__":
    main()
