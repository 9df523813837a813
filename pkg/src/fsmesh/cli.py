"""Command-line entry point.

Exit codes: 0 success, 1 usage error (bad flags, missing input file),
2 runtime failure (undecryptable ciphertext, malformed file, bad config).
"""

from __future__ import annotations

import argparse
import os
import random
import secrets
import sys
from pathlib import Path

from . import hibe, ratchet

SEED_ENV = "FSMESH_SEED"
EXIT_USAGE = 1
EXIT_RUNTIME = 2


class UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        self.exit(EXIT_USAGE, f"{self.prog}: error: {message}\n")


def _rng(args, purpose: str):
    """Seeded stream when a seed is set, otherwise the OS CSPRNG."""
    if args.seed is None:
        return secrets.SystemRandom()
    return random.Random(f"{args.seed}:{purpose}")


def _existing(path: str) -> Path:
    p = Path(path)
    if not p.is_file():
        raise UsageError(f"no such file: {path}")
    return p


def cmd_keygen(args) -> int:
    if args.seed is not None:
        print("warning: seeded key generation is deterministic; use only for testing", file=sys.stderr)
    pk, sk = ratchet.fs_keygen(args.depth, rng=_rng(args, "keygen"))
    pk_bytes = pk.to_bytes()
    Path(args.pk).write_bytes(pk_bytes)
    Path(args.sk).write_bytes(sk.to_bytes())
    fits = "fits" if len(pk_bytes) <= ratchet.QR_PAYLOAD_LIMIT else "does not fit"
    print(f"public key: {args.pk} ({len(pk_bytes)} bytes, {fits} in one QR code)")
    print(f"secret key: {args.sk} (epoch 0 of {ratchet.last_epoch(args.depth)})")
    return 0


def cmd_ratchet_demo(args) -> int:
    rng = _rng(args, "ratchet-demo")
    pk, sk = ratchet.fs_keygen(args.depth, rng=rng)
    last = min(args.epochs, ratchet.last_epoch(args.depth))
    ciphertexts = {}
    print("epoch,identity,stack,decrypts_own,decrypts_previous")
    for t in range(last + 1):
        if t:
            ratchet.fs_update(sk, rng)
            pk.ratchet()
        c = ratchet.fs_encrypt(t, pk, f"epoch {t}".encode(), rng)
        ciphertexts[t] = c
        own = ratchet.fs_decrypt(t, sk, c) == f"epoch {t}".encode()
        previous = "-"
        if t:
            try:
                ratchet.fs_decrypt(t - 1, sk, ciphertexts[t - 1])
                previous = "yes"
            except ratchet.RatchetError:
                previous = "no"
        ident = "".join(map(str, ratchet.epoch_to_identity(t, args.depth))) or "root"
        print(f"{t},{ident},{len(sk.stack)},{'yes' if own else 'no'},{previous}")
    return 0


def cmd_encrypt(args) -> int:
    pk = ratchet.FsPublicKey.from_bytes(_existing(args.pk).read_bytes())
    message = _existing(args.input).read_bytes()
    epoch = pk.t if args.epoch is None else args.epoch
    c = ratchet.fs_encrypt(epoch, pk, message, _rng(args, "encrypt"))
    Path(args.out).write_bytes(c.to_bytes())
    print(f"encrypted {len(message)} bytes for epoch {epoch} -> {args.out}")
    return 0


def cmd_decrypt(args) -> int:
    sk_path = _existing(args.sk)
    sk = ratchet.FsSecretKey.from_bytes(sk_path.read_bytes())
    c = ratchet.FsCiphertext.from_bytes(_existing(args.input).read_bytes())
    if args.advance_to is not None:
        ratchet.fs_advance(sk, args.advance_to, _rng(args, "decrypt"))
        sk_path.write_bytes(sk.to_bytes())  # the old key must not survive on disk
        print(f"secret key advanced to epoch {sk.t}")
    try:
        plaintext = ratchet.fs_decrypt(c.epoch, sk, c)
    except ratchet.DecryptionError as exc:
        raise ratchet.DecryptionError(
            f"cannot decrypt epoch {c.epoch} with the key at epoch {sk.t}: {exc}") from exc
    Path(args.out).write_bytes(plaintext)
    print(f"decrypted {len(plaintext)} bytes from epoch {c.epoch} -> {args.out}")
    return 0


def cmd_bench(args) -> int:
    from .bench import bench_csv, run_bench

    rows = run_bench(tuple(args.sizes), args.iterations, args.depth, seed=args.seed or 0)
    text = bench_csv(rows)
    if args.out:
        Path(args.out).write_text(text)
    sys.stdout.write(text)
    return 0


def cmd_simulate(args) -> int:
    from .sim import aggregate, load_config, run
    from .sim.output import write_campaign

    config = load_config(_existing(args.config))
    if args.seed is not None:
        config = config.with_seed(args.seed)
    if args.runs is not None:
        from dataclasses import replace
        config = replace(config, runs=args.runs)
    timelines = run(config, jobs=args.jobs)
    write_campaign(args.out, timelines)
    agg = aggregate([tl.summary for tl in timelines])
    print(f"runs: {agg['runs']} (seeds {config.seed}..{config.seed + config.runs - 1}), "
          f"synced: {agg['synced_runs']}")
    for key in ("time_to_sync_s", "success_ratio", "arrived_ratio"):
        band = agg[key]
        if band is None:
            print(f"{key}: not reached")
        else:
            print(f"{key}: mean {band.mean:.4f} [min {band.low:.4f}, max {band.high:.4f}]")
    print(f"wrote {args.out}/runs.csv and {len(timelines)} timelines")
    return 0


def cmd_analyze(args) -> int:
    from .sim.output import analyze, summary_csv

    text = summary_csv(analyze(_existing(args.runs_csv)))
    if args.out:
        Path(args.out).write_text(text)
    sys.stdout.write(text)
    return 0


def cmd_trace_convert(args) -> int:
    from .sim.trace import TraceSchema, convert_trace, synthetic_trace

    if args.synthetic is not None:
        text = synthetic_trace(users=args.synthetic, duration=args.duration, seed=args.seed or 0)
    else:
        if args.input is None:
            raise UsageError("an input file is required unless --synthetic is given")
        schema = TraceSchema.parse(args.schema, delimiter=args.delimiter, has_header=not args.no_header,
                                   time_scale=args.time_scale, coords=args.coords)
        with open(_existing(args.input), newline="") as fh:
            text = convert_trace(fh, schema)
    if args.out:
        Path(args.out).write_text(text)
    else:
        sys.stdout.write(text)
    return 0


def build_parser() -> argparse.ArgumentParser:
    parser = _Parser(prog="fsmesh", description="Forward-secret anonymous mesh messaging toolkit.")
    env_seed = os.environ.get(SEED_ENV)
    parser.add_argument("--seed", type=int, default=int(env_seed) if env_seed else None,
                        help=f"seed for all randomness (default: ${SEED_ENV}, else OS randomness)")
    sub = parser.add_subparsers(dest="command", required=True, parser_class=_Parser)

    p = sub.add_parser("keygen", help="write a fresh key pair")
    p.add_argument("--pk", required=True, help="public key output file")
    p.add_argument("--sk", required=True, help="secret key output file")
    p.add_argument("--depth", type=int, default=ratchet.DEFAULT_DEPTH, help="identity tree depth")
    p.set_defaults(func=cmd_keygen)

    p = sub.add_parser("ratchet-demo", help="walk a small key through its epochs")
    p.add_argument("--depth", type=int, default=3)
    p.add_argument("--epochs", type=int, default=14, help="epochs to walk (capped at the tree size)")
    p.set_defaults(func=cmd_ratchet_demo)

    p = sub.add_parser("encrypt", help="encrypt a file for one epoch")
    p.add_argument("--pk", required=True)
    p.add_argument("--in", dest="input", required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--epoch", type=int, help="target epoch (default: the epoch stored in the key)")
    p.set_defaults(func=cmd_encrypt)

    p = sub.add_parser("decrypt", help="decrypt a file with a secret key")
    p.add_argument("--sk", required=True)
    p.add_argument("--in", dest="input", required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--advance-to", type=int, help="first advance the key file to this epoch, in place")
    p.set_defaults(func=cmd_decrypt)

    p = sub.add_parser("bench", help="microbenchmarks as CSV")
    p.add_argument("--sizes", type=int, nargs="+", default=[512, 1024, 10240])
    p.add_argument("--iterations", type=int, default=30)
    p.add_argument("--depth", type=int, default=ratchet.DEFAULT_DEPTH)
    p.add_argument("--out", help="also write the CSV here")
    p.set_defaults(func=cmd_bench)

    p = sub.add_parser("simulate", help="run a simulation campaign from a config file")
    p.add_argument("config")
    p.add_argument("--out", required=True, help="output directory")
    p.add_argument("--runs", type=int, help="override the number of seeds")
    p.add_argument("--jobs", type=int, default=1, help="worker processes")
    p.set_defaults(func=cmd_simulate)

    p = sub.add_parser("analyze", help="summarize a runs.csv")
    p.add_argument("runs_csv")
    p.add_argument("--out")
    p.set_defaults(func=cmd_analyze)

    p = sub.add_parser("trace-convert", help="convert a movement log to the canonical trace CSV")
    p.add_argument("input", nargs="?")
    p.add_argument("--out")
    p.add_argument("--schema", default="", help="column mapping, e.g. node=id,time=ts,x=lon,y=lat")
    p.add_argument("--delimiter", default=",")
    p.add_argument("--no-header", action="store_true", help="columns are 0-based indices")
    p.add_argument("--time-scale", type=float, default=1.0, help="multiply raw times to get seconds")
    p.add_argument("--coords", choices=("xy", "latlon"), default="xy")
    p.add_argument("--synthetic", type=int, metavar="USERS", help="emit a synthetic trace instead")
    p.add_argument("--duration", type=float, default=3600.0, help="synthetic trace length (s)")
    p.set_defaults(func=cmd_trace_convert)
    return parser


_RUNTIME_ERRORS = (ratchet.RatchetError, hibe.HibeError, ValueError, OSError)


def main(argv=None) -> int:
    env_seed = os.environ.get(SEED_ENV)
    if env_seed and not env_seed.lstrip("-").isdigit():
        print(f"fsmesh: error: ${SEED_ENV} must be an integer, got {env_seed!r}", file=sys.stderr)
        return EXIT_USAGE
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return int(exc.code or 0)
    try:
        return args.func(args)
    except UsageError as exc:
        print(f"fsmesh {args.command}: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except _RUNTIME_ERRORS as exc:
        print(f"fsmesh {args.command}: error: {exc}", file=sys.stderr)
        return EXIT_RUNTIME


if __name__ == "__main__":
    sys.exit(main())
