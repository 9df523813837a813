"""Microbenchmarks of the ratchet operations.

Each cell runs a few untimed warmup iterations, then ``iterations`` timed
ones, and reports the 10%-trimmed mean and the standard deviation of the
trimmed sample.  The public ratchet is far below timer resolution, so it
is timed in batches and reported per call.
"""

from __future__ import annotations

import io
import random
import time
from dataclasses import dataclass

import numpy as np
from scipy import stats

from . import ratchet

DEFAULT_SIZES = (512, 1024, 10 * 1024)
MIN_ITERATIONS = 30
TRIM = 0.1
PUBLIC_BATCH = 10_000
BENCH_HEADER = ("operation", "size_bytes", "mean_ns", "std_ns", "iterations")


@dataclass(frozen=True)
class BenchRow:
    operation: str
    size_bytes: int
    mean_ns: float
    std_ns: float
    iterations: int


def _summarize(operation: str, size: int, samples) -> BenchRow:
    trimmed = stats.trimboth(np.asarray(samples, dtype=float), TRIM)
    std = float(trimmed.std(ddof=1)) if len(trimmed) > 1 else 0.0
    return BenchRow(operation, size, float(trimmed.mean()), std, len(samples))


def _time(fn, iterations: int, warmup: int, setup=None) -> list[float]:
    samples = []
    for k in range(warmup + iterations):
        arg = setup() if setup is not None else None
        start = time.perf_counter_ns()
        fn(arg)
        elapsed = time.perf_counter_ns() - start
        if k >= warmup:
            samples.append(elapsed)
    return samples


def run_bench(sizes=DEFAULT_SIZES, iterations: int = MIN_ITERATIONS, depth: int = ratchet.DEFAULT_DEPTH,
              seed: int = 0) -> list[BenchRow]:
    if iterations < MIN_ITERATIONS:
        raise ValueError(f"at least {MIN_ITERATIONS} iterations per cell")
    rng = random.Random(f"{seed}:bench")
    warmup = max(3, iterations // 10)
    rows = []

    rows.append(_summarize("keygen", 0, _time(lambda _: ratchet.fs_keygen(depth, rng=rng), iterations, warmup)))

    pk, sk = ratchet.fs_keygen(depth, rng=rng)

    def public_batch(_):
        for _ in range(PUBLIC_BATCH):
            pk.ratchet()

    batches = _time(public_batch, iterations, warmup)
    rows.append(_summarize("public_ratchet", 0, [b / PUBLIC_BATCH for b in batches]))

    # consecutive updates from epoch 0 mix internal nodes (two delegations) and leaves (a pop)
    private = [ratchet.fs_keygen(depth, rng=rng)[1]]

    def fresh_if_exhausted():
        if private[0].t >= ratchet.last_epoch(depth):  # untimed re-key for shallow trees
            private[0] = ratchet.fs_keygen(depth, rng=rng)[1]
        return private[0]

    rows.append(_summarize("private_ratchet", 0,
                           _time(lambda key: ratchet.fs_update(key, rng), iterations, warmup,
                                 setup=fresh_if_exhausted)))

    # deepest identity: the first leaf has the most encapsulation elements
    epoch = depth
    ratchet.fs_advance(sk, epoch, rng)
    for size in sizes:
        message = rng.randbytes(size)
        enc = _time(lambda _: ratchet.fs_encrypt(epoch, pk, message, rng), iterations, warmup)
        rows.append(_summarize("encrypt", size, enc))
        ciphertext = ratchet.fs_encrypt(epoch, pk, message, rng)
        dec = _time(lambda _: ratchet.fs_decrypt(epoch, sk, ciphertext), iterations, warmup)
        rows.append(_summarize("decrypt", size, dec))
    return rows


def bench_csv(rows: list[BenchRow]) -> str:
    out = io.StringIO()
    out.write(",".join(BENCH_HEADER) + "\n")
    for r in rows:
        out.write(f"{r.operation},{r.size_bytes},{r.mean_ns:.1f},{r.std_ns:.1f},{r.iterations}\n")
    return out.getvalue()
