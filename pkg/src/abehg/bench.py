"""Key generation, encryption and decryption cost versus attribute count.

For each count n the harness issues a key over n attributes, seals a 1 KiB
record under an AND-chain of the same n attributes and opens it again.  One
warm-up round over all counts is discarded.  Only the OS entropy source is
used.
"""

from __future__ import annotations

import csv
import gc
import os
import statistics
import time
from collections import defaultdict
from dataclasses import dataclass
from typing import Callable, Iterable

from . import cpabe, envelope, group
from .errors import DomainError
from .policy import Gate, Leaf

PHASES = ("keygen", "encrypt", "decrypt")
CSV_HEADER = ("phase", "attr_count", "trial", "elapsed_us")

# Attributes of the medical-college users in the evaluation scenario.
BENCH_ATTRIBUTES = (
    "position:phd", "college:jnmc", "university:amu", "department:radiology",
    "city:aligarh", "position:researcher", "status:temporary", "year:2022",
    "position:doctor", "status:permanent",
)


@dataclass(frozen=True)
class BenchRow:
    phase: str
    attr_count: int
    trial: int
    elapsed_us: float

    def __post_init__(self):
        if self.phase not in PHASES:
            raise DomainError(f"unknown phase {self.phase!r}")
        if self.elapsed_us <= 0:
            raise DomainError("elapsed time must be positive")


@dataclass(frozen=True)
class TrendFit:
    phase: str
    slope: float
    intercept: float
    r_squared: float
    means: dict
    medians: dict


def bench_attributes(n: int) -> list[str]:
    if n <= len(BENCH_ATTRIBUTES):
        return list(BENCH_ATTRIBUTES[:n])
    return list(BENCH_ATTRIBUTES) + [f"attr:{i}" for i in range(len(BENCH_ATTRIBUTES), n)]


def and_chain(attrs: list[str]):
    """Left-folded chain of 2-of-2 gates over ``attrs``."""
    tree = Leaf(attrs[0])
    for a in attrs[1:]:
        tree = Gate(2, (tree, Leaf(a)))
    return tree


def bench_run(max_attrs: int = 10, trials: int = 20, out: str | os.PathLike | None = None,
              payload_size: int = 1024, progress: Callable[[int], None] | None = None) -> list[BenchRow]:
    if max_attrs < 2:
        raise DomainError("max_attrs must be at least 2")
    if trials < 5:
        raise DomainError("trials must be at least 5")
    entropy = group.SystemEntropy()
    group.require_secure(entropy)
    pk, mk = cpabe.setup(entropy)
    payload = entropy.token_bytes(payload_size)
    clock = time.perf_counter_ns
    rows: list[BenchRow] = []

    setups = {n: (bench_attributes(n), and_chain(bench_attributes(n))) for n in range(1, max_attrs + 1)}
    gc_was_enabled = gc.isenabled()
    try:
        # Counts are interleaved within each round so slow drift in machine
        # speed lands on every count alike; round 0 is the discarded warm-up.
        for trial in range(trials + 1):
            gc.collect()
            gc.disable()
            for n, (attrs, tree) in setups.items():
                t0 = clock()
                sk = cpabe.keygen(pk, mk, attrs, entropy)
                t1 = clock()
                env = envelope.seal(pk, tree, payload, entropy=entropy)
                t2 = clock()
                recovered = envelope.open_envelope(pk, sk, env)
                t3 = clock()
                if recovered != payload:
                    raise RuntimeError("benchmark roundtrip failed")
                if trial == 0:
                    continue
                rows.append(BenchRow("keygen", n, trial, (t1 - t0) / 1000))
                rows.append(BenchRow("encrypt", n, trial, (t2 - t1) / 1000))
                rows.append(BenchRow("decrypt", n, trial, (t3 - t2) / 1000))
            if gc_was_enabled:
                gc.enable()
            if progress:
                progress(trial)
    finally:
        if gc_was_enabled:
            gc.enable()

    rows.sort(key=lambda r: (r.phase, r.attr_count, r.trial))
    if out is not None:
        write_csv(rows, out)
    return rows


def write_csv(rows: Iterable[BenchRow], path: str | os.PathLike) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(CSV_HEADER)
        for r in sorted(rows, key=lambda r: (r.phase, r.attr_count, r.trial)):
            w.writerow((r.phase, r.attr_count, r.trial, f"{r.elapsed_us:.3f}"))


def read_csv(path: str | os.PathLike) -> list[BenchRow]:
    with open(path, newline="") as fh:
        reader = csv.DictReader(fh)
        if tuple(reader.fieldnames or ()) != CSV_HEADER:
            raise DomainError(f"unexpected CSV header {reader.fieldnames}")
        return [BenchRow(r["phase"], int(r["attr_count"]), int(r["trial"]), float(r["elapsed_us"]))
                for r in reader]


def fit_linear(rows: Iterable[BenchRow]) -> dict[str, TrendFit]:
    """Least-squares line through the per-count mean elapsed time, per phase."""
    samples: dict[str, dict[int, list[float]]] = defaultdict(lambda: defaultdict(list))
    for r in rows:
        samples[r.phase][r.attr_count].append(r.elapsed_us)
    fits = {}
    for phase, by_count in samples.items():
        if len(by_count) < 2:
            raise DomainError(f"phase {phase!r} needs at least two distinct attribute counts")
        xs = sorted(by_count)
        means = {x: statistics.fmean(by_count[x]) for x in xs}
        medians = {x: statistics.median(by_count[x]) for x in xs}
        ys = [means[x] for x in xs]
        x_bar, y_bar = statistics.fmean(xs), statistics.fmean(ys)
        sxx = sum((x - x_bar) ** 2 for x in xs)
        sxy = sum((x - x_bar) * (y - y_bar) for x, y in zip(xs, ys))
        slope = sxy / sxx
        intercept = y_bar - slope * x_bar
        ss_tot = sum((y - y_bar) ** 2 for y in ys)
        ss_res = sum((y - (intercept + slope * x)) ** 2 for x, y in zip(xs, ys))
        r2 = 1.0 if ss_tot == 0 else max(0.0, min(1.0, 1.0 - ss_res / ss_tot))
        fits[phase] = TrendFit(phase, slope, intercept, r2, means, medians)
    return fits
