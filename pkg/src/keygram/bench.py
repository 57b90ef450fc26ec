"""Lookup-latency microbenchmark: hashed retrieval vs a linear scan.

Hashed retrieval touches exactly slots*heads*generations rows no matter
how big the tables are; the linear-scan baseline (dot-product nearest
row over one full sub-table) scales with V. Latencies are wall-clock
nanoseconds per retrieval, summarized as median and p95 over warm trials
after a warm-up phase.
"""

from __future__ import annotations

import csv
import io
import json
import time
from dataclasses import asdict, dataclass

import numpy as np

from .memory import init_memory, retrieve
from .parser import PaddedKey

DEFAULT_SIZES = (2**13, 2**16, 2**19, 2**22)


@dataclass(frozen=True)
class BenchResult:
    capacity: int
    trials: int
    median_ns: float
    p95_ns: float
    rows_touched: int
    scan_median_ns: float
    scan_p95_ns: float


def _random_key_sets(rng, trials: int, slots: int, max_words: int) -> list[list[PaddedKey]]:
    sets = []
    for _ in range(trials):
        keys = []
        for _ in range(slots):
            n = int(rng.integers(1, max_words + 1))
            ids = [int(x) | 1 for x in rng.integers(1, 2**63, n)]
            ids.extend(0 for _ in range(max_words - n))
            keys.append(PaddedKey(ids=tuple(ids)))
        sets.append(keys)
    return sets


def bench_lookup(
    sizes: list[int] = list(DEFAULT_SIZES),
    trials: int = 1000,
    slots: int = 2,
    heads: int = 2,
    head_width: int = 16,
    seed: int = 0,
    warmup: int = 100,
    max_words: int = 4,
) -> list[BenchResult]:
    if list(sizes) != sorted(sizes):
        raise ValueError("sizes must be ascending")
    if trials < 1000:
        raise ValueError("need at least 1000 trials for stable quantiles")
    rng = np.random.default_rng(seed)
    key_sets = _random_key_sets(rng, trials, slots, max_words)
    queries = rng.normal(size=(trials, head_width)).astype(np.float32)

    results = []
    for capacity in sizes:
        memory = init_memory(layers=[0], slots=slots, heads=heads,
                             head_width=head_width, capacity=capacity, seed=seed)
        for keys in key_sets[:warmup]:
            retrieve(keys, 0, memory)

        memory.rows_touched = 0
        lat = np.empty(trials)
        for i, keys in enumerate(key_sets):
            t0 = time.perf_counter_ns()
            retrieve(keys, 0, memory)
            lat[i] = time.perf_counter_ns() - t0
        touched = memory.rows_touched // trials

        table = memory.tables(0, 0, 0)[0].rows
        for q in queries[:warmup]:
            int(np.argmax(table @ q))
        scan = np.empty(trials)
        for i, q in enumerate(queries):
            t0 = time.perf_counter_ns()
            int(np.argmax(table @ q))
            scan[i] = time.perf_counter_ns() - t0

        results.append(BenchResult(
            capacity=capacity,
            trials=trials,
            median_ns=float(np.percentile(lat, 50)),
            p95_ns=float(np.percentile(lat, 95)),
            rows_touched=touched,
            scan_median_ns=float(np.percentile(scan, 50)),
            scan_p95_ns=float(np.percentile(scan, 95)),
        ))
        del memory, table
    return results


def results_csv(results: list[BenchResult]) -> str:
    buf = io.StringIO()
    writer = csv.writer(buf)
    writer.writerow(["capacity", "trials", "median_ns", "p95_ns", "rows_touched",
                     "scan_median_ns", "scan_p95_ns"])
    for r in results:
        writer.writerow([r.capacity, r.trials, f"{r.median_ns:.0f}", f"{r.p95_ns:.0f}",
                         r.rows_touched, f"{r.scan_median_ns:.0f}",
                         f"{r.scan_p95_ns:.0f}"])
    return buf.getvalue()


def results_json(results: list[BenchResult]) -> str:
    return json.dumps([asdict(r) for r in results])
