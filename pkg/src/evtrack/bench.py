"""Scan throughput: sequential recurrence vs chunked scan.

The chunked scan processes cache-sized blocks of whole chunks, so its
per-token intermediates never round-trip to memory; against the plain
sequential recurrence (which materializes everything at full length) this
is worth several-fold at realistic widths.
"""

from __future__ import annotations

import time
from dataclasses import dataclass

import numpy as np

from .ssm import init_ssm_params, scan_forward, scan_forward_chunked

BENCH_D_INNER = 384
BENCH_D_STATE = 16
BENCH_DT_RANK = 24
BENCH_CHUNK = 64


@dataclass
class BenchRow:
    length: int
    sequential_tok_s: float
    chunked_tok_s: float

    @property
    def speedup(self) -> float:
        return self.chunked_tok_s / self.sequential_tok_s


def _best_of(fn, repeats: int) -> float:
    best = np.inf
    for _ in range(repeats):
        t0 = time.perf_counter()
        fn()
        best = min(best, time.perf_counter() - t0)
    return best


def run_bench(lengths: tuple[int, ...] = (256, 1024, 4096), chunk: int = BENCH_CHUNK,
              repeats: int = 5, seed: int = 0, dtype=np.float32) -> list[BenchRow]:
    rng = np.random.default_rng(seed)
    params = init_ssm_params(BENCH_D_INNER, BENCH_D_STATE, BENCH_DT_RANK, rng, dtype)
    rows = []
    for length in lengths:
        u = rng.standard_normal((length, BENCH_D_INNER)).astype(dtype)
        scan_forward(u, params)  # warm up caches / BLAS threads
        t_seq = _best_of(lambda: scan_forward(u, params), repeats)
        t_chk = _best_of(lambda: scan_forward_chunked(u, params, chunk), repeats)
        rows.append(BenchRow(length, length / t_seq, length / t_chk))
    return rows


def format_table(rows: list[BenchRow], chunk: int = BENCH_CHUNK) -> str:
    lines = [
        f"scan throughput (d_inner={BENCH_D_INNER}, d_state={BENCH_D_STATE}, chunk={chunk})",
        f"{'L':>6}  {'sequential tok/s':>18}  {'chunked tok/s':>16}  {'speedup':>8}",
    ]
    for r in rows:
        lines.append(f"{r.length:>6}  {r.sequential_tok_s:>18.0f}  "
                     f"{r.chunked_tok_s:>16.0f}  {r.speedup:>7.2f}x")
    return "\n".join(lines)
